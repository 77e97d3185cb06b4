//! Phase-coupled oscillators integrated with classic RK4.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::series::{CausalGraph, SeriesKind, TrajectorySeries};

/// Integration step (s).
pub const STEP: f64 = 0.01;
pub const EDGE_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KuramotoSystem {
    pub omega: Vec<f64>,
    /// Row-major `p x p`, symmetric with zero diagonal.
    pub coupling: Vec<f64>,
    pub phi0: Vec<f64>,
}

impl KuramotoSystem {
    pub fn new(omega: Vec<f64>, coupling: Vec<f64>, phi0: Vec<f64>) -> Result<Self> {
        let p = omega.len();
        if coupling.len() != p * p || phi0.len() != p {
            return Err(Error::Dimension("kuramoto parameters disagree on oscillator count".into()));
        }
        Ok(Self { omega, coupling, phi0 })
    }

    /// Frequencies in `[1, 10)`, phases in `[0, 2pi)`, and each unordered pair
    /// coupled with `k = 1` with probability one half.
    pub fn sample(p: usize, rng: &mut Rng) -> Result<Self> {
        if p < 2 {
            return Err(Error::Domain(format!("need at least 2 oscillators, got {p}")));
        }
        let omega: Vec<f64> = (0..p).map(|_| rng.uniform(1.0, 10.0)).collect();
        let phi0: Vec<f64> = (0..p).map(|_| rng.uniform(0.0, TAU)).collect();
        let mut coupling = vec![0.0; p * p];
        for i in 0..p {
            for j in i + 1..p {
                if rng.bernoulli(EDGE_PROBABILITY) {
                    coupling[i * p + j] = 1.0;
                    coupling[j * p + i] = 1.0;
                }
            }
        }
        Ok(Self { omega, coupling, phi0 })
    }

    pub fn oscillators(&self) -> usize {
        self.omega.len()
    }

    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.oscillators() + j]
    }

    /// `dphi_i = omega_i + sum_j k_ij sin(phi_i - phi_j)`
    pub fn derivative(&self, phi: &[f64]) -> Vec<f64> {
        let p = self.oscillators();
        (0..p)
            .map(|i| {
                let coupled: f64 = (0..p)
                    .filter(|&j| j != i)
                    .map(|j| self.k(i, j) * (phi[i] - phi[j]).sin())
                    .sum();
                self.omega[i] + coupled
            })
            .collect()
    }

    fn rk4_step(&self, phi: &[f64], h: f64) -> Vec<f64> {
        let axpy = |x: &[f64], k: &[f64], a: f64| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + a * k).collect() };
        let k1 = self.derivative(phi);
        let k2 = self.derivative(&axpy(phi, &k1, h / 2.0));
        let k3 = self.derivative(&axpy(phi, &k2, h / 2.0));
        let k4 = self.derivative(&axpy(phi, &k3, h));
        (0..phi.len())
            .map(|i| phi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// Integrate `steps` frames. Phases stay unwrapped; each frame stores the
    /// phase and the derivative evaluated at that phase.
    pub fn simulate(&self, steps: usize) -> Result<TrajectorySeries> {
        if steps < 2 {
            return Err(Error::Length { needed: 2, got: steps });
        }
        let p = self.oscillators();
        let mut values = Vec::with_capacity(steps * p * 2);
        let mut phi = self.phi0.clone();
        for t in 0..steps {
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { step: t });
            }
            let dphi = self.derivative(&phi);
            for i in 0..p {
                values.push(phi[i]);
                values.push(dphi[i]);
            }
            if t + 1 < steps {
                phi = self.rk4_step(&phi, STEP);
            }
        }
        TrajectorySeries::new(values, steps, p, 2, STEP, SeriesKind::Phase)
    }

    /// `+1` wherever two oscillators are coupled, in both directions.
    pub fn ground_truth(&self) -> CausalGraph {
        let p = self.oscillators();
        let mut g = CausalGraph::empty(p);
        for (i, j) in CausalGraph::off_diagonal(p) {
            if self.k(i, j) != 0.0 {
                g.set(i, j, 1);
            }
        }
        g
    }
}
