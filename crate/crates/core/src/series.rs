//! Trajectory containers, causal graphs and lag-window utilities.
//!
//! A [`TrajectorySeries`] stores, for every step and agent, a state vector laid
//! out as `[position dims; velocity dims]`. Phase data uses the same layout with
//! one "position" (the unwrapped phase) and one "velocity" (its time
//! derivative), so straight-line extrapolation and velocity-only targets work
//! identically for both kinds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Positional,
    Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySeries {
    values: Vec<f64>,
    steps: usize,
    agents: usize,
    dim: usize,
    dt: f64,
    kind: SeriesKind,
}

impl TrajectorySeries {
    /// Build from a flat `[T][p][d]` buffer. `d` must be even (position and
    /// velocity halves).
    pub fn new(
        values: Vec<f64>,
        steps: usize,
        agents: usize,
        dim: usize,
        dt: f64,
        kind: SeriesKind,
    ) -> Result<Self> {
        if values.len() != steps * agents * dim {
            return Err(Error::Dimension(format!(
                "buffer holds {} values, expected {steps}x{agents}x{dim}",
                values.len()
            )));
        }
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Dimension(format!("state dimension {dim} must be even and positive")));
        }
        if agents == 0 {
            return Err(Error::Domain("series needs at least one agent".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let step = pos / (agents * dim);
            return Err(Error::Domain(format!("non-finite value at step {step}")));
        }
        Ok(Self { values, steps, agents, dim, dt, kind })
    }

    /// Positions `[T][p][s]` only; velocities come from forward differences
    /// `(p[t+1] - p[t]) / dt`, the last step repeating the previous velocity.
    pub fn from_positions(positions: &[f64], steps: usize, agents: usize, spatial: usize, dt: f64) -> Result<Self> {
        Self::from_position_like(positions, steps, agents, spatial, dt, SeriesKind::Positional)
    }

    /// Unwrapped phases `[T][p]`; derivatives by forward difference.
    pub fn from_phases(phases: &[f64], steps: usize, agents: usize, dt: f64) -> Result<Self> {
        Self::from_position_like(phases, steps, agents, 1, dt, SeriesKind::Phase)
    }

    fn from_position_like(
        pos: &[f64],
        steps: usize,
        agents: usize,
        spatial: usize,
        dt: f64,
        kind: SeriesKind,
    ) -> Result<Self> {
        if pos.len() != steps * agents * spatial {
            return Err(Error::Dimension(format!(
                "position buffer holds {} values, expected {steps}x{agents}x{spatial}",
                pos.len()
            )));
        }
        if steps < 2 {
            return Err(Error::Length { needed: 2, got: steps });
        }
        let dim = 2 * spatial;
        let mut values = vec![0.0; steps * agents * dim];
        for t in 0..steps {
            for a in 0..agents {
                let src = (t * agents + a) * spatial;
                let dst = (t * agents + a) * dim;
                let (t0, t1) = if t + 1 < steps { (t, t + 1) } else { (t - 1, t) };
                for s in 0..spatial {
                    values[dst + s] = pos[src + s];
                    let p0 = pos[(t0 * agents + a) * spatial + s];
                    let p1 = pos[(t1 * agents + a) * spatial + s];
                    values[dst + spatial + s] = (p1 - p0) / dt;
                }
            }
        }
        Self::new(values, steps, agents, dim, dt, kind)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Full state dimension (position plus velocity).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of spatial (position) dimensions, half of [`dim`](Self::dim).
    pub fn spatial(&self) -> usize {
        self.dim / 2
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn state(&self, t: usize, agent: usize) -> &[f64] {
        let o = (t * self.agents + agent) * self.dim;
        &self.values[o..o + self.dim]
    }

    pub fn position(&self, t: usize, agent: usize) -> &[f64] {
        &self.state(t, agent)[..self.spatial()]
    }

    pub fn velocity(&self, t: usize, agent: usize) -> &[f64] {
        &self.state(t, agent)[self.spatial()..]
    }

    /// Keep only the first `steps` steps.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        let steps = steps.min(self.steps);
        let n = steps * self.agents * self.dim;
        Self::new(self.values[..n].to_vec(), steps, self.agents, self.dim, self.dt, self.kind)
    }

    /// Drop one agent, keeping the others in order.
    pub fn without_agent(&self, agent: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(self.steps * (self.agents - 1) * self.dim);
        for t in 0..self.steps {
            for a in (0..self.agents).filter(|&a| a != agent) {
                values.extend_from_slice(self.state(t, a));
            }
        }
        Self::new(values, self.steps, self.agents - 1, self.dim, self.dt, self.kind)
    }
}

/// Signed directed graph; `edges[i][j]` is the effect of agent `i` on agent `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    edges: Vec<Vec<i8>>,
}

impl CausalGraph {
    pub fn new(edges: Vec<Vec<i8>>) -> Result<Self> {
        let p = edges.len();
        for row in &edges {
            if row.len() != p {
                return Err(Error::Dimension("causal graph must be square".into()));
            }
            if row.iter().any(|v| !(-1..=1).contains(v)) {
                return Err(Error::Domain("graph entries must lie in {-1, 0, 1}".into()));
            }
        }
        Ok(Self { edges })
    }

    pub fn empty(p: usize) -> Self {
        Self { edges: vec![vec![0; p]; p] }
    }

    pub fn agents(&self) -> usize {
        self.edges.len()
    }

    pub fn get(&self, from: usize, to: usize) -> i8 {
        self.edges[from][to]
    }

    pub fn set(&mut self, from: usize, to: usize, value: i8) {
        assert!((-1..=1).contains(&value));
        self.edges[from][to] = value;
    }

    pub fn edges(&self) -> &[Vec<i8>] {
        &self.edges
    }

    /// Off-diagonal `(from, to)` pairs in row-major order.
    pub fn off_diagonal(p: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..p).flat_map(move |i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    pub fn is_symmetric(&self) -> bool {
        let p = self.agents();
        Self::off_diagonal(p).all(|(i, j)| self.edges[i][j] == self.edges[j][i])
    }
}

/// Lagged feature history for one agent, oldest lag first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWindow {
    history: Vec<f64>,
    lags: usize,
    width: usize,
}

impl LagWindow {
    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Features at lag `k` (1 = newest, `lags` = oldest).
    pub fn at_lag(&self, k: usize) -> &[f64] {
        assert!(k >= 1 && k <= self.lags, "lag {k} out of range");
        let row = self.lags - k;
        &self.history[row * self.width..(row + 1) * self.width]
    }

    pub fn rows(&self) -> &[f64] {
        &self.history
    }
}

/// One training example: per-agent windows and the state to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSample {
    pub step: usize,
    pub windows: Vec<LagWindow>,
    pub target: Vec<f64>,
}

/// Slide a depth-`lags` window over the series. The sample at index `m`
/// covers steps `m..m+lags` and targets step `m + lags`.
pub fn make_lag_windows<F>(series: &TrajectorySeries, lags: usize, featurizer: F) -> Result<Vec<LagSample>>
where
    F: Fn(&TrajectorySeries, usize, usize) -> Vec<f64>,
{
    if lags == 0 {
        return Err(Error::Domain("lag count must be at least 1".into()));
    }
    if series.steps() < lags + 2 {
        return Err(Error::Length { needed: lags + 2, got: series.steps() });
    }
    let p = series.agents();
    // Featurize each (step, agent) once; windows overlap heavily.
    let feats: Vec<Vec<Vec<f64>>> = (0..series.steps() - 1)
        .map(|t| (0..p).map(|i| featurizer(series, t, i)).collect())
        .collect();
    let width = feats[0][0].len();
    let mut out = Vec::with_capacity(series.steps() - lags);
    for m in 0..series.steps() - lags {
        let windows = (0..p)
            .map(|i| {
                let mut history = Vec::with_capacity(lags * width);
                for t in m..m + lags {
                    history.extend_from_slice(&feats[t][i]);
                }
                LagWindow { history, lags, width }
            })
            .collect();
        let step = m + lags;
        let target = (0..p).flat_map(|i| series.state(step, i).iter().copied()).collect();
        out.push(LagSample { step, windows, target });
    }
    Ok(out)
}

/// Straight-line continuation of every agent from step `t - 1`: the velocity
/// is kept and the position advanced by `v * dt`. Returns the `[p][d]` state.
pub fn straight_line_prediction(series: &TrajectorySeries, t: usize) -> Result<Vec<f64>> {
    if t < 2 || t >= series.steps() {
        return Err(Error::Domain(format!(
            "straight-line prediction needs 2 <= t < {}, got {t}",
            series.steps()
        )));
    }
    let s = series.spatial();
    let mut out = Vec::with_capacity(series.agents() * series.dim());
    for a in 0..series.agents() {
        let pos = series.position(t - 1, a);
        let vel = series.velocity(t - 1, a);
        out.extend((0..s).map(|u| pos[u] + vel[u] * series.dt()));
        out.extend_from_slice(vel);
    }
    Ok(out)
}

/// Squared distance between each agent's observed state and its straight-line
/// continuation at step `t`.
pub fn straight_line_residuals(series: &TrajectorySeries, t: usize) -> Result<Vec<f64>> {
    let pred = straight_line_prediction(series, t)?;
    let d = series.dim();
    Ok((0..series.agents())
        .map(|a| {
            series
                .state(t, a)
                .iter()
                .zip(&pred[a * d..(a + 1) * d])
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        })
        .collect())
}
