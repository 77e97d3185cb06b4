//! Linear Granger causality and local transfer entropy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{lower_median, signmax, GcMatrix};
use crate::series::TrajectorySeries;

pub const RIDGE: f64 = 1e-8;
pub const DEFAULT_TE_BINS: usize = 8;

/// Vector autoregression on the velocity part of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub lags: usize,
    /// `[K][p*d][p*d]`, row = target channel, column = source channel.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub intercept: Vec<f64>,
    pub residual_variance: f64,
    /// Set when the design was rank deficient and a ridge solve was used.
    pub regularized: bool,
}

fn velocity_matrix(series: &TrajectorySeries) -> Vec<Vec<f64>> {
    (0..series.steps())
        .map(|t| (0..series.agents()).flat_map(|i| series.velocity(t, i).iter().copied()).collect())
        .collect()
}

/// Least-squares VAR(K) fit of `rows[t]` on `rows[t-1..t-K]` plus an intercept.
pub fn fit_var(rows: &[Vec<f64>], lags: usize) -> Result<VarModel> {
    if lags == 0 {
        return Err(Error::Domain("lags must be at least 1".into()));
    }
    let c = rows.first().map_or(0, |r| r.len());
    let n = rows.len().saturating_sub(lags);
    let cols = lags * c + 1;
    if n < cols {
        return Err(Error::Length { needed: cols + lags, got: rows.len() });
    }
    let x = DMatrix::from_fn(n, cols, |r, col| {
        if col == cols - 1 {
            1.0
        } else {
            let (k, ch) = (col / c + 1, col % c);
            rows[r + lags - k][ch]
        }
    });
    let y = DMatrix::from_fn(n, c, |r, ch| rows[r + lags][ch]);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank_ok = smax > 0.0 && svd.singular_values.min() > smax * 1e-10;
    let (beta, regularized) = if rank_ok {
        (svd.solve(&y, 0.0).map_err(|e| Error::Optimization(e.to_string()))?, false)
    } else {
        log::warn!("rank-deficient regression design; using ridge {RIDGE}");
        let xtx = x.transpose() * &x + DMatrix::identity(cols, cols) * RIDGE;
        let chol = xtx.cholesky().ok_or_else(|| Error::Optimization("ridge system is not positive definite".into()))?;
        (chol.solve(&(x.transpose() * &y)), true)
    };
    let resid = &y - &x * &beta;
    let residual_variance = resid.iter().map(|v| v * v).sum::<f64>() / (n * c).max(1) as f64;
    let coefficients = (0..lags)
        .map(|k| (0..c).map(|target| (0..c).map(|source| beta[(k * c + source, target)]).collect()).collect())
        .collect();
    let intercept = (0..c).map(|target| beta[(cols - 1, target)]).collect();
    Ok(VarModel { lags, coefficients, intercept, residual_variance, regularized })
}

/// Linear Granger causality: strengths are Frobenius norms of the cross
/// blocks over all lags; signs follow the median/signmax rule.
pub fn fit_linear_gc(series: &TrajectorySeries, lags: usize) -> Result<(VarModel, GcMatrix)> {
    let var = fit_var(&velocity_matrix(series), lags)?;
    let (p, d) = (series.agents(), series.spatial());
    let mut mag = vec![vec![0.0; p]; p];
    let mut sign = vec![vec![0i8; p]; p];
    for target in 0..p {
        for source in (0..p).filter(|&s| s != target) {
            let mut sq = 0.0;
            let mut medians = Vec::with_capacity(lags);
            for a in &var.coefficients {
                let block: Vec<f64> =
                    (0..d).flat_map(|u| (0..d).map(move |q| (u, q))).map(|(u, q)| a[target * d + u][source * d + q]).collect();
                sq += block.iter().map(|v| v * v).sum::<f64>();
                medians.push(lower_median(&block));
            }
            mag[source][target] = sq.sqrt();
            sign[source][target] = signmax(&medians)?;
        }
    }
    Ok((var, GcMatrix::from_parts(mag, sign)))
}

/// Uniform bin index of every value over the channel's range.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values.iter().map(|&v| (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)).collect()
}

/// Plug-in local transfer entropy `source -> target` in nats for each
/// transition `t -> t+1`.
pub fn local_te_discrete(target: &[usize], source: &[usize]) -> Result<Vec<f64>> {
    use std::collections::HashMap;
    if target.len() != source.len() {
        return Err(Error::Dimension("channels differ in length".into()));
    }
    if target.len() < 2 {
        return Err(Error::Length { needed: 2, got: target.len() });
    }
    let n = target.len() - 1;
    let mut c_xyz: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut c_yz: HashMap<(usize, usize), f64> = HashMap::new();
    let mut c_xy: HashMap<(usize, usize), f64> = HashMap::new();
    let mut c_y: HashMap<usize, f64> = HashMap::new();
    for t in 0..n {
        let (next, cur, src) = (target[t + 1], target[t], source[t]);
        *c_xyz.entry((next, cur, src)).or_default() += 1.0;
        *c_yz.entry((cur, src)).or_default() += 1.0;
        *c_xy.entry((next, cur)).or_default() += 1.0;
        *c_y.entry(cur).or_default() += 1.0;
    }
    Ok((0..n)
        .map(|t| {
            let (next, cur, src) = (target[t + 1], target[t], source[t]);
            let joint = c_xyz[&(next, cur, src)] / c_yz[&(cur, src)];
            let marginal = c_xy[&(next, cur)] / c_y[&cur];
            (joint / marginal).ln()
        })
        .collect())
}

/// Local TE for every ordered agent pair and every dimension pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TeEstimate {
    pub bins: usize,
    pub dims: usize,
    /// `[source][target][u * d + q]` series over transitions, where `u` is
    /// the target dimension and `q` the source dimension. Empty on the
    /// diagonal.
    pub local: Vec<Vec<Vec<Vec<f64>>>>,
}

impl TeEstimate {
    /// Time-averaged TE of a dimension pair.
    pub fn mean(&self, source: usize, target: usize, pair: usize) -> f64 {
        let v = &self.local[source][target][pair];
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Local TE on binned velocities. Pair strength is the norm over dimension
/// pairs of the largest absolute local value.
pub fn local_te(series: &TrajectorySeries, bins: usize) -> Result<(TeEstimate, GcMatrix)> {
    if bins < 2 {
        return Err(Error::Domain("at least two bins are needed".into()));
    }
    let (p, d) = (series.agents(), series.spatial());
    let channels: Vec<Vec<Vec<usize>>> = (0..p)
        .map(|i| {
            (0..d)
                .map(|u| {
                    let v: Vec<f64> = (0..series.steps()).map(|t| series.velocity(t, i)[u]).collect();
                    discretize(&v, bins)
                })
                .collect()
        })
        .collect();
    let mut local = vec![vec![Vec::new(); p]; p];
    let mut mag = vec![vec![0.0; p]; p];
    for source in 0..p {
        for target in (0..p).filter(|&t| t != source) {
            let mut per_pair = Vec::with_capacity(d * d);
            let mut sq = 0.0;
            for u in 0..d {
                for q in 0..d {
                    let te = local_te_discrete(&channels[target][u], &channels[source][q])?;
                    let m = te.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                    sq += m * m;
                    per_pair.push(te);
                }
            }
            local[source][target] = per_pair;
            mag[source][target] = sq.sqrt();
        }
    }
    let sign = vec![vec![0i8; p]; p];
    Ok((TeEstimate { bins, dims: d, local }, GcMatrix::from_parts(mag, sign)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::series::SeriesKind;

    fn var1_rows(a: &[Vec<f64>], x0: &[f64], steps: usize) -> Vec<Vec<f64>> {
        let mut rows = vec![x0.to_vec()];
        for _ in 1..steps {
            let prev = rows.last().unwrap();
            rows.push(a.iter().map(|r| r.iter().zip(prev).map(|(a, x)| a * x).sum()).collect());
        }
        rows
    }

    #[test]
    fn recovers_noiseless_var1() {
        let a = vec![vec![0.5, 0.3, 0.0], vec![-0.4, 0.6, 0.2], vec![0.1, 0.0, -0.7]];
        let rows = var1_rows(&a, &[1.0, -0.5, 0.3], 40);
        let m = fit_var(&rows, 1).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((m.coefficients[0][r][c] - a[r][c]).abs() < 1e-6);
            }
        }
        assert!(!m.regularized);
    }

    #[test]
    fn normal_equations_hold() {
        let mut rng = Rng::new(3);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| (0..4).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        let m = fit_var(&rows, 2).unwrap();
        for ch in 0..4 {
            let resid: Vec<f64> = (2..80)
                .map(|t| {
                    let mut pred = m.intercept[ch];
                    for k in 0..2 {
                        for s in 0..4 {
                            pred += m.coefficients[k][ch][s] * rows[t - k - 1][s];
                        }
                    }
                    rows[t][ch] - pred
                })
                .collect();
            for k in 0..2 {
                for s in 0..4 {
                    let dot: f64 = (2..80).map(|t| resid[t - 2] * rows[t - k - 1][s]).sum();
                    assert!(dot.abs() < 1e-8, "{dot}");
                }
            }
        }
    }

    #[test]
    fn zero_series_uses_ridge_and_gives_zero() {
        let rows = vec![vec![0.0; 2]; 20];
        let m = fit_var(&rows, 1).unwrap();
        assert!(m.regularized);
        assert!(m.coefficients[0].iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn white_noise_cross_blocks_are_small() {
        let mut cross = 0.0;
        let mut own = 0.0;
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            // AR(1) channels without coupling
            let mut vals = Vec::new();
            let mut x = [0.0; 3];
            for _ in 0..400 {
                for v in x.iter_mut() {
                    *v = 0.8 * *v + rng.normal(0.0, 1.0);
                }
                for v in x {
                    vals.extend([0.0, v]);
                }
            }
            let s = TrajectorySeries::new(vals, 400, 3, 2, 1.0, SeriesKind::Phase).unwrap();
            let (var, gc) = fit_linear_gc(&s, 1).unwrap();
            cross += gc.magnitude.iter().flatten().sum::<f64>() / 6.0;
            own += (0..3).map(|i| var.coefficients[0][i][i].abs()).sum::<f64>() / 3.0;
        }
        assert!(cross < 0.1 * own, "{cross} vs {own}");
    }

    #[test]
    fn copy_process_transfers_ln2() {
        let mut rng = Rng::new(11);
        let x: Vec<usize> = (0..10_000).map(|_| rng.bernoulli(0.5) as usize).collect();
        let mut y = vec![0usize; x.len()];
        y[1..].copy_from_slice(&x[..x.len() - 1]);
        let te = local_te_discrete(&y, &x).unwrap();
        let mean = te.iter().sum::<f64>() / te.len() as f64;
        assert!((mean - 2f64.ln()).abs() < 0.02, "{mean}");
    }

    #[test]
    fn independent_chains_transfer_nothing() {
        let mut rng = Rng::new(12);
        let x: Vec<usize> = (0..10_000).map(|_| rng.bernoulli(0.5) as usize).collect();
        let y: Vec<usize> = (0..10_000).map(|_| rng.bernoulli(0.5) as usize).collect();
        let te = local_te_discrete(&y, &x).unwrap();
        assert!((te.iter().sum::<f64>() / te.len() as f64).abs() < 0.05);
    }

    #[test]
    fn self_source_transfers_nothing() {
        let mut rng = Rng::new(13);
        let x: Vec<usize> = (0..2_000).map(|_| rng.below(4)).collect();
        assert!(local_te_discrete(&x, &x).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn te_invariant_under_monotone_relabel() {
        let mut rng = Rng::new(14);
        let vals: Vec<f64> = (0..500).map(|_| rng.normal(0.0, 1.0)).collect();
        let src: Vec<f64> = (0..500).map(|_| rng.normal(0.0, 1.0)).collect();
        let a = local_te_discrete(&discretize(&vals, 4), &discretize(&src, 4)).unwrap();
        let relabeled: Vec<usize> = discretize(&src, 4).iter().map(|b| 10 + 3 * b).collect();
        let b = local_te_discrete(&discretize(&vals, 4), &relabeled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn te_gc_matrix_shape() {
        let mut rng = Rng::new(15);
        let vals: Vec<f64> = (0..300 * 3 * 2).map(|_| rng.normal(0.0, 1.0)).collect();
        let s = TrajectorySeries::new(vals, 300, 3, 2, 1.0, SeriesKind::Phase).unwrap();
        let (te, gc) = local_te(&s, DEFAULT_TE_BINS).unwrap();
        assert_eq!(te.local[0][1][0].len(), 299);
        assert_eq!(gc.magnitude[1][1], 0.0);
        assert!(gc.magnitude[0][1] > 0.0);
        assert!(local_te(&s, 1).is_err());
    }
}
