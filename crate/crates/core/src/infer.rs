//! Signed Granger-causal statistics from generalized coefficients.

use serde::{Deserialize, Serialize};

use crate::abm::CoefficientTensor;
use crate::error::{Error, Result};
use crate::series::CausalGraph;

/// Sign of whichever of `max` and `min` has the larger magnitude. Ties at
/// equal magnitude resolve to `+1`; an all-zero list gives `0`.
pub fn signmax(values: &[f64]) -> Result<i8> {
    if values.is_empty() {
        return Err(Error::Domain("signmax of an empty list".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if max == 0.0 && min == 0.0 {
        0
    } else if max.abs() >= min.abs() {
        if max > 0.0 {
            1
        } else {
            -1
        }
    } else {
        -1
    })
}

/// Lower-middle median (an attained value).
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn frobenius(block: &[f64]) -> f64 {
    block.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Signed strengths indexed `[source][target]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcMatrix {
    pub strengths: Vec<Vec<f64>>,
    pub magnitude: Vec<Vec<f64>>,
    pub sign: Vec<Vec<i8>>,
}

impl GcMatrix {
    pub fn zeros(p: usize) -> Self {
        Self { strengths: vec![vec![0.0; p]; p], magnitude: vec![vec![0.0; p]; p], sign: vec![vec![0; p]; p] }
    }

    pub fn agents(&self) -> usize {
        self.strengths.len()
    }

    /// Build from magnitudes and signs.
    pub fn from_parts(magnitude: Vec<Vec<f64>>, sign: Vec<Vec<i8>>) -> Self {
        let strengths = magnitude
            .iter()
            .zip(&sign)
            .map(|(m, s)| m.iter().zip(s).map(|(m, &s)| m * s as f64).collect())
            .collect();
        Self { strengths, magnitude, sign }
    }
}

/// Median-then-signmax sign and Frobenius magnitude of `source -> target` at
/// slice `t` (signmax over lags, max norm over lags).
fn slice_effect(psi: &CoefficientTensor, t: usize, target: usize, source: usize) -> (i8, f64) {
    let mut medians = Vec::with_capacity(psi.lags);
    let mut mag = 0.0_f64;
    for k in 1..=psi.lags {
        let block = psi.block(t, target, k, source);
        medians.push(lower_median(&block));
        mag = mag.max(frobenius(&block));
    }
    let sign = signmax(&medians).unwrap_or(0);
    (sign, mag)
}

/// Aggregate a coefficient tensor over time and lags.
pub fn aggregate(psi: &CoefficientTensor) -> GcMatrix {
    let p = psi.agents();
    let mut mag = vec![vec![0.0; p]; p];
    let mut sign = vec![vec![0i8; p]; p];
    for target in 0..p {
        for source in (0..p).filter(|&s| s != target) {
            let mut signs = Vec::with_capacity(psi.len_t());
            let mut m = 0.0_f64;
            for t in 0..psi.len_t() {
                let (s, mt) = slice_effect(psi, t, target, source);
                signs.push(s as f64);
                m = m.max(mt);
            }
            sign[source][target] = if signs.is_empty() { 0 } else { signmax(&signs).unwrap_or(0) };
            mag[source][target] = m;
        }
    }
    GcMatrix::from_parts(mag, sign)
}

/// Keep edges whose magnitude reaches half the largest off-diagonal magnitude.
pub fn binarize(gc: &GcMatrix) -> Result<CausalGraph> {
    let p = gc.agents();
    if p < 2 {
        return Err(Error::Domain("binarization needs at least two agents".into()));
    }
    let top = CausalGraph::off_diagonal(p).map(|(i, j)| gc.magnitude[i][j]).fold(0.0_f64, f64::max);
    let mut g = CausalGraph::empty(p);
    if top <= 0.0 {
        return Ok(g);
    }
    let tau = top / 2.0;
    for (i, j) in CausalGraph::off_diagonal(p) {
        if gc.magnitude[i][j] >= tau {
            let s = gc.sign[i][j];
            g.set(i, j, if s == 0 { 1 } else { s });
        }
    }
    Ok(g)
}

/// Per-slice signed strengths `[t][source][target]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectTrace {
    pub steps: Vec<usize>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl EffectTrace {
    pub fn agents(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Largest magnitude over all slices and pairs.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().flatten().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Trace divided by its maximal magnitude (unchanged when all zero).
    pub fn normalized(&self) -> Self {
        let m = self.max_abs();
        if m == 0.0 {
            return self.clone();
        }
        let values = self.values.iter().map(|s| s.iter().map(|r| r.iter().map(|v| v / m).collect()).collect()).collect();
        Self { steps: self.steps.clone(), values }
    }

    /// Per-slice signs after the half-maximum threshold of the whole trace.
    pub fn binarized(&self) -> Vec<Vec<Vec<i8>>> {
        let tau = self.max_abs() / 2.0;
        self.values
            .iter()
            .map(|s| {
                s.iter()
                    .map(|r| {
                        r.iter()
                            .map(|&v| {
                                if tau > 0.0 && v.abs() >= tau {
                                    if v >= 0.0 {
                                        1
                                    } else {
                                        -1
                                    }
                                } else {
                                    0
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn effect_trace(psi: &CoefficientTensor) -> EffectTrace {
    let p = psi.agents();
    let values = (0..psi.len_t())
        .map(|t| {
            let mut s = vec![vec![0.0; p]; p];
            for target in 0..p {
                for source in (0..p).filter(|&x| x != target) {
                    let (sign, mag) = slice_effect(psi, t, target, source);
                    s[source][target] = sign as f64 * mag;
                }
            }
            s
        })
        .collect();
    EffectTrace { steps: psi.steps.clone(), values }
}

/// Attraction and repulsion time of one ordered pair within one bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub bin: usize,
    pub source: usize,
    pub target: usize,
    pub positive_seconds: f64,
    pub negative_seconds: f64,
}

pub fn interaction_durations(trace: &EffectTrace, fps: f64, bin_seconds: f64) -> Result<Vec<DurationRow>> {
    if !(fps > 0.0 && bin_seconds > 0.0) {
        return Err(Error::Domain("fps and bin length must be positive".into()));
    }
    let p = trace.agents();
    let frames_per_bin = ((bin_seconds * fps).round() as usize).max(1);
    let bins = trace.values.len().div_ceil(frames_per_bin);
    let flags = trace.binarized();
    let mut rows = Vec::new();
    for b in 0..bins {
        let frames = &flags[b * frames_per_bin..((b + 1) * frames_per_bin).min(flags.len())];
        for (source, target) in CausalGraph::off_diagonal(p) {
            let pos = frames.iter().filter(|f| f[source][target] > 0).count();
            let neg = frames.iter().filter(|f| f[source][target] < 0).count();
            rows.push(DurationRow {
                bin: b,
                source,
                target,
                positive_seconds: pos as f64 / fps,
                negative_seconds: neg as f64 / fps,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::FeatureLayout;

    fn tensor(p: usize, lags: usize, n: usize, fill: impl Fn(usize, usize, usize, usize) -> f64) -> CoefficientTensor {
        let layout = FeatureLayout { agents: p, self_width: 2, other_width: 2, out_dim: 2 };
        let mut t = CoefficientTensor::zeros(layout, lags, (0..n).collect());
        let w = layout.width();
        for m in 0..n {
            for i in 0..p {
                for k in 1..=lags {
                    let s = t.slice_mut(m, i, k);
                    for (idx, v) in s.iter_mut().enumerate() {
                        *v = fill(m, i, k, idx % w);
                    }
                }
            }
        }
        t
    }

    #[test]
    fn signmax_cases() {
        assert_eq!(signmax(&[1.0, 2.0, -3.0]).unwrap(), -1);
        assert_eq!(signmax(&[0.5, 2.0]).unwrap(), 1);
        assert_eq!(signmax(&[2.0, -2.0]).unwrap(), 1);
        assert_eq!(signmax(&[-2.0, 2.0]).unwrap(), 1);
        assert_eq!(signmax(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(signmax(&[-1.0, -4.0]).unwrap(), -1);
        assert!(signmax(&[]).is_err());
    }

    #[test]
    fn signmax_antisymmetric_without_ties() {
        let v = [0.3, -1.7, 0.9, 1.2];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(signmax(&neg).unwrap(), -signmax(&v).unwrap());
    }

    #[test]
    fn lower_median_is_attained() {
        assert_eq!(lower_median(&[4.0, -1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[5.0]), 5.0);
        assert_eq!(lower_median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn constant_ones_tensor() {
        let psi = tensor(3, 2, 4, |_, _, _, _| 1.0);
        let gc = aggregate(&psi);
        assert!((gc.magnitude[0][1] - 2.0).abs() < 1e-12);
        assert_eq!(gc.sign[0][1], 1);
        assert!((gc.strengths[2][0] - 2.0).abs() < 1e-12);
        assert_eq!(gc.strengths[1][1], 0.0);
    }

    #[test]
    fn negative_and_zero_tensors() {
        let gc = aggregate(&tensor(3, 2, 4, |_, _, _, _| -0.5));
        assert!(gc.sign.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, &s)| i == j || s == -1)));
        let gc = aggregate(&tensor(3, 2, 4, |_, _, _, _| 0.0));
        assert!(gc.strengths.iter().flatten().all(|&v| v == 0.0));
        assert!(binarize(&gc).unwrap().edges().iter().flatten().all(|&e| e == 0));
    }

    #[test]
    fn scaling_keeps_signs_and_binary_graph() {
        let psi = tensor(3, 2, 5, |m, i, k, c| ((m * 7 + i * 3 + k + c) as f64).sin());
        let a = aggregate(&psi);
        let b = aggregate(&psi.scaled(3.5));
        assert_eq!(a.sign, b.sign);
        for (i, j) in CausalGraph::off_diagonal(3) {
            assert!((b.magnitude[i][j] - 3.5 * a.magnitude[i][j]).abs() < 1e-12);
        }
        assert_eq!(binarize(&a).unwrap(), binarize(&b).unwrap());
    }

    #[test]
    fn binarize_half_max_rule() {
        let mut mag = vec![vec![0.0; 3]; 3];
        mag[0][1] = 4.0;
        mag[1][0] = 2.0;
        mag[0][2] = 1.0;
        mag[2][1] = 0.5;
        let sign = vec![vec![1, -1, 1], vec![-1, 1, 1], vec![1, 1, 1]];
        let g = binarize(&GcMatrix::from_parts(mag, sign)).unwrap();
        assert_eq!(g.get(0, 1), -1);
        assert_eq!(g.get(1, 0), -1);
        assert_eq!(g.get(0, 2), 0);
        assert_eq!(g.get(2, 1), 0);
    }

    #[test]
    fn single_pair_is_kept() {
        let gc = GcMatrix::from_parts(vec![vec![0.0, 0.3], vec![0.0, 0.0]], vec![vec![0, 1], vec![0, 0]]);
        assert_eq!(binarize(&gc).unwrap().get(0, 1), 1);
    }

    #[test]
    fn trace_piecewise() {
        let psi = tensor(2, 1, 6, |m, _, _, _| if m < 3 { 0.0 } else { 0.25 });
        let tr = effect_trace(&psi);
        for m in 0..3 {
            assert_eq!(tr.values[m][0][1], 0.0);
        }
        for m in 3..6 {
            assert!((tr.values[m][0][1] - 0.5).abs() < 1e-12);
        }
        assert!((tr.normalized().values[5][1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_trace_matches_aggregate() {
        let psi = tensor(3, 2, 4, |_, i, k, c| (i as f64 + 1.0) * (k as f64) * if c % 2 == 0 { 1.0 } else { -0.5 });
        let gc = aggregate(&psi);
        let tr = effect_trace(&psi);
        for slice in &tr.values {
            for (i, j) in CausalGraph::off_diagonal(3) {
                assert!((slice[i][j] - gc.strengths[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn durations_count_frames() {
        let mut values = vec![vec![vec![0.0; 2]; 2]; 300];
        for v in values.iter_mut().take(45) {
            v[0][1] = 1.0;
        }
        for v in values.iter_mut().skip(100).take(30) {
            v[0][1] = -1.0;
        }
        let tr = EffectTrace { steps: (0..300).collect(), values };
        let rows = interaction_durations(&tr, 30.0, 10.0).unwrap();
        assert_eq!(rows.len(), 2);
        let r = rows.iter().find(|r| r.source == 0 && r.target == 1).unwrap();
        assert!((r.positive_seconds - 1.5).abs() < 1e-12);
        assert!((r.negative_seconds - 1.0).abs() < 1e-12);
        let zero = EffectTrace { steps: vec![0; 10], values: vec![vec![vec![0.0; 2]; 2]; 10] };
        assert!(interaction_durations(&zero, 30.0, 10.0).unwrap().iter().all(|r| r.positive_seconds == 0.0 && r.negative_seconds == 0.0));
        assert!(interaction_durations(&zero, 0.0, 10.0).is_err());
    }

    #[test]
    fn durations_bins_of_ten_seconds() {
        let values = vec![vec![vec![0.0; 3]; 3]; 30 * 25];
        let tr = EffectTrace { steps: (0..750).collect(), values };
        let rows = interaction_durations(&tr, 30.0, 10.0).unwrap();
        assert_eq!(rows.iter().map(|r| r.bin).max(), Some(2));
        assert_eq!(rows.len(), 3 * 6);
    }
}
