//! Graph-recovery metrics on off-diagonal entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::GcMatrix;
use crate::series::CausalGraph;

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("scores must be finite".into()));
    }
    Ok(())
}

/// Area under the ROC curve via average ranks (ties count one half).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auroc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && scores[idx[e + 1]] == scores[idx[s]] {
            e += 1;
        }
        // ranks s+1..=e+1 share their mean
        let mean_rank = (s + e + 2) as f64 / 2.0;
        rank_sum += mean_rank * idx[s..=e].iter().filter(|&&i| labels[i]).count() as f64;
        s = e + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Area under the precision-recall curve with step interpolation: the sum
/// over distinct thresholds of recall gain times precision.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("auprc needs positive labels".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && scores[idx[e + 1]] == scores[idx[s]] {
            e += 1;
        }
        let gained = idx[s..=e].iter().filter(|&&i| labels[i]).count();
        tp += gained;
        fp += e + 1 - s - gained;
        area += gained as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        s = e + 1;
    }
    Ok(area)
}

fn balanced(truth: &[bool], pred: &[bool]) -> Option<f64> {
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    let tpr = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let tnr = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    match (tpr, tnr) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

/// Accuracy scores of a predicted graph against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub acc: f64,
    pub ba: f64,
    pub ba_pos: f64,
    pub ba_neg: f64,
}

pub fn accuracy_metrics(pred: &CausalGraph, truth: &CausalGraph) -> Result<Accuracy> {
    let p = truth.agents();
    if p < 2 {
        return Err(Error::Domain("metrics need at least two agents".into()));
    }
    if pred.agents() != p {
        return Err(Error::Dimension("graphs differ in size".into()));
    }
    let pairs: Vec<(i8, i8)> = CausalGraph::off_diagonal(p).map(|(i, j)| (truth.get(i, j), pred.get(i, j))).collect();
    let present_t: Vec<bool> = pairs.iter().map(|&(t, _)| t != 0).collect();
    let present_p: Vec<bool> = pairs.iter().map(|&(_, q)| q != 0).collect();
    let acc = present_t.iter().zip(&present_p).filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64;
    let class = |c: i8| -> (Vec<bool>, Vec<bool>) { pairs.iter().map(|&(t, q)| (t == c, q == c)).unzip() };
    let (tp, pp) = class(1);
    let (tn, pn) = class(-1);
    Ok(Accuracy {
        acc,
        ba: balanced(&present_t, &present_p).unwrap_or(0.0),
        ba_pos: balanced(&tp, &pp).unwrap_or(0.0),
        ba_neg: balanced(&tn, &pn).unwrap_or(0.0),
    })
}

/// Metrics of one trial. Ranking metrics are absent when the truth has a
/// single class; sign metrics are absent for unsigned methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub acc: f64,
    pub ba: f64,
    pub ba_pos: Option<f64>,
    pub ba_neg: Option<f64>,
}

/// Off-diagonal magnitudes and presence labels, row-major by source.
pub fn scores_and_labels(gc: &GcMatrix, truth: &CausalGraph) -> (Vec<f64>, Vec<bool>) {
    CausalGraph::off_diagonal(truth.agents()).map(|(i, j)| (gc.magnitude[i][j].abs(), truth.get(i, j) != 0)).unzip()
}

pub fn evaluate(gc: &GcMatrix, pred: &CausalGraph, truth: &CausalGraph, signed: bool) -> Result<MetricReport> {
    if gc.agents() != truth.agents() {
        return Err(Error::Dimension("score matrix and truth differ in size".into()));
    }
    let (scores, labels) = scores_and_labels(gc, truth);
    let acc = accuracy_metrics(pred, truth)?;
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(MetricReport {
        auroc: defined(auroc(&scores, &labels))?,
        auprc: defined(auprc(&scores, &labels))?,
        acc: acc.acc,
        ba: acc.ba,
        ba_pos: signed.then_some(acc.ba_pos),
        ba_neg: signed.then_some(acc.ba_neg),
    })
}

/// Mean and sample standard deviation of the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Some(Summary { mean, sd, count: v.len() })
}

pub const METRIC_NAMES: [&str; 6] = ["auroc", "auprc", "acc", "ba", "ba_pos", "ba_neg"];

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "auroc" => self.auroc,
            "auprc" => self.auprc,
            "acc" => Some(self.acc),
            "ba" => Some(self.ba),
            "ba_pos" => self.ba_pos,
            "ba_neg" => self.ba_neg,
            _ => None,
        }
    }
}

/// One summary per metric name, in [`METRIC_NAMES`] order.
pub fn summarize_reports(reports: &[MetricReport]) -> Vec<(&'static str, Option<Summary>)> {
    METRIC_NAMES.iter().map(|&m| (m, summarize(reports.iter().map(|r| r.get(m))))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_complement_without_ties() {
        let s = [0.3, 0.1, 0.9, 0.4, 0.7];
        let l = [true, false, true, false, false];
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        // all negatives above both positives: precision 1/3 then 2/4
        let v = auprc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert!((v - (0.5 * 1.0 / 3.0 + 0.5 * 0.5)).abs() < 1e-12);
        assert!(matches!(auprc(&[0.1], &[false]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn monotone_transform_invariance() {
        let s = [0.3, 0.1, 0.9, 0.4, 0.7, 0.2];
        let l = [true, false, true, false, false, true];
        let cubed: Vec<f64> = s.iter().map(|x| x * x * x).collect();
        assert_eq!(auroc(&s, &l).unwrap(), auroc(&cubed, &l).unwrap());
        assert_eq!(auprc(&s, &l).unwrap(), auprc(&cubed, &l).unwrap());
    }

    fn graph(p: usize, f: impl Fn(usize, usize) -> i8) -> CausalGraph {
        CausalGraph::new((0..p).map(|i| (0..p).map(|j| if i == j { 0 } else { f(i, j) }).collect()).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let t = graph(4, |i, j| [0, 1, -1][(i + 2 * j) % 3]);
        let a = accuracy_metrics(&t, &t).unwrap();
        assert_eq!((a.acc, a.ba, a.ba_pos, a.ba_neg), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_prediction_half_present() {
        let t = graph(4, |i, j| if i < j { 1 } else { 0 });
        let present = CausalGraph::off_diagonal(4).filter(|&(i, j)| t.get(i, j) != 0).count();
        assert_eq!(present, 6);
        let a = accuracy_metrics(&CausalGraph::empty(4), &t).unwrap();
        assert_eq!(a.acc, 0.5);
        assert_eq!(a.ba, 0.5);
    }

    #[test]
    fn diagonal_is_never_read() {
        let t = graph(3, |i, _| if i == 0 { 1 } else { 0 });
        let mut poisoned = t.edges().to_vec();
        for (i, row) in poisoned.iter_mut().enumerate() {
            row[i] = -1;
        }
        let mut pt = CausalGraph::empty(3);
        for i in 0..3 {
            for j in 0..3 {
                pt.set(i, j, poisoned[i][j]);
            }
        }
        assert_eq!(accuracy_metrics(&pt, &t).unwrap(), accuracy_metrics(&t, &t).unwrap());
    }

    #[test]
    fn summary_stats() {
        let s = summarize([Some(1.0), None, Some(3.0)]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.count, 2);
        assert!(summarize([None]).is_none());
    }
}
