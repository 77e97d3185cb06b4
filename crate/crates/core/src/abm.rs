//! Augmented behavioral model.
//!
//! For every target agent `i` and lag `k` a motion network maps the agent's
//! interpretable feature vector `h` (own block followed by one block per other
//! agent) to a `d x d_h` coefficient matrix. In full mode the coefficients are
//! nonnegative and each other-agent block is multiplied by a bounded
//! navigation sign that encodes approach (+) or separation (-). The one-step
//! prediction is `x_t = sum_k Psi_{t,k} h_{t-k}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, Mlp, HIDDEN_ACTIVATION};
use crate::rng::Rng;
use crate::series::{straight_line_residuals, LagWindow, SeriesKind, TrajectorySeries};

pub const DEFAULT_BOID_LAGS: usize = 3;
pub const DEFAULT_KURAMOTO_LAGS: usize = 5;
pub const APPROACH_GAIN: f64 = 1e-2;
pub const VISIBILITY_GAIN: f64 = 1e-6;
pub const OCCLUSION_VISIBILITY_GAIN: f64 = 1e-2;

/// Which dynamical system the features are designed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum System {
    /// Agents with positions and velocities; predicts velocity.
    Boid,
    /// Phase oscillators with known intrinsic frequencies; predicts `dphi/dt`.
    Kuramoto { omega: Vec<f64> },
}

impl System {
    pub fn default_lags(&self) -> usize {
        match self {
            System::Boid => DEFAULT_BOID_LAGS,
            System::Kuramoto { .. } => DEFAULT_KURAMOTO_LAGS,
        }
    }

    fn series_kind(&self) -> SeriesKind {
        match self {
            System::Boid => SeriesKind::Positional,
            System::Kuramoto { .. } => SeriesKind::Phase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Theory features, navigation signs, nonnegative motion coefficients.
    Full,
    /// Theory features, unsigned and unconstrained motion coefficients.
    NoNavigation,
    /// Raw lagged velocities as features, unconstrained coefficients.
    Gvar,
}

/// Maps raw motion-network outputs to coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionOutput {
    Linear,
    /// `ln(1 + e^x)`, keeps coefficients nonnegative.
    Softplus,
}

impl MotionOutput {
    /// Nonnegative coefficients only where a navigation sign supplies the
    /// direction of the effect.
    pub fn default_for(system: &System, mode: Mode) -> Self {
        match (system, mode) {
            (System::Boid, Mode::Full) => MotionOutput::Softplus,
            _ => MotionOutput::Linear,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MotionOutput::Linear => x,
            MotionOutput::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            MotionOutput::Linear => 1.0,
            MotionOutput::Softplus => sigmoid(x),
        }
    }

    /// Raw value producing `y` (used to centre initial outputs).
    pub fn inverse(self, y: f64) -> f64 {
        match self {
            MotionOutput::Linear => y,
            MotionOutput::Softplus => y.max(1e-9).exp_m1().ln(),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gains of the navigation sign and the (optionally learned) ignore distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Navigation {
    pub approach_gain: f64,
    pub visibility_gain: f64,
    pub d_ignore: f64,
    pub learn_d_ignore: bool,
}

impl Default for Navigation {
    fn default() -> Self {
        Self { approach_gain: APPROACH_GAIN, visibility_gain: VISIBILITY_GAIN, d_ignore: 0.0, learn_d_ignore: false }
    }
}

impl Navigation {
    /// Setting for partially visible agents: sharper visibility, learned cutoff.
    pub fn occluded() -> Self {
        Self { visibility_gain: OCCLUSION_VISIBILITY_GAIN, learn_d_ignore: true, ..Self::default() }
    }
}

/// Signed navigation factor for one neighbour:
/// `sig(a_d (1/r - d_ignore)) * (sig(a_v v) - 1/2) * 2`, with `sig` the
/// logistic function. Lies in `(-1, 1)`.
pub fn navigation_sign(approach: f64, distance: f64, nav: &Navigation) -> f64 {
    navigation_sign_with_grad(approach, distance, nav).0
}

/// The sign and its derivative with respect to `d_ignore`.
pub fn navigation_sign_with_grad(approach: f64, distance: f64, nav: &Navigation) -> (f64, f64) {
    let inv = if distance > 0.0 { 1.0 / distance } else { f64::INFINITY };
    let vis = sigmoid(nav.visibility_gain * (inv - nav.d_ignore));
    let dir = (sigmoid(nav.approach_gain * approach) - 0.5) * 2.0;
    let dvis = -nav.visibility_gain * vis * (1.0 - vis);
    (vis * dir, dvis * dir)
}

/// Column layout of the per-agent feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub agents: usize,
    pub self_width: usize,
    pub other_width: usize,
    pub out_dim: usize,
}

impl FeatureLayout {
    pub fn new(system: &System, mode: Mode, agents: usize, spatial: usize) -> Self {
        let (self_width, other_width) = match (system, mode) {
            (_, Mode::Gvar) => (spatial, spatial),
            (System::Boid, _) => (spatial, spatial),
            (System::Kuramoto { .. }, _) => (2, 1),
        };
        Self { agents, self_width, other_width, out_dim: spatial }
    }

    /// Total feature width `d_h`.
    pub fn width(&self) -> usize {
        self.self_width + (self.agents - 1) * self.other_width
    }

    pub fn coefficient_count(&self) -> usize {
        self.out_dim * self.width()
    }

    /// Block index of `source` among the others of `target`.
    pub fn block_of(&self, target: usize, source: usize) -> usize {
        debug_assert_ne!(target, source);
        if source < target {
            source
        } else {
            source - 1
        }
    }

    /// Source agent of block `b` for `target`.
    pub fn source_of(&self, target: usize, block: usize) -> usize {
        if block < target {
            block
        } else {
            block + 1
        }
    }

    /// Column range of `source`'s block in `target`'s features.
    pub fn columns(&self, target: usize, source: usize) -> std::ops::Range<usize> {
        if source == target {
            return 0..self.self_width;
        }
        let start = self.self_width + self.block_of(target, source) * self.other_width;
        start..start + self.other_width
    }

    /// Which other-agent block column `c` belongs to (`None` for self).
    #[inline]
    pub fn block_of_column(&self, c: usize) -> Option<usize> {
        (c >= self.self_width).then(|| (c - self.self_width) / self.other_width)
    }
}

/// Feature vector of one agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Set when two agents coincided and a unit offset was zeroed.
    pub coincident: bool,
}

/// Navigation inputs per other agent: approach speed (positive when closing
/// in) and distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NavFeature {
    pub approach: Vec<f64>,
    pub distance: Vec<f64>,
}

pub fn build_features(
    series: &TrajectorySeries,
    system: &System,
    mode: Mode,
    t: usize,
    i: usize,
) -> Result<(FeatureVector, NavFeature)> {
    if t >= series.steps() || i >= series.agents() {
        return Err(Error::Domain(format!("step {t} / agent {i} out of range")));
    }
    if series.kind() != system.series_kind() {
        return Err(Error::Domain(format!("{:?} series does not fit {system:?}", series.kind())));
    }
    let p = series.agents();
    let others = (0..p).filter(|&j| j != i);
    let mut values = Vec::new();
    let mut nav = NavFeature::default();
    let mut coincident = false;
    match (system, mode) {
        (_, Mode::Gvar) => {
            values.extend_from_slice(series.velocity(t, i));
            for j in others {
                values.extend_from_slice(series.velocity(t, j));
            }
        }
        (System::Boid, _) => {
            let vi = series.velocity(t, i);
            values.extend_from_slice(vi);
            let pi = series.position(t, i);
            for j in others {
                let pj = series.position(t, j);
                let offset: Vec<f64> = pj.iter().zip(pi).map(|(a, b)| a - b).collect();
                let dist = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
                if dist > 0.0 {
                    values.extend(offset.iter().map(|v| v / dist));
                    nav.approach.push(vi.iter().zip(&offset).map(|(v, o)| v * o / dist).sum());
                } else {
                    coincident = true;
                    values.extend(std::iter::repeat_n(0.0, offset.len()));
                    nav.approach.push(0.0);
                }
                nav.distance.push(dist);
            }
        }
        (System::Kuramoto { omega }, _) => {
            if omega.len() != p {
                return Err(Error::Dimension(format!("{} frequencies for {p} oscillators", omega.len())));
            }
            let phi = series.position(t, i)[0];
            values.push(series.velocity(t, i)[0]);
            values.push(omega[i]);
            for j in others {
                values.push((phi - series.position(t, j)[0]).sin());
            }
        }
    }
    if coincident {
        log::warn!("agents coincide with agent {i} at step {t}; unit offset set to zero");
    }
    Ok((FeatureVector { values, coincident }, nav))
}

/// Generalized coefficients `[n][p][K][d][d_h]` for target steps `steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    pub layout: FeatureLayout,
    pub lags: usize,
    /// Series step predicted by each time slice.
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
}

impl CoefficientTensor {
    pub fn zeros(layout: FeatureLayout, lags: usize, steps: Vec<usize>) -> Self {
        let n = steps.len() * layout.agents * lags * layout.coefficient_count();
        Self { layout, lags, steps, values: vec![0.0; n] }
    }

    pub fn len_t(&self) -> usize {
        self.steps.len()
    }

    pub fn agents(&self) -> usize {
        self.layout.agents
    }

    fn offset(&self, t: usize, i: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.lags);
        let per = self.layout.coefficient_count();
        ((t * self.layout.agents + i) * self.lags + (k - 1)) * per
    }

    /// `d x d_h` matrix for time slice `t`, target `i`, lag `k` (1-based).
    pub fn slice(&self, t: usize, i: usize, k: usize) -> &[f64] {
        let o = self.offset(t, i, k);
        &self.values[o..o + self.layout.coefficient_count()]
    }

    pub fn slice_mut(&mut self, t: usize, i: usize, k: usize) -> &mut [f64] {
        let o = self.offset(t, i, k);
        let n = self.layout.coefficient_count();
        &mut self.values[o..o + n]
    }

    /// Entries of the `d x d_r` block of `source` in target `i`'s slice,
    /// row-major.
    pub fn block(&self, t: usize, i: usize, k: usize, source: usize) -> Vec<f64> {
        let cols = self.layout.columns(i, source);
        let w = self.layout.width();
        let s = self.slice(t, i, k);
        (0..self.layout.out_dim).flat_map(|u| s[u * w + cols.start..u * w + cols.end].iter().copied()).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }
}

/// One trained network per (target agent, lag) plus navigation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbmModel {
    pub system: System,
    pub mode: Mode,
    pub layout: FeatureLayout,
    pub lags: usize,
    pub navigation: Navigation,
    pub motion_output: MotionOutput,
    /// Index `i * lags + (k - 1)`.
    pub nets: Vec<Mlp>,
}

/// Initial coefficient statistics for new models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelInit {
    pub hidden: usize,
    /// Output-layer weight scale relative to fan-in scaling.
    pub output_scale: f64,
    /// Coefficient value every output starts near.
    pub initial_coefficient: f64,
    /// Overrides the system and mode default.
    pub motion_output: Option<MotionOutput>,
}

impl Default for ModelInit {
    fn default() -> Self {
        Self { hidden: crate::nn::DEFAULT_HIDDEN, output_scale: 0.1, initial_coefficient: 0.1, motion_output: None }
    }
}

impl AbmModel {
    pub fn new(
        system: System,
        mode: Mode,
        agents: usize,
        spatial: usize,
        lags: usize,
        navigation: Navigation,
        init: ModelInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        if lags == 0 {
            return Err(Error::Domain("lag count must be at least 1".into()));
        }
        if agents == 0 {
            return Err(Error::Domain("need at least one agent".into()));
        }
        if !(navigation.approach_gain > 0.0 && navigation.visibility_gain > 0.0) {
            return Err(Error::Domain("navigation gains must be positive".into()));
        }
        let layout = FeatureLayout::new(&system, mode, agents, spatial);
        let motion_output = init.motion_output.unwrap_or_else(|| MotionOutput::default_for(&system, mode));
        let net_init = Init { output_scale: init.output_scale, output_bias: motion_output.inverse(init.initial_coefficient) };
        let nets = (0..agents * lags)
            .map(|_| Mlp::new(layout.width(), init.hidden, layout.coefficient_count(), HIDDEN_ACTIVATION, net_init, rng))
            .collect();
        Ok(Self { system, mode, layout, lags, navigation, motion_output, nets })
    }

    /// Check that the networks match the feature layout, as required after
    /// loading a checkpoint.
    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 || self.nets.len() != self.layout.agents * self.lags {
            return Err(Error::Dimension(format!("{} networks for {} agents and {} lags", self.nets.len(), self.layout.agents, self.lags)));
        }
        let (w, c) = (self.layout.width(), self.layout.coefficient_count());
        if let Some(n) = self.nets.iter().find(|n| n.input_dim() != w || n.output_dim() != c) {
            return Err(Error::Dimension(format!(
                "network maps {} -> {}, layout needs {w} -> {c}",
                n.input_dim(),
                n.output_dim()
            )));
        }
        if let System::Kuramoto { omega } = &self.system {
            if omega.len() != self.layout.agents {
                return Err(Error::Dimension(format!("{} frequencies for {} oscillators", omega.len(), self.layout.agents)));
            }
        }
        Ok(())
    }

    pub fn net(&self, i: usize, k: usize) -> &Mlp {
        &self.nets[i * self.lags + (k - 1)]
    }

    pub fn uses_navigation(&self) -> bool {
        self.mode == Mode::Full && matches!(self.system, System::Boid)
    }

    /// Per-block signs for `nav` (all `+1` when navigation is off).
    pub fn block_signs(&self, nav: &NavFeature) -> Vec<f64> {
        let blocks = self.layout.agents - 1;
        if !self.uses_navigation() {
            return vec![1.0; blocks];
        }
        (0..blocks).map(|b| navigation_sign(nav.approach[b], nav.distance[b], &self.navigation)).collect()
    }

    /// Coefficient matrix (`d x d_h`, row-major) of target `i` at lag `k`.
    pub fn coefficients(&self, i: usize, k: usize, features: &FeatureVector, nav: &NavFeature) -> Result<Vec<f64>> {
        let raw = self.net(i, k).forward(&features.values)?;
        let signs = self.block_signs(nav);
        let w = self.layout.width();
        Ok(raw
            .iter()
            .enumerate()
            .map(|(idx, &r)| {
                let c = idx % w;
                let s = self.layout.block_of_column(c).map_or(1.0, |b| signs[b]);
                s * self.motion_output.apply(r)
            })
            .collect())
    }

    /// One-step prediction from per-agent windows. `navs[i][k-1]` holds the
    /// navigation inputs of agent `i` at lag `k`. Returns the `[p][d]`
    /// prediction and the `[p][K]` coefficient matrices.
    pub fn predict(&self, windows: &[LagWindow], navs: &[Vec<NavFeature>]) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
        let p = self.layout.agents;
        let (d, w) = (self.layout.out_dim, self.layout.width());
        if windows.len() != p || navs.len() != p {
            return Err(Error::Dimension(format!("expected windows for {p} agents")));
        }
        let mut out = vec![0.0; p * d];
        let mut psis = Vec::with_capacity(p);
        for i in 0..p {
            let win = &windows[i];
            if win.lags() != self.lags || win.width() != w {
                return Err(Error::Dimension("window shape does not match the model".into()));
            }
            let mut per_lag = Vec::with_capacity(self.lags);
            for k in 1..=self.lags {
                let h = win.at_lag(k);
                let fv = FeatureVector { values: h.to_vec(), coincident: false };
                let psi = self.coefficients(i, k, &fv, &navs[i][k - 1])?;
                for u in 0..d {
                    out[i * d + u] += psi[u * w..(u + 1) * w].iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
                }
                per_lag.push(psi);
            }
            psis.push(per_lag);
        }
        Ok((out, psis))
    }
}

/// Features and navigation inputs for every step and agent of a series,
/// laid out so the inputs of lag `k` form a contiguous block.
#[derive(Debug, Clone)]
pub struct Design {
    pub layout: FeatureLayout,
    pub lags: usize,
    /// Steps with features (all but the last).
    pub rows: usize,
    /// `[p][rows][d_h]`
    pub features: Vec<f64>,
    /// `[p][rows][p-1]`
    pub approach: Vec<f64>,
    pub distance: Vec<f64>,
    /// Target steps `lags..T-1`; the last step is left out because its
    /// difference velocity is not observed.
    pub steps: Vec<usize>,
    /// `[n][p][d]` velocity targets.
    pub targets: Vec<f64>,
    /// `[n][p]` squared straight-line residual of each target, NaN before
    /// step 2.
    pub straight_residual: Vec<f64>,
}

impl Design {
    pub fn new(series: &TrajectorySeries, system: &System, mode: Mode, lags: usize) -> Result<Self> {
        if series.steps() < lags + 2 {
            return Err(Error::Length { needed: lags + 2, got: series.steps() });
        }
        let p = series.agents();
        let layout = FeatureLayout::new(system, mode, p, series.spatial());
        let rows = series.steps() - 1;
        let w = layout.width();
        let mut features = vec![0.0; p * rows * w];
        let mut approach = vec![0.0; p * rows * (p - 1)];
        let mut distance = vec![0.0; p * rows * (p - 1)];
        for i in 0..p {
            for t in 0..rows {
                let (fv, nav) = build_features(series, system, mode, t, i)?;
                let o = (i * rows + t) * w;
                features[o..o + w].copy_from_slice(&fv.values);
                if !nav.approach.is_empty() {
                    let o = (i * rows + t) * (p - 1);
                    approach[o..o + p - 1].copy_from_slice(&nav.approach);
                    distance[o..o + p - 1].copy_from_slice(&nav.distance);
                }
            }
        }
        let steps: Vec<usize> = (lags..series.steps() - 1).collect();
        let d = layout.out_dim;
        let mut targets = Vec::with_capacity(steps.len() * p * d);
        let mut straight_residual = Vec::with_capacity(steps.len() * p);
        for &t in &steps {
            for i in 0..p {
                targets.extend_from_slice(series.velocity(t, i));
            }
            if t >= 2 {
                straight_residual.extend(straight_line_residuals(series, t)?);
            } else {
                straight_residual.extend(std::iter::repeat_n(f64::NAN, p));
            }
        }
        Ok(Self { layout, lags, rows, features, approach, distance, steps, targets, straight_residual })
    }

    pub fn samples(&self) -> usize {
        self.steps.len()
    }

    /// Inputs of agent `i` at lag `k` for target slices `start..start+n`.
    pub fn lag_inputs(&self, i: usize, k: usize, start: usize, n: usize) -> &[f64] {
        let w = self.layout.width();
        let first = self.lags - k + start;
        let o = (i * self.rows + first) * w;
        &self.features[o..o + n * w]
    }

    /// Feature row of agent `i` at series step `t`.
    pub fn row(&self, i: usize, t: usize) -> &[f64] {
        let w = self.layout.width();
        let o = (i * self.rows + t) * w;
        &self.features[o..o + w]
    }

    pub fn nav_row(&self, i: usize, t: usize) -> NavFeature {
        let b = self.layout.agents - 1;
        let o = (i * self.rows + t) * b;
        NavFeature { approach: self.approach[o..o + b].to_vec(), distance: self.distance[o..o + b].to_vec() }
    }

    pub fn target(&self, slice: usize, i: usize) -> &[f64] {
        let d = self.layout.out_dim;
        let o = (slice * self.layout.agents + i) * d;
        &self.targets[o..o + d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::boid::BoidWorld;
    use crate::sim::kuramoto::KuramotoSystem;

    fn boid_series() -> TrajectorySeries {
        let w = BoidWorld::sample(5, &mut Rng::new(1)).unwrap();
        w.simulate(40).unwrap().0
    }

    #[test]
    fn boid_feature_width() {
        let s = boid_series();
        let (fv, nav) = build_features(&s, &System::Boid, Mode::Full, 3, 0).unwrap();
        assert_eq!(fv.values.len(), 10);
        assert_eq!(nav.approach.len(), 4);
        assert_eq!(FeatureLayout::new(&System::Boid, Mode::Full, 5, 2).width(), 10);
    }

    #[test]
    fn kuramoto_feature_width() {
        let sys = KuramotoSystem::sample(5, &mut Rng::new(2)).unwrap();
        let s = sys.simulate(20).unwrap();
        let system = System::Kuramoto { omega: sys.omega.clone() };
        let (fv, nav) = build_features(&s, &system, Mode::Full, 4, 2).unwrap();
        assert_eq!(fv.values.len(), 6);
        assert!(nav.approach.is_empty());
        assert_eq!(fv.values[1], sys.omega[2]);
    }

    #[test]
    fn approach_speed_is_positive_when_heading_at_neighbour() {
        // agent 0 at origin moving +x at 1.5 m/s, agent 1 ahead on the x axis
        let vals = vec![0.0, 0.0, 1.5, 0.0, 5.0, 0.0, 0.0, 1.0];
        let s = TrajectorySeries::new(vals.repeat(3), 3, 2, 4, 0.01, SeriesKind::Positional).unwrap();
        let (_, nav) = build_features(&s, &System::Boid, Mode::Full, 0, 0).unwrap();
        assert!((nav.approach[0] - 1.5).abs() < 1e-12);
        assert_eq!(nav.distance[0], 5.0);
    }

    #[test]
    fn coincident_agents_are_flagged() {
        let vals = vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let s = TrajectorySeries::new(vals.repeat(3), 3, 2, 4, 0.01, SeriesKind::Positional).unwrap();
        let (fv, _) = build_features(&s, &System::Boid, Mode::Full, 0, 0).unwrap();
        assert!(fv.coincident);
        assert_eq!(&fv.values[2..], &[0.0, 0.0]);
    }

    #[test]
    fn sign_is_zero_without_approach() {
        assert_eq!(navigation_sign(0.0, 3.0, &Navigation::default()), 0.0);
    }

    #[test]
    fn sign_saturates_at_half_with_tiny_visibility_gain() {
        let s = navigation_sign(1e9, 2.0, &Navigation::default());
        assert!((s - 0.5).abs() < 1e-6, "{s}");
    }

    #[test]
    fn far_agents_with_ignore_distance_lose_visibility() {
        let nav = Navigation { d_ignore: 0.5, visibility_gain: 1.0, ..Navigation::default() };
        let (s, _) = navigation_sign_with_grad(1e9, 1e12, &nav);
        assert!((s - sigmoid(-0.5)).abs() < 1e-9);
        assert!(s < 0.5);
    }

    #[test]
    fn sign_bounded_and_monotone() {
        let nav = Navigation { visibility_gain: 1.0, approach_gain: 2.0, d_ignore: 0.3, learn_d_ignore: true };
        let mut prev = -2.0;
        for k in -200..=200 {
            let v = k as f64 * 0.05;
            let s = navigation_sign(v, 1.7, &nav);
            assert!(s.abs() <= 1.0);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn d_ignore_gradient_matches_difference() {
        let nav = Navigation { visibility_gain: 0.7, approach_gain: 0.4, d_ignore: 0.2, learn_d_ignore: true };
        let (_, g) = navigation_sign_with_grad(1.3, 2.5, &nav);
        let h = 1e-6;
        let up = navigation_sign(1.3, 2.5, &Navigation { d_ignore: 0.2 + h, ..nav });
        let dn = navigation_sign(1.3, 2.5, &Navigation { d_ignore: 0.2 - h, ..nav });
        assert!((g - (up - dn) / (2.0 * h)).abs() < 1e-8);
    }

    fn tiny_model(mode: Mode, agents: usize) -> AbmModel {
        AbmModel::new(System::Boid, mode, agents, 2, 1, Navigation::default(), ModelInit::default(), &mut Rng::new(5))
            .unwrap()
    }

    #[test]
    fn zero_signs_zero_other_blocks() {
        let m = tiny_model(Mode::Full, 3);
        let fv = FeatureVector { values: vec![0.3; 6], coincident: false };
        let nav = NavFeature { approach: vec![0.0, 0.0], distance: vec![2.0, 3.0] };
        let psi = m.coefficients(0, 1, &fv, &nav).unwrap();
        for u in 0..2 {
            assert!(psi[u * 6..u * 6 + 2].iter().all(|&v| v > 0.0));
            assert!(psi[u * 6 + 2..u * 6 + 6].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn broadcast_sign_product() {
        let mut m = tiny_model(Mode::Full, 2);
        // zero weights, bias so softplus gives exactly 1
        let net = &mut m.nets[0];
        let n = net.params().len();
        let b2 = n - net.output_dim();
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let raw_one = MotionOutput::Softplus.inverse(1.0);
        net.params_mut()[b2..].iter_mut().for_each(|p| *p = raw_one);
        // pick an approach speed whose sign is -0.4
        let nav_params = m.navigation;
        let vis = sigmoid(nav_params.visibility_gain / 2.0);
        let target_dir = -0.4 / vis;
        let v = ((target_dir / 2.0 + 0.5).recip() - 1.0).ln() / -nav_params.approach_gain;
        let nav = NavFeature { approach: vec![v], distance: vec![2.0] };
        let fv = FeatureVector { values: vec![0.1; 4], coincident: false };
        let psi = m.coefficients(0, 1, &fv, &nav).unwrap();
        for u in 0..2 {
            assert!((psi[u * 4] - 1.0).abs() < 1e-12);
            for c in 2..4 {
                assert!((psi[u * 4 + c] + 0.4).abs() < 1e-9, "{}", psi[u * 4 + c]);
            }
        }
    }

    #[test]
    fn single_agent_has_only_self_block() {
        let m = tiny_model(Mode::Full, 1);
        assert_eq!(m.layout.width(), 2);
        let fv = FeatureVector { values: vec![1.0, 2.0], coincident: false };
        assert_eq!(m.coefficients(0, 1, &fv, &NavFeature::default()).unwrap().len(), 4);
    }

    #[test]
    fn hand_built_scalar_prediction() {
        // 1 agent, d = 1, K = 1, Psi = 2, h = 3 => 6
        let layout = FeatureLayout { agents: 1, self_width: 1, other_width: 1, out_dim: 1 };
        let mut net = Mlp::zeros(1, 2, 1, HIDDEN_ACTIVATION);
        let n = net.params().len();
        net.params_mut()[n - 1] = 2.0;
        let m = AbmModel {
            system: System::Boid,
            mode: Mode::NoNavigation,
            layout,
            lags: 1,
            navigation: Navigation::default(),
            motion_output: MotionOutput::Linear,
            nets: vec![net],
        };
        let series = TrajectorySeries::new(vec![0.0, 3.0, 0.0, 3.0, 0.0, 3.0], 3, 1, 2, 1.0, SeriesKind::Positional).unwrap();
        let windows = crate::series::make_lag_windows(&series, 1, |s, t, i| s.velocity(t, i).to_vec()).unwrap();
        let (x, _) = m.predict(&windows[0].windows, &[vec![NavFeature::default()]]).unwrap();
        assert_eq!(x, vec![6.0]);
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let mut m = tiny_model(Mode::NoNavigation, 2);
        for net in &mut m.nets {
            net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        }
        let s = boid_series();
        let windows = crate::series::make_lag_windows(&s.without_agent(4).unwrap().without_agent(3).unwrap().without_agent(2).unwrap(), 1, |s, t, i| {
            build_features(s, &System::Boid, Mode::NoNavigation, t, i).unwrap().0.values
        })
        .unwrap();
        let navs = vec![vec![NavFeature { approach: vec![1.0], distance: vec![1.0] }]; 2];
        let (x, _) = m.predict(&windows[5].windows, &navs).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_navigation_ignores_signs() {
        let m = tiny_model(Mode::NoNavigation, 3);
        let fv = FeatureVector { values: vec![0.2, -0.1, 0.5, 0.5, -0.3, 0.9], coincident: false };
        let a = m.coefficients(1, 1, &fv, &NavFeature { approach: vec![1.0, -4.0], distance: vec![1.0, 2.0] }).unwrap();
        let b = m.coefficients(1, 1, &fv, &NavFeature { approach: vec![-9.0, 0.0], distance: vec![7.0, 0.5] }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn design_lag_inputs_line_up() {
        let s = boid_series();
        let d = Design::new(&s, &System::Boid, Mode::Full, 3).unwrap();
        assert_eq!(d.samples(), 36);
        let w = d.layout.width();
        // slice m, lag k reads features at step m + 3 - k
        let block = d.lag_inputs(2, 2, 0, d.samples());
        let (fv, _) = build_features(&s, &System::Boid, Mode::Full, 5 + 3 - 2, 2).unwrap();
        assert_eq!(&block[5 * w..6 * w], fv.values.as_slice());
    }
}
