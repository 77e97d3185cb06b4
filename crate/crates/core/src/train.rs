//! Penalized loss and the full-batch training loop.
//!
//! `total = prediction + lambda * sparsity + gamma * theory_guided + beta * smoothing`
//!
//! Gradients are propagated by hand from the coefficients through the
//! navigation signs and the motion-output map into each network.

use serde::{Deserialize, Serialize};

use crate::abm::{navigation_sign_with_grad, AbmModel, CoefficientTensor, Design, Mode, ModelInit, Navigation, System};
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpCache, DEFAULT_DECAY, DEFAULT_LEARNING_RATE};
use crate::rng::Rng;
use crate::series::TrajectorySeries;

/// How the straight-line residual enters the theory-guided weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TgKernel {
    /// `exp(-r / sigma)`: strongest penalty when the agent moves straight.
    Decaying,
    /// `exp(+r / sigma)`.
    Growing,
}

/// Whether the residual is taken per target agent or over all agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TgScope {
    PerAgent,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of lags; `None` picks the system default.
    pub lags: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Kernel width; `None` uses the median straight-line residual.
    pub sigma: Option<f64>,
    pub seed: u64,
    pub mode: Mode,
    pub theory_guided: bool,
    pub tg_kernel: TgKernel,
    pub tg_scope: TgScope,
    /// Windows per optimizer step; `None` means the whole sequence.
    pub batch_size: Option<usize>,
    pub navigation: Navigation,
    pub init: ModelInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lags: None,
            epochs: 500,
            learning_rate: DEFAULT_LEARNING_RATE,
            decay: DEFAULT_DECAY,
            lambda: 0.1,
            beta: 0.01,
            gamma: 10.0,
            alpha: 0.5,
            sigma: None,
            seed: 0,
            mode: Mode::Full,
            theory_guided: true,
            tg_kernel: TgKernel::Decaying,
            tg_scope: TgScope::PerAgent,
            batch_size: None,
            navigation: Navigation::default(),
            init: ModelInit::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if !(self.lambda >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0) {
            return bad("lambda, beta and gamma must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma must be positive");
            }
        }
        if self.lags == Some(0) {
            return bad("lags must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return bad("learning rate must be positive and decay in (0, 1]");
        }
        if !(self.navigation.approach_gain > 0.0 && self.navigation.visibility_gain > 0.0) {
            return bad("navigation gains must be positive");
        }
        if self.init.hidden == 0 {
            return bad("hidden width must be positive");
        }
        Ok(())
    }

    pub fn lags_for(&self, system: &System) -> usize {
        self.lags.unwrap_or_else(|| system.default_lags())
    }

    /// Weight actually applied to the theory-guided term.
    pub fn effective_gamma(&self) -> f64 {
        if self.theory_guided {
            self.gamma
        } else {
            0.0
        }
    }
}

/// Loss terms, unweighted, and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub sparsity: f64,
    pub theory_guided: f64,
    pub smoothing: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(prediction: f64, sparsity: f64, theory_guided: f64, smoothing: f64, cfg: &TrainConfig) -> Self {
        let total = prediction + cfg.lambda * sparsity + cfg.effective_gamma() * theory_guided + cfg.beta * smoothing;
        Self { prediction, sparsity, theory_guided, smoothing, total }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Mean squared error over all entries.
pub fn loss_prediction(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::Dimension("prediction and observation differ in length".into()));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    Ok(predicted.iter().zip(observed).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / predicted.len() as f64)
}

/// Elastic-net penalty averaged over time slices (one slice per entry).
pub fn loss_sparsity(slices: &[&[f64]], alpha: f64) -> f64 {
    if slices.is_empty() {
        return 0.0;
    }
    let sum: f64 = slices.iter().flat_map(|s| s.iter()).map(|&v| alpha * v.abs() + (1.0 - alpha) * v * v).sum();
    sum / slices.len() as f64
}

/// Squared change between consecutive slices, averaged over pairs.
pub fn loss_smooth(slices: &[&[f64]]) -> f64 {
    if slices.len() < 2 {
        return 0.0;
    }
    let sum: f64 = slices
        .windows(2)
        .map(|w| w[1].iter().zip(w[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    sum / (slices.len() - 1) as f64
}

/// Residual-weighted squared norm of the other-agent coefficients, averaged
/// over time slices.
pub fn loss_tg(other_slices: &[&[f64]], weights: &[f64]) -> Result<f64> {
    if other_slices.len() != weights.len() {
        return Err(Error::Dimension("one weight per time slice expected".into()));
    }
    if other_slices.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = other_slices.iter().zip(weights).map(|(s, w)| w * s.iter().map(|v| v * v).sum::<f64>()).sum();
    Ok(sum / other_slices.len() as f64)
}

/// Kernel weight for a squared residual. Missing residuals (NaN) weigh zero.
pub fn tg_weight(residual: f64, sigma: f64, kernel: TgKernel) -> f64 {
    if residual.is_nan() {
        return 0.0;
    }
    match kernel {
        TgKernel::Decaying => (-residual / sigma).exp(),
        TgKernel::Growing => (residual / sigma).exp(),
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Theory-guided weights `[n][p]` and the sigma used.
pub fn tg_weights(design: &Design, cfg: &TrainConfig) -> (Vec<f64>, f64) {
    let p = design.layout.agents;
    let residuals: Vec<f64> = match cfg.tg_scope {
        TgScope::PerAgent => design.straight_residual.clone(),
        TgScope::Joint => design
            .straight_residual
            .chunks(p)
            .flat_map(|c| {
                let s: f64 = c.iter().sum();
                std::iter::repeat_n(s, p)
            })
            .collect(),
    };
    let sigma = cfg.sigma.unwrap_or_else(|| match median(residuals.clone()) {
        Some(m) if m > 0.0 => m,
        _ => 1.0,
    });
    let w = residuals.iter().map(|&r| tg_weight(r, sigma, cfg.tg_kernel)).collect();
    (w, sigma)
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub nets: Vec<Vec<f64>>,
    pub d_ignore: f64,
}

impl Gradients {
    fn zeros(model: &AbmModel) -> Self {
        Self { nets: model.nets.iter().map(|n| vec![0.0; n.params().len()]).collect(), d_ignore: 0.0 }
    }

    pub fn flatten(&self, model: &AbmModel) -> Vec<f64> {
        let mut v: Vec<f64> = self.nets.iter().flatten().copied().collect();
        if model.navigation.learn_d_ignore && model.uses_navigation() {
            v.push(self.d_ignore);
        }
        v
    }
}

/// All trainable parameters of `model` in one vector.
pub fn flatten_params(model: &AbmModel) -> Vec<f64> {
    let mut v: Vec<f64> = model.nets.iter().flat_map(|n| n.params().iter().copied()).collect();
    if model.navigation.learn_d_ignore && model.uses_navigation() {
        v.push(model.navigation.d_ignore);
    }
    v
}

/// Inverse of [`flatten_params`].
pub fn set_params(model: &mut AbmModel, params: &[f64]) -> Result<()> {
    let expected = flatten_params(model).len();
    if params.len() != expected {
        return Err(Error::Dimension(format!("expected {expected} parameters, got {}", params.len())));
    }
    let mut o = 0;
    for net in &mut model.nets {
        let n = net.params().len();
        net.params_mut().copy_from_slice(&params[o..o + n]);
        o += n;
    }
    if o < params.len() {
        model.navigation.d_ignore = params[o];
    }
    Ok(())
}

/// Forward state of one target agent over a window range.
struct AgentPass {
    caches: Vec<MlpCache>,
    /// `[K][n][d*w]` mapped motion coefficients.
    motion: Vec<Vec<f64>>,
    /// `[K][n][p-1]` navigation signs and their `d_ignore` derivatives.
    signs: Vec<Vec<f64>>,
    dsigns: Vec<Vec<f64>>,
    /// `[K][n][d*w]`
    psi: Vec<Vec<f64>>,
    /// `[n][d]`
    prediction: Vec<f64>,
}

fn agent_pass(model: &AbmModel, design: &Design, i: usize, start: usize, n: usize) -> AgentPass {
    let lay = design.layout;
    let (d, w, b) = (lay.out_dim, lay.width(), lay.agents - 1);
    let cw = d * w;
    let nav_on = model.uses_navigation();
    let mut pass = AgentPass {
        caches: Vec::with_capacity(model.lags),
        motion: Vec::with_capacity(model.lags),
        signs: Vec::with_capacity(model.lags),
        dsigns: Vec::with_capacity(model.lags),
        psi: Vec::with_capacity(model.lags),
        prediction: vec![0.0; n * d],
    };
    for k in 1..=model.lags {
        let xs = design.lag_inputs(i, k, start, n);
        let cache = model.net(i, k).forward_batch(xs, n);
        let motion: Vec<f64> = cache.output.iter().map(|&r| model.motion_output.apply(r)).collect();
        let mut signs = vec![1.0; n * b];
        let mut dsigns = vec![0.0; n * b];
        if nav_on {
            let first = design.lags - k + start;
            for m in 0..n {
                let o = (i * design.rows + first + m) * b;
                for j in 0..b {
                    let (s, ds) = navigation_sign_with_grad(design.approach[o + j], design.distance[o + j], &model.navigation);
                    signs[m * b + j] = s;
                    dsigns[m * b + j] = ds;
                }
            }
        }
        let mut psi = motion.clone();
        for m in 0..n {
            let row = &mut psi[m * cw..(m + 1) * cw];
            for u in 0..d {
                for c in lay.self_width..w {
                    let blk = (c - lay.self_width) / lay.other_width;
                    row[u * w + c] *= signs[m * b + blk];
                }
            }
            let h = &xs[m * w..(m + 1) * w];
            for u in 0..d {
                pass.prediction[m * d + u] += row[u * w..(u + 1) * w].iter().zip(h).map(|(a, x)| a * x).sum::<f64>();
            }
        }
        pass.caches.push(cache);
        pass.motion.push(motion);
        pass.signs.push(signs);
        pass.dsigns.push(dsigns);
        pass.psi.push(psi);
    }
    pass
}

/// The penalized objective over a fixed design.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub design: &'a Design,
    pub cfg: TrainConfig,
    /// `[n][p]` theory-guided weights.
    pub weights: Vec<f64>,
    pub sigma: f64,
}

impl<'a> Objective<'a> {
    pub fn new(design: &'a Design, cfg: &TrainConfig) -> Self {
        let (weights, sigma) = tg_weights(design, cfg);
        Self { design, cfg: cfg.clone(), weights, sigma }
    }

    /// Loss over all windows.
    pub fn loss(&self, model: &AbmModel) -> LossBreakdown {
        self.evaluate(model, 0, self.design.samples(), false).0
    }

    /// Loss and gradients over all windows.
    pub fn loss_and_gradient(&self, model: &AbmModel) -> (LossBreakdown, Gradients) {
        let (l, g) = self.evaluate(model, 0, self.design.samples(), true);
        (l, g.expect("gradients requested"))
    }

    /// Loss (and optionally gradients) over windows `start..start + n`.
    pub fn evaluate(&self, model: &AbmModel, start: usize, n: usize, want_grad: bool) -> (LossBreakdown, Option<Gradients>) {
        let design = self.design;
        let cfg = &self.cfg;
        let lay = design.layout;
        let (p, d, w, b) = (lay.agents, lay.out_dim, lay.width(), lay.agents - 1);
        let cw = d * w;
        let (alpha, lambda, beta, gamma) = (cfg.alpha, cfg.lambda, cfg.beta, cfg.effective_gamma());
        let pred_scale = 1.0 / (n * p * d) as f64;
        let slice_scale = 1.0 / n as f64;
        let pair_scale = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
        let learn_d = want_grad && model.navigation.learn_d_ignore && model.uses_navigation();

        let (mut pred, mut sparse, mut tg, mut smooth) = (0.0, 0.0, 0.0, 0.0);
        let mut grads = want_grad.then(|| Gradients::zeros(model));
        for i in 0..p {
            let pass = agent_pass(model, design, i, start, n);
            let mut dpred = vec![0.0; n * d];
            for m in 0..n {
                let target = design.target(start + m, i);
                for u in 0..d {
                    let e = pass.prediction[m * d + u] - target[u];
                    pred += e * e;
                    dpred[m * d + u] = 2.0 * e * pred_scale;
                }
            }
            for k in 1..=model.lags {
                let psi = &pass.psi[k - 1];
                for m in 0..n {
                    let row = &psi[m * cw..(m + 1) * cw];
                    let wt = self.weights[(start + m) * p + i];
                    for u in 0..d {
                        for c in 0..w {
                            let v = row[u * w + c];
                            sparse += alpha * v.abs() + (1.0 - alpha) * v * v;
                            if c >= lay.self_width {
                                tg += wt * v * v;
                            }
                        }
                    }
                    if m + 1 < n {
                        let next = &psi[(m + 1) * cw..(m + 2) * cw];
                        smooth += next.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    }
                }
            }
            let Some(grads) = grads.as_mut() else { continue };
            for k in 1..=model.lags {
                let psi = &pass.psi[k - 1];
                let motion = &pass.motion[k - 1];
                let signs = &pass.signs[k - 1];
                let dsigns = &pass.dsigns[k - 1];
                let cache = &pass.caches[k - 1];
                let xs = design.lag_inputs(i, k, start, n);
                let mut draw = vec![0.0; n * cw];
                for m in 0..n {
                    let h = &xs[m * w..(m + 1) * w];
                    let wt = self.weights[(start + m) * p + i];
                    for u in 0..d {
                        let g_pred = dpred[m * d + u];
                        for c in 0..w {
                            let idx = m * cw + u * w + c;
                            let v = psi[idx];
                            let sgn = if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            let mut g = g_pred * h[c] + lambda * slice_scale * (alpha * sgn + 2.0 * (1.0 - alpha) * v);
                            if c >= lay.self_width {
                                g += gamma * slice_scale * 2.0 * wt * v;
                            }
                            if n > 1 {
                                let mut diff = 0.0;
                                if m > 0 {
                                    diff += v - psi[idx - cw];
                                }
                                if m + 1 < n {
                                    diff -= psi[idx + cw] - v;
                                }
                                g += beta * pair_scale * 2.0 * diff;
                            }
                            let (s, ds) = match lay.block_of_column(c) {
                                Some(blk) => (signs[m * b + blk], dsigns[m * b + blk]),
                                None => (1.0, 0.0),
                            };
                            if learn_d {
                                grads.d_ignore += g * motion[idx] * ds;
                            }
                            draw[idx] = g * s * model.motion_output.derivative(cache.output[idx]);
                        }
                    }
                }
                let net_idx = i * model.lags + (k - 1);
                model.net(i, k).backward_batch(xs, cache, &draw, n, &mut grads.nets[net_idx], false);
            }
        }
        let loss = LossBreakdown::new(pred * pred_scale, sparse * slice_scale, tg * slice_scale, smooth * pair_scale, cfg);
        (loss, grads)
    }

    /// Coefficients for every window.
    pub fn coefficients(&self, model: &AbmModel) -> CoefficientTensor {
        coefficients(model, self.design)
    }
}

/// Evaluate the generalized coefficients over all windows of a design.
pub fn coefficients(model: &AbmModel, design: &Design) -> CoefficientTensor {
    let n = design.samples();
    let mut out = CoefficientTensor::zeros(design.layout, model.lags, design.steps.clone());
    let cw = design.layout.coefficient_count();
    for i in 0..design.layout.agents {
        let pass = agent_pass(model, design, i, 0, n);
        for k in 1..=model.lags {
            for m in 0..n {
                out.slice_mut(m, i, k).copy_from_slice(&pass.psi[k - 1][m * cw..(m + 1) * cw]);
            }
        }
    }
    out
}

/// One-step predictions `[n][p][d]` over all windows.
pub fn predictions(model: &AbmModel, design: &Design) -> Vec<f64> {
    let n = design.samples();
    let (p, d) = (design.layout.agents, design.layout.out_dim);
    let mut out = vec![0.0; n * p * d];
    for i in 0..p {
        let pass = agent_pass(model, design, i, 0, n);
        for m in 0..n {
            out[(m * p + i) * d..(m * p + i + 1) * d].copy_from_slice(&pass.prediction[m * d..(m + 1) * d]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AbmModel,
    pub coefficients: CoefficientTensor,
    /// Loss per epoch, evaluated before that epoch's updates.
    pub history: Vec<LossBreakdown>,
    pub sigma: f64,
}

/// Build a fresh model for `series` seeded from `cfg.seed`.
pub fn init_model(system: &System, series: &TrajectorySeries, cfg: &TrainConfig) -> Result<AbmModel> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    AbmModel::new(
        system.clone(),
        cfg.mode,
        series.agents(),
        series.spatial(),
        cfg.lags_for(system),
        cfg.navigation,
        cfg.init,
        &mut rng,
    )
}

/// Train `model` on `series`.
pub fn train(mut model: AbmModel, series: &TrajectorySeries, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if series.agents() != model.layout.agents || series.spatial() != model.layout.out_dim {
        return Err(Error::Dimension("series does not match the model".into()));
    }
    let design = Design::new(series, &model.system, model.mode, model.lags)?;
    let objective = Objective::new(&design, cfg);
    let n = design.samples();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut adams: Vec<AdamState> =
        model.nets.iter().map(|net| AdamState::new(net.params().len(), cfg.learning_rate, cfg.decay)).collect();
    let learn_d = model.navigation.learn_d_ignore && model.uses_navigation();
    let mut adam_d = AdamState::new(1, cfg.learning_rate, cfg.decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = LossBreakdown::default();
        let mut start = 0;
        while start < n {
            let len = batch.min(n - start);
            let (loss, grads) = objective.evaluate(&model, start, len, true);
            if !loss.is_finite() {
                return Err(Error::Training { epoch, reason: format!("non-finite loss {loss:?}") });
            }
            let grads = grads.expect("gradients requested");
            for (idx, net) in model.nets.iter_mut().enumerate() {
                adams[idx]
                    .step(net.params_mut(), &grads.nets[idx], epoch)
                    .map_err(|e| Error::Training { epoch, reason: e.to_string() })?;
            }
            if learn_d {
                let mut v = [model.navigation.d_ignore];
                adam_d.step(&mut v, &[grads.d_ignore], epoch).map_err(|e| Error::Training { epoch, reason: e.to_string() })?;
                model.navigation.d_ignore = v[0];
            }
            let f = len as f64 / n as f64;
            epoch_loss.prediction += f * loss.prediction;
            epoch_loss.sparsity += f * loss.sparsity;
            epoch_loss.theory_guided += f * loss.theory_guided;
            epoch_loss.smoothing += f * loss.smoothing;
            epoch_loss.total += f * loss.total;
            start += len;
        }
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: {epoch_loss:?}");
        }
        history.push(epoch_loss);
    }
    let coefficients = objective.coefficients(&model);
    Ok(TrainOutcome { model, coefficients, history, sigma: objective.sigma })
}

/// Initialise and train in one call.
pub fn fit(system: &System, series: &TrajectorySeries, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = init_model(system, series, cfg)?;
    train(model, series, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abm::build_features;
    use crate::series::make_lag_windows;
    use crate::sim::boid::BoidWorld;
    use crate::sim::kuramoto::KuramotoSystem;

    fn boid(steps: usize, seed: u64) -> TrajectorySeries {
        BoidWorld::sample(4, &mut Rng::new(seed)).unwrap().simulate(steps).unwrap().0
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { init: ModelInit { hidden: 6, ..ModelInit::default() }, epochs: 20, ..TrainConfig::default() }
    }

    #[test]
    fn scalar_losses() {
        assert_eq!(loss_prediction(&[1.0], &[3.0]).unwrap(), 4.0);
        assert_eq!(loss_prediction(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_sparsity(&[&[2.0]], 0.5), 3.0);
        assert_eq!(loss_sparsity(&[&[0.0, 0.0]], 0.5), 0.0);
        assert_eq!(loss_smooth(&[&[1.0], &[3.0]]), 4.0);
        assert_eq!(loss_smooth(&[&[5.0, 1.0], &[5.0, 1.0]]), 0.0);
        assert_eq!(loss_tg(&[&[0.0, 0.0]], &[1e9]).unwrap(), 0.0);
        assert_eq!(loss_tg(&[&[1.0, 2.0], &[0.0, 0.0]], &[1.0, 1.0]).unwrap(), 2.5);
    }

    #[test]
    fn sparsity_monotone_in_scale() {
        let base = [0.3, -1.2, 0.05];
        let mut prev = -1.0;
        for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let v: Vec<f64> = base.iter().map(|x| x * s).collect();
            let l = loss_sparsity(&[&v], 0.5);
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn kernel_weights() {
        assert_eq!(tg_weight(0.0, 2.0, TgKernel::Decaying), 1.0);
        let mut prev = 2.0;
        for r in [0.1, 1.0, 10.0, 100.0, 1e4] {
            let w = tg_weight(r, 1.0, TgKernel::Decaying);
            assert!(w < prev);
            prev = w;
        }
        assert!(prev < 1e-30);
        assert!(tg_weight(1.0, 1.0, TgKernel::Growing) > 1.0);
        assert_eq!(tg_weight(f64::NAN, 1.0, TgKernel::Decaying), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { alpha: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { sigma: Some(0.0), ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn objective_matches_standalone_terms() {
        let s = boid(30, 3);
        let cfg = TrainConfig { lambda: 0.7, beta: 0.3, gamma: 2.0, sigma: Some(0.5), ..small_cfg() };
        let model = init_model(&System::Boid, &s, &cfg).unwrap();
        let design = Design::new(&s, &System::Boid, Mode::Full, model.lags).unwrap();
        let obj = Objective::new(&design, &cfg);
        let loss = obj.loss(&model);
        let coef = obj.coefficients(&model);
        let n = design.samples();
        let p = design.layout.agents;
        let pred = predictions(&model, &design);
        assert!((loss.prediction - loss_prediction(&pred, &design.targets).unwrap()).abs() < 1e-12);
        let mut slices = vec![Vec::new(); n];
        for (m, slice) in slices.iter_mut().enumerate() {
            for i in 0..p {
                for k in 1..=model.lags {
                    slice.extend_from_slice(coef.slice(m, i, k));
                }
            }
        }
        let refs: Vec<&[f64]> = slices.iter().map(|v| v.as_slice()).collect();
        assert!((loss.sparsity - loss_sparsity(&refs, 0.5)).abs() < 1e-10);
        assert!((loss.smoothing - loss_smooth(&refs)).abs() < 1e-10);
        // theory-guided: per agent others-only slices with that agent's weight
        let mut tg = 0.0;
        for i in 0..p {
            let mut others = vec![Vec::new(); n];
            for (m, slice) in others.iter_mut().enumerate() {
                for k in 1..=model.lags {
                    for j in (0..p).filter(|&j| j != i) {
                        slice.extend(coef.block(m, i, k, j));
                    }
                }
            }
            let refs: Vec<&[f64]> = others.iter().map(|v| v.as_slice()).collect();
            let w: Vec<f64> = (0..n).map(|m| obj.weights[m * p + i]).collect();
            tg += loss_tg(&refs, &w).unwrap();
        }
        assert!((loss.theory_guided - tg).abs() < 1e-10);
        let expect = loss.prediction + 0.7 * loss.sparsity + 2.0 * loss.theory_guided + 0.3 * loss.smoothing;
        assert!((loss.total - expect).abs() < 1e-12);
    }

    #[test]
    fn batched_path_matches_single_step_predict() {
        let s = boid(20, 8);
        let cfg = small_cfg();
        let model = init_model(&System::Boid, &s, &cfg).unwrap();
        let design = Design::new(&s, &System::Boid, Mode::Full, model.lags).unwrap();
        let pred = predictions(&model, &design);
        let windows =
            make_lag_windows(&s, model.lags, |s, t, i| build_features(s, &System::Boid, Mode::Full, t, i).unwrap().0.values).unwrap();
        let (p, d) = (4, 2);
        for (m, &t) in design.steps.iter().enumerate() {
            let sample = windows.iter().find(|w| w.step == t).unwrap();
            let navs: Vec<_> = (0..p).map(|i| (1..=model.lags).map(|k| design.nav_row(i, t - k)).collect()).collect();
            let (x, _) = model.predict(&sample.windows, &navs).unwrap();
            for v in 0..p * d {
                assert!((x[v] - pred[m * p * d + v]).abs() < 1e-12);
            }
        }
    }

    fn gradient_check(mode: Mode, learn_d: bool, seed: u64) {
        let s = boid(24, seed);
        let mut nav = Navigation { learn_d_ignore: learn_d, ..Navigation::default() };
        if learn_d {
            nav.visibility_gain = 0.5;
            nav.approach_gain = 0.8;
            nav.d_ignore = 0.3;
        }
        let cfg = TrainConfig { mode, lambda: 0.3, beta: 0.2, gamma: 1.5, navigation: nav, ..small_cfg() };
        let model = init_model(&System::Boid, &s, &cfg).unwrap();
        let design = Design::new(&s, &System::Boid, mode, model.lags).unwrap();
        let obj = Objective::new(&design, &cfg);
        let (_, g) = obj.loss_and_gradient(&model);
        let g = g.flatten(&model);
        let theta = flatten_params(&model);
        let mut rng = Rng::new(seed + 100);
        let h = 1e-5;
        for _ in 0..20 {
            let dir: Vec<f64> = (0..theta.len()).map(|_| rng.normal(0.0, 1.0)).collect();
            let analytic: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            let eval = |sign: f64| {
                let mut m = model.clone();
                let t: Vec<f64> = theta.iter().zip(&dir).map(|(t, v)| t + sign * h * v).collect();
                set_params(&mut m, &t).unwrap();
                obj.loss(&m).total
            };
            let numeric = (eval(1.0) - eval(-1.0)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-4, "{mode:?}: analytic {analytic} numeric {numeric}");
        }
    }

    #[test]
    fn gradients_full_mode() {
        gradient_check(Mode::Full, false, 1);
    }

    #[test]
    fn gradients_with_learned_ignore_distance() {
        gradient_check(Mode::Full, true, 2);
    }

    #[test]
    fn gradients_ablations() {
        gradient_check(Mode::NoNavigation, false, 3);
        gradient_check(Mode::Gvar, false, 4);
    }

    #[test]
    fn zero_penalties_are_exactly_zero() {
        let s = boid(30, 5);
        let cfg = TrainConfig { lambda: 0.0, beta: 0.0, gamma: 0.0, ..small_cfg() };
        let out = fit(&System::Boid, &s, &cfg).unwrap();
        for l in &out.history {
            assert_eq!(l.total, l.prediction);
        }
    }

    #[test]
    fn training_is_reproducible_and_decreases_loss() {
        let s = boid(40, 6);
        let cfg = TrainConfig { epochs: 60, ..small_cfg() };
        let a = fit(&System::Boid, &s, &cfg).unwrap();
        let b = fit(&System::Boid, &s, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert!(a.history.last().unwrap().total <= a.history[0].total);
    }

    #[test]
    fn minibatches_cover_all_windows() {
        let s = boid(30, 7);
        let cfg = TrainConfig { batch_size: Some(7), epochs: 3, ..small_cfg() };
        let out = fit(&System::Boid, &s, &cfg).unwrap();
        assert_eq!(out.history.len(), 3);
        assert_eq!(out.coefficients.len_t(), 30 - 3 - 1);
    }

    #[test]
    fn kuramoto_training_runs() {
        let sys = KuramotoSystem::sample(3, &mut Rng::new(4)).unwrap();
        let s = sys.simulate(30).unwrap();
        let system = System::Kuramoto { omega: sys.omega.clone() };
        let out = fit(&system, &s, &small_cfg()).unwrap();
        assert_eq!(out.coefficients.layout.width(), 4);
        assert_eq!(out.coefficients.lags, 5);
    }

    #[test]
    fn too_short_series_is_rejected() {
        let s = boid(4, 1);
        assert!(matches!(fit(&System::Boid, &s, &small_cfg()), Err(Error::Length { .. })));
    }
}
