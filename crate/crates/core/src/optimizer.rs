//! Regularized SGD in the hypothesis space with the averaging option.
//!
//! Step `t` uses `η_t = 2/(λ(γ+t))` and the update
//! `g_{t+1} = (1 - η_t λ) g_t - η_t ∂_ζ l(g_t(x_t), y_t) k(x_t, ·)`.
//! The averaged iterate `Σ_t α_t g_t` is maintained online through the
//! `β_t` recursion, so no iterate history is stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{Direction, FeatureMap, Hypothesis};
use crate::loss::LossSpec;

/// Ratios with an excess risk at or below this value are left empty.
pub const RATIO_GUARD: f64 = 1e-12;

/// One labelled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Sample { x, y }
    }
}

/// Source of training examples, consumed one per iteration.
pub trait SampleSource {
    fn next_sample(&mut self) -> Sample;
}

/// Replays a fixed sequence, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    samples: &'a [Sample],
    pos: usize,
}

impl<'a> Replay<'a> {
    pub fn new(samples: &'a [Sample]) -> Self {
        assert!(!samples.is_empty(), "replay of an empty sequence");
        Replay { samples, pos: 0 }
    }
}

impl SampleSource for Replay<'_> {
    fn next_sample(&mut self) -> Sample {
        let s = self.samples[self.pos % self.samples.len()].clone();
        self.pos += 1;
        s
    }
}

/// `η_t = 2 / (λ(γ + t))`.
pub fn learning_rate(lambda: f64, gamma: f64, t: usize) -> Result<f64> {
    if !(lambda > 0.0) || !(gamma > 0.0) || t == 0 {
        return Err(Error::domain(format!(
            "learning rate needs λ > 0, γ > 0, t ≥ 1 (got λ={lambda}, γ={gamma}, t={t})"
        )));
    }
    Ok(2.0 / (lambda * (gamma + t as f64)))
}

/// `α_t = 2(γ + t - 1) / ((2γ + T)(T + 1))` for `1 ≤ t ≤ T + 1`.
pub fn averaging_weight(gamma: f64, t: usize, iterations: usize) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("γ must be positive, got {gamma}")));
    }
    if t == 0 || t > iterations + 1 {
        return Err(Error::domain(format!("t = {t} outside 1..={}", iterations + 1)));
    }
    let big_t = iterations as f64;
    Ok(2.0 * (gamma + t as f64 - 1.0) / ((2.0 * gamma + big_t) * (big_t + 1.0)))
}

/// `β_t = 2(γ + t) / ((t + 1)(2γ + t))`.
pub fn averaging_beta(gamma: f64, t: usize) -> Result<f64> {
    if !(gamma > 0.0) || t == 0 {
        return Err(Error::domain(format!("β needs γ > 0 and t ≥ 1 (got γ={gamma}, t={t})")));
    }
    let t = t as f64;
    Ok(2.0 * (gamma + t) / ((t + 1.0) * (2.0 * gamma + t)))
}

/// Which learning-rate condition on `η_1` a run must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateRegime {
    /// `η_1 ≤ min{1/(L+λ), 1/(2λ)}`.
    Vanilla,
    /// `η_1 ≤ min{1/L, 1/(2λ)}`; also the condition of the coupled-run bounds.
    Averaged,
    /// Conditions are checked but violations only produce a warning.
    Unchecked,
}

impl RateRegime {
    /// Largest admissible `η_1`.
    pub fn eta_cap(self, smoothness: f64, lambda: f64) -> f64 {
        match self {
            RateRegime::Vanilla => (1.0 / (smoothness + lambda)).min(0.5 / lambda),
            RateRegime::Averaged | RateRegime::Unchecked => (1.0 / smoothness).min(0.5 / lambda),
        }
    }
}

/// Smallest `γ ≥ 1` (rounded up to an integer) with `η_1` inside the regime's cap.
pub fn default_gamma(regime: RateRegime, smoothness: f64, lambda: f64) -> f64 {
    let cap = regime.eta_cap(smoothness, lambda);
    // η_1 = 2/(λ(γ+1)) ≤ cap  ⇔  γ ≥ 2/(λ cap) - 1
    let mut gamma = (2.0 / (lambda * cap) - 1.0).ceil().max(1.0);
    while 2.0 / (lambda * (gamma + 1.0)) > cap {
        gamma += 1.0;
    }
    while gamma > 1.0 && 2.0 / (lambda * gamma) <= cap {
        gamma -= 1.0;
    }
    gamma
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub averaging: bool,
    pub projection_radius: Option<f64>,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub regime: RateRegime,
    /// Also trace the last iterate when averaging.
    pub trace_last: bool,
    /// Record `‖g_{t+1}‖` after every step.
    pub record_norms: bool,
}

impl TrainConfig {
    pub fn new(lambda: f64, gamma: f64, iterations: usize) -> Self {
        TrainConfig {
            lambda,
            gamma,
            iterations,
            averaging: false,
            projection_radius: None,
            seed: 0,
            checkpoint_every: iterations.max(1),
            regime: RateRegime::Vanilla,
            trace_last: false,
            record_norms: false,
        }
    }

    pub fn averaged(mut self) -> Self {
        self.averaging = true;
        if self.regime == RateRegime::Vanilla {
            self.regime = RateRegime::Averaged;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_checkpoints(mut self, every: usize) -> Self {
        self.checkpoint_every = every;
        self
    }

    pub fn eta1(&self) -> f64 {
        2.0 / (self.lambda * (self.gamma + 1.0))
    }

    /// Check the configuration against the loss and feature map and return
    /// the constants the run relies on.
    pub fn validate(&self, loss: &LossSpec, map: &FeatureMap) -> Result<RunConstants> {
        self.validate_with_bound(loss, map.kernel_bound())
    }

    pub fn validate_with_bound(&self, loss: &LossSpec, kernel_bound: f64) -> Result<RunConstants> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("λ must be positive, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("γ must be positive, got {}", self.gamma)));
        }
        if self.iterations == 0 {
            return Err(Error::config("iteration count T must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint interval must be at least 1"));
        }
        let radius = self.projection_radius.or(loss.projection_radius);
        if let Some(b) = radius {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config(format!("projection radius must be positive, got {b}")));
            }
        }
        let loss = LossSpec {
            kind: loss.kind,
            projection_radius: radius,
        };
        let grad_bound = loss.grad_bound(kernel_bound).finite().ok_or_else(|| {
            Error::config(format!(
                "{} loss has an unbounded gradient; set a projection radius",
                loss.name()
            ))
        })?;
        let smoothness = loss
            .smoothness(kernel_bound)
            .ok_or_else(|| Error::config("smoothness is unbounded without a projection radius"))?;
        let eta1 = self.eta1();
        let cap = self.regime.eta_cap(smoothness, self.lambda);
        if eta1 > cap * (1.0 + 1e-12) {
            let msg = format!(
                "η_1 = {eta1} exceeds {cap} for the {:?} regime (L = {smoothness}, λ = {})",
                self.regime, self.lambda
            );
            match self.regime {
                RateRegime::Unchecked => log::warn!("{msg}"),
                _ => return Err(Error::Config(msg)),
            }
        }
        Ok(RunConstants {
            grad_bound,
            smoothness,
            kernel_bound,
            eta1,
            projection_radius: radius,
        })
    }
}

/// Constants resolved by [`TrainConfig::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConstants {
    pub grad_bound: f64,
    pub smoothness: f64,
    pub kernel_bound: f64,
    pub eta1: f64,
    pub projection_radius: Option<f64>,
}

impl RunConstants {
    /// Radius `(2η_1 + 1/λ)MR` of the ball that contains every iterate.
    pub fn ball_radius(&self, lambda: f64) -> f64 {
        (2.0 * self.eta1 + 1.0 / lambda) * self.grad_bound * self.kernel_bound
    }
}

/// Per-checkpoint metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_err: f64,
    pub test_err: f64,
    pub excess_err: f64,
    pub excess_risk: f64,
    pub ratio: Option<f64>,
    pub norm: f64,
}

impl TraceRow {
    pub fn guarded_ratio(excess_err: f64, excess_risk: f64) -> Option<f64> {
        (excess_risk > RATIO_GUARD).then(|| excess_err / excess_risk)
    }
}

/// Computes trace rows for hypotheses at checkpoints.
pub trait Evaluator {
    fn evaluate(&self, iter: usize, g: &Hypothesis) -> Result<TraceRow>;
}

/// What a single update did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub score: f64,
    pub grad: f64,
    pub norm: f64,
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

/// `g ← (1 - ηλ) g - η ∂_ζ l(g(x), y) k(x, ·)`, followed by radial projection
/// onto `‖g‖ ≤ B` when a radius is given. `iter` is only used in error reports.
#[allow(clippy::too_many_arguments)]
pub fn sgd_update(
    g: &mut Hypothesis,
    sample: &Sample,
    eta: f64,
    lambda: f64,
    loss: &LossSpec,
    map: &FeatureMap,
    projection_radius: Option<f64>,
    iter: usize,
) -> Result<StepInfo> {
    check_label(sample.y)?;
    let shrink = 1.0 - eta * lambda;
    let (score, grad) = match g {
        Hypothesis::Weights(w) => {
            let phi = map.featurize(&sample.x)?;
            if w.len() != phi.len() {
                return Err(Error::DimensionMismatch {
                    expected: phi.len(),
                    got: w.len(),
                });
            }
            let score: f64 = w.iter().zip(&phi).map(|(a, b)| a * b).sum();
            if !score.is_finite() {
                return Err(Error::Divergence {
                    iter,
                    what: format!("score {score}"),
                });
            }
            let grad = loss.pointwise_grad(score, sample.y);
            g.axpy_update(shrink, Direction::Features(&phi), -eta * grad)?;
            (score, grad)
        }
        Hypothesis::Expansion(_) => {
            let score = g.evaluate(map, &sample.x)?;
            if !score.is_finite() {
                return Err(Error::Divergence {
                    iter,
                    what: format!("score {score}"),
                });
            }
            let grad = loss.pointwise_grad(score, sample.y);
            g.axpy_with_cross(shrink, Direction::Center(&sample.x), -eta * grad, Some(score))?;
            (score, grad)
        }
    };
    let mut norm = g.hilbert_norm();
    if !norm.is_finite() {
        return Err(Error::Divergence {
            iter,
            what: format!("norm {norm}"),
        });
    }
    if let Some(b) = projection_radius {
        if norm > b {
            g.scale(b / norm);
            norm = b;
        }
    }
    Ok(StepInfo { score, grad, norm })
}

/// One step of the configured schedule at iteration `t ≥ 1`.
pub fn sgd_step(
    g: &mut Hypothesis,
    sample: &Sample,
    t: usize,
    cfg: &TrainConfig,
    loss: &LossSpec,
    map: &FeatureMap,
) -> Result<StepInfo> {
    let eta = learning_rate(cfg.lambda, cfg.gamma, t)?;
    let radius = cfg.projection_radius.or(loss.projection_radius);
    sgd_update(g, sample, eta, cfg.lambda, loss, map, radius, t)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// `g_{T+1}`.
    pub last: Hypothesis,
    /// `Σ_{t=1}^{T+1} α_t g_t`, when averaging.
    pub averaged: Option<Hypothesis>,
    /// Rows for the returned hypothesis (the average when averaging).
    pub trace: Vec<TraceRow>,
    /// Rows for the last iterate when `trace_last` is set with averaging.
    pub last_trace: Vec<TraceRow>,
    /// `‖g_{t+1}‖` for every step when `record_norms` is set.
    pub iterate_norms: Vec<f64>,
    pub constants: RunConstants,
}

impl TrainOutput {
    /// The hypothesis the method returns.
    pub fn output(&self) -> &Hypothesis {
        self.averaged.as_ref().unwrap_or(&self.last)
    }
}

/// Train from `g_1 = 0` in weights mode.
pub fn train(
    cfg: &TrainConfig,
    loss: &LossSpec,
    map: &FeatureMap,
    stream: &mut dyn SampleSource,
    evaluator: Option<&dyn Evaluator>,
) -> Result<TrainOutput> {
    train_from(
        cfg,
        loss,
        map,
        Hypothesis::zero_weights(map.output_dim()),
        stream,
        evaluator,
    )
}

/// Train from an arbitrary initial hypothesis (either representation).
pub fn train_from(
    cfg: &TrainConfig,
    loss: &LossSpec,
    map: &FeatureMap,
    initial: Hypothesis,
    stream: &mut dyn SampleSource,
    evaluator: Option<&dyn Evaluator>,
) -> Result<TrainOutput> {
    let kernel_bound = match &initial {
        Hypothesis::Weights(_) => map.kernel_bound(),
        Hypothesis::Expansion(e) => e.kernel().bound(),
    };
    let constants = cfg.validate_with_bound(loss, kernel_bound)?;
    let ball = constants.ball_radius(cfg.lambda);
    let init_norm = initial.hilbert_norm();
    if init_norm > ball {
        let msg = format!("‖g_1‖ = {init_norm} exceeds (2η_1 + 1/λ)MR = {ball}");
        match cfg.regime {
            RateRegime::Unchecked => log::warn!("{msg}"),
            _ => return Err(Error::Config(msg)),
        }
    }

    let mut g = initial;
    let mut avg = cfg.averaging.then(|| g.clone());
    let mut trace = Vec::new();
    let mut last_trace = Vec::new();
    let mut iterate_norms = Vec::with_capacity(if cfg.record_norms { cfg.iterations } else { 0 });

    for t in 1..=cfg.iterations {
        let sample = stream.next_sample();
        let info = sgd_step(&mut g, &sample, t, cfg, loss, map)?;
        if cfg.record_norms {
            iterate_norms.push(info.norm);
        }
        if let Some(a) = avg.as_mut() {
            a.blend(&g, averaging_beta(cfg.gamma, t)?)?;
        }
        if let Some(ev) = evaluator {
            if t % cfg.checkpoint_every == 0 || t == cfg.iterations {
                let returned = avg.as_ref().unwrap_or(&g);
                trace.push(ev.evaluate(t, returned)?);
                if cfg.trace_last && avg.is_some() {
                    last_trace.push(ev.evaluate(t, &g)?);
                }
            }
        }
    }

    Ok(TrainOutput {
        last: g,
        averaged: avg,
        trace,
        last_trace,
        iterate_norms,
        constants,
    })
}

/// How the sample at the replaced index is chosen in a coupled run.
#[derive(Debug, Clone, PartialEq)]
pub enum Replacement {
    /// Use this independently drawn example.
    Redraw(Sample),
    /// Reuse the original example; both chains then coincide.
    Identical,
}

/// Deviations between two SGD chains that differ only at one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTrace {
    pub replace_index: usize,
    /// `‖g_{s+1} - g'_{s+1}‖` for `s = t..=T`.
    pub deviations: Vec<f64>,
    /// `6MRη_t`.
    pub initial_bound: f64,
    /// `6MRη_t ∏_{r=t+1}^{s} (1 - η_r λ)` for `s = t..=T`.
    pub product_bounds: Vec<f64>,
    /// `12MR / (λ(γ + T))`.
    pub final_bound: f64,
}

impl StabilityTrace {
    pub fn final_deviation(&self) -> f64 {
        *self.deviations.last().expect("non-empty trace")
    }
}

/// Run two weights-mode chains from `g_1 = 0` over `samples[..T]`, the second
/// with the example at `replace_index` (1-based) swapped out.
pub fn stability_coupled_run(
    cfg: &TrainConfig,
    loss: &LossSpec,
    map: &FeatureMap,
    samples: &[Sample],
    replace_index: usize,
    replacement: &Replacement,
) -> Result<StabilityTrace> {
    let mut check = cfg.clone();
    if check.regime != RateRegime::Unchecked {
        check.regime = RateRegime::Averaged;
    }
    let constants = check.validate(loss, map)?;
    let big_t = cfg.iterations;
    if samples.len() < big_t {
        return Err(Error::config(format!("need {big_t} samples, got {}", samples.len())));
    }
    if replace_index == 0 || replace_index > big_t {
        return Err(Error::config(format!(
            "replace index {replace_index} outside 1..={big_t}"
        )));
    }
    let swapped = match replacement {
        Replacement::Redraw(s) => s.clone(),
        Replacement::Identical => samples[replace_index - 1].clone(),
    };

    let mr = constants.grad_bound * constants.kernel_bound;
    let eta_t = learning_rate(cfg.lambda, cfg.gamma, replace_index)?;
    let initial_bound = 6.0 * mr * eta_t;
    let final_bound = 12.0 * mr / (cfg.lambda * (cfg.gamma + big_t as f64));

    let mut a = Hypothesis::zero_weights(map.output_dim());
    let mut b = a.clone();
    let mut deviations = Vec::with_capacity(big_t - replace_index + 1);
    let mut product_bounds = Vec::with_capacity(big_t - replace_index + 1);
    let mut product = initial_bound;
    for (i, sample) in samples[..big_t].iter().enumerate() {
        let t = i + 1;
        sgd_step(&mut a, sample, t, cfg, loss, map)?;
        if t == replace_index {
            sgd_step(&mut b, &swapped, t, cfg, loss, map)?;
        } else {
            sgd_step(&mut b, sample, t, cfg, loss, map)?;
        }
        if t >= replace_index {
            if t > replace_index {
                product *= 1.0 - learning_rate(cfg.lambda, cfg.gamma, t)? * cfg.lambda;
            }
            deviations.push(a.distance(&b)?);
            product_bounds.push(product);
        }
    }
    Ok(StabilityTrace {
        replace_index,
        deviations,
        initial_bound,
        product_bounds,
        final_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::Kernel;
    use crate::loss::LossKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn linear_map() -> FeatureMap {
        FeatureMap::linear_with_bias(&[(-0.9, 2.9), (-1.0, 1.0)]).unwrap()
    }

    fn random_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let right = rng.random::<bool>();
                let x0 = if right {
                    rng.random_range(1.1..2.9)
                } else {
                    rng.random_range(-0.9..0.9)
                };
                let p = if right { 0.9 } else { 0.1 };
                let y = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
                Sample::new(vec![x0, rng.random_range(-1.0..1.0)], y)
            })
            .collect()
    }

    #[test]
    fn learning_rate_examples() {
        assert!((learning_rate(0.01, 99.0, 1).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(learning_rate(1.0, 1.0, 1).unwrap(), 1.0);
        let mut prev = f64::INFINITY;
        for t in 1..100 {
            let eta = learning_rate(0.3, 2.5, t).unwrap();
            assert!(eta < prev);
            prev = eta;
        }
        assert!(learning_rate(0.0, 1.0, 1).is_err());
        assert!(learning_rate(1.0, -1.0, 1).is_err());
        assert!(learning_rate(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn averaging_weight_examples() {
        assert!((averaging_weight(1.0, 1, 3).unwrap() - 0.1).abs() < 1e-15);
        assert!((averaging_weight(1.0, 4, 3).unwrap() - 0.4).abs() < 1e-15);
        assert!(averaging_weight(1.0, 0, 3).is_err());
        assert!(averaging_weight(1.0, 5, 3).is_err());
        for (gamma, big_t) in [(1.0, 1), (3.5, 10), (100.0, 999)] {
            let s: f64 = (1..=big_t + 1)
                .map(|t| averaging_weight(gamma, t, big_t).unwrap())
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_beta_examples() {
        assert!((averaging_beta(1.0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        for t in [1usize, 5, 40] {
            let b = averaging_beta(1e12, t).unwrap();
            assert!((b - 1.0 / (t as f64 + 1.0)).abs() < 1e-9);
        }
        assert!(averaging_beta(0.0, 1).is_err());
        assert!(averaging_beta(1.0, 0).is_err());
    }

    #[test]
    fn beta_recursion_equals_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for big_t in [1usize, 5, 50] {
            let gamma: f64 = rng.random_range(0.5..20.0);
            let iterates: Vec<Vec<f64>> = (0..=big_t)
                .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let mut avg = iterates[0].clone();
            for t in 1..=big_t {
                let beta = averaging_beta(gamma, t).unwrap();
                for (a, g) in avg.iter_mut().zip(&iterates[t]) {
                    *a = (1.0 - beta) * *a + beta * g;
                }
            }
            for k in 0..4 {
                let direct: f64 = (1..=big_t + 1)
                    .map(|t| averaging_weight(gamma, t, big_t).unwrap() * iterates[t - 1][k])
                    .sum();
                assert!((avg[k] - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sgd_update_from_zero() {
        let map = FeatureMap::linear_with_bias(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let mut g = Hypothesis::zero_weights(3);
        let s = Sample::new(vec![1.0, 0.0], 1.0);
        sgd_update(&mut g, &s, 0.1, 0.0, &LossSpec::logistic(), &map, None, 1).unwrap();
        let w = g.weights().unwrap();
        assert!((w[0] - 0.05).abs() < 1e-15 && w[1] == 0.0 && (w[2] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_sample_is_pure_shrinkage() {
        let map = linear_map();
        let loss = LossSpec::new(LossKind::SmoothedHinge);
        let mut g = Hypothesis::Weights(vec![2.0, 0.0, 0.0]);
        // margin y g(x) = 4 ≥ 1: φ' = 0
        let s = Sample::new(vec![2.0, 0.5], 1.0);
        let cfg = TrainConfig::new(0.1, 50.0, 10);
        let eta = learning_rate(0.1, 50.0, 3).unwrap();
        sgd_step(&mut g, &s, 3, &cfg, &loss, &map).unwrap();
        assert_eq!(g.weights().unwrap(), &[2.0 * (1.0 - eta * 0.1), 0.0, 0.0]);
    }

    #[test]
    fn invalid_label_and_divergence() {
        let map = linear_map();
        let mut g = Hypothesis::zero_weights(3);
        let cfg = TrainConfig::new(0.1, 50.0, 10);
        let err = sgd_step(
            &mut g,
            &Sample::new(vec![0.0, 0.0], 0.0),
            1,
            &cfg,
            &LossSpec::logistic(),
            &map,
        );
        assert!(matches!(err, Err(Error::InvalidLabel(_))));
        let mut bad = Hypothesis::Weights(vec![f64::NAN, 0.0, 0.0]);
        let err = sgd_step(
            &mut bad,
            &Sample::new(vec![1.0, 0.0], 1.0),
            7,
            &cfg,
            &LossSpec::logistic(),
            &map,
        );
        assert!(matches!(err, Err(Error::Divergence { iter: 7, .. })));
    }

    #[test]
    fn exponential_without_projection_is_rejected_and_projection_holds() {
        let map = linear_map();
        let loss = LossSpec::new(LossKind::Exponential);
        let cfg = TrainConfig::new(0.5, 1000.0, 100);
        let samples = random_samples(100, 3);
        assert!(matches!(
            train(&cfg, &loss, &map, &mut Replay::new(&samples), None),
            Err(Error::Config(_))
        ));
        let projected = loss.with_projection(0.5).unwrap();
        let mut cfg = cfg;
        cfg.gamma = default_gamma(
            RateRegime::Vanilla,
            projected.smoothness(map.kernel_bound()).unwrap(),
            0.5,
        );
        cfg.record_norms = true;
        let out = train(&cfg, &projected, &map, &mut Replay::new(&samples), None).unwrap();
        assert!(out.iterate_norms.iter().all(|&n| n <= 0.5 + 1e-12));
    }

    #[test]
    fn default_gamma_satisfies_caps() {
        for lambda in [1e-4, 1e-2, 0.1, 1.0, 10.0] {
            for l in [0.25, 2.6, 10.0] {
                for regime in [RateRegime::Vanilla, RateRegime::Averaged] {
                    let gamma = default_gamma(regime, l, lambda);
                    assert!(gamma >= 1.0);
                    let eta1 = 2.0 / (lambda * (gamma + 1.0));
                    assert!(eta1 <= regime.eta_cap(l, lambda));
                    if gamma > 1.0 {
                        assert!(2.0 / (lambda * gamma) > regime.eta_cap(l, lambda));
                    }
                }
            }
        }
    }

    #[test]
    fn config_errors() {
        let map = linear_map();
        let loss = LossSpec::logistic();
        assert!(TrainConfig::new(0.1, 100.0, 0).validate(&loss, &map).is_err());
        assert!(TrainConfig::new(0.0, 100.0, 5).validate(&loss, &map).is_err());
        // γ = 1 with λ = 0.1 gives η_1 = 10, far above 1/(L + λ)
        assert!(TrainConfig::new(0.1, 1.0, 5).validate(&loss, &map).is_err());
        let mut warn = TrainConfig::new(0.1, 1.0, 5);
        warn.regime = RateRegime::Unchecked;
        assert!(warn.validate(&loss, &map).is_ok());
    }

    #[test]
    fn averaged_output_matches_weighted_sum_of_iterates() {
        let map = linear_map();
        let loss = LossSpec::logistic();
        let samples = random_samples(5, 4);
        let lambda = 1.0;
        let gamma = default_gamma(
            RateRegime::Averaged,
            loss.smoothness(map.kernel_bound()).unwrap(),
            lambda,
        );
        let cfg = TrainConfig::new(lambda, gamma, 5).averaged();

        let mut g = Hypothesis::zero_weights(3);
        let mut iterates = vec![g.weights().unwrap().to_vec()];
        for (i, s) in samples.iter().enumerate() {
            sgd_step(&mut g, s, i + 1, &cfg, &loss, &map).unwrap();
            iterates.push(g.weights().unwrap().to_vec());
        }
        let out = train(&cfg, &loss, &map, &mut Replay::new(&samples), None).unwrap();
        let avg = out.averaged.as_ref().unwrap().weights().unwrap();
        for k in 0..3 {
            let direct: f64 = (1..=6)
                .map(|t| averaging_weight(gamma, t, 5).unwrap() * iterates[t - 1][k])
                .sum();
            assert!((avg[k] - direct).abs() < 1e-10);
        }
        assert_eq!(out.last.weights().unwrap(), &iterates[5][..]);
    }

    #[test]
    fn train_is_deterministic() {
        let map = linear_map();
        let loss = LossSpec::logistic();
        let samples = random_samples(300, 5);
        let gamma = default_gamma(RateRegime::Averaged, loss.smoothness(map.kernel_bound()).unwrap(), 0.01);
        let cfg = TrainConfig::new(0.01, gamma, 300).averaged();
        let a = train(&cfg, &loss, &map, &mut Replay::new(&samples), None).unwrap();
        let b = train(&cfg, &loss, &map, &mut Replay::new(&samples), None).unwrap();
        assert_eq!(a.output().weights(), b.output().weights());
    }

    #[test]
    fn weights_and_expansion_trajectories_agree() {
        let map = Arc::new(FeatureMap::random_fourier(2, 64, 0.8, 17).unwrap());
        let loss = LossSpec::logistic();
        let samples = random_samples(200, 6);
        let lambda = 0.1;
        let gamma = default_gamma(
            RateRegime::Averaged,
            loss.smoothness(map.kernel_bound()).unwrap(),
            lambda,
        );
        let cfg = TrainConfig::new(lambda, gamma, 200).averaged();
        let weights = train(&cfg, &loss, &map, &mut Replay::new(&samples), None).unwrap();
        let kernel = Kernel::Induced(map.clone());
        let expansion = train_from(
            &cfg,
            &loss,
            &map,
            Hypothesis::zero_expansion(kernel),
            &mut Replay::new(&samples),
            None,
        )
        .unwrap();
        let probes = random_samples(100, 7);
        for p in &probes {
            for (a, b) in [(&weights.last, &expansion.last), (weights.output(), expansion.output())] {
                let va = a.evaluate(&map, &p.x).unwrap();
                let vb = b.evaluate(&map, &p.x).unwrap();
                assert!((va - vb).abs() < 1e-9, "{va} vs {vb}");
            }
        }
        assert!((weights.last.hilbert_norm() - expansion.last.hilbert_norm()).abs() < 1e-9);
    }

    #[test]
    fn coupled_run_with_identical_sample_has_zero_deviation() {
        let map = linear_map();
        let loss = LossSpec::logistic();
        let samples = random_samples(200, 8);
        let gamma = default_gamma(RateRegime::Averaged, loss.smoothness(map.kernel_bound()).unwrap(), 0.01);
        let cfg = TrainConfig::new(0.01, gamma, 200);
        let tr = stability_coupled_run(&cfg, &loss, &map, &samples, 17, &Replacement::Identical).unwrap();
        assert_eq!(tr.deviations.len(), 184);
        assert!(tr.deviations.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn coupled_run_contracts() {
        let map = linear_map();
        let loss = LossSpec::logistic();
        let samples = random_samples(500, 9);
        let gamma = default_gamma(RateRegime::Averaged, loss.smoothness(map.kernel_bound()).unwrap(), 0.01);
        let cfg = TrainConfig::new(0.01, gamma, 500);
        let other = Sample::new(vec![-0.5, 0.9], -samples[99].y);
        let tr = stability_coupled_run(&cfg, &loss, &map, &samples, 100, &Replacement::Redraw(other)).unwrap();
        assert!(tr.deviations[0] > 0.0);
        assert!(tr.deviations[0] <= tr.initial_bound);
        for w in tr.deviations.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for (d, b) in tr.deviations.iter().zip(&tr.product_bounds) {
            assert!(*d <= b + 1e-12);
        }
        assert!(tr.final_deviation() <= tr.final_bound + 1e-9);
    }
}
