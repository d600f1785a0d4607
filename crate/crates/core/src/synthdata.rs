//! Two-rectangle low-noise distribution.
//!
//! The support is `[-1+r, 1-r] × [-1, 1]` (left) and `[1+r, 3-r] × [-1, 1]`
//! (right). Inside each box `x` is uniform and `P(y = +1 | x)` is constant:
//! `0.5 - δ` on the left and `0.5 + δ` on the right. The Bayes boundary is
//! the line `x₁ = 1`, and every population quantity reduces to integrals
//! over the two boxes, which are evaluated by a 64 × 64 Gauss–Legendre rule
//! (risks) or exactly (classification error of linear scores).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{dot, FeatureMap, Hypothesis};
use crate::loss::LossSpec;
use crate::optimizer::{Evaluator, Sample, SampleSource, TraceRow};
use crate::quadrature::{GaussLegendre, Rect, TensorRule};
use crate::rng::{stream_rng, Stream};

pub const QUADRATURE_ORDER: usize = 64;

/// Absolute accuracy targeted by the classification error of non-linear scores.
pub const NONLINEAR_ERROR_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthDistribution {
    pub delta: f64,
    pub margin_r: f64,
    /// Probabilities of the (left, right) boxes.
    pub region_weights: [f64; 2],
}

impl SynthDistribution {
    pub fn new(delta: f64) -> Result<Self> {
        Self::with_geometry(delta, 0.1, [0.5, 0.5])
    }

    pub fn with_geometry(delta: f64, margin_r: f64, region_weights: [f64; 2]) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::domain(format!("δ must lie in (0, 1/2), got {delta}")));
        }
        if !(0.0..1.0).contains(&margin_r) {
            return Err(Error::domain(format!("margin r must lie in [0, 1), got {margin_r}")));
        }
        let [a, b] = region_weights;
        if !(a >= 0.0 && b >= 0.0 && ((a + b) - 1.0).abs() < 1e-12) {
            return Err(Error::domain(format!(
                "region weights {region_weights:?} must be a probability pair"
            )));
        }
        Ok(SynthDistribution {
            delta,
            margin_r,
            region_weights,
        })
    }

    pub fn left_box(&self) -> Rect {
        Rect::new(-1.0 + self.margin_r, 1.0 - self.margin_r, -1.0, 1.0)
    }

    pub fn right_box(&self) -> Rect {
        Rect::new(1.0 + self.margin_r, 3.0 - self.margin_r, -1.0, 1.0)
    }

    /// `(box, weight, P(y = +1 | x in box))` for the left and right boxes.
    pub fn regions(&self) -> [(Rect, f64, f64); 2] {
        [
            (self.left_box(), self.region_weights[0], 0.5 - self.delta),
            (self.right_box(), self.region_weights[1], 0.5 + self.delta),
        ]
    }

    /// Coordinate ranges of the bounding box of the support.
    pub fn support_ranges(&self) -> [(f64, f64); 2] {
        [(-1.0 + self.margin_r, 3.0 - self.margin_r), (-1.0, 1.0)]
    }

    /// Linear-with-bias map whose kernel bound covers the support.
    pub fn linear_map(&self) -> FeatureMap {
        FeatureMap::linear_with_bias(&self.support_ranges()).expect("valid support")
    }

    /// `P(y = +1 | x)`, or `None` outside the support.
    pub fn conditional_prob(&self, x: &[f64]) -> Option<f64> {
        self.regions()
            .into_iter()
            .find(|(rect, _, _)| rect.contains(x))
            .map(|(_, _, rho)| rho)
    }

    pub fn bayes_error(&self) -> f64 {
        0.5 - self.delta
    }

    /// `L(g_*) = Σ_b w_b l*(ρ_b)`, the smallest surrogate risk of any function.
    pub fn bayes_risk(&self, loss: &LossSpec) -> Result<f64> {
        let mut total = 0.0;
        for (_, w, rho) in self.regions() {
            total += w * loss.l_star(rho)?;
        }
        Ok(total)
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Sample {
        let regions = self.regions();
        let (rect, _, rho) = if rng.random::<f64>() < self.region_weights[0] {
            regions[0]
        } else {
            regions[1]
        };
        let x0 = rect.x0 + (rect.x1 - rect.x0) * rng.random::<f64>();
        let x1 = rect.y0 + (rect.y1 - rect.y0) * rng.random::<f64>();
        let y = if rng.random::<f64>() < rho { 1.0 } else { -1.0 };
        Sample::new(vec![x0, x1], y)
    }

    pub fn sample_from(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// `n` points from the stream dedicated to stand-alone datasets.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Sample> {
        self.sample_stream(n, seed, Stream::Generate)
    }

    pub fn sample_stream(&self, n: usize, seed: u64, stream: Stream) -> Vec<Sample> {
        self.sample_from(n, &mut stream_rng(seed, stream))
    }

    pub fn quadrature(&self) -> RiskQuadrature {
        RiskQuadrature::new(self)
    }

    /// `L(g) + (λ/2)‖g‖²` by quadrature.
    pub fn expected_risk(&self, g: &Hypothesis, map: &FeatureMap, loss: &LossSpec, lambda: f64) -> Result<f64> {
        self.quadrature().risk(g, map, loss, lambda)
    }

    /// Expected 0-1 error, with score 0 counted as `+1`.
    ///
    /// Exact for weights over a linear map; otherwise accurate to about
    /// [`NONLINEAR_ERROR_TOL`].
    pub fn expected_classification_error(&self, g: &Hypothesis, map: &FeatureMap) -> Result<f64> {
        if let (Hypothesis::Weights(w), true) = (g, map.is_linear()) {
            return self.linear_error(w);
        }
        let rule = GaussLegendre::new(QUADRATURE_ORDER);
        let mut total = 0.0;
        for (rect, weight, rho) in self.regions() {
            let (half, mid) = (0.5 * (rect.y1 - rect.y0), 0.5 * (rect.y0 + rect.y1));
            let mut frac = 0.0;
            for (node, w) in rule.nodes.iter().zip(&rule.weights) {
                let x2 = mid + half * node;
                frac += 0.5 * w * positive_fraction(rect.x0, rect.x1, |x1| g.evaluate(map, &[x1, x2]))?;
            }
            total += weight * (rho * (1.0 - frac) + (1.0 - rho) * frac);
        }
        Ok(total)
    }

    /// Exact error of the score `w₀x₁ + w₁x₂ + w₂`.
    pub fn linear_error(&self, w: &[f64]) -> Result<f64> {
        if w.len() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite weights"));
        }
        let mut total = 0.0;
        for (rect, weight, rho) in self.regions() {
            let frac = halfplane_fraction(&rect, w[0], w[1], w[2]);
            total += weight * (rho * (1.0 - frac) + (1.0 - rho) * frac);
        }
        Ok(total)
    }
}

/// Fraction of `rect` where `a x₁ + b x₂ + c ≥ 0`.
pub fn halfplane_fraction(rect: &Rect, a: f64, b: f64, c: f64) -> f64 {
    let poly = [
        [rect.x0, rect.y0],
        [rect.x1, rect.y0],
        [rect.x1, rect.y1],
        [rect.x0, rect.y1],
    ];
    let side = |p: &[f64; 2]| a * p[0] + b * p[1] + c;
    let mut clipped: Vec<[f64; 2]> = Vec::with_capacity(5);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (sp, sq) = (side(&p), side(&q));
        if sp >= 0.0 {
            clipped.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            clipped.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    if clipped.len() < 3 {
        return 0.0;
    }
    let mut twice_area = 0.0;
    for i in 0..clipped.len() {
        let p = clipped[i];
        let q = clipped[(i + 1) % clipped.len()];
        twice_area += p[0] * q[1] - q[0] * p[1];
    }
    (0.5 * twice_area.abs() / rect.area()).clamp(0.0, 1.0)
}

/// Fraction of `[a, b]` where `f ≥ 0`, locating sign changes on a uniform
/// scan and refining each by bisection.
fn positive_fraction(a: f64, b: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    const CELLS: usize = 256;
    let h = (b - a) / CELLS as f64;
    let mut positive = 0.0;
    let mut x_prev = a;
    let mut s_prev = f(a)?;
    check_finite(s_prev)?;
    for i in 1..=CELLS {
        let x = if i == CELLS { b } else { a + i as f64 * h };
        let s = f(x)?;
        check_finite(s)?;
        match (s_prev >= 0.0, s >= 0.0) {
            (true, true) => positive += x - x_prev,
            (false, false) => {}
            (left_pos, _) => {
                let (mut lo, mut hi) = (x_prev, x);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if (f(mid)? >= 0.0) == left_pos {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                positive += if left_pos { root - x_prev } else { x - root };
            }
        }
        x_prev = x;
        s_prev = s;
    }
    Ok(positive / (b - a))
}

fn check_finite(s: f64) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite score {s} inside the support")))
    }
}

/// Quadrature nodes over the whole support, with box weights folded into
/// the node weights and the conditional probability attached to each node.
#[derive(Debug, Clone)]
pub struct RiskQuadrature {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub rho: Vec<f64>,
}

impl RiskQuadrature {
    pub fn new(dist: &SynthDistribution) -> Self {
        let rule = GaussLegendre::new(QUADRATURE_ORDER);
        let mut q = RiskQuadrature {
            points: Vec::new(),
            weights: Vec::new(),
            rho: Vec::new(),
        };
        for (rect, weight, rho) in dist.regions() {
            let t = TensorRule::on_rect(&rule, &rect);
            q.points.extend_from_slice(&t.points);
            q.weights.extend(t.weights.iter().map(|w| w * weight));
            q.rho.extend(std::iter::repeat_n(rho, t.points.len()));
        }
        q
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scores(&self, g: &Hypothesis, map: &FeatureMap) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        match g {
            Hypothesis::Weights(w) => {
                let mut buf = vec![0.0; map.output_dim()];
                if w.len() != buf.len() {
                    return Err(Error::DimensionMismatch {
                        expected: buf.len(),
                        got: w.len(),
                    });
                }
                for p in &self.points {
                    map.featurize_into(p, &mut buf)?;
                    out.push(dot(w, &buf));
                }
            }
            Hypothesis::Expansion(e) => {
                for p in &self.points {
                    out.push(e.evaluate(p)?);
                }
            }
        }
        if let Some(s) = out.iter().find(|s| !s.is_finite()) {
            return Err(Error::domain(format!("non-finite score {s} inside the support")));
        }
        Ok(out)
    }

    /// Unregularized risk `L(g)` from precomputed scores.
    pub fn risk_from_scores(&self, scores: &[f64], loss: &LossSpec) -> f64 {
        scores
            .iter()
            .zip(&self.weights)
            .zip(&self.rho)
            .map(|((&s, w), rho)| w * (rho * loss.phi(s) + (1.0 - rho) * loss.phi(-s)))
            .sum()
    }

    pub fn risk(&self, g: &Hypothesis, map: &FeatureMap, loss: &LossSpec, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0) {
            return Err(Error::domain(format!("λ must be non-negative, got {lambda}")));
        }
        let scores = self.scores(g, map)?;
        Ok(self.risk_from_scores(&scores, loss) + 0.5 * lambda * g.norm_sq())
    }

    /// `E_X[d_{l*}(h*⁻¹(g(X)), ρ(X))]`.
    pub fn bregman_excess(&self, g: &Hypothesis, map: &FeatureMap, loss: &LossSpec) -> Result<f64> {
        let scores = self.scores(g, map)?;
        let mut total = 0.0;
        for ((&s, w), &rho) in scores.iter().zip(&self.weights).zip(&self.rho) {
            total += w * loss.bregman_divergence(loss.h_star_inv(s), rho)?;
        }
        Ok(total)
    }
}

/// Quadrature nodes featurized once for repeated weights-mode evaluations.
#[derive(Debug, Clone)]
pub struct FeaturizedQuadrature {
    pub quad: RiskQuadrature,
    features: Vec<f64>,
    dim: usize,
}

impl FeaturizedQuadrature {
    pub fn new(quad: RiskQuadrature, map: &FeatureMap) -> Result<Self> {
        let dim = map.output_dim();
        let mut features = vec![0.0; dim * quad.len()];
        for (p, row) in quad.points.iter().zip(features.chunks_mut(dim)) {
            map.featurize_into(p, row)?;
        }
        Ok(FeaturizedQuadrature { quad, features, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L_λ(w)`, and its gradient written to `grad` when given.
    pub fn objective(&self, w: &[f64], loss: &LossSpec, lambda: f64, grad: Option<&mut [f64]>) -> f64 {
        let mut value = 0.0;
        let mut gbuf = grad;
        if let Some(g) = gbuf.as_deref_mut() {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi = lambda * wi;
            }
        }
        for ((row, &q), &rho) in self
            .features
            .chunks(self.dim)
            .zip(&self.quad.weights)
            .zip(&self.quad.rho)
        {
            let s = dot(w, row);
            value += q * (rho * loss.phi(s) + (1.0 - rho) * loss.phi(-s));
            if let Some(g) = gbuf.as_deref_mut() {
                let d = q * (rho * loss.phi_prime(s) - (1.0 - rho) * loss.phi_prime(-s));
                for (gi, fi) in g.iter_mut().zip(row) {
                    *gi += d * fi;
                }
            }
        }
        value + 0.5 * lambda * dot(w, w)
    }
}

/// Result of [`g_lambda_oracle`].
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub hypothesis: Hypothesis,
    /// `L_λ(ĝ_λ)`.
    pub regularized_risk: f64,
    /// `L(ĝ_λ)`.
    pub risk: f64,
    pub norm: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

pub const ORACLE_TOL: f64 = 1e-10;
pub const ORACLE_MAX_ITER: usize = 1_000_000;

/// Minimizer of the quadrature `L_λ` over weights of `map`, by gradient descent
/// with Barzilai–Borwein steps and Armijo backtracking.
pub fn g_lambda_oracle(
    dist: &SynthDistribution,
    map: &FeatureMap,
    loss: &LossSpec,
    lambda: f64,
) -> Result<OracleSolution> {
    let fq = FeaturizedQuadrature::new(dist.quadrature(), map)?;
    g_lambda_oracle_with(&fq, loss, lambda, ORACLE_TOL, ORACLE_MAX_ITER)
}

pub fn g_lambda_oracle_with(
    fq: &FeaturizedQuadrature,
    loss: &LossSpec,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<OracleSolution> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("oracle needs λ > 0, got {lambda}")));
    }
    let d = fq.dim();
    let mut w = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut value = fq.objective(&w, loss, lambda, Some(&mut grad));
    let mut step = 1.0;
    let mut trial = vec![0.0; d];
    let mut trial_grad = vec![0.0; d];
    let mut gnorm = dot(&grad, &grad).sqrt();
    let mut iterations = 0;
    while gnorm > tol {
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gnorm,
            });
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..200 {
            for ((t, wi), gi) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = wi - step * gi;
            }
            let v = fq.objective(&trial, loss, lambda, Some(&mut trial_grad));
            let tn = dot(&trial_grad, &trial_grad).sqrt();
            let armijo = v <= value - 1e-4 * step * gnorm * gnorm;
            // Near the optimum the decrease drops below the resolution of the
            // objective; a smaller gradient is then the only usable signal.
            let flat = v - value <= 1e-14 * value.abs().max(1e-300) && tn < gnorm;
            if v.is_finite() && (armijo || flat) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations,
                grad_norm: gnorm,
            });
        }
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..d {
            let s = trial[i] - w[i];
            let y = trial_grad[i] - grad[i];
            ss += s * s;
            sy += s * y;
        }
        std::mem::swap(&mut w, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = fq.objective(&w, loss, lambda, None);
        gnorm = dot(&grad, &grad).sqrt();
        step = if sy > 0.0 { (ss / sy).min(1e12) } else { step * 2.0 };
    }
    let norm = dot(&w, &w).sqrt();
    let risk = value - 0.5 * lambda * norm * norm;
    Ok(OracleSolution {
        hypothesis: Hypothesis::Weights(w),
        regularized_risk: value,
        risk,
        norm,
        iterations,
        grad_norm: gnorm,
    })
}

/// Fresh i.i.d. draws, one per call.
#[derive(Debug, Clone)]
pub struct FreshStream {
    dist: SynthDistribution,
    rng: ChaCha8Rng,
}

impl FreshStream {
    pub fn new(dist: SynthDistribution, seed: u64) -> Self {
        FreshStream {
            dist,
            rng: stream_rng(seed, Stream::Train),
        }
    }
}

impl SampleSource for FreshStream {
    fn next_sample(&mut self) -> Sample {
        self.dist.draw(&mut self.rng)
    }
}

/// Uniform draws with replacement from a fixed training set.
#[derive(Debug, Clone)]
pub struct FiniteStream {
    samples: Vec<Sample>,
    rng: ChaCha8Rng,
}

impl FiniteStream {
    pub fn new(samples: Vec<Sample>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("finite training set is empty"));
        }
        Ok(FiniteStream {
            samples,
            rng: stream_rng(seed, Stream::Replacement),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

impl SampleSource for FiniteStream {
    fn next_sample(&mut self) -> Sample {
        let i = self.rng.random_range(0..self.samples.len());
        self.samples[i].clone()
    }
}

/// Labelled points with their features cached when the cache is small.
#[derive(Debug, Clone)]
pub struct EvalSet {
    samples: Vec<Sample>,
    features: Option<Vec<f64>>,
    dim: usize,
}

const FEATURE_CACHE_LIMIT: usize = 1 << 24;

impl EvalSet {
    pub fn new(samples: Vec<Sample>, map: &FeatureMap) -> Result<Self> {
        let dim = map.output_dim();
        let features = if samples.len() * dim <= FEATURE_CACHE_LIMIT {
            let mut f = vec![0.0; samples.len() * dim];
            for (s, row) in samples.iter().zip(f.chunks_mut(dim)) {
                map.featurize_into(&s.x, row)?;
            }
            Some(f)
        } else {
            None
        };
        Ok(EvalSet { samples, features, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scores(&self, g: &Hypothesis, map: &FeatureMap) -> Result<Vec<f64>> {
        match (g, &self.features) {
            (Hypothesis::Weights(w), Some(f)) if w.len() == self.dim => {
                Ok(f.chunks(self.dim).map(|row| dot(w, row)).collect())
            }
            (Hypothesis::Weights(w), _) => {
                let mut buf = vec![0.0; map.output_dim()];
                if w.len() != buf.len() {
                    return Err(Error::DimensionMismatch {
                        expected: buf.len(),
                        got: w.len(),
                    });
                }
                self.samples
                    .iter()
                    .map(|s| {
                        map.featurize_into(&s.x, &mut buf)?;
                        Ok(dot(w, &buf))
                    })
                    .collect()
            }
            (Hypothesis::Expansion(e), _) => self.samples.iter().map(|s| e.evaluate(&s.x)).collect(),
        }
    }

    /// Mean surrogate loss and 0-1 error (score 0 counts as `+1`).
    pub fn loss_and_error(&self, g: &Hypothesis, map: &FeatureMap, loss: &LossSpec) -> Result<(f64, f64)> {
        let scores = self.scores(g, map)?;
        let n = self.samples.len() as f64;
        let mut total = 0.0;
        let mut wrong = 0usize;
        for (s, z) in scores.iter().zip(&self.samples) {
            total += loss.loss(*s, z.y);
            let predicted = if *s >= 0.0 { 1.0 } else { -1.0 };
            if predicted != z.y {
                wrong += 1;
            }
        }
        Ok((total / n, wrong as f64 / n))
    }
}

/// How the test error column is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Empirical error on the held-out test set.
    #[default]
    TestSet,
    /// Exact population error (linear scores) or its accurate quadrature.
    Exact,
}

/// Checkpoint metrics against the synthetic distribution.
///
/// `excess_risk` is measured against `reference_risk`, normally the risk of
/// the oracle at a vanishing λ (the best risk in the model class); with a
/// linear model the unrestricted minimizer lies outside the class.
#[derive(Debug, Clone)]
pub struct SynthEvaluator {
    pub dist: SynthDistribution,
    pub loss: LossSpec,
    pub map: FeatureMap,
    pub train: EvalSet,
    pub test: EvalSet,
    pub quad: RiskQuadrature,
    pub reference_risk: f64,
    pub error_mode: ErrorMode,
}

impl SynthEvaluator {
    pub fn new(
        dist: SynthDistribution,
        loss: LossSpec,
        map: FeatureMap,
        train: Vec<Sample>,
        test: Vec<Sample>,
        reference_risk: f64,
    ) -> Result<Self> {
        let train = EvalSet::new(train, &map)?;
        let test = EvalSet::new(test, &map)?;
        Ok(SynthEvaluator {
            quad: dist.quadrature(),
            dist,
            loss,
            map,
            train,
            test,
            reference_risk,
            error_mode: ErrorMode::TestSet,
        })
    }
}

impl Evaluator for SynthEvaluator {
    fn evaluate(&self, iter: usize, g: &Hypothesis) -> Result<TraceRow> {
        let (train_loss, train_err) = self.train.loss_and_error(g, &self.map, &self.loss)?;
        let (test_loss, mut test_err) = self.test.loss_and_error(g, &self.map, &self.loss)?;
        if self.error_mode == ErrorMode::Exact {
            test_err = self.dist.expected_classification_error(g, &self.map)?;
        }
        let risk = self.quad.risk(g, &self.map, &self.loss, 0.0)?;
        let excess_err = test_err - self.dist.bayes_error();
        let excess_risk = risk - self.reference_risk;
        Ok(TraceRow {
            iter,
            train_loss,
            test_loss,
            train_err,
            test_err,
            excess_err,
            excess_risk,
            ratio: TraceRow::guarded_ratio(excess_err, excess_risk),
            norm: g.hilbert_norm(),
        })
    }
}

/// Sample estimate of `E‖∂_ζ l(g(X), Y) φ(X) - mean‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub n: usize,
}

pub fn estimate_gradient_variance(
    dist: &SynthDistribution,
    map: &FeatureMap,
    loss: &LossSpec,
    g: &Hypothesis,
    n: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    if n < 2 {
        return Err(Error::config("variance estimate needs at least two draws"));
    }
    let samples = dist.sample_stream(n, seed, Stream::Estimate);
    let dim = map.output_dim();
    let mut mean = vec![0.0; dim];
    let mut sq = 0.0;
    let mut phi = vec![0.0; dim];
    for s in &samples {
        map.featurize_into(&s.x, &mut phi)?;
        let score = match g {
            Hypothesis::Weights(w) => dot(w, &phi),
            Hypothesis::Expansion(e) => e.evaluate(&s.x)?,
        };
        let d = loss.pointwise_grad(score, s.y);
        for (m, f) in mean.iter_mut().zip(&phi) {
            *m += d * f;
        }
        sq += d * d * dot(&phi, &phi);
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let value = (sq / nf - dot(&mean, &mean)) * nf / (nf - 1.0);
    Ok(VarianceEstimate {
        value: value.max(0.0),
        n,
    })
}
