//! Functions in the hypothesis space.
//!
//! Two representations are supported:
//!
//! * [`Hypothesis::Weights`]: a weight vector over the coordinates of an explicit
//!   [`FeatureMap`] (linear-with-bias or random Fourier features).
//! * [`Hypothesis::Expansion`]: a kernel expansion `s · Σ_i c_i k(x_i, ·)` whose
//!   global multiplier `s` absorbs the `(1 - ηλ)` shrinkage in O(1) per step.

use std::cell::Cell;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Below this value the lazy scale is folded into the coefficients.
pub const REFOLD_THRESHOLD: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    LinearWithBias,
    RandomFourier,
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear_with_bias" => Ok(FeatureKind::LinearWithBias),
            "rff" | "random_fourier" => Ok(FeatureKind::RandomFourier),
            other => Err(Error::config(format!("unknown feature map '{other}'"))),
        }
    }
}

/// Everything needed to rebuild a [`FeatureMap`] bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_sigma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// `R` with `k(x, x) ≤ R²` on the declared support.
    pub kernel_bound: f64,
}

#[derive(Debug, Clone)]
pub struct FeatureMap {
    spec: FeatureSpec,
    /// Row-major `output_dim × input_dim`, random Fourier only.
    frequencies: Vec<f64>,
    phases: Vec<f64>,
}

impl FeatureMap {
    /// `x ↦ (x, 1)`. `support` is a per-coordinate bounding box of the inputs,
    /// used to compute `R = sqrt(1 + max ‖x‖²)`.
    pub fn linear_with_bias(support: &[(f64, f64)]) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::config("linear feature map needs at least one input dimension"));
        }
        let max_sq: f64 = support.iter().map(|&(lo, hi)| lo.abs().max(hi.abs()).powi(2)).sum();
        let d = support.len();
        Ok(FeatureMap {
            spec: FeatureSpec {
                kind: FeatureKind::LinearWithBias,
                input_dim: d,
                output_dim: d + 1,
                bandwidth_sigma: None,
                seed: 0,
                kernel_bound: (1.0 + max_sq).sqrt(),
            },
            frequencies: Vec::new(),
            phases: Vec::new(),
        })
    }

    /// Random Fourier features for the Gaussian kernel of bandwidth `sigma`:
    /// `sqrt(2/D) · cos(ω_j·x + b_j)` with `ω_j ~ N(0, σ⁻² I)`, `b_j ~ U[0, 2π)`.
    pub fn random_fourier(input_dim: usize, dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || dim == 0 {
            return Err(Error::config("random Fourier features need positive dimensions"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config(format!("bandwidth must be positive, got {sigma}")));
        }
        let mut rng = stream_rng(seed, Stream::Features);
        let normal = Normal::new(0.0, 1.0 / sigma).expect("valid normal");
        let frequencies: Vec<f64> = (0..dim * input_dim).map(|_| normal.sample(&mut rng)).collect();
        let phases: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok(FeatureMap {
            spec: FeatureSpec {
                kind: FeatureKind::RandomFourier,
                input_dim,
                output_dim: dim,
                bandwidth_sigma: Some(sigma),
                seed,
                kernel_bound: 2f64.sqrt(),
            },
            frequencies,
            phases,
        })
    }

    pub fn from_spec(spec: &FeatureSpec) -> Result<Self> {
        match spec.kind {
            FeatureKind::LinearWithBias => {
                if spec.output_dim != spec.input_dim + 1 {
                    return Err(Error::config("linear map must have output_dim = input_dim + 1"));
                }
                if !(spec.kernel_bound >= 1.0) {
                    return Err(Error::config("linear map kernel bound must be at least 1"));
                }
                Ok(FeatureMap {
                    spec: spec.clone(),
                    frequencies: Vec::new(),
                    phases: Vec::new(),
                })
            }
            FeatureKind::RandomFourier => {
                let sigma = spec
                    .bandwidth_sigma
                    .ok_or_else(|| Error::config("random Fourier spec without bandwidth"))?;
                Self::random_fourier(spec.input_dim, spec.output_dim, sigma, spec.seed)
            }
        }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn kind(&self) -> FeatureKind {
        self.spec.kind
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn kernel_bound(&self) -> f64 {
        self.spec.kernel_bound
    }

    pub fn is_linear(&self) -> bool {
        self.spec.kind == FeatureKind::LinearWithBias
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn featurize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spec.output_dim];
        self.featurize_into(x, &mut out)?;
        Ok(out)
    }

    pub fn featurize_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_input(x)?;
        if out.len() != self.spec.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.output_dim,
                got: out.len(),
            });
        }
        match self.spec.kind {
            FeatureKind::LinearWithBias => {
                out[..x.len()].copy_from_slice(x);
                out[x.len()] = 1.0;
            }
            FeatureKind::RandomFourier => {
                let d = self.spec.input_dim;
                let norm = (2.0 / self.spec.output_dim as f64).sqrt();
                for (j, o) in out.iter_mut().enumerate() {
                    let omega = &self.frequencies[j * d..(j + 1) * d];
                    let arg: f64 = omega.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.phases[j];
                    *o = norm * arg.cos();
                }
            }
        }
        Ok(())
    }

    /// Kernel induced by the map, `featurize(x) · featurize(y)`.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let fx = self.featurize(x)?;
        let fy = self.featurize(y)?;
        Ok(dot(&fx, &fy))
    }
}

/// Kernel used by [`KernelExpansion`].
#[derive(Debug, Clone)]
pub enum Kernel {
    Gaussian { sigma: f64, input_dim: usize },
    Induced(Arc<FeatureMap>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { sigma: f64, input_dim: usize },
    Induced { feature_map: FeatureSpec },
}

impl Kernel {
    pub fn gaussian(sigma: f64, input_dim: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) || input_dim == 0 {
            return Err(Error::config("gaussian kernel needs positive bandwidth and dimension"));
        }
        Ok(Kernel::Gaussian { sigma, input_dim })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Kernel::Gaussian { input_dim, .. } => *input_dim,
            Kernel::Induced(map) => map.input_dim(),
        }
    }

    /// `R` with `k(x, x) ≤ R²`.
    pub fn bound(&self) -> f64 {
        match self {
            Kernel::Gaussian { .. } => 1.0,
            Kernel::Induced(map) => map.kernel_bound(),
        }
    }

    /// Inputs must already have the right dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Gaussian { sigma, .. } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Kernel::Induced(map) => map.kernel(x, y).expect("dimension checked by caller"),
        }
    }

    pub fn spec(&self) -> KernelSpec {
        match self {
            Kernel::Gaussian { sigma, input_dim } => KernelSpec::Gaussian {
                sigma: *sigma,
                input_dim: *input_dim,
            },
            Kernel::Induced(map) => KernelSpec::Induced {
                feature_map: map.spec().clone(),
            },
        }
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Gaussian { sigma, input_dim } => Kernel::gaussian(*sigma, *input_dim),
            KernelSpec::Induced { feature_map } => Ok(Kernel::Induced(Arc::new(FeatureMap::from_spec(feature_map)?))),
        }
    }
}

/// `lazy_scale · Σ_i c_i k(x_i, ·)`.
#[derive(Debug, Clone)]
pub struct KernelExpansion {
    kernel: Kernel,
    /// Row-major `n × input_dim`.
    centers: Vec<f64>,
    coefs: Vec<f64>,
    lazy_scale: f64,
    /// Unscaled quadratic form `cᵀKc`, `None` when stale.
    quad_form: Cell<Option<f64>>,
}

impl KernelExpansion {
    pub fn new(kernel: Kernel) -> Self {
        KernelExpansion {
            kernel,
            centers: Vec::new(),
            coefs: Vec::new(),
            lazy_scale: 1.0,
            quad_form: Cell::new(Some(0.0)),
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.coefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.is_empty()
    }

    pub fn lazy_scale(&self) -> f64 {
        self.lazy_scale
    }

    pub fn center(&self, i: usize) -> &[f64] {
        let d = self.kernel.input_dim();
        &self.centers[i * d..(i + 1) * d]
    }

    /// Coefficients with the lazy scale applied.
    pub fn effective_coefs(&self) -> Vec<f64> {
        self.coefs.iter().map(|c| c * self.lazy_scale).collect()
    }

    /// `Σ_i c_i k(x_i, x)` without the lazy scale.
    fn raw_eval(&self, x: &[f64]) -> f64 {
        self.coefs
            .iter()
            .enumerate()
            .map(|(i, c)| c * self.kernel.eval(self.center(i), x))
            .sum()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let d = self.kernel.input_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        Ok(self.lazy_scale * self.raw_eval(x))
    }

    fn quad_form(&self) -> f64 {
        if let Some(q) = self.quad_form.get() {
            return q;
        }
        let n = self.len();
        let mut q = 0.0;
        for i in 0..n {
            let xi = self.center(i);
            q += self.coefs[i] * self.coefs[i] * self.kernel.eval(xi, xi);
            for j in 0..i {
                q += 2.0 * self.coefs[i] * self.coefs[j] * self.kernel.eval(xi, self.center(j));
            }
        }
        self.quad_form.set(Some(q));
        q
    }

    pub fn norm_sq(&self) -> f64 {
        self.lazy_scale * self.lazy_scale * self.quad_form().max(0.0)
    }

    /// Absorb the lazy scale into the coefficients. Evaluations are unchanged.
    pub fn fold(&mut self) {
        let s = self.lazy_scale;
        if s == 1.0 {
            return;
        }
        for c in &mut self.coefs {
            *c *= s;
        }
        if let Some(q) = self.quad_form.get() {
            self.quad_form.set(Some(q * s * s));
        }
        self.lazy_scale = 1.0;
    }

    fn scale_by(&mut self, factor: f64) {
        self.lazy_scale *= factor;
        if self.lazy_scale.abs() < REFOLD_THRESHOLD {
            self.fold();
        }
    }

    /// `g ← scale_old · g + step · k(x, ·)`. `raw_cross`, when known, is
    /// `Σ_i c_i k(x_i, x)` before the update and keeps the norm update O(1).
    fn push(&mut self, scale_old: f64, x: &[f64], step: f64, raw_cross: Option<f64>) {
        let mut cross = self
            .quad_form
            .get()
            .map(|_| raw_cross.unwrap_or_else(|| self.raw_eval(x)));
        self.lazy_scale *= scale_old;
        if self.lazy_scale.abs() < REFOLD_THRESHOLD {
            let s = self.lazy_scale;
            self.fold();
            cross = cross.map(|c| c * s);
        }
        let coef = step / self.lazy_scale;
        if let (Some(q), Some(c)) = (self.quad_form.get(), cross) {
            let kxx = self.kernel.eval(x, x);
            self.quad_form.set(Some(q + 2.0 * coef * c + coef * coef * kxx));
        }
        self.centers.extend_from_slice(x);
        self.coefs.push(coef);
    }
}

/// Update direction for [`Hypothesis::axpy_update`].
#[derive(Debug, Clone, Copy)]
pub enum Direction<'a> {
    /// A feature vector (weights mode).
    Features(&'a [f64]),
    /// A new kernel center `k(x, ·)` (expansion mode).
    Center(&'a [f64]),
}

#[derive(Debug, Clone)]
pub enum Hypothesis {
    Weights(Vec<f64>),
    Expansion(KernelExpansion),
}

impl Hypothesis {
    pub fn zero_weights(dim: usize) -> Self {
        Hypothesis::Weights(vec![0.0; dim])
    }

    pub fn zero_expansion(kernel: Kernel) -> Self {
        Hypothesis::Expansion(KernelExpansion::new(kernel))
    }

    /// Zero hypothesis with the same representation (and kernel) as `self`.
    pub fn zero_like(&self) -> Self {
        match self {
            Hypothesis::Weights(w) => Hypothesis::zero_weights(w.len()),
            Hypothesis::Expansion(e) => Hypothesis::zero_expansion(e.kernel.clone()),
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            Hypothesis::Weights(w) => Some(w),
            Hypothesis::Expansion(_) => None,
        }
    }

    pub fn expansion(&self) -> Option<&KernelExpansion> {
        match self {
            Hypothesis::Expansion(e) => Some(e),
            Hypothesis::Weights(_) => None,
        }
    }

    /// Linear score over the coordinates of `map` (weights mode) or the
    /// kernel expansion value (expansion mode; `map` is unused).
    pub fn evaluate(&self, map: &FeatureMap, x: &[f64]) -> Result<f64> {
        match self {
            Hypothesis::Weights(w) => {
                if w.len() != map.output_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: map.output_dim(),
                        got: w.len(),
                    });
                }
                let phi = map.featurize(x)?;
                Ok(dot(w, &phi))
            }
            Hypothesis::Expansion(e) => e.evaluate(x),
        }
    }

    /// `g ← scale_old · g + step · direction`.
    pub fn axpy_update(&mut self, scale_old: f64, direction: Direction<'_>, step: f64) -> Result<()> {
        self.axpy_with_cross(scale_old, direction, step, None)
    }

    /// As [`Hypothesis::axpy_update`], with the pre-update score `g(x)` supplied
    /// so the expansion norm can be updated without another pass over the centers.
    pub(crate) fn axpy_with_cross(
        &mut self,
        scale_old: f64,
        direction: Direction<'_>,
        step: f64,
        score_before: Option<f64>,
    ) -> Result<()> {
        if !(scale_old > 0.0) {
            return Err(Error::domain(format!("scale_old must be positive, got {scale_old}")));
        }
        match (self, direction) {
            (Hypothesis::Weights(w), Direction::Features(f)) => {
                if f.len() != w.len() {
                    return Err(Error::DimensionMismatch {
                        expected: w.len(),
                        got: f.len(),
                    });
                }
                for (wi, fi) in w.iter_mut().zip(f) {
                    *wi = scale_old * *wi + step * fi;
                }
                Ok(())
            }
            (Hypothesis::Expansion(e), Direction::Center(x)) => {
                let d = e.kernel.input_dim();
                if x.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: x.len(),
                    });
                }
                let raw_cross = score_before.map(|s| s / e.lazy_scale);
                e.push(scale_old, x, step, raw_cross);
                Ok(())
            }
            _ => Err(Error::config(
                "update direction does not match the hypothesis representation",
            )),
        }
    }

    /// Multiply the whole function by `factor > 0`.
    pub fn scale(&mut self, factor: f64) {
        match self {
            Hypothesis::Weights(w) => w.iter_mut().for_each(|wi| *wi *= factor),
            Hypothesis::Expansion(e) => e.scale_by(factor),
        }
    }

    pub fn hilbert_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            Hypothesis::Weights(w) => dot(w, w),
            Hypothesis::Expansion(e) => e.norm_sq(),
        }
    }

    pub fn fold(&mut self) {
        if let Hypothesis::Expansion(e) = self {
            e.fold();
        }
    }

    /// `self ← (1 - beta) · self + beta · other`.
    ///
    /// In expansion mode the centers of `self` must be a prefix of the centers
    /// of `other`, which holds for an average of iterates along one SGD run.
    pub fn blend(&mut self, other: &Hypothesis, beta: f64) -> Result<()> {
        match (self, other) {
            (Hypothesis::Weights(a), Hypothesis::Weights(b)) => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: a.len(),
                        got: b.len(),
                    });
                }
                for (ai, bi) in a.iter_mut().zip(b) {
                    *ai = (1.0 - beta) * *ai + beta * bi;
                }
                Ok(())
            }
            (Hypothesis::Expansion(a), Hypothesis::Expansion(b)) => {
                let d = a.kernel.input_dim();
                if b.len() < a.len() || a.centers[..] != b.centers[..a.len() * d] {
                    return Err(Error::config(
                        "blend requires a prefix of the other expansion's centers",
                    ));
                }
                let keep = 1.0 - beta;
                if keep > 0.0 {
                    a.scale_by(keep);
                } else {
                    a.coefs.iter_mut().for_each(|c| *c = 0.0);
                    a.lazy_scale = 1.0;
                }
                a.centers.extend_from_slice(&b.centers[a.len() * d..]);
                a.coefs.resize(b.len(), 0.0);
                let factor = beta * b.lazy_scale / a.lazy_scale;
                for (ac, bc) in a.coefs.iter_mut().zip(&b.coefs) {
                    *ac += factor * bc;
                }
                a.quad_form.set(None);
                Ok(())
            }
            _ => Err(Error::config("cannot blend hypotheses with different representations")),
        }
    }

    /// `‖self - other‖` in the hypothesis space.
    pub fn distance(&self, other: &Hypothesis) -> Result<f64> {
        match (self, other) {
            (Hypothesis::Weights(a), Hypothesis::Weights(b)) => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: a.len(),
                        got: b.len(),
                    });
                }
                Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            }
            (Hypothesis::Expansion(a), Hypothesis::Expansion(b)) => {
                let mut diff = KernelExpansion::new(a.kernel.clone());
                diff.centers.extend_from_slice(&a.centers);
                diff.centers.extend_from_slice(&b.centers);
                diff.coefs.extend(a.effective_coefs());
                diff.coefs.extend(b.effective_coefs().into_iter().map(|c| -c));
                diff.quad_form.set(None);
                Ok(diff.norm_sq().sqrt())
            }
            _ => Err(Error::config(
                "cannot compare hypotheses with different representations",
            )),
        }
    }

    pub fn to_doc(&self, map: &FeatureMap) -> HypothesisDoc {
        match self {
            Hypothesis::Weights(w) => HypothesisDoc::Weights {
                weights: w.clone(),
                feature_map: map.spec().clone(),
            },
            Hypothesis::Expansion(e) => HypothesisDoc::KernelExpansion {
                centers: (0..e.len())
                    .map(|i| {
                        let mut row = e.center(i).to_vec();
                        row.push(e.coefs[i]);
                        row
                    })
                    .collect(),
                lazy_scale: e.lazy_scale,
                kernel: e.kernel.spec(),
            },
        }
    }

    /// Rebuild a hypothesis and the feature map it is defined over.
    pub fn from_doc(doc: &HypothesisDoc) -> Result<(Hypothesis, Option<FeatureMap>)> {
        match doc {
            HypothesisDoc::Weights { weights, feature_map } => {
                let map = FeatureMap::from_spec(feature_map)?;
                if weights.len() != map.output_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: map.output_dim(),
                        got: weights.len(),
                    });
                }
                Ok((Hypothesis::Weights(weights.clone()), Some(map)))
            }
            HypothesisDoc::KernelExpansion {
                centers,
                lazy_scale,
                kernel,
            } => {
                let kernel = Kernel::from_spec(kernel)?;
                let d = kernel.input_dim();
                if !(*lazy_scale > 0.0) {
                    return Err(Error::config("lazy_scale must be positive"));
                }
                let mut e = KernelExpansion::new(kernel);
                for row in centers {
                    if row.len() != d + 1 {
                        return Err(Error::DimensionMismatch {
                            expected: d + 1,
                            got: row.len(),
                        });
                    }
                    e.centers.extend_from_slice(&row[..d]);
                    e.coefs.push(row[d]);
                }
                e.lazy_scale = *lazy_scale;
                e.quad_form.set(None);
                Ok((Hypothesis::Expansion(e), None))
            }
        }
    }
}

/// JSON document for checkpointing hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "snake_case")]
pub enum HypothesisDoc {
    Weights {
        weights: Vec<f64>,
        feature_map: FeatureSpec,
    },
    KernelExpansion {
        /// Rows `[x_1, ..., x_d, c]`.
        centers: Vec<Vec<f64>>,
        lazy_scale: f64,
        kernel: KernelSpec,
    },
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SUPPORT: [(f64, f64); 2] = [(-0.9, 2.9), (-1.0, 1.0)];

    fn random_point(rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-0.9..2.9), rng.random_range(-1.0..1.0)]
    }

    #[test]
    fn linear_featurize_and_bound() {
        let map = FeatureMap::linear_with_bias(&[(-3.0, 3.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(map.featurize(&[2.0, -1.0]).unwrap(), vec![2.0, -1.0, 1.0]);
        assert!((map.kernel_bound() - 11f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            map.featurize(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rff_approximates_gaussian_kernel() {
        let sigma = 0.7;
        let map = FeatureMap::random_fourier(2, 512, sigma, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut total = 0.0;
        for _ in 0..1000 {
            let x = random_point(&mut rng);
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let exact =
                (-(x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()) / (2.0 * sigma * sigma)).exp();
            total += (map.kernel(&x, &y).unwrap() - exact).abs();
        }
        assert!(total / 1000.0 <= 0.05, "mean abs error {}", total / 1000.0);
    }

    #[test]
    fn rff_feature_norm_bounded() {
        let map = FeatureMap::random_fourier(2, 64, 1.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-10.0..10.0)).collect();
            let f = map.featurize(&x).unwrap();
            assert!(dot(&f, &f) <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn rff_deterministic_given_seed() {
        let a = FeatureMap::random_fourier(2, 16, 0.5, 9).unwrap();
        let b = FeatureMap::from_spec(a.spec()).unwrap();
        let c = FeatureMap::random_fourier(2, 16, 0.5, 10).unwrap();
        let x = [0.3, -0.2];
        assert_eq!(a.featurize(&x).unwrap(), b.featurize(&x).unwrap());
        assert_ne!(a.featurize(&x).unwrap(), c.featurize(&x).unwrap());
    }

    #[test]
    fn evaluate_examples() {
        let map = FeatureMap::linear_with_bias(&SUPPORT).unwrap();
        assert_eq!(Hypothesis::zero_weights(3).evaluate(&map, &[1.0, 2.0]).unwrap(), 0.0);
        let g = Hypothesis::Weights(vec![1.0, 0.0, 0.0]);
        assert_eq!(g.evaluate(&map, &[3.0, 5.0]).unwrap(), 3.0);

        let mut e = KernelExpansion::new(Kernel::gaussian(1.0, 2).unwrap());
        let x0 = [0.4, -0.3];
        e.push(1.0, &x0, 2.0, None);
        e.lazy_scale = 0.5;
        let g = Hypothesis::Expansion(e);
        let direct = 0.5 * 2.0 * (-0.0f64).exp();
        assert!((g.evaluate(&map, &x0).unwrap() - direct).abs() < 1e-15);
        assert!((g.evaluate(&map, &x0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn axpy_from_zero() {
        let mut g = Hypothesis::zero_weights(3);
        let f = [1.0, -2.0, 1.0];
        g.axpy_update(1.0, Direction::Features(&f), 0.05).unwrap();
        assert_eq!(g.weights().unwrap(), &[0.05, -0.1, 0.05]);
        assert!(g.axpy_update(0.0, Direction::Features(&f), 0.1).is_err());
        assert!(g.axpy_update(-1.0, Direction::Features(&f), 0.1).is_err());
        assert!(g.axpy_update(1.0, Direction::Center(&[0.0, 0.0]), 0.1).is_err());
    }

    #[test]
    fn hilbert_norm_examples() {
        assert_eq!(Hypothesis::zero_weights(4).hilbert_norm(), 0.0);
        assert_eq!(Hypothesis::Weights(vec![3.0, 4.0]).hilbert_norm(), 5.0);
        let mut e = Hypothesis::zero_expansion(Kernel::gaussian(1.0, 2).unwrap());
        assert_eq!(e.hilbert_norm(), 0.0);
        e.axpy_update(1.0, Direction::Center(&[0.5, 0.5]), 1.0).unwrap();
        e.axpy_update(1.0, Direction::Center(&[0.5, 0.5]), -1.0).unwrap();
        assert!(e.hilbert_norm() < 1e-12);
    }

    #[test]
    fn lazy_scale_equals_product_of_shrinkage() {
        let (lambda, gamma) = (0.1, 3.0);
        let mut g = Hypothesis::zero_expansion(Kernel::gaussian(1.0, 2).unwrap());
        let mut product = 1.0;
        for t in 1..=200 {
            let eta = 2.0 / (lambda * (gamma + t as f64));
            let shrink = 1.0 - eta * lambda;
            product *= shrink;
            g.axpy_update(shrink, Direction::Center(&[t as f64 * 0.01, 0.0]), 0.01)
                .unwrap();
        }
        let s = g.expansion().unwrap().lazy_scale();
        assert!((s - product).abs() <= 1e-12 * product.max(1e-300), "{s} vs {product}");
        // closed form of the telescoping product: γ(γ-1)/((γ+T)(γ+T-1))
        let closed = gamma * (gamma - 1.0) / ((gamma + 200.0) * (gamma + 199.0));
        assert!((s - closed).abs() / closed < 1e-12);
    }

    #[test]
    fn incremental_norm_matches_full_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Hypothesis::zero_expansion(Kernel::gaussian(0.8, 2).unwrap());
        for _ in 0..60 {
            let x = random_point(&mut rng);
            let scale: f64 = rng.random_range(0.5..1.0);
            let step: f64 = rng.random_range(-1.0..1.0);
            g.axpy_update(scale, Direction::Center(&x), step).unwrap();
        }
        let incremental = g.norm_sq();
        let mut full = g.clone();
        if let Hypothesis::Expansion(e) = &mut full {
            e.quad_form.set(None);
        }
        assert!((incremental - full.norm_sq()).abs() < 1e-10 * full.norm_sq().max(1.0));
    }

    #[test]
    fn refold_keeps_evaluations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Hypothesis::zero_expansion(Kernel::gaussian(1.0, 2).unwrap());
        let map = FeatureMap::linear_with_bias(&SUPPORT).unwrap();
        for _ in 0..20 {
            g.axpy_update(0.3, Direction::Center(&random_point(&mut rng)), 1.0)
                .unwrap();
        }
        let probes: Vec<Vec<f64>> = (0..50).map(|_| random_point(&mut rng)).collect();
        let before: Vec<f64> = probes.iter().map(|x| g.evaluate(&map, x).unwrap()).collect();
        g.fold();
        assert_eq!(g.expansion().unwrap().lazy_scale(), 1.0);
        for (x, b) in probes.iter().zip(&before) {
            assert!((g.evaluate(&map, x).unwrap() - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn underflowing_scale_triggers_refold() {
        let mut g = Hypothesis::zero_expansion(Kernel::gaussian(1.0, 2).unwrap());
        let map = FeatureMap::linear_with_bias(&SUPPORT).unwrap();
        g.axpy_update(1.0, Direction::Center(&[0.0, 0.0]), 1.0).unwrap();
        for i in 0..400 {
            g.axpy_update(0.5, Direction::Center(&[i as f64 * 1e-3, 0.0]), 0.0)
                .unwrap();
            let s = g.expansion().unwrap().lazy_scale();
            assert!(s >= REFOLD_THRESHOLD);
        }
        let v = g.evaluate(&map, &[0.0, 0.0]).unwrap();
        assert!((0.0..1e-100).contains(&v));
    }

    #[test]
    fn sup_norm_bounded_by_kernel_bound_times_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let linear = FeatureMap::linear_with_bias(&SUPPORT).unwrap();
        let rff = FeatureMap::random_fourier(2, 32, 0.5, 1).unwrap();
        for map in [&linear, &rff] {
            for _ in 0..5000 {
                let w: Vec<f64> = (0..map.output_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let g = Hypothesis::Weights(w);
                let x = random_point(&mut rng);
                let v = g.evaluate(map, &x).unwrap();
                assert!(v.abs() <= map.kernel_bound() * g.hilbert_norm() + 1e-9);
            }
        }
    }

    #[test]
    fn doc_round_trip() {
        let map = FeatureMap::random_fourier(2, 8, 0.5, 4).unwrap();
        let g = Hypothesis::Weights((0..8).map(|i| i as f64 * 0.1).collect());
        let json = serde_json::to_string(&g.to_doc(&map)).unwrap();
        assert!(json.contains("\"representation\":\"weights\""));
        let doc: HypothesisDoc = serde_json::from_str(&json).unwrap();
        let (h, m) = Hypothesis::from_doc(&doc).unwrap();
        let m = m.unwrap();
        let x = [0.1, 0.2];
        assert_eq!(h.evaluate(&m, &x).unwrap(), g.evaluate(&map, &x).unwrap());

        let mut e = Hypothesis::zero_expansion(Kernel::gaussian(1.0, 2).unwrap());
        e.axpy_update(1.0, Direction::Center(&[0.1, 0.2]), 0.5).unwrap();
        e.axpy_update(0.9, Direction::Center(&[0.3, -0.2]), -0.25).unwrap();
        let doc = e.to_doc(&map);
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains("\"lazy_scale\""));
        let (back, _) = Hypothesis::from_doc(&serde_json::from_str(&json).unwrap()).unwrap();
        assert!((back.evaluate(&map, &x).unwrap() - e.evaluate(&map, &x).unwrap()).abs() < 1e-15);
        assert!((back.norm_sq() - e.norm_sq()).abs() < 1e-12);
    }
}
