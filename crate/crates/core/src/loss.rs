//! Classification-calibrated margin losses `l(ζ, y) = φ(yζ)`.
//!
//! Each loss carries its link function `h*` (pointwise minimizer of
//! `μφ(h) + (1-μ)φ(-h)`), the minimal conditional risk `l*`, the Bregman
//! divergence of `l*`, and the margin constant `m(δ)` that lower-bounds
//! `|g*(X)|` under the strong low-noise condition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities returned by inverse links are clamped into `[EPS, 1 - EPS]`.
pub const LINK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Squared,
    SmoothedHinge,
    Exponential,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Logistic,
        LossKind::Squared,
        LossKind::SmoothedHinge,
        LossKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Squared => "squared",
            LossKind::SmoothedHinge => "smoothed_hinge",
            LossKind::Exponential => "exponential",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LossKind::Logistic),
            "squared" => Ok(LossKind::Squared),
            "smoothed_hinge" => Ok(LossKind::SmoothedHinge),
            "exponential" => Ok(LossKind::Exponential),
            other => Err(Error::config(format!("unknown loss '{other}'"))),
        }
    }
}

/// Bound on `|∂_ζ l(ζ, y)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradBound {
    Finite(f64),
    Unbounded,
}

impl GradBound {
    pub fn finite(self) -> Option<f64> {
        match self {
            GradBound::Finite(m) => Some(m),
            GradBound::Unbounded => None,
        }
    }
}

/// A surrogate loss together with an optional projection radius.
///
/// The projection radius `B` confines iterates to `‖g‖ ≤ B`, so scores obey
/// `|g(x)| ≤ R·B`. Losses whose derivative grows without bound (squared,
/// exponential) only have a finite gradient bound once `B` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub projection_radius: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            projection_radius: None,
        }
    }

    pub fn logistic() -> Self {
        Self::new(LossKind::Logistic)
    }

    pub fn with_projection(mut self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::domain(format!(
                "projection radius must be positive, got {radius}"
            )));
        }
        self.projection_radius = Some(radius);
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// `φ(v)`.
    pub fn phi(&self, v: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => softplus(-v),
            LossKind::Squared => (1.0 - v) * (1.0 - v),
            LossKind::SmoothedHinge => {
                if v >= 1.0 {
                    0.0
                } else if v >= 0.0 {
                    0.5 * (1.0 - v) * (1.0 - v)
                } else {
                    0.5 - v
                }
            }
            LossKind::Exponential => (-v).exp(),
        }
    }

    /// `φ'(v)`.
    pub fn phi_prime(&self, v: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => -sigmoid(-v),
            LossKind::Squared => -2.0 * (1.0 - v),
            LossKind::SmoothedHinge => {
                if v >= 1.0 {
                    0.0
                } else if v >= 0.0 {
                    v - 1.0
                } else {
                    -1.0
                }
            }
            LossKind::Exponential => -(-v).exp(),
        }
    }

    /// Loss value `l(ζ, y) = φ(yζ)`.
    pub fn loss(&self, score: f64, label: f64) -> f64 {
        self.phi(label * score)
    }

    /// `∂_ζ l(ζ, y) = y·φ'(yζ)`.
    pub fn pointwise_grad(&self, score: f64, label: f64) -> f64 {
        label * self.phi_prime(label * score)
    }

    /// Largest score magnitude reachable inside the projection ball.
    fn score_domain(&self, kernel_bound: f64) -> Option<f64> {
        self.projection_radius.map(|b| kernel_bound * b)
    }

    /// Gradient bound `M` for hypotheses with `k(x,x) ≤ R²`.
    pub fn grad_bound(&self, kernel_bound: f64) -> GradBound {
        match self.kind {
            LossKind::Logistic | LossKind::SmoothedHinge => GradBound::Finite(1.0),
            LossKind::Squared => match self.score_domain(kernel_bound) {
                Some(s) => GradBound::Finite(2.0 * (1.0 + s)),
                None => GradBound::Unbounded,
            },
            LossKind::Exponential => match self.score_domain(kernel_bound) {
                Some(s) => GradBound::Finite(s.exp()),
                None => GradBound::Unbounded,
            },
        }
    }

    /// Smoothness constant `L = sup φ'' · R²` of the expected risk, or `None`
    /// when `φ''` is unbounded on the reachable score domain.
    pub fn smoothness(&self, kernel_bound: f64) -> Option<f64> {
        let curvature = match self.kind {
            LossKind::Logistic => Some(0.25),
            LossKind::Squared => Some(2.0),
            LossKind::SmoothedHinge => Some(1.0),
            LossKind::Exponential => self.score_domain(kernel_bound).map(f64::exp),
        }?;
        Some(curvature * kernel_bound * kernel_bound)
    }

    /// Link function `h*(μ)`.
    pub fn h_star(&self, mu: f64) -> Result<f64> {
        check_prob(mu, "h*")?;
        Ok(self.h_star_unchecked(mu))
    }

    fn h_star_unchecked(&self, mu: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => (mu / (1.0 - mu)).ln(),
            LossKind::Squared => 2.0 * mu - 1.0,
            LossKind::SmoothedHinge => {
                if mu >= 0.5 {
                    (2.0 * mu - 1.0) / mu
                } else {
                    (2.0 * mu - 1.0) / (1.0 - mu)
                }
            }
            LossKind::Exponential => 0.5 * (mu / (1.0 - mu)).ln(),
        }
    }

    /// Inverse link, clamped into `[LINK_EPS, 1 - LINK_EPS]`.
    pub fn h_star_inv(&self, score: f64) -> f64 {
        let mu = match self.kind {
            LossKind::Logistic => sigmoid(score),
            LossKind::Squared => 0.5 * (1.0 + score),
            LossKind::SmoothedHinge => {
                if score >= 0.0 {
                    1.0 / (2.0 - score.min(1.0))
                } else {
                    let s = score.max(-1.0);
                    (1.0 + s) / (2.0 + s)
                }
            }
            LossKind::Exponential => sigmoid(2.0 * score),
        };
        mu.clamp(LINK_EPS, 1.0 - LINK_EPS)
    }

    /// Pointwise minimal conditional risk `l*(μ)`.
    pub fn l_star(&self, mu: f64) -> Result<f64> {
        check_prob(mu, "l*")?;
        Ok(self.l_star_unchecked(mu))
    }

    fn l_star_unchecked(&self, mu: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => -xlogx(mu) - xlogx(1.0 - mu),
            LossKind::Squared => 4.0 * mu * (1.0 - mu),
            LossKind::SmoothedHinge => {
                let p = mu.max(1.0 - mu);
                (1.0 - p) * (4.0 * p - 1.0) / (2.0 * p)
            }
            LossKind::Exponential => 2.0 * (mu * (1.0 - mu)).sqrt(),
        }
    }

    /// Closed-form derivative of `l*`.
    pub fn l_star_prime(&self, mu: f64) -> Result<f64> {
        check_prob(mu, "l*'")?;
        Ok(self.l_star_prime_unchecked(mu))
    }

    fn l_star_prime_unchecked(&self, mu: f64) -> f64 {
        match self.kind {
            LossKind::Logistic => ((1.0 - mu) / mu).ln(),
            LossKind::Squared => 4.0 - 8.0 * mu,
            LossKind::SmoothedHinge => {
                if mu >= 0.5 {
                    -2.0 + 0.5 / (mu * mu)
                } else {
                    2.0 - 0.5 / ((1.0 - mu) * (1.0 - mu))
                }
            }
            LossKind::Exponential => (1.0 - 2.0 * mu) / (mu * (1.0 - mu)).sqrt(),
        }
    }

    /// `d_{l*}(η1, η2) = -l*(η2) + l*(η1) + l*'(η1)(η2 - η1)`.
    pub fn bregman_divergence(&self, eta1: f64, eta2: f64) -> Result<f64> {
        check_prob(eta1, "bregman eta1")?;
        check_prob(eta2, "bregman eta2")?;
        if eta1 == eta2 {
            return Ok(0.0);
        }
        let d = -self.l_star_unchecked(eta2)
            + self.l_star_unchecked(eta1)
            + self.l_star_prime_unchecked(eta1) * (eta2 - eta1);
        // l* is concave, so negative values are rounding noise.
        Ok(d.max(0.0))
    }

    /// `m(δ) = max{h*(1/2 + δ), |h*(1/2 - δ)|}`.
    pub fn margin_m(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::domain(format!("delta must lie in (0, 1/2), got {delta}")));
        }
        if self.kind == LossKind::Logistic {
            // log((1+2δ)/(1-2δ)) without cancellation for small δ
            return Ok((2.0 * delta).ln_1p() - (-2.0 * delta).ln_1p());
        }
        let hi = self.h_star_unchecked(0.5 + delta);
        let lo = self.h_star_unchecked(0.5 - delta);
        Ok(hi.max(lo.abs()))
    }
}

fn check_prob(mu: f64, what: &str) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what}: argument {mu} outside (0, 1)")))
    }
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
