//! Closed-form thresholds and bounds for exponential convergence of the
//! expected classification error.
//!
//! All calculators are pure. Bounds that hold only under a threshold or a
//! learning-rate condition take a `force` flag: without it a violated
//! condition is an error, with it the value is computed and a warning logged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossSpec;

/// `2⁹ · 9`, the constant of the vanilla SGD exponent.
pub const SGD_EXPONENT_CONST: f64 = 4608.0;
/// `2¹⁰ · 9`, the constant of the averaged SGD exponent.
pub const ASGD_EXPONENT_CONST: f64 = 9216.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Gradient bound `M`.
    #[serde(rename = "M")]
    pub grad_bound: f64,
    /// Smoothness `L`.
    #[serde(rename = "L")]
    pub smoothness: f64,
    /// Kernel bound `R`.
    #[serde(rename = "R")]
    pub kernel_bound: f64,
    pub delta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma_sq: f64,
    /// `L_λ(g_1) - L_λ(g_λ)`.
    pub init_gap: f64,
    /// `‖g_1 - g_λ‖`.
    pub init_dist: f64,
    /// `‖g_1‖`.
    #[serde(default)]
    pub init_norm: f64,
}

impl ProblemConstants {
    /// Constants with zero variance and a zero initial gap, distance and norm.
    pub fn new(
        grad_bound: f64,
        smoothness: f64,
        kernel_bound: f64,
        delta: f64,
        lambda: f64,
        gamma: f64,
    ) -> Result<Self> {
        let c = ProblemConstants {
            grad_bound,
            smoothness,
            kernel_bound,
            delta,
            lambda,
            gamma,
            sigma_sq: 0.0,
            init_gap: 0.0,
            init_dist: 0.0,
            init_norm: 0.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("M", self.grad_bound),
            ("L", self.smoothness),
            ("R", self.kernel_bound),
            ("λ", self.lambda),
            ("γ", self.gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let nonneg = [
            ("σ²", self.sigma_sq),
            ("init_gap", self.init_gap),
            ("init_dist", self.init_dist),
            ("init_norm", self.init_norm),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::domain(format!("δ must lie in (0, 1/2), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn eta1(&self) -> f64 {
        2.0 / (self.lambda * (self.gamma + 1.0))
    }

    pub fn rate_conditions(&self) -> RateConditions {
        let eta1 = self.eta1();
        let half = 0.5 / self.lambda;
        let vanilla_cap = (1.0 / (self.smoothness + self.lambda)).min(half);
        let averaged_cap = (1.0 / self.smoothness).min(half);
        let ball = (2.0 * eta1 + 1.0 / self.lambda) * self.grad_bound * self.kernel_bound;
        RateConditions {
            eta1,
            vanilla_cap,
            averaged_cap,
            vanilla: eta1 <= vanilla_cap,
            averaged: eta1 <= averaged_cap,
            init_ball: ball,
            init_ok: self.init_norm <= ball,
        }
    }
}

/// Learning-rate and initialization conditions for the given constants.
///
/// `vanilla` and `averaged` can disagree: the first uses `1/(L+λ)`, the
/// second `1/L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConditions {
    pub eta1: f64,
    pub vanilla_cap: f64,
    pub averaged_cap: f64,
    pub vanilla: bool,
    pub averaged: bool,
    pub init_ball: f64,
    pub init_ok: bool,
}

fn enforce(ok: bool, force: bool, what: &str, lhs: f64, rhs: f64) -> Result<()> {
    if ok {
        return Ok(());
    }
    if force {
        log::warn!("{what} violated ({lhs} vs {rhs}); computing anyway");
        Ok(())
    } else {
        Err(Error::Threshold {
            what: what.to_string(),
            lhs,
            rhs,
        })
    }
}

/// `ν = max{(2/λ²)(L+λ)σ², (1+γ)(L_λ(g_1) - L_λ(g_λ))}`.
pub fn nu(c: &ProblemConstants) -> f64 {
    let variance = 2.0 / (c.lambda * c.lambda) * (c.smoothness + c.lambda) * c.sigma_sq;
    let gap = (1.0 + c.gamma) * c.init_gap;
    variance.max(gap)
}

/// `32R²ν / (m²(δ)λ) - γ`.
pub fn sgd_threshold(c: &ProblemConstants, loss: &LossSpec) -> Result<f64> {
    let m = loss.margin_m(c.delta)?;
    Ok(32.0 * c.kernel_bound.powi(2) * nu(c) / (m * m * c.lambda) - c.gamma)
}

fn sgd_exponent(c: &ProblemConstants, m: f64, iterations: f64) -> f64 {
    m * m * c.lambda * c.lambda * (c.gamma + iterations)
        / (SGD_EXPONENT_CONST * c.grad_bound.powi(2) * c.kernel_bound.powi(4))
}

fn asgd_exponent(c: &ProblemConstants, m: f64, iterations: f64) -> f64 {
    m * m * c.lambda * c.lambda * (2.0 * c.gamma + iterations)
        / (ASGD_EXPONENT_CONST * c.grad_bound.powi(2) * c.kernel_bound.powi(4))
}

/// `2 exp(-m²λ²(γ+T) / (4608 M²R⁴))`, valid for `T ≥` [`sgd_threshold`].
pub fn sgd_bound(c: &ProblemConstants, loss: &LossSpec, iterations: u64, force: bool) -> Result<f64> {
    let threshold = sgd_threshold(c, loss)?;
    let t = iterations as f64;
    enforce(t >= threshold, force, "SGD iteration threshold", t, threshold)?;
    let m = loss.margin_m(c.delta)?;
    Ok(2.0 * (-sgd_exponent(c, m, t)).exp())
}

/// Both sides of the averaged-SGD threshold condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// `max{36M²R²/(λ²(2γ+T)), γ(γ-1)‖g_1-g_λ‖²/((2γ+T)(T+1))} ≤ m²(δ)/(32R²)`.
pub fn asgd_threshold_check(c: &ProblemConstants, loss: &LossSpec, iterations: u64) -> Result<ThresholdCheck> {
    let m = loss.margin_m(c.delta)?;
    let t = iterations as f64;
    let r2 = c.kernel_bound.powi(2);
    let first = 36.0 * c.grad_bound.powi(2) * r2 / (c.lambda * c.lambda * (2.0 * c.gamma + t));
    let second = c.gamma * (c.gamma - 1.0) * c.init_dist.powi(2) / ((2.0 * c.gamma + t) * (t + 1.0));
    let lhs = first.max(second);
    let rhs = m * m / (32.0 * r2);
    Ok(ThresholdCheck {
        holds: lhs <= rhs,
        lhs,
        rhs,
    })
}

/// `2 exp(-m²λ²(2γ+T) / (9216 M²R⁴))`, valid when [`asgd_threshold_check`] holds.
pub fn asgd_bound(c: &ProblemConstants, loss: &LossSpec, iterations: u64, force: bool) -> Result<f64> {
    let check = asgd_threshold_check(c, loss, iterations)?;
    enforce(check.holds, force, "averaged SGD threshold", check.lhs, check.rhs)?;
    let m = loss.margin_m(c.delta)?;
    Ok(2.0 * (-asgd_exponent(c, m, iterations as f64)).exp())
}

/// Averaged-SGD bound for logistic loss with a Gaussian kernel (`M = R = 1`):
/// `2 exp(-λ²(2γ+T) log²((1+2δ)/(1-2δ)) / 9216)`.
pub fn corollary_bound(delta: f64, lambda: f64, gamma: f64, iterations: u64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::domain(format!("δ must lie in (0, 1/2), got {delta}")));
    }
    let log_odds = (2.0 * delta).ln_1p() - (-2.0 * delta).ln_1p();
    Ok(
        2.0 * (-(lambda * lambda * (2.0 * gamma + iterations as f64) * log_odds * log_odds) / ASGD_EXPONENT_CONST)
            .exp(),
    )
}

/// Smallest real `T` with the averaged bound at most `eps`:
/// `(9216 M²R⁴ / (m²λ²)) log(2/eps) - 2γ`.
pub fn iteration_complexity(c: &ProblemConstants, loss: &LossSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 2.0) {
        return Err(Error::domain(format!("ε must lie in (0, 2], got {eps}")));
    }
    let m = loss.margin_m(c.delta)?;
    let scale = ASGD_EXPONENT_CONST * c.grad_bound.powi(2) * c.kernel_bound.powi(4) / (m * m * c.lambda * c.lambda);
    Ok(scale * (2.0 / eps).ln() - 2.0 * c.gamma)
}

/// `‖E[g_T] - g_λ‖² ≤ 2ν / (λ(γ+T))`, valid for `η_1 ≤ 1/(L+λ)`.
pub fn expected_iterate_bound(c: &ProblemConstants, iterations: u64, force: bool) -> Result<f64> {
    let eta1 = c.eta1();
    let cap = 1.0 / (c.smoothness + c.lambda);
    enforce(eta1 <= cap, force, "learning rate η_1 ≤ 1/(L+λ)", eta1, cap)?;
    Ok(2.0 * nu(c) / (c.lambda * (c.gamma + iterations as f64)))
}

/// Bound on the summed squared sup-norms of the martingale differences:
/// `144M²R²/(λ²(γ+T))`, or `288M²R²/(λ²(2γ+T))` for the averaged iterate.
pub fn martingale_sum_bound(c: &ProblemConstants, iterations: u64, averaged: bool, force: bool) -> Result<f64> {
    let cond = c.rate_conditions();
    enforce(
        cond.averaged,
        force,
        "learning rate η_1 ≤ min{1/L, 1/(2λ)}",
        cond.eta1,
        cond.averaged_cap,
    )?;
    enforce(
        cond.init_ok,
        force,
        "initialization ‖g_1‖ ≤ (2η_1 + 1/λ)MR",
        c.init_norm,
        cond.init_ball,
    )?;
    let t = iterations as f64;
    let mr2 = c.grad_bound.powi(2) * c.kernel_bound.powi(2);
    let l2 = c.lambda * c.lambda;
    Ok(if averaged {
        288.0 * mr2 / (l2 * (2.0 * c.gamma + t))
    } else {
        144.0 * mr2 / (l2 * (c.gamma + t))
    })
}

/// `m(δ) / (2R)`: every `g` that close to `g_λ` in norm is Bayes-optimal
/// once `g_λ` is close enough to `g_*`.
pub fn bayes_region_radius(c: &ProblemConstants, loss: &LossSpec) -> Result<f64> {
    Ok(loss.margin_m(c.delta)? / (2.0 * c.kernel_bound))
}

/// Recomposition of the theorem bound from the martingale-sum bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    /// `2 exp(-m² / (32R² c_T²))` with `c_T²` from [`martingale_sum_bound`].
    pub composed: f64,
    pub theorem: f64,
    /// `|composed - theorem| / theorem`.
    pub residual: f64,
}

/// Compare the concentration bound built from `c_T²` with the theorem bound.
/// Conditions are not checked: this is an algebraic identity.
pub fn concentration_cross_check(
    c: &ProblemConstants,
    loss: &LossSpec,
    iterations: u64,
    averaged: bool,
) -> Result<CrossCheck> {
    let m = loss.margin_m(c.delta)?;
    let ct2 = martingale_sum_bound(c, iterations, averaged, true)?;
    let composed = 2.0 * (-(m * m) / (32.0 * c.kernel_bound.powi(2) * ct2)).exp();
    let t = iterations as f64;
    let exponent = if averaged {
        asgd_exponent(c, m, t)
    } else {
        sgd_exponent(c, m, t)
    };
    let theorem = 2.0 * (-exponent).exp();
    let residual = if theorem > 0.0 {
        (composed - theorem).abs() / theorem
    } else {
        (composed - theorem).abs()
    };
    Ok(CrossCheck {
        composed,
        theorem,
        residual,
    })
}

/// Per-`T` entries of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryAtT {
    #[serde(rename = "T")]
    pub iterations: u64,
    pub sgd_bound: f64,
    pub sgd_bound_valid: bool,
    pub asgd_threshold_lhs: f64,
    pub asgd_threshold_rhs: f64,
    pub asgd_threshold_holds: bool,
    pub asgd_bound: f64,
    pub martingale_bounds: MartingaleBounds,
    pub cross_check_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleBounds {
    pub vanilla: f64,
    pub averaged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEntry {
    pub eps: f64,
    pub iterations: f64,
}

/// Everything the calculators produce for a set of horizons and accuracies.
///
/// Bounds whose conditions fail are still reported, with a validity flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub loss: String,
    pub constants: ProblemConstants,
    pub rate_conditions: RateConditions,
    pub margin_m: f64,
    pub nu: f64,
    pub sgd_threshold: f64,
    pub bayes_radius: f64,
    pub per_t: Vec<TheoryAtT>,
    pub complexity: Vec<ComplexityEntry>,
    pub max_cross_check_residual: f64,
}

impl TheoryReport {
    pub fn build(c: &ProblemConstants, loss: &LossSpec, ts: &[u64], eps: &[f64]) -> Result<Self> {
        c.validate()?;
        let sgd_threshold = sgd_threshold(c, loss)?;
        let mut per_t = Vec::with_capacity(ts.len());
        let mut max_residual: f64 = 0.0;
        for &t in ts {
            let check = asgd_threshold_check(c, loss, t)?;
            let vanilla = concentration_cross_check(c, loss, t, false)?;
            let averaged = concentration_cross_check(c, loss, t, true)?;
            let residual = vanilla.residual.max(averaged.residual);
            max_residual = max_residual.max(residual);
            per_t.push(TheoryAtT {
                iterations: t,
                sgd_bound: sgd_bound(c, loss, t, true)?,
                sgd_bound_valid: t as f64 >= sgd_threshold,
                asgd_threshold_lhs: check.lhs,
                asgd_threshold_rhs: check.rhs,
                asgd_threshold_holds: check.holds,
                asgd_bound: asgd_bound(c, loss, t, true)?,
                martingale_bounds: MartingaleBounds {
                    vanilla: martingale_sum_bound(c, t, false, true)?,
                    averaged: martingale_sum_bound(c, t, true, true)?,
                },
                cross_check_residual: residual,
            });
        }
        let complexity = eps
            .iter()
            .map(|&e| {
                Ok(ComplexityEntry {
                    eps: e,
                    iterations: iteration_complexity(c, loss, e)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TheoryReport {
            loss: loss.name().to_string(),
            constants: *c,
            rate_conditions: c.rate_conditions(),
            margin_m: loss.margin_m(c.delta)?,
            nu: nu(c),
            sgd_threshold,
            bayes_radius: bayes_region_radius(c, loss)?,
            per_t,
            complexity,
            max_cross_check_residual: max_residual,
        })
    }
}
