//! Gauss–Legendre rules and their tensor products over rectangles.

use std::f64::consts::PI;

/// `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are the roots of `P_n`, found by Newton iteration from the
    /// Chebyshev-like initial guesses `cos(π(i - 1/4)/(n + 1/2))`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Tensor-product rule mapped onto a rectangle, with weights normalised to
/// the uniform distribution (they sum to one).
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn on_rect(rule: &GaussLegendre, rect: &Rect) -> Self {
        let n = rule.order();
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        let (hx, mx) = (0.5 * (rect.x1 - rect.x0), 0.5 * (rect.x0 + rect.x1));
        let (hy, my) = (0.5 * (rect.y1 - rect.y0), 0.5 * (rect.y0 + rect.y1));
        for (xi, wi) in rule.nodes.iter().zip(&rule.weights) {
            for (yj, wj) in rule.nodes.iter().zip(&rule.weights) {
                points.push([mx + hx * xi, my + hy * yj]);
                weights.push(0.25 * wi * wj);
            }
        }
        TensorRule { points, weights }
    }

    /// Mean of `f` under the uniform distribution on the rectangle.
    pub fn mean(&self, f: impl Fn(&[f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_rules_match_tables() {
        let r2 = GaussLegendre::new(2);
        assert!((r2.nodes[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((r2.weights[0] - 1.0).abs() < 1e-15);
        let r3 = GaussLegendre::new(3);
        assert!((r3.nodes[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!(r3.nodes[1].abs() < 1e-15);
        assert!((r3.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_two_and_polynomials_exact() {
        for n in [1, 5, 16, 64] {
            let r = GaussLegendre::new(n);
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // exact for degree 2n - 1
            let deg = 2 * n - 1;
            let got = r.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert!((got - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn order_64_integrates_analytic_functions() {
        let r = GaussLegendre::new(64);
        let got = r.integrate(-1.0, 2.0, |x| (1.0 + (-3.0 * x).exp()).ln());
        // reference by composite Simpson with 2e6 panels
        let n = 2_000_000;
        let h = 3.0 / n as f64;
        let f = |x: f64| (1.0 + (-3.0 * x).exp()).ln();
        let mut s = f(-1.0) + f(2.0);
        for i in 1..n {
            let x = -1.0 + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        let simpson = s * h / 3.0;
        assert!((got - simpson).abs() < 1e-10);
    }

    #[test]
    fn tensor_rule_is_a_probability_rule() {
        let rect = Rect::new(1.1, 2.9, -1.0, 1.0);
        let rule = TensorRule::on_rect(&GaussLegendre::new(64), &rect);
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let mean_x = rule.mean(|p| p[0]);
        assert!((mean_x - 2.0).abs() < 1e-13);
        let second = rule.mean(|p| p[0] * p[0] + p[1] * p[1]);
        assert!((second - (4.0 + 1.8 * 1.8 / 12.0 + 1.0 / 3.0)).abs() < 1e-12);
    }
}
