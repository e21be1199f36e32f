//! One-dimensional numerical integration and interpolation helpers.
//!
//! The integration scheme used throughout the crate is composite
//! Gauss–Legendre quadrature with 64 nodes per panel: the interval is cut
//! into `2^level` equal panels and the level is raised until two successive
//! levels agree to the requested tolerance. All integrands in this crate
//! are smooth or piecewise linear, for which this converges very quickly.

use crate::{Error, Result};
use std::sync::OnceLock;

/// Nodes per quadrature panel.
const PANEL_NODES: usize = 64;
/// Hard cap on panel halving (2^12 panels of 64 nodes each).
const MAX_LEVEL: u32 = 12;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the `n`-point rule by Newton iteration on the Legendre
    /// polynomial `P_n`; nodes are its roots, weights `2/((1-x^2) P_n'(x)^2)`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "rule needs at least two nodes");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots come in symmetric pairs; solve the upper half and mirror.
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial approximation for the i-th root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Nodes on [-1, 1], ascending.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights matching [`Self::nodes`]; they sum to 2.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the rule to `f` on [a, b].
    pub fn apply<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Evaluates `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// The shared 64-point rule.
pub fn rule64() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_NODES))
}

/// Integrates `f` over [a, b] by composite 64-node Gauss–Legendre panels,
/// halving the panel width until two successive refinements agree to `tol`
/// (absolute, or relative for results larger than one in magnitude).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Parameter(format!(
            "integration bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let rule = rule64();
    let mut previous = f64::NAN;
    for level in 0..=MAX_LEVEL {
        let panels = 1usize << level;
        let width = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * width;
            total += rule.apply(&f, lo, lo + width);
        }
        if level > 0 && (total - previous).abs() <= tol * total.abs().max(1.0) {
            return Ok(total);
        }
        previous = total;
    }
    Err(Error::Numerical(format!(
        "quadrature on [{a}, {b}] did not reach tolerance {tol} within {} panels",
        1usize << MAX_LEVEL
    )))
}

/// [`integrate`] for integrands with jumps or kinks at known locations:
/// the interval is split at every breakpoint that falls inside it and the
/// pieces are integrated separately, so the panel refinement never
/// straddles a discontinuity. Breakpoints may be unsorted and outside
/// [a, b]; those are ignored.
pub fn integrate_split<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    breaks: &[f64],
) -> Result<f64> {
    if breaks.is_empty() {
        return integrate(f, a, b, tol);
    }
    let width = b - a;
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&c| c > a && c < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut lo = a;
    for c in cuts {
        // Skip cuts that coincide with the running left edge.
        if c - lo > 1e-12 * width.abs() {
            total += integrate(&f, lo, c, tol)?;
            lo = c;
        }
    }
    total += integrate(&f, lo, b, tol)?;
    Ok(total)
}

/// Integrates `f` over the whole line by expanding a symmetric window
/// around `center` until two successive expansions each contribute less
/// than `tol` relative to the running total.
///
/// Intended for integrands that decay at infinity but whose decay rate is
/// not known a priori (ratios of smoothed densities have much fatter tails
/// than their factors suggest).
pub fn integrate_whole_line<F: Fn(f64) -> f64>(
    f: F,
    center: f64,
    initial_half_width: f64,
    tol: f64,
) -> Result<f64> {
    integrate_whole_line_split(f, center, initial_half_width, tol, &[])
}

/// [`integrate_whole_line`] with known discontinuity locations; see
/// [`integrate_split`].
pub fn integrate_whole_line_split<F: Fn(f64) -> f64>(
    f: F,
    center: f64,
    initial_half_width: f64,
    tol: f64,
    breaks: &[f64],
) -> Result<f64> {
    const MAX_EXPANSIONS: usize = 60;
    let mut h = initial_half_width.abs().max(1e-6);
    let mut total = integrate_split(&f, center - h, center + h, tol, breaks)?;
    let mut lo = center - h;
    let mut hi = center + h;
    let mut quiet_rounds = 0;
    for _ in 0..MAX_EXPANSIONS {
        let left = integrate_split(&f, lo - h, lo, tol, breaks)?;
        let right = integrate_split(&f, hi, hi + h, tol, breaks)?;
        lo -= h;
        hi += h;
        total += left + right;
        if left.abs() + right.abs() <= tol * total.abs().max(1e-12) {
            quiet_rounds += 1;
            if quiet_rounds >= 2 {
                return Ok(total);
            }
        } else {
            quiet_rounds = 0;
        }
        // Grow the step so even slowly decaying tails (1/x², say) are
        // crossed in logarithmically many rounds rather than linearly many.
        h *= 1.6;
    }
    Err(Error::Numerical(format!(
        "whole-line quadrature around {center} still gaining mass after {MAX_EXPANSIONS} window expansions"
    )))
}

/// Natural cubic spline through strictly increasing knots.
///
/// Used to tabulate expensive smooth functions (smoothed densities and
/// their convolutions) once on a fine grid, after which evaluation is
/// O(log n). Queries outside the knot range clamp to the nearest end;
/// callers are expected to build grids covering every point they query.
#[derive(Debug, Clone)]
pub struct Spline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl Spline {
    /// Fits the spline; `xs` must be strictly increasing and at least 3 long.
    pub fn fit(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Parameter(format!(
                "spline needs matching grids, got {} knots and {} values",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 3 {
            return Err(Error::Parameter("spline needs at least 3 knots".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("spline knots must strictly increase".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::Parameter("spline values must be finite".into()));
        }
        let n = xs.len();
        // Solve the tridiagonal system for second derivatives (natural ends).
        let mut second = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for i in 1..n - 1 {
            let sig = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
            let p = sig * second[i - 1] + 2.0;
            second[i] = (sig - 1.0) / p;
            let slope_right = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
            let slope_left = (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
            scratch[i] =
                (6.0 * (slope_right - slope_left) / (xs[i + 1] - xs[i - 1]) - sig * scratch[i - 1]) / p;
        }
        for i in (1..n - 1).rev() {
            second[i] = second[i] * second[i + 1] + scratch[i];
        }
        second[0] = 0.0;
        second[n - 1] = 0.0;
        Ok(Spline { xs, ys, second })
    }

    /// Evaluates the spline, clamping `x` into the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let idx = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.xs[idx + 1] - self.xs[idx];
        let a = (self.xs[idx + 1] - x) / h;
        let b = (x - self.xs[idx]) / h;
        a * self.ys[idx]
            + b * self.ys[idx + 1]
            + ((a * a * a - a) * self.second[idx] + (b * b * b - b) * self.second[idx + 1])
                * h
                * h
                / 6.0
    }

    /// First knot.
    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    /// Last knot.
    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_symmetric_and_normalized() {
        let rule = rule64();
        let n = rule.nodes().len();
        assert_eq!(n, 64);
        let weight_sum: f64 = rule.weights().iter().sum();
        assert!((weight_sum - 2.0).abs() < 1e-14, "weights sum to {weight_sum}");
        for i in 0..n {
            assert!(
                (rule.nodes()[i] + rule.nodes()[n - 1 - i]).abs() < 1e-14,
                "nodes not symmetric at {i}"
            );
            assert!((rule.weights()[i] - rule.weights()[n - 1 - i]).abs() < 1e-14);
        }
    }

    #[test]
    fn integrates_polynomials_exactly() {
        // 64-node Gauss-Legendre is exact for degree <= 127.
        let got = integrate(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-14);
        let got = integrate(|x| x.powi(7) - 3.0 * x.powi(2) + 1.0, -2.0, 3.0, 1e-12).unwrap();
        let exact = (3.0f64.powi(8) - (-2.0f64).powi(8)) / 8.0 - (3.0f64.powi(3) - (-2.0f64).powi(3))
            + 5.0;
        assert!((got - exact).abs() < 1e-11 * exact.abs());
    }

    #[test]
    fn integrates_gaussian_density_to_one() {
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let got = integrate(pdf, -10.0, 10.0, 1e-12).unwrap();
        assert!((got - 1.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn whole_line_handles_slow_tails() {
        // Cauchy-like decay is the nastiest case we care about.
        let f = |x: f64| 1.0 / (1.0 + x * x);
        let got = integrate_whole_line(f, 0.0, 2.0, 1e-9).unwrap();
        assert!(
            (got - std::f64::consts::PI).abs() < 1e-6,
            "got {got}, want pi"
        );
        // Shifted Gaussian: window must find mass away from the center hint.
        let g = |x: f64| (-0.5 * (x - 5.0) * (x - 5.0)).exp();
        let got = integrate_whole_line(g, 0.0, 1.0, 1e-10).unwrap();
        let exact = (2.0 * std::f64::consts::PI).sqrt();
        assert!((got - exact).abs() < 1e-8, "got {got}, want {exact}");
    }

    #[test]
    fn unconverged_quadrature_reports_failure() {
        // A pathologically oscillatory integrand cannot reach 1e-14 agreement.
        let f = |x: f64| (1e7 * x).sin() * (1e5 * x).cos();
        assert!(matches!(
            integrate(f, 0.0, 1.0, 1e-14),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn spline_reproduces_smooth_functions() {
        let xs: Vec<f64> = (0..=400).map(|i| -4.0 + i as f64 * 0.02).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let s = Spline::fit(xs, ys).unwrap();
        for i in 0..=1000 {
            let x = -3.9 + i as f64 * 0.0078;
            assert!(
                (s.eval(x) - x.sin()).abs() < 1e-7,
                "spline off at {x}: {} vs {}",
                s.eval(x),
                x.sin()
            );
        }
    }

    #[test]
    fn spline_is_exact_for_straight_lines() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
        let s = Spline::fit(xs, ys).unwrap();
        for i in 0..90 {
            let x = i as f64 * 0.1;
            assert!((s.eval(x) - (3.0 * x - 7.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_rejects_bad_grids() {
        assert!(Spline::fit(vec![0.0, 0.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Spline::fit(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(Spline::fit(vec![0.0, 1.0, 2.0], vec![1.0, f64::NAN, 3.0]).is_err());
    }
}
