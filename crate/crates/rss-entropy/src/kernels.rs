//! Univariate kernel functions and their p-variate product form.
//!
//! Two families are provided:
//!
//! * [`scaled_gaussian`] — `k0(u) = (4π)^{-1/2} exp(-u²/4)`, a normal
//!   density with variance 2. It integrates to one and satisfies the
//!   weighted-second-moment balance `∫ v² k0²(v) dv = κ02`, but its plain
//!   second moment is 2 (not 1) and its center value does not match
//!   `κ02 / 2^{1/p}`; both departures are deliberate and tested as such.
//! * [`piecewise_joe`] — an even, compactly supported, piecewise-linear
//!   kernel rising from height `η1` at the origin to a peak at `±ξ1` and
//!   falling linearly to zero at `±ξ2`. For each target dimension
//!   `p = 1..4` its constants solve the five-constraint system
//!   {unit mass, unit second moment, continuity at `ξ1`,
//!   `k0(0) = κ02/2^{1/p}`, `∫ v² k0² dv = κ02`}. The constants are solved
//!   once by [`solve_piecewise_constants`], frozen into a table here, and
//!   re-verified against a fresh solve and by quadrature in the tests. The
//!   checked-in report lives at `data/kernel_constants.txt` and is
//!   regenerated by the `derive_kernel_constants` binary.

use serde::{Deserialize, Serialize};

use crate::quad::{integrate, integrate_split};
use crate::{Error, Result};

/// Kernel family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Normal density with variance 2 (infinite support).
    ScaledGaussian,
    /// Piecewise-linear compact kernel with dimension-specific constants.
    PiecewiseJoe,
}

/// Solved constants of the piecewise-linear kernel for one dimension.
///
/// The kernel is parameterized by its knots and two heights:
/// center height `a = k0(0)` and peak height `h = k0(±ξ1)`; on `|u| ≤ ξ1`
/// it is `η1 + η2|u|` and on `ξ1 < |u| ≤ ξ2` it is `η3 - η4|u|`, zero
/// beyond. The slope form is derived from `(a, h, ξ1, ξ2)` so continuity
/// at `ξ1` and the zero at `ξ2` hold by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoeConstants {
    /// Dimension the constants were solved for (enters via `k0(0) = κ02/2^{1/p}`).
    pub p: usize,
    /// Inner knot (peak location).
    pub xi1: f64,
    /// Outer knot (support boundary).
    pub xi2: f64,
    /// Center height `k0(0)`.
    pub a: f64,
    /// Peak height `k0(±ξ1)`.
    pub h: f64,
    /// `∫ k0²(u) du` implied by the solved constants.
    pub kappa02: f64,
}

impl JoeConstants {
    /// Intercept of the inner segment.
    pub fn eta1(&self) -> f64 {
        self.a
    }

    /// Slope of the inner segment.
    pub fn eta2(&self) -> f64 {
        (self.h - self.a) / self.xi1
    }

    /// Intercept of the outer segment.
    pub fn eta3(&self) -> f64 {
        self.h * self.xi2 / (self.xi2 - self.xi1)
    }

    /// Negative slope of the outer segment.
    pub fn eta4(&self) -> f64 {
        self.h / (self.xi2 - self.xi1)
    }

    fn k0(&self, u: f64) -> f64 {
        let au = u.abs();
        if au <= self.xi1 {
            self.eta1() + self.eta2() * au
        } else if au < self.xi2 {
            (self.eta3() - self.eta4() * au).max(0.0)
        } else {
            0.0
        }
    }
}

/// Constants frozen from [`solve_piecewise_constants`], one row per
/// dimension `p = 1..4`: `(p, ξ1, ξ2, a, h, κ02)`.
const FROZEN_JOE: [(usize, f64, f64, f64, f64, f64); 4] = [
    (
        1,
        1.177_466_024_108_054_1,
        1.860_155_993_876_15,
        0.155_846_041_681_994_4,
        0.438_939_843_548_457_94,
        0.311_692_083_363_989_4,
    ),
    (
        2,
        1.318_498_988_231_337_4,
        1.858_031_207_729_081_3,
        0.210_813_716_619_194_68,
        0.388_606_135_854_304_2,
        0.298_135_617_177_143_04,
    ),
    (
        3,
        1.403_992_358_262_394_8,
        1.844_482_830_081_729_8,
        0.233_340_755_349_180_06,
        0.364_541_947_288_705_5,
        0.293_990_929_462_801_7,
    ),
    (
        4,
        1.460_279_114_049_890_3,
        1.831_899_954_528_936_3,
        0.245_644_629_844_584_02,
        0.350_068_395_369_517_95,
        0.292_122_341_573_388_9,
    ),
];

/// A univariate kernel plus the precomputed scalars the estimators need.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    family: KernelFamily,
    joe: Option<JoeConstants>,
    k0_zero: f64,
    kappa02: f64,
}

impl KernelSpec {
    /// Which family this spec belongs to.
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// The solved piecewise constants, if this is a piecewise kernel.
    pub fn joe_constants(&self) -> Option<&JoeConstants> {
        self.joe.as_ref()
    }

    /// Evaluates the univariate kernel.
    pub fn k0(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::ScaledGaussian => {
                (4.0 * std::f64::consts::PI).sqrt().recip() * (-0.25 * u * u).exp()
            }
            KernelFamily::PiecewiseJoe => self.joe.as_ref().expect("piecewise constants").k0(u),
        }
    }

    /// Evaluates the product kernel `K_p(u) = ∏_j k0(u_j)`.
    pub fn product(&self, u: &[f64]) -> f64 {
        let mut acc = 1.0;
        for &uj in u {
            let k = self.k0(uj);
            if k == 0.0 {
                return 0.0;
            }
            acc *= k;
        }
        acc
    }

    /// `k0(0)`.
    pub fn k0_zero(&self) -> f64 {
        self.k0_zero
    }

    /// `κ02 = ∫ k0²(u) du`.
    pub fn kappa02(&self) -> f64 {
        self.kappa02
    }

    /// `κ2 = ∫ K_p²(u) du = κ02^p` for the product kernel of dimension `p`.
    pub fn kappa2(&self, p: usize) -> f64 {
        self.kappa02.powi(p as i32)
    }

    /// Half-width of the kernel support; `None` for infinite support.
    pub fn support_radius(&self) -> Option<f64> {
        self.joe.as_ref().map(|c| c.xi2)
    }
}

/// The Gaussian-type kernel `k0(u) = (4π)^{-1/2} exp(-u²/4)`.
pub fn scaled_gaussian() -> KernelSpec {
    KernelSpec {
        family: KernelFamily::ScaledGaussian,
        joe: None,
        k0_zero: (4.0 * std::f64::consts::PI).sqrt().recip(),
        // ∫ k0² = 1/(2 sqrt(2 pi)); k0² is proportional to a standard normal density.
        kappa02: 0.5 * (2.0 * std::f64::consts::PI).sqrt().recip(),
    }
}

/// The piecewise-linear kernel with constants frozen for dimension `p ∈ 1..=4`.
pub fn piecewise_joe(p: usize) -> Result<KernelSpec> {
    let row = FROZEN_JOE
        .iter()
        .find(|row| row.0 == p)
        .ok_or_else(|| Error::Parameter(format!("piecewise kernel constants exist for p in 1..=4, got p={p}")))?;
    let joe = JoeConstants {
        p: row.0,
        xi1: row.1,
        xi2: row.2,
        a: row.3,
        h: row.4,
        kappa02: row.5,
    };
    Ok(KernelSpec {
        family: KernelFamily::PiecewiseJoe,
        k0_zero: joe.a,
        kappa02: joe.kappa02,
        joe: Some(joe),
    })
}

/// Closed-form pieces used by the constraint solver. Given the knots,
/// the two mass constraints are linear in the heights:
/// `a ξ1 + h ξ2 = 1` (unit mass) and
/// `a ξ1³ + h (ξ2³ + ξ2² ξ1 + ξ2 ξ1²) = 6` (unit second moment).
fn heights_for_knots(xi1: f64, xi2: f64) -> Option<(f64, f64)> {
    let c = xi2 * xi2 * xi2 + xi2 * xi2 * xi1 + xi2 * xi1 * xi1;
    let det = xi1 * c - xi2 * xi1 * xi1 * xi1;
    if det.abs() < 1e-12 {
        return None;
    }
    let a = (c - 6.0 * xi2) / det;
    let h = (6.0 * xi1 - xi1 * xi1 * xi1) / det;
    Some((a, h))
}

/// `∫ k0²` in closed form for given knots and heights.
fn kappa02_closed(xi1: f64, xi2: f64, a: f64, h: f64) -> f64 {
    (2.0 / 3.0) * (xi1 * (a * a + a * h + h * h) + h * h * (xi2 - xi1))
}

/// `∫ u² k0²` in closed form for given knots and heights.
fn weighted_square_closed(xi1: f64, xi2: f64, a: f64, h: f64) -> f64 {
    let inner = xi1.powi(3) * (a * a / 3.0 + a * (h - a) / 2.0 + (h - a) * (h - a) / 5.0);
    let outer = h * h / ((xi2 - xi1) * (xi2 - xi1))
        * (xi2 * xi2 * (xi2.powi(3) - xi1.powi(3)) / 3.0 - xi2 * (xi2.powi(4) - xi1.powi(4)) / 2.0
            + (xi2.powi(5) - xi1.powi(5)) / 5.0);
    2.0 * (inner + outer)
}

/// Residuals of the two nonlinear constraints at given knots (the linear
/// mass constraints are folded in exactly through [`heights_for_knots`]).
fn joe_residuals(p: usize, xi1: f64, xi2: f64) -> Option<[f64; 2]> {
    if !(0.0 < xi1 && xi1 < xi2) {
        return None;
    }
    let (a, h) = heights_for_knots(xi1, xi2)?;
    let k02 = kappa02_closed(xi1, xi2, a, h);
    Some([
        a - k02 / 2f64.powf(1.0 / p as f64),
        weighted_square_closed(xi1, xi2, a, h) - k02,
    ])
}

/// Solves the piecewise kernel's constraint system for dimension `p` by a
/// coarse grid scan followed by a damped two-dimensional Newton iteration
/// with finite-difference Jacobian. Deterministic; used to populate (and
/// in tests to re-verify) the frozen constants table.
pub fn solve_piecewise_constants(p: usize) -> Result<JoeConstants> {
    if !(1..=4).contains(&p) {
        return Err(Error::Parameter(format!(
            "piecewise kernel constants are defined for p in 1..=4, got p={p}"
        )));
    }
    // Scan for the basin with positive heights.
    let mut best = (f64::INFINITY, 1.0, 2.0);
    for i in 0..60 {
        let xi1 = 0.05 + 2.95 * i as f64 / 59.0;
        for j in 0..60 {
            let xi2 = xi1 + 0.05 + (6.0 - xi1 - 0.05) * j as f64 / 59.0;
            let Some((a, h)) = heights_for_knots(xi1, xi2) else {
                continue;
            };
            if a <= 0.0 || h <= 0.0 {
                continue;
            }
            if let Some(r) = joe_residuals(p, xi1, xi2) {
                let s = r[0] * r[0] + r[1] * r[1];
                if s < best.0 {
                    best = (s, xi1, xi2);
                }
            }
        }
    }
    let (mut xi1, mut xi2) = (best.1, best.2);
    let mut residual = joe_residuals(p, xi1, xi2)
        .ok_or_else(|| Error::Numerical("no feasible starting knots for kernel solve".into()))?;
    for _ in 0..200 {
        let norm = residual[0].abs().max(residual[1].abs());
        if norm < 1e-13 {
            let (a, h) = heights_for_knots(xi1, xi2).expect("solved knots are feasible");
            return Ok(JoeConstants {
                p,
                xi1,
                xi2,
                a,
                h,
                kappa02: kappa02_closed(xi1, xi2, a, h),
            });
        }
        // Central-difference Jacobian.
        let eps = 1e-7;
        let r_x1p = joe_residuals(p, xi1 + eps, xi2);
        let r_x1m = joe_residuals(p, xi1 - eps, xi2);
        let r_x2p = joe_residuals(p, xi1, xi2 + eps);
        let r_x2m = joe_residuals(p, xi1, xi2 - eps);
        let (Some(r_x1p), Some(r_x1m), Some(r_x2p), Some(r_x2m)) = (r_x1p, r_x1m, r_x2p, r_x2m)
        else {
            return Err(Error::Numerical(
                "kernel constant solve stepped outside the feasible knot region".into(),
            ));
        };
        let j11 = (r_x1p[0] - r_x1m[0]) / (2.0 * eps);
        let j12 = (r_x2p[0] - r_x2m[0]) / (2.0 * eps);
        let j21 = (r_x1p[1] - r_x1m[1]) / (2.0 * eps);
        let j22 = (r_x2p[1] - r_x2m[1]) / (2.0 * eps);
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-14 {
            return Err(Error::Numerical(
                "singular Jacobian in kernel constant solve".into(),
            ));
        }
        let dx1 = (residual[0] * j22 - residual[1] * j12) / det;
        let dx2 = (j11 * residual[1] - j21 * residual[0]) / det;
        // Damped update: halve the step until the residual improves.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (n1, n2) = (xi1 - scale * dx1, xi2 - scale * dx2);
            if let Some(r_new) = joe_residuals(p, n1, n2) {
                if r_new[0].abs().max(r_new[1].abs()) < norm {
                    xi1 = n1;
                    xi2 = n2;
                    residual = r_new;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::Numerical(format!(
        "kernel constant solve for p={p} stalled at residual ({:.3e}, {:.3e}) near knots ({xi1:.6}, {xi2:.6})",
        residual[0], residual[1]
    )))
}

/// Renders the constants table checked in at `data/kernel_constants.txt`:
/// per family and dimension, the solved constants and the quadrature
/// residual of every constraint.
pub fn constants_report() -> Result<String> {
    use std::fmt::Write as _;
    let mut out = String::new();
    out.push_str("# Univariate kernel constants with quadrature residuals per constraint.\n");
    out.push_str("# Regenerate: cargo run -p rss-entropy --bin derive_kernel_constants\n");
    let g = scaled_gaussian();
    writeln!(out, "\n[scaled_gaussian]").unwrap();
    writeln!(out, "k0_zero = {:.17e}", g.k0_zero()).unwrap();
    writeln!(out, "kappa02 = {:.17e}", g.kappa02()).unwrap();
    let mass = integrate(|u| g.k0(u), -20.0, 20.0, 1e-10)?;
    let second = integrate(|u| u * u * g.k0(u), -20.0, 20.0, 1e-10)?;
    let k02 = integrate(|u| g.k0(u) * g.k0(u), -20.0, 20.0, 1e-10)?;
    let weighted = integrate(|u| u * u * g.k0(u) * g.k0(u), -20.0, 20.0, 1e-10)?;
    writeln!(out, "residual_unit_mass = {:.3e}", mass - 1.0).unwrap();
    writeln!(
        out,
        "second_moment = {second:.12} # equals 2, not 1: the unit-second-moment condition is not imposed on this family"
    )
    .unwrap();
    writeln!(out, "residual_weighted_square = {:.3e}", weighted / k02 - 1.0).unwrap();
    for row in &FROZEN_JOE {
        let spec = piecewise_joe(row.0)?;
        let c = spec.joe_constants().unwrap();
        let lim = c.xi2;
        writeln!(out, "\n[piecewise p={}]", c.p).unwrap();
        writeln!(out, "xi1 = {:.17e}", c.xi1).unwrap();
        writeln!(out, "xi2 = {:.17e}", c.xi2).unwrap();
        writeln!(out, "eta1 = {:.17e}", c.eta1()).unwrap();
        writeln!(out, "eta2 = {:.17e}", c.eta2()).unwrap();
        writeln!(out, "eta3 = {:.17e}", c.eta3()).unwrap();
        writeln!(out, "eta4 = {:.17e}", c.eta4()).unwrap();
        writeln!(out, "kappa02 = {:.17e}", c.kappa02).unwrap();
        // The profile is piecewise linear, so cutting at its knots makes
        // each panel a polynomial the fixed rule integrates exactly.
        let cuts = [-c.xi1, 0.0, c.xi1];
        let mass = integrate_split(|u| spec.k0(u), -lim, lim, 1e-10, &cuts)?;
        let second = integrate_split(|u| u * u * spec.k0(u), -lim, lim, 1e-10, &cuts)?;
        let k02 = integrate_split(|u| spec.k0(u) * spec.k0(u), -lim, lim, 1e-10, &cuts)?;
        let weighted = integrate_split(|u| u * u * spec.k0(u) * spec.k0(u), -lim, lim, 1e-10, &cuts)?;
        writeln!(out, "residual_unit_mass = {:.3e}", mass - 1.0).unwrap();
        writeln!(out, "residual_unit_second_moment = {:.3e}", second - 1.0).unwrap();
        writeln!(
            out,
            "residual_center_height = {:.3e}",
            spec.k0(0.0) - k02 / 2f64.powf(1.0 / c.p as f64)
        )
        .unwrap();
        writeln!(out, "residual_weighted_square = {:.3e}", weighted / k02 - 1.0).unwrap();
        writeln!(
            out,
            "residual_continuity = {:.3e}",
            (c.eta1() + c.eta2() * c.xi1) - (c.eta3() - c.eta4() * c.xi1)
        )
        .unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_center_value_and_mass() {
        let g = scaled_gaussian();
        assert!((g.k0(0.0) - 0.282_094_791_773_878_1).abs() < 1e-15);
        assert!((g.k0_zero() - g.k0(0.0)).abs() == 0.0);
        let mass = integrate(|u| g.k0(u), -20.0, 20.0, 1e-10).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_weighted_square_balance_is_exact() {
        // k0² is proportional to a standard normal density, so
        // ∫ v² k0² / ∫ k0² is that normal's variance: exactly 1.
        let g = scaled_gaussian();
        let k02 = integrate(|u| g.k0(u) * g.k0(u), -20.0, 20.0, 1e-12).unwrap();
        let weighted = integrate(|u| u * u * g.k0(u) * g.k0(u), -20.0, 20.0, 1e-12).unwrap();
        assert!((k02 - g.kappa02()).abs() < 1e-12);
        assert!((weighted / k02 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_violates_unit_second_moment_by_design() {
        // The family is a variance-2 normal: its second moment is 2. The
        // estimators use it anyway; this documents the known departure.
        let g = scaled_gaussian();
        let second = integrate(|u| u * u * g.k0(u), -25.0, 25.0, 1e-10).unwrap();
        assert!((second - 2.0).abs() < 1e-8, "second moment {second}");
        // And the center-height condition fails for every p in 1..=4.
        for p in 1..=4 {
            let target = g.kappa02() / 2f64.powf(1.0 / p as f64);
            assert!((g.k0(0.0) - target).abs() > 0.05);
        }
    }

    #[test]
    fn piecewise_satisfies_all_five_constraints() {
        for p in 1..=4 {
            let spec = piecewise_joe(p).unwrap();
            let c = *spec.joe_constants().unwrap();
            let lim = c.xi2;
            let cuts = [-c.xi1, 0.0, c.xi1];
            let mass = integrate_split(|u| spec.k0(u), -lim, lim, 1e-10, &cuts).unwrap();
            let second = integrate_split(|u| u * u * spec.k0(u), -lim, lim, 1e-10, &cuts).unwrap();
            let k02 =
                integrate_split(|u| spec.k0(u) * spec.k0(u), -lim, lim, 1e-10, &cuts).unwrap();
            let weighted =
                integrate_split(|u| u * u * spec.k0(u) * spec.k0(u), -lim, lim, 1e-10, &cuts)
                    .unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "p={p} mass {mass}");
            assert!((second - 1.0).abs() < 1e-8, "p={p} second {second}");
            assert!(
                (spec.k0(0.0) - k02 / 2f64.powf(1.0 / p as f64)).abs() < 1e-8,
                "p={p} center height"
            );
            assert!((weighted / k02 - 1.0).abs() < 1e-8, "p={p} weighted square");
            assert!((k02 - c.kappa02).abs() < 1e-10, "p={p} stored kappa02");
            // Continuity at the inner knot and a zero at the outer knot.
            assert!((spec.k0(c.xi1 - 1e-12) - spec.k0(c.xi1 + 1e-12)).abs() < 1e-9);
            assert!(spec.k0(c.xi2) == 0.0);
            assert!(spec.k0(c.xi2 + 0.5) == 0.0);
        }
    }

    #[test]
    fn piecewise_is_symmetric_and_nonnegative() {
        for p in 1..=4 {
            let spec = piecewise_joe(p).unwrap();
            for i in 0..=200 {
                let u = -2.5 + i as f64 * 0.025;
                assert_eq!(spec.k0(u), spec.k0(-u), "symmetry at {u}");
                assert!(spec.k0(u) >= 0.0);
            }
        }
    }

    #[test]
    fn fresh_solve_matches_frozen_table() {
        for row in &FROZEN_JOE {
            let solved = solve_piecewise_constants(row.0).unwrap();
            assert!((solved.xi1 - row.1).abs() < 1e-9, "p={} xi1", row.0);
            assert!((solved.xi2 - row.2).abs() < 1e-9, "p={} xi2", row.0);
            assert!((solved.a - row.3).abs() < 1e-9, "p={} a", row.0);
            assert!((solved.h - row.4).abs() < 1e-9, "p={} h", row.0);
            assert!((solved.kappa02 - row.5).abs() < 1e-9, "p={} kappa02", row.0);
        }
    }

    #[test]
    fn product_kernel_basics() {
        let g = scaled_gaussian();
        // Product of two center values.
        let v = g.product(&[0.0, 0.0]);
        assert!((v - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        // One coordinate outside compact support zeroes the product.
        let j = piecewise_joe(2).unwrap();
        assert_eq!(j.product(&[0.1, 5.0]), 0.0);
        // Dimension one reduces to the univariate kernel.
        assert_eq!(g.product(&[0.37]), g.k0(0.37));
        assert_eq!(j.product(&[]), 1.0);
    }

    #[test]
    fn product_square_integral_matches_kappa2_for_p2() {
        // ∫∫ K_2² = κ02² — checked by nested quadrature.
        let g = scaled_gaussian();
        let inner = |x: f64| {
            integrate(|y| g.product(&[x, y]).powi(2), -15.0, 15.0, 1e-9).unwrap()
        };
        let outer = integrate(inner, -15.0, 15.0, 1e-8).unwrap();
        assert!(
            (outer - g.kappa2(2)).abs() < 1e-8,
            "tensor {outer} vs closed {}",
            g.kappa2(2)
        );
    }

    #[test]
    fn out_of_range_dimension_is_rejected() {
        assert!(piecewise_joe(0).is_err());
        assert!(piecewise_joe(5).is_err());
        assert!(solve_piecewise_constants(7).is_err());
    }

    #[test]
    fn checked_in_constants_file_matches_code() {
        let report = constants_report().unwrap();
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/kernel_constants.txt");
        let on_disk = std::fs::read_to_string(path)
            .expect("data/kernel_constants.txt present; regenerate with the derive_kernel_constants binary");
        assert_eq!(
            on_disk, report,
            "stale constants file; regenerate with: cargo run -p rss-entropy --bin derive_kernel_constants"
        );
    }
}
