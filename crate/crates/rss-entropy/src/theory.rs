//! Asymptotic bias and variance functionals of the ranked-design entropy
//! estimator, and the relative-efficiency calculator built on them.
//!
//! Everything here targets the one-dimensional workload of the estimator
//! theory: a scalar of interest whose observations are selected by ranking,
//! either on the variable itself (univariate parents) or on a correlated
//! companion variable (the standard bivariate normal parent, where
//! coordinate 1 is ranked and coordinate 0 is measured). The central
//! quantities are the expansion coefficients in
//!
//! ```text
//! bias ≈ (H_γ − H) + α₁/n,    mse ≈ (H_γ − H)² + (α₂ − 2 α₁ (H_γ − H))/n,
//! ```
//!
//! where `H` is the true marginal entropy, `H_γ` the entropy functional of
//! the kernel-smoothed marginal, and `α₁`, `α₂` depend on the rank
//! densities of the design. With every rank density equal to the marginal
//! (simple random sampling) they collapse to the design-free values `β₁`,
//! `β₂`. [`alpha_beta`] evaluates all of them by deterministic quadrature
//! and [`relative_efficiency`] forms the mse ratio of the two designs.
//!
//! Numerical strategy: every smoothed quantity (the smoothed marginal Δ,
//! the squared-kernel smooth Q, the smoothed rank densities G_i, and the
//! score-type transform W) is tabulated once per bandwidth on a fine grid
//! and interpolated by cubic splines. Ratios such as f·Q/Δ² are formed in
//! log space because their factors underflow or overflow long before the
//! ratio itself becomes negligible. Outer integrals run over expanding
//! windows so that slowly decaying ratio integrands are followed as far as
//! they carry mass, and every integrand returns exactly zero beyond its
//! tabulated range, where the true contribution is provably negligible.

use crate::entropy::SupportSpec;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::parent::ParentModel;
use crate::quad::{integrate_split, integrate_whole_line_split, Spline};
use crate::{Error, Result};
use serde::Serialize;

/// Tolerance for the inner quadratures that fill spline tables.
const TOL_INNER: f64 = 1e-9;
/// Tolerance for the outer whole-line integrals.
const TOL_OUTER: f64 = 1e-9;
/// Effective half-support of the Gaussian-type kernel: k0(40) ≈ 1e-174,
/// far below anything the functionals can resolve.
const GAUSS_REACH: f64 = 40.0;
/// Coarse scan resolution used to locate an integrand's log-peak before
/// the peak-normalized quadrature runs.
const SCAN_POINTS: usize = 160;
/// Log-depth below the peak past which an integrand's contribution is
/// discarded (e^-80 relative).
const SCAN_DEPTH: f64 = 80.0;
/// The subset-sum cross-check enumerates 2^k terms; cap k to keep it sane.
const ENUM_MAX_K: usize = 20;

/// How many ranking stages the design applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stages {
    /// `r` rounds of ranked selection (1 = classical ranked sets,
    /// 2 = double-ranked, ...).
    Finite(usize),
    /// The idealized infinitely-iterated design, in which each rank draws
    /// from its own quantile slab of the parent. The expansion
    /// coefficients then obey the closed relations
    /// `α₁ = β₁ − (k−1)/2` and `α₂ = β₂ − (k−1)(1 − H_γ)²`.
    Limiting,
}

/// Residuals of identities the quadrature engine must reproduce; useful
/// for judging how much to trust a report without rerunning anything.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryDiagnostics {
    /// `∫ Δ − 1`: total mass of the tabulated smoothed marginal.
    pub smoothed_mass_residual: f64,
    /// `∫ f·W − 1`: total mass of the score-type transform, which
    /// integrates to one against the marginal by construction.
    pub score_mass_residual: f64,
    /// Largest deviation of the equal-weight rank-density mixture from the
    /// marginal over a central grid (zero in the limiting mode, which
    /// reproduces the marginal exactly).
    pub mixture_residual: f64,
}

/// Expansion coefficients of the entropy estimator for one design and one
/// bandwidth, together with the smoothed and true entropies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryReport {
    /// First-order bias coefficient of the ranked design.
    pub alpha1: f64,
    /// First-order variance coefficient of the ranked design.
    pub alpha2: f64,
    /// `alpha1` evaluated with every rank density equal to the marginal.
    pub beta1: f64,
    /// `alpha2` evaluated with every rank density equal to the marginal.
    pub beta2: f64,
    /// Entropy functional of the kernel-smoothed marginal.
    pub h_gamma: f64,
    /// True marginal entropy.
    pub h: f64,
    /// Bandwidth the report was computed at.
    pub gamma: f64,
    /// Set size of the design.
    pub k: usize,
    /// Ranking stages, `None` for the limiting design.
    pub stages: Option<usize>,
    /// Identity residuals observed while computing the report.
    pub diagnostics: TheoryDiagnostics,
}

// ---------------------------------------------------------------------------
// Order statistics of iterated ranked selection
// ---------------------------------------------------------------------------

fn check_rank_inputs(k: usize, r: usize, i: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("set size k must be at least 1".into()));
    }
    if r == 0 {
        return Err(Error::Parameter(
            "stage count r must be at least 1".into(),
        ));
    }
    if i == 0 || i > k {
        return Err(Error::Parameter(format!(
            "rank index must lie in 1..={k}, got {i}"
        )));
    }
    Ok(())
}

/// The coordinate rankings act on: the companion coordinate for bivariate
/// parents, the variable itself otherwise.
fn ranking_coord(parent: &ParentModel) -> usize {
    parent.dim() - 1
}

/// Distribution of the number of successes among independent Bernoulli
/// trials (index = count). Success and failure probabilities are passed
/// separately — computing one as `1 − other` loses everything once the
/// other rounds to 1, and these tails are integrated logarithmically.
fn success_counts(below: &[f64], above: &[f64]) -> Vec<f64> {
    let mut dp = vec![0.0; below.len() + 1];
    dp[0] = 1.0;
    for (m, (&p, &q)) in below.iter().zip(above).enumerate() {
        for c in (1..=m + 1).rev() {
            dp[c] = dp[c] * q + dp[c - 1] * p;
        }
        dp[0] *= q;
    }
    dp
}

/// Tail sums `P(at least i) = Σ_{c ≥ i} counts[c]` for i = 1..=k.
fn at_least_tail(counts: &[f64]) -> Vec<f64> {
    let k = counts.len() - 1;
    let mut out = vec![0.0; k];
    let mut running = 0.0;
    for i in (0..k).rev() {
        running += counts[i + 1];
        out[i] = running;
    }
    out
}

/// Head sums `P(fewer than i) = Σ_{c < i} counts[c]` for i = 1..=k.
fn fewer_than_head(counts: &[f64]) -> Vec<f64> {
    let k = counts.len() - 1;
    let mut out = vec![0.0; k];
    let mut running = 0.0;
    for i in 0..k {
        running += counts[i];
        out[i] = running;
    }
    out
}

/// One ranked-selection round: given densities, cdfs and survival
/// functions of the k independent inputs at a point, returns those of the
/// k outputs, where output i is the i-th smallest of the inputs. Runs the
/// dynamic program over success counts once per excluded input. Survival
/// values ride along so both distribution tails stay accurate to relative
/// precision — they feed logarithmic integrals much further out than
/// `1 − cdf` survives in floating point.
fn combine_stage_dp(pdf: &[f64], cdf: &[f64], sf: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = pdf.len();
    let mut out_pdf = vec![0.0; k];
    for j in 0..k {
        let below: Vec<f64> = (0..k).filter(|&l| l != j).map(|l| cdf[l]).collect();
        let above: Vec<f64> = (0..k).filter(|&l| l != j).map(|l| sf[l]).collect();
        let counts = success_counts(&below, &above);
        // Input j lands at the point while exactly i−1 of the rest sit below.
        for (i, count) in counts.iter().enumerate() {
            out_pdf[i] += pdf[j] * count;
        }
    }
    let counts = success_counts(cdf, sf);
    let out_cdf = at_least_tail(&counts);
    let out_sf = fewer_than_head(&counts);
    (out_pdf, out_cdf, out_sf)
}

/// Densities, cdfs and survival functions of all k ranks after `r`
/// selection rounds, starting from k independent copies of the given
/// marginal coordinate.
fn order_stat_all(
    parent: &ParentModel,
    coord: usize,
    k: usize,
    r: usize,
    x: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut pdf = vec![parent.marginal_pdf(coord, x); k];
    let mut cdf = vec![parent.marginal_cdf(coord, x); k];
    let mut sf = vec![parent.marginal_sf(coord, x); k];
    for _ in 0..r {
        let (p, c, s) = combine_stage_dp(&pdf, &cdf, &sf);
        pdf = p;
        cdf = c;
        sf = s;
    }
    (pdf, cdf, sf)
}

/// Density at `x` of the unit holding rank `i` (1-based) after `r` rounds
/// of ranked selection with set size `k`. Rankings act on the parent's
/// ranking coordinate (the companion coordinate for bivariate parents).
pub fn order_stat_density(parent: &ParentModel, k: usize, r: usize, i: usize, x: f64) -> Result<f64> {
    check_rank_inputs(k, r, i)?;
    Ok(order_stat_all(parent, ranking_coord(parent), k, r, x).0[i - 1])
}

/// Cumulative distribution of the rank-`i` unit; see [`order_stat_density`].
pub fn order_stat_cdf(parent: &ParentModel, k: usize, r: usize, i: usize, x: f64) -> Result<f64> {
    check_rank_inputs(k, r, i)?;
    Ok(order_stat_all(parent, ranking_coord(parent), k, r, x).1[i - 1])
}

/// One ranked-selection round on cdfs only, by explicit enumeration of all
/// 2^k below/above configurations. Exponential-time but entirely
/// independent of the dynamic program, so the two can vouch for each other.
fn combine_stage_enum(cdf: &[f64]) -> Vec<f64> {
    let k = cdf.len();
    let mut counts = vec![0.0; k + 1];
    for mask in 0u32..(1u32 << k) {
        let mut prob = 1.0;
        for (j, c) in cdf.iter().enumerate() {
            prob *= if mask >> j & 1 == 1 { *c } else { 1.0 - *c };
        }
        counts[mask.count_ones() as usize] += prob;
    }
    at_least_tail(&counts)
}

/// Same distribution as [`order_stat_cdf`], computed by subset-sum
/// enumeration instead of the dynamic program.
pub fn order_stat_cdf_enumeration(
    parent: &ParentModel,
    k: usize,
    r: usize,
    i: usize,
    x: f64,
) -> Result<f64> {
    check_rank_inputs(k, r, i)?;
    if k > ENUM_MAX_K {
        return Err(Error::Parameter(format!(
            "subset enumeration is limited to k <= {ENUM_MAX_K}, got {k}"
        )));
    }
    let mut cdf = vec![parent.marginal_cdf(ranking_coord(parent), x); k];
    for _ in 0..r {
        cdf = combine_stage_enum(&cdf);
    }
    Ok(cdf[i - 1])
}

// ---------------------------------------------------------------------------
// Peak-normalized quadrature of exp(log-integrand)
// ---------------------------------------------------------------------------

/// `log ∫ exp(ln_f)` over `[a, b]`. The integrand is scanned coarsely for
/// its log-peak, the window is trimmed to where it is within
/// [`SCAN_DEPTH`] of the peak, and the quadrature runs on the normalized
/// integrand so the result is relatively accurate at any magnitude.
/// `breaks` lists points where `ln_f` jumps or kinks (support edges,
/// kernel knots); the quadrature splits there rather than trying to
/// refine across the discontinuity. Returns `-inf` when the integrand is
/// zero throughout.
fn ln_integral_exp<F: Fn(f64) -> f64>(
    ln_f: F,
    a: f64,
    b: f64,
    tol: f64,
    breaks: &[f64],
) -> Result<f64> {
    let step = (b - a) / SCAN_POINTS as f64;
    let mut peak = f64::NEG_INFINITY;
    let mut values = [0.0f64; SCAN_POINTS + 1];
    for (t, slot) in values.iter_mut().enumerate() {
        let v = ln_f(a + step * t as f64);
        *slot = v;
        if v > peak {
            peak = v;
        }
    }
    if !peak.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    // Trim to the region that can contribute, with one guard step each side.
    let cut = peak - SCAN_DEPTH;
    let first = values.iter().position(|&v| v >= cut).unwrap_or(0);
    let last = values.iter().rposition(|&v| v >= cut).unwrap_or(SCAN_POINTS);
    let lo = a + step * (first.saturating_sub(1)) as f64;
    let hi = a + step * (last + 1).min(SCAN_POINTS) as f64;
    let scaled = integrate_split(|x| (ln_f(x) - peak).exp(), lo, hi, tol, breaks)?;
    if scaled <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(peak + scaled.ln())
}

/// `∫ exp(ln_f)` over `[a, b]`; see [`ln_integral_exp`].
fn integral_exp<F: Fn(f64) -> f64>(
    ln_f: F,
    a: f64,
    b: f64,
    tol: f64,
    breaks: &[f64],
) -> Result<f64> {
    Ok(ln_integral_exp(ln_f, a, b, tol, breaks)?.exp())
}

/// Locations where the kernel profile is not smooth: the compact
/// piecewise-linear family kinks at its knots and support edges, the
/// Gaussian-type kernel nowhere.
fn kernel_breaks(kernel: &KernelSpec) -> Vec<f64> {
    match kernel.joe_constants() {
        Some(jc) => vec![-jc.xi2, -jc.xi1, 0.0, jc.xi1, jc.xi2],
        None => Vec::new(),
    }
}

fn ln_k0(kernel: &KernelSpec, u: f64) -> f64 {
    match kernel.family() {
        KernelFamily::ScaledGaussian => {
            -0.25 * u * u - 0.5 * (4.0 * std::f64::consts::PI).ln()
        }
        KernelFamily::PiecewiseJoe => {
            let v = kernel.k0(u);
            if v > 0.0 {
                v.ln()
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

fn kernel_reach(kernel: &KernelSpec) -> f64 {
    kernel.support_radius().unwrap_or(GAUSS_REACH)
}

// ---------------------------------------------------------------------------
// Concomitant densities and the rank-density set
// ---------------------------------------------------------------------------

fn bivariate_rho(parent: &ParentModel) -> Result<f64> {
    match parent {
        ParentModel::BivariateNormal { rho } => Ok(*rho),
        _ => Err(Error::Parameter(
            "concomitant densities need a bivariate parent".into(),
        )),
    }
}

/// Half-width of the grid that carries the ranking coordinate's order
/// statistics (standard normal; mass beyond is ~1e-40).
const RANK_GRID_HW: f64 = 9.5;
/// Half-width of the grid that carries concomitant densities of the
/// measured coordinate.
const CONCOMITANT_GRID_HW: f64 = 12.5;

/// Density at `x` of the measured coordinate of the unit holding rank `i`
/// when ranking is done on the companion coordinate of a standard
/// bivariate normal parent: the conditional normal density integrated
/// against the companion's rank-`i` order-statistic density.
pub fn concomitant_density(parent: &ParentModel, k: usize, r: usize, i: usize, x: f64) -> Result<f64> {
    let rho = bivariate_rho(parent)?;
    check_rank_inputs(k, r, i)?;
    if !x.is_finite() {
        return Err(Error::Parameter(format!(
            "evaluation point must be finite, got {x}"
        )));
    }
    let s = (1.0 - rho * rho).sqrt();
    let ln_norm = -s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let coord = ranking_coord(parent);
    integral_exp(
        |y| {
            let z = (x - rho * y) / s;
            let g = order_stat_all(parent, coord, k, r, y).0[i - 1];
            let ln_g = if g > 0.0 { g.ln() } else { f64::NEG_INFINITY };
            -0.5 * z * z + ln_norm + ln_g
        },
        -RANK_GRID_HW,
        RANK_GRID_HW,
        1e-10,
        &[],
    )
}

enum RankKind {
    /// Ranking acts on the measured variable itself: rank densities are
    /// plain order-statistic densities, evaluated exactly on demand.
    SelfRanked,
    /// Ranking acts on the companion coordinate: rank densities of the
    /// measured coordinate are precomputed concomitant splines, treated as
    /// zero outside their grid.
    Concomitant { splines: Vec<Spline>, lo: f64, hi: f64 },
}

/// The k rank densities of the measured coordinate for one design
/// `(parent, k, r)`, with whatever precomputation makes repeated
/// evaluation cheap. Building one of these once and reusing it across
/// bandwidths is the fast path for grid sweeps.
pub struct RankDensitySet {
    parent: ParentModel,
    k: usize,
    r: usize,
    kind: RankKind,
}

impl RankDensitySet {
    /// Precomputes the rank densities for a design. For bivariate parents
    /// this tabulates each concomitant density on a fine grid (the only
    /// expensive part); univariate parents evaluate exactly on demand.
    pub fn new(parent: &ParentModel, k: usize, r: usize) -> Result<Self> {
        check_rank_inputs(k, r, 1)?;
        let kind = match parent {
            ParentModel::BivariateNormal { rho } => {
                let rho = *rho;
                let coord = ranking_coord(parent);
                // Tabulate the companion's order-statistic densities once;
                // the concomitant integrals then only touch splines.
                let n_rank = (2.0 * RANK_GRID_HW / 0.02).round() as usize;
                let ys: Vec<f64> = (0..=n_rank)
                    .map(|t| -RANK_GRID_HW + 2.0 * RANK_GRID_HW * t as f64 / n_rank as f64)
                    .collect();
                let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(ys.len()); k];
                for &y in &ys {
                    let (pdf, _, _) = order_stat_all(parent, coord, k, r, y);
                    for (col, v) in cols.iter_mut().zip(&pdf) {
                        col.push(*v);
                    }
                }
                let rank_splines: Vec<Spline> = cols
                    .into_iter()
                    .map(|c| Spline::fit(ys.clone(), c))
                    .collect::<Result<_>>()?;

                let s = (1.0 - rho * rho).sqrt();
                let ln_norm = -s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                let n_con = (2.0 * CONCOMITANT_GRID_HW / 0.02).round() as usize;
                let xs: Vec<f64> = (0..=n_con)
                    .map(|t| {
                        -CONCOMITANT_GRID_HW + 2.0 * CONCOMITANT_GRID_HW * t as f64 / n_con as f64
                    })
                    .collect();
                let mut splines = Vec::with_capacity(k);
                for rank_spline in &rank_splines {
                    let vals: Vec<f64> = xs
                        .iter()
                        .map(|&x| {
                            integral_exp(
                                |y| {
                                    let z = (x - rho * y) / s;
                                    let g = rank_spline.eval(y).max(0.0);
                                    let ln_g =
                                        if g > 0.0 { g.ln() } else { f64::NEG_INFINITY };
                                    -0.5 * z * z + ln_norm + ln_g
                                },
                                -RANK_GRID_HW,
                                RANK_GRID_HW,
                                TOL_INNER,
                                &[],
                            )
                        })
                        .collect::<Result<_>>()?;
                    splines.push(Spline::fit(xs.clone(), vals)?);
                }
                RankKind::Concomitant {
                    splines,
                    lo: -CONCOMITANT_GRID_HW,
                    hi: CONCOMITANT_GRID_HW,
                }
            }
            _ => RankKind::SelfRanked,
        };
        Ok(RankDensitySet {
            parent: *parent,
            k,
            r,
            kind,
        })
    }

    /// Set size of the design.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Ranking stages of the design.
    pub fn stages(&self) -> usize {
        self.r
    }

    /// The parent model the set was built for.
    pub fn parent(&self) -> &ParentModel {
        &self.parent
    }

    /// Density of the measured coordinate for the rank-`i` unit (1-based).
    pub fn density(&self, i: usize, x: f64) -> Result<f64> {
        check_rank_inputs(self.k, self.r, i)?;
        Ok(self.density_raw(i, x))
    }

    fn density_raw(&self, i: usize, x: f64) -> f64 {
        match &self.kind {
            RankKind::SelfRanked => order_stat_all(&self.parent, 0, self.k, self.r, x).0[i - 1],
            RankKind::Concomitant { splines, lo, hi } => {
                if x < *lo || x > *hi {
                    0.0
                } else {
                    splines[i - 1].eval(x).max(0.0)
                }
            }
        }
    }

    fn ln_density_raw(&self, i: usize, x: f64) -> f64 {
        let v = self.density_raw(i, x);
        if v > 0.0 {
            v.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Points where the rank densities jump to zero: the parent's support
    /// edges when ranking acts on the variable itself, the tabulation
    /// edges for concomitant densities. Empty means smooth everywhere.
    fn support_edges(&self) -> Vec<f64> {
        match &self.kind {
            RankKind::SelfRanked => match target_shape(&self.parent).2 {
                Some((a, b)) => vec![a, b],
                None => Vec::new(),
            },
            RankKind::Concomitant { lo, hi, .. } => vec![*lo, *hi],
        }
    }

    /// `∫ x^power g_i(x) dx`, the raw moment of the rank-`i` density.
    pub fn moment(&self, i: usize, power: u32) -> Result<f64> {
        check_rank_inputs(self.k, self.r, i)?;
        let center = match self.parent {
            ParentModel::Normal { mean, .. } => mean,
            ParentModel::Uniform01 => 0.5,
            ParentModel::BivariateNormal { .. } => 0.0,
        };
        integrate_whole_line_split(
            |x| x.powi(power as i32) * self.density_raw(i, x),
            center,
            3.0,
            TOL_OUTER,
            &self.support_edges(),
        )
    }

    /// Largest deviation of the equal-weight mixture of the rank densities
    /// from the parent marginal over a central grid.
    fn mixture_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for t in 0..=40 {
            let q = 0.001 + 0.998 * t as f64 / 40.0;
            let x = self.parent.marginal_quantile(0, q)?;
            let mix: f64 = (1..=self.k).map(|i| self.density_raw(i, x)).sum::<f64>()
                / self.k as f64;
            worst = worst.max((mix - self.parent.marginal_pdf(0, x)).abs());
        }
        Ok(worst)
    }
}

/// Rank density of the idealized infinitely-iterated design: rank `i`
/// draws from its own quantile slab, so the density is `k` times the
/// marginal on `[q_{(i−1)/k}, q_{i/k})` and zero elsewhere. Acts on the
/// ranking coordinate, like [`order_stat_density`].
pub fn limiting_rank_density(parent: &ParentModel, k: usize, i: usize, x: f64) -> Result<f64> {
    check_rank_inputs(k, 1, i)?;
    let coord = ranking_coord(parent);
    let lo = if i == 1 {
        f64::NEG_INFINITY
    } else {
        parent.marginal_quantile(coord, (i - 1) as f64 / k as f64)?
    };
    let hi = if i == k {
        f64::INFINITY
    } else {
        parent.marginal_quantile(coord, i as f64 / k as f64)?
    };
    Ok(if x >= lo && x < hi {
        k as f64 * parent.marginal_pdf(coord, x)
    } else {
        0.0
    })
}

// ---------------------------------------------------------------------------
// The bandwidth-level quadrature engine
// ---------------------------------------------------------------------------

/// A spline valid on `[lo, hi]`; queries outside report `None` so callers
/// can substitute the physically correct value (usually zero).
struct Ranged {
    spline: Spline,
    lo: f64,
    hi: f64,
}

impl Ranged {
    fn val(&self, x: f64) -> Option<f64> {
        if x < self.lo || x > self.hi {
            None
        } else {
            Some(self.spline.eval(x))
        }
    }
}

/// Builds a [`Ranged`] from log-values, trimming to the maximal finite run
/// around the peak (compact smoothing leaves `-inf` tails on the grid).
fn ranged_from_ln(xs: &[f64], ys: Vec<f64>) -> Result<Ranged> {
    let arg_peak = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if !ys[arg_peak].is_finite() {
        return Err(Error::Numerical(
            "smoothed density vanished on the whole tabulation grid".into(),
        ));
    }
    let mut lo = arg_peak;
    while lo > 0 && ys[lo - 1].is_finite() {
        lo -= 1;
    }
    let mut hi = arg_peak;
    while hi + 1 < ys.len() && ys[hi + 1].is_finite() {
        hi += 1;
    }
    if hi - lo + 1 < 8 {
        return Err(Error::Numerical(
            "smoothed density is positive on too few grid points to interpolate".into(),
        ));
    }
    Ok(Ranged {
        spline: Spline::fit(xs[lo..=hi].to_vec(), ys[lo..=hi].to_vec())?,
        lo: xs[lo],
        hi: xs[hi],
    })
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).ceil().max(8.0) as usize;
    (0..=n).map(|t| lo + (hi - lo) * t as f64 / n as f64).collect()
}

/// Shape of the measured coordinate's marginal: center, scale, and the
/// support interval when it is compact.
fn target_shape(parent: &ParentModel) -> (f64, f64, Option<(f64, f64)>) {
    match *parent {
        ParentModel::Normal { mean, sd } => (mean, sd, None),
        ParentModel::Uniform01 => (0.5, 0.3, Some((0.0, 1.0))),
        ParentModel::BivariateNormal { .. } => (0.0, 1.0, None),
    }
}

/// All bandwidth-level tabulations for one `(parent, kernel, γ)` triple.
struct Engine<'k> {
    kernel: &'k KernelSpec,
    gamma: f64,
    parent: ParentModel,
    /// log of the smoothed marginal `Δ(x) = ∫ γ⁻¹ k0((x−u)/γ) f(u) du`.
    ln_delta: Ranged,
    /// log of `Q(z) = γ⁻¹ ∫ k0²(v) f(z−γv) dv`, the squared-kernel smooth.
    ln_q: Ranged,
    /// `W(x) = ∫ k0(v) (f/Δ)(x+γv) dv`, the score-type transform.
    w: Ranged,
    out_center: f64,
    out_hw: f64,
    /// Parent support edges: jump locations of every f-weighted integrand.
    edge_breaks: Vec<f64>,
}

impl<'k> Engine<'k> {
    fn new(parent: &ParentModel, kernel: &'k KernelSpec, gamma: f64) -> Result<Self> {
        let (mu, sigma, bounds) = target_shape(parent);
        let reach = kernel_reach(kernel);
        // The W/G grid needs to cover integrands that decay at least like
        // the marginal itself; the Δ/Q grid additionally has to follow the
        // ratio f·Q/Δ², whose Gaussian decay rate `a` can be far slower
        // than the marginal's.
        let (g_lo, g_hi, d_lo, d_hi) = match bounds {
            Some((a, b)) => (
                a - gamma * reach - 2.0,
                b + gamma * reach + 2.0,
                a - gamma * reach - 4.0,
                b + gamma * reach + 4.0,
            ),
            None => {
                let s2 = sigma * sigma;
                let g2 = gamma * gamma;
                let a = 0.5 / s2 + 0.5 / (s2 + g2) - 1.0 / (s2 + 2.0 * g2);
                let hw_g = 13.0 * sigma;
                let ratio_hw = if a > 1e-12 {
                    (40.0 / a).sqrt() + 4.0 * sigma
                } else {
                    60.0 * sigma
                };
                let hw_d = (hw_g + gamma * reach + 12.0 * sigma)
                    .max(ratio_hw)
                    .min(60.0 * sigma.max(1.0));
                (mu - hw_g, mu + hw_g, mu - hw_d, mu + hw_d)
            }
        };

        // Jump/kink locations of v ↦ k0(v)·f(x−γv): the kernel's own
        // knots plus the parent's support edges pulled back through
        // v = (x − edge)/γ.
        let kb = kernel_breaks(kernel);
        let smooth_breaks = |x: f64| -> Vec<f64> {
            let mut out = kb.clone();
            if let Some((a, b)) = bounds {
                out.push((x - a) / gamma);
                out.push((x - b) / gamma);
            }
            out
        };

        // A compact kernel leaves kinks in the smoothed density wherever the
        // parent's support edge crosses a kernel knot; the cubic table can
        // only track those at O(step²), so tighten the step floor for it.
        let step_floor = if kernel.support_radius().is_some() {
            0.005
        } else {
            0.02
        };
        let d_step = ((d_hi - d_lo) / 4500.0).max(step_floor);
        let d_grid = grid(d_lo, d_hi, d_step);
        let ln_delta_vals: Vec<f64> = d_grid
            .iter()
            .map(|&x| {
                ln_integral_exp(
                    |v| ln_k0(kernel, v) + parent.marginal_ln_pdf(0, x - gamma * v),
                    -reach,
                    reach,
                    TOL_INNER,
                    &smooth_breaks(x),
                )
            })
            .collect::<Result<_>>()?;
        let ln_delta = ranged_from_ln(&d_grid, ln_delta_vals)?;

        let ln_gamma = gamma.ln();
        let ln_q_vals: Vec<f64> = d_grid
            .iter()
            .map(|&x| {
                Ok(ln_integral_exp(
                    |v| 2.0 * ln_k0(kernel, v) + parent.marginal_ln_pdf(0, x - gamma * v),
                    -reach,
                    reach,
                    TOL_INNER,
                    &smooth_breaks(x),
                )? - ln_gamma)
            })
            .collect::<Result<_>>()?;
        let ln_q = ranged_from_ln(&d_grid, ln_q_vals)?;

        let g_step = ((g_hi - g_lo) / 3000.0).max(step_floor.min(0.015));
        let g_grid = grid(g_lo, g_hi, g_step);
        let ratio_breaks = |x: f64| -> Vec<f64> {
            let mut out = kb.clone();
            let mut edge = |e: f64| out.push((e - x) / gamma);
            if let Some((a, b)) = bounds {
                edge(a);
                edge(b);
            }
            edge(ln_delta.lo);
            edge(ln_delta.hi);
            out
        };
        let w_vals: Vec<f64> = g_grid
            .iter()
            .map(|&x| {
                integral_exp(
                    |v| {
                        let u = x + gamma * v;
                        match ln_delta.val(u) {
                            Some(ld) => ln_k0(kernel, v) + parent.marginal_ln_pdf(0, u) - ld,
                            None => f64::NEG_INFINITY,
                        }
                    },
                    -reach,
                    reach,
                    TOL_INNER,
                    &ratio_breaks(x),
                )
            })
            .collect::<Result<_>>()?;
        let w = Ranged {
            spline: Spline::fit(g_grid.clone(), w_vals)?,
            lo: g_lo,
            hi: g_hi,
        };

        let out_hw = match bounds {
            Some((a, b)) => (b - a) / 2.0 + 1.0,
            None => 3.0 * sigma,
        };
        Ok(Engine {
            kernel,
            gamma,
            parent: *parent,
            ln_delta,
            ln_q,
            w,
            out_center: mu,
            out_hw,
            edge_breaks: bounds.map_or_else(Vec::new, |(a, b)| vec![a, b]),
        })
    }

    fn lnf(&self, x: f64) -> f64 {
        self.parent.marginal_ln_pdf(0, x)
    }

    fn whole<F: Fn(f64) -> f64>(&self, f: F, what: &str) -> Result<f64> {
        integrate_whole_line_split(f, self.out_center, self.out_hw, TOL_OUTER, &self.edge_breaks)
            .map_err(|e| Error::Numerical(format!("{what}: {e}")))
    }

    /// Smoothed rank density `G_i = K_γ * g_i`, tabulated on the W grid.
    fn convolve_rank(&self, set: &RankDensitySet, i: usize) -> Result<Ranged> {
        let reach = kernel_reach(self.kernel);
        let kb = kernel_breaks(self.kernel);
        let edges = set.support_edges();
        let xs = grid(self.w.lo, self.w.hi, (self.w.hi - self.w.lo) / 3000.0);
        let vals: Vec<f64> = xs
            .iter()
            .map(|&z| {
                let mut breaks = kb.clone();
                breaks.extend(edges.iter().map(|e| (z - e) / self.gamma));
                integral_exp(
                    |v| ln_k0(self.kernel, v) + set.ln_density_raw(i, z - self.gamma * v),
                    -reach,
                    reach,
                    TOL_INNER,
                    &breaks,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Ranged {
            spline: Spline::fit(xs, vals)?,
            lo: self.w.lo,
            hi: self.w.hi,
        })
    }

    /// `H_γ = −∫ f ln Δ`.
    fn h_gamma(&self) -> Result<f64> {
        Ok(-self.whole(
            |x| match self.ln_delta.val(x) {
                Some(ld) => self.lnf(x).exp() * ld,
                None => 0.0,
            },
            "smoothed-entropy integral",
        )?)
    }

    /// `∫ Δ − 1`, a pure accuracy probe of the Δ table.
    fn smoothed_mass_residual(&self) -> Result<f64> {
        Ok(self.whole(
            |x| self.ln_delta.val(x).map_or(0.0, f64::exp),
            "smoothed-mass integral",
        )? - 1.0)
    }

    /// `∫ f·W − 1`; W integrates to one against the marginal exactly.
    fn score_mass_residual(&self) -> Result<f64> {
        Ok(self.whole(
            |x| match self.w.val(x) {
                Some(wv) => self.lnf(x).exp() * wv,
                None => 0.0,
            },
            "score-mass integral",
        )? - 1.0)
    }

    /// The design-free curvature mass `∫ B(x,x) dF`, assembled from
    /// `−½ ∫ f·Q/Δ²` and `(k0(0)/γ) ∫ f²/Δ`.
    fn curvature_diagonal(&self) -> Result<f64> {
        let ratio = self.whole(
            |z| match (self.ln_delta.val(z), self.ln_q.val(z)) {
                (Some(ld), Some(lq)) => (self.lnf(z) + lq - 2.0 * ld).exp(),
                _ => 0.0,
            },
            "squared-kernel ratio integral",
        )?;
        let self_term = self.whole(
            |x| match self.ln_delta.val(x) {
                Some(ld) => (2.0 * self.lnf(x) - ld).exp(),
                None => 0.0,
            },
            "self-smoothing integral",
        )?;
        Ok(-0.5 * ratio + self.kernel.k0_zero() / self.gamma * self_term)
    }

    /// `∫ f·(W + ln Δ)² dx`, the second moment of the score transform.
    fn score_square_mass(&self) -> Result<f64> {
        self.whole(
            |x| match (self.ln_delta.val(x), self.w.val(x)) {
                (Some(ld), Some(wv)) => {
                    let a = wv + ld;
                    self.lnf(x).exp() * a * a
                }
                _ => 0.0,
            },
            "score-square integral",
        )
    }

    /// The curvature functional of one rank density:
    /// `J_i = −½ ∫ f·G_i²/Δ² + ∫ g_i·G_i/Δ`.
    fn rank_curvature(&self, set: &RankDensitySet, i: usize, conv: &Ranged) -> Result<f64> {
        let quad_term = self.whole(
            |x| {
                let Some(ld) = self.ln_delta.val(x) else { return 0.0 };
                let g = conv.val(x).unwrap_or(0.0);
                if g <= 0.0 {
                    return 0.0;
                }
                (self.lnf(x) - 2.0 * ld + 2.0 * g.ln()).exp()
            },
            "rank-curvature ratio integral",
        )?;
        let cross_term = self.whole(
            |x| {
                let Some(ld) = self.ln_delta.val(x) else { return 0.0 };
                let g = conv.val(x).unwrap_or(0.0);
                if g <= 0.0 {
                    return 0.0;
                }
                let ln_gi = set.ln_density_raw(i, x);
                if ln_gi == f64::NEG_INFINITY {
                    return 0.0;
                }
                (ln_gi + g.ln() - ld).exp()
            },
            "rank-curvature cross integral",
        )?;
        Ok(-0.5 * quad_term + cross_term)
    }

    /// `c_i = ∫ g_i·(W + ln Δ)`, the score mass of one rank density.
    fn rank_score_mass(&self, set: &RankDensitySet, i: usize) -> Result<f64> {
        self.whole(
            |x| match (self.ln_delta.val(x), self.w.val(x)) {
                (Some(ld), Some(wv)) => set.density_raw(i, x) * (wv + ld),
                _ => 0.0,
            },
            "rank score-mass integral",
        )
    }
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

fn validate_theory_inputs(kernel: &KernelSpec, gamma: f64, support: &SupportSpec) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!(
            "bandwidth must be positive and finite, got {gamma}"
        )));
    }
    if let Some(jc) = kernel.joe_constants() {
        if jc.p != 1 {
            return Err(Error::Parameter(format!(
                "the expansion engine is one-dimensional; got piecewise kernel constants for dimension {}",
                jc.p
            )));
        }
    }
    match support {
        SupportSpec::AllPoints => Ok(()),
        _ => Err(Error::Parameter(
            "the expansion engine integrates over the whole line; support restrictions are not modeled"
                .into(),
        )),
    }
}

fn finite_report(set: &RankDensitySet, kernel: &KernelSpec, gamma: f64) -> Result<TheoryReport> {
    let engine = Engine::new(set.parent(), kernel, gamma)?;
    let h_gamma = engine.h_gamma()?;
    let curvature = engine.curvature_diagonal()?;
    let score_sq = engine.score_square_mass()?;
    let beta1 = curvature - 0.5;
    let smooth_excess = 1.0 - h_gamma;
    let beta2 = score_sq - smooth_excess * smooth_excess;

    let k = set.k();
    // A single rank is plain random sampling: the rank density is the
    // marginal itself and the design coefficients equal the design-free
    // ones identically, so skip the quadrature and preserve exact equality.
    let (alpha1, alpha2) = if k == 1 {
        (beta1, beta2)
    } else {
        let mut curvature_sum = 0.0;
        let mut score_sq_sum = 0.0;
        for i in 1..=k {
            let conv = engine.convolve_rank(set, i)?;
            curvature_sum += engine.rank_curvature(set, i, &conv)?;
            let c_i = engine.rank_score_mass(set, i)?;
            score_sq_sum += c_i * c_i;
        }
        (
            curvature - curvature_sum / k as f64,
            score_sq - score_sq_sum / k as f64,
        )
    };

    Ok(TheoryReport {
        alpha1,
        alpha2,
        beta1,
        beta2,
        h_gamma,
        h: set.parent().marginal_entropy(0),
        gamma,
        k,
        stages: Some(set.stages()),
        diagnostics: TheoryDiagnostics {
            smoothed_mass_residual: engine.smoothed_mass_residual()?,
            score_mass_residual: engine.score_mass_residual()?,
            mixture_residual: set.mixture_residual()?,
        },
    })
}

fn limiting_report(
    parent: &ParentModel,
    k: usize,
    kernel: &KernelSpec,
    gamma: f64,
) -> Result<TheoryReport> {
    let engine = Engine::new(parent, kernel, gamma)?;
    let h_gamma = engine.h_gamma()?;
    let curvature = engine.curvature_diagonal()?;
    let score_sq = engine.score_square_mass()?;
    let beta1 = curvature - 0.5;
    let smooth_excess = 1.0 - h_gamma;
    let beta2 = score_sq - smooth_excess * smooth_excess;
    Ok(TheoryReport {
        alpha1: beta1 - (k - 1) as f64 / 2.0,
        alpha2: beta2 - (k - 1) as f64 * smooth_excess * smooth_excess,
        beta1,
        beta2,
        h_gamma,
        h: parent.marginal_entropy(0),
        gamma,
        k,
        stages: None,
        diagnostics: TheoryDiagnostics {
            smoothed_mass_residual: engine.smoothed_mass_residual()?,
            score_mass_residual: engine.score_mass_residual()?,
            mixture_residual: 0.0,
        },
    })
}

/// Evaluates the expansion coefficients `(α₁, α₂, β₁, β₂)`, the smoothed
/// entropy `H_γ`, and the true entropy `H` for one design and bandwidth.
///
/// The engine integrates over the whole line, so `support` must be the
/// all-points support; restrictions are rejected rather than silently
/// ignored. For repeated calls at different bandwidths build a
/// [`RankDensitySet`] once and use [`alpha_beta_with`].
pub fn alpha_beta(
    parent: &ParentModel,
    k: usize,
    stages: Stages,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
) -> Result<TheoryReport> {
    validate_theory_inputs(kernel, gamma, support)?;
    match stages {
        Stages::Finite(r) => {
            let set = RankDensitySet::new(parent, k, r)?;
            finite_report(&set, kernel, gamma)
        }
        Stages::Limiting => {
            check_rank_inputs(k, 1, 1)?;
            limiting_report(parent, k, kernel, gamma)
        }
    }
}

/// [`alpha_beta`] against a prebuilt rank-density set, skipping the
/// design-level tabulation. The bandwidth-level tables are still rebuilt,
/// which is the intended trade-off for bandwidth sweeps.
pub fn alpha_beta_with(
    set: &RankDensitySet,
    kernel: &KernelSpec,
    gamma: f64,
) -> Result<TheoryReport> {
    validate_theory_inputs(kernel, gamma, &SupportSpec::AllPoints)?;
    finite_report(set, kernel, gamma)
}

/// First-order relative efficiency of the ranked design against simple
/// random sampling at the same total sample size `n`: the ratio of the
/// approximate mean squared errors, each evaluated at its own scheme's
/// bandwidth. Values above one favour the ranked design.
pub fn relative_efficiency(
    parent: &ParentModel,
    k: usize,
    stages: Stages,
    n: usize,
    kernel: &KernelSpec,
    gamma_ranked: f64,
    gamma_srs: f64,
    support: &SupportSpec,
) -> Result<f64> {
    validate_theory_inputs(kernel, gamma_ranked, support)?;
    validate_theory_inputs(kernel, gamma_srs, support)?;
    if n == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    let (ranked, srs) = match stages {
        Stages::Finite(r) => {
            let set = RankDensitySet::new(parent, k, r)?;
            let ranked = finite_report(&set, kernel, gamma_ranked)?;
            let srs = if gamma_srs == gamma_ranked {
                ranked
            } else {
                finite_report(&set, kernel, gamma_srs)?
            };
            (ranked, srs)
        }
        Stages::Limiting => {
            check_rank_inputs(k, 1, 1)?;
            let ranked = limiting_report(parent, k, kernel, gamma_ranked)?;
            let srs = if gamma_srs == gamma_ranked {
                ranked
            } else {
                limiting_report(parent, k, kernel, gamma_srs)?
            };
            (ranked, srs)
        }
    };
    let nf = n as f64;
    let h = ranked.h;
    let srs_gap = srs.h_gamma - h;
    let srs_mse = srs_gap * srs_gap + (srs.beta2 - 2.0 * srs.beta1 * srs_gap) / nf;
    let ranked_gap = ranked.h_gamma - h;
    let ranked_mse =
        ranked_gap * ranked_gap + (ranked.alpha2 - 2.0 * ranked.alpha1 * ranked_gap) / nf;
    if !(ranked_mse > 0.0) {
        return Err(Error::Numerical(format!(
            "approximate mse of the ranked design is not positive ({ranked_mse}); \
             the first-order expansion breaks down at this n and bandwidth"
        )));
    }
    if !(srs_mse > 0.0) {
        return Err(Error::Numerical(format!(
            "approximate mse of simple random sampling is not positive ({srs_mse}); \
             the first-order expansion breaks down at this n and bandwidth"
        )));
    }
    Ok(srs_mse / ranked_mse)
}

/// The deterministic bandwidth `γ = c·n^{−1/(2 + p/2)}` used for
/// efficiency grids, where `c` is a tuned constant.
pub fn reference_bandwidth(c: f64, n: usize, p: usize) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Parameter(format!(
            "bandwidth factor must be positive and finite, got {c}"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    if p == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    Ok(c * (n as f64).powf(-1.0 / (2.0 + 0.5 * p as f64)))
}

/// Tuned bandwidth factors for the standard bivariate normal efficiency
/// workload (measured coordinate ranked by its companion, p = 1):
/// `stages = None` selects simple random sampling. Returns `None` for
/// combinations outside the tuned grid.
pub fn reference_bandwidth_factor(stages: Option<usize>, k: usize, rho: f64) -> Option<f64> {
    let hi = (rho - 0.9).abs() < 1e-9;
    let lo = (rho - 0.8).abs() < 1e-9;
    if !hi && !lo {
        return None;
    }
    match (stages, k) {
        (None, _) => Some(if hi { 1.35 } else { 1.30 }),
        (Some(1), 3) => Some(if hi { 1.40 } else { 1.35 }),
        (Some(1), 5) => Some(if hi { 1.65 } else { 1.60 }),
        (Some(2), 3) => Some(if hi { 1.45 } else { 1.40 }),
        (Some(2), 5) => Some(if hi { 1.70 } else { 1.65 }),
        _ => None,
    }
}
