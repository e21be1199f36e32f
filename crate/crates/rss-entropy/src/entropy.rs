//! Entropy estimation from ranked set samples: the kernel plug-in
//! estimator with support trimming, the data-driven bandwidth rule, a
//! leave-one-cycle-out cross-validation criterion, and the plug-in
//! estimator of the estimator's own mean squared error.
//!
//! Everything works in nats. The estimator is
//! H = −(1/n) Σ log f̂(X_obs) · I_S(X_obs), with f̂ the product-kernel
//! density estimate built from the same sample and I_S an optional
//! support indicator; the divisor is always the full n = m·k, so trimmed
//! points contribute zero rather than being renormalized away.

use serde::Serialize;

use crate::density::DensityEstimate;
use crate::designs::RankedSetSample;
use crate::kernels::KernelSpec;
use crate::{Error, Result};

/// Dense pairwise kernel matrices are only cached up to this sample
/// size; larger samples fall back to recomputing kernel values on the
/// fly (same results, no quadratic memory).
const MATRIX_LIMIT: usize = 1500;

/// The integration/trimming region S for the entropy sum.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportSpec {
    /// Every observation counts.
    AllPoints,
    /// Axis-aligned closed box; observations outside contribute zero.
    Rectangle { lo: Vec<f64>, hi: Vec<f64> },
    /// Observations where the density estimate itself falls below `eps`
    /// contribute zero. Membership is always judged by the estimate of
    /// the sample being evaluated (so leave-one-cycle-out re-judges it).
    DensityFloor { eps: f64 },
}

impl SupportSpec {
    pub fn rectangle(lo: Vec<f64>, hi: Vec<f64>) -> Result<SupportSpec> {
        let s = SupportSpec::Rectangle { lo, hi };
        s.validate_for(None)?;
        Ok(s)
    }

    pub fn density_floor(eps: f64) -> Result<SupportSpec> {
        let s = SupportSpec::DensityFloor { eps };
        s.validate_for(None)?;
        Ok(s)
    }

    /// Checks internal consistency, and dimension compatibility when a
    /// sample dimension is given.
    pub fn validate_for(&self, p: Option<usize>) -> Result<()> {
        match self {
            SupportSpec::AllPoints => Ok(()),
            SupportSpec::Rectangle { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(Error::Parameter(
                        "support box needs matching nonempty bound vectors".into(),
                    ));
                }
                if let Some(p) = p {
                    if lo.len() != p {
                        return Err(Error::Parameter(format!(
                            "support box is {}-dimensional but the sample has p={p}",
                            lo.len()
                        )));
                    }
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
                {
                    return Err(Error::Parameter(
                        "support box needs lo < hi in every coordinate".into(),
                    ));
                }
                Ok(())
            }
            SupportSpec::DensityFloor { eps } => {
                if !(eps.is_finite() && *eps > 0.0) {
                    return Err(Error::Parameter(format!(
                        "density floor must be a positive real, got {eps}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Whether a point with the given estimated density is inside S.
    fn admits(&self, x: &[f64], density: f64) -> bool {
        match self {
            SupportSpec::AllPoints => true,
            SupportSpec::Rectangle { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| a <= v && v <= b),
            SupportSpec::DensityFloor { eps } => density >= *eps,
        }
    }

    /// The support induced on a coordinate projection (used when marginal
    /// entropies of a joint sample are needed).
    pub fn project(&self, coords: &[usize]) -> Result<SupportSpec> {
        match self {
            SupportSpec::AllPoints => Ok(SupportSpec::AllPoints),
            SupportSpec::DensityFloor { eps } => Ok(SupportSpec::DensityFloor { eps: *eps }),
            SupportSpec::Rectangle { lo, hi } => {
                if let Some(&bad) = coords.iter().find(|&&c| c >= lo.len()) {
                    return Err(Error::Parameter(format!(
                        "support projection coordinate {bad} out of range"
                    )));
                }
                Ok(SupportSpec::Rectangle {
                    lo: coords.iter().map(|&c| lo[c]).collect(),
                    hi: coords.iter().map(|&c| hi[c]).collect(),
                })
            }
        }
    }
}

/// How the bandwidth is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    /// Use this γ as given.
    Fixed(f64),
    /// The sample-size/IQR rule with tuning constant d₁.
    Rule { d1: f64 },
    /// Minimize the cross-validation criterion over this grid.
    CvGrid(Vec<f64>),
}

/// Everything the entropy pipeline reports for one sample.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    /// Entropy estimate in nats.
    pub h: f64,
    /// Bandwidth the estimate was computed with.
    pub gamma: f64,
    /// Cross-validation criterion at `gamma` (needs m ≥ 2).
    pub cv: Option<f64>,
    /// Signed mean leave-one-cycle-out deviation at `gamma`.
    pub d: Option<f64>,
    /// Plug-in estimate of the estimator's MSE.
    pub mse_hat: Option<f64>,
    pub alpha1_hat: Option<f64>,
    pub alpha2_hat: Option<f64>,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
}

/// Components of the plug-in MSE estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MseHatReport {
    /// The gated plug-in MSE value (0 when the bracket goes negative).
    pub m_hat: f64,
    pub alpha1_hat: f64,
    pub alpha2_hat: f64,
    pub cv: f64,
    pub d: f64,
}

/// Shared evaluation state for one (sample, kernel, γ, S) quadruple:
/// pairwise kernel sums, density values at the sample points, and
/// support membership. All estimator sums are driven through this so the
/// cached-matrix and recompute paths cannot drift apart.
struct Ctx<'a> {
    est: DensityEstimate<'a>,
    support: &'a SupportSpec,
    pts: Vec<&'a [f64]>,
    n: usize,
    gp: f64,
    kmat: Option<Vec<f64>>,
    rowsum: Vec<f64>,
    fhat: Vec<f64>,
    in_s: Vec<bool>,
}

impl<'a> Ctx<'a> {
    fn new(
        sample: &'a RankedSetSample,
        kernel: &'a KernelSpec,
        gamma: f64,
        support: &'a SupportSpec,
        cache_matrix: bool,
    ) -> Result<Ctx<'a>> {
        support.validate_for(Some(sample.p()))?;
        let est = DensityEstimate::new(sample, kernel, gamma)?;
        let n = sample.n();
        let p = sample.p();
        let gp = gamma.powi(p as i32);
        let pts: Vec<&[f64]> = sample.iter().collect();

        let keep = cache_matrix && n <= MATRIX_LIMIT;
        let mut kmat = if keep { vec![0.0; n * n] } else { vec![] };
        let mut rowsum = vec![0.0; n];
        let center = kernel.k0_zero().powi(p as i32);
        let mut buf = vec![0.0; p];
        for a in 0..n {
            rowsum[a] += center;
            if keep {
                kmat[a * n + a] = center;
            }
            for b in (a + 1)..n {
                for c in 0..p {
                    buf[c] = (pts[a][c] - pts[b][c]) / gamma;
                }
                let v = kernel.product(&buf);
                rowsum[a] += v;
                rowsum[b] += v;
                if keep {
                    kmat[a * n + b] = v;
                    kmat[b * n + a] = v;
                }
            }
        }
        let fhat: Vec<f64> = rowsum.iter().map(|s| s / (n as f64 * gp)).collect();
        let in_s: Vec<bool> = (0..n).map(|b| support.admits(pts[b], fhat[b])).collect();
        for b in 0..n {
            if in_s[b] && !(fhat[b] > 0.0) {
                return Err(Error::Evaluation(format!(
                    "density estimate vanished at an in-support observation \
                     (rank {}, cycle {}); the kernel support does not reach it at γ={gamma}",
                    b % sample.k(),
                    b / sample.k()
                )));
            }
        }
        Ok(Ctx {
            est,
            support,
            pts,
            n,
            gp,
            kmat: if keep { Some(kmat) } else { None },
            rowsum,
            fhat,
            in_s,
        })
    }

    fn sample(&self) -> &RankedSetSample {
        self.est.sample()
    }

    /// Kernel product K_p((X_a − X_b)/γ), from the cache when present.
    fn k_ab(&self, a: usize, b: usize, buf: &mut Vec<f64>) -> f64 {
        if let Some(m) = &self.kmat {
            return m[a * self.n + b];
        }
        let gamma = self.est.gamma();
        buf.clear();
        buf.extend(
            self.pts[a]
                .iter()
                .zip(self.pts[b])
                .map(|(u, v)| (u - v) / gamma),
        );
        self.est.kernel().product(buf)
    }

    /// The entropy estimate over the full sample.
    fn entropy(&self) -> f64 {
        let sum: f64 = (0..self.n)
            .filter(|&b| self.in_s[b])
            .map(|b| self.fhat[b].ln())
            .sum();
        -sum / self.n as f64
    }

    /// Leave-one-cycle-out criterion: mean squared and mean signed
    /// deviation of the reduced-sample estimates from the full one.
    fn cv(&self) -> Result<(f64, f64)> {
        let (k, m) = (self.sample().k(), self.sample().m());
        if m < 2 {
            return Err(Error::Parameter(
                "cross-validation needs at least two cycles".into(),
            ));
        }
        let h_full = self.entropy();
        let reduced_n = (self.n - k) as f64;
        let mut buf = Vec::new();
        let mut sq = 0.0;
        let mut signed = 0.0;
        for j in 0..m {
            let mut sum = 0.0;
            for b in 0..self.n {
                if b / k == j {
                    continue;
                }
                let excluded: f64 = (0..k).map(|i| self.k_ab(j * k + i, b, &mut buf)).sum();
                let f = (self.rowsum[b] - excluded) / (reduced_n * self.gp);
                if !self.support.admits(self.pts[b], f) {
                    continue;
                }
                if !(f > 0.0) {
                    return Err(Error::Evaluation(format!(
                        "density estimate vanished at an in-support observation when \
                         cycle {j} was left out"
                    )));
                }
                sum += f.ln();
            }
            let dev = h_full - (-sum / reduced_n);
            sq += dev * dev;
            signed += dev;
        }
        Ok((sq / m as f64, signed / m as f64))
    }

    /// The score-like functional entering the variance part of the
    /// plug-in MSE, at sample point b.
    fn score_at_sample(&self, b: usize, buf: &mut Vec<f64>) -> f64 {
        let mut lead = 0.0;
        for l in 0..self.n {
            if self.in_s[l] {
                lead += self.k_ab(l, b, buf) / (self.gp * self.fhat[l]);
            }
        }
        lead /= self.n as f64;
        if self.in_s[b] {
            lead + self.fhat[b].ln()
        } else {
            lead
        }
    }

    /// The curvature-like functional entering the bias part of the
    /// plug-in MSE, between sample points a and b (asymmetric: the second
    /// term is anchored at a).
    fn curvature_at_sample(&self, a: usize, b: usize, buf: &mut Vec<f64>) -> f64 {
        let mut lead = 0.0;
        for l in 0..self.n {
            if self.in_s[l] {
                let w = self.k_ab(l, a, buf) * self.k_ab(l, b, buf);
                lead += w / (self.gp * self.gp * self.fhat[l] * self.fhat[l]);
            }
        }
        lead *= -0.5 / self.n as f64;
        if self.in_s[a] {
            lead + self.k_ab(a, b, buf) / (self.gp * self.fhat[a])
        } else {
            lead
        }
    }

    /// The two plug-in coefficients: the U-statistic style combination of
    /// curvature diagonals/off-diagonals, and the between/within-row
    /// dispersion of the score values.
    fn alpha_hats(&self) -> (f64, f64) {
        let (k, m) = (self.sample().k(), self.sample().m());
        let n = self.n;
        let mut buf = Vec::new();

        let mut diag = 0.0;
        for b in 0..n {
            if self.in_s[b] {
                diag += self.curvature_at_sample(b, b, &mut buf);
            }
        }
        diag /= n as f64;

        let mut off = 0.0;
        if m >= 2 {
            for i in 0..k {
                for j1 in 0..m {
                    let a = j1 * k + i;
                    if !self.in_s[a] {
                        continue;
                    }
                    for j2 in (j1 + 1)..m {
                        let b = j2 * k + i;
                        if !self.in_s[b] {
                            continue;
                        }
                        // Both orientations of the asymmetric functional.
                        off += self.curvature_at_sample(a, b, &mut buf);
                        off += self.curvature_at_sample(b, a, &mut buf);
                    }
                }
            }
            off /= (m * (m - 1) * k) as f64;
        }
        let alpha1 = diag - off;

        let scores: Vec<f64> = (0..n).map(|b| self.score_at_sample(b, &mut buf)).collect();
        let mut sq_term = 0.0;
        let mut row_term = 0.0;
        for i in 0..k {
            let mut row_mean = 0.0;
            for j in 0..m {
                let b = j * k + i;
                if self.in_s[b] {
                    sq_term += scores[b] * scores[b];
                    row_mean += scores[b];
                }
            }
            row_mean /= m as f64;
            row_term += row_mean * row_mean;
        }
        let alpha2 = sq_term / n as f64 - row_term / k as f64;
        (alpha1, alpha2)
    }
}

/// The plug-in entropy estimate (nats): −(1/n) Σ log f̂(X) over the
/// in-support observations, divided by the full n.
pub fn entropy_rss(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
) -> Result<f64> {
    Ok(Ctx::new(sample, kernel, gamma, support, false)?.entropy())
}

/// The score functional at an arbitrary point (exposed so its definition
/// can be audited against direct summation).
pub fn score_function(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
    x: &[f64],
) -> Result<f64> {
    let ctx = Ctx::new(sample, kernel, gamma, support, false)?;
    let fx = ctx.est.eval(x);
    let inside = support.admits(x, fx);
    if inside && !(fx > 0.0) {
        return Err(Error::Evaluation(
            "density estimate vanished at the in-support evaluation point".into(),
        ));
    }
    let mut buf = vec![0.0; sample.p()];
    let mut lead = 0.0;
    let gamma_v = gamma;
    for l in 0..ctx.n {
        if ctx.in_s[l] {
            for c in 0..sample.p() {
                buf[c] = (ctx.pts[l][c] - x[c]) / gamma_v;
            }
            lead += kernel.product(&buf) / (ctx.gp * ctx.fhat[l]);
        }
    }
    lead /= ctx.n as f64;
    Ok(if inside { lead + fx.ln() } else { lead })
}

/// The curvature functional at an arbitrary point pair (var `x` anchors
/// the asymmetric second term). Exposed for the same audit purpose.
pub fn curvature_function(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let ctx = Ctx::new(sample, kernel, gamma, support, false)?;
    let fx = ctx.est.eval(x);
    let inside = support.admits(x, fx);
    if inside && !(fx > 0.0) {
        return Err(Error::Evaluation(
            "density estimate vanished at the in-support evaluation point".into(),
        ));
    }
    let p = sample.p();
    let mut bx = vec![0.0; p];
    let mut by = vec![0.0; p];
    let mut lead = 0.0;
    for l in 0..ctx.n {
        if ctx.in_s[l] {
            for c in 0..p {
                bx[c] = (ctx.pts[l][c] - x[c]) / gamma;
                by[c] = (ctx.pts[l][c] - y[c]) / gamma;
            }
            lead += kernel.product(&bx) * kernel.product(&by)
                / (ctx.gp * ctx.gp * ctx.fhat[l] * ctx.fhat[l]);
        }
    }
    lead *= -0.5 / ctx.n as f64;
    if inside {
        for c in 0..p {
            bx[c] = (y[c] - x[c]) / gamma;
        }
        Ok(lead + kernel.product(&bx) / (ctx.gp * fx))
    } else {
        Ok(lead)
    }
}

/// Type-7 quantile (linear interpolation of order statistics) of a
/// sorted slice.
fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The data-driven bandwidth rule:
/// γ = d₁ · n^(−1/(2+p/2)) · ĪQR · (0.5 − α̂)/(0.5 − 0.5^p),
/// where ĪQR is the mean per-coordinate interquartile range and α̂ the
/// fraction of observations inside the product of the per-coordinate
/// quartile boxes. At p = 1 the last factor is 0/0 and is defined as 1.
pub fn bandwidth_rule(sample: &RankedSetSample, d1: f64) -> Result<f64> {
    let (q1, q3, iqr_bar) = quartile_summary(sample, d1)?;
    let n = sample.n();
    let p = sample.p();
    let factor = if p == 1 {
        1.0
    } else {
        let inside = sample
            .iter()
            .filter(|o| (0..p).all(|c| q1[c] <= o[c] && o[c] <= q3[c]))
            .count();
        let alpha = inside as f64 / n as f64;
        let denom = 0.5 - 0.5f64.powi(p as i32);
        let f = (0.5 - alpha) / denom;
        if f <= 0.0 {
            return Err(Error::Parameter(format!(
                "quartile-box occupancy α̂ = {alpha} ≥ 0.5 makes the bandwidth rule \
                 nonpositive; choose the bandwidth another way"
            )));
        }
        f
    };
    Ok(d1 * (n as f64).powf(-1.0 / (2.0 + 0.5 * p as f64)) * iqr_bar * factor)
}

/// Shared bandwidth for comparing entropies of different coordinate
/// blocks of one sample (mutual information, variable selection):
/// γ = d₁ · n^(−1/(2+p/2)) · ĪQR · 0.5/(0.5 − 0.5^p), with p the full
/// sample dimension. One γ must serve blocks with different dependence
/// structures, so the central-box occupancy adjustment of
/// [`bandwidth_rule`] is dropped (α̂ = 0) and only the scale part kept;
/// at p = 1 the last factor is defined as 1, which makes the two rules
/// coincide there.
pub fn common_bandwidth_rule(sample: &RankedSetSample, d1: f64) -> Result<f64> {
    let (_, _, iqr_bar) = quartile_summary(sample, d1)?;
    let n = sample.n();
    let p = sample.p();
    let factor = if p == 1 {
        1.0
    } else {
        0.5 / (0.5 - 0.5f64.powi(p as i32))
    };
    Ok(d1 * (n as f64).powf(-1.0 / (2.0 + 0.5 * p as f64)) * iqr_bar * factor)
}

/// Per-coordinate type-7 quartiles and the mean interquartile range,
/// with the shared validation both bandwidth rules need.
fn quartile_summary(sample: &RankedSetSample, d1: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if !(d1.is_finite() && d1 > 0.0) {
        return Err(Error::Parameter(format!(
            "bandwidth constant d1 must be a positive real, got {d1}"
        )));
    }
    if sample.n() < 4 {
        return Err(Error::Parameter(
            "the bandwidth rule needs at least 4 observations for quartiles".into(),
        ));
    }
    let p = sample.p();
    let mut q1 = vec![0.0; p];
    let mut q3 = vec![0.0; p];
    let mut iqr_bar = 0.0;
    for c in 0..p {
        let mut col: Vec<f64> = sample.iter().map(|o| o[c]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        q1[c] = quantile_type7(&col, 0.25);
        q3[c] = quantile_type7(&col, 0.75);
        let iqr = q3[c] - q1[c];
        if iqr <= 0.0 {
            return Err(Error::Parameter(format!(
                "coordinate {c} has zero interquartile range; the bandwidth rule \
                 is undefined for degenerate data"
            )));
        }
        iqr_bar += iqr;
    }
    iqr_bar /= p as f64;
    Ok((q1, q3, iqr_bar))
}

/// Default cross-validation grid: 25 log-spaced bandwidths spanning a
/// factor of 4 on either side of a reference (usually rule-chosen) γ.
pub fn default_cv_grid(gamma_ref: f64) -> Result<Vec<f64>> {
    if !(gamma_ref.is_finite() && gamma_ref > 0.0) {
        return Err(Error::Parameter(format!(
            "reference bandwidth must be a positive real, got {gamma_ref}"
        )));
    }
    let lo = (gamma_ref / 4.0).ln();
    let hi = (gamma_ref * 4.0).ln();
    Ok((0..25)
        .map(|t| (lo + (hi - lo) * t as f64 / 24.0).exp())
        .collect())
}

/// Leave-one-cycle-out criterion at one bandwidth: the mean squared
/// deviation CV and the mean signed deviation D of the reduced-sample
/// entropy estimates from the full-sample one (same γ on both sides).
pub fn cv_gamma(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
) -> Result<(f64, f64)> {
    Ctx::new(sample, kernel, gamma, support, true)?.cv()
}

/// Grid minimizer of the CV criterion; ties go to the smallest γ.
pub fn select_bandwidth_cv(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    grid: &[f64],
    support: &SupportSpec,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Parameter("bandwidth grid is empty".into()));
    }
    if grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::Parameter(
            "bandwidth grid must contain only positive reals".into(),
        ));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (f64::INFINITY, sorted[0]);
    for &g in &sorted {
        let (cv, _) = cv_gamma(sample, kernel, g, support)?;
        if cv < best.0 {
            best = (cv, g);
        }
    }
    Ok(best.1)
}

/// The plug-in MSE estimate
/// M̂ = [CV + n^(−1)(α̂₂ + 2·α̂₁·|D|)] gated to 0 when the whole bracket
/// is negative, together with its components.
pub fn mse_hat(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
) -> Result<MseHatReport> {
    let ctx = Ctx::new(sample, kernel, gamma, support, true)?;
    let (cv, d) = ctx.cv()?;
    let (alpha1, alpha2) = ctx.alpha_hats();
    let bracket = cv + (alpha2 + 2.0 * alpha1 * d.abs()) / sample.n() as f64;
    Ok(MseHatReport {
        m_hat: if bracket >= 0.0 { bracket } else { 0.0 },
        alpha1_hat: alpha1,
        alpha2_hat: alpha2,
        cv,
        d,
    })
}

/// Runs the full pipeline: bandwidth selection per `policy`, the entropy
/// estimate, and (when m ≥ 2) the CV and plug-in MSE diagnostics.
pub fn full_report(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    policy: &BandwidthPolicy,
    support: &SupportSpec,
) -> Result<EntropyReport> {
    let gamma = match policy {
        BandwidthPolicy::Fixed(g) => *g,
        BandwidthPolicy::Rule { d1 } => bandwidth_rule(sample, *d1)?,
        BandwidthPolicy::CvGrid(grid) => select_bandwidth_cv(sample, kernel, grid, support)?,
    };
    let h = entropy_rss(sample, kernel, gamma, support)?;
    let diag = if sample.m() >= 2 {
        Some(mse_hat(sample, kernel, gamma, support)?)
    } else {
        None
    };
    Ok(EntropyReport {
        h,
        gamma,
        cv: diag.map(|d| d.cv),
        d: diag.map(|d| d.d),
        mse_hat: diag.map(|d| d.m_hat),
        alpha1_hat: diag.map(|d| d.alpha1_hat),
        alpha2_hat: diag.map(|d| d.alpha2_hat),
        n: sample.n(),
        k: sample.k(),
        m: sample.m(),
        r: sample.r(),
        p: sample.p(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{draw_mrss, draw_srs, Design, PopulationSource};
    use crate::kernels::scaled_gaussian;
    use crate::parent::ParentModel;
    use proptest::prelude::*;

    fn normal_sample(k: usize, m: usize, seed: u64) -> RankedSetSample {
        let design = Design::new(k, m, 1, 0).unwrap();
        let source = PopulationSource::Model(ParentModel::standard_normal());
        draw_mrss(&source, &design, seed).unwrap()
    }

    #[test]
    fn gaussian_entropy_large_sample() {
        let source = PopulationSource::Model(ParentModel::standard_normal());
        let sample = draw_srs(&source, 10_000, 31).unwrap();
        let gamma = bandwidth_rule(&sample, 1.0).unwrap();
        let kernel = scaled_gaussian();
        let h = entropy_rss(&sample, &kernel, gamma, &SupportSpec::AllPoints).unwrap();
        let truth = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!(
            (h - truth).abs() < 0.05,
            "entropy {h} vs closed form {truth}"
        );
    }

    #[test]
    fn matches_naive_direct_formula() {
        let sample = normal_sample(5, 1, 3);
        let kernel = scaled_gaussian();
        let gamma = 0.6;
        let h = entropy_rss(&sample, &kernel, gamma, &SupportSpec::AllPoints).unwrap();
        let pts: Vec<f64> = sample.iter().map(|o| o[0]).collect();
        let mut naive = 0.0;
        for a in &pts {
            let mut f = 0.0;
            for b in &pts {
                f += kernel.k0((a - b) / gamma);
            }
            f /= pts.len() as f64 * gamma;
            naive += f.ln();
        }
        naive = -naive / pts.len() as f64;
        assert!((h - naive).abs() < 1e-12);
    }

    #[test]
    fn support_trimming() {
        let sample = normal_sample(3, 4, 5);
        let kernel = scaled_gaussian();
        // A box excluding every observation zeroes the estimate.
        let outside = SupportSpec::rectangle(vec![100.0], vec![101.0]).unwrap();
        let h = entropy_rss(&sample, &kernel, 0.5, &outside).unwrap();
        assert_eq!(h, 0.0);
        // A box containing every observation changes nothing.
        let everything = SupportSpec::rectangle(vec![-100.0], vec![100.0]).unwrap();
        let h_all = entropy_rss(&sample, &kernel, 0.5, &SupportSpec::AllPoints).unwrap();
        let h_box = entropy_rss(&sample, &kernel, 0.5, &everything).unwrap();
        assert_eq!(h_all, h_box);
        // A tiny density floor keeps all points; a huge one drops them all.
        let low = SupportSpec::density_floor(1e-300).unwrap();
        assert_eq!(
            entropy_rss(&sample, &kernel, 0.5, &low).unwrap(),
            h_all
        );
        let high = SupportSpec::density_floor(1e6).unwrap();
        assert_eq!(entropy_rss(&sample, &kernel, 0.5, &high).unwrap(), 0.0);
        // Partial trimming: recompute by hand with the indicator.
        let half = SupportSpec::rectangle(vec![0.0], vec![100.0]).unwrap();
        let h_half = entropy_rss(&sample, &kernel, 0.5, &half).unwrap();
        let est = DensityEstimate::new(&sample, &kernel, 0.5).unwrap();
        let mut byhand = 0.0;
        for obs in sample.iter() {
            if obs[0] >= 0.0 {
                byhand += est.eval(obs).ln();
            }
        }
        byhand = -byhand / sample.n() as f64;
        assert!((h_half - byhand).abs() < 1e-12);
        assert_ne!(h_half, h_all);
    }

    #[test]
    fn support_validation() {
        assert!(SupportSpec::rectangle(vec![0.0], vec![0.0]).is_err());
        assert!(SupportSpec::rectangle(vec![1.0], vec![0.0]).is_err());
        assert!(SupportSpec::rectangle(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(SupportSpec::density_floor(0.0).is_err());
        assert!(SupportSpec::density_floor(-1.0).is_err());
        // Dimension mismatch surfaces at evaluation time.
        let sample = normal_sample(3, 2, 1);
        let box2 = SupportSpec::Rectangle {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        assert!(entropy_rss(&sample, &scaled_gaussian(), 0.5, &box2).is_err());
        // Projection keeps the selected coordinates.
        let boxp = SupportSpec::rectangle(vec![0.0, 10.0], vec![1.0, 20.0]).unwrap();
        let proj = boxp.project(&[1]).unwrap();
        assert_eq!(
            proj,
            SupportSpec::Rectangle {
                lo: vec![10.0],
                hi: vec![20.0]
            }
        );
        assert!(boxp.project(&[2]).is_err());
    }

    #[test]
    fn shift_invariance() {
        let sample = normal_sample(3, 5, 9);
        let kernel = scaled_gaussian();
        let shifted: Vec<f64> = sample.iter().flat_map(|o| o.to_vec()).map(|v| v + 7.5).collect();
        let shifted =
            RankedSetSample::from_parts(sample.k(), sample.m(), sample.r(), 1, shifted).unwrap();
        let h0 = entropy_rss(&sample, &kernel, 0.45, &SupportSpec::AllPoints).unwrap();
        let h1 = entropy_rss(&shifted, &kernel, 0.45, &SupportSpec::AllPoints).unwrap();
        assert!((h0 - h1).abs() < 1e-9);
    }

    #[test]
    fn cycle_permutation_invariance() {
        let sample = normal_sample(3, 4, 13);
        let perm = [2usize, 0, 3, 1];
        let data: Vec<f64> = perm
            .iter()
            .flat_map(|&j| sample.cycle(j).flatten().copied().collect::<Vec<_>>())
            .collect();
        let permuted = RankedSetSample::from_parts(3, 4, 1, 1, data).unwrap();
        let kernel = scaled_gaussian();
        let s = SupportSpec::AllPoints;
        let h0 = entropy_rss(&sample, &kernel, 0.5, &s).unwrap();
        let h1 = entropy_rss(&permuted, &kernel, 0.5, &s).unwrap();
        assert!((h0 - h1).abs() < 1e-12);
        let (cv0, d0) = cv_gamma(&sample, &kernel, 0.5, &s).unwrap();
        let (cv1, d1) = cv_gamma(&permuted, &kernel, 0.5, &s).unwrap();
        assert!((cv0 - cv1).abs() < 1e-12 && (d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn cv_matches_rebuilt_reduced_samples() {
        let sample = normal_sample(2, 5, 17);
        let kernel = scaled_gaussian();
        let gamma = 0.55;
        let s = SupportSpec::AllPoints;
        let (cv, d) = cv_gamma(&sample, &kernel, gamma, &s).unwrap();
        let h_full = entropy_rss(&sample, &kernel, gamma, &s).unwrap();
        let mut sq = 0.0;
        let mut signed = 0.0;
        for j in 0..5 {
            let reduced: Vec<f64> = sample
                .iter_indexed()
                .filter(|(_, jj, _)| *jj != j)
                .flat_map(|(_, _, o)| o.to_vec())
                .collect();
            let reduced = RankedSetSample::from_parts(2, 4, 1, 1, reduced).unwrap();
            let h_red = entropy_rss(&reduced, &kernel, gamma, &s).unwrap();
            sq += (h_full - h_red) * (h_full - h_red);
            signed += h_full - h_red;
        }
        assert!((cv - sq / 5.0).abs() < 1e-12);
        assert!((d - signed / 5.0).abs() < 1e-12);
    }

    #[test]
    fn cv_streaming_path_matches_cached_matrix() {
        let sample = normal_sample(3, 6, 19);
        let kernel = scaled_gaussian();
        let s = SupportSpec::AllPoints;
        let cached = Ctx::new(&sample, &kernel, 0.5, &s, true).unwrap();
        let streaming = Ctx::new(&sample, &kernel, 0.5, &s, false).unwrap();
        assert!(cached.kmat.is_some() && streaming.kmat.is_none());
        let (cv_a, d_a) = cached.cv().unwrap();
        let (cv_b, d_b) = streaming.cv().unwrap();
        assert!((cv_a - cv_b).abs() < 1e-15 && (d_a - d_b).abs() < 1e-15);
        let (a1_a, a2_a) = cached.alpha_hats();
        let (a1_b, a2_b) = streaming.alpha_hats();
        assert!((a1_a - a1_b).abs() < 1e-12 && (a2_a - a2_b).abs() < 1e-12);
    }

    #[test]
    fn duplicate_cycles_give_zero_cv() {
        let one_cycle = [0.3, -0.8, 1.2];
        let data: Vec<f64> = one_cycle.iter().cycle().take(12).copied().collect();
        let sample = RankedSetSample::from_parts(3, 4, 1, 1, data).unwrap();
        let (cv, d) = cv_gamma(&sample, &scaled_gaussian(), 0.5, &SupportSpec::AllPoints).unwrap();
        // Identical cycles leave only rounding noise in the between-cycle
        // spread, so allow for cancellation at the last few bits.
        assert!(cv.abs() < 1e-12, "cv {cv}");
        assert!(d.abs() < 1e-12, "d {d}");
    }

    #[test]
    fn cv_needs_two_cycles() {
        let sample = normal_sample(4, 1, 2);
        let kernel = scaled_gaussian();
        assert!(cv_gamma(&sample, &kernel, 0.5, &SupportSpec::AllPoints).is_err());
        assert!(mse_hat(&sample, &kernel, 0.5, &SupportSpec::AllPoints).is_err());
    }

    #[test]
    fn bandwidth_rule_one_dimensional_hand_check() {
        let sample =
            RankedSetSample::from_parts(1, 5, 1, 1, vec![1.0, 2.0, 3.0, 4.0, 10.0]).unwrap();
        // Sorted values 1..4,10: type-7 quartiles are 2 and 4, IQR 2; the
        // p=1 correction factor is 1 by convention.
        let got = bandwidth_rule(&sample, 0.9).unwrap();
        let want = 0.9 * 5f64.powf(-0.4) * 2.0;
        assert!((got - want).abs() < 1e-12);
        // Degenerate data and tiny samples are rejected.
        let flat = RankedSetSample::from_parts(1, 4, 1, 1, vec![2.0; 4]).unwrap();
        assert!(bandwidth_rule(&flat, 1.0).is_err());
        let tiny = RankedSetSample::from_parts(1, 3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(bandwidth_rule(&tiny, 1.0).is_err());
        assert!(bandwidth_rule(&sample, 0.0).is_err());
    }

    #[test]
    fn bandwidth_rule_two_dimensional_hand_check() {
        let data = vec![0.0, 0.0, 1.0, 30.0, 2.0, 10.0, 3.0, 20.0];
        let sample = RankedSetSample::from_parts(1, 4, 1, 2, data).unwrap();
        // Coordinate quartiles: [0.75, 2.25] and [7.5, 22.5]; IQRs 1.5 and
        // 15; only (2,10) lies in the box, so α̂ = 0.25 and the correction
        // factor is (0.5−0.25)/(0.5−0.25) = 1.
        let got = bandwidth_rule(&sample, 1.1).unwrap();
        let want = 1.1 * 4f64.powf(-1.0 / 3.0) * 8.25;
        assert!((got - want).abs() < 1e-12);
        // Half the points inside the box pushes the factor to 0: rejected.
        let data = vec![0.0, 0.0, 1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let aligned = RankedSetSample::from_parts(1, 4, 1, 2, data).unwrap();
        assert!(bandwidth_rule(&aligned, 1.1).is_err());
    }

    #[test]
    fn common_bandwidth_rule_drops_occupancy_adjustment() {
        // Same sample as the two-dimensional hand check: ĪQR = 8.25, but the
        // factor is now 0.5/(0.5−0.25) = 2 regardless of box occupancy.
        let data = vec![0.0, 0.0, 1.0, 30.0, 2.0, 10.0, 3.0, 20.0];
        let sample = RankedSetSample::from_parts(1, 4, 1, 2, data).unwrap();
        let got = common_bandwidth_rule(&sample, 1.1).unwrap();
        let want = 1.1 * 4f64.powf(-1.0 / 3.0) * 8.25 * 2.0;
        assert!((got - want).abs() < 1e-12);
        // Perfectly aligned coordinates break bandwidth_rule but not this
        // one: no dependence adjustment, no degeneracy.
        let data = vec![0.0, 0.0, 1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let aligned = RankedSetSample::from_parts(1, 4, 1, 2, data).unwrap();
        assert!(common_bandwidth_rule(&aligned, 1.1).is_ok());
        // At p = 1 the two rules coincide exactly.
        let uni = RankedSetSample::from_parts(1, 5, 1, 1, vec![1.0, 2.0, 3.0, 4.0, 10.0]).unwrap();
        assert_eq!(
            common_bandwidth_rule(&uni, 0.9).unwrap(),
            bandwidth_rule(&uni, 0.9).unwrap()
        );
        assert!(common_bandwidth_rule(&uni, -1.0).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_cv_grid(0.8).unwrap();
        assert_eq!(grid.len(), 25);
        assert!((grid[0] - 0.2).abs() < 1e-12);
        assert!((grid[24] - 3.2).abs() < 1e-12);
        let ratio = grid[1] / grid[0];
        for w in grid.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12, "grid must be log-spaced");
        }
        assert!(default_cv_grid(0.0).is_err());
    }

    #[test]
    fn grid_selection_tie_goes_to_smallest() {
        // Duplicate cycles make CV ≡ 0, so every grid point ties.
        let one_cycle = [0.1, 0.9];
        let data: Vec<f64> = one_cycle.iter().cycle().take(8).copied().collect();
        let sample = RankedSetSample::from_parts(2, 4, 1, 1, data).unwrap();
        let kernel = scaled_gaussian();
        let s = SupportSpec::AllPoints;
        let g = select_bandwidth_cv(&sample, &kernel, &[0.9, 0.3, 0.6], &s).unwrap();
        assert_eq!(g, 0.3);
        // Singleton grid returns its element; bad grids are rejected.
        assert_eq!(
            select_bandwidth_cv(&sample, &kernel, &[0.7], &s).unwrap(),
            0.7
        );
        assert!(select_bandwidth_cv(&sample, &kernel, &[], &s).is_err());
        assert!(select_bandwidth_cv(&sample, &kernel, &[0.5, -0.1], &s).is_err());
    }

    #[test]
    fn plugin_functionals_match_direct_sums() {
        let sample = normal_sample(2, 3, 29);
        let kernel = scaled_gaussian();
        let gamma = 0.7;
        let s = SupportSpec::AllPoints;
        let pts: Vec<f64> = sample.iter().map(|o| o[0]).collect();
        let n = pts.len() as f64;
        let fh = |x: f64| -> f64 {
            pts.iter().map(|v| kernel.k0((x - v) / gamma)).sum::<f64>() / (n * gamma)
        };
        let score_direct = |x: f64| -> f64 {
            let lead: f64 = pts
                .iter()
                .map(|v| kernel.k0((v - x) / gamma) / (gamma * fh(*v)))
                .sum::<f64>()
                / n;
            lead + fh(x).ln()
        };
        let curv_direct = |x: f64, y: f64| -> f64 {
            let lead: f64 = pts
                .iter()
                .map(|v| {
                    kernel.k0((v - x) / gamma) * kernel.k0((v - y) / gamma)
                        / (gamma * gamma * fh(*v) * fh(*v))
                })
                .sum::<f64>()
                * (-0.5)
                / n;
            lead + kernel.k0((y - x) / gamma) / (gamma * fh(x))
        };
        for &x in &[0.2, -0.9] {
            let got = score_function(&sample, &kernel, gamma, &s, &[x]).unwrap();
            assert!((got - score_direct(x)).abs() < 1e-12);
        }
        let got = curvature_function(&sample, &kernel, gamma, &s, &[0.2], &[-0.4]).unwrap();
        assert!((got - curv_direct(0.2, -0.4)).abs() < 1e-12);

        // The plug-in coefficients equal the same direct sums arranged per
        // their definitions (diagonal minus ordered off-diagonal average;
        // mean square minus row-mean squares).
        let rep = mse_hat(&sample, &kernel, gamma, &s).unwrap();
        let (k, m) = (2usize, 3usize);
        let at = |i: usize, j: usize| pts[j * k + i];
        let mut diag = 0.0;
        for i in 0..k {
            for j in 0..m {
                diag += curv_direct(at(i, j), at(i, j));
            }
        }
        diag /= n;
        let mut off = 0.0;
        for i in 0..k {
            for j1 in 0..m {
                for j2 in 0..m {
                    if j1 != j2 {
                        off += curv_direct(at(i, j1), at(i, j2));
                    }
                }
            }
        }
        off /= (m * (m - 1) * k) as f64;
        let alpha1 = diag - off;
        assert!((rep.alpha1_hat - alpha1).abs() < 1e-12, "{} vs {alpha1}", rep.alpha1_hat);
        let mut sq = 0.0;
        let mut rows = 0.0;
        for i in 0..k {
            let mut mean = 0.0;
            for j in 0..m {
                let v = score_direct(at(i, j));
                sq += v * v;
                mean += v;
            }
            mean /= m as f64;
            rows += mean * mean;
        }
        let alpha2 = sq / n - rows / k as f64;
        assert!((rep.alpha2_hat - alpha2).abs() < 1e-12, "{} vs {alpha2}", rep.alpha2_hat);
    }

    #[test]
    fn mse_gate_definition() {
        let sample = normal_sample(3, 5, 37);
        let kernel = scaled_gaussian();
        let rep = mse_hat(&sample, &kernel, 0.5, &SupportSpec::AllPoints).unwrap();
        let bracket =
            rep.cv + (rep.alpha2_hat + 2.0 * rep.alpha1_hat * rep.d.abs()) / sample.n() as f64;
        if bracket >= 0.0 {
            assert_eq!(rep.m_hat, bracket);
        } else {
            assert_eq!(rep.m_hat, 0.0);
        }
        assert!(rep.m_hat >= 0.0);
        assert!(rep.cv >= rep.d * rep.d - 1e-15);
    }

    #[test]
    fn full_report_wires_policies_together() {
        let sample = normal_sample(3, 10, 41);
        let kernel = scaled_gaussian();
        let s = SupportSpec::AllPoints;
        let fixed = full_report(&sample, &kernel, &BandwidthPolicy::Fixed(0.6), &s).unwrap();
        assert_eq!(fixed.gamma, 0.6);
        assert!(fixed.cv.is_some() && fixed.mse_hat.is_some());
        assert_eq!((fixed.n, fixed.k, fixed.m, fixed.r, fixed.p), (30, 3, 10, 1, 1));
        let rule = full_report(&sample, &kernel, &BandwidthPolicy::Rule { d1: 1.2 }, &s).unwrap();
        assert_eq!(rule.gamma, bandwidth_rule(&sample, 1.2).unwrap());
        assert!((rule.h - entropy_rss(&sample, &kernel, rule.gamma, &s).unwrap()).abs() < 1e-15);
        let grid = default_cv_grid(rule.gamma).unwrap();
        let cv_pick =
            full_report(&sample, &kernel, &BandwidthPolicy::CvGrid(grid.clone()), &s).unwrap();
        assert!(grid.contains(&cv_pick.gamma));
        // Single-cycle samples still report H but no CV diagnostics.
        let single = normal_sample(4, 1, 43);
        let rep = full_report(&single, &kernel, &BandwidthPolicy::Fixed(0.5), &s).unwrap();
        assert!(rep.cv.is_none() && rep.mse_hat.is_none());
        // The report serializes with every field present.
        let js = serde_json::to_value(&rep).unwrap();
        for key in ["h", "gamma", "cv", "d", "mse_hat", "alpha1_hat", "alpha2_hat", "n"] {
            assert!(js.get(key).is_some(), "missing field {key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn plugin_invariants_hold_on_random_samples(
            values in prop::collection::vec(-3.0f64..3.0, 12),
            gamma in 0.25f64..2.0,
        ) {
            let sample = RankedSetSample::from_parts(3, 4, 1, 1, values).unwrap();
            let kernel = scaled_gaussian();
            let rep = mse_hat(&sample, &kernel, gamma, &SupportSpec::AllPoints).unwrap();
            // Row-wise mean-square dominance makes the dispersion
            // coefficient nonnegative.
            prop_assert!(rep.alpha2_hat >= -1e-9);
            // Squared-mean versus mean-square for the CV deviations.
            prop_assert!(rep.cv >= rep.d * rep.d - 1e-12);
            // The gate either passes the bracket through or zeroes it.
            let bracket = rep.cv
                + (rep.alpha2_hat + 2.0 * rep.alpha1_hat * rep.d.abs()) / sample.n() as f64;
            if bracket >= 0.0 {
                prop_assert!((rep.m_hat - bracket).abs() < 1e-15);
            } else {
                prop_assert!(rep.m_hat == 0.0);
            }
            // When the curvature correction is nonnegative the plug-in MSE
            // dominates the CV criterion.
            if rep.alpha2_hat + 2.0 * rep.alpha1_hat * rep.d.abs() >= 0.0 {
                prop_assert!(rep.m_hat >= rep.cv);
            }
        }
    }
}
