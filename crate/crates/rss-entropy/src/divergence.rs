//! Mutual information, a standardized information coefficient, and
//! Kullback–Leibler divergence, all built on the ranked-set entropy
//! estimator.
//!
//! Mutual information between two coordinate blocks of one sample is
//! estimated as Î = H(block₁) + H(block₂) − H(joint), every entropy
//! using the same bandwidth and the same univariate kernel factor. The
//! standardized coefficient 𝓘 = 1 − e^(−2Î) maps it into [0, 1); for a
//! bivariate normal it equals ρ² at the population level.

use serde::Serialize;

use crate::density::DensityEstimate;
use crate::designs::RankedSetSample;
use crate::entropy::{entropy_rss, SupportSpec};
use crate::kernels::{piecewise_joe, scaled_gaussian, KernelFamily, KernelSpec};
use crate::parent::FinitePopulation;
use crate::{Error, Result};

/// Mutual information estimate between two coordinate blocks.
#[derive(Debug, Clone, Serialize)]
pub struct MiReport {
    /// Î clamped to be nonnegative.
    pub i_hat: f64,
    /// The raw entropy combination before clamping.
    pub i_raw: f64,
    /// Whether clamping changed the value.
    pub clamped: bool,
    /// Standardized coefficient 1 − exp(−2·Î), in [0, 1).
    pub i_std: f64,
    pub h_block1: f64,
    pub h_block2: f64,
    pub h_joint: f64,
    pub gamma: f64,
    pub block1: Vec<usize>,
    pub block2: Vec<usize>,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
}

/// A kernel of the same family sized for a `dim`-dimensional product.
/// The smooth family is dimension-free; the piecewise family has
/// per-dimension constants.
pub fn kernel_for_dim(kernel: &KernelSpec, dim: usize) -> Result<KernelSpec> {
    match kernel.family() {
        KernelFamily::ScaledGaussian => Ok(scaled_gaussian()),
        KernelFamily::PiecewiseJoe => piecewise_joe(dim),
    }
}

fn validate_blocks(p: usize, block1: &[usize], block2: &[usize]) -> Result<()> {
    if block1.is_empty() || block2.is_empty() {
        return Err(Error::Parameter(
            "both coordinate blocks must be nonempty".into(),
        ));
    }
    let mut seen = vec![false; p];
    for &c in block1.iter().chain(block2) {
        if c >= p {
            return Err(Error::Parameter(format!(
                "block coordinate {c} out of range for p={p}"
            )));
        }
        if seen[c] {
            return Err(Error::Parameter(format!(
                "coordinate {c} appears in more than one block"
            )));
        }
        seen[c] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parameter(format!(
            "coordinate {missing} belongs to neither block; the blocks must \
             partition all coordinates"
        )));
    }
    Ok(())
}

/// Combines the three entropies into the clamped mutual information and
/// its standardized value. Exposed so the clamping step is separately
/// testable.
pub fn combine_mi(h_block1: f64, h_block2: f64, h_joint: f64) -> (f64, f64, bool, f64) {
    let raw = h_block1 + h_block2 - h_joint;
    let clamped = raw < 0.0;
    let i_hat = if clamped { 0.0 } else { raw };
    (i_hat, raw, clamped, 1.0 - (-2.0 * i_hat).exp())
}

/// Estimates the mutual information between two coordinate blocks of one
/// ranked set sample: the two marginal entropies minus the joint one,
/// all with the same γ.
pub fn mutual_information(
    sample: &RankedSetSample,
    block1: &[usize],
    block2: &[usize],
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
) -> Result<MiReport> {
    validate_blocks(sample.p(), block1, block2)?;
    let joint_kernel = kernel_for_dim(kernel, sample.p())?;
    let h_joint = entropy_rss(sample, &joint_kernel, gamma, support)?;
    let mut marginals = [0.0; 2];
    for (slot, block) in [(0, block1), (1, block2)] {
        let projected = sample.project(block)?;
        let sub_support = support.project(block)?;
        let sub_kernel = kernel_for_dim(kernel, block.len())?;
        marginals[slot] = entropy_rss(&projected, &sub_kernel, gamma, &sub_support)?;
    }
    let (i_hat, i_raw, clamped, i_std) = combine_mi(marginals[0], marginals[1], h_joint);
    Ok(MiReport {
        i_hat,
        i_raw,
        clamped,
        i_std,
        h_block1: marginals[0],
        h_block2: marginals[1],
        h_joint,
        gamma,
        block1: block1.to_vec(),
        block2: block2.to_vec(),
        n: sample.n(),
        k: sample.k(),
        m: sample.m(),
        r: sample.r(),
        p: sample.p(),
    })
}

/// 𝓘 = 1 − e^(−2I): the standardized information coefficient.
pub fn standardized_mi(i: f64) -> Result<f64> {
    if !(i >= 0.0) {
        return Err(Error::Parameter(format!(
            "standardization needs a nonnegative information value, got {i}"
        )));
    }
    Ok(1.0 - (-2.0 * i).exp())
}

/// Estimates KL(f₁ ‖ f₂) as the average log density ratio of the two
/// kernel estimates over the first sample's observations.
pub fn kl_divergence(
    sample1: &RankedSetSample,
    sample2: &RankedSetSample,
    kernel: &KernelSpec,
    gamma: f64,
) -> Result<f64> {
    if sample1.p() != sample2.p() {
        return Err(Error::Parameter(format!(
            "samples have different dimensions: {} vs {}",
            sample1.p(),
            sample2.p()
        )));
    }
    let est1 = DensityEstimate::new(sample1, kernel, gamma)?;
    let est2 = DensityEstimate::new(sample2, kernel, gamma)?;
    let mut sum = 0.0;
    let mut vanished = 0usize;
    for x in sample1.iter() {
        let f1 = est1.eval(x);
        let f2 = est2.eval(x);
        if !(f2 > 0.0) {
            vanished += 1;
            continue;
        }
        if !(f1 > 0.0) {
            // Cannot happen for the smooth kernel; the compact one always
            // covers its own sample points.
            return Err(Error::Evaluation(
                "first-sample density vanished at one of its own observations".into(),
            ));
        }
        sum += f1.ln() - f2.ln();
    }
    if vanished > 0 {
        return Err(Error::Evaluation(format!(
            "second-sample density is zero at {vanished} of {} evaluation points; \
             the kernel support does not reach them at γ={gamma}",
            sample1.n()
        )));
    }
    Ok(sum / sample1.n() as f64)
}

/// Views a finite population as a flat (k=1) sample so every estimator
/// can run on it directly.
pub fn population_as_sample(pop: &FinitePopulation) -> Result<RankedSetSample> {
    let data: Vec<f64> = pop.rows().iter().flatten().copied().collect();
    RankedSetSample::from_parts(1, pop.len(), 1, pop.dim(), data)
}

/// The N-point plug-in entropy of a finite population: the entropy
/// estimator applied to all rows at once (entropy sign convention).
pub fn entropy_population(
    pop: &FinitePopulation,
    kernel: &KernelSpec,
    gamma: f64,
    support: &SupportSpec,
) -> Result<f64> {
    if pop.len() < 2 {
        return Err(Error::Size(
            "population entropy needs at least 2 rows".into(),
        ));
    }
    entropy_rss(&population_as_sample(pop)?, kernel, gamma, support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{draw_mrss, draw_srs, Design, PopulationSource};
    use crate::entropy::bandwidth_rule;
    use crate::parent::ParentModel;

    fn bivariate_sample(rho: f64, k: usize, m: usize, seed: u64) -> RankedSetSample {
        let design = Design::new(k, m, 1, 1).unwrap();
        let source = PopulationSource::Model(ParentModel::bivariate_normal(rho).unwrap());
        draw_mrss(&source, &design, seed).unwrap()
    }

    #[test]
    fn entropy_decomposition_matches_direct_log_ratio() {
        let sample = bivariate_sample(0.7, 3, 6, 2);
        let kernel = scaled_gaussian();
        let gamma = 0.5;
        let s = SupportSpec::AllPoints;
        let rep = mutual_information(&sample, &[0], &[1], &kernel, gamma, &s).unwrap();
        // Direct plug-in: average log f̂_joint/(f̂₁·f̂₂) over the sample.
        let joint = DensityEstimate::new(&sample, &kernel, gamma).unwrap();
        let m1 = sample.project(&[0]).unwrap();
        let m2 = sample.project(&[1]).unwrap();
        let est1 = DensityEstimate::new(&m1, &kernel, gamma).unwrap();
        let est2 = DensityEstimate::new(&m2, &kernel, gamma).unwrap();
        let mut direct = 0.0;
        for x in sample.iter() {
            direct += joint.eval(x).ln() - est1.eval(&x[..1]).ln() - est2.eval(&x[1..]).ln();
        }
        direct /= sample.n() as f64;
        assert!((rep.i_raw - direct).abs() < 1e-10);
        // Standardization invariant.
        assert!((rep.i_std - (1.0 - (-2.0 * rep.i_hat).exp())).abs() < 1e-15);
    }

    #[test]
    fn block_validation() {
        let sample = bivariate_sample(0.5, 2, 4, 3);
        let kernel = scaled_gaussian();
        let s = SupportSpec::AllPoints;
        for (b1, b2) in [
            (vec![0usize], vec![0usize]),
            (vec![0], vec![]),
            (vec![0], vec![2]),
            (vec![1], vec![1]),
        ] {
            assert!(
                mutual_information(&sample, &b1, &b2, &kernel, 0.5, &s).is_err(),
                "blocks {b1:?}/{b2:?} should be rejected"
            );
        }
        // A 3-d sample with a held-out coordinate is also rejected.
        let tri = RankedSetSample::from_parts(
            1,
            4,
            1,
            3,
            (0..12).map(|v| v as f64 * 0.37).collect(),
        )
        .unwrap();
        assert!(mutual_information(&tri, &[0], &[1], &kernel, 0.5, &s).is_err());
        assert!(mutual_information(&tri, &[0, 2], &[1], &kernel, 0.5, &s).is_ok());
    }

    #[test]
    fn clamping_behavior() {
        let (i_hat, raw, clamped, i_std) = combine_mi(1.0, 1.0, 2.5);
        assert_eq!(i_hat, 0.0);
        assert_eq!(raw, -0.5);
        assert!(clamped);
        assert_eq!(i_std, 0.0);
        let (i_hat, raw, clamped, _) = combine_mi(1.0, 1.0, 1.6);
        assert!(!clamped);
        assert!((i_hat - 0.4).abs() < 1e-15 && raw == i_hat);
    }

    #[test]
    fn standardization_closed_forms() {
        assert_eq!(standardized_mi(0.0).unwrap(), 0.0);
        // Bivariate normal: I = −0.5·log(1−ρ²) standardizes to exactly ρ².
        let rho: f64 = 0.9;
        let i = -0.5 * (1.0 - rho * rho).ln();
        assert!((standardized_mi(i).unwrap() - rho * rho).abs() < 1e-15);
        // An information value of 0.550 standardizes to about 0.667.
        assert!((standardized_mi(0.550).unwrap() - 0.667).abs() < 5e-4);
        assert!(standardized_mi(-0.1).is_err());
        assert!(standardized_mi(f64::NAN).is_err());
    }

    #[test]
    fn correlated_blocks_carry_more_information() {
        let kernel = scaled_gaussian();
        let s = SupportSpec::AllPoints;
        let tight = bivariate_sample(0.9, 3, 10, 7);
        let g = bandwidth_rule(&tight, 1.05).unwrap();
        let hi = mutual_information(&tight, &[0], &[1], &kernel, g, &s).unwrap();
        let loose = bivariate_sample(0.0, 3, 10, 7);
        let g0 = bandwidth_rule(&loose, 1.05).unwrap();
        let lo = mutual_information(&loose, &[0], &[1], &kernel, g0, &s).unwrap();
        assert!(
            hi.i_hat > lo.i_hat,
            "ρ=0.9 sample: Î={}, ρ=0 sample: Î={}",
            hi.i_hat,
            lo.i_hat
        );
        assert!(lo.i_hat < 0.3, "independent blocks: Î={}", lo.i_hat);
    }

    #[test]
    fn kl_identical_samples_is_zero() {
        let sample = bivariate_sample(0.4, 3, 5, 11);
        let kernel = scaled_gaussian();
        let kl = kl_divergence(&sample, &sample.clone(), &kernel, 0.5).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn kl_gaussian_shift_oracle() {
        let source0 = PopulationSource::Model(ParentModel::standard_normal());
        let source1 = PopulationSource::Model(ParentModel::normal(1.0, 1.0).unwrap());
        let s1 = draw_srs(&source0, 2000, 13).unwrap();
        let s2 = draw_srs(&source1, 2000, 14).unwrap();
        let kernel = scaled_gaussian();
        let gamma = bandwidth_rule(&s1, 1.0).unwrap();
        let forward = kl_divergence(&s1, &s2, &kernel, gamma).unwrap();
        // KL(N(0,1) ‖ N(1,1)) = 1/2.
        assert!((forward - 0.5).abs() < 0.15, "KL estimate {forward}");
        let backward = kl_divergence(&s2, &s1, &kernel, gamma).unwrap();
        assert_ne!(forward, backward);
    }

    #[test]
    fn kl_reports_unreachable_evaluation_points() {
        let near = RankedSetSample::from_parts(1, 2, 1, 1, vec![0.0, 0.1]).unwrap();
        let far = RankedSetSample::from_parts(1, 2, 1, 1, vec![100.0, 100.1]).unwrap();
        let kernel = piecewise_joe(1).unwrap();
        let err = kl_divergence(&near, &far, &kernel, 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2 of 2"), "message should count points: {msg}");
        // Dimension mismatch is rejected up front.
        let joint = bivariate_sample(0.2, 2, 2, 5);
        assert!(kl_divergence(&near, &joint, &scaled_gaussian(), 0.5).is_err());
    }

    #[test]
    fn population_entropy_two_point_oracle() {
        let pop = FinitePopulation::new(
            vec!["x".into()],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap();
        let kernel = scaled_gaussian();
        let h = entropy_population(&pop, &kernel, 1.0, &SupportSpec::AllPoints).unwrap();
        // Both points see density (k₀(0)+k₀(1))/2 at γ=1.
        let f = (kernel.k0(0.0) + kernel.k0(1.0)) / 2.0;
        assert!((h + f.ln()).abs() < 1e-12);
        let single = FinitePopulation::new(vec!["x".into()], vec![vec![0.0]]).unwrap();
        assert!(entropy_population(&single, &kernel, 1.0, &SupportSpec::AllPoints).is_err());
        // A constant population breaks the bandwidth rule upstream.
        let flat = FinitePopulation::new(
            vec!["x".into()],
            vec![vec![2.0], vec![2.0], vec![2.0], vec![2.0]],
        )
        .unwrap();
        let as_sample = population_as_sample(&flat).unwrap();
        assert!(bandwidth_rule(&as_sample, 1.0).is_err());
    }
}
