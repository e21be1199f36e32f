//! Monte Carlo experiment harness: replicated draw → estimate → diagnose
//! runs over a grid of design configurations, with aggregates suitable for
//! efficiency tables.
//!
//! Reproducibility contract: every replication runs on its own RNG
//! substream, keyed by the master seed, the cell's design content
//! (k, m, r, ρ), and the replication index — never by grid position,
//! worker id, or bandwidth constant. Replications are distributed over a
//! worker pool, collected in index order, and reduced sequentially, so the
//! aggregates are bit-identical regardless of the worker count, and
//! bandwidth-tuning sweeps see common random numbers across the tuning
//! grid. Wall-clock time is the one intentionally nondeterministic field;
//! the CSV emitter leaves it out.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{draw_mrss, draw_srs, Design, PopulationSource, RankedSetSample};
use crate::divergence::{kl_divergence, mutual_information, population_as_sample};
use crate::entropy::{
    bandwidth_rule, default_cv_grid, entropy_rss, mse_hat, select_bandwidth_cv, SupportSpec,
};
use crate::kernels::{piecewise_joe, scaled_gaussian, KernelFamily, KernelSpec};
use crate::parent::{FinitePopulation, ParentModel};
use crate::{Error, Result};

/// Fraction of replications allowed to fail before a cell is abandoned.
const FAILURE_BUDGET: f64 = 0.01;
/// Seed-lane separator for the second sample of divergence replications.
const SECOND_SAMPLE_LANE: u64 = 0x4b4c_5f32;

// ---------------------------------------------------------------------------
// Experiment description
// ---------------------------------------------------------------------------

/// The sampled population, minus any correlation parameter (correlations
/// come from the experiment's ρ grid so one spec can sweep them).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentSpec {
    /// Univariate normal; ranking acts on the variable itself.
    Normal { mean: f64, sd: f64 },
    /// Uniform on [0, 1]; ranking acts on the variable itself.
    Uniform,
    /// Standard bivariate normal; coordinate 1 is the ranking companion,
    /// coordinate 0 is measured, and ρ comes from the experiment grid.
    Bivariate,
}

/// One (k, m, r) design shape of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignShape {
    pub k: usize,
    pub m: usize,
    pub r: usize,
}

/// How each replication picks its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSpec {
    /// The sample-size/spread rule with constant d₁.
    Rule { d1: f64 },
    /// A fixed γ for every replication.
    Fixed { gamma: f64 },
    /// Cross-validation over the default grid centered on the rule value.
    Cv { d1: f64 },
}

/// What each replication estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Entropy of the measured block.
    Entropy,
    /// Mutual information between the two coordinates (bivariate parents).
    Mi,
    /// Standardized mutual information 1 − e^(−2I).
    StdMi,
    /// Divergence between two independent same-design samples; the truth
    /// is zero, so the row measures pure estimator error.
    Kl,
}

impl EstimatorKind {
    fn label(self) -> &'static str {
        match self {
            EstimatorKind::Entropy => "entropy",
            EstimatorKind::Mi => "mi",
            EstimatorKind::StdMi => "std_mi",
            EstimatorKind::Kl => "kl",
        }
    }
}

/// A full experiment: the cell grid is the cross product of `designs`
/// and (for the bivariate parent) `rhos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub parent: ParentSpec,
    pub designs: Vec<DesignShape>,
    /// Correlation grid; required nonempty for the bivariate parent and
    /// required empty otherwise.
    #[serde(default)]
    pub rhos: Vec<f64>,
    pub kernel: KernelFamily,
    pub bandwidth: BandwidthSpec,
    pub estimator: EstimatorKind,
    /// Coordinates the entropy/divergence estimators measure; defaults to
    /// coordinate 0 (for the bivariate parent that is the non-ranking
    /// coordinate). Must be omitted for the information estimators, which
    /// always use both coordinates.
    #[serde(default)]
    pub measure_block: Option<Vec<usize>>,
    pub replications: usize,
    pub seed: u64,
    /// Where the CSV should go; the library does not write it, front ends do.
    #[serde(default)]
    pub output: Option<String>,
}

/// One grid cell: a design shape plus its correlation (if any).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellConfig {
    pub k: usize,
    pub m: usize,
    pub r: usize,
    pub rho: Option<f64>,
    pub n: usize,
}

/// Aggregates of one cell's replications. All statistical fields are
/// deterministic in (spec, seed); `wall_time_s` is not and is excluded
/// from every serialized form (CSV and JSON alike) so emitted artifacts
/// stay byte-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub cell: CellConfig,
    pub estimator: &'static str,
    /// The true value the estimates are judged against.
    pub target: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Simulated mean squared error against `target`.
    pub mse: f64,
    /// Sample variance of the estimates; `None` when only one
    /// replication ran (undefined, not zero).
    pub variance: Option<f64>,
    pub mean_cv: Option<f64>,
    pub var_cv: Option<f64>,
    pub mean_mse_hat: Option<f64>,
    pub var_mse_hat: Option<f64>,
    /// Replications that errored and were excluded from the aggregates.
    pub failures: usize,
    /// Replications requested.
    pub replications: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ExperimentSpec {
    /// Checks every invariant the runner assumes; called by all entry
    /// points before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Parameter(
                "an experiment needs at least one replication".into(),
            ));
        }
        if self.designs.is_empty() {
            return Err(Error::Parameter("the design grid is empty".into()));
        }
        for d in &self.designs {
            // Validates shapes and catches k^(r+1) overflow early.
            Design::new(d.k, d.m, d.r, 0)?;
        }
        match self.parent {
            ParentSpec::Bivariate => {
                if self.rhos.is_empty() {
                    return Err(Error::Parameter(
                        "the bivariate parent needs a nonempty correlation grid".into(),
                    ));
                }
                for &rho in &self.rhos {
                    ParentModel::bivariate_normal(rho)?;
                }
            }
            ParentSpec::Normal { mean, sd } => {
                ParentModel::normal(mean, sd)?;
                if !self.rhos.is_empty() {
                    return Err(Error::Parameter(
                        "a correlation grid only applies to the bivariate parent".into(),
                    ));
                }
            }
            ParentSpec::Uniform => {
                if !self.rhos.is_empty() {
                    return Err(Error::Parameter(
                        "a correlation grid only applies to the bivariate parent".into(),
                    ));
                }
            }
        }
        match self.bandwidth {
            BandwidthSpec::Rule { d1 } | BandwidthSpec::Cv { d1 } => {
                if !(d1.is_finite() && d1 > 0.0) {
                    return Err(Error::Parameter(format!(
                        "bandwidth constant d1 must be a positive real, got {d1}"
                    )));
                }
            }
            BandwidthSpec::Fixed { gamma } => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(Error::Parameter(format!(
                        "fixed bandwidth must be a positive real, got {gamma}"
                    )));
                }
            }
        }
        let dim = self.parent_dim();
        match self.estimator {
            EstimatorKind::Mi | EstimatorKind::StdMi => {
                if self.parent != ParentSpec::Bivariate {
                    return Err(Error::Parameter(
                        "information estimators need the bivariate parent".into(),
                    ));
                }
                if self.measure_block.is_some() {
                    return Err(Error::Parameter(
                        "information estimators always use both coordinates; \
                         drop the measure block"
                            .into(),
                    ));
                }
            }
            EstimatorKind::Entropy | EstimatorKind::Kl => {
                if let Some(block) = &self.measure_block {
                    if block.is_empty() {
                        return Err(Error::Parameter("the measure block is empty".into()));
                    }
                    if block.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::Parameter(
                            "the measure block must list distinct coordinates in \
                             increasing order"
                                .into(),
                        ));
                    }
                    if *block.last().unwrap() >= dim {
                        return Err(Error::Parameter(format!(
                            "measure block coordinate {} is out of range for a \
                             {dim}-dimensional parent",
                            block.last().unwrap()
                        )));
                    }
                }
            }
        }
        // The compact kernel family only has constants for p = 1..4.
        kernel_for(self.kernel, self.working_dim())?;
        Ok(())
    }

    fn parent_dim(&self) -> usize {
        match self.parent {
            ParentSpec::Bivariate => 2,
            _ => 1,
        }
    }

    /// Dimension the estimator actually smooths in.
    fn working_dim(&self) -> usize {
        match self.estimator {
            EstimatorKind::Mi | EstimatorKind::StdMi => 2,
            EstimatorKind::Entropy | EstimatorKind::Kl => self.block().len(),
        }
    }

    fn block(&self) -> Vec<usize> {
        self.measure_block.clone().unwrap_or_else(|| vec![0])
    }

    /// The cell grid: designs × correlations for the bivariate parent,
    /// designs alone otherwise.
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut out = Vec::new();
        match self.parent {
            ParentSpec::Bivariate => {
                for &rho in &self.rhos {
                    for d in &self.designs {
                        out.push(CellConfig {
                            k: d.k,
                            m: d.m,
                            r: d.r,
                            rho: Some(rho),
                            n: d.k * d.m,
                        });
                    }
                }
            }
            _ => {
                for d in &self.designs {
                    out.push(CellConfig {
                        k: d.k,
                        m: d.m,
                        r: d.r,
                        rho: None,
                        n: d.k * d.m,
                    });
                }
            }
        }
        out
    }

    fn cell_parent(&self, cell: &CellConfig) -> Result<ParentModel> {
        match (self.parent, cell.rho) {
            (ParentSpec::Normal { mean, sd }, None) => ParentModel::normal(mean, sd),
            (ParentSpec::Uniform, None) => Ok(ParentModel::Uniform01),
            (ParentSpec::Bivariate, Some(rho)) => ParentModel::bivariate_normal(rho),
            _ => Err(Error::Parameter(
                "cell correlation does not match the parent kind".into(),
            )),
        }
    }

    fn target(&self, parent: &ParentModel) -> Result<f64> {
        match self.estimator {
            EstimatorKind::Entropy => {
                let block = self.block();
                Ok(if block.len() == parent.dim() {
                    parent.joint_entropy()
                } else {
                    parent.marginal_entropy(block[0])
                })
            }
            EstimatorKind::Mi => parent.mutual_information().ok_or_else(|| {
                Error::Parameter("the parent has no defined mutual information".into())
            }),
            EstimatorKind::StdMi => {
                let i = parent.mutual_information().ok_or_else(|| {
                    Error::Parameter("the parent has no defined mutual information".into())
                })?;
                Ok(1.0 - (-2.0 * i).exp())
            }
            // Both samples come from the same distribution.
            EstimatorKind::Kl => Ok(0.0),
        }
    }
}

fn kernel_for(family: KernelFamily, dim: usize) -> Result<KernelSpec> {
    match family {
        KernelFamily::ScaledGaussian => Ok(scaled_gaussian()),
        KernelFamily::PiecewiseJoe => piecewise_joe(dim),
    }
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of a cell's random stream: design content and correlation only.
/// Deliberately independent of grid position (so reordering or subsetting
/// the grid never changes draws) and of the bandwidth constant (so tuning
/// sweeps reuse the same samples — common random numbers).
fn cell_key(cell: &CellConfig) -> u64 {
    let mut key = splitmix(cell.k as u64);
    key = splitmix(key ^ cell.m as u64);
    key = splitmix(key ^ cell.r as u64);
    key = splitmix(key ^ cell.rho.map_or(0, f64::to_bits));
    key
}

fn rep_seed(master: u64, cell: u64, rep: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ cell) ^ rep)
}

// ---------------------------------------------------------------------------
// Replication and aggregation
// ---------------------------------------------------------------------------

/// Everything one replication reports.
#[derive(Debug, Clone, Copy)]
struct RepValues {
    estimate: f64,
    cv: Option<f64>,
    mse_hat: Option<f64>,
}

/// Numerically stable streaming mean/variance (Welford); pushed to in
/// fixed index order so reductions are bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
struct Accum {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accum {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    fn sample_var(&self) -> Option<f64> {
        (self.n > 1).then(|| (self.m2 / (self.n - 1) as f64).max(0.0))
    }
}

fn failure_gate(failures: usize, requested: usize, first: Option<&str>) -> Result<()> {
    if failures == 0 {
        return Ok(());
    }
    if failures as f64 > FAILURE_BUDGET * requested as f64 {
        return Err(Error::Numerical(format!(
            "{failures} of {requested} replications failed, above the \
             {:.0}% budget; first failure: {}",
            FAILURE_BUDGET * 100.0,
            first.unwrap_or("unknown")
        )));
    }
    Ok(())
}

/// Draws for one replication: the main sample, plus an independent second
/// sample for the divergence estimator.
struct RepDraws {
    sample: RankedSetSample,
    second: Option<RankedSetSample>,
}

fn draw_replication(
    spec: &ExperimentSpec,
    cell: &CellConfig,
    parent: &ParentModel,
    seed: u64,
) -> Result<RepDraws> {
    let source = PopulationSource::Model(*parent);
    let design = Design::new(cell.k, cell.m, cell.r, parent.dim() - 1)?;
    let sample = draw_mrss(&source, &design, seed)?;
    let second = if spec.estimator == EstimatorKind::Kl {
        Some(draw_mrss(
            &source,
            &design,
            splitmix(seed ^ SECOND_SAMPLE_LANE),
        )?)
    } else {
        None
    };
    Ok(RepDraws { sample, second })
}

fn choose_gamma(
    sample: &RankedSetSample,
    kernel: &KernelSpec,
    bandwidth: &BandwidthSpec,
    support: &SupportSpec,
) -> Result<f64> {
    match *bandwidth {
        BandwidthSpec::Fixed { gamma } => Ok(gamma),
        BandwidthSpec::Rule { d1 } => bandwidth_rule(sample, d1),
        BandwidthSpec::Cv { d1 } => {
            let reference = bandwidth_rule(sample, d1)?;
            select_bandwidth_cv(sample, kernel, &default_cv_grid(reference)?, support)
        }
    }
}

/// Runs the estimator on already-drawn samples. `bandwidth` is passed
/// separately from the spec so tuning sweeps can vary it over common
/// draws; `with_diagnostics` skips the leave-one-cycle-out work when the
/// caller only needs the point estimate.
fn estimate_replication(
    spec: &ExperimentSpec,
    draws: &RepDraws,
    bandwidth: &BandwidthSpec,
    with_diagnostics: bool,
) -> Result<RepValues> {
    let support = SupportSpec::AllPoints;
    match spec.estimator {
        EstimatorKind::Entropy => {
            let measured = draws.sample.project(&spec.block())?;
            let kernel = kernel_for(spec.kernel, measured.p())?;
            let gamma = choose_gamma(&measured, &kernel, bandwidth, &support)?;
            let h = entropy_rss(&measured, &kernel, gamma, &support)?;
            let (cv, m_hat) = if with_diagnostics && measured.m() >= 2 {
                let d = mse_hat(&measured, &kernel, gamma, &support)?;
                (Some(d.cv), Some(d.m_hat))
            } else {
                (None, None)
            };
            Ok(RepValues {
                estimate: h,
                cv,
                mse_hat: m_hat,
            })
        }
        EstimatorKind::Mi | EstimatorKind::StdMi => {
            let kernel = kernel_for(spec.kernel, draws.sample.p())?;
            let gamma = choose_gamma(&draws.sample, &kernel, bandwidth, &support)?;
            let report =
                mutual_information(&draws.sample, &[0], &[1], &kernel, gamma, &support)?;
            Ok(RepValues {
                estimate: if spec.estimator == EstimatorKind::Mi {
                    report.i_hat
                } else {
                    report.i_std
                },
                cv: None,
                mse_hat: None,
            })
        }
        EstimatorKind::Kl => {
            let second = draws
                .second
                .as_ref()
                .expect("divergence replications draw two samples");
            let block = spec.block();
            let first = draws.sample.project(&block)?;
            let second = second.project(&block)?;
            let kernel = kernel_for(spec.kernel, first.p())?;
            let gamma = choose_gamma(&first, &kernel, bandwidth, &support)?;
            Ok(RepValues {
                estimate: kl_divergence(&first, &second, &kernel, gamma)?,
                cv: None,
                mse_hat: None,
            })
        }
    }
}

/// One row of aggregates from per-replication outcomes reduced in index
/// order. `requested` is the spec's replication count; failures are
/// excluded from the statistics but counted.
fn aggregate(
    cell: CellConfig,
    estimator: &'static str,
    target: f64,
    outcomes: &[Result<RepValues>],
    requested: usize,
    started: Instant,
) -> Result<AggregateRow> {
    let mut est = Accum::default();
    let mut sq_err = Accum::default();
    let mut cv = Accum::default();
    let mut m_hat = Accum::default();
    let mut failures = 0usize;
    let mut first_failure: Option<String> = None;
    for outcome in outcomes {
        match outcome {
            Ok(v) => {
                est.push(v.estimate);
                sq_err.push((v.estimate - target) * (v.estimate - target));
                if let Some(c) = v.cv {
                    cv.push(c);
                }
                if let Some(m) = v.mse_hat {
                    m_hat.push(m);
                }
            }
            Err(e) => {
                failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(e.to_string());
                }
            }
        }
    }
    failure_gate(failures, requested, first_failure.as_deref())?;
    let mean_estimate = est.mean().ok_or_else(|| {
        Error::Numerical("every replication of the cell failed".into())
    })?;
    Ok(AggregateRow {
        cell,
        estimator,
        target,
        mean_estimate,
        bias: mean_estimate - target,
        mse: sq_err.mean().unwrap_or(f64::NAN),
        variance: est.sample_var(),
        mean_cv: cv.mean(),
        var_cv: cv.sample_var(),
        mean_mse_hat: m_hat.mean(),
        var_mse_hat: m_hat.sample_var(),
        failures,
        replications: requested,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn run_cell(spec: &ExperimentSpec, cell: &CellConfig) -> Result<AggregateRow> {
    let started = Instant::now();
    let parent = spec.cell_parent(cell)?;
    let target = spec.target(&parent)?;
    let key = cell_key(cell);
    let outcomes: Vec<Result<RepValues>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let draws =
                draw_replication(spec, cell, &parent, rep_seed(spec.seed, key, rep as u64))?;
            estimate_replication(spec, &draws, &spec.bandwidth, true)
        })
        .collect();
    aggregate(
        *cell,
        spec.estimator.label(),
        target,
        &outcomes,
        spec.replications,
        started,
    )
}

/// Runs every cell of the experiment and returns one aggregate row per
/// cell, in grid order. Deterministic in (spec, seed) except for the
/// wall-time field.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<AggregateRow>> {
    spec.validate()?;
    spec.cells().iter().map(|cell| run_cell(spec, cell)).collect()
}

// ---------------------------------------------------------------------------
// Bandwidth-constant tuning
// ---------------------------------------------------------------------------

/// Simulated mse at one tuning-grid point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TunePoint {
    pub d1: f64,
    pub mse: f64,
}

/// Tuning outcome of one cell: the full mse profile and its minimizer.
#[derive(Debug, Clone, Serialize)]
pub struct TuneCell {
    pub cell: CellConfig,
    pub best_d1: f64,
    pub best_mse: f64,
    pub profile: Vec<TunePoint>,
}

/// The standard tuning grid 0.50, 0.55, …, 2.00.
pub fn standard_d1_grid() -> Vec<f64> {
    (50..=200).step_by(5).map(|c| c as f64 / 100.0).collect()
}

/// Smallest-mse point of a profile; ties go to the smaller d₁ (the
/// profile is scanned in increasing d₁ order with a strict comparison).
fn best_point(profile: &[TunePoint]) -> (f64, f64) {
    let mut best = profile[0];
    for p in &profile[1..] {
        if p.mse < best.mse {
            best = *p;
        }
    }
    (best.d1, best.mse)
}

/// Finds, for every cell, the bandwidth constant minimizing the simulated
/// mse over `grid`. Every grid point sees the same draws (the replication
/// seeds do not involve d₁), so profiles differ only through the
/// bandwidth — the tuning analogue of common random numbers. The spec's
/// own bandwidth policy is ignored; tuning always uses the rule.
pub fn tune_d1(spec: &ExperimentSpec, grid: &[f64]) -> Result<Vec<TuneCell>> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::Parameter("the tuning grid is empty".into()));
    }
    if grid.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::Parameter(
            "the tuning grid must contain only positive reals".into(),
        ));
    }
    let mut ordered = grid.to_vec();
    ordered.sort_by(|a, b| a.total_cmp(b));
    ordered.dedup();

    let mut out = Vec::new();
    for cell in spec.cells() {
        let parent = spec.cell_parent(&cell)?;
        let target = spec.target(&parent)?;
        let key = cell_key(&cell);
        let per_rep: Vec<Result<Vec<f64>>> = (0..spec.replications)
            .into_par_iter()
            .map(|rep| {
                let draws = draw_replication(
                    spec,
                    &cell,
                    &parent,
                    rep_seed(spec.seed, key, rep as u64),
                )?;
                ordered
                    .iter()
                    .map(|&d1| {
                        estimate_replication(
                            spec,
                            &draws,
                            &BandwidthSpec::Rule { d1 },
                            false,
                        )
                        .map(|v| v.estimate)
                    })
                    .collect()
            })
            .collect();

        let mut sq_err = vec![Accum::default(); ordered.len()];
        let mut failures = 0usize;
        let mut first_failure: Option<String> = None;
        for rep in &per_rep {
            match rep {
                Ok(estimates) => {
                    for (acc, &e) in sq_err.iter_mut().zip(estimates) {
                        acc.push((e - target) * (e - target));
                    }
                }
                Err(e) => {
                    failures += 1;
                    if first_failure.is_none() {
                        first_failure = Some(e.to_string());
                    }
                }
            }
        }
        failure_gate(failures, spec.replications, first_failure.as_deref())?;
        let profile: Vec<TunePoint> = ordered
            .iter()
            .zip(&sq_err)
            .map(|(&d1, acc)| {
                acc.mean()
                    .map(|mse| TunePoint { d1, mse })
                    .ok_or_else(|| {
                        Error::Numerical("every replication of the cell failed".into())
                    })
            })
            .collect::<Result<_>>()?;
        let (best_d1, best_mse) = best_point(&profile);
        out.push(TuneCell {
            cell,
            best_d1,
            best_mse,
            profile,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Finite-population resampling study
// ---------------------------------------------------------------------------

/// Plug-in values of the full population, which the resampling rows are
/// judged against.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PopulationTargets {
    pub entropy: f64,
    pub information: f64,
    pub information_std: f64,
    /// Bandwidth the entropy target was computed with.
    pub gamma_entropy: f64,
    /// Bandwidth the information target was computed with.
    pub gamma_information: f64,
}

/// Result of [`finite_population_study`]: the targets plus one aggregate
/// row per (scheme, estimator).
#[derive(Debug, Clone, Serialize)]
pub struct PopulationStudy {
    pub targets: PopulationTargets,
    pub rows: Vec<AggregateRow>,
}

struct PopRepValues {
    entropy: RepValues,
    information: f64,
    information_std: f64,
}

/// Resampling-with-replacement comparison of ranked schemes against
/// simple random sampling on a finite population.
///
/// The population must have at least two columns: `design.rank_by` names
/// the ranking column, and the first other column is measured. Entropy,
/// information, and standardized information are estimated on every
/// replication under simple random sampling and under each ranked scheme
/// with 1..=`design.r` stages, all at the same sample size n = k·m;
/// biases and mses are taken against the full-population plug-in values,
/// whose bandwidths come from the rule with the given `d1` applied to the
/// whole population.
pub fn finite_population_study(
    pop: &FinitePopulation,
    design: &Design,
    kernel_family: KernelFamily,
    d1: f64,
    replications: usize,
    seed: u64,
) -> Result<PopulationStudy> {
    if replications == 0 {
        return Err(Error::Parameter(
            "a resampling study needs at least one replication".into(),
        ));
    }
    if !(d1.is_finite() && d1 > 0.0) {
        return Err(Error::Parameter(format!(
            "bandwidth constant d1 must be a positive real, got {d1}"
        )));
    }
    if pop.dim() < 2 {
        return Err(Error::Ingestion(
            "the population needs a measured column besides the ranking column".into(),
        ));
    }
    if design.rank_by >= pop.dim() {
        return Err(Error::Ingestion(format!(
            "ranking column index {} is out of range for a population with {} columns",
            design.rank_by,
            pop.dim()
        )));
    }
    Design::new(design.k, design.m, design.r, design.rank_by)?;

    // Work in the (measured, ranking) column pair; ranking is coordinate 1.
    let measured_col = (0..pop.dim())
        .find(|&c| c != design.rank_by)
        .expect("dim >= 2 guarantees a non-ranking column");
    let names = pop.columns();
    let pair = pop.select_columns(&[&names[measured_col], &names[design.rank_by]])?;
    let support = SupportSpec::AllPoints;

    let pop_sample = population_as_sample(&pair)?;
    let pop_measured = pop_sample.project(&[0])?;
    let kernel1 = kernel_for(kernel_family, 1)?;
    let kernel2 = kernel_for(kernel_family, 2)?;
    let gamma_entropy = bandwidth_rule(&pop_measured, d1)?;
    let entropy_target = entropy_rss(&pop_measured, &kernel1, gamma_entropy, &support)?;
    let gamma_information = bandwidth_rule(&pop_sample, d1)?;
    let info_report = mutual_information(
        &pop_sample,
        &[0],
        &[1],
        &kernel2,
        gamma_information,
        &support,
    )?;
    let targets = PopulationTargets {
        entropy: entropy_target,
        information: info_report.i_hat,
        information_std: info_report.i_std,
        gamma_entropy,
        gamma_information,
    };

    let source = PopulationSource::Finite(pair);
    let n = design.k * design.m;
    let mut rows = Vec::new();
    // Scheme list: simple random sampling, then 1..=r ranking stages.
    for stage in 0..=design.r {
        let started = Instant::now();
        let cell = if stage == 0 {
            CellConfig {
                k: 1,
                m: n,
                r: 1,
                rho: None,
                n,
            }
        } else {
            CellConfig {
                k: design.k,
                m: design.m,
                r: stage,
                rho: None,
                n,
            }
        };
        let key = cell_key(&cell);
        let outcomes: Vec<Result<PopRepValues>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = rep_seed(seed, key, rep as u64);
                let sample = if stage == 0 {
                    draw_srs(&source, n, rep_seed)?
                } else {
                    let scheme = Design {
                        k: design.k,
                        m: design.m,
                        r: stage,
                        rank_by: 1,
                        replacement: true,
                        ranking_noise_sd: design.ranking_noise_sd,
                    };
                    draw_mrss(&source, &scheme, rep_seed)?
                };
                let measured = sample.project(&[0])?;
                let gamma_h = bandwidth_rule(&measured, d1)?;
                let h = entropy_rss(&measured, &kernel1, gamma_h, &support)?;
                let (cv, m_hat) = if measured.m() >= 2 {
                    let diag = mse_hat(&measured, &kernel1, gamma_h, &support)?;
                    (Some(diag.cv), Some(diag.m_hat))
                } else {
                    (None, None)
                };
                let gamma_i = bandwidth_rule(&sample, d1)?;
                let mi = mutual_information(&sample, &[0], &[1], &kernel2, gamma_i, &support)?;
                Ok(PopRepValues {
                    entropy: RepValues {
                        estimate: h,
                        cv,
                        mse_hat: m_hat,
                    },
                    information: mi.i_hat,
                    information_std: mi.i_std,
                })
            })
            .collect();

        let entropy_outcomes: Vec<Result<RepValues>> = outcomes
            .iter()
            .map(|o| match o {
                Ok(v) => Ok(v.entropy),
                Err(e) => Err(Error::Numerical(e.to_string())),
            })
            .collect();
        rows.push(aggregate(
            cell,
            EstimatorKind::Entropy.label(),
            targets.entropy,
            &entropy_outcomes,
            replications,
            started,
        )?);
        for (label, pick, target) in [
            (
                EstimatorKind::Mi.label(),
                (|v: &PopRepValues| v.information) as fn(&PopRepValues) -> f64,
                targets.information,
            ),
            (
                EstimatorKind::StdMi.label(),
                (|v: &PopRepValues| v.information_std) as fn(&PopRepValues) -> f64,
                targets.information_std,
            ),
        ] {
            let picked: Vec<Result<RepValues>> = outcomes
                .iter()
                .map(|o| match o {
                    Ok(v) => Ok(RepValues {
                        estimate: pick(v),
                        cv: None,
                        mse_hat: None,
                    }),
                    Err(e) => Err(Error::Numerical(e.to_string())),
                })
                .collect();
            rows.push(aggregate(
                cell,
                label,
                target,
                &picked,
                replications,
                started,
            )?);
        }
    }
    Ok(PopulationStudy { targets, rows })
}

// ---------------------------------------------------------------------------
// Spec files and result CSVs
// ---------------------------------------------------------------------------

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parameter(format!("{key}: cannot parse '{}' as a number", value.trim())))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Parameter(format!("{key}: cannot parse '{}' as a count", value.trim())))
}

fn parse_design_item(item: &str) -> Result<DesignShape> {
    let parts: Vec<&str> = item
        .split(|c| c == ',' || c == 'x')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!(
            "design '{item}' must be k,m,r or kxmxr"
        )));
    }
    Ok(DesignShape {
        k: parse_usize("design k", parts[0])?,
        m: parse_usize("design m", parts[1])?,
        r: parse_usize("design r", parts[2])?,
    })
}

/// Parses an experiment description: JSON when the text starts with `{`,
/// otherwise `key = value` lines with `#` comments. Text keys: `parent`
/// (`normal MEAN SD` | `uniform` | `bivariate`), `designs`
/// (semicolon-separated `k,m,r`), `rhos` (comma-separated), `kernel`
/// (`gaussian` | `piecewise`), one of `d1` | `gamma` | `cv_d1`,
/// `estimator` (`entropy` | `mi` | `std_mi` | `kl`), optional `block`
/// (comma-separated coordinates), `replications`, `seed`, optional
/// `output`.
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    if text.trim_start().starts_with('{') {
        let spec: ExperimentSpec = serde_json::from_str(text)
            .map_err(|e| Error::Parameter(format!("experiment spec JSON: {e}")))?;
        spec.validate()?;
        return Ok(spec);
    }

    let mut parent = None;
    let mut designs = Vec::new();
    let mut rhos = Vec::new();
    let mut kernel = None;
    let mut bandwidth = None;
    let mut estimator = None;
    let mut measure_block = None;
    let mut replications = None;
    let mut seed = None;
    let mut output = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parameter(format!(
                "line {}: expected 'key = value', got '{line}'",
                idx + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "parent" => {
                let tokens: Vec<&str> = value.split_whitespace().collect();
                parent = Some(match tokens.as_slice() {
                    ["normal", mean, sd] => ParentSpec::Normal {
                        mean: parse_f64("parent mean", mean)?,
                        sd: parse_f64("parent sd", sd)?,
                    },
                    ["uniform"] => ParentSpec::Uniform,
                    ["bivariate"] | ["bivariate_normal"] => ParentSpec::Bivariate,
                    _ => {
                        return Err(Error::Parameter(format!(
                            "parent '{value}' must be 'normal MEAN SD', 'uniform', \
                             or 'bivariate'"
                        )))
                    }
                });
            }
            "designs" | "design" => {
                for item in value.split(';').filter(|s| !s.trim().is_empty()) {
                    designs.push(parse_design_item(item)?);
                }
            }
            "rhos" | "rho" => {
                for item in value.split(',').filter(|s| !s.trim().is_empty()) {
                    rhos.push(parse_f64("rho", item)?);
                }
            }
            "kernel" => {
                kernel = Some(match value {
                    "gaussian" | "scaled_gaussian" => KernelFamily::ScaledGaussian,
                    "piecewise" | "piecewise_joe" => KernelFamily::PiecewiseJoe,
                    other => {
                        return Err(Error::Parameter(format!(
                            "kernel '{other}' must be 'gaussian' or 'piecewise'"
                        )))
                    }
                });
            }
            "d1" => bandwidth = Some(BandwidthSpec::Rule { d1: parse_f64(key, value)? }),
            "gamma" => bandwidth = Some(BandwidthSpec::Fixed { gamma: parse_f64(key, value)? }),
            "cv_d1" => bandwidth = Some(BandwidthSpec::Cv { d1: parse_f64(key, value)? }),
            "estimator" => {
                estimator = Some(match value {
                    "entropy" => EstimatorKind::Entropy,
                    "mi" => EstimatorKind::Mi,
                    "std_mi" | "std-mi" => EstimatorKind::StdMi,
                    "kl" => EstimatorKind::Kl,
                    other => {
                        return Err(Error::Parameter(format!(
                            "estimator '{other}' must be entropy, mi, std_mi, or kl"
                        )))
                    }
                });
            }
            "block" => {
                let coords: Vec<usize> = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_usize("block", s))
                    .collect::<Result<_>>()?;
                measure_block = Some(coords);
            }
            "replications" => replications = Some(parse_usize(key, value)?),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    Error::Parameter(format!("seed: cannot parse '{value}' as an integer"))
                })?);
            }
            "output" => output = Some(value.to_string()),
            other => {
                return Err(Error::Parameter(format!(
                    "unknown experiment spec key '{other}' on line {}",
                    idx + 1
                )));
            }
        }
    }

    let spec = ExperimentSpec {
        parent: parent.ok_or_else(|| Error::Parameter("missing 'parent'".into()))?,
        designs,
        rhos,
        kernel: kernel.ok_or_else(|| Error::Parameter("missing 'kernel'".into()))?,
        bandwidth: bandwidth
            .ok_or_else(|| Error::Parameter("missing bandwidth: set d1, gamma, or cv_d1".into()))?,
        estimator: estimator.ok_or_else(|| Error::Parameter("missing 'estimator'".into()))?,
        measure_block,
        replications: replications
            .ok_or_else(|| Error::Parameter("missing 'replications'".into()))?,
        seed: seed.ok_or_else(|| Error::Parameter("missing 'seed'".into()))?,
        output,
    };
    spec.validate()?;
    Ok(spec)
}

fn push_opt(fields: &mut Vec<String>, v: Option<f64>) {
    fields.push(v.map_or_else(String::new, |x| format!("{x}")));
}

/// Writes aggregate rows as CSV in a stable, locale-independent layout.
/// Wall time is deliberately excluded so the bytes are a pure function of
/// (spec, seed).
pub fn write_rows_csv<W: std::io::Write>(
    rows: &[AggregateRow],
    seed: u64,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rho",
        "n",
        "k",
        "m",
        "r",
        "estimator",
        "target",
        "mean",
        "bias",
        "mse",
        "variance",
        "mean_cv",
        "var_cv",
        "mean_mse_hat",
        "var_mse_hat",
        "failures",
        "replications",
        "seed",
    ])?;
    for row in rows {
        let mut fields: Vec<String> = Vec::with_capacity(18);
        push_opt(&mut fields, row.cell.rho);
        fields.push(row.cell.n.to_string());
        fields.push(row.cell.k.to_string());
        fields.push(row.cell.m.to_string());
        fields.push(row.cell.r.to_string());
        fields.push(row.estimator.to_string());
        fields.push(format!("{}", row.target));
        fields.push(format!("{}", row.mean_estimate));
        fields.push(format!("{}", row.bias));
        fields.push(format!("{}", row.mse));
        push_opt(&mut fields, row.variance);
        push_opt(&mut fields, row.mean_cv);
        push_opt(&mut fields, row.var_cv);
        push_opt(&mut fields, row.mean_mse_hat);
        push_opt(&mut fields, row.var_mse_hat);
        fields.push(row.failures.to_string());
        fields.push(row.replications.to_string());
        fields.push(seed.to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Writes tuning results as CSV: one row per (cell, grid point) plus the
/// per-cell winner column.
pub fn write_tuning_csv<W: std::io::Write>(
    cells: &[TuneCell],
    seed: u64,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rho", "n", "k", "m", "r", "d1", "mse", "best_d1", "seed",
    ])?;
    for tc in cells {
        for point in &tc.profile {
            let mut fields: Vec<String> = Vec::with_capacity(9);
            push_opt(&mut fields, tc.cell.rho);
            fields.push(tc.cell.n.to_string());
            fields.push(tc.cell.k.to_string());
            fields.push(tc.cell.m.to_string());
            fields.push(tc.cell.r.to_string());
            fields.push(format!("{}", point.d1));
            fields.push(format!("{}", point.mse));
            fields.push(format!("{}", tc.best_d1));
            fields.push(seed.to_string());
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bivariate_spec() -> ExperimentSpec {
        ExperimentSpec {
            parent: ParentSpec::Bivariate,
            designs: vec![DesignShape { k: 3, m: 3, r: 1 }],
            rhos: vec![0.9],
            kernel: KernelFamily::ScaledGaussian,
            bandwidth: BandwidthSpec::Rule { d1: 1.2 },
            estimator: EstimatorKind::Entropy,
            measure_block: None,
            replications: 40,
            seed: 7,
            output: None,
        }
    }

    fn rows_csv(rows: &[AggregateRow], seed: u64) -> String {
        let mut buf = Vec::new();
        write_rows_csv(rows, seed, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn spec_text_and_json_roundtrip() {
        let text = "
            # a small sweep
            parent = bivariate
            designs = 3,5,1; 3x5x2
            rhos = 0.9, 0.8
            kernel = gaussian
            d1 = 1.20
            estimator = entropy
            replications = 10
            seed = 42
        ";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.designs.len(), 2);
        assert_eq!(spec.designs[1], DesignShape { k: 3, m: 5, r: 2 });
        assert_eq!(spec.rhos, vec![0.9, 0.8]);
        assert_eq!(spec.cells().len(), 4);
        assert_eq!(spec.bandwidth, BandwidthSpec::Rule { d1: 1.2 });

        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back = parse_spec(&json).unwrap();
        assert_eq!(back, spec);

        assert!(parse_spec("nonsense = 1\n").is_err());
        assert!(parse_spec(&text.replace("entropy", "wavelets")).is_err());
        // Missing bandwidth.
        assert!(parse_spec(&text.replace("d1 = 1.20", "")).is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_specs() {
        let mut spec = small_bivariate_spec();
        spec.replications = 0;
        assert!(spec.validate().is_err());

        let mut spec = small_bivariate_spec();
        spec.rhos.clear();
        assert!(spec.validate().is_err());

        let mut spec = small_bivariate_spec();
        spec.parent = ParentSpec::Uniform;
        // Correlations make no sense for a univariate parent.
        assert!(spec.validate().is_err());

        let mut spec = small_bivariate_spec();
        spec.estimator = EstimatorKind::Mi;
        spec.measure_block = Some(vec![0]);
        assert!(spec.validate().is_err());

        let mut spec = small_bivariate_spec();
        spec.measure_block = Some(vec![0, 0]);
        assert!(spec.validate().is_err());

        let mut spec = small_bivariate_spec();
        spec.measure_block = Some(vec![2]);
        assert!(spec.validate().is_err());

        let mut spec = small_bivariate_spec();
        spec.bandwidth = BandwidthSpec::Rule { d1: -1.0 };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn aggregates_are_bit_identical_across_worker_counts() {
        let spec = small_bivariate_spec();
        let csv_for = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let rows = pool.install(|| run_experiment(&spec)).unwrap();
            rows_csv(&rows, spec.seed)
        };
        let single = csv_for(1);
        let multi = csv_for(4);
        assert_eq!(single, multi);
        // And rerunning in the same (global) pool reproduces the bytes too.
        let again = rows_csv(&run_experiment(&spec).unwrap(), spec.seed);
        assert_eq!(single, again);
    }

    #[test]
    fn aggregate_rows_satisfy_moment_inequalities() {
        let mut spec = small_bivariate_spec();
        spec.replications = 60;
        let rows = run_experiment(&spec).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.cell.n, 9);
        assert!(row.mse >= row.bias * row.bias - 1e-12);
        assert!(row.variance.unwrap() >= 0.0);
        assert!(row.var_cv.unwrap() >= 0.0);
        assert!(row.var_mse_hat.unwrap() >= 0.0);
        assert!(row.mean_mse_hat.unwrap() >= 0.0);
        assert_eq!(row.failures, 0);
        // MSE decomposes into bias² plus (population) variance.
        let r = row.replications as f64;
        let pop_var = row.variance.unwrap() * (r - 1.0) / r;
        assert!(
            (row.mse - row.bias * row.bias - pop_var).abs() < 1e-10,
            "mse {} bias {} var {}",
            row.mse,
            row.bias,
            pop_var
        );
    }

    #[test]
    fn single_replication_flags_variance_undefined() {
        let mut spec = small_bivariate_spec();
        spec.replications = 1;
        let rows = run_experiment(&spec).unwrap();
        let row = &rows[0];
        assert!(row.variance.is_none());
        assert!(row.var_cv.is_none());
        assert!(row.mse.is_finite());
        // The CSV leaves undefined fields empty rather than writing zeros.
        let csv = rows_csv(&rows, spec.seed);
        let data_line = csv.lines().nth(1).unwrap();
        assert!(data_line.contains(",,"));
    }

    #[test]
    fn failure_budget_is_enforced() {
        assert!(failure_gate(0, 1, None).is_ok());
        assert!(failure_gate(1, 100, Some("x")).is_ok());
        assert!(failure_gate(2, 100, Some("x")).is_err());
        assert!(failure_gate(1, 50, Some("x")).is_err());
        assert!(failure_gate(20, 2000, Some("x")).is_ok());
        assert!(failure_gate(21, 2000, Some("x")).is_err());

        // Integration: the compact kernel with a tiny fixed bandwidth
        // cannot cover the second sample's points, so every divergence
        // replication fails and the cell reports the budget breach.
        let spec = ExperimentSpec {
            parent: ParentSpec::Normal { mean: 0.0, sd: 1.0 },
            designs: vec![DesignShape { k: 2, m: 4, r: 1 }],
            rhos: vec![],
            kernel: KernelFamily::PiecewiseJoe,
            bandwidth: BandwidthSpec::Fixed { gamma: 1e-9 },
            estimator: EstimatorKind::Kl,
            measure_block: None,
            replications: 8,
            seed: 3,
            output: None,
        };
        let err = run_experiment(&spec).unwrap_err();
        assert!(
            err.to_string().contains("replications failed"),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn information_estimators_share_draws_with_entropy_runs() {
        // Same cell key ⇒ same samples: the standardized row must be the
        // deterministic transform of the raw-information row. A fixed
        // bandwidth keeps the joint-density step away from the data-driven
        // rule, which rightfully errors when a tiny, strongly dependent
        // sample packs more than half its points into the quartile box.
        let mut spec = small_bivariate_spec();
        spec.replications = 25;
        spec.bandwidth = BandwidthSpec::Fixed { gamma: 0.5 };
        spec.estimator = EstimatorKind::Mi;
        let mi_rows = run_experiment(&spec).unwrap();
        spec.estimator = EstimatorKind::StdMi;
        let std_rows = run_experiment(&spec).unwrap();
        assert!(std_rows[0].mean_estimate <= 1.0);
        assert!(std_rows[0].mean_estimate >= 0.0);
        assert!(mi_rows[0].mean_estimate >= 0.0);
        // ρ = 0.9 carries strong dependence; both estimates must see it.
        assert!(mi_rows[0].mean_estimate > 0.2);
        assert!(std_rows[0].mean_estimate > 0.3);
    }

    #[test]
    fn tuning_reuses_draws_and_matches_the_runner() {
        let mut spec = small_bivariate_spec();
        spec.replications = 30;
        let grid = [0.9, 1.2, 1.6];
        let tuned = tune_d1(&spec, &grid).unwrap();
        assert_eq!(tuned.len(), 1);
        let profile = &tuned[0].profile;
        assert_eq!(profile.len(), 3);

        // The profile point at d1 = 1.2 must equal the plain runner's mse
        // bitwise: same seeds, same draws, same bandwidth rule.
        spec.bandwidth = BandwidthSpec::Rule { d1: 1.2 };
        let rows = run_experiment(&spec).unwrap();
        let from_profile = profile.iter().find(|p| p.d1 == 1.2).unwrap().mse;
        assert_eq!(rows[0].mse, from_profile);

        let (best_d1, best_mse) = (tuned[0].best_d1, tuned[0].best_mse);
        assert!(grid.contains(&best_d1));
        assert!(profile.iter().all(|p| p.mse >= best_mse));
    }

    #[test]
    fn tuning_breaks_ties_toward_smaller_constants() {
        let profile = vec![
            TunePoint { d1: 0.5, mse: 0.4 },
            TunePoint { d1: 0.55, mse: 0.3 },
            TunePoint { d1: 0.6, mse: 0.3 },
            TunePoint { d1: 0.65, mse: 0.31 },
        ];
        assert_eq!(best_point(&profile), (0.55, 0.3));
        let flat = vec![
            TunePoint { d1: 0.5, mse: 0.2 },
            TunePoint { d1: 1.0, mse: 0.2 },
        ];
        assert_eq!(best_point(&flat), (0.5, 0.2));

        let grid = standard_d1_grid();
        assert_eq!(grid.len(), 31);
        assert_eq!(grid[0], 0.5);
        assert_eq!(grid[1], 0.55);
        assert_eq!(*grid.last().unwrap(), 2.0);
    }

    #[test]
    fn replication_spread_shrinks_with_more_replications() {
        // The simulated mse is itself a random variable over master seeds;
        // quadrupling R should clearly shrink its spread.
        let mse_at = |replications: usize, seed: u64| {
            let mut spec = small_bivariate_spec();
            spec.replications = replications;
            spec.seed = seed;
            run_experiment(&spec).unwrap()[0].mse
        };
        let spread = |replications: usize| {
            let mses: Vec<f64> = (0..5).map(|s| mse_at(replications, 100 + s)).collect();
            let mean = mses.iter().sum::<f64>() / mses.len() as f64;
            (mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / mses.len() as f64)
                .sqrt()
        };
        let coarse = spread(60);
        let fine = spread(240);
        assert!(
            fine < coarse,
            "spread at R=240 ({fine}) should be below R=60 ({coarse})"
        );
    }

    fn synthetic_population(rows: usize, seed: u64) -> FinitePopulation {
        let parent = ParentModel::bivariate_normal(0.8).unwrap();
        let source = PopulationSource::Model(parent);
        let sample = draw_srs(&source, rows, seed).unwrap();
        let data: Vec<Vec<f64>> = sample.iter().map(|o| o.to_vec()).collect();
        FinitePopulation::new(vec!["y".into(), "x".into()], data).unwrap()
    }

    #[test]
    fn population_study_machinery() {
        let pop = synthetic_population(300, 11);
        let design = Design::new(3, 10, 2, 1).unwrap();
        let study =
            finite_population_study(&pop, &design, KernelFamily::ScaledGaussian, 1.0, 50, 5)
                .unwrap();
        // Three schemes (srs, one stage, two stages) × three estimators.
        assert_eq!(study.rows.len(), 9);
        assert!(study.targets.entropy.is_finite());
        assert!(study.targets.information >= 0.0);
        assert!(study.targets.information_std >= 0.0);
        assert!(study.targets.information_std < 1.0);
        for row in &study.rows {
            assert_eq!(row.cell.n, 30);
            assert!(row.mse >= row.bias * row.bias - 1e-12);
            assert_eq!(row.failures, 0);
        }
        let schemes: Vec<(usize, usize)> = study
            .rows
            .iter()
            .map(|r| (r.cell.k, r.cell.r))
            .collect();
        assert_eq!(schemes[0], (1, 1));
        assert_eq!(schemes[3], (3, 1));
        assert_eq!(schemes[6], (3, 2));

        // Determinism: a rerun reproduces the rows byte for byte.
        let again =
            finite_population_study(&pop, &design, KernelFamily::ScaledGaussian, 1.0, 50, 5)
                .unwrap();
        assert_eq!(rows_csv(&study.rows, 5), rows_csv(&again.rows, 5));
    }

    #[test]
    fn population_study_rejects_bad_inputs() {
        let pop = synthetic_population(100, 2);
        let design = Design::new(3, 5, 1, 1).unwrap();
        assert!(matches!(
            finite_population_study(&pop, &design, KernelFamily::ScaledGaussian, 1.0, 0, 1),
            Err(Error::Parameter(_))
        ));
        let bad_rank = Design {
            rank_by: 7,
            ..design
        };
        assert!(matches!(
            finite_population_study(&pop, &bad_rank, KernelFamily::ScaledGaussian, 1.0, 5, 1),
            Err(Error::Ingestion(_))
        ));
        let narrow = FinitePopulation::new(
            vec!["only".into()],
            (0..40).map(|i| vec![i as f64 / 10.0]).collect(),
        )
        .unwrap();
        assert!(matches!(
            finite_population_study(&narrow, &design, KernelFamily::ScaledGaussian, 1.0, 5, 1),
            Err(Error::Ingestion(_))
        ));
    }
}
