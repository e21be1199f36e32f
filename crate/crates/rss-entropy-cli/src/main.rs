//! `rsent`: command-line front end for ranked-set-sample estimation.
//!
//! Subcommands cover the full workflow: drawing RSS/MRSS samples,
//! estimating entropy / mutual information / KL divergence from sample
//! CSV files, ranking candidate regressors by standardized information,
//! running Monte Carlo experiments from declarative spec files, tuning
//! the bandwidth constant, evaluating the theoretical relative
//! efficiency of ranked designs, and resampling studies on finite
//! populations.
//!
//! Output is a pure function of (argv, input files, seed): no
//! timestamps, no machine-dependent fields. Exit codes: 0 success,
//! 2 usage error, 1 computation/input error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rss_entropy::designs::{draw_mrss, Design, PopulationSource, RankedSetSample};
use rss_entropy::divergence::{kernel_for_dim, kl_divergence, mutual_information};
use rss_entropy::entropy::{
    bandwidth_rule, common_bandwidth_rule, default_cv_grid, full_report, BandwidthPolicy,
    SupportSpec,
};
use rss_entropy::kernels::{piecewise_joe, scaled_gaussian, KernelFamily, KernelSpec};
use rss_entropy::parent::{FinitePopulation, ParentModel};
use rss_entropy::simlab::{
    finite_population_study, parse_spec, run_experiment, standard_d1_grid, tune_d1,
    write_rows_csv, write_tuning_csv,
};
use rss_entropy::theory::{
    reference_bandwidth, reference_bandwidth_factor, relative_efficiency, Stages,
};

// ---------------------------------------------------------------------------
// Error plumbing: usage errors exit 2, computation/input errors exit 1.

enum Failure {
    Usage(String),
    Run(rss_entropy::Error),
}

impl From<rss_entropy::Error> for Failure {
    fn from(e: rss_entropy::Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

// ---------------------------------------------------------------------------
// Shared flag groups

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KernelChoice {
    /// Smooth kernel: a normal density with variance 2.
    Gaussian,
    /// Compactly supported piecewise-linear kernel (dimension-dependent
    /// constants, available for 1 to 4 coordinates).
    Piecewise,
}

impl KernelChoice {
    fn family(self) -> KernelFamily {
        match self {
            KernelChoice::Gaussian => KernelFamily::ScaledGaussian,
            KernelChoice::Piecewise => KernelFamily::PiecewiseJoe,
        }
    }

    /// A kernel of this family sized for `dim` coordinates.
    fn sized(self, dim: usize) -> Result<KernelSpec, Failure> {
        let base = self.base()?;
        Ok(kernel_for_dim(&base, dim)?)
    }

    /// The univariate representative of the family; product forms are
    /// derived from it per use.
    fn base(self) -> Result<KernelSpec, Failure> {
        match self {
            KernelChoice::Gaussian => Ok(scaled_gaussian()),
            KernelChoice::Piecewise => Ok(piecewise_joe(1)?),
        }
    }

    fn label(self) -> &'static str {
        match self {
            KernelChoice::Gaussian => "gaussian",
            KernelChoice::Piecewise => "piecewise",
        }
    }
}

/// Bandwidth selection: exactly one of the four modes.
#[derive(Args, Debug)]
struct BandwidthArgs {
    /// Rule constant: gamma = d1 * n^(-1/(2+p/2)) * mean-IQR * box factor.
    #[arg(long, value_name = "D1")]
    d1: Option<f64>,
    /// Fixed bandwidth, used as given.
    #[arg(long, value_name = "GAMMA")]
    gamma: Option<f64>,
    /// Cross-validate over the default grid centred on the rule bandwidth
    /// with this constant.
    #[arg(long, value_name = "D1")]
    cv_d1: Option<f64>,
    /// Cross-validate over an explicit comma-separated bandwidth grid.
    #[arg(long, value_name = "G1,G2,...")]
    cv_grid: Option<String>,
}

/// A validated bandwidth choice that still needs a sample to resolve.
enum PolicySpec {
    Rule(f64),
    Fixed(f64),
    CvRule(f64),
    CvGrid(Vec<f64>),
}

impl BandwidthArgs {
    fn to_spec(&self) -> Result<PolicySpec, Failure> {
        let mut picked = Vec::new();
        if let Some(d1) = self.d1 {
            require_positive(d1, "--d1")?;
            picked.push(PolicySpec::Rule(d1));
        }
        if let Some(g) = self.gamma {
            require_positive(g, "--gamma")?;
            picked.push(PolicySpec::Fixed(g));
        }
        if let Some(d1) = self.cv_d1 {
            require_positive(d1, "--cv-d1")?;
            picked.push(PolicySpec::CvRule(d1));
        }
        if let Some(ref s) = self.cv_grid {
            let grid = parse_f64_list(s, "--cv-grid")?;
            if grid.is_empty() {
                return Err(usage("--cv-grid needs at least one bandwidth"));
            }
            for &g in &grid {
                require_positive(g, "--cv-grid entries")?;
            }
            picked.push(PolicySpec::CvGrid(grid));
        }
        match picked.len() {
            0 => Err(usage(
                "choose a bandwidth: one of --d1, --gamma, --cv-d1, --cv-grid",
            )),
            1 => Ok(picked.pop().expect("len checked")),
            _ => Err(usage(
                "bandwidth flags --d1, --gamma, --cv-d1, --cv-grid are mutually exclusive",
            )),
        }
    }
}

impl PolicySpec {
    /// Resolves to a policy `full_report` understands (the CV-around-rule
    /// mode needs the sample to centre its grid).
    fn to_policy(&self, sample: &RankedSetSample) -> Result<BandwidthPolicy, Failure> {
        Ok(match self {
            PolicySpec::Rule(d1) => BandwidthPolicy::Rule { d1: *d1 },
            PolicySpec::Fixed(g) => BandwidthPolicy::Fixed(*g),
            PolicySpec::CvRule(d1) => {
                let centre = bandwidth_rule(sample, *d1)?;
                BandwidthPolicy::CvGrid(default_cv_grid(centre)?)
            }
            PolicySpec::CvGrid(grid) => BandwidthPolicy::CvGrid(grid.clone()),
        })
    }

    /// Resolves to a single bandwidth for estimators that take a scalar.
    fn to_gamma(
        &self,
        sample: &RankedSetSample,
        kernel: &KernelSpec,
        support: &SupportSpec,
    ) -> Result<f64, Failure> {
        Ok(match self {
            PolicySpec::Fixed(g) => *g,
            PolicySpec::Rule(d1) => bandwidth_rule(sample, *d1)?,
            PolicySpec::CvRule(d1) => {
                let centre = bandwidth_rule(sample, *d1)?;
                let grid = default_cv_grid(centre)?;
                rss_entropy::entropy::select_bandwidth_cv(sample, kernel, &grid, support)?
            }
            PolicySpec::CvGrid(grid) => {
                rss_entropy::entropy::select_bandwidth_cv(sample, kernel, grid, support)?
            }
        })
    }

}

/// Support-set restriction for the entropy-type estimators.
#[derive(Args, Debug)]
struct SupportArgs {
    /// Rectangle "lo1,lo2,...;hi1,hi2,..." — points outside contribute
    /// nothing to the entropy sum.
    #[arg(long, value_name = "LOS;HIS", conflicts_with = "support_floor")]
    support_rect: Option<String>,
    /// Keep only points where the density estimate is at least this floor.
    #[arg(long, value_name = "EPS")]
    support_floor: Option<f64>,
}

impl SupportArgs {
    fn to_spec(&self) -> Result<SupportSpec, Failure> {
        if let Some(ref s) = self.support_rect {
            let (lo_str, hi_str) = s
                .split_once(';')
                .ok_or_else(|| usage("--support-rect wants \"lo1,lo2,...;hi1,hi2,...\""))?;
            let lo = parse_f64_list(lo_str, "--support-rect lower corner")?;
            let hi = parse_f64_list(hi_str, "--support-rect upper corner")?;
            return Ok(SupportSpec::rectangle(lo, hi)?);
        }
        if let Some(eps) = self.support_floor {
            return Ok(SupportSpec::density_floor(eps)?);
        }
        Ok(SupportSpec::AllPoints)
    }
}

// ---------------------------------------------------------------------------
// CLI surface

#[derive(Parser)]
#[command(
    name = "rsent",
    version,
    about = "Entropy, mutual information and KL divergence from ranked set samples",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a balanced (multistage) ranked set sample and write it as CSV.
    Sample(SampleArgs),
    /// Estimate differential entropy from a sample CSV.
    Entropy(EntropyArgs),
    /// Estimate mutual information between two coordinate blocks.
    Mi(MiArgs),
    /// Estimate KL divergence between two samples of equal dimension.
    Kl(KlArgs),
    /// Rank predictor pairs by standardized information with a response.
    SelectVars(SelectVarsArgs),
    /// Run a Monte Carlo experiment from a spec file; write aggregate CSV.
    Simulate(SimulateArgs),
    /// Sweep the bandwidth-rule constant and report per-cell minimizers.
    TuneD1(TuneD1Args),
    /// Theoretical relative efficiency of a ranked design against SRS.
    ReApprox(ReApproxArgs),
    /// Resampling study of ranked designs on a finite population.
    PopulationEntropy(PopulationEntropyArgs),
}

#[derive(Args)]
struct SampleArgs {
    /// Parent model: "normal:MEAN,SD", "uniform", or "bivariate:RHO".
    #[arg(long, value_name = "MODEL", conflicts_with = "input")]
    parent: Option<String>,
    /// Finite population CSV (header row, numeric columns).
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Set size: measured units per cycle.
    #[arg(short, long)]
    k: usize,
    /// Number of cycles (sample size is k*m).
    #[arg(short, long)]
    m: usize,
    /// Ranking stages: 1 = ordinary RSS, 2 = double RSS, ...
    #[arg(short, long, default_value_t = 1)]
    r: usize,
    /// Coordinate index used for judgement ranking.
    #[arg(long, default_value_t = 0)]
    rank_by: usize,
    /// Draw from the finite population without replacement.
    #[arg(long)]
    no_replacement: bool,
    /// Rank on the coordinate plus Gaussian noise with this sd.
    #[arg(long, value_name = "SD")]
    ranking_noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write here instead of stdout.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Validate the configuration and exit without drawing.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EntropyArgs {
    /// Sample CSV with columns cycle,rank,<values...>.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Ranking stages the sample was drawn with (report metadata).
    #[arg(long, default_value_t = 1)]
    stages: usize,
    /// Keep only these value columns (comma-separated indices).
    #[arg(long, value_name = "I,J,...")]
    coords: Option<String>,
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    kernel: KernelChoice,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[command(flatten)]
    support: SupportArgs,
    /// Print the report as pretty JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct MiArgs {
    /// Sample CSV with columns cycle,rank,<values...>.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    stages: usize,
    /// First coordinate block (comma-separated indices). Columns outside
    /// both blocks still inform the shared bandwidth but are dropped from
    /// the estimate.
    #[arg(long, value_name = "I,J,...", default_value = "0")]
    block1: String,
    /// Second coordinate block (comma-separated indices); disjoint from
    /// the first.
    #[arg(long, value_name = "I,J,...", default_value = "1")]
    block2: String,
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    kernel: KernelChoice,
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[command(flatten)]
    support: SupportArgs,
    #[arg(long)]
    json: bool,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct KlArgs {
    /// Sample the divergence is computed from (the left argument).
    #[arg(long, value_name = "FILE")]
    input1: PathBuf,
    /// Sample defining the reference density (the right argument).
    #[arg(long, value_name = "FILE")]
    input2: PathBuf,
    /// Ranking stages for both samples.
    #[arg(long, default_value_t = 1)]
    stages: usize,
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    kernel: KernelChoice,
    /// Bandwidth shared by both density estimates; the rule and CV modes
    /// resolve it on the first sample.
    #[command(flatten)]
    bandwidth: BandwidthArgs,
    #[arg(long)]
    json: bool,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SelectVarsArgs {
    /// Sample CSV: cycle,rank, then one response and ≥ 2 predictors.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    stages: usize,
    /// Response column name; the first value column by default.
    #[arg(long, value_name = "NAME")]
    response: Option<String>,
    /// Rule constant for the bandwidth shared by every subset entropy.
    #[arg(long, default_value_t = 0.60)]
    d1: f64,
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    kernel: KernelChoice,
    #[command(flatten)]
    support: SupportArgs,
    #[arg(long)]
    json: bool,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment spec: key=value text or JSON.
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Write the aggregate CSV here (overrides the spec's output field).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's replication count.
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct TuneD1Args {
    /// Experiment spec naming the parent, designs and estimator.
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Constants to sweep (comma-separated); 0.50..2.00 step 0.05 by default.
    #[arg(long, value_name = "D1,D2,...")]
    grid: Option<String>,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ReApproxArgs {
    /// Bivariate-normal correlation; ranking is by the companion
    /// coordinate and the entropy is of the measured one.
    #[arg(long, conflicts_with = "parent")]
    rho: Option<f64>,
    /// Self-ranked univariate parent: "normal:MEAN,SD" or "uniform".
    #[arg(long, value_name = "MODEL")]
    parent: Option<String>,
    #[arg(short, long)]
    k: usize,
    /// Ranking stages of the ranked scheme.
    #[arg(short, long, default_value_t = 1, conflicts_with = "limiting")]
    r: usize,
    /// Use the infinitely-iterated limiting design instead of finite stages.
    #[arg(long)]
    limiting: bool,
    /// Total sample size both schemes are compared at.
    #[arg(short, long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    kernel: KernelChoice,
    /// Bandwidth factor for the ranked scheme: gamma = c * n^(-1/2.5).
    /// Defaults from the tuned table for bivariate rho in {0.8, 0.9}.
    #[arg(long, value_name = "C")]
    c_ranked: Option<f64>,
    /// Bandwidth factor for the SRS scheme.
    #[arg(long, value_name = "C")]
    c_srs: Option<f64>,
    /// Explicit ranked-scheme bandwidth (overrides --c-ranked).
    #[arg(long, value_name = "GAMMA")]
    gamma_ranked: Option<f64>,
    /// Explicit SRS bandwidth (overrides --c-srs).
    #[arg(long, value_name = "GAMMA")]
    gamma_srs: Option<f64>,
    #[arg(long)]
    json: bool,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct PopulationEntropyArgs {
    /// Finite population CSV (header row, numeric columns).
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(short, long)]
    k: usize,
    #[arg(short, long)]
    m: usize,
    /// Deepest ranked scheme to study (schemes 1..=r are all reported).
    #[arg(short, long, default_value_t = 1)]
    r: usize,
    /// Ranking column: a name from the header or a 0-based index.
    #[arg(long, value_name = "COL", default_value = "0")]
    rank_by: String,
    /// Rule constant for every bandwidth in the study.
    #[arg(long)]
    d1: f64,
    #[arg(long, default_value_t = 200)]
    replications: usize,
    #[arg(long, value_enum, default_value_t = KernelChoice::Gaussian)]
    kernel: KernelChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long)]
    dry_run: bool,
}

// ---------------------------------------------------------------------------
// Entry point

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Sample(a) => run_sample(a),
        Cmd::Entropy(a) => run_entropy(a),
        Cmd::Mi(a) => run_mi(a),
        Cmd::Kl(a) => run_kl(a),
        Cmd::SelectVars(a) => run_select_vars(a),
        Cmd::Simulate(a) => run_simulate(a),
        Cmd::TuneD1(a) => run_tune_d1(a),
        Cmd::ReApprox(a) => run_re_approx(a),
        Cmd::PopulationEntropy(a) => run_population_entropy(a),
    }
}

// ---------------------------------------------------------------------------
// Subcommand bodies

fn run_sample(a: SampleArgs) -> CliResult {
    let mut design = Design::new(a.k, a.m, a.r, a.rank_by)?;
    design.replacement = !a.no_replacement;
    if let Some(sd) = a.ranking_noise {
        if !(sd.is_finite() && sd >= 0.0) {
            return Err(usage(format!(
                "--ranking-noise must be a nonnegative real, got {sd}"
            )));
        }
        design.ranking_noise_sd = (sd > 0.0).then_some(sd);
    }
    let parent = match (&a.parent, &a.input) {
        (Some(spec), None) => Some(parse_parent(spec)?),
        (None, Some(_)) => None,
        (None, None) => {
            return Err(usage("choose a source: --parent MODEL or --input FILE"));
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if a.no_replacement && parent.is_some() {
        return Err(usage("--no-replacement only applies to finite populations"));
    }
    if let Some(ref p) = parent {
        if a.rank_by >= p.dim() {
            return Err(usage(format!(
                "--rank-by {} is out of range for a {}-dimensional parent",
                a.rank_by,
                p.dim()
            )));
        }
    }
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let (source, names) = match parent {
        Some(model) => {
            let names: Vec<String> = (1..=model.dim()).map(|i| format!("x{i}")).collect();
            (PopulationSource::Model(model), names)
        }
        None => {
            let path = a.input.as_ref().expect("checked above");
            let pop = read_population(path)?;
            let names = pop.columns().to_vec();
            (PopulationSource::Finite(pop), names)
        }
    };
    let sample = draw_mrss(&source, &design, a.seed)?;
    let mut buf = Vec::new();
    sample.to_csv(&mut buf, &names)?;
    emit_bytes(&buf, a.output.as_deref())
}

fn run_entropy(a: EntropyArgs) -> CliResult {
    let policy_spec = a.bandwidth.to_spec()?;
    let support = a.support.to_spec()?;
    let coords = a
        .coords
        .as_deref()
        .map(|s| parse_index_list(s, "--coords"))
        .transpose()?;
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let sample = read_sample(&a.input, a.stages)?.0;
    let sample = match &coords {
        Some(idx) => sample.project(idx)?,
        None => sample,
    };
    let kernel = a.kernel.sized(sample.p())?;
    let policy = policy_spec.to_policy(&sample)?;
    let report = full_report(&sample, &kernel, &policy, &support)?;

    let text = if a.json {
        pretty_json(&report)?
    } else {
        kv_table(&[
            ("h", format!("{:.6}", report.h)),
            ("gamma", format!("{:.6}", report.gamma)),
            ("cv", fmt_opt(report.cv)),
            ("d", fmt_opt(report.d)),
            ("mse_hat", fmt_opt(report.mse_hat)),
            ("alpha1_hat", fmt_opt(report.alpha1_hat)),
            ("alpha2_hat", fmt_opt(report.alpha2_hat)),
            ("n", report.n.to_string()),
            ("k", report.k.to_string()),
            ("m", report.m.to_string()),
            ("r", report.r.to_string()),
            ("p", report.p.to_string()),
        ])
    };
    emit_text(&text, a.output.as_deref())
}

fn run_mi(a: MiArgs) -> CliResult {
    let policy_spec = a.bandwidth.to_spec()?;
    let support = a.support.to_spec()?;
    let block1 = parse_index_list(&a.block1, "--block1")?;
    let block2 = parse_index_list(&a.block2, "--block2")?;
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let sample = read_sample(&a.input, a.stages)?.0;
    let union: Vec<usize> = block1.iter().chain(&block2).copied().collect();
    let projected = sample.project(&union)?;
    // The rule bandwidth comes from the full sample — every block choice
    // on one dataset shares it, so their estimates stay comparable — while
    // the cross-validation policies score candidate bandwidths on the
    // columns actually being estimated.
    let gamma = match &policy_spec {
        PolicySpec::Fixed(g) => *g,
        PolicySpec::Rule(d1) => common_bandwidth_rule(&sample, *d1)?,
        PolicySpec::CvRule(d1) => {
            let centre = common_bandwidth_rule(&sample, *d1)?;
            let grid = default_cv_grid(centre)?;
            let kernel = a.kernel.sized(projected.p())?;
            rss_entropy::entropy::select_bandwidth_cv(&projected, &kernel, &grid, &support)?
        }
        PolicySpec::CvGrid(grid) => {
            let kernel = a.kernel.sized(projected.p())?;
            rss_entropy::entropy::select_bandwidth_cv(&projected, &kernel, grid, &support)?
        }
    };
    let sub1: Vec<usize> = (0..block1.len()).collect();
    let sub2: Vec<usize> = (block1.len()..union.len()).collect();
    let base = a.kernel.base()?;
    let report = mutual_information(&projected, &sub1, &sub2, &base, gamma, &support)?;

    let text = if a.json {
        pretty_json(&report)?
    } else {
        kv_table(&[
            ("i_hat", format!("{:.6}", report.i_hat)),
            ("i_std", format!("{:.6}", report.i_std)),
            ("i_raw", format!("{:.6}", report.i_raw)),
            ("clamped", report.clamped.to_string()),
            ("h_block1", format!("{:.6}", report.h_block1)),
            ("h_block2", format!("{:.6}", report.h_block2)),
            ("h_joint", format!("{:.6}", report.h_joint)),
            ("gamma", format!("{:.6}", report.gamma)),
            ("n", report.n.to_string()),
            ("p", report.p.to_string()),
        ])
    };
    emit_text(&text, a.output.as_deref())
}

#[derive(Serialize)]
struct KlReport {
    kl: f64,
    gamma: f64,
    n1: usize,
    n2: usize,
    p: usize,
}

fn run_kl(a: KlArgs) -> CliResult {
    let policy_spec = a.bandwidth.to_spec()?;
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let sample1 = read_sample(&a.input1, a.stages)?.0;
    let sample2 = read_sample(&a.input2, a.stages)?.0;
    let kernel = a.kernel.sized(sample1.p())?;
    let gamma = policy_spec.to_gamma(&sample1, &kernel, &SupportSpec::AllPoints)?;
    let kl = kl_divergence(&sample1, &sample2, &kernel, gamma)?;
    let report = KlReport {
        kl,
        gamma,
        n1: sample1.n(),
        n2: sample2.n(),
        p: sample1.p(),
    };

    let text = if a.json {
        pretty_json(&report)?
    } else {
        kv_table(&[
            ("kl", format!("{:.6}", report.kl)),
            ("gamma", format!("{:.6}", report.gamma)),
            ("n1", report.n1.to_string()),
            ("n2", report.n2.to_string()),
            ("p", report.p.to_string()),
        ])
    };
    emit_text(&text, a.output.as_deref())
}

#[derive(Serialize)]
struct PairRow {
    predictors: (String, String),
    i_hat: f64,
    i_std: f64,
    h_pair: f64,
    h_response: f64,
    h_joint: f64,
    gamma: f64,
}

#[derive(Serialize)]
struct SelectVarsReport {
    response: String,
    d1: f64,
    kernel: &'static str,
    /// Rows sorted by decreasing standardized information.
    ranking: Vec<PairRow>,
}

fn run_select_vars(a: SelectVarsArgs) -> CliResult {
    require_positive(a.d1, "--d1")?;
    let support = a.support.to_spec()?;
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let (sample, names) = read_sample(&a.input, a.stages)?;
    let response_idx = match &a.response {
        Some(name) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| usage(format!("response column '{name}' is not in the header")))?,
        None => 0,
    };
    let predictors: Vec<usize> = (0..names.len()).filter(|&i| i != response_idx).collect();
    if predictors.len() < 2 {
        return Err(Failure::Run(rss_entropy::Error::Ingestion(
            "variable selection needs at least two predictor columns besides the response"
                .into(),
        )));
    }

    let base = a.kernel.base()?;
    // One bandwidth from the full sample serves every subset entropy, so
    // the pair rankings compare like against like.
    let gamma = common_bandwidth_rule(&sample, a.d1)?;
    let mut ranking = Vec::new();
    for (pos, &i) in predictors.iter().enumerate() {
        for &j in &predictors[pos + 1..] {
            let triple = sample.project(&[i, j, response_idx])?;
            let sub_support = support.clone();
            let report = mutual_information(&triple, &[0, 1], &[2], &base, gamma, &sub_support)?;
            ranking.push(PairRow {
                predictors: (names[i].clone(), names[j].clone()),
                i_hat: report.i_hat,
                i_std: report.i_std,
                h_pair: report.h_block1,
                h_response: report.h_block2,
                h_joint: report.h_joint,
                gamma,
            });
        }
    }
    ranking.sort_by(|a, b| b.i_std.total_cmp(&a.i_std));

    let report = SelectVarsReport {
        response: names[response_idx].clone(),
        d1: a.d1,
        kernel: a.kernel.label(),
        ranking,
    };
    let text = if a.json {
        pretty_json(&report)?
    } else {
        let rows: Vec<Vec<String>> = report
            .ranking
            .iter()
            .map(|row| {
                vec![
                    format!("({},{})", row.predictors.0, row.predictors.1),
                    format!("{:.6}", row.i_hat),
                    format!("{:.6}", row.i_std),
                    format!("{:.6}", row.gamma),
                ]
            })
            .collect();
        format!(
            "response: {}  d1: {}  kernel: {}\n{}",
            report.response,
            report.d1,
            report.kernel,
            grid_table(&["pair", "i_hat", "i_std", "gamma"], &rows)
        )
    };
    emit_text(&text, a.output.as_deref())
}

fn run_simulate(a: SimulateArgs) -> CliResult {
    let text = read_text(&a.spec)?;
    let mut spec = parse_spec(&text)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(r) = a.replications {
        spec.replications = r;
    }
    spec.validate()?;
    if a.dry_run {
        println!("dry-run: spec valid ({} cells)", spec.cells().len());
        return Ok(());
    }

    let rows = run_experiment(&spec)?;
    let mut buf = Vec::new();
    write_rows_csv(&rows, spec.seed, &mut buf)?;
    let dest = a
        .output
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from));
    emit_bytes(&buf, dest.as_deref())
}

fn run_tune_d1(a: TuneD1Args) -> CliResult {
    let grid = match a.grid.as_deref() {
        Some(s) => {
            let g = parse_f64_list(s, "--grid")?;
            if g.is_empty() {
                return Err(usage("--grid needs at least one constant"));
            }
            g
        }
        None => standard_d1_grid(),
    };
    let text = read_text(&a.spec)?;
    let mut spec = parse_spec(&text)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(r) = a.replications {
        spec.replications = r;
    }
    spec.validate()?;
    if a.dry_run {
        println!(
            "dry-run: spec valid ({} cells x {} grid points)",
            spec.cells().len(),
            grid.len()
        );
        return Ok(());
    }

    let cells = tune_d1(&spec, &grid)?;
    let mut buf = Vec::new();
    write_tuning_csv(&cells, spec.seed, &mut buf)?;
    let dest = a
        .output
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from));
    emit_bytes(&buf, dest.as_deref())
}

#[derive(Serialize)]
struct ReReport {
    re: f64,
    k: usize,
    /// Ranking stages; `null` for the limiting design.
    stages: Option<usize>,
    n: usize,
    rho: Option<f64>,
    parent: String,
    gamma_ranked: f64,
    gamma_srs: f64,
}

fn run_re_approx(a: ReApproxArgs) -> CliResult {
    let (parent, parent_label) = match (&a.rho, &a.parent) {
        (Some(rho), None) => (
            ParentModel::bivariate_normal(*rho)?,
            format!("bivariate:{rho}"),
        ),
        (None, Some(spec)) => {
            let model = parse_parent(spec)?;
            if model.dim() != 1 {
                return Err(usage(
                    "--parent must be univariate here; use --rho for the bivariate case",
                ));
            }
            (model, spec.clone())
        }
        _ => {
            return Err(usage(
                "choose a parent: --rho RHO (concomitant ranking) or --parent MODEL",
            ));
        }
    };
    let stages = if a.limiting {
        Stages::Limiting
    } else {
        Stages::Finite(a.r)
    };
    let stage_count = (!a.limiting).then_some(a.r);

    let factor_for = |explicit_c: Option<f64>, scheme: Option<usize>| -> Result<f64, Failure> {
        if let Some(c) = explicit_c {
            require_positive(c, "bandwidth factor")?;
            return Ok(c);
        }
        a.rho
            .and_then(|rho| reference_bandwidth_factor(scheme, a.k, rho))
            .ok_or_else(|| {
                usage(
                    "no tuned bandwidth factor for this configuration; \
                     pass --c-ranked/--c-srs or --gamma-ranked/--gamma-srs",
                )
            })
    };
    let gamma_ranked = match a.gamma_ranked {
        Some(g) => {
            require_positive(g, "--gamma-ranked")?;
            g
        }
        None => reference_bandwidth(factor_for(a.c_ranked, stage_count)?, a.n, 1)?,
    };
    let gamma_srs = match a.gamma_srs {
        Some(g) => {
            require_positive(g, "--gamma-srs")?;
            g
        }
        None => reference_bandwidth(factor_for(a.c_srs, None)?, a.n, 1)?,
    };
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let kernel = a.kernel.sized(1)?;
    let re = relative_efficiency(
        &parent,
        a.k,
        stages,
        a.n,
        &kernel,
        gamma_ranked,
        gamma_srs,
        &SupportSpec::AllPoints,
    )?;
    let report = ReReport {
        re,
        k: a.k,
        stages: stage_count,
        n: a.n,
        rho: a.rho,
        parent: parent_label,
        gamma_ranked,
        gamma_srs,
    };

    let text = if a.json {
        pretty_json(&report)?
    } else {
        kv_table(&[
            ("re", format!("{:.6}", report.re)),
            ("k", report.k.to_string()),
            (
                "stages",
                report
                    .stages
                    .map_or_else(|| "limiting".into(), |r| r.to_string()),
            ),
            ("n", report.n.to_string()),
            ("parent", report.parent.clone()),
            ("gamma_ranked", format!("{:.6}", report.gamma_ranked)),
            ("gamma_srs", format!("{:.6}", report.gamma_srs)),
        ])
    };
    emit_text(&text, a.output.as_deref())
}

fn run_population_entropy(a: PopulationEntropyArgs) -> CliResult {
    require_positive(a.d1, "--d1")?;
    if a.replications == 0 {
        return Err(usage("--replications must be at least 1"));
    }
    if a.dry_run {
        println!("dry-run: configuration valid");
        return Ok(());
    }

    let pop = read_population(&a.input)?;
    let rank_by = match a.rank_by.parse::<usize>() {
        Ok(idx) => idx,
        Err(_) => pop.column_index(&a.rank_by)?,
    };
    let design = Design::new(a.k, a.m, a.r, rank_by)?;
    let study = finite_population_study(
        &pop,
        &design,
        a.kernel.family(),
        a.d1,
        a.replications,
        a.seed,
    )?;

    let text = if a.json {
        pretty_json(&study)?
    } else {
        let targets = kv_table(&[
            ("entropy", format!("{:.6}", study.targets.entropy)),
            ("information", format!("{:.6}", study.targets.information)),
            (
                "information_std",
                format!("{:.6}", study.targets.information_std),
            ),
            (
                "gamma_entropy",
                format!("{:.6}", study.targets.gamma_entropy),
            ),
            (
                "gamma_information",
                format!("{:.6}", study.targets.gamma_information),
            ),
        ]);
        let mut buf = Vec::new();
        write_rows_csv(&study.rows, a.seed, &mut buf)?;
        format!(
            "population targets:\n{targets}\nresampling rows:\n{}",
            String::from_utf8(buf).expect("csv writer emits utf-8")
        )
    };
    emit_text(&text, a.output.as_deref())
}

// ---------------------------------------------------------------------------
// Parsing and output helpers

fn require_positive(x: f64, what: &str) -> Result<(), Failure> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(usage(format!("{what} must be a positive real, got {x}")))
    }
}

fn parse_parent(spec: &str) -> Result<ParentModel, Failure> {
    let (head, tail) = match spec.split_once(':') {
        Some((h, t)) => (h.trim(), Some(t.trim())),
        None => (spec.trim(), None),
    };
    match (head, tail) {
        ("uniform", None) => Ok(ParentModel::Uniform01),
        ("normal", None) => Ok(ParentModel::standard_normal()),
        ("normal", Some(args)) => {
            let parts = parse_f64_list(args, "--parent normal")?;
            match parts.as_slice() {
                [mean, sd] => Ok(ParentModel::normal(*mean, *sd)?),
                _ => Err(usage("--parent normal wants \"normal:MEAN,SD\"")),
            }
        }
        ("bivariate", Some(args)) => {
            let parts = parse_f64_list(args, "--parent bivariate")?;
            match parts.as_slice() {
                [rho] => Ok(ParentModel::bivariate_normal(*rho)?),
                _ => Err(usage("--parent bivariate wants \"bivariate:RHO\"")),
            }
        }
        _ => Err(usage(format!(
            "unknown parent '{spec}'; use \"normal:MEAN,SD\", \"uniform\" or \"bivariate:RHO\""
        ))),
    }
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| usage(format!("{what}: '{t}' is not a number")))
        })
        .collect()
}

fn parse_index_list(s: &str, what: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| usage(format!("{what}: '{t}' is not a coordinate index")))
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        Failure::Run(rss_entropy::Error::Ingestion(format!(
            "cannot read {}: {e}",
            path.display()
        )))
    })
}

fn read_sample(path: &Path, stages: usize) -> Result<(RankedSetSample, Vec<String>), Failure> {
    let file = fs::File::open(path).map_err(|e| {
        Failure::Run(rss_entropy::Error::Ingestion(format!(
            "cannot read {}: {e}",
            path.display()
        )))
    })?;
    Ok(RankedSetSample::from_csv_reader(file, stages)?)
}

fn read_population(path: &Path) -> Result<FinitePopulation, Failure> {
    Ok(FinitePopulation::from_csv_path(path)?)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Run(rss_entropy::Error::Numerical(format!("json: {e}"))))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

/// Two-column fixed-width key/value table.
fn kv_table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (key, value) in rows {
        let _ = writeln!(out, "{key:<width$}  {value}");
    }
    out
}

/// Fixed-width table with a header row and a separator line.
fn grid_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (c, cell) in row.iter().enumerate().take(cols) {
            widths[c] = widths[c].max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String]| {
        let joined: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<width$}", width = widths[c]))
            .collect();
        format!("{}\n", joined.join("  ").trim_end())
    };
    out.push_str(&line(
        &headers.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
    ));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

fn emit_text(text: &str, output: Option<&Path>) -> CliResult {
    emit_bytes(text.as_bytes(), output)
}

fn emit_bytes(bytes: &[u8], output: Option<&Path>) -> CliResult {
    use std::io::Write;
    match output {
        Some(path) => fs::write(path, bytes).map_err(|e| {
            Failure::Run(rss_entropy::Error::Ingestion(format!(
                "cannot write {}: {e}",
                path.display()
            )))
        }),
        None => std::io::stdout().write_all(bytes).map_err(|e| {
            Failure::Run(rss_entropy::Error::Io(e))
        }),
    }
}
