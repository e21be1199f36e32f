//! Ranked set and multistage ranked set sampling designs.
//!
//! One cycle of an r-stage design over set size k identifies k^(r+1) raw
//! units but measures only k of them. Stage 1 forms k sets of k units and
//! keeps the i-th smallest (by the ranking score) of the i-th set; each
//! later stage takes k independent ranked sets from the previous stage and
//! keeps the i-th smallest of the i-th set. Ranking is by a designated
//! coordinate, optionally perturbed by Gaussian noise to model judgement
//! error; `r = 1` is ordinary ranked set sampling and `r = 2` the double
//! design. A simple random sample is the `k = 1` degenerate case.
//!
//! Cycles are drawn on independent, deterministically derived RNG
//! substreams, so a (source, design, seed) triple always yields the same
//! sample, bit for bit, and cycles could be generated in any order.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::parent::{FinitePopulation, ParentModel};
use crate::{Error, Result};

/// Parameters of a (multistage) ranked set sampling design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Design {
    /// Set size: measured units per cycle.
    pub k: usize,
    /// Number of cycles; the sample holds n = m·k observations.
    pub m: usize,
    /// Ranking stages: 1 for ordinary RSS, 2 for double RSS, and so on.
    pub r: usize,
    /// Coordinate used for judgement ranking.
    pub rank_by: usize,
    /// Whether finite-population draws replace units between draws.
    pub replacement: bool,
    /// Standard deviation of Gaussian noise added to the ranking score;
    /// `None` ranks perfectly on the coordinate itself.
    pub ranking_noise_sd: Option<f64>,
}

impl Design {
    /// A perfect-ranking, with-replacement design.
    pub fn new(k: usize, m: usize, r: usize, rank_by: usize) -> Result<Self> {
        let design = Design {
            k,
            m,
            r,
            rank_by,
            replacement: true,
            ranking_noise_sd: None,
        };
        design.validate_shape()?;
        Ok(design)
    }

    /// Measured sample size n = m·k.
    pub fn n(&self) -> usize {
        self.m * self.k
    }

    /// Raw units identified per cycle: k^(r+1).
    pub fn units_per_cycle(&self) -> Result<usize> {
        let exp = u32::try_from(self.r + 1)
            .map_err(|_| Error::Parameter(format!("stage count r={} is too large", self.r)))?;
        self.k
            .checked_pow(exp)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "design k={}, r={} needs k^(r+1) raw units per cycle, which overflows",
                    self.k, self.r
                ))
            })
    }

    fn validate_shape(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("set size k must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Parameter("cycle count m must be at least 1".into()));
        }
        if self.r == 0 {
            return Err(Error::Parameter("stage count r must be at least 1".into()));
        }
        if let Some(sd) = self.ranking_noise_sd {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::Parameter(format!(
                    "ranking noise sd must be finite and nonnegative, got {sd}"
                )));
            }
        }
        self.units_per_cycle().map(|_| ())
    }

    fn validate_against(&self, source: &PopulationSource) -> Result<()> {
        self.validate_shape()?;
        let p = source.dim();
        if self.rank_by >= p {
            return Err(Error::Parameter(format!(
                "rank_by={} is out of range for {p}-dimensional observations",
                self.rank_by
            )));
        }
        if let PopulationSource::Finite(pop) = source {
            if !self.replacement && pop.len() < self.units_per_cycle()? {
                return Err(Error::Size(format!(
                    "population of {} rows cannot supply {} distinct units per cycle \
                     (k={}, r={}) without replacement",
                    pop.len(),
                    self.units_per_cycle()?,
                    self.k,
                    self.r
                )));
            }
        }
        Ok(())
    }
}

/// Where raw units come from: an analytic model or a finite row list.
#[derive(Debug, Clone)]
pub enum PopulationSource {
    Model(ParentModel),
    Finite(FinitePopulation),
}

impl PopulationSource {
    /// Observation dimension p.
    pub fn dim(&self) -> usize {
        match self {
            PopulationSource::Model(m) => m.dim(),
            PopulationSource::Finite(pop) => pop.dim(),
        }
    }
}

/// A complete balanced sample: the k×m grid of measured p-variate
/// observations, stored cycle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSetSample {
    k: usize,
    m: usize,
    r: usize,
    p: usize,
    data: Vec<f64>,
}

impl RankedSetSample {
    /// Assembles a sample from raw parts; `data` is cycle-major:
    /// observation (rank i, cycle j) occupies `data[((j·k)+i)·p ..][..p]`.
    pub fn from_parts(k: usize, m: usize, r: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || m == 0 || r == 0 || p == 0 {
            return Err(Error::Parameter(
                "sample needs k, m, r, p all at least 1".into(),
            ));
        }
        if data.len() != k * m * p {
            return Err(Error::Size(format!(
                "sample data holds {} values but k·m·p = {}",
                data.len(),
                k * m * p
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "sample contains a non-finite value {bad}"
            )));
        }
        Ok(RankedSetSample { k, m, r, p, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Observation dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Measured sample size n = m·k.
    pub fn n(&self) -> usize {
        self.m * self.k
    }

    /// Observation at rank `i` (0-based) in cycle `j` (0-based).
    pub fn obs(&self, i: usize, j: usize) -> &[f64] {
        assert!(i < self.k && j < self.m, "rank/cycle index out of range");
        let start = ((j * self.k) + i) * self.p;
        &self.data[start..start + self.p]
    }

    /// All observations in cycle-major order.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p)
    }

    /// All observations with their (rank, cycle) indices.
    pub fn iter_indexed(&self) -> impl Iterator<Item = (usize, usize, &[f64])> {
        let k = self.k;
        self.iter()
            .enumerate()
            .map(move |(flat, obs)| (flat % k, flat / k, obs))
    }

    /// The observations of one cycle.
    pub fn cycle(&self, j: usize) -> impl Iterator<Item = &[f64]> {
        (0..self.k).map(move |i| self.obs(i, j))
    }

    /// The observations holding rank `i` across all cycles.
    pub fn rank_row(&self, i: usize) -> impl Iterator<Item = &[f64]> {
        (0..self.m).map(move |j| self.obs(i, j))
    }

    /// New sample keeping only the given coordinates, in the given order.
    pub fn project(&self, coords: &[usize]) -> Result<RankedSetSample> {
        if coords.is_empty() {
            return Err(Error::Parameter("projection needs at least one coordinate".into()));
        }
        if let Some(&bad) = coords.iter().find(|&&c| c >= self.p) {
            return Err(Error::Parameter(format!(
                "projection coordinate {bad} out of range for p={}",
                self.p
            )));
        }
        let mut data = Vec::with_capacity(self.k * self.m * coords.len());
        for obs in self.iter() {
            data.extend(coords.iter().map(|&c| obs[c]));
        }
        RankedSetSample::from_parts(self.k, self.m, self.r, coords.len(), data)
    }

    /// Writes the sample as CSV with columns `cycle,rank,<names…>`
    /// (1-based cycle and rank, full-precision values).
    pub fn to_csv<W: std::io::Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.p {
            return Err(Error::Parameter(format!(
                "{} coordinate names supplied for p={}",
                names.len(),
                self.p
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cycle".to_string(), "rank".to_string()];
        header.extend_from_slice(names);
        w.write_record(&header)?;
        for (i, j, obs) in self.iter_indexed() {
            let mut record = vec![(j + 1).to_string(), (i + 1).to_string()];
            record.extend(obs.iter().map(|v| format!("{v}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a sample from CSV with columns `cycle,rank,<names…>`. The
    /// grid must be complete: every (cycle, rank) pair in 1..=m × 1..=k
    /// exactly once. `stages` records the design's r (not stored in the
    /// file). Returns the sample and the coordinate names.
    pub fn from_csv_reader<R: std::io::Read>(
        reader: R,
        stages: usize,
    ) -> Result<(RankedSetSample, Vec<String>)> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
        if headers.len() < 3 || headers[0] != "cycle" || headers[1] != "rank" {
            return Err(Error::Ingestion(
                "sample CSV must start with columns 'cycle,rank' followed by at least one \
                 value column"
                    .into(),
            ));
        }
        let names: Vec<String> = headers[2..].to_vec();
        let p = names.len();
        let mut cells: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = idx + 2;
            if record.len() != headers.len() {
                return Err(Error::Ingestion(format!(
                    "row {line} has {} cells, expected {}",
                    record.len(),
                    headers.len()
                )));
            }
            let cycle: usize = record[0].parse().map_err(|_| {
                Error::Ingestion(format!("row {line}: bad cycle index '{}'", &record[0]))
            })?;
            let rank: usize = record[1].parse().map_err(|_| {
                Error::Ingestion(format!("row {line}: bad rank index '{}'", &record[1]))
            })?;
            if cycle == 0 || rank == 0 {
                return Err(Error::Ingestion(format!(
                    "row {line}: cycle and rank are 1-based"
                )));
            }
            let mut values = Vec::with_capacity(p);
            for (cell, name) in record.iter().skip(2).zip(&names) {
                values.push(cell.parse().map_err(|_| {
                    Error::Ingestion(format!(
                        "row {line}, column '{name}': cannot parse '{cell}' as a number"
                    ))
                })?);
            }
            cells.push((cycle - 1, rank - 1, values));
        }
        if cells.is_empty() {
            return Err(Error::Ingestion("sample CSV has no data rows".into()));
        }
        let m = cells.iter().map(|c| c.0).max().unwrap() + 1;
        let k = cells.iter().map(|c| c.1).max().unwrap() + 1;
        if cells.len() != m * k {
            return Err(Error::Ingestion(format!(
                "sample grid incomplete: {} rows for k={k} ranks × m={m} cycles",
                cells.len()
            )));
        }
        let mut data = vec![f64::NAN; m * k * p];
        let mut seen = vec![false; m * k];
        for (cycle, rank, values) in cells {
            let slot = cycle * k + rank;
            if seen[slot] {
                return Err(Error::Ingestion(format!(
                    "duplicate entry for cycle {}, rank {}",
                    cycle + 1,
                    rank + 1
                )));
            }
            seen[slot] = true;
            data[slot * p..(slot + 1) * p].copy_from_slice(&values);
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Ingestion(format!(
                "missing entry for cycle {}, rank {}",
                missing / k + 1,
                missing % k + 1
            )));
        }
        let sample = RankedSetSample::from_parts(k, m, stages, p, data)?;
        Ok((sample, names))
    }
}

/// One final-stage selection event: the ranking scores of the set the
/// unit was chosen from, and the chosen score. Used to verify that the
/// sampler picks exactly the i-th order statistic.
#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub cycle: usize,
    pub rank: usize,
    pub set_scores: Vec<f64>,
    pub chosen_score: f64,
}

#[derive(Debug, Clone)]
struct Unit {
    values: Vec<f64>,
    score: f64,
    tag: u64,
}

/// Per-cycle raw-unit supply.
enum CycleDraws<'a> {
    Model(&'a ParentModel),
    FiniteReplace(&'a FinitePopulation),
    FinitePool {
        pop: &'a FinitePopulation,
        pool: Vec<usize>,
        next: usize,
    },
}

impl CycleDraws<'_> {
    fn new<'a, R: Rng>(
        source: &'a PopulationSource,
        design: &Design,
        rng: &mut R,
    ) -> Result<CycleDraws<'a>> {
        Ok(match source {
            PopulationSource::Model(m) => CycleDraws::Model(m),
            PopulationSource::Finite(pop) if design.replacement => CycleDraws::FiniteReplace(pop),
            PopulationSource::Finite(pop) => {
                // Partial Fisher–Yates: the first `need` slots become a
                // uniformly random distinct subset, in draw order.
                let need = design.units_per_cycle()?;
                let mut indices: Vec<usize> = (0..pop.len()).collect();
                for t in 0..need {
                    let pick = rng.random_range(t..indices.len());
                    indices.swap(t, pick);
                }
                indices.truncate(need);
                CycleDraws::FinitePool {
                    pop,
                    pool: indices,
                    next: 0,
                }
            }
        })
    }

    fn draw<R: Rng>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            CycleDraws::Model(m) => m.sample(rng),
            CycleDraws::FiniteReplace(pop) => {
                pop.row(rng.random_range(0..pop.len())).to_vec()
            }
            CycleDraws::FinitePool { pop, pool, next } => {
                let row = pop.row(pool[*next]).to_vec();
                *next += 1;
                row
            }
        }
    }
}

fn unit_order(a: &Unit, b: &Unit) -> Ordering {
    a.score
        .partial_cmp(&b.score)
        .expect("ranking scores are finite")
        .then(a.tag.cmp(&b.tag))
}

/// Builds one ranked set of the given stage: k units whose element i is
/// the judgement i-th order statistic of that stage's construction.
#[allow(clippy::too_many_arguments)]
fn ranked_set<R: Rng>(
    stage: usize,
    design: &Design,
    draws: &mut CycleDraws,
    rng: &mut R,
    tag: &mut u64,
    cycle: usize,
    trace: &mut Option<&mut Vec<SelectionTrace>>,
) -> Vec<Unit> {
    let k = design.k;
    let mut result = Vec::with_capacity(k);
    for i in 0..k {
        let mut set = if stage == 1 {
            (0..k)
                .map(|_| {
                    let values = draws.draw(rng);
                    let mut score = values[design.rank_by];
                    if let Some(sd) = design.ranking_noise_sd {
                        if sd > 0.0 {
                            let z: f64 = rng.sample(StandardNormal);
                            score += sd * z;
                        }
                    }
                    *tag += 1;
                    Unit {
                        values,
                        score,
                        tag: *tag,
                    }
                })
                .collect::<Vec<_>>()
        } else {
            ranked_set(stage - 1, design, draws, rng, tag, cycle, &mut None)
        };
        set.sort_by(unit_order);
        if stage == design.r {
            if let Some(collector) = trace.as_deref_mut() {
                collector.push(SelectionTrace {
                    cycle,
                    rank: i,
                    set_scores: set.iter().map(|u| u.score).collect(),
                    chosen_score: set[i].score,
                });
            }
        }
        result.push(set.swap_remove(i));
    }
    result
}

fn draw_impl(
    source: &PopulationSource,
    design: &Design,
    seed: u64,
    mut trace: Option<&mut Vec<SelectionTrace>>,
) -> Result<RankedSetSample> {
    design.validate_against(source)?;
    let p = source.dim();
    let mut data = vec![0.0; design.k * design.m * p];
    for j in 0..design.m {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let mut draws = CycleDraws::new(source, design, &mut rng)?;
        let mut tag = 0u64;
        let chosen = ranked_set(design.r, design, &mut draws, &mut rng, &mut tag, j, &mut trace);
        for (i, unit) in chosen.into_iter().enumerate() {
            let start = ((j * design.k) + i) * p;
            data[start..start + p].copy_from_slice(&unit.values);
        }
    }
    RankedSetSample::from_parts(design.k, design.m, design.r, p, data)
}

/// Draws a balanced multistage ranked set sample. Deterministic in
/// (source, design, seed); cycles sit on independent RNG substreams.
pub fn draw_mrss(
    source: &PopulationSource,
    design: &Design,
    seed: u64,
) -> Result<RankedSetSample> {
    draw_impl(source, design, seed, None)
}

/// Like [`draw_mrss`], additionally returning one [`SelectionTrace`] per
/// measured unit describing the final-stage set it was chosen from.
pub fn draw_mrss_traced(
    source: &PopulationSource,
    design: &Design,
    seed: u64,
) -> Result<(RankedSetSample, Vec<SelectionTrace>)> {
    let mut trace = Vec::new();
    let sample = draw_impl(source, design, seed, Some(&mut trace))?;
    Ok((sample, trace))
}

/// Draws a simple random sample of size n: the k = 1 degenerate design,
/// stored as an n-cycle sample so every estimator applies unchanged.
pub fn draw_srs(source: &PopulationSource, n: usize, seed: u64) -> Result<RankedSetSample> {
    if n == 0 {
        return Err(Error::Size("a simple random sample needs n ≥ 1".into()));
    }
    let design = Design::new(1, n, 1, 0)?;
    draw_impl(source, &design, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta, ContinuousCDF, Normal};

    fn normal_source() -> PopulationSource {
        PopulationSource::Model(ParentModel::standard_normal())
    }

    #[test]
    fn shape_validation() {
        assert!(Design::new(0, 5, 1, 0).is_err());
        assert!(Design::new(3, 0, 1, 0).is_err());
        assert!(Design::new(3, 5, 0, 0).is_err());
        let d = Design::new(3, 5, 2, 0).unwrap();
        assert_eq!(d.n(), 15);
        assert_eq!(d.units_per_cycle().unwrap(), 27);
        // rank_by out of range for a 1-d source.
        let bad = Design::new(3, 2, 1, 1).unwrap();
        assert!(draw_mrss(&normal_source(), &bad, 1).is_err());
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let design = Design::new(3, 4, 2, 0).unwrap();
        let a = draw_mrss(&normal_source(), &design, 42).unwrap();
        let b = draw_mrss(&normal_source(), &design, 42).unwrap();
        let c = draw_mrss(&normal_source(), &design, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn k1_mrss_is_srs() {
        let design = Design::new(1, 5, 1, 0).unwrap();
        let via_design = draw_mrss(&normal_source(), &design, 9).unwrap();
        let via_srs = draw_srs(&normal_source(), 5, 9).unwrap();
        assert_eq!(via_design, via_srs);
        assert_eq!(via_srs.n(), 5);
        assert!(draw_srs(&normal_source(), 0, 9).is_err());
    }

    #[test]
    fn final_stage_selection_is_exact_order_statistic() {
        for r in 1..=3 {
            let design = Design::new(4, 3, r, 0).unwrap();
            let (sample, trace) = draw_mrss_traced(&normal_source(), &design, 11).unwrap();
            assert_eq!(trace.len(), 12);
            for t in &trace {
                let mut sorted = t.set_scores.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(sorted.len(), 4);
                assert_eq!(
                    t.chosen_score, sorted[t.rank],
                    "stage-{r} pick at rank {} is not the order statistic",
                    t.rank
                );
                // Perfect ranking: the score is the ranked coordinate itself.
                assert_eq!(t.chosen_score, sample.obs(t.rank, t.cycle)[0]);
            }
        }
    }

    #[test]
    fn rank_rows_follow_order_statistic_distribution() {
        // For r = 1 the rank-i row is distributed as the i-th of k order
        // statistics: its cdf is the Beta(i, k−i+1) cdf composed with Φ.
        let k = 3;
        let m = 4000;
        let design = Design::new(k, m, 1, 0).unwrap();
        let sample = draw_mrss(&normal_source(), &design, 5).unwrap();
        let phi = Normal::new(0.0, 1.0).unwrap();
        for i in 0..k {
            let mut row: Vec<f64> = sample.rank_row(i).map(|o| o[0]).collect();
            row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let beta = Beta::new((i + 1) as f64, (k - i) as f64).unwrap();
            let mut sup: f64 = 0.0;
            for step in 1..40 {
                let x = -3.0 + 6.0 * step as f64 / 40.0;
                let ecdf = row.partition_point(|&v| v <= x) as f64 / m as f64;
                let truth = beta.cdf(phi.cdf(x));
                sup = sup.max((ecdf - truth).abs());
            }
            assert!(sup < 0.03, "rank {i} sup-distance {sup}");
        }
    }

    #[test]
    fn pooled_sample_is_consistent_for_parent() {
        // The equal-weight mixture over rank rows is the parent law, for
        // any stage count; checked against U(0, 1).
        let design = Design::new(3, 3000, 2, 0).unwrap();
        let source = PopulationSource::Model(ParentModel::Uniform01);
        let sample = draw_mrss(&source, &design, 17).unwrap();
        let mut pooled: Vec<f64> = sample.iter().map(|o| o[0]).collect();
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = pooled.len() as f64;
        let mut sup: f64 = 0.0;
        for (idx, v) in pooled.iter().enumerate() {
            sup = sup.max(((idx + 1) as f64 / n - v).abs());
        }
        assert!(sup < 0.025, "pooled ecdf deviates from uniform by {sup}");
    }

    #[test]
    fn noisy_ranking_destroys_row_separation_but_not_pooling() {
        let mut design = Design::new(3, 2000, 1, 0).unwrap();
        design.ranking_noise_sd = Some(1000.0);
        let sample = draw_mrss(&normal_source(), &design, 23).unwrap();
        for i in 0..3 {
            let mean: f64 = sample.rank_row(i).map(|o| o[0]).sum::<f64>() / 2000.0;
            assert!(
                mean.abs() < 0.15,
                "rank {i} mean {mean} should be near 0 under random ranking"
            );
        }
        // Perfect ranking for contrast: the extreme rows separate.
        design.ranking_noise_sd = None;
        let sharp = draw_mrss(&normal_source(), &design, 23).unwrap();
        let low: f64 = sharp.rank_row(0).map(|o| o[0]).sum::<f64>() / 2000.0;
        let high: f64 = sharp.rank_row(2).map(|o| o[0]).sum::<f64>() / 2000.0;
        assert!(low < -0.7 && high > 0.7);
    }

    #[test]
    fn finite_population_draws() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let pop = FinitePopulation::new(vec!["x".into()], rows).unwrap();
        let source = PopulationSource::Finite(pop);
        // Without replacement, one cycle of k=3, r=1 consumes all 9 rows.
        let mut design = Design::new(3, 2, 1, 0).unwrap();
        design.replacement = false;
        let sample = draw_mrss(&source, &design, 3).unwrap();
        for obs in sample.iter() {
            assert!(obs[0].fract() == 0.0 && (0.0..9.0).contains(&obs[0]));
        }
        for j in 0..2 {
            let mut cycle: Vec<f64> = sample.cycle(j).map(|o| o[0]).collect();
            cycle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(cycle.windows(2).all(|w| w[0] < w[1]), "cycle draws must be distinct");
        }
        // k=5 needs 25 distinct units; only 9 exist.
        let mut too_big = Design::new(5, 1, 1, 0).unwrap();
        too_big.replacement = false;
        assert!(matches!(
            draw_mrss(&source, &too_big, 3),
            Err(Error::Size(_))
        ));
        // With replacement the same design works and stays in-population.
        let with_repl = Design::new(5, 4, 1, 0).unwrap();
        let sample = draw_mrss(&source, &with_repl, 3).unwrap();
        assert!(sample.iter().all(|o| o[0].fract() == 0.0 && (0.0..9.0).contains(&o[0])));
    }

    #[test]
    fn csv_roundtrip() {
        let design = Design::new(2, 3, 2, 1).unwrap();
        let source = PopulationSource::Model(ParentModel::bivariate_normal(0.5).unwrap());
        let sample = draw_mrss(&source, &design, 77).unwrap();
        let mut buf = Vec::new();
        sample
            .to_csv(&mut buf, &["x1".to_string(), "x2".to_string()])
            .unwrap();
        let (back, names) = RankedSetSample::from_csv_reader(buf.as_slice(), 2).unwrap();
        assert_eq!(back, sample);
        assert_eq!(names, ["x1", "x2"]);
    }

    #[test]
    fn csv_rejects_malformed_grids() {
        let missing = "cycle,rank,x\n1,1,0.5\n1,2,0.7\n2,1,0.1\n";
        assert!(RankedSetSample::from_csv_reader(missing.as_bytes(), 1).is_err());
        let duplicate = "cycle,rank,x\n1,1,0.5\n1,1,0.7\n";
        assert!(RankedSetSample::from_csv_reader(duplicate.as_bytes(), 1).is_err());
        let bad_number = "cycle,rank,x\n1,1,abc\n";
        assert!(RankedSetSample::from_csv_reader(bad_number.as_bytes(), 1).is_err());
        let bad_header = "cyc,rank,x\n1,1,0.5\n";
        assert!(RankedSetSample::from_csv_reader(bad_header.as_bytes(), 1).is_err());
    }

    #[test]
    fn parts_and_projection_validation() {
        assert!(RankedSetSample::from_parts(2, 2, 1, 1, vec![0.0; 3]).is_err());
        assert!(RankedSetSample::from_parts(2, 2, 1, 1, vec![0.0, 1.0, f64::NAN, 2.0]).is_err());
        let s = RankedSetSample::from_parts(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let px = s.project(&[0]).unwrap();
        assert_eq!(px.p(), 1);
        assert_eq!(px.obs(0, 1), [3.0]);
        let swapped = s.project(&[1, 0]).unwrap();
        assert_eq!(swapped.obs(0, 0), [2.0, 1.0]);
        assert!(s.project(&[2]).is_err());
        assert!(s.project(&[]).is_err());
    }
}
