//! Parent populations: analytic distributions with exact pdf/cdf/quantile
//! access, and finite populations loaded from CSV.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// An analytic parent distribution used by the sampler, the theory engine,
/// and the simulation harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParentModel {
    /// Univariate normal with the given mean and standard deviation.
    Normal { mean: f64, sd: f64 },
    /// Uniform on the unit interval.
    Uniform01,
    /// Standard bivariate normal (zero means, unit variances) with
    /// correlation `rho`.
    BivariateNormal { rho: f64 },
}

impl ParentModel {
    /// Standard normal N(0, 1).
    pub fn standard_normal() -> Self {
        ParentModel::Normal { mean: 0.0, sd: 1.0 }
    }

    /// Validated univariate normal.
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::Parameter(format!(
                "normal parent needs finite mean and sd > 0, got mean={mean}, sd={sd}"
            )));
        }
        Ok(ParentModel::Normal { mean, sd })
    }

    /// Validated standard bivariate normal with correlation `rho`.
    pub fn bivariate_normal(rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::Parameter(format!(
                "bivariate normal parent needs |rho| < 1, got rho={rho}"
            )));
        }
        Ok(ParentModel::BivariateNormal { rho })
    }

    /// Number of coordinates of one observation.
    pub fn dim(&self) -> usize {
        match self {
            ParentModel::Normal { .. } | ParentModel::Uniform01 => 1,
            ParentModel::BivariateNormal { .. } => 2,
        }
    }

    /// Draws one observation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            ParentModel::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                vec![mean + sd * z]
            }
            ParentModel::Uniform01 => vec![rng.random::<f64>()],
            ParentModel::BivariateNormal { rho } => {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                vec![z1, rho * z1 + (1.0 - rho * rho).sqrt() * z2]
            }
        }
    }

    /// Joint density at `x` (whose length must equal `dim()`).
    pub fn pdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        match *self {
            ParentModel::Normal { mean, sd } => {
                let z = (x[0] - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            ParentModel::Uniform01 => {
                if (0.0..=1.0).contains(&x[0]) {
                    1.0
                } else {
                    0.0
                }
            }
            ParentModel::BivariateNormal { rho } => {
                let (u, v) = (x[0], x[1]);
                let det = 1.0 - rho * rho;
                let q = (u * u - 2.0 * rho * u * v + v * v) / det;
                (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
            }
        }
    }

    /// Density of one coordinate's marginal distribution.
    pub fn marginal_pdf(&self, coord: usize, x: f64) -> f64 {
        self.marginal_ln_pdf(coord, x).exp()
    }

    /// Natural log of the marginal density (−∞ where the density is zero).
    /// Exact in log space, so usable far into the tails where the density
    /// itself underflows.
    pub fn marginal_ln_pdf(&self, coord: usize, x: f64) -> f64 {
        self.check_coord(coord);
        match *self {
            ParentModel::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            ParentModel::Uniform01 => {
                if (0.0..=1.0).contains(&x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            // Both marginals of the standard bivariate normal are N(0, 1).
            ParentModel::BivariateNormal { .. } => {
                -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    /// Marginal cumulative distribution function of one coordinate.
    pub fn marginal_cdf(&self, coord: usize, x: f64) -> f64 {
        self.check_coord(coord);
        match *self {
            ParentModel::Normal { mean, sd } => std_normal().cdf((x - mean) / sd),
            ParentModel::Uniform01 => x.clamp(0.0, 1.0),
            ParentModel::BivariateNormal { .. } => std_normal().cdf(x),
        }
    }

    /// Marginal survival function `1 − F(x)`, accurate in the upper tail.
    pub fn marginal_sf(&self, coord: usize, x: f64) -> f64 {
        self.check_coord(coord);
        match *self {
            ParentModel::Normal { mean, sd } => std_normal().sf((x - mean) / sd),
            ParentModel::Uniform01 => (1.0 - x).clamp(0.0, 1.0),
            ParentModel::BivariateNormal { .. } => std_normal().sf(x),
        }
    }

    /// Marginal quantile function; `q` must lie strictly inside (0, 1).
    pub fn marginal_quantile(&self, coord: usize, q: f64) -> Result<f64> {
        self.check_coord(coord);
        if !(0.0 < q && q < 1.0) {
            return Err(Error::Parameter(format!(
                "quantile level must lie in (0, 1), got {q}"
            )));
        }
        Ok(match *self {
            ParentModel::Normal { mean, sd } => mean + sd * std_normal().inverse_cdf(q),
            ParentModel::Uniform01 => q,
            ParentModel::BivariateNormal { .. } => std_normal().inverse_cdf(q),
        })
    }

    /// Closed-form differential entropy of one coordinate's marginal, nats.
    pub fn marginal_entropy(&self, coord: usize) -> f64 {
        self.check_coord(coord);
        match *self {
            ParentModel::Normal { sd, .. } => {
                0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + sd.ln()
            }
            ParentModel::Uniform01 => 0.0,
            ParentModel::BivariateNormal { .. } => {
                0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            }
        }
    }

    /// Closed-form joint differential entropy, nats.
    pub fn joint_entropy(&self) -> f64 {
        match *self {
            ParentModel::BivariateNormal { rho } => {
                (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
                    + 0.5 * (1.0 - rho * rho).ln()
            }
            _ => self.marginal_entropy(0),
        }
    }

    /// Closed-form mutual information between the two coordinates, nats;
    /// `None` for univariate parents.
    pub fn mutual_information(&self) -> Option<f64> {
        match *self {
            ParentModel::BivariateNormal { rho } => Some(-0.5 * (1.0 - rho * rho).ln()),
            _ => None,
        }
    }

    fn check_coord(&self, coord: usize) {
        assert!(
            coord < self.dim(),
            "coordinate {coord} out of range for a {}-dimensional parent",
            self.dim()
        );
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// A finite population of p-variate rows with named columns, as loaded
/// from a CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl FinitePopulation {
    /// Builds a population from column names and rows, validating shape
    /// and finiteness.
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Ingestion("population needs at least one column".into()));
        }
        if rows.is_empty() {
            return Err(Error::Ingestion("population has no rows".into()));
        }
        for (idx, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Ingestion(format!(
                    "row {} has {} cells but {} columns are declared",
                    idx + 1,
                    row.len(),
                    columns.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Ingestion(format!(
                    "row {} contains a non-finite value {bad}",
                    idx + 1
                )));
            }
        }
        Ok(FinitePopulation { columns, rows })
    }

    /// Reads a population from CSV text with a header row of column names
    /// and numeric cells.
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let columns: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let mut rows = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(columns.len());
            for (cell, name) in record.iter().zip(&columns) {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Ingestion(format!(
                        "row {}, column '{}': cannot parse '{}' as a number",
                        idx + 2, // +1 for header, +1 for 1-based reporting
                        name,
                        cell
                    ))
                })?;
                row.push(v);
            }
            if record.len() != columns.len() {
                return Err(Error::Ingestion(format!(
                    "row {} has {} cells but the header declares {} columns",
                    idx + 2,
                    record.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        FinitePopulation::new(columns, rows)
    }

    /// Reads a population CSV from disk.
    pub fn from_csv_path<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Ingestion(format!(
                "cannot open population file {}: {e}",
                path.as_ref().display()
            ))
        })?;
        Self::from_reader(file)
    }

    /// Number of rows N.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// True when the population holds no rows (never, post-construction).
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of coordinates per row.
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Column names in file order.
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// All rows.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// One row by index.
    pub fn row(&self, idx: usize) -> &[f64] {
        &self.rows[idx]
    }

    /// Index of a named column.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| {
                Error::Ingestion(format!(
                    "unknown column '{name}'; available: {}",
                    self.columns.join(", ")
                ))
            })
    }

    /// New population restricted to the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<FinitePopulation> {
        let indices: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|row| indices.iter().map(|&i| row[i]).collect())
            .collect();
        FinitePopulation::new(names.iter().map(|s| s.to_string()).collect(), rows)
    }
}
