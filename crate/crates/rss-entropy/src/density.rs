//! Kernel density estimate and empirical cdf over a ranked set sample.
//!
//! The estimate is the plain product-kernel form
//! f̂(t) = (1/(nγ^p)) Σ K_p((t − x)/γ) over all measured observations,
//! with one scalar bandwidth for every coordinate. Evaluation is exact
//! (no binning): the samples in scope are small, so O(n) per query is
//! fine and keeps the estimator auditable.

use crate::designs::RankedSetSample;
use crate::kernels::KernelSpec;
use crate::{Error, Result};

/// An immutable kernel density estimate borrowing its sample.
#[derive(Debug, Clone)]
pub struct DensityEstimate<'a> {
    sample: &'a RankedSetSample,
    kernel: &'a KernelSpec,
    gamma: f64,
}

impl<'a> DensityEstimate<'a> {
    pub fn new(
        sample: &'a RankedSetSample,
        kernel: &'a KernelSpec,
        gamma: f64,
    ) -> Result<DensityEstimate<'a>> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!(
                "bandwidth must be a positive real, got {gamma}"
            )));
        }
        if let Some(joe) = kernel.joe_constants() {
            if joe.p != sample.p() {
                return Err(Error::Parameter(format!(
                    "kernel was solved for dimension {} but the sample has p={}",
                    joe.p,
                    sample.p()
                )));
            }
        }
        Ok(DensityEstimate {
            sample,
            kernel,
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sample(&self) -> &RankedSetSample {
        self.sample
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.kernel
    }

    /// Density estimate at `t` from all n = m·k observations.
    pub fn eval(&self, t: &[f64]) -> f64 {
        self.eval_over(t, None)
    }

    /// Density estimate at `t` from the sample with cycle `skip` removed,
    /// i.e. the estimate a reduced (m−1)-cycle sample would give.
    pub fn eval_excluding_cycle(&self, t: &[f64], skip: usize) -> Result<f64> {
        if self.sample.m() < 2 {
            return Err(Error::Parameter(
                "cycle exclusion needs at least two cycles".into(),
            ));
        }
        if skip >= self.sample.m() {
            return Err(Error::Parameter(format!(
                "cycle index {skip} out of range for m={}",
                self.sample.m()
            )));
        }
        Ok(self.eval_over(t, Some(skip)))
    }

    fn eval_over(&self, t: &[f64], skip: Option<usize>) -> f64 {
        let p = self.sample.p();
        assert_eq!(t.len(), p, "evaluation point has wrong dimension");
        let mut scaled = vec![0.0; p];
        let mut sum = 0.0;
        let mut count = 0usize;
        for (_, j, obs) in self.sample.iter_indexed() {
            if skip == Some(j) {
                continue;
            }
            for c in 0..p {
                scaled[c] = (t[c] - obs[c]) / self.gamma;
            }
            sum += self.kernel.product(&scaled);
            count += 1;
        }
        sum / (count as f64 * self.gamma.powi(p as i32))
    }
}

/// Empirical cdf: the fraction of observations coordinate-wise ≤ `t`.
pub fn ecdf_eval(sample: &RankedSetSample, t: &[f64]) -> f64 {
    assert_eq!(t.len(), sample.p(), "evaluation point has wrong dimension");
    let hits = sample
        .iter()
        .filter(|obs| obs.iter().zip(t).all(|(x, b)| x <= b))
        .count();
    hits as f64 / sample.n() as f64
}
