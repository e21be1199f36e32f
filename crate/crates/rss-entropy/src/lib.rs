//! Nonparametric entropy estimation from ranked set samples.
//!
//! This crate implements kernel-based estimators of differential entropy,
//! mutual information and Kullback–Leibler divergence for data collected
//! under ranked set sampling (RSS) and its multistage extension (MRSS),
//! together with:
//!
//! * balanced RSS/MRSS samplers for analytic parent models and finite
//!   populations ([`designs`]),
//! * the two kernel families used by the estimators, with their moment
//!   constraints solved and frozen ([`kernels`]),
//! * bandwidth selection by plug-in rule and by leave-one-cycle-out
//!   cross-validation, plus a plug-in MSE estimator ([`entropy`]),
//! * an exact/numerical engine for judgement-order-statistic and
//!   concomitant densities, smoothing-bias functionals and the theoretical
//!   relative efficiency of RSS versus SRS ([`theory`]),
//! * a deterministic, parallel Monte Carlo harness ([`simlab`]).
//!
//! Entropies are reported in nats. Samples are immutable values; every
//! estimator is a pure function of its inputs, and all randomized routines
//! are bit-reproducible given a seed, independent of thread count.

#![forbid(unsafe_code)]

pub mod density;
pub mod designs;
pub mod divergence;
pub mod entropy;
mod error;
pub mod kernels;
pub mod parent;
pub mod quad;
pub mod simlab;
pub mod theory;

pub use error::{Error, Result};
