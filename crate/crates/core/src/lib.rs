//! Tools for asking whether a spurious-correlation benchmark measures what it
//! claims to, and for choosing a mitigation method for a new dataset.
//!
//! * [`datagen`]: synthetic two-block Gaussian datasets with a tunable
//!   label/attribute correlation and noise knobs.
//! * [`training`]: small softmax classifiers trained with ERM, inverse
//!   group-frequency reweighting or GroupDRO.
//! * [`kstat`]: the K statistic (log Bayes factor of a reweighted model over
//!   ERM on ERM's worst group) and sweeps over data knobs.
//! * [`validity`]: ERM failure, discriminative power and convergent validity
//!   of benchmarks from result tables.
//! * [`recommend`]: method selection strategies and leave-one-out scoring.
//! * [`cli`]: the `bench-validity` command-line front end.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod kstat;
pub mod recommend;
pub mod training;
pub mod validity;

pub use error::{Error, Result};
