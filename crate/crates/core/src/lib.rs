//! Bayes linear adjustment of second-order beliefs, with uncertain inputs.
//!
//! The crate is organised bottom-up:
//!
//! * [`belief`]: second-order specifications and the Bayes linear update.
//! * [`uncertain`]: inputs known only through their moments, and the
//!   Gaussian correlation kernel over them.
//! * [`regression`]: linear regression priors on uncertain inputs,
//!   including a structured-error model for electrolysis-cell data.
//! * [`emulator`]: Bayes linear emulators trained on known inputs and
//!   queried at uncertain ones.
//! * [`network`]: chains of emulators and exact functions.
//! * [`design`] and [`diagnostics`]: maximin Latin hypercubes and
//!   validation metrics.
//! * [`ddr`]: a synthetic two-stage simulator used by the demo.

pub mod belief;
pub mod ddr;
pub mod design;
pub mod diagnostics;
pub mod emulator;
pub mod error;
pub mod linalg;
pub mod network;
pub mod regression;
pub mod uncertain;

pub use belief::{adjust, AdjustedBelief, JointBelief, SecondOrderSpec};
pub use error::{Error, Result};
pub use uncertain::{CrossCov, InputId, KernelConfig, UncertainInput};
