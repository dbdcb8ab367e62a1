//! Depth–learning-rate scaling laboratory.
//!
//! Small fully connected, convolutional and residual networks with exact
//! hand-written gradients, the initialization policies that keep them at the
//! edge of stability, Monte-Carlo probes of one-step update energies, the
//! aggregator axioms behind the arithmetic-mean energy, and the sweep / fit /
//! transfer tooling for the η*(L) ∝ L^{-3/2} rule.

pub mod aggregators;
pub mod arch;
pub mod data;
pub mod error;
pub mod harness;
pub mod init;
pub mod netcore;
pub mod probes;
pub mod rng;
pub mod scaling;
pub mod stats;
pub mod tensor;

pub use arch::{Activation, ArchSpec, Family, Grid, Kernel, Padding, Readout};
pub use error::{Error, Result};
pub use netcore::{Loss, Model};
pub use tensor::Tensor;
