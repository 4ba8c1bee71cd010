//! Functional model of a binarized-neural-network accelerator (an XNOR/popcount engine with
//! 128 lanes) running on a hybrid SRAM + standard-cell-memory L2, with voltage-dependent bit
//! error injection, an on-chip style BER self-test, and a voltage-scaled power/energy model.

pub mod bintensor;
pub mod dataset;
pub mod error;
pub mod memsim;
pub mod modelfile;
pub mod powermodel;
pub mod rng;
pub mod runtime;
pub mod selftest;
pub mod toy;
pub mod uvgg;
pub mod xne;

pub use error::{Error, Result, Role};
