//! Quantum imaginary time evolution on a small circuit simulator, with
//! symmetry-reduced Pauli pools, circuit recompilation, measurement-error
//! mitigation and trace evaluation of finite-temperature observables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod mitigation;
pub mod pauli;
pub mod qite;
pub mod oracle;
pub mod recompile;
pub mod statesim;
pub mod symmetry;
pub mod thermal;

pub use error::{Error, Result};
