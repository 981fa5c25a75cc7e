#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod analysis;
pub mod cli;
pub mod generator;
pub mod modulus;
pub mod oracle;
pub mod paths;
pub mod quad;
pub mod solver;

pub use error::{LabError, Result};
