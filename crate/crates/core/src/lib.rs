#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod mechanisms;
pub mod quadrature;
pub mod reductions;
pub mod scenarios;
pub mod verification;

pub use distributions::{
    expected_excess, max_of, Component, Distribution, DistributionLiteral, Shape,
};
pub use error::{Error, Result};
