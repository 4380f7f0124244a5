//! Conjunction-rule networks for tabular credit data.

pub mod audit;
pub mod cli;
pub mod binarizer;
pub mod config;
pub mod conjnet;
pub mod dataset;
pub mod error;
pub mod grafting;
pub mod eval;
pub mod numeric;
pub mod rules;

pub use error::{Error, Result};
