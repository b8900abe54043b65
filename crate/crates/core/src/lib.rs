//! Phenotype prediction from weighted combinations of omic similarity
//! matrices, evaluated by repeated cross-validation.

pub mod error;
pub mod baseline;
pub mod evaluation;
pub mod grid;
pub mod io;
pub mod kriging;
pub mod model;
pub mod similarity;
pub mod simulate;

pub use error::{Error, Result};
