// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod features;
pub mod footprint;
pub mod geo_io;
pub mod raster;
pub mod regression;
pub mod survey;

pub use error::{Error, Result};
