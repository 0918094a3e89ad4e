//! Neural constituency parsing with locally normalized span and split-point
//! models, CKY decoding, and a lexicalized tree-LSTM label generator.

pub mod chart;
pub mod encoder;
pub mod error;
pub mod labeler;
pub mod metrics;
pub mod model;
pub mod model_file;
pub mod rule_model;
pub mod span_model;
pub mod tensor;
pub mod trainer;
pub mod treebank;

pub use error::{Error, Result};

/// A summed loss and the number of summands that went into it.
#[derive(Debug, Clone, Copy)]
pub struct Loss {
    pub value: tensor::Expr,
    pub terms: usize,
}
