use thiserror::Error;

use crate::tensor::TensorError;
use crate::treebank::TreebankError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error("unknown POS tag `{0}`")]
    UnknownPos(String),
    #[error("empty sentence")]
    EmptySentence,
    #[error("span [{i},{j}] out of range for a sentence of length {n}")]
    SpanOutOfRange { i: usize, j: usize, n: usize },
    #[error("label `{0}` is not in the vocabulary")]
    LabelNotInVocab(String),
    #[error("non-finite score for span [{0},{1}]")]
    NonFiniteScore(usize, usize),
    #[error("refusing to enumerate trees over {0} leaves")]
    TooLarge(usize),
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
