//! Treebank ingestion: Penn bracketing, unary collapsing, head binarization,
//! vocabularies and unknown-word handling.

mod binarize;
mod heads;
mod tree;
mod unk;
mod vocab;

use thiserror::Error;

pub use binarize::{
    binarize, collapse_unary, debinarize, intermediate_label, is_intermediate, BinaryTree,
    CollapsedTree, INTERMEDIATE_MARK,
};
pub use heads::{Direction, HeadRule, HeadTable};
pub use tree::{parse_bracketed, parse_bracketed_with, strip_functional, ReadOptions, Token, Tree};
pub use unk::{replacement_probability, stochastic_unk, unk_class, Language, UNK};
pub use vocab::{Interner, Vocab, BOS, EOS, STOP_LABEL};

/// Default limit on collapsed unary chain length.
pub const DEFAULT_CHAIN_CAP: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreebankError {
    #[error("unbalanced brackets at byte {0}")]
    UnbalancedBrackets(usize),
    #[error("empty node at byte {0}")]
    EmptyNode(usize),
    #[error("unexpected token at byte {0}")]
    UnexpectedToken(usize),
    #[error("unary chain of length {length} over span {span:?} exceeds the cap")]
    ChainTooLong { span: (usize, usize), length: usize },
    #[error("no head rule for category `{0}`")]
    UnknownCategory(String),
    #[error("malformed head rule on line {0}: `{1}`")]
    BadHeadRule(usize, String),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("malformed embedding on line {0}")]
    BadEmbedding(usize),
}

/// A gold example prepared for training: tokens, the original tree, and its
/// collapsed binarized form.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldTree {
    pub tokens: Vec<Token>,
    pub tree: Tree,
    pub collapsed: CollapsedTree,
    pub binary: BinaryTree,
}

/// Outcome of preparing a corpus for training.
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub examples: Vec<GoldTree>,
    /// Trees skipped because a unary chain exceeded the cap.
    pub skipped_chain_too_long: usize,
}

/// Collapses and binarizes every tree; trees with over-long unary chains are
/// skipped and counted rather than truncated.
pub fn prepare(trees: &[Tree], heads: &HeadTable, cap: usize) -> Result<Prepared, TreebankError> {
    let mut out = Prepared::default();
    for t in trees {
        match collapse_unary(t, cap) {
            Ok(c) => {
                let binary = binarize(&c, heads)?;
                out.examples.push(GoldTree {
                    tokens: t.tokens(),
                    tree: t.clone(),
                    collapsed: c,
                    binary,
                });
            }
            Err(TreebankError::ChainTooLong { span, length }) => {
                log::warn!("skipping tree with unary chain of length {length} over {span:?}");
                out.skipped_chain_too_long += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
