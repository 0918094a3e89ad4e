//! CKY decoding over span or split scores, plus an exhaustive oracle.
//!
//! Both decoders evaluate a tree with the same recursion,
//! `score([i,j]) = node + (score(left) + score(right))` for spans and
//! `score([i,j]) = split + (score(left) + score(right))` for splits, so a tree's
//! score is bit-identical whichever path computes it. Ties keep the smallest
//! split point.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::rule_model::SplitScores;
use crate::span_model::SpanScores;
use crate::treebank::BinaryTree;

/// Stand-in for `log 0`.
pub const LOG_ZERO: f64 = -1e30;

/// Largest sentence the oracle will enumerate.
pub const MAX_ENUMERATE: usize = 12;

#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    /// Zero-order: each internal span contributes `log P(constituent)`.
    Span(&'a SpanScores),
    /// First-order: each internal node contributes `log P(split | span)`.
    Split(&'a SplitScores),
}

impl ScoreSource<'_> {
    pub fn len(&self) -> usize {
        match self {
            ScoreSource::Span(s) => s.len(),
            ScoreSource::Split(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn node(&self, i: usize, j: usize) -> Result<f64> {
        match self {
            ScoreSource::Span(s) => finite(s.get(i, j), i, j),
            ScoreSource::Split(_) => Ok(0.0),
        }
    }

    fn edge(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        match self {
            ScoreSource::Span(_) => Ok(0.0),
            ScoreSource::Split(s) => finite(s.get(i, j, k), i, j),
        }
    }
}

fn finite(x: f64, i: usize, j: usize) -> Result<f64> {
    if x == f64::NEG_INFINITY {
        Ok(LOG_ZERO)
    } else if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteScore(i, j))
    }
}

/// Best scores and backpointers, indexed `[i * n + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    n: usize,
    best: Vec<f64>,
    split: Vec<usize>,
}

impl Chart {
    pub fn fill(source: ScoreSource<'_>) -> Result<Chart> {
        let n = source.len();
        if n == 0 {
            return Err(Error::EmptySentence);
        }
        let mut chart = Chart {
            n,
            best: vec![0.0; n * n],
            split: vec![0; n * n],
        };
        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len - 1;
                let node = source.node(i, j)?;
                let mut best = f64::NEG_INFINITY;
                let mut arg = i;
                for k in i..j {
                    let children = chart.best(i, k) + chart.best(k + 1, j);
                    let cand = match source {
                        ScoreSource::Span(_) => children,
                        ScoreSource::Split(_) => source.edge(i, j, k)? + children,
                    };
                    if cand > best {
                        best = cand;
                        arg = k;
                    }
                }
                chart.best[i * n + j] = node + best;
                chart.split[i * n + j] = arg;
            }
        }
        Ok(chart)
    }

    pub fn best(&self, i: usize, j: usize) -> f64 {
        self.best[i * self.n + j]
    }

    pub fn split(&self, i: usize, j: usize) -> usize {
        self.split[i * self.n + j]
    }

    pub fn tree(&self) -> BinaryTree {
        self.subtree(0, self.n - 1)
    }

    fn subtree(&self, i: usize, j: usize) -> BinaryTree {
        if i == j {
            return BinaryTree::leaf(i);
        }
        let k = self.split(i, j);
        BinaryTree::join(self.subtree(i, k), self.subtree(k + 1, j))
    }

    /// Text dump of the score and backpointer tables, one span per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for len in 2..=self.n {
            for i in 0..=self.n - len {
                let j = i + len - 1;
                let _ = writeln!(
                    out,
                    "[{i},{j}]\tbest={:.6}\tsplit={}",
                    self.best(i, j),
                    self.split(i, j)
                );
            }
        }
        out
    }
}

/// Highest-scoring unlabeled binary tree.
pub fn cky(source: ScoreSource<'_>) -> Result<BinaryTree> {
    match source.len() {
        0 => Err(Error::EmptySentence),
        1 => Ok(BinaryTree::leaf(0)),
        _ => Ok(Chart::fill(source)?.tree()),
    }
}

/// Every full binary tree over `n` leaves, ordered by their pre-order
/// sequence of split points.
pub fn enumerate_trees(n: usize) -> Result<Vec<BinaryTree>> {
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    if n > MAX_ENUMERATE {
        return Err(Error::TooLarge(n));
    }
    fn go(i: usize, j: usize) -> Vec<BinaryTree> {
        if i == j {
            return vec![BinaryTree::leaf(i)];
        }
        let mut out = Vec::new();
        for k in i..j {
            let rights = go(k + 1, j);
            for l in go(i, k) {
                for r in &rights {
                    out.push(BinaryTree::join(l.clone(), r.clone()));
                }
            }
        }
        out
    }
    Ok(go(0, n - 1))
}

/// Sum of the tree's node or split scores.
pub fn tree_score(source: ScoreSource<'_>, t: &BinaryTree) -> Result<f64> {
    let Some((l, r)) = t.children.as_deref() else {
        return Ok(0.0);
    };
    let (i, j) = t.span();
    let children = tree_score(source, l)? + tree_score(source, r)?;
    Ok(match source {
        ScoreSource::Span(_) => source.node(i, j)? + children,
        ScoreSource::Split(_) => source.edge(i, j, l.end)? + children,
    })
}

/// Exhaustive argmax; the first maximum in enumeration order wins.
pub fn oracle_best(source: ScoreSource<'_>) -> Result<BinaryTree> {
    let mut best: Option<(f64, BinaryTree)> = None;
    for t in enumerate_trees(source.len())? {
        let s = tree_score(source, &t)?;
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, t));
        }
    }
    Ok(best.unwrap().1)
}
