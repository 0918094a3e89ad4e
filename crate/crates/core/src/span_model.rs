//! Local span classifiers.
//!
//! Both heads read the span vector `v[i,j]` through one tanh hidden layer.
//! The binary head decides constituent vs. not; the multi-class head predicts
//! a label or the stop symbol, which stands for "not a constituent".

use std::collections::{HashMap, HashSet};

use rand::Rng;

use crate::encoder::EncodedSentence;
use crate::error::{Error, Result};
use crate::tensor::{log_softmax, Expr, Graph, Init, ParamId, ParamStore, Real};
use crate::treebank::{BinaryTree, Vocab};
use crate::Loss;

/// `log P(span is a constituent)` for every span of length ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScores {
    n: usize,
    table: Vec<f64>,
}

impl SpanScores {
    pub fn new(n: usize) -> Self {
        SpanScores {
            n,
            table: vec![0.0; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, log_p: f64) {
        self.table[i * self.n + j] = log_p;
    }

    /// Adds `c` to every populated entry.
    pub fn shift(&mut self, c: f64) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                self.table[i * self.n + j] += c;
            }
        }
    }
}

/// Feed-forward head `W_out tanh(W_h x + b_h) + b_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl Mlp {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            w_hidden: store.add(
                &format!("{prefix}.w_hidden"),
                &[hidden, input],
                Init::Glorot,
                rng,
            )?,
            b_hidden: store.add(&format!("{prefix}.b_hidden"), &[hidden], Init::Zeros, rng)?,
            w_out: store.add(
                &format!("{prefix}.w_out"),
                &[output, hidden],
                Init::Glorot,
                rng,
            )?,
            b_out: store.add(&format!("{prefix}.b_out"), &[output], Init::Zeros, rng)?,
        })
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, x: Expr) -> Result<Expr> {
        let h = g.affine(self.w_hidden, x, self.b_hidden)?;
        let h = g.tanh(h);
        Ok(g.affine(self.w_out, h, self.b_out)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    /// Two classes; index 1 is "constituent".
    Binary,
    /// Label vocabulary with the stop symbol at index 0 meaning "not a constituent".
    Multi,
}

#[derive(Debug, Clone)]
pub struct SpanModel {
    pub kind: SpanKind,
    pub head: Mlp,
}

/// `(P(0), P(1))` from a multi-class distribution whose index 0 is the stop symbol.
pub fn multi_to_binary<T: Real>(dist: &[T]) -> (T, T) {
    let p0 = dist[0];
    (p0, dist[1..].iter().copied().sum())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl SpanModel {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        kind: SpanKind,
        input: usize,
        hidden: usize,
        vocab: &Vocab,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (prefix, classes) = match kind {
            SpanKind::Binary => ("span.binary", 2),
            SpanKind::Multi => ("span.multi", vocab.num_labels()),
        };
        Ok(SpanModel {
            kind,
            head: Mlp::register(store, prefix, input, hidden, classes, rng)?,
        })
    }

    pub fn logits<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        i: usize,
        j: usize,
    ) -> Result<Expr> {
        let v = enc.span_v(g, i, j)?;
        self.head.logits(g, v)
    }

    /// Binary loss: `−log P(1)` for gold spans and `−log P(0)` for the rest,
    /// over all spans of length ≥ 2.
    pub fn binary_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        gold: &BinaryTree,
    ) -> Result<Option<Loss>> {
        let spans: HashSet<(usize, usize)> = gold.internal_spans().into_iter().collect();
        let mut terms = Vec::new();
        for (i, j) in all_spans(enc.len()) {
            let logits = self.logits(g, enc, i, j)?;
            let y = usize::from(spans.contains(&(i, j)));
            terms.push(g.pick_neg_log_softmax(logits, y)?);
        }
        sum_terms(g, terms)
    }

    /// Multi-class loss: every label of a gold span's chain is a target;
    /// non-constituent spans target the stop symbol.
    pub fn multi_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        gold: &BinaryTree,
        vocab: &Vocab,
    ) -> Result<Option<Loss>> {
        let chains: HashMap<(usize, usize), &[String]> = gold
            .internal_nodes()
            .into_iter()
            .map(|n| (n.span(), n.chain.as_slice()))
            .collect();
        let mut terms = Vec::new();
        for (i, j) in all_spans(enc.len()) {
            let logits = self.logits(g, enc, i, j)?;
            match chains.get(&(i, j)) {
                Some(chain) => {
                    for label in chain.iter() {
                        let c = vocab
                            .label_id(label)
                            .ok_or_else(|| Error::LabelNotInVocab(label.clone()))?;
                        terms.push(g.pick_neg_log_softmax(logits, c)?);
                    }
                }
                None => terms.push(g.pick_neg_log_softmax(logits, vocab.stop_label())?),
            }
        }
        sum_terms(g, terms)
    }

    pub fn loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        gold: &BinaryTree,
        vocab: &Vocab,
    ) -> Result<Option<Loss>> {
        match self.kind {
            SpanKind::Binary => self.binary_loss(g, enc, gold),
            SpanKind::Multi => self.multi_loss(g, enc, gold, vocab),
        }
    }

    /// `log P(1)` for one span, reading values only.
    pub fn log_p1<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        i: usize,
        j: usize,
    ) -> Result<f64> {
        let logits = self.logits(g, enc, i, j)?;
        let ls: Vec<f64> = log_softmax(g.value(logits))
            .iter()
            .map(|x| x.to_f64().unwrap())
            .collect();
        Ok(match self.kind {
            SpanKind::Binary => ls[1],
            SpanKind::Multi => log_sum_exp(&ls[1..]),
        })
    }

    pub fn scores<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
    ) -> Result<SpanScores> {
        let mut s = SpanScores::new(enc.len());
        for (i, j) in all_spans(enc.len()) {
            s.set(i, j, self.log_p1(g, enc, i, j)?);
        }
        Ok(s)
    }
}

/// Every span `[i,j]` with `i < j < n`, shortest first.
pub fn all_spans(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (2..=n).flat_map(move |len| (0..=n - len).map(move |i| (i, i + len - 1)))
}

pub(crate) fn sum_terms<T: Real>(g: &mut Graph<'_, T>, terms: Vec<Expr>) -> Result<Option<Loss>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let value = g.sum(&terms)?;
    Ok(Some(Loss {
        value,
        terms: terms.len(),
    }))
}
