//! Label generation over an unlabeled binary tree.
//!
//! A lexicalized binary tree-LSTM encodes the tree bottom-up. Each node
//! carries a lexical vector `tx`: leaves take `[f_{i+1}; r_i; x_input[i]]`,
//! parents take a gated convex combination of their children's vectors. The
//! cell has separate left and right forget gates and cell-state terms in the
//! gates. A small LSTM decoder then emits each node's label chain bottom-up,
//! terminated by the stop symbol.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedSentence, Lstm};
use crate::error::{Error, Result};
use crate::span_model::{sum_terms, Mlp};
use crate::tensor::{Expr, Graph, Init, ParamId, ParamStore, Real};
use crate::treebank::{is_intermediate, BinaryTree, Vocab, DEFAULT_CHAIN_CAP};
use crate::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelerDims {
    pub tree_hidden: usize,
    pub label_dim: usize,
    pub label_hidden: usize,
    pub out_hidden: usize,
    pub max_chain: usize,
}

impl Default for LabelerDims {
    fn default() -> Self {
        LabelerDims {
            tree_hidden: 200,
            label_dim: 32,
            label_hidden: 200,
            out_hidden: 128,
            max_chain: DEFAULT_CHAIN_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Labeler {
    pub dims: LabelerDims,
    pub lex_left: ParamId,
    pub lex_right: ParamId,
    pub lex_left_h: ParamId,
    pub lex_right_h: ParamId,
    pub lex_bias: ParamId,
    /// Input and both forget gates over `[tx; h_l; c_l; h_r; c_r]`.
    pub gates_w: ParamId,
    pub gates_b: ParamId,
    /// Candidate over `[tx; h_l; h_r]`.
    pub cand_w: ParamId,
    pub cand_b: ParamId,
    /// Output gate over `[tx; h_l; h_r; c_p]`.
    pub out_w: ParamId,
    pub out_b: ParamId,
    /// One row per label plus a final start row.
    pub label_emb: ParamId,
    pub decoder: Lstm,
    pub combine: Mlp,
    num_labels: usize,
}

/// Tree-LSTM state of one node.
#[derive(Debug, Clone, Copy)]
pub struct NodeState {
    pub span: (usize, usize),
    pub tx: Expr,
    pub h: Expr,
    pub c: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedChain {
    /// Label ids, bottom-up, without the stop symbol.
    pub labels: Vec<usize>,
    /// The cap was reached without the decoder choosing to stop.
    pub capped: bool,
}

/// Counts of parse-time repairs applied while labeling a tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelRepairs {
    pub capped: usize,
    pub empty_internal: usize,
    pub empty_root: bool,
    pub truncated: usize,
}

impl Labeler {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        dims: LabelerDims,
        tx_dim: usize,
        vocab: &Vocab,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = dims.tree_hidden;
        let num_labels = vocab.num_labels();
        let mut add = |name: &str, shape: &[usize], init: Init| store.add(name, shape, init, rng);
        let lex_left = add("label.lex_left", &[tx_dim, tx_dim], Init::Glorot)?;
        let lex_right = add("label.lex_right", &[tx_dim, tx_dim], Init::Glorot)?;
        let lex_left_h = add("label.lex_left_h", &[tx_dim, h], Init::Glorot)?;
        let lex_right_h = add("label.lex_right_h", &[tx_dim, h], Init::Glorot)?;
        let lex_bias = add("label.lex_bias", &[tx_dim], Init::Zeros)?;
        let gates_w = add("label.tree.gates_w", &[3 * h, tx_dim + 4 * h], Init::Glorot)?;
        let gates_b = add("label.tree.gates_b", &[3 * h], Init::Zeros)?;
        let cand_w = add("label.tree.cand_w", &[h, tx_dim + 2 * h], Init::Glorot)?;
        let cand_b = add("label.tree.cand_b", &[h], Init::Zeros)?;
        let out_w = add("label.tree.out_w", &[h, tx_dim + 3 * h], Init::Glorot)?;
        let out_b = add("label.tree.out_b", &[h], Init::Zeros)?;
        let label_emb = add("label.emb", &[num_labels + 1, dims.label_dim], Init::Glorot)?;
        let decoder = Lstm::register(store, "label.dec", dims.label_dim, dims.label_hidden, rng)?;
        let combine = Mlp::register(
            store,
            "label.out",
            h + dims.label_dim + dims.label_hidden,
            dims.out_hidden,
            num_labels,
            rng,
        )?;
        Ok(Labeler {
            dims,
            lex_left,
            lex_right,
            lex_left_h,
            lex_right_h,
            lex_bias,
            gates_w,
            gates_b,
            cand_w,
            cand_b,
            out_w,
            out_b,
            label_emb,
            decoder,
            combine,
            num_labels,
        })
    }

    /// Width of leaf lexical vectors for an encoder with `hidden` units per
    /// direction and `input_dim`-wide token inputs.
    pub fn tx_dim(hidden: usize, input_dim: usize) -> usize {
        2 * hidden + input_dim
    }

    fn start_row(&self) -> usize {
        self.num_labels
    }

    /// `i ⊙ tx_l + (1 − i) ⊙ tx_r` with `i = σ(W_l tx_l + W_r tx_r + W_lh h_l + W_rh h_r + b)`.
    pub fn lexical_gate<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        tx_l: Expr,
        tx_r: Expr,
        h_l: Expr,
        h_r: Expr,
    ) -> Result<Expr> {
        let a = g.affine(self.lex_left, tx_l, self.lex_bias)?;
        let b = g.matvec(self.lex_right, tx_r)?;
        let c = g.matvec(self.lex_left_h, h_l)?;
        let d = g.matvec(self.lex_right_h, h_r)?;
        let pre = g.sum(&[a, b, c, d])?;
        let gate = g.sigmoid(pre);
        let keep_left = g.mul(gate, tx_l)?;
        let rest = g.one_minus(gate);
        let keep_right = g.mul(rest, tx_r)?;
        Ok(g.add(keep_left, keep_right)?)
    }

    /// Tree-LSTM cell; leaves pass zero child states.
    fn cell<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        tx: Expr,
        (h_l, c_l): (Expr, Expr),
        (h_r, c_r): (Expr, Expr),
        dropout: f64,
    ) -> Result<(Expr, Expr)> {
        let h = self.dims.tree_hidden;
        let x = g.dropout(tx, dropout)?;
        let inp = g.concat(&[x, h_l, c_l, h_r, c_r]);
        let gates = g.affine(self.gates_w, inp, self.gates_b)?;
        let gates = g.sigmoid(gates);
        let i = g.slice(gates, 0, h)?;
        let f_l = g.slice(gates, h, h)?;
        let f_r = g.slice(gates, 2 * h, h)?;
        let cand_in = g.concat(&[x, h_l, h_r]);
        let cand = g.affine(self.cand_w, cand_in, self.cand_b)?;
        let cand = g.tanh(cand);
        let a = g.mul(f_l, c_l)?;
        let b = g.mul(f_r, c_r)?;
        let new = g.mul(i, cand)?;
        let c = g.sum(&[a, b, new])?;
        let out_in = g.concat(&[x, h_l, h_r, c]);
        let o = g.affine(self.out_w, out_in, self.out_b)?;
        let o = g.sigmoid(o);
        let tc = g.tanh(c);
        let hp = g.mul(o, tc)?;
        Ok((hp, c))
    }

    /// States for every node of `t`, in post-order (children before parents).
    pub fn tree_encode<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        t: &BinaryTree,
        enc: &EncodedSentence,
        dropout: f64,
    ) -> Result<Vec<NodeState>> {
        let mut out = Vec::with_capacity(2 * t.len() - 1);
        self.encode_node(g, t, enc, dropout, &mut out)?;
        Ok(out)
    }

    fn encode_node<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        t: &BinaryTree,
        enc: &EncodedSentence,
        dropout: f64,
        out: &mut Vec<NodeState>,
    ) -> Result<NodeState> {
        let span = t.span();
        let state = match t.children.as_deref() {
            None => {
                let i = t.start;
                if i >= enc.len() {
                    return Err(Error::SpanOutOfRange {
                        i,
                        j: i,
                        n: enc.len(),
                    });
                }
                let tx = g.concat(&[enc.fwd[i + 1], enc.bwd[i], enc.inputs[i]]);
                let zero = g.zeros(self.dims.tree_hidden);
                let (h, c) = self.cell(g, tx, (zero, zero), (zero, zero), dropout)?;
                NodeState { span, tx, h, c }
            }
            Some((l, r)) => {
                let left = self.encode_node(g, l, enc, dropout, out)?;
                let right = self.encode_node(g, r, enc, dropout, out)?;
                let tx = self.lexical_gate(g, left.tx, right.tx, left.h, right.h)?;
                let (h, c) = self.cell(g, tx, (left.h, left.c), (right.h, right.c), dropout)?;
                NodeState { span, tx, h, c }
            }
        };
        out.push(state);
        Ok(state)
    }

    /// One decoder step: reads the previous label, returns logits over labels.
    fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        h: Expr,
        prev: usize,
        state: Option<(Expr, Expr)>,
        dropout: f64,
    ) -> Result<(Expr, (Expr, Expr))> {
        let e = g.lookup(self.label_emb, prev)?;
        let x = g.dropout(e, dropout)?;
        let state = self.decoder.step(g, x, state)?;
        let feats = g.concat(&[h, e, state.0]);
        Ok((self.combine.logits(g, feats)?, state))
    }

    /// Greedy chain decoding, at most `max_chain` labels.
    pub fn decode_chain<T: Real>(&self, g: &mut Graph<'_, T>, h: Expr) -> Result<DecodedChain> {
        let mut labels = Vec::new();
        let mut prev = self.start_row();
        let mut state = None;
        loop {
            let (logits, s) = self.step(g, h, prev, state, 0.0)?;
            state = Some(s);
            let best = argmax(g.value(logits));
            if best == 0 {
                return Ok(DecodedChain {
                    labels,
                    capped: false,
                });
            }
            if labels.len() == self.dims.max_chain {
                return Ok(DecodedChain {
                    labels,
                    capped: true,
                });
            }
            labels.push(best);
            prev = best;
        }
    }

    /// Teacher-forced negative log-likelihood terms for one chain, stop
    /// symbol included.
    pub fn chain_terms<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        h: Expr,
        chain: &[usize],
        dropout: f64,
    ) -> Result<Vec<Expr>> {
        let mut terms = Vec::with_capacity(chain.len() + 1);
        let mut prev = self.start_row();
        let mut state = None;
        for &target in chain.iter().chain(std::iter::once(&0)) {
            let (logits, s) = self.step(g, h, prev, state, dropout)?;
            state = Some(s);
            terms.push(g.pick_neg_log_softmax(logits, target)?);
            prev = target;
        }
        Ok(terms)
    }

    /// Label loss over every node of the gold tree.
    pub fn label_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        gold: &BinaryTree,
        enc: &EncodedSentence,
        vocab: &Vocab,
        dropout: f64,
    ) -> Result<Loss> {
        let states = self.tree_encode(g, gold, enc, dropout)?;
        let mut terms = Vec::new();
        for (node, state) in gold.nodes_postorder().into_iter().zip(&states) {
            let chain = node
                .chain
                .iter()
                .map(|l| {
                    vocab
                        .label_id(l)
                        .ok_or_else(|| Error::LabelNotInVocab(l.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            terms.extend(self.chain_terms(g, state.h, &chain, dropout)?);
        }
        Ok(sum_terms(g, terms)?.expect("every tree has at least one node"))
    }

    /// Labels an unlabeled tree in place, repairing chains so that the result
    /// always debinarizes.
    pub fn label_tree<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        t: &BinaryTree,
        enc: &EncodedSentence,
        vocab: &Vocab,
    ) -> Result<(BinaryTree, LabelRepairs)> {
        let states = self.tree_encode(g, t, enc, 0.0)?;
        let mut chains = Vec::with_capacity(states.len());
        for s in &states {
            chains.push(self.decode_chain(g, s.h)?);
        }
        let mut repairs = LabelRepairs::default();
        let mut labeled = t.clone();
        let root = t.span();
        let mut decoded = chains.into_iter();
        labeled.map_chains(&mut |span, chain| {
            let d = decoded.next().unwrap();
            repairs.capped += usize::from(d.capped);
            let mut labels: Vec<String> = d
                .labels
                .iter()
                .map(|&id| vocab.label(id).to_string())
                .collect();
            if let Some(pos) = labels.iter().position(|l| is_intermediate(l)) {
                let keep = if pos == 0 { 1 } else { pos };
                if keep < labels.len() {
                    repairs.truncated += 1;
                    labels.truncate(keep);
                }
            }
            if labels.is_empty() && span == root {
                repairs.empty_root = true;
                labels.push(vocab.most_frequent_root().unwrap_or("X").to_string());
            } else if labels.is_empty() && span.0 != span.1 {
                repairs.empty_internal += 1;
            }
            *chain = labels;
        });
        Ok((labeled, repairs))
    }
}

/// Index of the largest value; the first one wins ties.
fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
