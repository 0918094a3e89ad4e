//! Split-point scorers.
//!
//! A span `[i,j]` is scored for every split `k` in `i..j`. Parent, left-child
//! and right-child roles each get their own ELU projection of `sr`; a linear
//! or biaffine scorer combines them and a softmax over `k` gives the split
//! distribution.

use std::collections::HashMap;

use rand::Rng;

use crate::encoder::EncodedSentence;
use crate::error::Result;
use crate::span_model::{all_spans, sum_terms};
use crate::tensor::{log_softmax, softmax, Expr, Graph, Init, ParamId, ParamStore, Real};
use crate::treebank::BinaryTree;
use crate::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Parent,
    Left,
    Right,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Parent => "parent",
            Role::Left => "left",
            Role::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    Linear,
    Biaffine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scorer {
    /// `w_left · r_L + w_right · r_R + bias`, shared across split positions.
    Linear {
        w_left: ParamId,
        w_right: ParamId,
        bias: ParamId,
    },
    /// `(r_P ⊕ 1)ᵀ W_left (r_L ⊕ 1) + (r_P ⊕ 1)ᵀ W_right (r_R ⊕ 1)`.
    Biaffine { w_left: ParamId, w_right: ParamId },
}

#[derive(Debug, Clone)]
pub struct RuleModel {
    /// `(W, b)` for parent, left and right roles.
    pub projections: [(ParamId, ParamId); 3],
    pub scorer: Scorer,
    pub proj_dim: usize,
}

/// Log split probabilities `log P(k | [i,j])` for every span of length ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScores {
    n: usize,
    table: Vec<Vec<f64>>,
}

impl SplitScores {
    pub fn new(n: usize) -> Self {
        SplitScores {
            n,
            table: vec![Vec::new(); n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `log P(k | [i,j])` for `i ≤ k < j`.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.table[i * self.n + j][k - i]
    }

    pub fn span(&self, i: usize, j: usize) -> &[f64] {
        &self.table[i * self.n + j]
    }

    pub fn set_span(&mut self, i: usize, j: usize, log_probs: Vec<f64>) {
        assert_eq!(log_probs.len(), j - i);
        self.table[i * self.n + j] = log_probs;
    }
}

/// Softmax over split scores.
pub fn split_distribution(scores: &[f64]) -> Vec<f64> {
    softmax(scores)
}

/// Per-sentence cache of role projections.
pub struct RuleContext<'e> {
    enc: &'e EncodedSentence,
    cache: HashMap<(usize, usize, Role), Expr>,
    one: Option<Expr>,
}

impl<'e> RuleContext<'e> {
    pub fn new(enc: &'e EncodedSentence) -> Self {
        RuleContext {
            enc,
            cache: HashMap::new(),
            one: None,
        }
    }
}

impl RuleModel {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        kind: ScorerKind,
        input: usize,
        proj_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut projections = Vec::with_capacity(3);
        for role in [Role::Parent, Role::Left, Role::Right] {
            let name = role.name();
            projections.push((
                store.add(
                    &format!("rule.{name}.w"),
                    &[proj_dim, input],
                    Init::Glorot,
                    rng,
                )?,
                store.add(&format!("rule.{name}.b"), &[proj_dim], Init::Zeros, rng)?,
            ));
        }
        let projections = [projections[0], projections[1], projections[2]];
        let scorer = match kind {
            ScorerKind::Linear => Scorer::Linear {
                w_left: store.add("rule.linear.w_left", &[proj_dim], Init::Normal(0.1), rng)?,
                w_right: store.add("rule.linear.w_right", &[proj_dim], Init::Normal(0.1), rng)?,
                bias: store.add("rule.linear.bias", &[1], Init::Zeros, rng)?,
            },
            ScorerKind::Biaffine => Scorer::Biaffine {
                w_left: store.add(
                    "rule.biaffine.w_left",
                    &[proj_dim + 1, proj_dim + 1],
                    Init::Glorot,
                    rng,
                )?,
                w_right: store.add(
                    "rule.biaffine.w_right",
                    &[proj_dim + 1, proj_dim + 1],
                    Init::Glorot,
                    rng,
                )?,
            },
        };
        Ok(RuleModel {
            projections,
            scorer,
            proj_dim,
        })
    }

    pub fn kind(&self) -> ScorerKind {
        match self.scorer {
            Scorer::Linear { .. } => ScorerKind::Linear,
            Scorer::Biaffine { .. } => ScorerKind::Biaffine,
        }
    }

    /// `ELU(W_role x + b_role)`.
    pub fn project<T: Real>(&self, g: &mut Graph<'_, T>, sr: Expr, role: Role) -> Result<Expr> {
        let (w, b) = self.projections[role as usize];
        let a = g.affine(w, sr, b)?;
        Ok(g.elu(a))
    }

    fn projected<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut RuleContext<'_>,
        i: usize,
        j: usize,
        role: Role,
    ) -> Result<Expr> {
        if let Some(&e) = ctx.cache.get(&(i, j, role)) {
            return Ok(e);
        }
        let sr = ctx.enc.span_sr(g, i, j)?;
        let r = self.project(g, sr, role)?;
        ctx.cache.insert((i, j, role), r);
        Ok(r)
    }

    pub fn score_linear<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        left: Expr,
        right: Expr,
    ) -> Result<Expr> {
        let Scorer::Linear {
            w_left,
            w_right,
            bias,
        } = self.scorer
        else {
            panic!("score_linear on a biaffine model")
        };
        let wl = g.param(w_left);
        let wr = g.param(w_right);
        let b = g.param(bias);
        let l = g.dot(wl, left)?;
        let r = g.dot(wr, right)?;
        Ok(g.sum(&[l, r, b])?)
    }

    fn augment<T: Real>(g: &mut Graph<'_, T>, x: Expr) -> Expr {
        let one = g.input(vec![T::one()]);
        g.concat(&[x, one])
    }

    pub fn score_biaffine<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        parent: Expr,
        left: Expr,
        right: Expr,
    ) -> Result<Expr> {
        let Scorer::Biaffine { w_left, w_right } = self.scorer else {
            panic!("score_biaffine on a linear model")
        };
        let p = Self::augment(g, parent);
        let l = Self::augment(g, left);
        let r = Self::augment(g, right);
        let pl = g.matvec_t(w_left, p)?;
        let pr = g.matvec_t(w_right, p)?;
        let lps = g.dot(pl, l)?;
        let rps = g.dot(pr, r)?;
        Ok(g.add(lps, rps)?)
    }

    /// Scores `ps_i … ps_{j−1}` as one vector.
    pub fn split_scores<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: &mut RuleContext<'_>,
        i: usize,
        j: usize,
    ) -> Result<Expr> {
        let mut scores = Vec::with_capacity(j - i);
        match self.scorer {
            Scorer::Linear { .. } => {
                for k in i..j {
                    let l = self.projected(g, ctx, i, k, Role::Left)?;
                    let r = self.projected(g, ctx, k + 1, j, Role::Right)?;
                    scores.push(self.score_linear(g, l, r)?);
                }
            }
            Scorer::Biaffine { w_left, w_right } => {
                // The parent side of both bilinear forms is shared across k.
                let p = self.projected(g, ctx, i, j, Role::Parent)?;
                let p = Self::augment(g, p);
                let pl = g.matvec_t(w_left, p)?;
                let pr = g.matvec_t(w_right, p)?;
                let one = *ctx.one.get_or_insert_with(|| g.input(vec![T::one()]));
                for k in i..j {
                    let l = self.projected(g, ctx, i, k, Role::Left)?;
                    let l = g.concat(&[l, one]);
                    let r = self.projected(g, ctx, k + 1, j, Role::Right)?;
                    let r = g.concat(&[r, one]);
                    let lps = g.dot(pl, l)?;
                    let rps = g.dot(pr, r)?;
                    scores.push(g.add(lps, rps)?);
                }
            }
        }
        Ok(g.concat(&scores))
    }

    /// `−Σ log P(gold split | span)` over the internal nodes of `gold`.
    pub fn rule_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        gold: &BinaryTree,
    ) -> Result<Option<Loss>> {
        let mut ctx = RuleContext::new(enc);
        let mut terms = Vec::new();
        for node in gold.internal_nodes() {
            let (i, j) = node.span();
            let k = node.split().unwrap();
            let scores = self.split_scores(g, &mut ctx, i, j)?;
            terms.push(g.pick_neg_log_softmax(scores, k - i)?);
        }
        sum_terms(g, terms)
    }

    pub fn scores<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
    ) -> Result<SplitScores> {
        let mut ctx = RuleContext::new(enc);
        let mut out = SplitScores::new(enc.len());
        for (i, j) in all_spans(enc.len()) {
            let s = self.split_scores(g, &mut ctx, i, j)?;
            out.set_span(
                i,
                j,
                log_softmax(g.value(s))
                    .iter()
                    .map(|x| x.to_f64().unwrap())
                    .collect(),
            );
        }
        Ok(out)
    }
}
