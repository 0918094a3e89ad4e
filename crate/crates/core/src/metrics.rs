//! Bracketing evaluation: labeled precision/recall/F1 on n-ary trees and
//! unlabeled F1 on binary structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::treebank::{BinaryTree, Tree};

/// Labels dropped from both constituents and preterminals by default.
pub const DEFAULT_DELETED: [&str; 8] = ["TOP", "ROOT", "-NONE-", ",", ":", "``", "''", "."];

/// Which labels are ignored and which are treated as equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalParams {
    /// Constituents with these labels contribute no bracket; leaves with these
    /// POS tags are removed before spans are indexed.
    pub delete_labels: BTreeSet<String>,
    /// Label rewrites applied before comparison (`PRT` -> `ADVP`).
    pub equivalent: BTreeMap<String, String>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            delete_labels: DEFAULT_DELETED.iter().map(|s| s.to_string()).collect(),
            equivalent: [("PRT".to_string(), "ADVP".to_string())]
                .into_iter()
                .collect(),
        }
    }
}

impl EvalParams {
    /// Deletes nothing and rewrites nothing.
    pub fn strict() -> Self {
        EvalParams {
            delete_labels: BTreeSet::new(),
            equivalent: BTreeMap::new(),
        }
    }

    /// Reads an EVALB-style parameter file. `DELETE_LABEL x` and
    /// `EQ_LABEL a b` are honored; the scorer's other switches are accepted
    /// and ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = EvalParams::strict();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                ["DELETE_LABEL", label] => {
                    p.delete_labels.insert(label.to_string());
                }
                ["EQ_LABEL", a, b] => {
                    p.equivalent.insert(b.to_string(), a.to_string());
                }
                [key, ..]
                    if matches!(
                        *key,
                        "DEBUG"
                            | "MAX_ERROR"
                            | "CUTOFF_LEN"
                            | "LABELED"
                            | "DELETE_LABEL_FOR_LENGTH"
                            | "EQ_WORD"
                    ) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "eval params line {}: cannot read `{line}`",
                        no + 1
                    )))
                }
            }
        }
        Ok(p)
    }

    fn canonical<'a>(&'a self, label: &'a str) -> &'a str {
        self.equivalent.get(label).map_or(label, String::as_str)
    }
}

/// One labeled bracket over inclusive word indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bracket {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Multiset of brackets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BracketSet {
    counts: BTreeMap<Bracket, usize>,
    len: usize,
}

impl BracketSet {
    pub fn insert(&mut self, b: Bracket) {
        *self.counts.entry(b).or_default() += 1;
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Size of the multiset intersection.
    pub fn matched(&self, other: &BracketSet) -> usize {
        self.counts
            .iter()
            .map(|(b, &c)| c.min(other.counts.get(b).copied().unwrap_or(0)))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Bracket, usize)> {
        self.counts.iter().map(|(b, &c)| (b, c))
    }

    /// The same brackets with labels erased.
    pub fn unlabeled(&self) -> BracketSet {
        let mut out = BracketSet::default();
        for (b, c) in self.iter() {
            for _ in 0..c {
                out.insert(Bracket {
                    label: String::new(),
                    start: b.start,
                    end: b.end,
                });
            }
        }
        out
    }
}

impl FromIterator<Bracket> for BracketSet {
    fn from_iter<I: IntoIterator<Item = Bracket>>(iter: I) -> Self {
        let mut s = BracketSet::default();
        iter.into_iter().for_each(|b| s.insert(b));
        s
    }
}

/// Brackets of an n-ary tree. Every non-terminal level of a unary spine
/// counts; spans index only the leaves that survive deletion.
pub fn labeled_brackets(t: &Tree, params: &EvalParams) -> BracketSet {
    fn go(t: &Tree, params: &EvalParams, next: &mut usize, out: &mut BracketSet) {
        match t {
            Tree::Leaf { pos, .. } => {
                if !params.delete_labels.contains(pos) {
                    *next += 1;
                }
            }
            Tree::Node { label, children } => {
                let start = *next;
                children.iter().for_each(|c| go(c, params, next, out));
                if *next > start && !params.delete_labels.contains(label) {
                    out.insert(Bracket {
                        label: params.canonical(label).to_string(),
                        start,
                        end: *next - 1,
                    });
                }
            }
        }
    }
    let mut out = BracketSet::default();
    go(t, params, &mut 0, &mut out);
    out
}

/// Precision, recall and F1 as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the affected value reported as 0.
    pub undefined: bool,
}

impl Prf {
    pub fn from_counts(matched: usize, gold: usize, pred: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, pred);
        let recall = ratio(matched, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            undefined: gold == 0 || pred == 0,
        }
    }
}

pub fn prf(gold: &BracketSet, pred: &BracketSet) -> Prf {
    Prf::from_counts(gold.matched(pred), gold.len(), pred.len())
}

/// Unlabeled F1 for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnlabeledScore {
    pub matched: usize,
    pub gold: usize,
    pub pred: usize,
    pub f1: f64,
    /// No eligible span on either side; `f1` is then 1 if both are empty.
    pub degenerate: bool,
}

fn eligible_spans(t: &BinaryTree) -> BTreeSet<(usize, usize)> {
    let whole = t.span();
    t.internal_spans()
        .into_iter()
        .filter(|&s| s != whole && s.1 > s.0)
        .collect()
}

/// F1 over binary spans of length at least 2, leaving out the whole sentence.
pub fn unlabeled_f1(gold: &BinaryTree, pred: &BinaryTree) -> Result<UnlabeledScore> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(gold.len(), pred.len()));
    }
    let g = eligible_spans(gold);
    let p = eligible_spans(pred);
    let matched = g.intersection(&p).count();
    let degenerate = g.is_empty() || p.is_empty();
    let f1 = if g.is_empty() && p.is_empty() {
        1.0
    } else {
        Prf::from_counts(matched, g.len(), p.len()).f1
    };
    Ok(UnlabeledScore {
        matched,
        gold: g.len(),
        pred: p.len(),
        f1,
        degenerate,
    })
}

/// Scores for one sentence pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceScore {
    pub sentence: usize,
    pub length: usize,
    pub gold: usize,
    pub pred: usize,
    pub matched: usize,
    pub lp: f64,
    pub lr: f64,
    pub lf: f64,
    pub exact: bool,
    pub uf: Option<UnlabeledScore>,
}

/// Micro-averaged corpus accumulator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub sentences: Vec<SentenceScore>,
    pub matched: usize,
    pub gold: usize,
    pub pred: usize,
    pub exact: usize,
    uf_matched: usize,
    uf_gold: usize,
    uf_pred: usize,
    /// False once any sentence lacked binary structure on either side.
    uf_complete: bool,
}

impl Evaluation {
    pub fn new() -> Self {
        Evaluation {
            uf_complete: true,
            ..Default::default()
        }
    }

    /// Scores one pair of n-ary trees. `binary` carries the gold and
    /// predicted binary trees when unlabeled F1 should be reported.
    pub fn add(
        &mut self,
        gold: &Tree,
        pred: &Tree,
        binary: Option<(&BinaryTree, &BinaryTree)>,
        params: &EvalParams,
    ) -> Result<&SentenceScore> {
        if gold.len() != pred.len() {
            return Err(Error::LengthMismatch(gold.len(), pred.len()));
        }
        let g = labeled_brackets(gold, params);
        let p = labeled_brackets(pred, params);
        let matched = g.matched(&p);
        let s = Prf::from_counts(matched, g.len(), p.len());
        let uf = binary.map(|(bg, bp)| unlabeled_f1(bg, bp)).transpose()?;
        match &uf {
            Some(u) => {
                self.uf_matched += u.matched;
                self.uf_gold += u.gold;
                self.uf_pred += u.pred;
            }
            None => self.uf_complete = false,
        }
        let exact = matched == g.len() && matched == p.len();
        self.matched += matched;
        self.gold += g.len();
        self.pred += p.len();
        self.exact += exact as usize;
        self.sentences.push(SentenceScore {
            sentence: self.sentences.len() + 1,
            length: gold.len(),
            gold: g.len(),
            pred: p.len(),
            matched,
            lp: s.precision,
            lr: s.recall,
            lf: s.f1,
            exact,
            uf,
        });
        Ok(self.sentences.last().unwrap())
    }

    pub fn labeled(&self) -> Prf {
        Prf::from_counts(self.matched, self.gold, self.pred)
    }

    /// Corpus unlabeled F1; `None` unless every sentence had binary trees.
    /// Degenerate sentences add no counts.
    pub fn unlabeled(&self) -> Option<Prf> {
        (self.uf_complete && !self.sentences.is_empty())
            .then(|| Prf::from_counts(self.uf_matched, self.uf_gold, self.uf_pred))
    }

    pub fn exact_rate(&self) -> f64 {
        if self.sentences.is_empty() {
            0.0
        } else {
            self.exact as f64 / self.sentences.len() as f64
        }
    }

    /// Text table with percentages to two decimals.
    pub fn report(&self) -> String {
        let l = self.labeled();
        let mut out = String::new();
        let _ = writeln!(out, "sentences    {}", self.sentences.len());
        let _ = writeln!(
            out,
            "brackets     gold {}  pred {}  matched {}",
            self.gold, self.pred, self.matched
        );
        let _ = writeln!(out, "LP           {:.2}", 100.0 * l.precision);
        let _ = writeln!(out, "LR           {:.2}", 100.0 * l.recall);
        let _ = writeln!(out, "LF           {:.2}", 100.0 * l.f1);
        match self.unlabeled() {
            Some(u) => {
                let _ = writeln!(out, "UF           {:.2}", 100.0 * u.f1);
            }
            None => {
                let _ = writeln!(out, "UF           n/a");
            }
        }
        let _ = writeln!(out, "exact match  {:.2}", 100.0 * self.exact_rate());
        out
    }

    /// One JSON object per sentence.
    pub fn sentence_records(&self) -> String {
        self.sentences
            .iter()
            .map(|s| serde_json::to_string(s).expect("sentence scores serialize") + "\n")
            .collect()
    }
}
