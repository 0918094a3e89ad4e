//! The full parser: encoder, structure scorer, and label generator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chart::{cky, Chart, ScoreSource};
use crate::encoder::{resolve, EncodedSentence, Encoder, EncoderDims, TokenIds};
use crate::error::{Error, Result};
use crate::labeler::{LabelRepairs, Labeler, LabelerDims};
use crate::rule_model::{RuleModel, ScorerKind};
use crate::span_model::{SpanKind, SpanModel};
use crate::tensor::{Expr, Graph, ParamStore, Real};
use crate::treebank::{debinarize, BinaryTree, Token, Tree, Vocab};
use crate::Loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    BinarySpan,
    MultiSpan,
    LinearRule,
    BiaffineRule,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::BinarySpan,
        Variant::MultiSpan,
        Variant::LinearRule,
        Variant::BiaffineRule,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::BinarySpan => "binary-span",
            Variant::MultiSpan => "multi-span",
            Variant::LinearRule => "linear-rule",
            Variant::BiaffineRule => "biaffine-rule",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Architecture hyperparameters. Serialized as `key=value` lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderDims,
    /// Hidden layer of the span classifiers.
    pub span_hidden: usize,
    /// Width of the rule model's role projections.
    pub proj_dim: usize,
    pub labeler: LabelerDims,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::BiaffineRule,
            encoder: EncoderDims::default(),
            span_hidden: 128,
            proj_dim: 128,
            labeler: LabelerDims::default(),
        }
    }
}

impl ModelConfig {
    pub fn to_kv(&self) -> BTreeMap<&'static str, String> {
        let e = &self.encoder;
        let l = &self.labeler;
        [
            ("variant", self.variant.to_string()),
            ("word_dim", e.word_dim.to_string()),
            ("pos_dim", e.pos_dim.to_string()),
            ("char_dim", e.char_dim.to_string()),
            ("char_hidden", e.char_hidden.to_string()),
            ("lstm_hidden", e.hidden.to_string()),
            ("lstm_layers", e.layers.to_string()),
            ("span_hidden", self.span_hidden.to_string()),
            ("proj_dim", self.proj_dim.to_string()),
            ("tree_hidden", l.tree_hidden.to_string()),
            ("label_dim", l.label_dim.to_string()),
            ("label_hidden", l.label_hidden.to_string()),
            ("out_hidden", l.out_hidden.to_string()),
            ("max_chain", l.max_chain.to_string()),
        ]
        .into_iter()
        .collect()
    }

    /// Applies one `key=value` setting; returns `false` for keys this struct
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || {
            value.parse::<usize>().map_err(|_| {
                Error::Config(format!(
                    "`{key}` needs a non-negative integer, got `{value}`"
                ))
            })
        };
        match key {
            "variant" => self.variant = value.parse()?,
            "word_dim" => self.encoder.word_dim = num()?,
            "pos_dim" => self.encoder.pos_dim = num()?,
            "char_dim" => self.encoder.char_dim = num()?,
            "char_hidden" => self.encoder.char_hidden = num()?,
            "lstm_hidden" => self.encoder.hidden = num()?,
            "lstm_layers" => self.encoder.layers = num()?,
            "span_hidden" => self.span_hidden = num()?,
            "proj_dim" => self.proj_dim = num()?,
            "tree_hidden" => self.labeler.tree_hidden = num()?,
            "label_dim" => self.labeler.label_dim = num()?,
            "label_hidden" => self.labeler.label_hidden = num()?,
            "out_hidden" => self.labeler.out_hidden = num()?,
            "max_chain" => self.labeler.max_chain = num()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let l = &self.labeler;
        let dims = [
            e.word_dim,
            e.pos_dim,
            e.char_dim,
            e.char_hidden,
            e.hidden,
            e.layers,
            self.span_hidden,
            self.proj_dim,
            l.tree_hidden,
            l.label_dim,
            l.label_hidden,
            l.out_hidden,
            l.max_chain,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("every dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Structure {
    Span(SpanModel),
    Rule(RuleModel),
}

/// Parameter handles for every component; the values live in a separate
/// [`ParamStore`] so the same parser runs in either precision.
#[derive(Debug, Clone)]
pub struct Parser {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub structure: Structure,
    pub labeler: Labeler,
}

/// Outcome of parsing one sentence.
#[derive(Debug, Clone)]
pub struct Parse {
    pub tree: Tree,
    /// Labeled binary tree before debinarization.
    pub binary: BinaryTree,
    pub repairs: LabelRepairs,
    pub chart: Option<String>,
}

/// Per-sentence training losses.
#[derive(Debug, Clone, Copy)]
pub struct SentenceLoss {
    pub total: Expr,
    pub parser: Option<Loss>,
    pub label: Loss,
}

impl Parser {
    /// Registers all parameters in a deterministic order.
    pub fn build<T: Real>(
        config: ModelConfig,
        vocab: Vocab,
        rng: &mut impl Rng,
    ) -> Result<(Parser, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::register(&mut store, config.encoder, &vocab, rng)?;
        let structure = match config.variant {
            Variant::BinarySpan | Variant::MultiSpan => {
                let kind = if config.variant == Variant::BinarySpan {
                    SpanKind::Binary
                } else {
                    SpanKind::Multi
                };
                Structure::Span(SpanModel::register(
                    &mut store,
                    kind,
                    config.encoder.span_v_dim(),
                    config.span_hidden,
                    &vocab,
                    rng,
                )?)
            }
            Variant::LinearRule | Variant::BiaffineRule => {
                let kind = if config.variant == Variant::LinearRule {
                    ScorerKind::Linear
                } else {
                    ScorerKind::Biaffine
                };
                Structure::Rule(RuleModel::register(
                    &mut store,
                    kind,
                    config.encoder.span_sr_dim(),
                    config.proj_dim,
                    rng,
                )?)
            }
        };
        let tx_dim = Labeler::tx_dim(config.encoder.hidden, config.encoder.input_dim());
        let labeler = Labeler::register(&mut store, config.labeler, tx_dim, &vocab, rng)?;
        Ok((
            Parser {
                config,
                vocab,
                encoder,
                structure,
                labeler,
            },
            store,
        ))
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Structure loss for the configured variant; `None` for one-word sentences.
    pub fn parser_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        gold: &BinaryTree,
    ) -> Result<Option<Loss>> {
        match &self.structure {
            Structure::Span(m) => m.loss(g, enc, gold, &self.vocab),
            Structure::Rule(m) => m.rule_loss(g, enc, gold),
        }
    }

    /// `L_parser + L_label` for one gold tree.
    pub fn sentence_loss<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[TokenIds],
        gold: &BinaryTree,
        dropout: f64,
    ) -> Result<SentenceLoss> {
        let enc = self.encoder.encode(g, ids, dropout)?;
        let parser = self.parser_loss(g, &enc, gold)?;
        let label = self
            .labeler
            .label_loss(g, gold, &enc, &self.vocab, dropout)?;
        let total = match parser {
            Some(p) => g.add(p.value, label.value)?,
            None => label.value,
        };
        Ok(SentenceLoss {
            total,
            parser,
            label,
        })
    }

    /// Unlabeled decoding; returns the tree and, when asked, a chart dump.
    pub fn decode_structure<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncodedSentence,
        dump_chart: bool,
    ) -> Result<(BinaryTree, Option<String>)> {
        let n = enc.len();
        let (tree, chart) = match &self.structure {
            Structure::Span(m) => {
                let s = m.scores(g, enc)?;
                let source = ScoreSource::Span(&s);
                (
                    cky(source)?,
                    (dump_chart && n > 1)
                        .then(|| Chart::fill(source).map(|c| c.render()))
                        .transpose()?,
                )
            }
            Structure::Rule(m) => {
                let s = m.scores(g, enc)?;
                let source = ScoreSource::Split(&s);
                (
                    cky(source)?,
                    (dump_chart && n > 1)
                        .then(|| Chart::fill(source).map(|c| c.render()))
                        .transpose()?,
                )
            }
        };
        Ok((tree, chart))
    }

    /// Full pipeline: encode, decode structure, label, debinarize.
    pub fn parse<T: Real>(
        &self,
        store: &ParamStore<T>,
        tokens: &[Token],
        dump_chart: bool,
    ) -> Result<Parse> {
        let ids = resolve(tokens, &self.vocab)?;
        let mut g = Graph::inference(store);
        let enc = self.encoder.encode(&mut g, &ids, 0.0)?;
        let (unlabeled, chart) = self.decode_structure(&mut g, &enc, dump_chart)?;
        let (binary, repairs) = self
            .labeler
            .label_tree(&mut g, &unlabeled, &enc, &self.vocab)?;
        let tree = debinarize(&binary, tokens);
        Ok(Parse {
            tree,
            binary,
            repairs,
            chart,
        })
    }
}
