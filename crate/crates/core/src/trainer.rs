//! Joint SGD training of the structure scorer and the label generator, with
//! evaluation-driven early stopping.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::encoder::{resolve_train, TokenIds};
use crate::error::{Error, Result};
use crate::metrics::{EvalParams, Evaluation, Prf};
use crate::model::{ModelConfig, Parser};
use crate::tensor::{lit, Gradients, Graph, ParamStore, Real};
use crate::treebank::{BinaryTree, GoldTree, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// `lr0 / (1 + decay * epoch)`
    Inverse,
    /// `lr0 * (1 - decay)^epoch`
    Multiplicative,
}

/// Training hyperparameters. Every field has a `key=value` name.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr0: f64,
    pub decay: f64,
    pub decay_mode: DecayMode,
    /// L2 coefficient.
    pub lambda: f64,
    /// `None` picks the language default.
    pub dropout: Option<f64>,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub gamma: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip: f64,
    pub language: Language,
    pub min_count: u32,
    pub pretrained: Option<PathBuf>,
    pub freeze_pretrained: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr0: 0.1,
            decay: 0.05,
            decay_mode: DecayMode::Inverse,
            lambda: 1e-6,
            dropout: None,
            max_epochs: 50,
            eval_every: 10_000,
            patience: 20,
            seed: 1,
            gamma: 0.8375,
            clip: 5.0,
            language: Language::English,
            min_count: 1,
            pretrained: None,
            freeze_pretrained: false,
        }
    }
}

/// False for NaN as well as for non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn non_negative(x: f64) -> bool {
    x >= 0.0
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot read `{value}`")))
}

impl TrainConfig {
    /// Reads `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1))
            })?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "lr0" => self.lr0 = parse_num(key, value)?,
            "decay" => self.decay = parse_num(key, value)?,
            "decay_mode" => {
                self.decay_mode = match value {
                    "inverse" => DecayMode::Inverse,
                    "multiplicative" => DecayMode::Multiplicative,
                    _ => {
                        return Err(Error::Config(format!(
                            "`decay_mode` must be inverse or multiplicative, got `{value}`"
                        )))
                    }
                }
            }
            "lambda" => self.lambda = parse_num(key, value)?,
            "dropout" => self.dropout = Some(parse_num(key, value)?),
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "clip" => self.clip = parse_num(key, value)?,
            "language" => self.language = value.parse().map_err(Error::Config)?,
            "min_count" => self.min_count = parse_num(key, value)?,
            "pretrained" => self.pretrained = (!value.is_empty()).then(|| PathBuf::from(value)),
            "freeze_pretrained" => self.freeze_pretrained = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !positive(self.lr0) {
            return bad("lr0 must be positive");
        }
        if !non_negative(self.decay)
            || (self.decay_mode == DecayMode::Multiplicative && self.decay >= 1.0)
        {
            return bad("decay out of range");
        }
        if !non_negative(self.lambda) || !non_negative(self.clip) {
            return bad("lambda and clip must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout()) {
            return bad("dropout must lie in [0, 1)");
        }
        if !positive(self.gamma) {
            return bad("gamma must be positive");
        }
        if self.patience == 0 || self.eval_every == 0 || self.max_epochs == 0 {
            return bad("patience, eval_every and max_epochs must be at least 1");
        }
        self.model.validate()
    }

    /// Configured dropout, or 0.5 for English and 0.3 for Chinese.
    pub fn dropout(&self) -> f64 {
        self.dropout.unwrap_or(match self.language {
            Language::English => 0.5,
            Language::Chinese => 0.3,
        })
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        match self.decay_mode {
            DecayMode::Inverse => self.lr0 / (1.0 + self.decay * epoch as f64),
            DecayMode::Multiplicative => self.lr0 * (1.0 - self.decay).powi(epoch as i32),
        }
    }

    /// Every setting as `key=value` lines, readable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out: String = self
            .model
            .to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let mode = match self.decay_mode {
            DecayMode::Inverse => "inverse",
            DecayMode::Multiplicative => "multiplicative",
        };
        let pairs = [
            ("lr0", self.lr0.to_string()),
            ("decay", self.decay.to_string()),
            ("decay_mode", mode.to_string()),
            ("lambda", self.lambda.to_string()),
            ("dropout", self.dropout().to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("gamma", self.gamma.to_string()),
            ("clip", self.clip.to_string()),
            ("language", self.language.to_string()),
            ("min_count", self.min_count.to_string()),
            (
                "pretrained",
                self.pretrained
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("freeze_pretrained", self.freeze_pretrained.to_string()),
        ];
        for (k, v) in pairs {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

/// Progress counters; saved with checkpoints so training can resume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub examples_seen: u64,
    pub best_dev_lf: Option<f64>,
    pub evals_since_best: usize,
    pub lr: f64,
    /// Running training loss since the last evaluation.
    pub loss_sum: f64,
    pub loss_count: u64,
}

impl TrainState {
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("state.epoch", self.epoch.to_string()),
            ("state.examples_seen", self.examples_seen.to_string()),
            (
                "state.best_dev_lf",
                self.best_dev_lf.map(|v| v.to_string()).unwrap_or_default(),
            ),
            ("state.evals_since_best", self.evals_since_best.to_string()),
            ("state.lr", self.lr.to_string()),
            ("state.loss_sum", self.loss_sum.to_string()),
            ("state.loss_count", self.loss_count.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::ModelFile(format!("checkpoint lacks `{k}`")))
        };
        let best = get("state.best_dev_lf")?;
        Ok(TrainState {
            epoch: parse_num("epoch", get("state.epoch")?)?,
            examples_seen: parse_num("examples_seen", get("state.examples_seen")?)?,
            best_dev_lf: if best.is_empty() {
                None
            } else {
                Some(parse_num("best_dev_lf", best)?)
            },
            evals_since_best: parse_num("evals_since_best", get("state.evals_since_best")?)?,
            lr: parse_num("lr", get("state.lr")?)?,
            loss_sum: parse_num("loss_sum", get("state.loss_sum")?)?,
            loss_count: parse_num("loss_count", get("state.loss_count")?)?,
        })
    }
}

/// One line of the training log. Scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub examples_seen: u64,
    pub train_loss: f64,
    pub dev_lp: f64,
    pub dev_lr: f64,
    pub dev_lf: f64,
    pub lr: f64,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Joint objective value and its gradient.
#[derive(Debug, Clone)]
pub struct JointLoss<T> {
    /// `data + penalty`
    pub value: f64,
    /// Structure plus label loss.
    pub data: f64,
    /// `(lambda / 2) * ||theta||^2` over trainable parameters.
    pub penalty: f64,
    pub grads: Gradients<T>,
}

/// Half the squared norm of every trainable parameter, times `lambda`.
pub fn l2_penalty<T: Real>(store: &ParamStore<T>, lambda: f64) -> f64 {
    let sq: f64 = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(_, p)| p.value.iter())
        .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
        .sum();
    0.5 * lambda * sq
}

/// `L_parser + L_label + (lambda/2)||theta||^2` for one sentence. The penalty
/// is added analytically rather than through the graph. `dropout_seed`
/// switches the graph to training mode.
pub fn joint_loss<T: Real>(
    parser: &Parser,
    store: &ParamStore<T>,
    ids: &[TokenIds],
    gold: &BinaryTree,
    lambda: f64,
    dropout: f64,
    dropout_seed: Option<u64>,
) -> Result<JointLoss<T>> {
    let mut g = match dropout_seed {
        Some(seed) => Graph::training(store, seed),
        None => Graph::new(store),
    };
    let loss = parser.sentence_loss(&mut g, ids, gold, dropout)?;
    let data = g.scalar(loss.total).to_f64().unwrap_or(f64::NAN);
    let mut grads = g.backward(loss.total)?;
    let mut penalty = 0.0;
    if lambda > 0.0 {
        penalty = l2_penalty(store, lambda);
        let l: T = lit(lambda);
        for (id, p) in store.iter().filter(|(_, p)| p.trainable) {
            let slot = grads.entry(store, id);
            slot.iter_mut()
                .zip(&p.value)
                .for_each(|(g, &v)| *g += l * v);
        }
    }
    Ok(JointLoss {
        value: data + penalty,
        data,
        penalty,
        grads,
    })
}

/// `theta -= lr * g` on trainable parameters, after scaling the gradient to
/// global norm `clip` when it is larger (`clip = 0` disables). Returns the
/// pre-clip norm.
pub fn sgd_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &Gradients<T>,
    lr: f64,
    clip: f64,
) -> Result<f64> {
    if !positive(lr) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for (id, g) in grads.iter() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(store.get(id).name.clone()));
        }
    }
    let norm = grads.squared_norm().sqrt();
    let factor = if clip > 0.0 && norm > clip {
        clip / norm
    } else {
        1.0
    };
    let step: T = lit(lr * factor);
    for (id, g) in grads.iter() {
        let p = store.get_mut(id);
        if p.trainable {
            p.value
                .iter_mut()
                .zip(g)
                .for_each(|(v, &d)| *v = *v - step * d);
        }
    }
    Ok(norm)
}

/// Parses every dev sentence in parallel and scores it against gold.
pub fn evaluate(
    parser: &Parser,
    params: &ParamStore<f32>,
    dev: &[GoldTree],
    eval_params: &EvalParams,
) -> Result<Evaluation> {
    let parses: Vec<_> = dev
        .par_iter()
        .map(|ex| parser.parse(params, &ex.tokens, false))
        .collect();
    let mut e = Evaluation::new();
    for (ex, p) in dev.iter().zip(parses) {
        let p = p?;
        e.add(
            &ex.tree,
            &p.tree,
            Some((&ex.binary, &p.binary)),
            eval_params,
        )?;
    }
    Ok(e)
}

/// Side effects during training: logging and checkpoint writing.
pub trait TrainHooks {
    fn on_eval(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    /// Called after an evaluation that improved dev LF.
    fn on_improve(&mut self, _params: &ParamStore<f32>, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _params: &ParamStore<f32>, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best parameters seen in this run; `None` if a resumed run never improved.
    pub best: Option<ParamStore<f32>>,
    pub state: TrainState,
    pub log: Vec<LogRecord>,
    pub stopped_early: bool,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains `params` in place. Examples are shuffled per epoch and rare words
/// replaced stochastically; dev LF (from `dev_score`) is checked every
/// `eval_every` examples and once more at the end if the last example was not
/// followed by an evaluation. Passing a saved `resume` state continues at the
/// next epoch boundary.
pub fn train_loop(
    config: &TrainConfig,
    parser: &Parser,
    params: &mut ParamStore<f32>,
    train: &[GoldTree],
    dev_score: &mut dyn FnMut(&ParamStore<f32>) -> Result<Prf>,
    hooks: &mut dyn TrainHooks,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let dropout = config.dropout();
    let mut out = TrainOutcome {
        best: None,
        state: resume.unwrap_or_else(|| TrainState {
            lr: config.learning_rate(0),
            ..Default::default()
        }),
        log: Vec::new(),
        stopped_early: false,
    };
    let mut evaluated_at = None;

    let mut check = |out: &mut TrainOutcome,
                     hooks: &mut dyn TrainHooks,
                     params: &ParamStore<f32>,
                     epoch: usize|
     -> Result<bool> {
        let s = &mut out.state;
        let prf = dev_score(params)?;
        let lf = 100.0 * prf.f1;
        let improved = s.best_dev_lf.is_none_or(|b| lf > b);
        if improved {
            s.best_dev_lf = Some(lf);
            s.evals_since_best = 0;
        } else {
            s.evals_since_best += 1;
        }
        let record = LogRecord {
            epoch,
            examples_seen: s.examples_seen,
            train_loss: if s.loss_count == 0 {
                0.0
            } else {
                s.loss_sum / s.loss_count as f64
            },
            dev_lp: 100.0 * prf.precision,
            dev_lr: 100.0 * prf.recall,
            dev_lf: lf,
            lr: s.lr,
        };
        s.loss_sum = 0.0;
        s.loss_count = 0;
        log::info!(
            "epoch {} seen {} loss {:.4} dev LF {:.2}",
            record.epoch,
            record.examples_seen,
            record.train_loss,
            record.dev_lf
        );
        hooks.on_eval(&record)?;
        out.log.push(record);
        if improved {
            out.best = Some(params.clone());
            hooks.on_improve(params, &out.state)?;
        }
        Ok(out.state.evals_since_best >= config.patience)
    };

    'epochs: while out.state.epoch < config.max_epochs {
        let epoch = out.state.epoch;
        out.state.lr = config.learning_rate(epoch);
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            let ex = &train[i];
            let ids = resolve_train(&ex.tokens, &parser.vocab, config.gamma, &mut rng)?;
            let seed = rng.gen::<u64>();
            let loss = joint_loss(
                parser,
                params,
                &ids,
                &ex.binary,
                config.lambda,
                dropout,
                Some(seed),
            )?;
            if !loss.value.is_finite() {
                return Err(Error::NonFiniteGradient("loss".into()));
            }
            sgd_step(params, &loss.grads, out.state.lr, config.clip)?;
            out.state.examples_seen += 1;
            out.state.loss_sum += loss.value;
            out.state.loss_count += 1;
            if out.state.examples_seen.is_multiple_of(config.eval_every as u64) {
                evaluated_at = Some(out.state.examples_seen);
                if check(&mut out, hooks, params, epoch)? {
                    out.stopped_early = true;
                    break 'epochs;
                }
            }
        }
        out.state.epoch += 1;
        hooks.on_epoch_end(params, &out.state)?;
    }
    if !out.stopped_early
        && evaluated_at != Some(out.state.examples_seen)
        && out.state.loss_count > 0
    {
        let epoch = out.state.epoch.saturating_sub(1);
        check(&mut out, hooks, params, epoch)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{resolve, EncoderDims};
    use crate::labeler::LabelerDims;
    use crate::model::Variant;
    use crate::tensor::{grad_check, GradCheckOptions};
    use crate::treebank::{parse_bracketed, prepare, HeadTable, Vocab};

    const CORPUS: &str = "(S (NP (DT The) (NN cat)) (VP (VBD sat)))
        (S (NP (PRP It)) (VP (VBD ran) (ADVP (RB fast))))
        (S (NP (DT A) (NN dog)) (VP (VBD saw) (NP (DT the) (NN cat))))";

    fn setup(variant: Variant) -> (TrainConfig, Parser, ParamStore<f32>, Vec<GoldTree>) {
        let trees = parse_bracketed(CORPUS).unwrap();
        let gold = prepare(&trees, &HeadTable::ptb(), 4).unwrap().examples;
        let collapsed: Vec<_> = gold.iter().map(|g| g.collapsed.clone()).collect();
        let vocab = Vocab::build(&collapsed, 1, Language::English).unwrap();
        let config = TrainConfig {
            model: ModelConfig {
                variant,
                encoder: EncoderDims {
                    word_dim: 4,
                    pos_dim: 3,
                    char_dim: 2,
                    char_hidden: 3,
                    hidden: 4,
                    layers: 1,
                },
                span_hidden: 6,
                proj_dim: 4,
                labeler: LabelerDims {
                    tree_hidden: 4,
                    label_dim: 3,
                    label_hidden: 4,
                    out_hidden: 6,
                    max_chain: 4,
                },
            },
            max_epochs: 4,
            eval_every: 2,
            dropout: Some(0.2),
            ..Default::default()
        };
        let (parser, params) =
            Parser::build(config.model, vocab, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (config, parser, params, gold)
    }

    #[test]
    fn config_file() {
        let c = TrainConfig::parse(
            "# toy\nlr0 = 0.05\nvariant=binary-span  # zero-order\n\nlanguage=chinese\n",
        )
        .unwrap();
        assert_eq!(c.lr0, 0.05);
        assert_eq!(c.model.variant, Variant::BinarySpan);
        assert_eq!(c.dropout(), 0.3);
        assert!(TrainConfig::parse("momentum=0.9").is_err());
        assert!(TrainConfig::parse("patience=0").is_err());
        assert!(TrainConfig::parse("lr0").is_err());
        let mut full = TrainConfig {
            pretrained: Some("emb.txt".into()),
            decay_mode: DecayMode::Multiplicative,
            ..c
        };
        full.seed = 99;
        assert_eq!(
            TrainConfig::parse(&full.to_text()).unwrap(),
            TrainConfig {
                dropout: Some(0.3),
                ..full
            }
        );
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(0), 0.1);
        assert!((c.learning_rate(10) - 0.1 / 1.5).abs() < 1e-15);
        let m = TrainConfig {
            decay_mode: DecayMode::Multiplicative,
            ..c
        };
        assert!((m.learning_rate(2) - 0.1 * 0.95 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_is_plain_sum() {
        let (_, parser, params, gold) = setup(Variant::BiaffineRule);
        let ids = resolve(&gold[2].tokens, &parser.vocab).unwrap();
        let j = joint_loss(&parser, &params, &ids, &gold[2].binary, 0.0, 0.0, None).unwrap();
        let mut g = Graph::new(&params);
        let parts = parser
            .sentence_loss(&mut g, &ids, &gold[2].binary, 0.0)
            .unwrap();
        let sum = g.scalar(parts.parser.unwrap().value) as f64 + g.scalar(parts.label.value) as f64;
        assert_eq!(j.penalty, 0.0);
        assert!((j.value - sum).abs() < 1e-5 * sum.abs().max(1.0));

        let lambda = 1e-3;
        let j = joint_loss(&parser, &params, &ids, &gold[2].binary, lambda, 0.0, None).unwrap();
        let sq: f64 = params
            .iter()
            .flat_map(|(_, p)| p.value.iter())
            .map(|&v| (v as f64).powi(2))
            .sum();
        assert!((j.penalty - 0.5 * lambda * sq).abs() < 1e-9 * sq);
    }

    #[test]
    fn joint_gradient() {
        let (config, parser, params, gold) = setup(Variant::LinearRule);
        let mut params = params.cast::<f64>();
        let ids = resolve(&gold[0].tokens, &parser.vocab).unwrap();
        let report = grad_check(
            &mut params,
            |s: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
                let j = joint_loss(&parser, s, &ids, &gold[0].binary, 0.01, 0.0, None)?;
                Ok((j.value, j.grads))
            },
            &GradCheckOptions {
                eps: 1e-4,
                max_coords_per_param: Some(6),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let _ = config;
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (_, _, mut params, _) = setup(Variant::BinarySpan);
        let before = params.clone();
        let zero = Gradients::zeros_like(&params);
        sgd_step(&mut params, &zero, 0.1, 5.0).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(params.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let (_, _, mut params, _) = setup(Variant::BinarySpan);
        let mut g = Gradients::zeros_like(&params);
        let id = params.id("span.binary.w_out").unwrap();
        g.entry(&params, id)[0] = f32::NAN;
        match sgd_step(&mut params, &g, 0.1, 0.0) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "span.binary.w_out"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn penalty_alone_shrinks_norm() {
        let (_, _, params, _) = setup(Variant::BinarySpan);
        let mut params = params.cast::<f64>();
        let mut last = params.squared_norm();
        for _ in 0..10 {
            let mut g = Gradients::zeros_like(&params);
            for (id, p) in params.iter() {
                g.entry(&params, id)
                    .iter_mut()
                    .zip(&p.value)
                    .for_each(|(d, &v)| *d = 1e-3 * v);
            }
            sgd_step(&mut params, &g, 0.1, 0.0).unwrap();
            let now = params.squared_norm();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn repeated_example_descends() {
        for variant in Variant::ALL {
            let (_, parser, mut params, gold) = setup(variant);
            let ids = resolve(&gold[2].tokens, &parser.vocab).unwrap();
            let mut losses = Vec::new();
            for _ in 0..21 {
                let j =
                    joint_loss(&parser, &params, &ids, &gold[2].binary, 1e-6, 0.0, None).unwrap();
                losses.push(j.value);
                sgd_step(&mut params, &j.grads, 0.01, 5.0).unwrap();
            }
            let ok = losses.windows(2).filter(|w| w[1] <= w[0]).count();
            assert!(ok >= 18, "{variant}: {losses:?}");
        }
    }

    #[test]
    fn patience_stops_on_flat_metric() {
        let (config, parser, mut params, gold) = setup(Variant::BinarySpan);
        let config = TrainConfig {
            patience: 1,
            eval_every: 1,
            max_epochs: 10,
            ..config
        };
        let flat = Prf {
            precision: 0.5,
            recall: 0.5,
            f1: 0.5,
            undefined: false,
        };
        let out = train_loop(
            &config,
            &parser,
            &mut params,
            &gold,
            &mut |_| Ok(flat),
            &mut (),
            None,
        )
        .unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.state.evals_since_best, 1);
        assert!(out.best.is_some());
    }

    fn run(
        config: &TrainConfig,
        parser: &Parser,
        params: &mut ParamStore<f32>,
        gold: &[GoldTree],
        resume: Option<TrainState>,
    ) -> TrainOutcome {
        let mut dev =
            |p: &ParamStore<f32>| Ok(evaluate(parser, p, gold, &EvalParams::default())?.labeled());
        train_loop(config, parser, params, gold, &mut dev, &mut (), resume).unwrap()
    }

    fn bits(p: &ParamStore<f32>) -> Vec<u32> {
        p.iter()
            .flat_map(|(_, p)| p.value.iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let (config, parser, params, gold) = setup(Variant::MultiSpan);
        let (mut a, mut b) = (params.clone(), params);
        let ra = run(&config, &parser, &mut a, &gold, None);
        let rb = run(&config, &parser, &mut b, &gold, None);
        assert_eq!(ra.log, rb.log);
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ra.log.len(), 6);

        let mut c = ra.best.clone().unwrap();
        let other = TrainConfig {
            seed: 2,
            ..config.clone()
        };
        let mut d = c.clone();
        let _ = run(&other, &parser, &mut c, &gold, None);
        let _ = run(&config, &parser, &mut d, &gold, None);
        assert_ne!(bits(&c), bits(&d));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (config, parser, params, gold) = setup(Variant::BiaffineRule);
        let mut whole = params.clone();
        let full = run(&config, &parser, &mut whole, &gold, None);

        let mut part = params;
        let first = run(
            &TrainConfig {
                max_epochs: 2,
                ..config.clone()
            },
            &parser,
            &mut part,
            &gold,
            None,
        );
        let state = TrainState::from_kv(&first.state.to_kv()).unwrap();
        assert_eq!(state, first.state);
        let rest = run(&config, &parser, &mut part, &gold, Some(state));
        assert_eq!(bits(&whole), bits(&part));
        let joined: Vec<_> = first.log.iter().chain(&rest.log).cloned().collect();
        assert_eq!(joined, full.log);
    }
}
