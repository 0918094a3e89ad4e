//! Sentence encoder.
//!
//! Each word is embedded as `[word + char_summary; pos]`, where the character
//! summary is a projection of a character BiLSTM's final states. The sentence
//! is padded with `<s>` and `</s>` and read by a stacked BiLSTM. Forward state
//! `f_t` is taken at padded position `t` (so `f_0` is the `<s>` state and
//! `f_{i+1}` sits on word `i`); backward state `r_t` is taken at padded position
//! `t + 1` (so `r_i` sits on word `i` and `r_n` is the `</s>` state).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lit, Expr, Graph, Init, ParamId, ParamStore, Real};
use crate::treebank::{stochastic_unk, Token, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub char_dim: usize,
    pub char_hidden: usize,
    /// Hidden units per direction of the sentence BiLSTM.
    pub hidden: usize,
    pub layers: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            word_dim: 100,
            pos_dim: 32,
            char_dim: 20,
            char_hidden: 25,
            hidden: 200,
            layers: 2,
        }
    }
}

impl EncoderDims {
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim
    }

    pub fn span_v_dim(&self) -> usize {
        4 * self.hidden
    }

    pub fn span_sr_dim(&self) -> usize {
        6 * self.hidden
    }
}

/// Standard LSTM cell (input, forget, output gates; no peepholes). Gate
/// blocks are stacked in the order i, f, o, g.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Lstm {
            wx: store.add(
                &format!("{prefix}.wx"),
                &[4 * hidden, input],
                Init::Glorot,
                rng,
            )?,
            wh: store.add(
                &format!("{prefix}.wh"),
                &[4 * hidden, hidden],
                Init::Glorot,
                rng,
            )?,
            b: store.add(&format!("{prefix}.b"), &[4 * hidden], Init::Zeros, rng)?,
            hidden,
        })
    }

    /// One step; `state` is `(h, c)` or `None` for the zero state.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Expr,
        state: Option<(Expr, Expr)>,
    ) -> Result<(Expr, Expr)> {
        let h = self.hidden;
        let mut gates = g.affine(self.wx, x, self.b)?;
        if let Some((hp, _)) = state {
            let rec = g.matvec(self.wh, hp)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice(gates, 0, h)?;
        let i = g.sigmoid(i);
        let o = g.slice(gates, 2 * h, h)?;
        let o = g.sigmoid(o);
        let cand = g.slice(gates, 3 * h, h)?;
        let cand = g.tanh(cand);
        let mut c = g.mul(i, cand)?;
        if let Some((_, cp)) = state {
            let f = g.slice(gates, h, h)?;
            let f = g.sigmoid(f);
            let keep = g.mul(f, cp)?;
            c = g.add(c, keep)?;
        }
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Hidden states for every input, returned in input order. With
    /// `reverse` the recurrence runs right to left.
    pub fn run<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        xs: &[Expr],
        reverse: bool,
    ) -> Result<Vec<Expr>> {
        let mut out = vec![None; xs.len()];
        let mut state = None;
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..xs.len()).rev())
        } else {
            Box::new(0..xs.len())
        };
        for t in order {
            let s = self.step(g, xs[t], state)?;
            out[t] = Some(s.0);
            state = Some(s);
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }
}

/// Vocabulary-resolved view of one token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenIds {
    pub word: usize,
    pub chars: Vec<usize>,
    pub pos: usize,
}

/// Resolves tokens for evaluation: rare and unseen words map to their class.
pub fn resolve(tokens: &[Token], vocab: &Vocab) -> Result<Vec<TokenIds>> {
    let words = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| vocab.word_id(&t.word, i == 0))
        .collect();
    resolve_with(tokens, vocab, words)
}

/// Resolves tokens for training, applying the stochastic unknown-word rule.
pub fn resolve_train(
    tokens: &[Token],
    vocab: &Vocab,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<Vec<TokenIds>> {
    let words: Vec<String> = tokens.iter().map(|t| t.word.clone()).collect();
    let ids = stochastic_unk(&words, vocab, gamma, rng);
    resolve_with(tokens, vocab, ids)
}

fn resolve_with(tokens: &[Token], vocab: &Vocab, words: Vec<usize>) -> Result<Vec<TokenIds>> {
    tokens
        .iter()
        .zip(words)
        .map(|(t, word)| {
            let pos = vocab
                .pos_id(&t.pos)
                .ok_or_else(|| Error::UnknownPos(t.pos.clone()))?;
            // Characters always come from the surface form, even for class ids.
            let chars = t.word.chars().map(|c| vocab.char_id(c)).collect();
            Ok(TokenIds { word, chars, pos })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub dims: EncoderDims,
    pub word_emb: ParamId,
    pub pos_emb: ParamId,
    pub char_emb: ParamId,
    pub char_fwd: Lstm,
    pub char_bwd: Lstm,
    pub char_left: ParamId,
    pub char_right: ParamId,
    pub char_bias: ParamId,
    /// `(forward, backward)` per layer.
    pub layers: Vec<(Lstm, Lstm)>,
    bos: (usize, usize),
    eos: (usize, usize),
}

/// BiLSTM states of one sentence. `fwd[t]` is `f_t` and `bwd[t]` is `r_t`,
/// both for `t` in `0..=n`.
#[derive(Debug, Clone)]
pub struct EncodedSentence {
    pub inputs: Vec<Expr>,
    pub fwd: Vec<Expr>,
    pub bwd: Vec<Expr>,
    pub hidden: usize,
}

impl Encoder {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        dims: EncoderDims,
        vocab: &Vocab,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let word_emb = store.add(
            "enc.word",
            &[vocab.num_words(), dims.word_dim],
            Init::Glorot,
            rng,
        )?;
        let pos_emb = store.add(
            "enc.pos",
            &[vocab.num_pos(), dims.pos_dim],
            Init::Glorot,
            rng,
        )?;
        let char_emb = store.add(
            "enc.char",
            &[vocab.num_chars(), dims.char_dim],
            Init::Glorot,
            rng,
        )?;
        let char_fwd = Lstm::register(store, "enc.char_fwd", dims.char_dim, dims.char_hidden, rng)?;
        let char_bwd = Lstm::register(store, "enc.char_bwd", dims.char_dim, dims.char_hidden, rng)?;
        let char_left = store.add(
            "enc.char_left",
            &[dims.word_dim, dims.char_hidden],
            Init::Glorot,
            rng,
        )?;
        let char_right = store.add(
            "enc.char_right",
            &[dims.word_dim, dims.char_hidden],
            Init::Glorot,
            rng,
        )?;
        let char_bias = store.add("enc.char_bias", &[dims.word_dim], Init::Zeros, rng)?;
        let mut layers = Vec::with_capacity(dims.layers);
        let mut input = dims.input_dim();
        for l in 0..dims.layers {
            let f = Lstm::register(store, &format!("enc.l{l}.fwd"), input, dims.hidden, rng)?;
            let b = Lstm::register(store, &format!("enc.l{l}.bwd"), input, dims.hidden, rng)?;
            layers.push((f, b));
            input = 2 * dims.hidden;
        }
        Ok(Encoder {
            dims,
            word_emb,
            pos_emb,
            char_emb,
            char_fwd,
            char_bwd,
            char_left,
            char_right,
            char_bias,
            layers,
            bos: (vocab.bos_word(), vocab.bos_pos()),
            eos: (vocab.eos_word(), vocab.eos_pos()),
        })
    }

    /// Copies pretrained rows into the word table. With `freeze` the table is
    /// excluded from training.
    pub fn load_pretrained<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        rows: &[(usize, Vec<f32>)],
        freeze: bool,
    ) -> Result<()> {
        let table = store.get_mut(self.word_emb);
        let cols = table.cols();
        for (row, v) in rows {
            if v.len() != cols || *row >= table.rows() {
                return Err(crate::tensor::TensorError::ShapeMismatch {
                    op: "load_pretrained",
                    shapes: vec![table.shape.clone(), vec![v.len()]],
                }
                .into());
            }
            for (dst, &src) in table.value[row * cols..(row + 1) * cols].iter_mut().zip(v) {
                *dst = lit(src as f64);
            }
        }
        if freeze {
            table.trainable = false;
        }
        Ok(())
    }

    /// Character summary `tanh(W_l h_fwd + W_r h_bwd + b)`.
    fn char_summary<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        chars: &[usize],
        dropout: f64,
    ) -> Result<Expr> {
        let mut xs = Vec::with_capacity(chars.len());
        for &c in chars {
            let e = g.lookup(self.char_emb, c)?;
            xs.push(g.dropout(e, dropout)?);
        }
        let fwd = self.char_fwd.run(g, &xs, false)?;
        let bwd = self.char_bwd.run(g, &xs, true)?;
        let left = g.affine(self.char_left, *fwd.last().unwrap(), self.char_bias)?;
        let right = g.matvec(self.char_right, bwd[0])?;
        let s = g.add(left, right)?;
        Ok(g.tanh(s))
    }

    /// `x_input = [E_word + x_char; E_pos]`. Words without characters get no
    /// character term.
    pub fn embed_token<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        tok: &TokenIds,
        dropout: f64,
    ) -> Result<Expr> {
        let mut word = g.lookup(self.word_emb, tok.word)?;
        if !tok.chars.is_empty() {
            let chars = self.char_summary(g, &tok.chars, dropout)?;
            word = g.add(word, chars)?;
        }
        let pos = g.lookup(self.pos_emb, tok.pos)?;
        Ok(g.concat(&[word, pos]))
    }

    fn boundary<T: Real>(&self, g: &mut Graph<'_, T>, (word, pos): (usize, usize)) -> Result<Expr> {
        let w = g.lookup(self.word_emb, word)?;
        let p = g.lookup(self.pos_emb, pos)?;
        Ok(g.concat(&[w, p]))
    }

    /// Embeds and encodes a sentence. `dropout` applies to the inputs of every
    /// LSTM layer, character LSTMs included.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[TokenIds],
        dropout: f64,
    ) -> Result<EncodedSentence> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let inputs = tokens
            .iter()
            .map(|t| self.embed_token(g, t, dropout))
            .collect::<Result<Vec<_>>>()?;
        let mut xs = Vec::with_capacity(tokens.len() + 2);
        xs.push(self.boundary(g, self.bos)?);
        xs.extend_from_slice(&inputs);
        xs.push(self.boundary(g, self.eos)?);

        let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
        for (l, (lf, lb)) in self.layers.iter().enumerate() {
            if l > 0 {
                xs = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(&f, &b)| g.concat(&[f, b]))
                    .collect();
            }
            let dropped = xs
                .iter()
                .map(|&x| g.dropout(x, dropout))
                .collect::<Result<Vec<_>, _>>()?;
            fwd = lf.run(g, &dropped, false)?;
            bwd = lb.run(g, &dropped, true)?;
        }
        let n = tokens.len();
        fwd.truncate(n + 1);
        bwd.remove(0);
        Ok(EncodedSentence {
            inputs,
            fwd,
            bwd,
            hidden: self.dims.hidden,
        })
    }
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, i: usize, j: usize) -> Result<()> {
        if i > j || j >= self.len() {
            return Err(Error::SpanOutOfRange {
                i,
                j,
                n: self.len(),
            });
        }
        Ok(())
    }

    /// `v[i,j] = [f_{i+1}; r_i; f_{j+1}; r_j]`.
    pub fn span_v<T: Real>(&self, g: &mut Graph<'_, T>, i: usize, j: usize) -> Result<Expr> {
        self.check(i, j)?;
        Ok(g.concat(&[self.fwd[i + 1], self.bwd[i], self.fwd[j + 1], self.bwd[j]]))
    }

    /// Difference vector `s[i,j] = [f_{j+1} − f_i; r_i − r_{j+1}]`.
    pub fn span_diff<T: Real>(&self, g: &mut Graph<'_, T>, i: usize, j: usize) -> Result<Expr> {
        self.check(i, j)?;
        let f = g.sub(self.fwd[j + 1], self.fwd[i])?;
        let r = g.sub(self.bwd[i], self.bwd[j + 1])?;
        Ok(g.concat(&[f, r]))
    }

    /// `sr[i,j] = [s[0,i−1]; s[i,j]; s[j+1,n−1]]`, empty contexts as zeros.
    pub fn span_sr<T: Real>(&self, g: &mut Graph<'_, T>, i: usize, j: usize) -> Result<Expr> {
        self.check(i, j)?;
        let n = self.len();
        let left = if i == 0 {
            g.zeros(2 * self.hidden)
        } else {
            self.span_diff(g, 0, i - 1)?
        };
        let mid = self.span_diff(g, i, j)?;
        let right = if j + 1 == n {
            g.zeros(2 * self.hidden)
        } else {
            self.span_diff(g, j + 1, n - 1)?
        };
        Ok(g.concat(&[left, mid, right]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, sigmoid, GradCheckOptions, Gradients};
    use crate::treebank::{collapse_unary, parse_bracketed, Language};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocab {
        let trees = parse_bracketed("(S (NP (DT The) (NN cat)) (VP (VBZ sat) (. .)))").unwrap();
        let c: Vec<_> = trees
            .iter()
            .map(|t| collapse_unary(t, 4).unwrap())
            .collect();
        Vocab::build(&c, 1, Language::English).unwrap()
    }

    fn small() -> EncoderDims {
        EncoderDims {
            word_dim: 4,
            pos_dim: 3,
            char_dim: 3,
            char_hidden: 2,
            hidden: 3,
            layers: 2,
        }
    }

    fn setup<T: Real>(dims: EncoderDims, seed: u64) -> (ParamStore<T>, Encoder, Vocab) {
        let v = vocab();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Encoder::register(&mut store, dims, &v, &mut rng).unwrap();
        (store, enc, v)
    }

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace()
            .map(|t| {
                let (w, p) = t.rsplit_once('_').unwrap();
                Token {
                    word: w.into(),
                    pos: p.into(),
                }
            })
            .collect()
    }

    #[test]
    fn default_input_dimension() {
        let (store, enc, v) = setup::<f32>(EncoderDims::default(), 0);
        let ids = resolve(&toks("The_DT cat_NN"), &v).unwrap();
        let mut g = Graph::inference(&store);
        let x = enc.embed_token(&mut g, &ids[0], 0.0).unwrap();
        assert_eq!(g.dim(x), 132);
        let e = enc.encode(&mut g, &ids, 0.0).unwrap();
        assert!(e.fwd.iter().chain(&e.bwd).all(|&s| g.dim(s) == 200));
        let v = e.span_v(&mut g, 0, 1).unwrap();
        let sr = e.span_sr(&mut g, 0, 1).unwrap();
        assert_eq!((g.dim(v), g.dim(sr)), (800, 1200));
    }

    #[test]
    fn unknown_pos() {
        let v = vocab();
        assert!(matches!(resolve(&toks("cat_XYZ"), &v), Err(Error::UnknownPos(t)) if t == "XYZ"));
    }

    #[test]
    fn zero_parameters_give_zero_input() {
        let (mut store, enc, v) = setup::<f64>(small(), 1);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).value.iter_mut().for_each(|x| *x = 0.0);
        }
        let ids = resolve(&toks("cat_NN"), &v).unwrap();
        let mut g = Graph::new(&store);
        let x = enc.embed_token(&mut g, &ids[0], 0.0).unwrap();
        assert!(g.value(x).iter().all(|&v| v == 0.0));
    }

    /// Hand-unrolled single LSTM step from the zero state.
    fn lstm_step_oracle(store: &ParamStore<f64>, cell: &Lstm, x: &[f64]) -> Vec<f64> {
        let h = cell.hidden;
        let wx = &store.get(cell.wx).value;
        let b = &store.get(cell.b).value;
        let pre = |r: usize| {
            b[r] + (0..x.len())
                .map(|c| wx[r * x.len() + c] * x[c])
                .sum::<f64>()
        };
        (0..h)
            .map(|u| {
                let i = sigmoid(pre(u));
                let o = sigmoid(pre(2 * h + u));
                let cand = pre(3 * h + u).tanh();
                o * (i * cand).tanh()
            })
            .collect()
    }

    #[test]
    fn single_char_summary_matches_hand_unroll() {
        let (store, enc, v) = setup::<f64>(small(), 2);
        let ids = resolve(&toks("._."), &v).unwrap();
        assert_eq!(ids[0].chars.len(), 1);
        let mut g = Graph::new(&store);
        let x = enc.embed_token(&mut g, &ids[0], 0.0).unwrap();

        let cdim = enc.dims.char_dim;
        let ce = &store.get(enc.char_emb).value[ids[0].chars[0] * cdim..][..cdim];
        let hf = lstm_step_oracle(&store, &enc.char_fwd, ce);
        let hb = lstm_step_oracle(&store, &enc.char_bwd, ce);
        let wd = enc.dims.word_dim;
        let ch = enc.dims.char_hidden;
        let (wl, wr, bias) = (
            &store.get(enc.char_left).value,
            &store.get(enc.char_right).value,
            &store.get(enc.char_bias).value,
        );
        let word = &store.get(enc.word_emb).value[ids[0].word * wd..][..wd];
        for r in 0..wd {
            let s: f64 = bias[r]
                + (0..ch)
                    .map(|c| wl[r * ch + c] * hf[c] + wr[r * ch + c] * hb[c])
                    .sum::<f64>();
            assert!((g.value(x)[r] - (word[r] + s.tanh())).abs() < 1e-12);
        }
        let pd = enc.dims.pos_dim;
        assert_eq!(
            &g.value(x)[wd..],
            &store.get(enc.pos_emb).value[ids[0].pos * pd..][..pd]
        );
    }

    #[test]
    fn single_word_sentence() {
        let (store, enc, v) = setup::<f32>(small(), 3);
        let ids = resolve(&toks("cat_NN"), &v).unwrap();
        let mut g = Graph::inference(&store);
        let e = enc.encode(&mut g, &ids, 0.0).unwrap();
        assert_eq!((e.fwd.len(), e.bwd.len()), (2, 2));
        let sv = e.span_v(&mut g, 0, 0).unwrap();
        assert_eq!(g.dim(sv), 12);
        let sr = e.span_sr(&mut g, 0, 0).unwrap();
        assert!(g.value(sr)[..6]
            .iter()
            .chain(&g.value(sr)[12..])
            .all(|&x| x == 0.0));
        assert!(matches!(
            e.span_v(&mut g, 0, 1),
            Err(Error::SpanOutOfRange { .. })
        ));
        assert!(matches!(
            enc.encode(&mut g, &[], 0.0),
            Err(Error::EmptySentence)
        ));
    }

    #[test]
    fn span_layouts() {
        let (store, enc, v) = setup::<f64>(small(), 4);
        let ids = resolve(&toks("The_DT cat_NN sat_VBZ ._."), &v).unwrap();
        let mut g = Graph::new(&store);
        let e = enc.encode(&mut g, &ids, 0.0).unwrap();
        let h = 3;
        let sv = e.span_v(&mut g, 1, 2).unwrap();
        let sv = g.value(sv).to_vec();
        assert_eq!(&sv[..h], g.value(e.fwd[2]));
        assert_eq!(&sv[h..2 * h], g.value(e.bwd[1]));
        assert_eq!(&sv[2 * h..3 * h], g.value(e.fwd[3]));
        assert_eq!(&sv[3 * h..], g.value(e.bwd[2]));

        let full = e.span_sr(&mut g, 0, 3).unwrap();
        let full = g.value(full).to_vec();
        assert!(full[..2 * h]
            .iter()
            .chain(&full[4 * h..])
            .all(|&x| x == 0.0));
        for u in 0..h {
            assert_eq!(full[2 * h + u], g.value(e.fwd[4])[u] - g.value(e.fwd[0])[u]);
            assert_eq!(full[3 * h + u], g.value(e.bwd[0])[u] - g.value(e.bwd[4])[u]);
        }
        let mid = e.span_sr(&mut g, 1, 2).unwrap();
        let left = e.span_diff(&mut g, 0, 0).unwrap();
        let right = e.span_diff(&mut g, 3, 3).unwrap();
        assert_eq!(&g.value(mid)[..2 * h], g.value(left));
        assert_eq!(&g.value(mid)[4 * h..], g.value(right));
    }

    #[test]
    fn sentences_encode_independently() {
        let (store, enc, v) = setup::<f32>(small(), 5);
        let a = resolve(&toks("The_DT cat_NN sat_VBZ"), &v).unwrap();
        let b = resolve(&toks("cat_NN ._."), &v).unwrap();
        let run = |first: &[TokenIds], second: &[TokenIds]| {
            let mut g = Graph::inference(&store);
            let x = enc.encode(&mut g, first, 0.0).unwrap();
            let y = enc.encode(&mut g, second, 0.0).unwrap();
            let vx = x.span_v(&mut g, 0, first.len() - 1).unwrap();
            let vy = y.span_v(&mut g, 0, second.len() - 1).unwrap();
            (g.value(vx).to_vec(), g.value(vy).to_vec())
        };
        let (a1, b1) = run(&a, &b);
        let (b2, a2) = run(&b, &a);
        assert_eq!((a1, b1), (a2, b2));
    }

    #[test]
    fn scalar_head_gradient_through_encoder() {
        let (mut store, enc, v) = setup::<f64>(small(), 6);
        let ids = resolve(&toks("The_DT cat_NN sat_VBZ"), &v).unwrap();
        let report = grad_check(
            &mut store,
            |s: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
                let mut g = Graph::new(s);
                let e = enc.encode(&mut g, &ids, 0.0)?;
                let a = e.span_v(&mut g, 0, 1)?;
                let b = e.span_sr(&mut g, 1, 2)?;
                let a = g.tanh(a);
                let b = g.sum_elems(b);
                let a = g.sum_elems(a);
                let l = g.mul(a, b)?;
                Ok((g.scalar(l), g.backward(l)?))
            },
            &GradCheckOptions {
                eps: 1e-5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn pretrained_rows_and_freeze() {
        let (mut store, enc, v) = setup::<f32>(small(), 7);
        let rows = v.read_pretrained("cat 1 2 3 4\n", 4).unwrap();
        enc.load_pretrained(&mut store, &rows, true).unwrap();
        let id = v.word_id("cat", false);
        assert_eq!(
            &store.get(enc.word_emb).value[id * 4..][..4],
            &[1.0, 2.0, 3.0, 4.0]
        );
        assert!(!store.get(enc.word_emb).trainable);
        assert!(enc
            .load_pretrained(&mut store, &[(id, vec![1.0])], false)
            .is_err());
    }
}
