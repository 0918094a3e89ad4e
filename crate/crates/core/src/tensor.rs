//! Dense vectors on a reverse-mode gradient tape.
//!
//! Every learned quantity in the parser lives in a [`ParamStore`]. A forward
//! pass builds a [`Graph`] that borrows the store; each operation appends a
//! node holding its value and (when tracing) enough information to run the
//! chain rule backwards. Graph values are always 1-D; matrices only appear as
//! parameters and are consumed directly by `matvec`/`affine`, so weight
//! matrices are never copied onto the tape.
//!
//! The engine is generic over [`Real`] so the same model code runs in `f32`
//! for training and in `f64` for finite-difference checking.

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Floating point storage type for parameters and tape values.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("float literal fits")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("backward needs a scalar loss, got {0} elements")]
    NotScalar(usize),
    #[error("graph was built with tracing disabled")]
    NotTraced,
    #[error("dropout rate {0} is outside [0, 1)")]
    InvalidRate(f64),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error(
        "objective is stochastic (dropout active); gradient check needs a deterministic function"
    )]
    StochasticObjective,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// U(±sqrt(6 / (fan_in + fan_out))) over the last two dimensions.
    Glorot,
    Zeros,
    /// N(0, std^2) for every entry.
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub trainable: bool,
}

impl<T> Param<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Row length when the parameter is viewed as a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }
}

/// Named registry of every trainable tensor.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let len: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Glorot => {
                let fan_out = if shape.len() >= 2 {
                    shape[shape.len() - 2]
                } else {
                    1
                };
                let fan_in = *shape.last().unwrap_or(&1);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len)
                    .map(|_| lit(rng.gen_range(-bound..bound)))
                    .collect()
            }
            Init::Normal(std) => {
                let normal = Normal::new(0.0, std).expect("finite standard deviation");
                (0..len).map(|_| lit(normal.sample(rng))).collect()
            }
        };
        Ok(self.insert(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            trainable: true,
        }))
    }

    /// Adds a parameter with explicit contents (deserialization, tests).
    pub fn add_with_value(
        &mut self,
        name: &str,
        shape: &[usize],
        value: Vec<T>,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let expected: usize = shape.iter().product();
        if expected != value.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_with_value",
                shapes: vec![shape.to_vec(), vec![value.len()]],
            });
        }
        Ok(self.insert(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            trainable: true,
        }))
    }

    fn insert(&mut self, p: Param<T>) -> ParamId {
        let id = self.params.len();
        self.by_name.insert(p.name.clone(), id);
        self.params.push(p);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// ‖Θ‖² over trainable parameters, accumulated in f64.
    pub fn squared_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.value.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(0.0);
                v * v
            })
            .sum()
    }

    /// Copies every parameter into another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p
                        .value
                        .iter()
                        .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                        .collect(),
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    /// Set when the forward pass sampled a dropout mask.
    pub stochastic: bool,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients {
            grads: vec![None; store.len()],
            stochastic: false,
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `id`, with zeros standing in for unreachable parameters.
    pub fn dense(&self, store: &ParamStore<T>, id: ParamId) -> Vec<T> {
        self.get(id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); store.get(id).len()])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Vec<T>)> {
        self.grads
            .iter_mut()
            .enumerate()
            .filter_map(|(i, g)| g.as_mut().map(|g| (ParamId(i), g)))
    }

    pub fn squared_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum()
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(mine) => mine.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        self.stochastic |= other.stochastic;
    }

    /// Gradient buffer for `id`, zero-filled on first access.
    pub fn entry(&mut self, store: &ParamStore<T>, id: ParamId) -> &mut Vec<T> {
        if self.grads.len() < store.len() {
            self.grads.resize(store.len(), None);
        }
        self.slot(id, store.get(id).len())
    }

    fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<T> {
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

/// Node handle on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Expr(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    Lookup(ParamId, usize),
    MatVec(ParamId, Expr),
    MatVecT(ParamId, Expr),
    Affine(ParamId, Expr, ParamId),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Sum(Vec<Expr>),
    Scale(Expr, T),
    OneMinus(Expr),
    Tanh(Expr),
    Sigmoid(Expr),
    Elu(Expr),
    Log(Expr),
    Softmax(Expr),
    LogSoftmax(Expr),
    Pick(Expr, usize),
    PickNegLogSoftmax(Expr, usize),
    Concat(Vec<Expr>),
    Slice(Expr, usize),
    Dot(Expr, Expr),
    SumElems(Expr),
    Dropout(Expr, Vec<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Vec<T>,
    op: Op<T>,
}

/// A forward computation over a borrowed parameter store.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    trace: bool,
    rng: Option<ChaCha8Rng>,
    stochastic: bool,
}

impl<'p, T: Real> Graph<'p, T> {
    /// Evaluation mode with tracing: dropout is the identity.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            trace: true,
            rng: None,
            stochastic: false,
        }
    }

    /// Evaluation mode without a tape; cheapest for decoding.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            trace: false,
            rng: None,
            stochastic: false,
        }
    }

    /// Training mode: dropout masks are drawn from a generator seeded with `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            trace: true,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            stochastic: false,
        }
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, e: Expr) -> &[T] {
        &self.nodes[e.0].value
    }

    pub fn dim(&self, e: Expr) -> usize {
        self.nodes[e.0].value.len()
    }

    /// First element of `e`; intended for scalar expressions.
    pub fn scalar(&self, e: Expr) -> T {
        self.nodes[e.0].value[0]
    }

    fn push(&mut self, value: Vec<T>, op: Op<T>) -> Expr {
        let op = if self.trace { op } else { Op::Input };
        self.nodes.push(Node { value, op });
        Expr(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, es: &[Expr]) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            shapes: es.iter().map(|&e| vec![self.dim(e)]).collect(),
        }
    }

    pub fn input(&mut self, value: Vec<T>) -> Expr {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, len: usize) -> Expr {
        self.input(vec![T::zero(); len])
    }

    /// A whole parameter as a vector (biases, single vectors).
    pub fn param(&mut self, id: ParamId) -> Expr {
        let v = self.params.get(id).value.clone();
        self.push(v, Op::Param(id))
    }

    /// Row `row` of a matrix-shaped parameter (embedding lookup).
    pub fn lookup(&mut self, table: ParamId, row: usize) -> Result<Expr> {
        let p = self.params.get(table);
        let (rows, cols) = (p.rows(), p.cols());
        if row >= rows {
            return Err(TensorError::IndexOutOfRange {
                index: row,
                len: rows,
            });
        }
        let v = p.value[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(v, Op::Lookup(table, row)))
    }

    fn check_matrix(
        &self,
        op: &'static str,
        w: ParamId,
        x: Expr,
        want: usize,
    ) -> Result<(usize, usize)> {
        let p = self.params.get(w);
        if p.shape.len() != 2 || want != self.dim(x) {
            return Err(TensorError::ShapeMismatch {
                op,
                shapes: vec![p.shape.clone(), vec![self.dim(x)]],
            });
        }
        Ok((p.shape[0], p.shape[1]))
    }

    /// `W x`.
    pub fn matvec(&mut self, w: ParamId, x: Expr) -> Result<Expr> {
        let cols = self.params.get(w).cols();
        let (rows, cols) = self.check_matrix("matvec", w, x, cols)?;
        let y = matvec_raw(&self.params.get(w).value, rows, cols, self.value(x));
        Ok(self.push(y, Op::MatVec(w, x)))
    }

    /// `Wᵀ x`.
    pub fn matvec_t(&mut self, w: ParamId, x: Expr) -> Result<Expr> {
        let rows = self.params.get(w).rows();
        let (rows, cols) = self.check_matrix("matvec_t", w, x, rows)?;
        let wv = &self.params.get(w).value;
        let xv = self.value(x);
        let mut y = vec![T::zero(); cols];
        for (i, &xi) in xv.iter().enumerate() {
            let row = &wv[i * cols..(i + 1) * cols];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += wij * xi;
            }
        }
        let _ = rows;
        Ok(self.push(y, Op::MatVecT(w, x)))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, x: Expr, b: ParamId) -> Result<Expr> {
        let cols = self.params.get(w).cols();
        let (rows, cols) = self.check_matrix("affine", w, x, cols)?;
        let bias = &self.params.get(b).value;
        if bias.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                shapes: vec![vec![rows, cols], vec![bias.len()]],
            });
        }
        let mut y = matvec_raw(&self.params.get(w).value, rows, cols, self.value(x));
        y.iter_mut().zip(bias).for_each(|(a, &b)| *a += b);
        Ok(self.push(y, Op::Affine(w, x, b)))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Expr,
        b: Expr,
        f: impl Fn(T, T) -> T,
    ) -> Result<Vec<T>> {
        if self.dim(a) != self.dim(b) {
            return Err(self.mismatch(op, &[a, b]));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Sum of same-length expressions.
    pub fn sum(&mut self, xs: &[Expr]) -> Result<Expr> {
        let Some(&first) = xs.first() else {
            return Err(TensorError::ShapeMismatch {
                op: "sum",
                shapes: vec![],
            });
        };
        let len = self.dim(first);
        if xs.iter().any(|&x| self.dim(x) != len) {
            return Err(self.mismatch("sum", xs));
        }
        let mut v = vec![T::zero(); len];
        for &x in xs {
            v.iter_mut().zip(self.value(x)).for_each(|(a, &b)| *a += b);
        }
        Ok(self.push(v, Op::Sum(xs.to_vec())))
    }

    pub fn scale(&mut self, a: Expr, c: T) -> Expr {
        let v = self.value(a).iter().map(|&x| x * c).collect();
        self.push(v, Op::Scale(a, c))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Expr) -> Expr {
        let v = self.value(a).iter().map(|&x| T::one() - x).collect();
        self.push(v, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Expr) -> Expr {
        let v = self
            .value(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { x.exp_m1() })
            .collect();
        self.push(v, Op::Elu(a))
    }

    pub fn log(&mut self, a: Expr) -> Expr {
        let v = self.value(a).iter().map(|x| x.ln()).collect();
        self.push(v, Op::Log(a))
    }

    pub fn softmax(&mut self, a: Expr) -> Expr {
        let v = softmax(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Expr) -> Expr {
        let v = log_softmax(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn pick(&mut self, a: Expr, index: usize) -> Result<Expr> {
        let len = self.dim(a);
        if index >= len {
            return Err(TensorError::IndexOutOfRange { index, len });
        }
        let v = vec![self.value(a)[index]];
        Ok(self.push(v, Op::Pick(a, index)))
    }

    /// `-log softmax(a)[index]`, computed stably.
    pub fn pick_neg_log_softmax(&mut self, a: Expr, index: usize) -> Result<Expr> {
        let len = self.dim(a);
        if index >= len {
            return Err(TensorError::IndexOutOfRange { index, len });
        }
        let ls = log_softmax(self.value(a));
        Ok(self.push(vec![-ls[index]], Op::PickNegLogSoftmax(a, index)))
    }

    pub fn concat(&mut self, xs: &[Expr]) -> Expr {
        let mut v = Vec::with_capacity(xs.iter().map(|&x| self.dim(x)).sum());
        for &x in xs {
            v.extend_from_slice(self.value(x));
        }
        self.push(v, Op::Concat(xs.to_vec()))
    }

    pub fn slice(&mut self, a: Expr, start: usize, len: usize) -> Result<Expr> {
        let dim = self.dim(a);
        if start + len > dim {
            return Err(TensorError::IndexOutOfRange {
                index: start + len,
                len: dim,
            });
        }
        let v = self.value(a)[start..start + len].to_vec();
        Ok(self.push(v, Op::Slice(a, start)))
    }

    pub fn dot(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        if self.dim(a) != self.dim(b) {
            return Err(self.mismatch("dot", &[a, b]));
        }
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .sum();
        Ok(self.push(vec![s], Op::Dot(a, b)))
    }

    /// Sum of the elements of `a` as a scalar.
    pub fn sum_elems(&mut self, a: Expr) -> Expr {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![s], Op::SumElems(a))
    }

    /// Inverted dropout: identity outside training mode or at rate 0.
    pub fn dropout(&mut self, a: Expr, rate: f64) -> Result<Expr> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidRate(rate));
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(a);
        };
        if rate == 0.0 {
            return Ok(a);
        }
        let keep: T = lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.nodes[a.0].value.len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        self.stochastic = true;
        let v = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        Ok(self.push(v, Op::Dropout(a, mask)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Expr) -> Result<Gradients<T>> {
        if self.dim(loss) != 1 {
            return Err(TensorError::NotScalar(self.dim(loss)));
        }
        if !self.trace {
            return Err(TensorError::NotTraced);
        }
        let mut pg = Gradients {
            grads: vec![None; self.params.len()],
            stochastic: self.stochastic,
        };
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        fn acc<T: Real>(grads: &mut [Option<Vec<T>>], e: Expr, len: usize) -> &mut Vec<T> {
            grads[e.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let slot = pg.slot(*p, g.len());
                    slot.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
                }
                Op::Lookup(p, row) => {
                    let param = self.params.get(*p);
                    let cols = param.cols();
                    let slot = pg.slot(*p, param.len());
                    slot[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, &b)| *a += b);
                }
                Op::MatVec(w, x) | Op::Affine(w, x, _) => {
                    let param = self.params.get(*w);
                    let (rows, cols) = (param.shape[0], param.shape[1]);
                    let xv = &self.nodes[x.0].value;
                    {
                        let dw = pg.slot(*w, param.len());
                        for i in 0..rows {
                            let gi = g[i];
                            if gi == T::zero() {
                                continue;
                            }
                            let row = &mut dw[i * cols..(i + 1) * cols];
                            row.iter_mut().zip(xv).for_each(|(a, &b)| *a += gi * b);
                        }
                    }
                    let dx = acc(&mut grads, *x, cols);
                    for (&gi, row) in g.iter().zip(param.value.chunks(cols)) {
                        if gi == T::zero() {
                            continue;
                        }
                        dx.iter_mut().zip(row).for_each(|(a, &b)| *a += gi * b);
                    }
                    if let Op::Affine(_, _, b) = &node.op {
                        let db = pg.slot(*b, rows);
                        db.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
                    }
                }
                Op::MatVecT(w, x) => {
                    let param = self.params.get(*w);
                    let (rows, cols) = (param.shape[0], param.shape[1]);
                    let xv = &self.nodes[x.0].value;
                    {
                        let dw = pg.slot(*w, param.len());
                        for i in 0..rows {
                            let xi = xv[i];
                            let row = &mut dw[i * cols..(i + 1) * cols];
                            row.iter_mut().zip(&g).for_each(|(a, &b)| *a += xi * b);
                        }
                    }
                    let dx = acc(&mut grads, *x, rows);
                    for (d, row) in dx.iter_mut().zip(param.value.chunks(cols)) {
                        *d += row.iter().zip(&g).map(|(&a, &b)| a * b).sum();
                    }
                }
                Op::Add(a, b) => {
                    for e in [a, b] {
                        acc(&mut grads, *e, g.len())
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(x, &d)| *x += d);
                    }
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, &d)| *x += d);
                    acc(&mut grads, *b, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, &d)| *x = *x - d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<T> = g.iter().zip(bv).map(|(&d, &v)| d * v).collect();
                    let db: Vec<T> = g.iter().zip(av).map(|(&d, &v)| d * v).collect();
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&da)
                        .for_each(|(x, &d)| *x += d);
                    acc(&mut grads, *b, g.len())
                        .iter_mut()
                        .zip(&db)
                        .for_each(|(x, &d)| *x += d);
                }
                Op::Sum(xs) => {
                    for e in xs {
                        acc(&mut grads, *e, g.len())
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(x, &d)| *x += d);
                    }
                }
                Op::Scale(a, c) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, &d)| *x += d * *c);
                }
                Op::OneMinus(a) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, &d)| *x = *x - d);
                }
                Op::Tanh(a) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(x, (&d, &t))| *x += d * (T::one() - t * t));
                }
                Op::Sigmoid(a) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(x, (&d, &s))| *x += d * s * (T::one() - s));
                }
                Op::Elu(a) => {
                    let av = &self.nodes[a.0].value;
                    let local: Vec<T> = av
                        .iter()
                        .zip(y)
                        .map(|(&x, &v)| {
                            if x > T::zero() {
                                T::one()
                            } else {
                                v + T::one()
                            }
                        })
                        .collect();
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(&local))
                        .for_each(|(x, (&d, &l))| *x += d * l);
                }
                Op::Log(a) => {
                    let av = &self.nodes[a.0].value;
                    let local: Vec<T> = g.iter().zip(av).map(|(&d, &v)| d / v).collect();
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(&local)
                        .for_each(|(x, &d)| *x += d);
                }
                Op::Softmax(a) => {
                    let gy: T = g.iter().zip(y).map(|(&d, &s)| d * s).sum();
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(x, (&d, &s))| *x += s * (d - gy));
                }
                Op::LogSoftmax(a) => {
                    let total: T = g.iter().copied().sum();
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(y))
                        .for_each(|(x, (&d, &l))| *x += d - l.exp() * total);
                }
                Op::Pick(a, index) => {
                    let len = self.dim(*a);
                    acc(&mut grads, *a, len)[*index] += g[0];
                }
                Op::PickNegLogSoftmax(a, index) => {
                    let len = self.dim(*a);
                    let probs = softmax(&self.nodes[a.0].value);
                    let d = g[0];
                    let dx = acc(&mut grads, *a, len);
                    for (k, (x, &p)) in dx.iter_mut().zip(&probs).enumerate() {
                        let target = if k == *index { T::one() } else { T::zero() };
                        *x += d * (p - target);
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for e in xs {
                        let len = self.dim(*e);
                        acc(&mut grads, *e, len)
                            .iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, &d)| *x += d);
                        offset += len;
                    }
                }
                Op::Slice(a, start) => {
                    let len = self.dim(*a);
                    acc(&mut grads, *a, len)[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(x, &d)| *x += d);
                }
                Op::Dot(a, b) => {
                    let d = g[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<T> = bv.iter().map(|&v| d * v).collect();
                    let db: Vec<T> = av.iter().map(|&v| d * v).collect();
                    acc(&mut grads, *a, da.len())
                        .iter_mut()
                        .zip(&da)
                        .for_each(|(x, &v)| *x += v);
                    acc(&mut grads, *b, db.len())
                        .iter_mut()
                        .zip(&db)
                        .for_each(|(x, &v)| *x += v);
                }
                Op::SumElems(a) => {
                    let d = g[0];
                    let len = self.dim(*a);
                    acc(&mut grads, *a, len).iter_mut().for_each(|x| *x += d);
                }
                Op::Dropout(a, mask) => {
                    acc(&mut grads, *a, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(mask))
                        .for_each(|(x, (&d, &m))| *x += d * m);
                }
            }
        }
        for (id, p) in self.params.iter() {
            if !p.trainable {
                pg.grads[id.0] = None;
            }
        }
        Ok(pg)
    }
}

fn matvec_raw<T: Real>(w: &[T], rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    (0..rows)
        .map(|i| {
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(x)
                .map(|(&a, &b)| a * b)
                .sum()
        })
        .collect()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    xs.iter().map(|&x| x - lse).collect()
}

/// Options for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-3,
            floor: 1e-6,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

/// Compares the analytic gradient returned by `f` against central differences.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, floor)`;
/// the report carries the maximum over all checked coordinates.
pub fn grad_check<F, E>(
    params: &mut ParamStore<f64>,
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&ParamStore<f64>) -> Result<(f64, Gradients<f64>), E>,
    E: From<TensorError>,
{
    let (base, analytic) = f(params)?;
    if analytic.stochastic {
        return Err(TensorError::StochasticObjective.into());
    }
    let (again, _) = f(params)?;
    if again != base {
        return Err(TensorError::StochasticObjective.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.get(id).trainable {
            continue;
        }
        let len = params.get(id).len();
        let grad = analytic.dense(params, id);
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < len => rand::seq::index::sample(&mut rng, len, m).into_vec(),
            _ => (0..len).collect(),
        };
        for c in coords {
            let orig = params.get(id).value[c];
            params.get_mut(id).value[c] = orig + opts.eps;
            let (plus, _) = f(params)?;
            params.get_mut(id).value[c] = orig - opts.eps;
            let (minus, _) = f(params)?;
            params.get_mut(id).value[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.coords_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), c));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store_with(values: &[(&str, &[usize], Vec<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape, v) in values {
            s.add_with_value(name, shape, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn activation_fixed_points() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let z = g.input(vec![0.0, -1.0]);
        let t = g.tanh(z);
        let e = g.elu(z);
        assert_eq!(g.value(t)[0], 0.0);
        assert_eq!(g.value(e)[0], 0.0);
        assert!((g.value(e)[1] - (-0.63212)).abs() < 1e-5);
        assert!((g.value(e)[1] - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        let one = g.input(vec![3.7]);
        let sm = g.softmax(one);
        assert_eq!(g.value(sm), [1.0]);
    }

    #[test]
    fn square_derivative() {
        let s = store_with(&[("x", &[1], vec![3.0])]);
        let mut g = Graph::new(&s);
        let x = g.param(s.id("x").unwrap());
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(s.id("x").unwrap()).unwrap(), [6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let s = store_with(&[("v", &[4], vec![0.3, -1.2, 2.0, 0.5])]);
        let mut g = Graph::new(&s);
        let v = g.param(s.id("v").unwrap());
        let sm = g.softmax(v);
        let total = g.sum_elems(sm);
        let grads = g.backward(total).unwrap();
        assert!(grads
            .get(s.id("v").unwrap())
            .unwrap()
            .iter()
            .all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn unreachable_params_have_no_gradient() {
        let s = store_with(&[("a", &[2], vec![1.0, 2.0]), ("b", &[2], vec![3.0, 4.0])]);
        let mut g = Graph::new(&s);
        let a = g.param(s.id("a").unwrap());
        let l = g.sum_elems(a);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(s.id("b").unwrap()).is_none());
        assert_eq!(grads.dense(&s, s.id("b").unwrap()), [0.0, 0.0]);
    }

    #[test]
    fn backward_errors() {
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s);
        let v = g.input(vec![1.0, 2.0]);
        assert_eq!(g.backward(v).unwrap_err(), TensorError::NotScalar(2));
        let mut h = Graph::inference(&s);
        let x = h.input(vec![1.0]);
        assert_eq!(h.backward(x).unwrap_err(), TensorError::NotTraced);
        let a = g.input(vec![1.0; 3]);
        assert!(matches!(
            g.add(v, a),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn dropout_identities() {
        let s = ParamStore::<f32>::new();
        let mut g = Graph::training(&s, 1);
        let x = g.input(vec![1.0; 64]);
        assert_eq!(g.dropout(x, 0.0).unwrap(), x);
        assert_eq!(
            g.dropout(x, 1.0).unwrap_err(),
            TensorError::InvalidRate(1.0)
        );
        let d = g.dropout(x, 0.5).unwrap();
        assert!(g.value(d).iter().all(|&v| v == 0.0 || v == 2.0));
        let mut e = Graph::new(&s);
        let y = e.input(vec![1.0; 8]);
        assert_eq!(e.dropout(y, 0.9).unwrap(), y);
    }

    fn affine_tanh(s: &ParamStore<f64>) -> Result<(f64, Gradients<f64>)> {
        let mut g = Graph::new(s);
        let x = g.param(s.id("x")?);
        let h = g.affine(s.id("W")?, x, s.id("b")?)?;
        let t = g.tanh(h);
        let l = g.sum_elems(t);
        let l = g.mul(l, l)?;
        Ok((g.scalar(l), g.backward(l)?))
    }

    #[test]
    fn grad_check_affine_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f64>::new();
        s.add("W", &[3, 4], Init::Glorot, &mut rng).unwrap();
        s.add("b", &[3], Init::Normal(0.5), &mut rng).unwrap();
        s.add("x", &[4], Init::Normal(1.0), &mut rng).unwrap();
        let report = grad_check(&mut s, affine_tanh, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert_eq!(report.coords_checked, 12 + 3 + 4);
    }

    #[test]
    fn grad_check_constant_function() {
        let mut s = store_with(&[("x", &[2], vec![1.0, 2.0])]);
        let report = grad_check(
            &mut s,
            |s: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
                let mut g = Graph::new(s);
                let c = g.input(vec![5.0]);
                Ok((g.scalar(c), Gradients::zeros_like(s)))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn grad_check_rejects_dropout() {
        let mut s = store_with(&[("x", &[8], vec![1.0; 8])]);
        let err = grad_check(
            &mut s,
            |s: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
                let mut g = Graph::training(s, 9);
                let x = g.param(s.id("x")?);
                let d = g.dropout(x, 0.5)?;
                let l = g.sum_elems(d);
                Ok((g.scalar(l), g.backward(l)?))
            },
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err, TensorError::StochasticObjective);
    }

    #[test]
    fn tracing_does_not_change_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::<f32>::new();
        let w = s.add("W", &[5, 3], Init::Glorot, &mut rng).unwrap();
        let b = s.add("b", &[5], Init::Normal(0.1), &mut rng).unwrap();
        let run = |trace: bool| {
            let mut g = Graph::new(&s).with_trace(trace);
            let x = g.input(vec![0.1, -0.7, 2.0]);
            let h = g.affine(w, x, b).unwrap();
            let e = g.elu(h);
            let ls = g.log_softmax(e);
            g.value(ls).to_vec()
        };
        assert_eq!(run(true), run(false));
    }

    /// Builds `sum(weights ⊙ op(a, b))` for primitive `which`.
    fn primitive(
        s: &ParamStore<f64>,
        which: usize,
        weights: &[f64],
    ) -> Result<(f64, Gradients<f64>)> {
        let mut g = Graph::new(s);
        let a = g.param(s.id("a")?);
        let b = g.param(s.id("b")?);
        let w = s.id("W")?;
        let out = match which {
            0 => g.matvec(w, a)?,
            1 => g.matvec_t(w, b)?,
            2 => g.affine(w, a, s.id("c")?)?,
            3 => g.add(a, a)?,
            4 => g.sub(a, b)?,
            5 => g.mul(a, b)?,
            6 => g.tanh(a),
            7 => g.sigmoid(a),
            8 => g.elu(a),
            9 => {
                let sm = g.softmax(a);
                g.log(sm)
            }
            10 => g.softmax(a),
            11 => g.log_softmax(a),
            12 => {
                let n = g.dim(a);
                let c = g.concat(&[a, b]);
                g.slice(c, 1, n)?
            }
            13 => {
                let d = g.dot(a, b)?;
                let p = g.pick_neg_log_softmax(a, 0)?;
                let q = g.pick(b, 0)?;
                let s = g.sum(&[d, p, q])?;
                let t = g.one_minus(s);
                g.scale(t, 0.5)
            }
            _ => unreachable!(),
        };
        let dim = g.dim(out);
        let wts = g.input(weights[..dim].to_vec());
        let prod = g.mul(out, wts)?;
        let l = g.sum_elems(prod);
        Ok((g.scalar(l), g.backward(l)?))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn primitives_match_finite_differences(seed in 0u64..10_000, rows in 1usize..6, cols in 1usize..6, which in 0usize..14) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ParamStore::<f64>::new();
            let n = if matches!(which, 0 | 2) { cols } else { rows };
            s.add("a", &[n], Init::Normal(1.0), &mut rng).unwrap();
            s.add("b", &[if which == 1 { rows } else { n }], Init::Normal(1.0), &mut rng).unwrap();
            s.add("W", &[rows, cols], Init::Normal(1.0), &mut rng).unwrap();
            s.add("c", &[rows], Init::Normal(1.0), &mut rng).unwrap();
            let weights: Vec<f64> = (0..16).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            let opts = GradCheckOptions { eps: 1e-5, floor: 1e-6, ..Default::default() };
            let report = grad_check(&mut s, |s: &ParamStore<f64>| primitive(s, which, &weights), &opts).unwrap();
            prop_assert!(report.max_rel_error < 1e-4, "primitive {} {:?}", which, report);
        }

        #[test]
        fn softmax_is_a_distribution(xs in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&xs);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|&v| v > 0.0));
        }
    }
}
