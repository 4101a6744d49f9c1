//! Eager computation graph with reverse-mode differentiation.
//!
//! Every value is a row-major 2-D array. Operations run immediately and are
//! recorded on the tape; [`Tape::backward`] walks the record in reverse.
//! Shape mismatches are programming errors and panic with the op name.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics observed by a training-mode batch-norm, to be folded
/// into the running buffers after the optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StatUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    /// Unbiased (n−1) variance.
    pub batch_var: Vec<f64>,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    ClampLog(Var, f64),
    Square(Var),
    FloorMax(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNormRows(Var, Vec<T>),
    BatchNormCols(Var, Vec<T>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    HuberPairs(Var, f64),
    BceWithLogits(Var, Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::ClampLog(..) => "clamp_log",
            Op::Square(..) => "square",
            Op::FloorMax(..) => "floor_max",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::LayerNormRows(..) => "layer_norm_rows",
            Op::BatchNormCols(..) => "batch_norm",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(..) => "reshape",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::SumCols(..) => "sum_cols",
            Op::HuberPairs(..) => "huber_pairs",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    param_of: Vec<Option<ParamId>>,
    training: bool,
    rng: ChaCha8Rng,
    stat_updates: Vec<StatUpdate>,
    perturbation: Option<(ParamId, usize, f64)>,
    nonfinite: Option<(usize, &'static str)>,
}

impl<T: Scalar> Tape<T> {
    /// Inference tape: dropout is the identity and batch-norm uses running statistics.
    pub fn eval() -> Self {
        Self::with_mode(false, 0)
    }

    /// Training tape; `seed` drives dropout masks.
    pub fn train(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    fn with_mode(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            param_of: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
            perturbation: None,
            nonfinite: None,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Offset one parameter element by `delta` when it is bound. Used by
    /// finite-difference checks; must be set before the parameter is first used.
    pub fn set_perturbation(&mut self, param: ParamId, index: usize, delta: f64) {
        self.perturbation = Some((param, index, delta));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First node (index, op name) whose value contained NaN or ±Inf.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.nonfinite
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn push_stat_update(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "scalar() on a {}x{} node", n.rows, n.cols);
        n.value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        if self.nonfinite.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.nonfinite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            needs_grad,
        });
        self.param_of.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(r, c, value, op, ng)
    }

    fn assert_same(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    // ----------------------------------------------------------------- leaves

    /// Constant leaf; no gradient is tracked.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        assert_eq!(data.len(), rows * cols, "input: {} values for {rows}x{cols}", data.len());
        self.push(rows, cols, data, Op::Input, false)
    }

    pub fn input_f32(&mut self, rows: usize, cols: usize, data: &[f32]) -> Var {
        self.input(rows, cols, data.iter().map(|&x| T::from_f32(x)).collect())
    }

    /// Leaf with gradient tracking that is not a model parameter.
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Var {
        assert_eq!(data.len(), rows * cols);
        self.push(rows, cols, data, Op::Input, true)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(rows, cols, vec![T::zero(); rows * cols])
    }

    /// Bind a parameter (once per tape; later calls return the same node).
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = ps.get(id);
        let mut value: Vec<T> = p.data.iter().map(|&x| T::from_f32(x)).collect();
        if let Some((pid, idx, delta)) = self.perturbation {
            if pid == id {
                value[idx] += T::from_f64(delta);
            }
        }
        let v = self.push(p.rows, p.cols, value, Op::Param, p.trainable);
        self.param_of[v.0] = Some(id);
        self.bound.insert(id, v);
        v
    }

    // ------------------------------------------------------------ linear algebra

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul: {m}x{k} · {k2}x{n}");
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(m, n, out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push(c, r, out, Op::Transpose(a), ng)
    }

    // ------------------------------------------------------------- elementwise

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "add");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "sub");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same(a, b, "mul");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(r, c, out, Op::Mul(a, b), ng)
    }

    /// `a (n×m) + row (1×m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row: {r}x{c} + {:?}", self.shape(row));
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(row);
        self.push(r, c, out, Op::AddRow(a, row), ng)
    }

    /// `a (n×m) ⊙ row (1×m)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row: {r}x{c} * {:?}", self.shape(row));
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x * y))
            .collect();
        let ng = self.ng(a) || self.ng(row);
        self.push(r, c, out, Op::MulRow(a, row), ng)
    }

    /// `a (n×m) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(col), (r, 1), "mul_col: {r}x{c} * {:?}", self.shape(col));
        let cv = self.value(col);
        let out = self
            .value(a)
            .chunks(c)
            .zip(cv)
            .flat_map(|(chunk, &y)| chunk.iter().map(move |&x| x * y))
            .collect();
        let ng = self.ng(a) || self.ng(col);
        self.push(r, c, out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let kt = T::from_f64(k);
        self.unary(a, Op::Scale(a, k), |x| x * kt)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let kt = T::from_f64(k);
        self.unary(a, Op::AddScalar(a), |x| x + kt)
    }

    /// `k − a`
    pub fn rsub_scalar(&mut self, k: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, k)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// `ln(max(a, eps))`; the gradient is zero where the clamp is active.
    pub fn clamp_log(&mut self, a: Var, eps: f64) -> Var {
        let e = T::from_f64(eps);
        self.unary(a, Op::ClampLog(a, eps), |x| if x < e { e.ln() } else { x.ln() })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// `max(a, floor)`; the gradient is zero wherever `a ≤ floor`.
    pub fn floor_max(&mut self, a: Var, floor: f64) -> Var {
        let f = T::from_f64(floor);
        self.unary(a, Op::FloorMax(a, floor), |x| if x > f { x } else { f })
    }

    // ------------------------------------------------------------ row-wise ops

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row standardization without affine terms (biased variance).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        let mut inv = Vec::with_capacity(r);
        let n = T::from_f64(c as f64);
        let e = T::from_f64(eps);
        for row in out.chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let is = (var + e).sqrt().recip();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv.push(is);
        }
        let ng = self.ng(a);
        self.push(r, c, out, Op::LayerNormRows(a, inv), ng)
    }

    /// Per-column standardization over the rows (training-mode batch norm,
    /// no affine terms). Returns the output plus the batch mean and the
    /// biased batch variance of every column.
    pub fn batch_norm_cols(&mut self, a: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let (r, c) = self.shape(a);
        assert!(r >= 2, "batch_norm_cols needs at least 2 rows");
        let src = self.value(a);
        let n = T::from_f64(r as f64);
        let mut mean = vec![T::zero(); c];
        for row in src.chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); c];
        for row in src.chunks(c) {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v = *v / n);
        let e = T::from_f64(eps);
        let inv: Vec<T> = var.iter().map(|&v| (v + e).sqrt().recip()).collect();
        let out = src
            .chunks(c)
            .flat_map(|row| {
                row.iter()
                    .zip(&mean)
                    .zip(&inv)
                    .map(|((&x, &m), &is)| (x - m) * is)
            })
            .collect();
        let ng = self.ng(a);
        let v = self.push(r, c, out, Op::BatchNormCols(a, inv), ng);
        (
            v,
            mean.iter().map(|m| m.as_f64()).collect(),
            var.iter().map(|v| v.as_f64()).collect(),
        )
    }

    // ------------------------------------------------------------ structural

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, r, "concat_cols: row mismatch {pr} vs {r}");
                pc
            })
            .collect();
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice_cols: {start}+{len} > {c}");
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.ng(a);
        self.push(r, len, out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let c = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows: col mismatch {pc} vs {c}");
            out.extend_from_slice(self.value(p));
            r += pr;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(r, c, out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= r, "slice_rows: {start}+{len} > {r}");
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        self.push(len, c, out, Op::SliceRows(a, start), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape: {r}x{c} -> {rows}x{cols}");
        let out = self.value(a).to_vec();
        let ng = self.ng(a);
        self.push(rows, cols, out, Op::Reshape(a), ng)
    }

    // ------------------------------------------------------------ reductions

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::MeanAll(a), ng)
    }

    /// Sum across columns: `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).chunks(c).map(|row| row.iter().copied().sum::<T>()).collect();
        let ng = self.ng(a);
        self.push(r, 1, out, Op::SumCols(a), ng)
    }

    // ------------------------------------------------------------ fused losses

    /// Huber penalty on consecutive column pairs: `n×2J → n×J`, where each
    /// pair is treated as a 2-vector residual `r`:
    /// `‖r‖²/(2δ)` if `‖r‖ ≤ δ`, else `‖r‖ − δ/2`.
    pub fn huber_pairs(&mut self, a: Var, delta: f64) -> Var {
        let (r, c) = self.shape(a);
        assert!(c % 2 == 0, "huber_pairs: odd column count {c}");
        let d = T::from_f64(delta);
        let two = T::from_f64(2.0);
        let out = self
            .value(a)
            .chunks(2)
            .map(|p| {
                let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if norm <= d {
                    norm * norm / (two * d)
                } else {
                    norm - d / two
                }
            })
            .collect();
        let ng = self.ng(a);
        self.push(r, c / 2, out, Op::HuberPairs(a, delta), ng)
    }

    /// Elementwise numerically stable `BCE(σ(z), y)`; `targets` is treated as constant.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Var {
        self.assert_same(logits, targets, "bce_with_logits");
        let (r, c) = self.shape(logits);
        let out = self
            .value(logits)
            .iter()
            .zip(self.value(targets))
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .collect();
        let ng = self.ng(logits);
        self.push(r, c, out, Op::BceWithLogits(logits, targets), ng)
    }

    // ------------------------------------------------------------ stochastic

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let (r, c) = self.shape(a);
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..r * c)
            .map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.input(r, c, mask);
        self.mul(a, m)
    }

    /// Standard-normal draws from the tape's generator.
    pub fn normal_noise(&mut self, rows: usize, cols: usize) -> Vec<T> {
        (0..rows * cols)
            .map(|_| T::from_f64(standard_normal(&mut self.rng)))
            .collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    // ------------------------------------------------------------ backward

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.shape(root), (1, 1), "backward from non-scalar node");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = &node.value;
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.ng(*a) {
                    let da = acc(grads, *a, m * k);
                    T::gemm(m, n, k, g, false, self.value(*b), true, da, true);
                }
                if self.ng(*b) {
                    let db = acc(grads, *b, k * n);
                    T::gemm(k, m, n, self.value(*a), true, g, false, db, true);
                }
            }
            Op::Transpose(a) => {
                if self.ng(*a) {
                    let da = acc(grads, *a, rows * cols);
                    // node is rows×cols; input is cols×rows
                    for i in 0..rows {
                        for j in 0..cols {
                            da[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.ng(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.ng(*b) {
                    let db = acc(grads, *b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, &x)| *d -= x);
                }
            }
            Op::Mul(a, b) => {
                // a and b may be the same node; compute both before accumulating.
                let ca: Option<Vec<T>> = self
                    .ng(*a)
                    .then(|| g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect());
                let cb: Option<Vec<T>> = self
                    .ng(*b)
                    .then(|| g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect());
                if let Some(c) = ca {
                    add_into(acc(grads, *a, c.len()), &c);
                }
                if let Some(c) = cb {
                    add_into(acc(grads, *b, c.len()), &c);
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.ng(*row) {
                    let dr = acc(grads, *row, cols);
                    for chunk in g.chunks(cols) {
                        add_into(dr, chunk);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if self.ng(*a) {
                    let da = acc(grads, *a, g.len());
                    for (dchunk, gchunk) in da.chunks_mut(cols).zip(g.chunks(cols)) {
                        for ((d, &x), &r) in dchunk.iter_mut().zip(gchunk).zip(rv) {
                            *d += x * r;
                        }
                    }
                }
                if self.ng(*row) {
                    let av = self.value(*a);
                    let mut contrib = vec![T::zero(); cols];
                    for (gchunk, achunk) in g.chunks(cols).zip(av.chunks(cols)) {
                        for ((c, &x), &aa) in contrib.iter_mut().zip(gchunk).zip(achunk) {
                            *c += x * aa;
                        }
                    }
                    add_into(acc(grads, *row, cols), &contrib);
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col);
                if self.ng(*a) {
                    let da = acc(grads, *a, g.len());
                    for ((dchunk, gchunk), &s) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(cv) {
                        dchunk.iter_mut().zip(gchunk).for_each(|(d, &x)| *d += x * s);
                    }
                }
                if self.ng(*col) {
                    let av = self.value(*a);
                    let contrib: Vec<T> = g
                        .chunks(cols)
                        .zip(av.chunks(cols))
                        .map(|(gc, ac)| gc.iter().zip(ac).map(|(&x, &y)| x * y).sum::<T>())
                        .collect();
                    add_into(acc(grads, *col, rows), &contrib);
                }
            }
            Op::Scale(a, k) => {
                if self.ng(*a) {
                    let kt = T::from_f64(*k);
                    let da = acc(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, &x)| *d += x * kt);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if self.ng(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
            }
            Op::Tanh(a) => self.elementwise_back(*a, g, grads, |i, x| x * (T::one() - y[i] * y[i])),
            Op::Sigmoid(a) => self.elementwise_back(*a, g, grads, |i, x| x * y[i] * (T::one() - y[i])),
            Op::Exp(a) => self.elementwise_back(*a, g, grads, |i, x| x * y[i]),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.elementwise_back(*a, g, grads, |i, x| if av[i] > T::zero() { x } else { T::zero() })
            }
            Op::ClampLog(a, eps) => {
                let av = self.value(*a);
                let e = T::from_f64(*eps);
                self.elementwise_back(*a, g, grads, |i, x| if av[i] < e { T::zero() } else { x / av[i] })
            }
            Op::Square(a) => {
                let av = self.value(*a);
                let two = T::from_f64(2.0);
                self.elementwise_back(*a, g, grads, |i, x| two * av[i] * x)
            }
            Op::FloorMax(a, floor) => {
                let av = self.value(*a);
                let f = T::from_f64(*floor);
                self.elementwise_back(*a, g, grads, |i, x| if av[i] > f { x } else { T::zero() })
            }
            Op::SoftmaxRows(a) => {
                if self.ng(*a) {
                    let da = acc(grads, *a, g.len());
                    for ((dc, gc), yc) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot = gc.iter().zip(yc).map(|(&x, &s)| x * s).sum::<T>();
                        for ((d, &x), &s) in dc.iter_mut().zip(gc).zip(yc) {
                            *d += s * (x - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                if self.ng(*a) {
                    let da = acc(grads, *a, g.len());
                    for ((dc, gc), yc) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let total = gc.iter().copied().sum::<T>();
                        for ((d, &x), &ly) in dc.iter_mut().zip(gc).zip(yc) {
                            *d += x - ly.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNormRows(a, inv) => {
                if self.ng(*a) {
                    let n = T::from_f64(cols as f64);
                    let da = acc(grads, *a, g.len());
                    for (((dc, gc), yc), &is) in da
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(y.chunks(cols))
                        .zip(inv)
                    {
                        let mg = gc.iter().copied().sum::<T>() / n;
                        let mgy = gc.iter().zip(yc).map(|(&x, &s)| x * s).sum::<T>() / n;
                        for ((d, &x), &s) in dc.iter_mut().zip(gc).zip(yc) {
                            *d += is * (x - mg - s * mgy);
                        }
                    }
                }
            }
            Op::BatchNormCols(a, inv) => {
                if self.ng(*a) {
                    let n = T::from_f64(rows as f64);
                    let mut mg = vec![T::zero(); cols];
                    let mut mgy = vec![T::zero(); cols];
                    for (gc, yc) in g.chunks(cols).zip(y.chunks(cols)) {
                        for j in 0..cols {
                            mg[j] += gc[j];
                            mgy[j] += gc[j] * yc[j];
                        }
                    }
                    mg.iter_mut().for_each(|x| *x = *x / n);
                    mgy.iter_mut().for_each(|x| *x = *x / n);
                    let da = acc(grads, *a, g.len());
                    for ((dc, gc), yc) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        for j in 0..cols {
                            dc[j] += inv[j] * (gc[j] - mg[j] - yc[j] * mgy[j]);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.ng(p) {
                        let dp = acc(grads, p, rows * w);
                        for i in 0..rows {
                            add_into(&mut dp[i * w..(i + 1) * w], &g[i * cols + offset..i * cols + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if self.ng(*a) {
                    let ac = self.shape(*a).1;
                    let da = acc(grads, *a, rows * ac);
                    for i in 0..rows {
                        add_into(&mut da[i * ac + start..i * ac + start + cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.ng(p) {
                        add_into(acc(grads, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                if self.ng(*a) {
                    let total = self.value(*a).len();
                    let da = acc(grads, *a, total);
                    add_into(&mut da[start * cols..(start + rows) * cols], g);
                }
            }
            Op::SumAll(a) => {
                if self.ng(*a) {
                    let da = acc(grads, *a, self.value(*a).len());
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanAll(a) => {
                if self.ng(*a) {
                    let len = self.value(*a).len();
                    let share = g[0] / T::from_f64(len as f64);
                    let da = acc(grads, *a, len);
                    da.iter_mut().for_each(|d| *d += share);
                }
            }
            Op::SumCols(a) => {
                if self.ng(*a) {
                    let ac = self.shape(*a).1;
                    let da = acc(grads, *a, rows * ac);
                    for (dc, &x) in da.chunks_mut(ac).zip(g) {
                        dc.iter_mut().for_each(|d| *d += x);
                    }
                }
            }
            Op::HuberPairs(a, delta) => {
                if self.ng(*a) {
                    let d = T::from_f64(*delta);
                    let av = self.value(*a);
                    let da = acc(grads, *a, av.len());
                    for ((dp, p), &x) in da.chunks_mut(2).zip(av.chunks(2)).zip(g) {
                        let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
                        let denom = if norm <= d { d } else { norm };
                        dp[0] += x * p[0] / denom;
                        dp[1] += x * p[1] / denom;
                    }
                }
            }
            Op::BceWithLogits(z, t) => {
                if self.ng(*z) {
                    let zv = self.value(*z);
                    let tv = self.value(*t);
                    let dz = acc(grads, *z, zv.len());
                    for ((d, (&zz, &yy)), &x) in dz.iter_mut().zip(zv.iter().zip(tv)).zip(g) {
                        *d += x * (sigmoid(zz) - yy);
                    }
                }
            }
        }
    }

    fn elementwise_back(&self, a: Var, g: &[T], grads: &mut [Option<Vec<T>>], f: impl Fn(usize, T) -> T) {
        if self.ng(a) {
            let da = acc(grads, a, g.len());
            for (i, (d, &x)) in da.iter_mut().zip(g).enumerate() {
                *d += f(i, x);
            }
        }
    }

    /// The parameter a node was bound from, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        self.param_of[v.0]
    }

    /// Bound parameter nodes in binding order.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_of
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|id| (id, Var(i))))
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` did not influence the root.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients aligned with `ps`; unused parameters get `None`.
    pub fn for_params(&self, tape: &Tape<T>, ps: &ParamSet) -> Vec<Option<Vec<f32>>> {
        let mut out: Vec<Option<Vec<f32>>> = vec![None; ps.len()];
        for (id, v) in tape.bound_params() {
            if let Some(g) = self.get(v) {
                out[id.0] = Some(g.iter().map(|x| x.as_f32()).collect());
            }
        }
        out
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x = *x / total);
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
