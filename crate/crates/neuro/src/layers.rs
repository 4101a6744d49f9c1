//! Layer building blocks. Each layer registers its arrays in a [`ParamSet`]
//! at construction and binds them onto a [`Tape`] at forward time.

use rand::Rng;

use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{StatUpdate, Tape, Var};
use crate::{NeuroError, Result};

/// `y = x W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: ps.weight(&format!("{name}.weight"), in_dim, out_dim, rng),
            bias: ps.constant(&format!("{name}.bias"), 1, out_dim, 0.0),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var) -> Var {
        let w = tape.param(ps, self.weight);
        let b = tape.param(ps, self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Batch normalization over the rows of an `n×features` input.
///
/// Sequence inputs are flattened to `(batch·time)×features` by the caller,
/// so statistics are shared across time steps.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(ps: &mut ParamSet, name: &str, features: usize) -> Self {
        Self {
            gamma: ps.constant(&format!("{name}.gamma"), 1, features, 1.0),
            beta: ps.constant(&format!("{name}.beta"), 1, features, 0.0),
            running_mean: ps.buffer(&format!("{name}.running_mean"), 1, features, 0.0),
            running_var: ps.buffer(&format!("{name}.running_var"), 1, features, 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Training mode normalizes with batch statistics (and records them for
    /// [`apply_stat_updates`]); eval mode uses the running statistics.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var) -> Result<Var> {
        let (rows, cols) = tape.shape(x);
        let normalized = if tape.is_training() {
            if rows < 2 {
                return Err(NeuroError::BatchTooSmall(rows));
            }
            let (y, mean, var) = tape.batch_norm_cols(x, self.eps);
            let n = rows as f64;
            tape.push_stat_update(StatUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * n / (n - 1.0)).collect(),
            });
            y
        } else {
            let mean = &ps.get(self.running_mean).data;
            let var = &ps.get(self.running_var).data;
            let shift: Vec<T> = mean.iter().map(|&m| T::from_f32(-m)).collect();
            let inv: Vec<T> = var
                .iter()
                .map(|&v| T::from_f64(1.0 / (v as f64 + self.eps).sqrt()))
                .collect();
            let shift = tape.input(1, cols, shift);
            let inv = tape.input(1, cols, inv);
            let centered = tape.add_row(x, shift);
            tape.mul_row(centered, inv)
        };
        let g = tape.param(ps, self.gamma);
        let b = tape.param(ps, self.beta);
        let scaled = tape.mul_row(normalized, g);
        Ok(tape.add_row(scaled, b))
    }
}

/// Fold recorded batch statistics into running buffers:
/// `running ← (1−m)·running + m·batch`.
pub fn apply_stat_updates(ps: &mut ParamSet, updates: &[StatUpdate], momentum: f64) {
    for u in updates {
        let rm = &mut ps.get_mut(u.running_mean).data;
        for (r, &b) in rm.iter_mut().zip(&u.batch_mean) {
            *r = ((1.0 - momentum) * *r as f64 + momentum * b) as f32;
        }
        let rv = &mut ps.get_mut(u.running_var).data;
        for (r, &b) in rv.iter_mut().zip(&u.batch_var) {
            *r = ((1.0 - momentum) * *r as f64 + momentum * b) as f32;
        }
    }
}

/// Affine layer normalization over the last dimension.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.constant(&format!("{name}.gamma"), 1, dim, 1.0),
            beta: ps.constant(&format!("{name}.beta"), 1, dim, 0.0),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var) -> Var {
        let y = tape.layer_norm_rows(x, self.eps);
        let g = tape.param(ps, self.gamma);
        let b = tape.param(ps, self.beta);
        let s = tape.mul_row(y, g);
        tape.add_row(s, b)
    }
}

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(W_z [x; h] + b_z)
/// r  = σ(W_r [x; h] + b_r)
/// ĥ  = tanh(W_h [x; r ⊙ h] + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    /// `[W_z | W_r]`, shape `(in+hidden)×2·hidden`.
    pub gates: Linear,
    pub candidate: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            gates: Linear::new(ps, &format!("{name}.gates"), input_dim + hidden_dim, 2 * hidden_dim, rng),
            candidate: Linear::new(ps, &format!("{name}.candidate"), input_dim + hidden_dim, hidden_dim, rng),
            input_dim,
            hidden_dim,
        }
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var, h: Var) -> Var {
        let hd = self.hidden_dim;
        let xh = tape.concat_cols(&[x, h]);
        let pre = self.gates.forward(tape, ps, xh);
        let zr = tape.sigmoid(pre);
        let z = tape.slice_cols(zr, 0, hd);
        let r = tape.slice_cols(zr, hd, hd);
        let rh = tape.mul(r, h);
        let xrh = tape.concat_cols(&[x, rh]);
        let cand_pre = self.candidate.forward(tape, ps, xrh);
        let cand = tape.tanh(cand_pre);
        // h + z ⊙ (ĥ − h)
        let diff = tape.sub(cand, h);
        let upd = tape.mul(z, diff);
        tape.add(h, upd)
    }

    /// Run over time-major inputs `xs[t]: batch×in` from `h0`; returns every hidden state.
    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, xs: &[Var], h0: Var) -> Vec<Var> {
        let mut h = h0;
        xs.iter()
            .map(|&x| {
                h = self.step(tape, ps, x, h);
                h
            })
            .collect()
    }
}

/// Long short-term memory cell with gate order `i, f, g, o`:
/// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub gates: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            gates: Linear::new(ps, &format!("{name}.gates"), input_dim + hidden_dim, 4 * hidden_dim, rng),
            input_dim,
            hidden_dim,
        }
    }

    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden_dim;
        let xh = tape.concat_cols(&[x, h]);
        let pre = self.gates.forward(tape, ps, xh);
        let ifo_pre = tape.slice_cols(pre, 0, 2 * hd);
        let g_pre = tape.slice_cols(pre, 2 * hd, hd);
        let o_pre = tape.slice_cols(pre, 3 * hd, hd);
        let ifo = tape.sigmoid(ifo_pre);
        let i = tape.slice_cols(ifo, 0, hd);
        let f = tape.slice_cols(ifo, hd, hd);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c_new = tape.add(fc, ig);
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc);
        (h_new, c_new)
    }

    pub fn run<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, xs: &[Var], h0: Var, c0: Var) -> Vec<Var> {
        let (mut h, mut c) = (h0, c0);
        xs.iter()
            .map(|&x| {
                (h, c) = self.step(tape, ps, x, h, c);
                h
            })
            .collect()
    }
}

/// Multi-head self-attention over `batch` independent sequences stacked as
/// rows (`batch·len × dim`, sequence-major).
#[derive(Clone, Debug)]
pub struct MultiHeadSelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(NeuroError::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            qkv: Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim, rng),
            out: Linear::new(ps, &format!("{name}.out"), dim, dim, rng),
            heads,
            dim,
        })
    }

    /// Attention weights for one head of one sequence, `len×len`, rows summing to 1.
    pub fn head_weights<T: Scalar>(&self, tape: &mut Tape<T>, q: Var, k: Var) -> Var {
        let dh = self.dim / self.heads;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        tape.softmax_rows(scaled)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var, seq_len: usize) -> Var {
        let (rows, dim) = tape.shape(x);
        assert_eq!(dim, self.dim);
        assert_eq!(rows % seq_len, 0, "rows {rows} not a multiple of sequence length {seq_len}");
        let batch = rows / seq_len;
        let dh = dim / self.heads;
        let qkv = self.qkv.forward(tape, ps, x);
        let mut per_seq = Vec::with_capacity(batch);
        for b in 0..batch {
            let block = tape.slice_rows(qkv, b * seq_len, seq_len);
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let q = tape.slice_cols(block, h * dh, dh);
                let k = tape.slice_cols(block, dim + h * dh, dh);
                let v = tape.slice_cols(block, 2 * dim + h * dh, dh);
                let w = self.head_weights(tape, q, k);
                heads.push(tape.matmul(w, v));
            }
            per_seq.push(tape.concat_cols(&heads));
        }
        let merged = if per_seq.len() == 1 { per_seq[0] } else { tape.concat_rows(&per_seq) };
        self.out.forward(tape, ps, merged)
    }
}

/// Pre-norm encoder block: `x + MHSA(LN(x))`, then `· + MLP(LN(·))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadSelfAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim),
            attn: MultiHeadSelfAttention::new(ps, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim),
            ff1: Linear::new(ps, &format!("{name}.ff1"), dim, ff_dim, rng),
            ff2: Linear::new(ps, &format!("{name}.ff2"), ff_dim, dim, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var, seq_len: usize) -> Var {
        let n1 = self.ln1.forward(tape, ps, x);
        let a = self.attn.forward(tape, ps, n1, seq_len);
        let x1 = tape.add(x, a);
        let n2 = self.ln2.forward(tape, ps, x1);
        let h = self.ff1.forward(tape, ps, n2);
        let h = tape.relu(h);
        let m = self.ff2.forward(tape, ps, h);
        tape.add(x1, m)
    }
}

/// Learnable `max_len×dim` table added position-wise to stacked sequences.
#[derive(Clone, Debug)]
pub struct PositionalEmbedding {
    pub table: ParamId,
    pub max_len: usize,
    pub dim: usize,
}

impl PositionalEmbedding {
    pub fn new(ps: &mut ParamSet, name: &str, max_len: usize, dim: usize) -> Self {
        Self {
            table: ps.constant(name, max_len, dim, 0.0),
            max_len,
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, x: Var, seq_len: usize) -> Result<Var> {
        if seq_len > self.max_len {
            return Err(NeuroError::Config(format!(
                "sequence length {seq_len} exceeds positional table length {}",
                self.max_len
            )));
        }
        let rows = tape.shape(x).0;
        let table = tape.param(ps, self.table);
        let pos = if seq_len == self.max_len {
            table
        } else {
            tape.slice_rows(table, 0, seq_len)
        };
        let batch = rows / seq_len;
        let tiled = if batch == 1 {
            pos
        } else {
            tape.concat_rows(&vec![pos; batch])
        };
        Ok(tape.add(x, tiled))
    }
}
