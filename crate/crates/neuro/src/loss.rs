//! Loss primitives. Probability inputs are clamped at [`PROB_EPS`] before any log.

use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const PROB_EPS: f64 = 1e-7;

/// Scalar Huber penalty on a residual norm.
pub fn huber(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        norm * norm / (2.0 * delta)
    } else {
        norm - delta / 2.0
    }
}

/// Mean binary cross-entropy of probabilities `p` against constant targets `y`.
pub fn bce<T: Scalar>(tape: &mut Tape<T>, p: Var, y: Var) -> Var {
    let log_p = tape.clamp_log(p, PROB_EPS);
    let one_minus_p = tape.rsub_scalar(1.0, p);
    let log_q = tape.clamp_log(one_minus_p, PROB_EPS);
    let one_minus_y = tape.rsub_scalar(1.0, y);
    let a = tape.mul(y, log_p);
    let b = tape.mul(one_minus_y, log_q);
    let s = tape.add(a, b);
    let m = tape.mean_all(s);
    tape.scale(m, -1.0)
}

/// Mean softmax cross-entropy of `logits: n×C` against class indices.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, classes: &[usize]) -> Var {
    let (n, c) = tape.shape(logits);
    assert_eq!(classes.len(), n, "cross_entropy: {} labels for {n} rows", classes.len());
    let mut onehot = vec![T::zero(); n * c];
    for (i, &k) in classes.iter().enumerate() {
        assert!(k < c, "cross_entropy: class {k} out of range {c}");
        onehot[i * c + k] = T::one();
    }
    let ls = tape.log_softmax_rows(logits);
    let sel = tape.input(n, c, onehot);
    let picked = tape.mul(ls, sel);
    let total = tape.sum_all(picked);
    tape.scale(total, -1.0 / n as f64)
}

/// Mean squared error over all elements.
pub fn mse<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    tape.mean_all(sq)
}

/// Row-wise `KL(p ‖ q) = Σ_c p_c ln(p_c / q_c)`, `n×C → n×1`, with `p`
/// treated as the (constant) reference distribution. Terms with `p_c = 0`
/// contribute zero.
pub fn kl_div<T: Scalar>(tape: &mut Tape<T>, p: Var, q: Var) -> Var {
    let log_p = tape.clamp_log(p, PROB_EPS);
    let log_q = tape.clamp_log(q, PROB_EPS);
    let diff = tape.sub(log_p, log_q);
    let terms = tape.mul(p, diff);
    tape.sum_cols(terms)
}
