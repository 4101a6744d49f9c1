//! Central finite-difference gradient checks.
//!
//! The analytic gradient is computed on a tape of the chosen precision; the
//! numeric estimate always runs in an `f64` shadow of the same graph so that
//! cancellation error in the difference quotient does not mask real bugs.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// A scalar objective that can be rebuilt on any precision.
pub trait Objective {
    fn build<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamSet, inputs: &[Var]) -> Var;
}

/// An input leaf for the objective.
#[derive(Clone, Debug)]
pub struct InputSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Check the gradient with respect to this input.
    pub differentiable: bool,
}

impl InputSpec {
    pub fn var(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self { rows, cols, data, differentiable: true }
    }

    pub fn constant(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self { rows, cols, data, differentiable: false }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// Run the objective in training mode with this dropout seed.
    pub train_seed: Option<u64>,
    /// Lower bound on the error denominator, so gradients that are exactly
    /// zero in theory are judged by absolute rounding noise.
    pub norm_floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, coords_per_tensor: 24, seed: 0, train_seed: None, norm_floor: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct TensorReport {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, norm_floor)` over the sampled coordinates.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub coords: usize,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorReport>,
}

impl CheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.relative_error).fold(0.0, f64::max)
    }

    pub fn worst_tensor(&self) -> Option<&TensorReport> {
        self.tensors
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

fn make_tape<T: Scalar>(opts: &CheckOptions) -> Tape<T> {
    match opts.train_seed {
        Some(s) => Tape::train(s),
        None => Tape::eval(),
    }
}

fn build_inputs<T: Scalar>(tape: &mut Tape<T>, inputs: &[InputSpec], override_: Option<(usize, usize, f64)>) -> Vec<Var> {
    inputs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut data: Vec<T> = spec.data.iter().map(|&x| T::from_f64(x)).collect();
            if let Some((which, idx, delta)) = override_ {
                if which == k {
                    data[idx] += T::from_f64(delta);
                }
            }
            if spec.differentiable {
                tape.variable(spec.rows, spec.cols, data)
            } else {
                tape.input(spec.rows, spec.cols, data)
            }
        })
        .collect()
}

enum Target {
    Input(usize),
    Param(ParamId),
}

fn shadow_loss<O: Objective>(obj: &O, ps: &ParamSet, inputs: &[InputSpec], opts: &CheckOptions, target: &Target, idx: usize, delta: f64) -> f64 {
    let mut tape = make_tape::<f64>(opts);
    let vars = match target {
        Target::Input(k) => build_inputs(&mut tape, inputs, Some((*k, idx, delta))),
        Target::Param(id) => {
            tape.set_perturbation(*id, idx, delta);
            build_inputs(&mut tape, inputs, None)
        }
    };
    let out = obj.build(&mut tape, ps, &vars);
    tape.scalar(out)
}

/// Compare analytic gradients (precision `A`) with `f64` central differences
/// for every differentiable input and every trainable parameter reached by
/// the objective.
pub fn check<A: Scalar, O: Objective>(obj: &O, ps: &ParamSet, inputs: &[InputSpec], opts: &CheckOptions) -> CheckReport {
    // Round inputs to the analytic precision so both routes see identical data.
    let inputs: Vec<InputSpec> = inputs
        .iter()
        .map(|s| InputSpec {
            data: s.data.iter().map(|&x| A::from_f64(x).as_f64()).collect(),
            ..s.clone()
        })
        .collect();
    let mut tape = make_tape::<A>(opts);
    let vars = build_inputs(&mut tape, &inputs, None);
    let out = obj.build(&mut tape, ps, &vars);
    let loss = tape.scalar(out).as_f64();
    let grads = tape.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut targets: Vec<(String, Target, Vec<f64>)> = Vec::new();
    for (k, spec) in inputs.iter().enumerate() {
        if spec.differentiable {
            let g = grads
                .get(vars[k])
                .map(|g| g.iter().map(|x| x.as_f64()).collect())
                .unwrap_or_else(|| vec![0.0; spec.data.len()]);
            targets.push((format!("input[{k}]"), Target::Input(k), g));
        }
    }
    let bound: Vec<(ParamId, Var)> = tape.bound_params().collect();
    for (id, v) in bound {
        let p = ps.get(id);
        if !p.trainable {
            continue;
        }
        let g = grads
            .get(v)
            .map(|g| g.iter().map(|x| x.as_f64()).collect())
            .unwrap_or_else(|| vec![0.0; p.len()]);
        targets.push((p.name.clone(), Target::Param(id), g));
    }

    let h = opts.step;
    let tensors = targets
        .into_iter()
        .map(|(name, target, analytic)| {
            let n = analytic.len();
            let coords: Vec<usize> = if n <= opts.coords_per_tensor {
                (0..n).collect()
            } else {
                sample(&mut rng, n, opts.coords_per_tensor).into_vec()
            };
            let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
            for &i in &coords {
                let plus = shadow_loss(obj, ps, &inputs, opts, &target, i, h);
                let minus = shadow_loss(obj, ps, &inputs, opts, &target, i, -h);
                let numeric = (plus - minus) / (2.0 * h);
                diff2 += (analytic[i] - numeric).powi(2);
                a2 += analytic[i].powi(2);
                n2 += numeric.powi(2);
            }
            let denom = a2.sqrt().max(n2.sqrt()).max(opts.norm_floor);
            let relative_error = diff2.sqrt() / denom;
            TensorReport { name, relative_error, analytic_norm: a2.sqrt(), coords: coords.len() }
        })
        .collect();
    CheckReport { loss, tensors }
}
