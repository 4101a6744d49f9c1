//! Real-vs-synthetic discriminative score.
//!
//! A single-layer GRU reads a window of 59-dim frames and predicts whether
//! it is synthetic. Held-out accuracy near 0.5 means the pools are hard to
//! tell apart; `D = |0.5 − accuracy|`.

use intentkit_neuro::{Adam, GruCell, Linear, ParamSet, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{windows, SequenceRecord, FEATURE_DIM};
use crate::error::{Error, Result};

pub type FeatureWindow = Vec<[f64; FEATURE_DIM]>;

pub const MIN_POOL: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 30, lr: 1e-3, batch_size: 64, train_fraction: 0.8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RealismScore {
    pub accuracy: f64,
    pub d: f64,
    pub n_real: usize,
    pub n_synthetic: usize,
}

/// Feature windows of length `w` taken every `stride` frames.
pub fn feature_windows(seqs: &[SequenceRecord], w: usize, stride: usize) -> Vec<FeatureWindow> {
    seqs.iter()
        .flat_map(|s| windows(s, w, stride).into_iter().map(|win| win.frames.iter().map(|f| f.features()).collect()))
        .collect()
}

pub fn discriminative_score(real: &[FeatureWindow], synthetic: &[FeatureWindow], seed: u64) -> Result<RealismScore> {
    discriminative_score_with(real, synthetic, &DiscriminatorConfig::default(), seed)
}

pub fn discriminative_score_with(real: &[FeatureWindow], synthetic: &[FeatureWindow], cfg: &DiscriminatorConfig, seed: u64) -> Result<RealismScore> {
    if real.len() < MIN_POOL || synthetic.len() < MIN_POOL {
        return Err(Error::invalid(format!("need at least {MIN_POOL} windows per pool, got {} real and {} synthetic", real.len(), synthetic.len())));
    }
    let w = real[0].len();
    if w == 0 || real.iter().chain(synthetic).any(|x| x.len() != w) {
        return Err(Error::invalid("all windows must share one non-zero length"));
    }
    if cfg.hidden == 0 || cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::invalid("invalid discriminator configuration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // z-score with statistics of the real pool
    let n_frames = (real.len() * w) as f64;
    let mut mean = [0.0; FEATURE_DIM];
    let mut sd = [0.0; FEATURE_DIM];
    for f in real.iter().flatten() {
        for d in 0..FEATURE_DIM {
            mean[d] += f[d] / n_frames;
        }
    }
    for f in real.iter().flatten() {
        for d in 0..FEATURE_DIM {
            sd[d] += (f[d] - mean[d]).powi(2) / n_frames;
        }
    }
    sd.iter_mut().for_each(|s| *s = if s.sqrt() < 1e-6 { 1.0 } else { s.sqrt() });
    let z = |win: &FeatureWindow| -> Vec<f32> {
        win.iter().flat_map(|f| (0..FEATURE_DIM).map(move |d| ((f[d] - mean[d]) / sd[d]) as f32)).collect()
    };

    // One shared permutation splits both pools, so a window and an exact
    // copy of it in the other pool always land on the same side.
    let mut perm: Vec<usize> = (0..real.len().max(synthetic.len())).collect();
    perm.shuffle(&mut rng);
    let mut r: Vec<usize> = perm.iter().copied().filter(|&i| i < real.len()).collect();
    let mut s: Vec<usize> = perm.iter().copied().filter(|&i| i < synthetic.len()).collect();
    let (big, small) = (r.len().max(s.len()), r.len().min(s.len()));
    if (big - small) as f64 > 0.1 * big as f64 {
        log::info!("pool sizes {} and {} differ by more than 10%; subsampling to {small}", r.len(), s.len());
        r.truncate(small);
        s.truncate(small);
    }
    let split = |v: &[usize]| {
        let k = ((v.len() as f64) * cfg.train_fraction).round() as usize;
        (v[..k].to_vec(), v[k..].to_vec())
    };
    let (r_train, r_test) = split(&r);
    let (s_train, s_test) = split(&s);
    let examples = |ri: &[usize], si: &[usize]| -> Vec<(Vec<f32>, f32)> {
        ri.iter().map(|&i| (z(&real[i]), 0.0)).chain(si.iter().map(|&i| (z(&synthetic[i]), 1.0))).collect()
    };
    let mut train = examples(&r_train, &s_train);
    let test = examples(&r_test, &s_test);
    if test.is_empty() {
        return Err(Error::invalid("held-out split is empty"));
    }

    let mut ps = ParamSet::new();
    let gru = GruCell::new(&mut ps, "disc.gru", FEATURE_DIM, cfg.hidden, &mut rng);
    let head = Linear::new(&mut ps, "disc.head", cfg.hidden, 1, &mut rng);
    let forward = |tape: &mut Tape<f32>, ps: &ParamSet, batch: &[(Vec<f32>, f32)]| -> Var {
        let xs: Vec<Var> = (0..w)
            .map(|t| {
                let data: Vec<f32> = batch.iter().flat_map(|(x, _)| x[t * FEATURE_DIM..(t + 1) * FEATURE_DIM].iter().copied()).collect();
                tape.input(batch.len(), FEATURE_DIM, data)
            })
            .collect();
        let h0 = tape.zeros(batch.len(), cfg.hidden);
        let hs = gru.run(tape, ps, &xs, h0);
        head.forward(tape, ps, *hs.last().expect("w > 0"))
    };

    let mut adam = Adam::new(&ps, cfg.lr, 0.0);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            let mut tape = Tape::<f32>::train(rng.random());
            let logits = forward(&mut tape, &ps, batch);
            let y: Vec<f32> = batch.iter().map(|(_, y)| *y).collect();
            let yv = tape.input_f32(batch.len(), 1, &y);
            let per = tape.bce_with_logits(logits, yv);
            let loss = tape.mean_all(per);
            if !tape.scalar(loss).is_finite() {
                return Err(Error::Numerical(format!("discriminator loss is non-finite at epoch {epoch}")));
            }
            let grads = tape.backward(loss);
            let g = grads.for_params(&tape, &ps);
            adam.step(&mut ps, &g);
        }
    }

    let mut correct = 0usize;
    for batch in test.chunks(256) {
        let mut tape = Tape::<f32>::eval();
        let logits = forward(&mut tape, &ps, batch);
        correct += tape.value(logits).iter().zip(batch).filter(|(&z, (_, y))| (z >= 0.0) == (*y >= 0.5)).count();
    }
    let accuracy = correct as f64 / test.len() as f64;
    Ok(RealismScore { accuracy, d: (0.5 - accuracy).abs(), n_real: r.len(), n_synthetic: s.len() })
}
