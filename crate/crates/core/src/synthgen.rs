//! Procedural approach and pass-by scenarios with known intent onset.
//!
//! People are simulated in world coordinates (metres) in front of a pinhole
//! camera mounted on the robot, rendered as COCO-17 keypoints with a walking
//! gait and body yaw, and then passed through [`normalize_pose`]. Intent
//! sequences contain exactly one 0→1 label transition at the onset, when
//! the person turns towards the robot and (usually) approaches it.
//!
//! [`normalize_pose`]: crate::features::normalize_pose

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{BoundingBox, Environment, Keypoint, SequenceRecord, EMOTION_DIM, HAPPY, NEUTRAL, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::features::{normalized_frame, RawDetection};

const FOCAL_PX: f64 = 600.0;
const CX: f64 = 320.0;
const CY: f64 = 240.0;
const CAMERA_HEIGHT: f64 = 1.2;
const MIN_DEPTH: f64 = 0.6;

/// Scenario parameters. Ranges are inclusive `(lo, hi)` pairs sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_sequences: usize,
    pub length_range: (usize, usize),
    /// Exact fraction (rounded) of sequences that contain an intent onset.
    pub intent_fraction: f64,
    /// Onset position as a fraction of sequence length.
    pub onset_range: (f64, f64),
    pub n_participants: usize,
    /// Participant `j` records in `environments[j % len]`.
    pub environments: Vec<Environment>,
    pub frame_rate: f64,
    /// Lateral walking speed (m/s).
    pub walk_speed: (f64, f64),
    /// Depth of the walking path (m).
    pub path_depth: (f64, f64),
    /// Speed towards the robot after onset (m/s).
    pub approach_speed: (f64, f64),
    /// Frames an intent person needs to turn towards the robot.
    pub turn_frames: (usize, usize),
    /// Share of no-intent sequences that briefly turn towards the robot.
    pub glance_fraction: f64,
    pub glance_frames: (usize, usize),
    /// Share of no-intent sequences that cut diagonally past the robot.
    pub diagonal_fraction: f64,
    /// Angle of the diagonal path to the camera plane (degrees).
    pub diagonal_angle: (f64, f64),
    /// Share of intent sequences that are already close and only turn.
    pub near_turn_fraction: f64,
    /// Happy-logit increase reached after onset.
    pub emotion_drift: f64,
    /// Standard deviation of per-frame emotion logit noise.
    pub emotion_noise: f64,
    /// Keypoint jitter as a fraction of the box size.
    pub jitter: f64,
    /// Probability that a keypoint's confidence drops to 0.
    pub dropout: f64,
    /// Probability that no face is found on a frontal frame.
    pub face_miss: f64,
    /// Probability that the person is not detected at all.
    pub detection_miss: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        preset("standard").expect("standard preset")
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["separable", "standard", "hard"];

/// The named difficulty presets.
pub fn difficulty_presets() -> Vec<(&'static str, ScenarioConfig)> {
    PRESETS.iter().map(|&n| (n, preset(n).expect("known preset"))).collect()
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let base = ScenarioConfig {
        n_sequences: 100,
        length_range: (45, 90),
        intent_fraction: 0.5,
        onset_range: (0.2, 0.8),
        n_participants: 10,
        environments: vec![Environment::One, Environment::Two, Environment::Three],
        frame_rate: 15.0,
        walk_speed: (0.6, 1.2),
        path_depth: (2.5, 5.5),
        approach_speed: (0.5, 1.0),
        turn_frames: (3, 6),
        glance_fraction: 0.0,
        glance_frames: (4, 8),
        diagonal_fraction: 0.0,
        diagonal_angle: (25.0, 35.0),
        near_turn_fraction: 0.0,
        emotion_drift: 3.0,
        emotion_noise: 0.0,
        jitter: 0.0,
        dropout: 0.0,
        face_miss: 0.0,
        detection_miss: 0.0,
        seed: 0,
    };
    match name {
        "separable" => Ok(ScenarioConfig { approach_speed: (0.8, 1.2), ..base }),
        "standard" => Ok(ScenarioConfig {
            glance_fraction: 0.3,
            diagonal_fraction: 0.4,
            near_turn_fraction: 0.35,
            emotion_drift: 2.0,
            emotion_noise: 0.3,
            jitter: 0.02,
            dropout: 0.1,
            face_miss: 0.1,
            detection_miss: 0.01,
            ..base
        }),
        "hard" => Ok(ScenarioConfig {
            intent_fraction: 0.8,
            approach_speed: (0.2, 0.6),
            turn_frames: (6, 12),
            glance_fraction: 0.5,
            glance_frames: (8, 14),
            diagonal_fraction: 0.6,
            diagonal_angle: (35.0, 50.0),
            near_turn_fraction: 0.6,
            emotion_drift: 0.8,
            emotion_noise: 0.5,
            jitter: 0.04,
            dropout: 0.3,
            face_miss: 0.3,
            detection_miss: 0.03,
            ..base
        }),
        other => Err(Error::invalid(format!("unknown preset '{other}'; expected one of {PRESETS:?}"))),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.intent_fraction)
            && self.length_range.0 >= 1
            && self.length_range.0 <= self.length_range.1
            && self.onset_range.0 > 0.0
            && self.onset_range.0 <= self.onset_range.1
            && self.onset_range.1 < 1.0
            && self.n_participants > 0
            && !self.environments.is_empty()
            && self.frame_rate > 0.0
            && [self.glance_fraction, self.diagonal_fraction, self.near_turn_fraction, self.dropout, self.face_miss, self.detection_miss]
                .iter()
                .all(|p| (0.0..=1.0).contains(p));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("invalid scenario configuration"))
        }
    }
}

/// What a simulated person does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Walks across the field of view in profile.
    Passer,
    /// Walks across and briefly turns towards the robot.
    Glancer,
    /// Cuts diagonally towards and past the robot without facing it.
    Diagonal,
    /// Walks across, then turns and approaches at onset.
    Approacher,
    /// Lingers nearby, then turns to face the robot at onset.
    NearTurner,
}

impl Behavior {
    pub fn has_intent(self) -> bool {
        matches!(self, Behavior::Approacher | Behavior::NearTurner)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub detection: Option<RawDetection>,
    pub label: u8,
}

/// One generated sequence in extractor (pixel) space.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub sequence_id: String,
    pub participant_id: String,
    pub environment: Environment,
    pub frame_rate: f64,
    pub behavior: Behavior,
    pub onset: Option<usize>,
    pub frames: Vec<RawFrame>,
}

impl RawSequence {
    /// Run every frame through bounding-box normalization.
    pub fn to_record(&self) -> Result<SequenceRecord> {
        let frames = self
            .frames
            .iter()
            .map(|f| normalized_frame(f.detection.as_ref(), Some(f.label)))
            .collect::<Result<Vec<_>>>()?;
        let mut rec = SequenceRecord::new(&self.sequence_id, &self.participant_id, self.environment, frames);
        rec.frame_rate = self.frame_rate;
        Ok(rec)
    }

    /// Bounding-box height per frame; missing detections repeat the previous height.
    pub fn box_heights(&self) -> Vec<f64> {
        let mut last = f64::NAN;
        let mut out: Vec<f64> = self
            .frames
            .iter()
            .map(|f| {
                if let Some(d) = &f.detection {
                    last = d.bbox.h;
                }
                last
            })
            .collect();
        let first = out.iter().copied().find(|h| h.is_finite()).unwrap_or(1.0);
        for h in out.iter_mut().take_while(|h| h.is_nan()) {
            *h = first;
        }
        out
    }
}

/// Generate sequences in pixel space.
pub fn generate_raw(cfg: &ScenarioConfig) -> Result<Vec<RawSequence>> {
    cfg.validate()?;
    let n_intent = (cfg.intent_fraction * cfg.n_sequences as f64).round() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut intent: Vec<bool> = (0..cfg.n_sequences).map(|i| i < n_intent).collect();
    intent.shuffle(&mut master);
    let out = intent
        .iter()
        .enumerate()
        .map(|(i, &has_intent)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            simulate(cfg, i, has_intent, &mut rng)
        })
        .collect();
    Ok(out)
}

/// Generate normalized, labeled sequences.
pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<SequenceRecord>> {
    generate_raw(cfg)?.iter().map(RawSequence::to_record).collect()
}

// ------------------------------------------------------------------ simulation

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn uniform_usize<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Per-frame world state of the simulated person.
#[derive(Clone, Copy, Debug)]
struct State {
    x: f64,
    z: f64,
    /// 0 faces the camera; ±π/2 is profile walking towards ±x.
    yaw: f64,
    phase: f64,
    /// Gait amplitude in [0, 1]; 0 is standing.
    stride: f64,
    /// Extra happy logit.
    smile: f64,
}

fn simulate(cfg: &ScenarioConfig, index: usize, has_intent: bool, rng: &mut ChaCha8Rng) -> RawSequence {
    let len = uniform_usize(rng, cfg.length_range);
    let behavior = if has_intent {
        if rng.random::<f64>() < cfg.near_turn_fraction {
            Behavior::NearTurner
        } else {
            Behavior::Approacher
        }
    } else {
        let r: f64 = rng.random();
        if r < cfg.diagonal_fraction {
            Behavior::Diagonal
        } else if r < cfg.diagonal_fraction + cfg.glance_fraction * (1.0 - cfg.diagonal_fraction) {
            Behavior::Glancer
        } else {
            Behavior::Passer
        }
    };
    let onset = has_intent.then(|| {
        let f = uniform(rng, cfg.onset_range);
        ((f * len as f64).round() as usize).clamp(1, len - 1)
    });
    let states = trajectory(cfg, behavior, len, onset, rng);

    let participant = index % cfg.n_participants;
    let environment = cfg.environments[participant % cfg.environments.len()];
    let height = uniform(rng, (1.55, 1.9));
    // Baseline emotion logits: mostly neutral with a personal tint.
    let mut base = [0.0; EMOTION_DIM];
    for (m, b) in base.iter_mut().enumerate() {
        *b = 0.5 * gauss(rng) + if m == NEUTRAL { 2.0 } else { 0.0 };
    }
    let mut noise = [0.0; EMOTION_DIM];

    let frames = states
        .iter()
        .enumerate()
        .map(|(t, s)| {
            for n in noise.iter_mut() {
                *n = 0.7 * *n + cfg.emotion_noise * gauss(rng);
            }
            let label = u8::from(onset.is_some_and(|o| t >= o));
            if rng.random::<f64>() < cfg.detection_miss {
                return RawFrame { detection: None, label };
            }
            let detection = render(cfg, s, height, &base, &noise, rng);
            RawFrame { detection: Some(detection), label }
        })
        .collect();

    RawSequence {
        sequence_id: format!("seq{index:05}"),
        participant_id: format!("p{participant:03}"),
        environment,
        frame_rate: cfg.frame_rate,
        behavior,
        onset,
        frames,
    }
}

fn trajectory(cfg: &ScenarioConfig, behavior: Behavior, len: usize, onset: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<State> {
    let dt = 1.0 / cfg.frame_rate;
    let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let near = behavior == Behavior::NearTurner;
    let speed = if near { uniform(rng, (0.1, 0.35)) } else { uniform(rng, cfg.walk_speed) };
    let depth = if near { uniform(rng, (1.4, 2.4)) } else { uniform(rng, cfg.path_depth) };
    let lateral = speed * len as f64 * dt;
    let mut s = State {
        x: -dir * (0.5 * lateral + uniform(rng, (-0.5, 0.5))),
        z: depth,
        yaw: dir * PI / 2.0,
        phase: uniform(rng, (0.0, 2.0 * PI)),
        stride: if near { 0.3 } else { 1.0 },
        smile: 0.0,
    };
    let step_hz = uniform(rng, (0.8, 1.0)) * speed.max(0.3) / 1.0;
    let wobble = 0.08;

    let diag = uniform(rng, cfg.diagonal_angle).to_radians();
    let glance_len = uniform_usize(rng, cfg.glance_frames);
    let glance_at = if len > glance_len + 2 { rng.random_range(1..len - glance_len) } else { 0 };
    let turn = uniform_usize(rng, cfg.turn_frames).max(1);
    let approach = uniform(rng, cfg.approach_speed);
    let stop_depth = uniform(rng, (1.0, 1.4));
    let final_yaw = 0.12 * gauss(rng);

    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let after = onset.map(|o| t as f64 - o as f64);
        match behavior {
            Behavior::Passer | Behavior::Glancer => {
                s.x += dir * speed * dt;
                s.yaw = dir * PI / 2.0 + wobble * gauss(rng);
                if behavior == Behavior::Glancer && t >= glance_at && t < glance_at + glance_len {
                    let u = (t - glance_at) as f64 / glance_len as f64;
                    let bump = (PI * u).sin();
                    s.yaw = dir * (PI / 2.0) * (1.0 - 0.75 * bump);
                    s.smile = 0.5 * cfg.emotion_drift * bump * (1.0 - cfg.emotion_drift.min(2.0) / 2.0 + 0.2);
                } else {
                    s.smile = 0.0;
                }
            }
            Behavior::Diagonal => {
                let vz = speed * diag.sin();
                let vx = speed * diag.cos();
                s.x += dir * vx * dt;
                s.z = (s.z - vz * dt).max(1.2);
                s.yaw = dir * (PI / 2.0 - diag) + wobble * gauss(rng);
            }
            Behavior::Approacher | Behavior::NearTurner => {
                let a = after.unwrap_or(-1.0);
                if a < 0.0 {
                    s.x += dir * speed * dt;
                    s.yaw = dir * PI / 2.0 + wobble * gauss(rng);
                } else {
                    let turned = smoothstep(a / turn as f64);
                    s.yaw = dir * (PI / 2.0) * (1.0 - turned) + final_yaw * turned + 0.5 * wobble * gauss(rng);
                    if behavior == Behavior::Approacher && s.z > stop_depth {
                        s.z = (s.z - approach * turned * dt).max(stop_depth);
                        s.x *= 1.0 - 0.03 * turned;
                        s.stride = 1.0;
                    } else {
                        s.stride = (s.stride - 0.1).max(0.0);
                    }
                    s.smile = cfg.emotion_drift * smoothstep(a / 20.0);
                }
            }
        }
        s.phase += 2.0 * PI * step_hz * dt * s.stride.max(0.05);
        out.push(s);
    }
    out
}

/// Body-frame joint positions (x to the person's right, y up, z forward) for
/// a 1.75 m person, COCO-17 order.
fn skeleton(phase: f64, stride: f64) -> [[f64; 3]; NUM_KEYPOINTS] {
    let swing = 0.45 * stride * phase.sin();
    let knee_bend = 0.25 * stride * (phase.sin().max(0.0));
    let leg = |side: f64| -> ([f64; 3], [f64; 3]) {
        let a = side * swing;
        let hip = [side * 0.11, 0.95, 0.0];
        let knee = [hip[0], hip[1] - 0.45 * a.cos(), 0.45 * a.sin()];
        let b = a - knee_bend;
        (knee, [hip[0], knee[1] - 0.44 * b.cos(), knee[2] + 0.44 * b.sin()])
    };
    let arm = |side: f64| -> ([f64; 3], [f64; 3]) {
        let a = -side * 0.6 * swing;
        let sh = [side * 0.19, 1.42, 0.0];
        let elbow = [side * 0.21, sh[1] - 0.30 * a.cos(), 0.30 * a.sin()];
        (elbow, [side * 0.22, elbow[1] - 0.27 * (a + 0.2 * stride).cos(), elbow[2] + 0.27 * (a + 0.2 * stride).sin()])
    };
    // side −1 is the person's left
    let (lk, la) = leg(-1.0);
    let (rk, ra) = leg(1.0);
    let (le, lw) = arm(-1.0);
    let (re, rw) = arm(1.0);
    [
        [0.0, 1.62, 0.10],
        [-0.035, 1.66, 0.08],
        [0.035, 1.66, 0.08],
        [-0.075, 1.63, 0.0],
        [0.075, 1.63, 0.0],
        [-0.19, 1.42, 0.0],
        [0.19, 1.42, 0.0],
        le,
        re,
        lw,
        rw,
        [-0.11, 0.95, 0.0],
        [0.11, 0.95, 0.0],
        lk,
        rk,
        la,
        ra,
    ]
}

/// Which side of the body a joint is on: −1 left, +1 right, 0 midline.
const SIDE: [f64; NUM_KEYPOINTS] = [0.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
const FACE: [bool; NUM_KEYPOINTS] = [true, true, true, false, false, false, false, false, false, false, false, false, false, false, false, false, false];

fn render(cfg: &ScenarioConfig, s: &State, height: f64, base: &[f64; EMOTION_DIM], noise: &[f64; EMOTION_DIM], rng: &mut ChaCha8Rng) -> RawDetection {
    let scale = height / 1.75;
    let (sy, cy) = s.yaw.sin_cos();
    let right = [cy, sy];
    let forward = [sy, -cy];
    let z_base = s.z.max(MIN_DEPTH);
    let mut clean = [Keypoint { u: 0.0, v: 0.0, s: 0.0 }; NUM_KEYPOINTS];
    for (n, j) in skeleton(s.phase, s.stride).iter().enumerate() {
        let (bx, by, bz) = (j[0] * scale, j[1] * scale, j[2] * scale);
        let wx = s.x + right[0] * bx + forward[0] * bz;
        let wz = (z_base + right[1] * bx + forward[1] * bz).max(0.3);
        let u = CX + FOCAL_PX * wx / wz;
        let v = CY - FOCAL_PX * (by - CAMERA_HEIGHT) / wz;
        // Far-side joints are partly self-occluded; the face disappears when
        // the person turns away.
        let far = (SIDE[n] * sy).max(0.0);
        let mut conf = if FACE[n] {
            0.95 * (cy + 0.35).clamp(0.0, 1.0) * (1.0 - 0.5 * far)
        } else if n == 3 || n == 4 {
            0.9 * (1.0 - 0.7 * far)
        } else {
            0.92 - 0.35 * far
        };
        conf = (conf + 0.03 * gauss(rng)).clamp(0.0, 1.0);
        clean[n] = Keypoint { u, v, s: conf };
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for k in &clean {
        u0 = u0.min(k.u);
        v0 = v0.min(k.v);
        u1 = u1.max(k.u);
        v1 = v1.max(k.v);
    }
    let (mw, mh) = (0.1 * (u1 - u0) + 4.0, 0.05 * (v1 - v0) + 4.0);
    let bbox = BoundingBox { u_min: u0 - mw, v_min: v0 - mh, w: u1 - u0 + 2.0 * mw, h: v1 - v0 + 2.0 * mh };

    let mut keypoints = clean;
    for k in keypoints.iter_mut() {
        k.u += cfg.jitter * bbox.w * gauss(rng);
        k.v += cfg.jitter * bbox.h * gauss(rng);
        if rng.random::<f64>() < cfg.dropout {
            k.s = 0.0;
        }
    }

    let frontal = cy > 0.3;
    let face_emotion = if frontal && rng.random::<f64>() >= cfg.face_miss {
        let mut logits = [0.0; EMOTION_DIM];
        for m in 0..EMOTION_DIM {
            logits[m] = base[m] + noise[m] + if m == HAPPY { s.smile } else { 0.0 };
        }
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let mut q = logits.map(|l| (l - mx).exp());
        let sum: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= sum);
        Some(q)
    } else {
        None
    };
    RawDetection { keypoints, bbox, face_emotion }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str, n: usize) -> ScenarioConfig {
        ScenarioConfig { n_sequences: n, ..preset(name).unwrap() }
    }

    #[test]
    fn fixed_onset_labels() {
        let cfg = ScenarioConfig { n_sequences: 4, intent_fraction: 1.0, length_range: (60, 60), onset_range: (0.5, 0.5), ..preset("standard").unwrap() };
        for s in generate(&cfg).unwrap() {
            let labels = s.labels().unwrap();
            assert!(labels[..30].iter().all(|&l| l == 0));
            assert!(labels[30..].iter().all(|&l| l == 1));
        }
    }

    #[test]
    fn exact_intent_count() {
        let cfg = ScenarioConfig { intent_fraction: 0.3, ..small("standard", 100) };
        let raw = generate_raw(&cfg).unwrap();
        assert_eq!(raw.iter().filter(|s| s.onset.is_some()).count(), 30);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = small("hard", 12);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = ScenarioConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn one_transition_and_valid_frames() {
        for (_, cfg) in difficulty_presets() {
            let cfg = ScenarioConfig { n_sequences: 30, ..cfg };
            for (raw, rec) in generate_raw(&cfg).unwrap().iter().zip(generate(&cfg).unwrap()) {
                rec.validate(1e-9).unwrap();
                let labels = rec.labels().unwrap();
                let rises = labels.windows(2).filter(|w| w[0] == 0 && w[1] == 1).count();
                let falls = labels.windows(2).filter(|w| w[0] == 1 && w[1] == 0).count();
                assert_eq!(falls, 0);
                assert_eq!(rises, usize::from(raw.onset.is_some()));
                assert_eq!(raw.behavior.has_intent(), raw.onset.is_some());
            }
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(preset("medium").is_err());
    }
}
