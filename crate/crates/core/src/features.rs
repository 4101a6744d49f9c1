//! Bounding-box keypoint normalization, training-split standardization and
//! the ingestion adapter for external pose/emotion extractors.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::datamodel::{
    BoundingBox, Environment, Keypoint, MultimodalFrame, SequenceRecord, EMOTION_DIM, NEUTRAL, NUM_KEYPOINTS, POSE_DIM,
};
use crate::error::{Error, Result};

/// Standard deviations below this are clamped.
pub const MIN_STD: f64 = 1e-6;

/// Extractor output for one person in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDetection {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
    pub bbox: BoundingBox,
    /// `None` when no face was found.
    pub face_emotion: Option<[f64; EMOTION_DIM]>,
}

impl RawDetection {
    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        for (n, k) in self.keypoints.iter().enumerate() {
            if !k.u.is_finite() || !k.v.is_finite() || !(0.0..=1.0).contains(&k.s) {
                return Err(Error::invalid(format!("keypoint {n} is invalid: {k:?}")));
            }
        }
        if let Some(q) = &self.face_emotion {
            let sum: f64 = q.iter().sum();
            if q.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("emotion simplex violation (sum {sum})")));
            }
        }
        Ok(())
    }

    /// Apply `u ↦ scale·u + du`, `v ↦ scale·v + dv` to keypoints and box alike.
    pub fn transformed(&self, scale: f64, du: f64, dv: f64) -> Self {
        let mut out = self.clone();
        for k in out.keypoints.iter_mut() {
            k.u = scale * k.u + du;
            k.v = scale * k.v + dv;
        }
        out.bbox = BoundingBox {
            u_min: scale * self.bbox.u_min + du,
            v_min: scale * self.bbox.v_min + dv,
            w: scale * self.bbox.w,
            h: scale * self.bbox.h,
        };
        out
    }
}

/// `ũ = (u − u_min)/w`, `ṽ = (v − v_min)/h`, confidences unchanged.
///
/// Keypoints with zero confidence are extractor placeholders and keep
/// coordinates 0. Keypoints outside the box are allowed.
pub fn normalize_pose(det: &RawDetection) -> Result<[f64; POSE_DIM]> {
    det.bbox.validate()?;
    let b = &det.bbox;
    let mut out = [0.0; POSE_DIM];
    for (n, k) in det.keypoints.iter().enumerate() {
        if k.s > 0.0 {
            out[3 * n] = (k.u - b.u_min) / b.w;
            out[3 * n + 1] = (k.v - b.v_min) / b.h;
        }
        out[3 * n + 2] = k.s;
    }
    Ok(out)
}

fn emotion_or_neutral(q: Option<[f64; EMOTION_DIM]>) -> [f64; EMOTION_DIM] {
    q.unwrap_or_else(|| {
        let mut e = [0.0; EMOTION_DIM];
        e[NEUTRAL] = 1.0;
        e
    })
}

/// Normalized (not standardized) frame; `None` is a frame with no person
/// detection.
pub fn normalized_frame(det: Option<&RawDetection>, label: Option<u8>) -> Result<MultimodalFrame> {
    match det {
        None => Ok(MultimodalFrame::missing(label)),
        Some(d) => Ok(MultimodalFrame { pose: normalize_pose(d)?, emotion: emotion_or_neutral(d.face_emotion), label }),
    }
}

/// Normalize, then standardize with `stats`; a missing face becomes a
/// neutral one-hot emotion block.
pub fn build_frame(det: &RawDetection, stats: &StandardizationStats, label: Option<u8>) -> Result<MultimodalFrame> {
    let pose = stats.apply(&normalize_pose(det)?);
    Ok(MultimodalFrame { pose, emotion: emotion_or_neutral(det.face_emotion), label })
}

// ------------------------------------------------------------------ standardization

/// Per-channel mean and standard deviation of the normalized pose channels.
/// Confidence channels always carry mean 0 and std 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn is_confidence(channel: usize) -> bool {
    channel % 3 == 2
}

fn missing(pose: &[f64; POSE_DIM], channel: usize) -> bool {
    pose[3 * (channel / 3) + 2] == 0.0
}

impl StandardizationStats {
    pub fn identity() -> Self {
        Self { mean: vec![0.0; POSE_DIM], std: vec![1.0; POSE_DIM] }
    }

    /// `(x − mean)/std` on coordinate channels; confidences are copied.
    /// Keypoints with zero confidence map to 0 (the channel mean) instead
    /// of an outlier at `−mean/std`.
    pub fn apply(&self, pose: &[f64; POSE_DIM]) -> [f64; POSE_DIM] {
        let mut out = *pose;
        for c in (0..POSE_DIM).filter(|&c| !is_confidence(c)) {
            out[c] = if missing(pose, c) { 0.0 } else { (pose[c] - self.mean[c]) / self.std[c] };
        }
        out
    }

    /// Inverse of [`apply`](Self::apply); zero-confidence keypoints get
    /// coordinates 0 again.
    pub fn invert(&self, pose: &[f64; POSE_DIM]) -> [f64; POSE_DIM] {
        let mut out = *pose;
        for c in (0..POSE_DIM).filter(|&c| !is_confidence(c)) {
            out[c] = if missing(pose, c) { 0.0 } else { pose[c] * self.std[c] + self.mean[c] };
        }
        out
    }

    pub fn apply_frame(&self, f: &MultimodalFrame) -> MultimodalFrame {
        MultimodalFrame { pose: self.apply(&f.pose), ..f.clone() }
    }

    pub fn apply_sequences(&self, seqs: &[SequenceRecord]) -> Vec<SequenceRecord> {
        seqs.iter()
            .map(|s| SequenceRecord { frames: s.frames.iter().map(|f| self.apply_frame(f)).collect(), ..s.clone() })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != POSE_DIM || self.std.len() != POSE_DIM {
            return Err(Error::invalid("standardization stats must have 51 channels"));
        }
        if self.std.iter().any(|s| *s <= 0.0 || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("standardization stats need finite means and positive deviations"));
        }
        Ok(())
    }
}

/// Fitted statistics plus the diagnostics produced while fitting.
#[derive(Clone, Debug)]
pub struct FittedStats {
    pub stats: StandardizationStats,
    pub warnings: Vec<String>,
}

/// Population mean and standard deviation of every coordinate channel over
/// the given (training-split) sequences.
///
/// Coordinates of zero-confidence keypoints are placeholders and do not
/// enter the statistics.
pub fn fit_standardization(train: &[SequenceRecord]) -> Result<FittedStats> {
    let detected = train
        .iter()
        .flat_map(|s| &s.frames)
        .filter(|f| (0..NUM_KEYPOINTS).any(|k| f.confidence(k) > 0.0))
        .count();
    if detected < 2 {
        return Err(Error::invalid(format!(
            "standardization needs at least 2 frames with detections, found {detected}"
        )));
    }
    // Welford accumulators per channel.
    let mut n = [0u64; POSE_DIM];
    let mut mean = [0.0f64; POSE_DIM];
    let mut m2 = [0.0f64; POSE_DIM];
    for f in train.iter().flat_map(|s| &s.frames) {
        for k in 0..NUM_KEYPOINTS {
            if f.confidence(k) <= 0.0 {
                continue;
            }
            for c in [3 * k, 3 * k + 1] {
                n[c] += 1;
                let d = f.pose[c] - mean[c];
                mean[c] += d / n[c] as f64;
                m2[c] += d * (f.pose[c] - mean[c]);
            }
        }
    }
    let mut stats = StandardizationStats::identity();
    let mut warnings = Vec::new();
    for c in (0..POSE_DIM).filter(|&c| !is_confidence(c)) {
        if n[c] == 0 {
            warnings.push(format!("channel {c} has no detected values; left unscaled"));
            continue;
        }
        stats.mean[c] = mean[c];
        let sd = (m2[c] / n[c] as f64).sqrt();
        if sd < MIN_STD {
            warnings.push(format!("channel {c} has zero variance; std clamped to {MIN_STD}"));
            stats.std[c] = MIN_STD;
        } else {
            stats.std[c] = sd;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FittedStats { stats, warnings })
}

// ------------------------------------------------------------------ adapter

/// One line of the extractor adapter stream: pixel-space keypoints and box.
/// `kp_px`/`bbox` are null when no person was detected and `emo` is null
/// when no face was found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterRecord {
    pub seq_id: String,
    pub frame_idx: u64,
    #[serde(default)]
    pub participant_id: String,
    #[serde(default = "default_env")]
    pub env_id: Environment,
    pub kp_px: Option<Vec<f64>>,
    pub bbox: Option<[f64; 4]>,
    pub emo: Option<Vec<f64>>,
    #[serde(default)]
    pub label: Option<u8>,
}

fn default_env() -> Environment {
    Environment::One
}

impl AdapterRecord {
    pub fn from_detection(seq_id: &str, frame_idx: u64, participant_id: &str, env: Environment, det: Option<&RawDetection>, label: Option<u8>) -> Self {
        Self {
            seq_id: seq_id.to_string(),
            frame_idx,
            participant_id: participant_id.to_string(),
            env_id: env,
            kp_px: det.map(|d| d.keypoints.iter().flat_map(|k| [k.u, k.v, k.s]).collect()),
            bbox: det.map(|d| [d.bbox.u_min, d.bbox.v_min, d.bbox.w, d.bbox.h]),
            emo: det.and_then(|d| d.face_emotion.map(|q| q.to_vec())),
            label,
        }
    }

    pub fn detection(&self) -> Result<Option<RawDetection>> {
        let (kp, bbox) = match (&self.kp_px, &self.bbox) {
            (Some(kp), Some(b)) => (kp, b),
            (None, None) => return Ok(None),
            _ => return Err(Error::invalid("kp_px and bbox must both be present or both be null")),
        };
        if kp.len() != POSE_DIM {
            return Err(Error::invalid(format!("kp_px has {} values, expected {POSE_DIM}", kp.len())));
        }
        let mut keypoints = [Keypoint { u: 0.0, v: 0.0, s: 0.0 }; NUM_KEYPOINTS];
        for (k, c) in keypoints.iter_mut().zip(kp.chunks(3)) {
            *k = Keypoint { u: c[0], v: c[1], s: c[2] };
        }
        let face_emotion = match &self.emo {
            None => None,
            Some(e) => Some(
                <[f64; EMOTION_DIM]>::try_from(e.as_slice())
                    .map_err(|_| Error::invalid(format!("emo has {} values, expected {EMOTION_DIM}", e.len())))?,
            ),
        };
        let det = RawDetection { keypoints, bbox: BoundingBox { u_min: bbox[0], v_min: bbox[1], w: bbox[2], h: bbox[3] }, face_emotion };
        det.validate()?;
        Ok(Some(det))
    }

    /// Normalized (unstandardized) frame for this record.
    pub fn to_frame(&self) -> Result<MultimodalFrame> {
        normalized_frame(self.detection()?.as_ref(), self.label)
    }
}

/// Parse an adapter stream line by line; errors carry the line number.
pub fn read_adapter<R: BufRead>(reader: R) -> impl Iterator<Item = Result<AdapterRecord>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(serde_json::from_str::<AdapterRecord>(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() }).and_then(|r| {
            r.detection().map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            Ok(r)
        }))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_at(u: f64, v: f64, s: f64, bbox: (f64, f64, f64, f64)) -> RawDetection {
        RawDetection {
            keypoints: [Keypoint { u, v, s }; NUM_KEYPOINTS],
            bbox: BoundingBox { u_min: bbox.0, v_min: bbox.1, w: bbox.2, h: bbox.3 },
            face_emotion: None,
        }
    }

    #[test]
    fn midpoint_and_corner() {
        let p = normalize_pose(&det_at(120.0, 240.0, 0.9, (100.0, 200.0, 40.0, 80.0))).unwrap();
        assert_eq!(&p[..3], &[0.5, 0.5, 0.9]);
        let p = normalize_pose(&det_at(100.0, 200.0, 0.7, (100.0, 200.0, 40.0, 80.0))).unwrap();
        assert_eq!(&p[..3], &[0.0, 0.0, 0.7]);
    }

    #[test]
    fn scaled_and_translated_detection_is_unchanged() {
        let d = det_at(120.0, 240.0, 0.9, (100.0, 200.0, 40.0, 80.0));
        let a = normalize_pose(&d).unwrap();
        let b = normalize_pose(&d.transformed(2.0, 50.0, 70.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_box_is_rejected() {
        assert!(normalize_pose(&det_at(1.0, 1.0, 1.0, (0.0, 0.0, 0.0, 5.0))).is_err());
        assert!(normalize_pose(&det_at(1.0, 1.0, 1.0, (0.0, 0.0, 5.0, -1.0))).is_err());
    }

    #[test]
    fn missing_face_is_neutral() {
        let f = build_frame(&det_at(1.0, 1.0, 1.0, (0.0, 0.0, 2.0, 2.0)), &StandardizationStats::identity(), None).unwrap();
        assert_eq!(f.emotion, [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut d = det_at(1.0, 1.0, 1.0, (0.0, 0.0, 2.0, 2.0));
        d.face_emotion = Some([1.0 / 7.0; 7]);
        let f = build_frame(&d, &StandardizationStats::identity(), Some(1)).unwrap();
        assert!(f.emotion.iter().all(|&q| q == 1.0 / 7.0));
        assert_eq!(f.labeled_features().unwrap().len(), 59);
    }

    fn seq_with_u1(values: &[f64]) -> SequenceRecord {
        let frames = values
            .iter()
            .map(|&u| {
                let mut f = MultimodalFrame::missing(None);
                for k in 0..NUM_KEYPOINTS {
                    f.pose[3 * k] = u;
                    f.pose[3 * k + 2] = 1.0;
                }
                f
            })
            .collect();
        SequenceRecord::new("s", "p", Environment::One, frames)
    }

    #[test]
    fn two_point_statistics() {
        let fit = fit_standardization(&[seq_with_u1(&[0.2, 0.4])]).unwrap();
        assert!((fit.stats.mean[0] - 0.3).abs() < 1e-12);
        assert!((fit.stats.std[0] - 0.1).abs() < 1e-12);
        assert_eq!((fit.stats.mean[2], fit.stats.std[2]), (0.0, 1.0));
        // ṽ channels are constant zero here
        assert_eq!(fit.stats.std[1], MIN_STD);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn too_few_detections() {
        assert!(fit_standardization(&[seq_with_u1(&[0.2])]).is_err());
    }

    #[test]
    fn apply_centers_and_identity_is_noop() {
        let fit = fit_standardization(&[seq_with_u1(&[0.2, 0.4])]).unwrap();
        let mut p = [0.0; POSE_DIM];
        p[0] = 0.3;
        p[2] = 0.77;
        let z = fit.stats.apply(&p);
        assert!(z[0].abs() < 1e-12);
        assert_eq!(z[2], 0.77);
        assert_eq!(StandardizationStats::identity().apply(&p), p);
    }

    #[test]
    fn missing_keypoints_stay_at_zero() {
        let stats = StandardizationStats { mean: vec![0.5; POSE_DIM], std: vec![0.2; POSE_DIM] };
        let mut p = [0.0; POSE_DIM];
        p[3] = 0.7;
        p[5] = 0.9;
        let z = stats.apply(&p);
        assert_eq!((z[0], z[1]), (0.0, 0.0));
        assert!((z[3] - 1.0).abs() < 1e-12);
        assert_eq!(stats.invert(&z), p);
    }

    #[test]
    fn adapter_roundtrip() {
        let mut d = det_at(120.0, 240.0, 0.9, (100.0, 200.0, 40.0, 80.0));
        d.face_emotion = Some([0.1, 0.1, 0.5, 0.1, 0.1, 0.05, 0.05]);
        let rec = AdapterRecord::from_detection("a", 3, "p1", Environment::Two, Some(&d), Some(1));
        let line = serde_json::to_string(&rec).unwrap();
        let parsed: Vec<_> = read_adapter(line.as_bytes()).collect::<Result<_>>().unwrap();
        assert_eq!(parsed[0], rec);
        assert_eq!(parsed[0].detection().unwrap().unwrap(), d);
        let missing = AdapterRecord::from_detection("a", 4, "p1", Environment::Two, None, Some(0));
        assert_eq!(missing.to_frame().unwrap(), MultimodalFrame::missing(Some(0)));
    }
}
