//! Deterministic synthetic penalty-kick scenarios.
//!
//! A stick-figure shooter runs up to a fixed ball along a jittered line. The
//! kicking (right) ankle follows a distance-ratio profile that slows down near
//! contact. Late in the run-up the trunk rotates towards the chosen side and
//! the plant foot shifts laterally; before the cue onset every label produces
//! the same motion.
//!
//! Scenes are laid out on a 224-pixel canvas, perturbed by a random zoom and
//! pan, then multiplied by `camera_scale`, so the emitted frame is
//! `224 * camera_scale` pixels wide.

use std::f64::consts::PI;

use ndarray::ArrayView3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SegmentationInfo};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, SampleEntry};
use crate::render::RecordRenderer;
use crate::segmentation::{build_sample, Segmented, ThresholdConfig};
use crate::split::split_dataset;
use crate::types::{
    kp, BoundingBox, Detection, DirectionLabel, FrameGeometry, FrameRecord, Keypoint, ObjectClass, PoseFrame,
    NUM_KEYPOINTS, SEQ_LEN,
};

pub const BASE_SIZE: f64 = 224.0;
const NET_BOX: [f64; 4] = [50.0, 24.0, 174.0, 68.0];
const KEEPER_BOX: [f64; 4] = [104.0, 30.0, 120.0, 66.0];
const BALL_CENTER: (f64, f64) = (118.0, 142.0);
const BALL_RADIUS: f64 = 5.0;
/// Kicking-ankle offset from the hip midpoint.
const RIGHT_ANKLE_OFFSET: (f64, f64) = (6.0, 28.0);
/// Plant-foot lateral shift per radian of trunk rotation.
const PLANT_SHIFT: f64 = 8.0;
const GAIT_AMPLITUDE: f64 = 1.5;

/// Body-frame joint positions relative to the hip midpoint.
const SKELETON_BODY: [(f64, f64); NUM_KEYPOINTS] = [
    (0.0, -36.0),
    (-3.0, -38.0),
    (3.0, -38.0),
    (-6.0, -36.0),
    (6.0, -36.0),
    (-10.0, -26.0),
    (10.0, -26.0),
    (-14.0, -14.0),
    (14.0, -14.0),
    (-16.0, -3.0),
    (16.0, -3.0),
    (-6.0, 0.0),
    (6.0, 0.0),
    (-6.0, 14.0),
    (6.0, 14.0),
    (-6.0, 28.0),
    (6.0, 28.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub label: DirectionLabel,
    pub n_frames: usize,
    pub camera_scale: f64,
    /// Trunk rotation at full cue, radians.
    pub cue_strength: f64,
    /// Fraction of the run-up (by frame) at which the cue starts.
    pub cue_onset: f64,
    /// Fraction of the run-up over which the cue ramps to full strength.
    pub cue_ramp: f64,
    /// Keypoint noise standard deviation in canvas pixels.
    pub keypoint_noise_sigma: f64,
    /// Probability that a frame's pose fails the confidence test.
    pub dropout_prob: f64,
    pub seed: u64,
}

impl ScenarioParams {
    pub fn new(label: DirectionLabel, seed: u64) -> Self {
        let d = GeneratorConfig::default();
        Self {
            label,
            n_frames: 128,
            camera_scale: 1.0,
            cue_strength: d.cue_strength,
            cue_onset: d.cue_onset,
            cue_ramp: d.cue_ramp,
            keypoint_noise_sigma: d.keypoint_noise_sigma,
            dropout_prob: d.dropout_prob,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_frames < SEQ_LEN {
            return bad(format!("n_frames {} < {SEQ_LEN}", self.n_frames));
        }
        if !(self.camera_scale > 0.0 && self.camera_scale.is_finite()) {
            return bad(format!("camera_scale {} must be positive", self.camera_scale));
        }
        if !(self.cue_onset > 0.0 && self.cue_onset < 1.0) {
            return bad(format!("cue_onset {} outside (0, 1)", self.cue_onset));
        }
        if !(self.cue_ramp > 0.0 && self.cue_ramp.is_finite()) {
            return bad(format!("cue_ramp {} must be positive", self.cue_ramp));
        }
        if !(self.cue_strength >= 0.0 && self.cue_strength.is_finite()) {
            return bad(format!("cue_strength {} must be non-negative", self.cue_strength));
        }
        if !(self.keypoint_noise_sigma >= 0.0 && self.keypoint_noise_sigma.is_finite()) {
            return bad(format!(
                "keypoint noise {} must be non-negative",
                self.keypoint_noise_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob {} outside [0, 1]", self.dropout_prob));
        }
        Ok(())
    }
}

/// Distribution from which per-scenario parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_camera_scale: f64,
    pub max_camera_scale: f64,
    pub cue_strength: f64,
    pub cue_onset: f64,
    pub cue_ramp: f64,
    pub keypoint_noise_sigma: f64,
    pub dropout_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_frames: 100,
            max_frames: 160,
            min_camera_scale: 0.5,
            max_camera_scale: 2.0,
            cue_strength: 0.5,
            cue_onset: 0.64,
            cue_ramp: 0.08,
            keypoint_noise_sigma: 0.5,
            dropout_prob: 0.1,
        }
    }
}

impl GeneratorConfig {
    /// Setting used for the learnability check.
    pub fn strong_cue() -> Self {
        Self {
            cue_strength: 0.8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_frames < SEQ_LEN || self.min_frames > self.max_frames {
            return Err(Error::InvalidConfig(format!(
                "frame range {}..={} invalid",
                self.min_frames, self.max_frames
            )));
        }
        if !(self.min_camera_scale > 0.0 && self.min_camera_scale <= self.max_camera_scale) {
            return Err(Error::InvalidConfig(format!(
                "camera scale range {}..={} invalid",
                self.min_camera_scale, self.max_camera_scale
            )));
        }
        self.draw(DirectionLabel::Middle, 0).validate()
    }

    /// Per-scenario parameters, drawn deterministically from `seed`.
    pub fn draw(&self, label: DirectionLabel, seed: u64) -> ScenarioParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_A210_0000_0001);
        let n_frames = rng.random_range(self.min_frames..=self.max_frames);
        let (lo, hi) = (self.min_camera_scale.ln(), self.max_camera_scale.ln());
        let camera_scale = if hi > lo {
            rng.random_range(lo..hi).exp()
        } else {
            self.min_camera_scale
        };
        ScenarioParams {
            label,
            n_frames,
            camera_scale,
            cue_strength: self.cue_strength,
            cue_onset: self.cue_onset,
            cue_ramp: self.cue_ramp,
            keypoint_noise_sigma: self.keypoint_noise_sigma,
            dropout_prob: self.dropout_prob,
            seed,
        }
    }
}

/// Ground truth for one frame, in emitted-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub frame_index: u64,
    pub hip: (f64, f64),
    /// Trunk rotation applied to this frame, radians.
    pub rotation: f64,
    /// Noise-free distance ratio of the kicking ankle.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ScenarioParams,
    pub label: DirectionLabel,
    pub geometry: FrameGeometry,
    pub stream: Vec<FrameRecord>,
    pub truth: Vec<KinematicState>,
}

struct View {
    zoom: f64,
    pan: (f64, f64),
    scale: f64,
}

impl View {
    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let c = BASE_SIZE / 2.0;
        let x = ((x - c) * self.zoom + c + self.pan.0).clamp(0.0, BASE_SIZE);
        let y = ((y - c) * self.zoom + c + self.pan.1).clamp(0.0, BASE_SIZE);
        (x * self.scale, y * self.scale)
    }

    fn bbox(&self, b: [f64; 4]) -> BoundingBox {
        let (x1, y1) = self.apply((b[0], b[1]));
        let (x2, y2) = self.apply((b[2], b[3]));
        BoundingBox::new(x1, y1, x2, y2).expect("scene boxes stay inside the canvas")
    }
}

fn rotate(p: (f64, f64), about: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (p.0 - about.0, p.1 - about.1);
    (about.0 + c * dx - s * dy, about.1 + s * dx + c * dy)
}

/// Piecewise-linear interpolation through `(u, value)` knots sorted by `u`.
fn interp(knots: &[(f64, f64)], u: f64) -> f64 {
    for w in knots.windows(2) {
        let ((u0, v0), (u1, v1)) = (w[0], w[1]);
        if u <= u1 {
            let t = ((u - u0) / (u1 - u0)).clamp(0.0, 1.0);
            return v0 + t * (v1 - v0);
        }
    }
    knots[knots.len() - 1].1
}

/// Cue weight in [0, 1] at run-up fraction `u`.
pub fn cue_weight(u: f64, onset: f64, ramp: f64) -> f64 {
    ((u - onset) / ramp).clamp(0.0, 1.0)
}

pub fn generate_scenario(params: &ScenarioParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // scene-level draws; the order is label independent
    let view = View {
        zoom: rng.random_range(0.92..1.08),
        pan: (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)),
        scale: params.camera_scale,
    };
    let heading = (0.66f64).atan2(-0.75) + rng.random_range(-10.0..10.0) * PI / 180.0;
    let dir = (heading.cos(), heading.sin());
    let r0: f64 = rng.random_range(0.85..1.0);
    let knots = [
        (0.0, r0),
        (0.52 + rng.random_range(-0.02..0.02), 0.35),
        (0.70 + rng.random_range(-0.015..0.015), 0.25),
        (0.92 + rng.random_range(-0.015..0.015), 0.15),
        (1.0, rng.random_range(0.02..0.045)),
    ];
    let middle_share: f64 = rng.random_range(-0.25..0.25);
    let gait_cycles: f64 = rng.random_range(3.0..5.0);
    let gait_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let side = match params.label {
        DirectionLabel::Left => -1.0,
        DirectionLabel::Middle => middle_share,
        DirectionLabel::Right => 1.0,
    };

    let net_center = ((NET_BOX[0] + NET_BOX[2]) / 2.0, (NET_BOX[1] + NET_BOX[3]) / 2.0);
    let reference = (BALL_CENTER.0 - net_center.0).hypot(BALL_CENTER.1 - net_center.1);
    let ball_box = [
        BALL_CENTER.0 - BALL_RADIUS,
        BALL_CENTER.1 - BALL_RADIUS,
        BALL_CENTER.0 + BALL_RADIUS,
        BALL_CENTER.1 + BALL_RADIUS,
    ];
    let size = BASE_SIZE * params.camera_scale;
    let geometry = FrameGeometry::new(size, size)?;
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let n = params.n_frames;
    let mut stream = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for t in 0..n {
        let u = t as f64 / (n - 1) as f64;
        let ratio = interp(&knots, u);
        let ankle = (
            BALL_CENTER.0 + dir.0 * ratio * reference,
            BALL_CENTER.1 + dir.1 * ratio * reference,
        );
        let hip = (ankle.0 - RIGHT_ANKLE_OFFSET.0, ankle.1 - RIGHT_ANKLE_OFFSET.1);
        let rotation = side * params.cue_strength * cue_weight(u, params.cue_onset, params.cue_ramp);
        let fade = ((0.9 - u) / 0.3).clamp(0.0, 1.0);
        let gait = GAIT_AMPLITUDE * fade * (2.0 * PI * gait_cycles * u + gait_phase).sin();

        let shoulder_mid = (hip.0, hip.1 + SKELETON_BODY[kp::LEFT_SHOULDER].1);
        let mut joints = [(0.0, 0.0); NUM_KEYPOINTS];
        for (j, &(bx, by)) in SKELETON_BODY.iter().enumerate() {
            let p = (hip.0 + bx, hip.1 + by);
            joints[j] = match j {
                kp::LEFT_SHOULDER..=kp::RIGHT_WRIST => rotate(p, shoulder_mid, rotation),
                kp::LEFT_HIP | kp::RIGHT_HIP => rotate(p, hip, rotation / 2.0),
                kp::LEFT_KNEE => (p.0 + PLANT_SHIFT * rotation / 2.0, p.1),
                kp::LEFT_ANKLE => (p.0 + PLANT_SHIFT * rotation - dir.0 * gait, p.1 - dir.1 * gait),
                kp::RIGHT_ANKLE => (p.0 + dir.0 * gait, p.1 + dir.1 * gait),
                _ => p,
            };
        }

        let low_conf = rng.random::<f64>() < params.dropout_prob;
        let sigma = params.keypoint_noise_sigma * if low_conf { 2.0 } else { 1.0 };
        let mut kps = [Keypoint {
            x: 0.0,
            y: 0.0,
            conf: 0.0,
        }; NUM_KEYPOINTS];
        for (k, &(x, y)) in kps.iter_mut().zip(&joints) {
            let conf = if low_conf {
                rng.random_range(0.2..0.55)
            } else {
                rng.random_range(0.7..0.99)
            };
            let nx = unit_normal.sample(&mut rng) * sigma * view.zoom;
            let ny = unit_normal.sample(&mut rng) * sigma * view.zoom;
            let (vx, vy) = view.apply((x, y));
            let s = view.scale;
            *k = Keypoint {
                x: (vx + nx * s).clamp(0.0, size),
                y: (vy + ny * s).clamp(0.0, size),
                conf,
            };
        }
        let pose = PoseFrame::new(kps)?;

        let xs = kps.iter().map(|k| k.x);
        let ys = kps.iter().map(|k| k.y);
        let pad = 4.0 * params.camera_scale;
        let shooter = BoundingBox::new(
            (xs.clone().fold(f64::INFINITY, f64::min) - pad).max(0.0),
            (ys.clone().fold(f64::INFINITY, f64::min) - pad).max(0.0),
            (xs.fold(f64::NEG_INFINITY, f64::max) + pad).min(size).max(pad),
            (ys.fold(f64::NEG_INFINITY, f64::max) + pad).min(size).max(pad),
        )?;
        let mut det = |cls, bbox| Detection::new(cls, bbox, rng.random_range(0.85..0.99));
        let detections = vec![
            det(ObjectClass::Net, view.bbox(NET_BOX))?,
            det(ObjectClass::Goalkeeper, view.bbox(KEEPER_BOX))?,
            det(ObjectClass::Ball, view.bbox(ball_box))?,
            det(ObjectClass::Shooter, shooter)?,
        ];

        stream.push(FrameRecord {
            frame_index: t as u64,
            detections,
            pose: Some(pose),
            image_ref: None,
            size: Some([size, size]),
        });
        truth.push(KinematicState {
            frame_index: t as u64,
            hip: view.apply(hip),
            rotation,
            ratio,
        });
    }

    Ok(Scenario {
        params: *params,
        label: params.label,
        geometry,
        stream,
        truth,
    })
}

/// Mean shoulder-line angle, in radians, over the last `frames` steps of a
/// normalised `T×17×2` keypoint tensor.
pub fn shoulder_rotation(keypoints: ArrayView3<f64>, geometry: FrameGeometry, frames: usize) -> f64 {
    let t = keypoints.shape()[0];
    let from = t.saturating_sub(frames);
    let angles: Vec<f64> = (from..t)
        .map(|i| {
            let dx = (keypoints[[i, kp::RIGHT_SHOULDER, 0]] - keypoints[[i, kp::LEFT_SHOULDER, 0]]) * geometry.width;
            let dy = (keypoints[[i, kp::RIGHT_SHOULDER, 1]] - keypoints[[i, kp::LEFT_SHOULDER, 1]]) * geometry.height;
            dy.atan2(dx)
        })
        .collect();
    angles.iter().sum::<f64>() / angles.len().max(1) as f64
}

/// Rule-based classifier over the shoulder line of the last three sampled frames.
pub fn oracle_classify(keypoints: ArrayView3<f64>, geometry: FrameGeometry, cue_strength: f64) -> DirectionLabel {
    let rot = shoulder_rotation(keypoints, geometry, 3);
    let eps = cue_strength / 2.0;
    if rot > eps {
        DirectionLabel::Right
    } else if rot < -eps {
        DirectionLabel::Left
    } else {
        DirectionLabel::Middle
    }
}

/// SplitMix64 mix of a base seed with a scenario index and retry count.
pub fn sub_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(attempt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maximum attempts per scenario before generation gives up.
pub const MAX_ATTEMPTS: u64 = 10;

/// A segmented synthetic corpus with the per-sample segmentation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dataset: Dataset,
    pub segmentation: Vec<SegmentationInfo>,
    pub params: Vec<ScenarioParams>,
}

/// Scenario `index` of a corpus, regenerated with a new sub-seed until it
/// segments at every threshold.
fn generate_one(
    index: usize,
    seed: u64,
    gen: &GeneratorConfig,
    cfgs: &[ThresholdConfig],
    raster_hw: (u32, u32),
) -> Result<(ScenarioParams, Vec<Segmented>)> {
    let label = DirectionLabel::from_index(index % 3).expect("index mod 3");
    let id = sample_id(index);
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let params = gen.draw(label, sub_seed(seed, index as u64, attempt));
        let scenario = generate_scenario(&params)?;
        let built: Result<Vec<Segmented>> = cfgs
            .iter()
            .map(|cfg| build_sample(&scenario.stream, cfg, label, &id, &RecordRenderer::default(), raster_hw))
            .collect();
        match built {
            Ok(segs) => return Ok((params, segs)),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::GenerationFailed {
        index,
        attempts: MAX_ATTEMPTS as usize,
        last,
    })
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// One corpus per threshold, all cut from the same underlying scenarios and
/// sharing one split.
pub fn generate_corpora(
    n: usize,
    seed: u64,
    gen: &GeneratorConfig,
    thresholds: &[ThresholdConfig],
    raster_hw: (u32, u32),
) -> Result<Vec<Corpus>> {
    if n < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 scenarios, got {n}")));
    }
    gen.validate()?;
    for cfg in thresholds {
        cfg.validate()?;
    }
    let mut per_threshold: Vec<Vec<Segmented>> = vec![Vec::with_capacity(n); thresholds.len()];
    let mut params = Vec::with_capacity(n);
    for i in 0..n {
        let (p, segs) = generate_one(i, seed, gen, thresholds, raster_hw)?;
        params.push(p);
        for (bucket, s) in per_threshold.iter_mut().zip(segs) {
            bucket.push(s);
        }
    }
    let labels: Vec<DirectionLabel> = params.iter().map(|p| p.label).collect();
    let tags = split_dataset(n, &labels, seed)?.tags(n);

    thresholds
        .iter()
        .zip(per_threshold)
        .map(|(cfg, segs)| {
            let mut manifest = DatasetManifest::new(seed, cfg.ratio);
            let mut samples = Vec::with_capacity(n);
            let mut segmentation = Vec::with_capacity(n);
            for (i, s) in segs.into_iter().enumerate() {
                manifest.samples.push(SampleEntry {
                    sample_id: s.sample.sample_id.clone(),
                    label: s.sample.label,
                    split: tags[i],
                    path: format!("samples/{}", s.sample.sample_id),
                });
                segmentation.push(SegmentationInfo::new(&s, cfg.ratio));
                samples.push(s.sample);
            }
            manifest.check_split_sizes()?;
            Ok(Corpus {
                dataset: Dataset::new(manifest, samples)?,
                segmentation,
                params: params.clone(),
            })
        })
        .collect()
}

/// Balanced, split, segmented corpus of `n` scenarios at one threshold.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    gen: &GeneratorConfig,
    threshold: &ThresholdConfig,
    raster_hw: (u32, u32),
) -> Result<Corpus> {
    Ok(
        generate_corpora(n, seed, gen, std::slice::from_ref(threshold), raster_hw)?
            .pop()
            .expect("one corpus per threshold"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{find_endpoint, ratio_trace, select_frames};

    fn params(label: DirectionLabel, seed: u64) -> ScenarioParams {
        ScenarioParams::new(label, seed)
    }

    #[test]
    fn same_seed_same_stream() {
        let a = generate_scenario(&params(DirectionLabel::Right, 9)).unwrap();
        let b = generate_scenario(&params(DirectionLabel::Right, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_cue_makes_labels_identical() {
        let mut l = params(DirectionLabel::Left, 4);
        l.cue_strength = 0.0;
        let r = ScenarioParams {
            label: DirectionLabel::Right,
            ..l
        };
        let m = ScenarioParams {
            label: DirectionLabel::Middle,
            ..l
        };
        let sl = generate_scenario(&l).unwrap().stream;
        assert_eq!(sl, generate_scenario(&r).unwrap().stream);
        assert_eq!(sl, generate_scenario(&m).unwrap().stream);
    }

    #[test]
    fn run_up_ends_close_to_ball() {
        for seed in 0..20 {
            let s = generate_scenario(&params(DirectionLabel::Middle, seed)).unwrap();
            assert!(s.truth.last().unwrap().ratio < 0.05);
            let trace = ratio_trace(&s.stream).unwrap();
            let last = trace.entries.last().unwrap().ratio.unwrap();
            assert!(last < 0.1, "seed {seed}: final measured ratio {last}");
            let first = trace.entries[0].ratio.unwrap();
            assert!(first > 0.7, "seed {seed}: first ratio {first}");
        }
    }

    #[test]
    fn camera_scale_keeps_endpoint() {
        let cfg = ThresholdConfig::new(0.15).unwrap();
        for seed in 0..10 {
            let mut p = params(DirectionLabel::Left, seed);
            let one = generate_scenario(&p).unwrap();
            p.camera_scale = 2.0;
            let two = generate_scenario(&p).unwrap();
            let e1 = find_endpoint(&ratio_trace(&one.stream).unwrap(), &cfg).unwrap();
            let e2 = find_endpoint(&ratio_trace(&two.stream).unwrap(), &cfg).unwrap();
            assert_eq!(e1, e2);
            assert_eq!(
                select_frames(&one.stream, e1, &cfg).unwrap(),
                select_frames(&two.stream, e2, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn noiseless_oracle_matches_label() {
        let cfg = ThresholdConfig::new(0.15).unwrap();
        for (i, label) in DirectionLabel::ALL.into_iter().enumerate() {
            for seed in 0..5 {
                let mut p = params(label, seed * 3 + i as u64);
                p.cue_strength = 0.4;
                p.keypoint_noise_sigma = 0.0;
                p.dropout_prob = 0.0;
                let s = generate_scenario(&p).unwrap();
                let seg = build_sample(&s.stream, &cfg, label, "x", &RecordRenderer::default(), (32, 32)).unwrap();
                let got = oracle_classify(seg.sample.keypoints.view(), s.geometry, 0.4);
                assert_eq!(got, label, "seed {seed}");
            }
        }
    }

    fn oracle_accuracy(threshold: f64, n: u64) -> f64 {
        let cfg = ThresholdConfig::new(threshold).unwrap();
        let gen = GeneratorConfig::default();
        let mut correct = 0;
        for i in 0..n {
            let label = DirectionLabel::from_index((i % 3) as usize).unwrap();
            let s = generate_scenario(&gen.draw(label, 500 + i)).unwrap();
            let seg = build_sample(&s.stream, &cfg, label, "x", &RecordRenderer::default(), (16, 16)).unwrap();
            correct += usize::from(oracle_classify(seg.sample.keypoints.view(), s.geometry, gen.cue_strength) == label);
        }
        correct as f64 / n as f64
    }

    #[test]
    fn cue_is_local_to_the_end_of_the_run_up() {
        let late = oracle_accuracy(0.35, 90);
        let early = oracle_accuracy(0.15, 90);
        assert!(late <= 0.6, "oracle accuracy at 0.35 is {late}");
        assert!(
            early > late,
            "oracle accuracy at 0.15 ({early}) not above 0.35 ({late})"
        );
    }

    #[test]
    fn small_corpus_is_balanced_and_deterministic() {
        let cfg = ThresholdConfig::new(0.15).unwrap();
        let gen = GeneratorConfig::default();
        let a = generate_dataset(3, 5, &gen, &cfg, (32, 32)).unwrap();
        let labels: Vec<_> = a.dataset.samples.iter().map(|s| s.label).collect();
        assert_eq!(labels, DirectionLabel::ALL.to_vec());
        assert_eq!(a, generate_dataset(3, 5, &gen, &cfg, (32, 32)).unwrap());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(8))]
        #[test]
        fn corpus_labels_are_balanced(n in 3usize..24, seed in 0u64..1000) {
            let cfg = ThresholdConfig::new(0.15).unwrap();
            let c = generate_dataset(n, seed, &GeneratorConfig::default(), &cfg, (16, 16)).unwrap();
            for l in DirectionLabel::ALL {
                let count = c.dataset.samples.iter().filter(|s| s.label == l).count() as f64;
                proptest::prop_assert!((count - n as f64 / 3.0).abs() <= 1.0);
            }
        }
    }
}
