//! Shared domain types: labels, detections, COCO-17 poses, frame records and
//! model-ready kick samples.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 17;
/// Frames per model input sequence.
pub const SEQ_LEN: usize = 8;
pub const NUM_CLASSES: usize = 3;

/// COCO-17 keypoint indices.
pub mod kp {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

/// COCO limb connections used for drawing skeletons.
pub const SKELETON: [(usize, usize); 16] = [
    (kp::LEFT_ANKLE, kp::LEFT_KNEE),
    (kp::LEFT_KNEE, kp::LEFT_HIP),
    (kp::RIGHT_ANKLE, kp::RIGHT_KNEE),
    (kp::RIGHT_KNEE, kp::RIGHT_HIP),
    (kp::LEFT_HIP, kp::RIGHT_HIP),
    (kp::LEFT_SHOULDER, kp::LEFT_HIP),
    (kp::RIGHT_SHOULDER, kp::RIGHT_HIP),
    (kp::LEFT_SHOULDER, kp::RIGHT_SHOULDER),
    (kp::LEFT_SHOULDER, kp::LEFT_ELBOW),
    (kp::RIGHT_SHOULDER, kp::RIGHT_ELBOW),
    (kp::LEFT_ELBOW, kp::LEFT_WRIST),
    (kp::RIGHT_ELBOW, kp::RIGHT_WRIST),
    (kp::LEFT_EYE, kp::RIGHT_EYE),
    (kp::NOSE, kp::LEFT_EYE),
    (kp::LEFT_EYE, kp::LEFT_EAR),
    (kp::RIGHT_EYE, kp::RIGHT_EAR),
];

/// Goal third the ball ends in, from the goalkeeper's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionLabel {
    Left,
    Middle,
    Right,
}

impl DirectionLabel {
    pub const ALL: [DirectionLabel; 3] = [DirectionLabel::Left, DirectionLabel::Middle, DirectionLabel::Right];

    pub fn index(self) -> usize {
        match self {
            DirectionLabel::Left => 0,
            DirectionLabel::Middle => 1,
            DirectionLabel::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            DirectionLabel::Left => "left",
            DirectionLabel::Middle => "middle",
            DirectionLabel::Right => "right",
        }
    }
}

impl fmt::Display for DirectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DirectionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(DirectionLabel::Left),
            "middle" => Ok(DirectionLabel::Middle),
            "right" => Ok(DirectionLabel::Right),
            other => Err(Error::Input(format!("unknown direction label `{other}`"))),
        }
    }
}

/// Axis-aligned box in image pixels, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::Input(format!("invalid bounding box [{x1}, {y1}, {x2}, {y2}]")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Multiplies every coordinate by `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            x1: self.x1 * s,
            y1: self.y1 * s,
            x2: self.x2 * s,
            y2: self.y2 * s,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Shooter,
    Goalkeeper,
    Net,
    Ball,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub cls: ObjectClass,
    #[serde(rename = "bbox")]
    pub bbox: BoundingBox,
    pub conf: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    cls: ObjectClass,
    bbox: BoundingBox,
    conf: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = Error;

    fn try_from(r: RawDetection) -> Result<Self> {
        Detection::new(r.cls, r.bbox, r.conf)
    }
}

impl Detection {
    pub fn new(cls: ObjectClass, bbox: BoundingBox, conf: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::Input(format!("detection confidence {conf} outside [0, 1]")));
        }
        Ok(Self { cls, bbox, conf })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub conf: f64,
}

/// One COCO-17 pose, serialised as `{"kps": [[x, y, c], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct PoseFrame {
    keypoints: [Keypoint; NUM_KEYPOINTS],
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    kps: Vec<[f64; 3]>,
}

impl TryFrom<RawPose> for PoseFrame {
    type Error = Error;

    fn try_from(r: RawPose) -> Result<Self> {
        if r.kps.len() != NUM_KEYPOINTS {
            return Err(Error::Input(format!(
                "pose has {} keypoints, expected {NUM_KEYPOINTS}",
                r.kps.len()
            )));
        }
        let mut kps = [Keypoint {
            x: 0.0,
            y: 0.0,
            conf: 0.0,
        }; NUM_KEYPOINTS];
        for (k, [x, y, c]) in kps.iter_mut().zip(r.kps) {
            *k = Keypoint { x, y, conf: c };
        }
        PoseFrame::new(kps)
    }
}

impl From<PoseFrame> for RawPose {
    fn from(p: PoseFrame) -> Self {
        RawPose {
            kps: p.keypoints.iter().map(|k| [k.x, k.y, k.conf]).collect(),
        }
    }
}

impl PoseFrame {
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS]) -> Result<Self> {
        for (i, k) in keypoints.iter().enumerate() {
            if !k.x.is_finite() || !k.y.is_finite() || !(0.0..=1.0).contains(&k.conf) {
                return Err(Error::Input(format!("keypoint {i} invalid: {k:?}")));
            }
        }
        Ok(Self { keypoints })
    }

    pub fn keypoints(&self) -> &[Keypoint; NUM_KEYPOINTS] {
        &self.keypoints
    }

    pub fn get(&self, index: usize) -> Keypoint {
        self.keypoints[index]
    }

    pub fn mean_confidence(&self) -> f64 {
        self.keypoints.iter().map(|k| k.conf).sum::<f64>() / NUM_KEYPOINTS as f64
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut keypoints = self.keypoints;
        for k in &mut keypoints {
            k.x *= s;
            k.y *= s;
        }
        Self { keypoints }
    }
}

/// Pixel dimensions of a source frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    pub width: f64,
    pub height: f64,
}

impl FrameGeometry {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidFrameGeometry { width, height });
        }
        Ok(Self { width, height })
    }
}

/// One frame of a detection/pose stream (one JSONL line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseFrame>,
    #[serde(default, rename = "image", skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Source frame `[width, height]` in pixels, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[f64; 2]>,
}

impl FrameRecord {
    /// Most confident detection of `cls`, if any.
    pub fn detection(&self, cls: ObjectClass) -> Option<&Detection> {
        self.detections
            .iter()
            .filter(|d| d.cls == cls)
            .max_by(|a, b| a.conf.total_cmp(&b.conf))
    }

    /// Copy with every pixel coordinate (boxes, keypoints, frame size) multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            frame_index: self.frame_index,
            detections: self
                .detections
                .iter()
                .map(|d| Detection {
                    bbox: d.bbox.scaled(s),
                    ..*d
                })
                .collect(),
            pose: self.pose.as_ref().map(|p| p.scaled(s)),
            image_ref: self.image_ref.clone(),
            size: self.size.map(|[w, h]| [w * s, h * s]),
        }
    }

    pub fn geometry(&self) -> Option<Result<FrameGeometry>> {
        self.size.map(|[w, h]| FrameGeometry::new(w, h))
    }
}

/// Divides pixel keypoints by the frame dimensions; confidence is dropped.
pub fn normalize_keypoints(pose: &PoseFrame, width: f64, height: f64) -> Result<[[f64; 2]; NUM_KEYPOINTS]> {
    let g = FrameGeometry::new(width, height)?;
    let mut out = [[0.0; 2]; NUM_KEYPOINTS];
    for (o, k) in out.iter_mut().zip(pose.keypoints()) {
        *o = [k.x / g.width, k.y / g.height];
    }
    Ok(out)
}

/// Model-ready sample: 8 RGB frames plus 8×17×2 normalised keypoints.
///
/// Frames are kept as 8-bit rasters; [`KickSample::frames_tensor`] yields the
/// `[8, H, W, 3]` view with channels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KickSample {
    pub sample_id: String,
    pub label: DirectionLabel,
    pub frames: Vec<RgbImage>,
    pub keypoints: Array3<f64>,
}

impl KickSample {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != SEQ_LEN {
            return Err(Error::shape("sample frames", &[SEQ_LEN], &[self.frames.len()]));
        }
        let (w, h) = self.frames[0].dimensions();
        for f in &self.frames {
            if f.dimensions() != (w, h) {
                return Err(Error::shape(
                    "sample frame size",
                    &[h as usize, w as usize],
                    &[f.height() as usize, f.width() as usize],
                ));
            }
        }
        if self.keypoints.shape() != [SEQ_LEN, NUM_KEYPOINTS, 2] {
            return Err(Error::shape(
                "sample keypoints",
                &[SEQ_LEN, NUM_KEYPOINTS, 2],
                self.keypoints.shape(),
            ));
        }
        if let Some(v) = self.keypoints.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("normalised keypoint {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// `(height, width)` of the frames.
    pub fn frame_hw(&self) -> (usize, usize) {
        let (w, h) = self.frames[0].dimensions();
        (h as usize, w as usize)
    }

    pub fn frames_tensor(&self) -> Array4<f64> {
        let (h, w) = self.frame_hw();
        let mut out = Array4::zeros((self.frames.len(), h, w, 3));
        for (t, img) in self.frames.iter().enumerate() {
            let mut dst = out.index_axis_mut(ndarray::Axis(0), t);
            for (d, s) in dst.iter_mut().zip(img.as_raw()) {
                *d = f64::from(*s) / 255.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_with(f: impl Fn(usize) -> Keypoint) -> PoseFrame {
        PoseFrame::new(std::array::from_fn(f)).unwrap()
    }

    #[test]
    fn one_hot_has_exactly_one_one() {
        for l in DirectionLabel::ALL {
            let v = l.one_hot();
            assert_eq!(v.iter().filter(|x| **x == 1.0).count(), 1);
            assert_eq!(v.iter().sum::<f64>(), 1.0);
            assert_eq!(DirectionLabel::from_index(l.index()), Some(l));
        }
    }

    #[test]
    fn bounding_box_rejects_inverted_or_negative() {
        assert!(BoundingBox::new(0.0, 0.0, 10.0, 20.0).is_ok());
        assert!(BoundingBox::new(10.0, 0.0, 10.0, 20.0).is_err());
        assert!(BoundingBox::new(0.0, 5.0, 10.0, 1.0).is_err());
        assert!(BoundingBox::new(-1.0, 0.0, 10.0, 20.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 20.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let p = pose_with(|i| Keypoint {
            x: if i == 0 { 112.0 } else { 224.0 },
            y: if i == 0 { 56.0 } else { 224.0 },
            conf: 0.9,
        });
        let n = normalize_keypoints(&p, 224.0, 224.0).unwrap();
        assert_eq!(n[0], [0.5, 0.25]);
        assert_eq!(n[1], [1.0, 1.0]);

        let zero = pose_with(|_| Keypoint {
            x: 0.0,
            y: 0.0,
            conf: 1.0,
        });
        assert!(normalize_keypoints(&zero, 224.0, 224.0)
            .unwrap()
            .iter()
            .all(|k| *k == [0.0, 0.0]));
    }

    #[test]
    fn normalize_rejects_bad_geometry() {
        let p = pose_with(|_| Keypoint {
            x: 1.0,
            y: 1.0,
            conf: 1.0,
        });
        for (w, h) in [(0.0, 10.0), (10.0, -1.0), (f64::INFINITY, 1.0)] {
            assert!(matches!(
                normalize_keypoints(&p, w, h),
                Err(Error::InvalidFrameGeometry { .. })
            ));
        }
    }

    #[test]
    fn frame_record_parses_documented_line() {
        let kps: Vec<String> = (0..17).map(|i| format!("[{i},{},0.9]", i * 2)).collect();
        let line = format!(
            r#"{{"frame": 12, "detections": [{{"cls": "ball", "bbox": [1,2,3,4], "conf": 0.97}}], "pose": {{"kps": [{}]}}, "image": "frames/000012.png", "extra": true}}"#,
            kps.join(",")
        );
        let r: FrameRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(r.frame_index, 12);
        assert_eq!(r.detection(ObjectClass::Ball).unwrap().bbox.center(), (2.0, 3.0));
        assert_eq!(r.pose.as_ref().unwrap().get(3).y, 6.0);
        assert_eq!(r.image_ref.as_deref(), Some("frames/000012.png"));

        let no_pose: FrameRecord = serde_json::from_str(r#"{"frame": 1, "detections": []}"#).unwrap();
        assert!(no_pose.pose.is_none());
    }

    #[test]
    fn frame_record_rejects_bad_values() {
        assert!(serde_json::from_str::<FrameRecord>(
            r#"{"frame": 1, "detections": [{"cls": "ball", "bbox": [1,2,3,4], "conf": 1.5}]}"#
        )
        .is_err());
        assert!(serde_json::from_str::<FrameRecord>(r#"{"frame": 1, "pose": {"kps": [[1,2,0.5]]}}"#).is_err());
    }
}
