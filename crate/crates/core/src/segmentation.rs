//! Distance-ratio endpoint detection, uniform frame sampling and frame repair.
//!
//! A stream starts at the referee's signal. The ball-to-net distance at the
//! first frame where both are detected is frozen as the reference; every later
//! frame gets the nearest-ankle-to-ball distance divided by that reference.
//! The first frame at or below the threshold ends the segment.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::types::{
    kp, normalize_keypoints, BoundingBox, DirectionLabel, FrameRecord, KickSample, ObjectClass, PoseFrame,
    NUM_KEYPOINTS, SEQ_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub ratio: f64,
    pub min_pose_conf: f64,
    pub seq_len: usize,
}

impl ThresholdConfig {
    pub fn new(ratio: f64) -> Result<Self> {
        let cfg = Self {
            ratio,
            min_pose_conf: 0.6,
            seq_len: SEQ_LEN,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold ratio {} outside (0, 1)",
                self.ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.min_pose_conf) {
            return Err(Error::InvalidConfig(format!(
                "min_pose_conf {} outside [0, 1]",
                self.min_pose_conf
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig(format!("seq_len {} < 2", self.seq_len)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub frame_index: u64,
    /// `None` when the ratio could not be computed for this frame.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTrace {
    pub entries: Vec<RatioEntry>,
    pub reference_distance: f64,
}

pub fn bbox_center(b: &BoundingBox) -> (f64, f64) {
    b.center()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Distance from the ball centre to the net-box midpoint.
pub fn reference_distance(ball: &BoundingBox, net: &BoundingBox) -> Result<f64> {
    let d = dist(ball.center(), net.center());
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::DegenerateReference)
    }
}

/// Position in `stream` of the first frame with both ball and net, and the
/// reference distance measured there.
pub fn find_reference(stream: &[FrameRecord]) -> Result<(usize, f64)> {
    for (pos, r) in stream.iter().enumerate() {
        if let (Some(ball), Some(net)) = (r.detection(ObjectClass::Ball), r.detection(ObjectClass::Net)) {
            return Ok((pos, reference_distance(&ball.bbox, &net.bbox)?));
        }
    }
    Err(Error::MissingReferenceObjects)
}

/// Smallest distance from an ankle with positive confidence to the ball centre.
pub fn foot_to_ball_distance(pose: &PoseFrame, ball: &BoundingBox) -> Result<f64> {
    let c = ball.center();
    [kp::LEFT_ANKLE, kp::RIGHT_ANKLE]
        .iter()
        .map(|&i| pose.get(i))
        .filter(|k| k.conf > 0.0)
        .map(|k| dist((k.x, k.y), c))
        .min_by(f64::total_cmp)
        .ok_or(Error::NoValidFoot)
}

pub fn normalized_ratio(foot_dist: f64, ref_dist: f64) -> Result<f64> {
    if !(ref_dist > 0.0) {
        return Err(Error::DegenerateReference);
    }
    Ok(foot_dist / ref_dist)
}

/// Ratio for one frame, `None` when pose, ball or a usable ankle is missing.
pub fn frame_ratio(record: &FrameRecord, ref_dist: f64) -> Result<Option<f64>> {
    let (Some(pose), Some(ball)) = (&record.pose, record.detection(ObjectClass::Ball)) else {
        return Ok(None);
    };
    match foot_to_ball_distance(pose, &ball.bbox) {
        Ok(d) => normalized_ratio(d, ref_dist).map(Some),
        Err(Error::NoValidFoot) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-frame ratios over the whole stream; frames before the reference frame are missing.
pub fn ratio_trace(stream: &[FrameRecord]) -> Result<RatioTrace> {
    let (start, reference) = find_reference(stream)?;
    let mut entries = Vec::with_capacity(stream.len());
    for (pos, r) in stream.iter().enumerate() {
        let ratio = if pos < start { None } else { frame_ratio(r, reference)? };
        entries.push(RatioEntry {
            frame_index: r.frame_index,
            ratio,
        });
    }
    Ok(RatioTrace {
        entries,
        reference_distance: reference,
    })
}

/// Position in the trace of the first present ratio at or below the threshold.
pub fn find_endpoint(trace: &RatioTrace, cfg: &ThresholdConfig) -> Result<usize> {
    trace
        .entries
        .iter()
        .position(|e| e.ratio.is_some_and(|r| r <= cfg.ratio))
        .ok_or(Error::NoEndpoint { threshold: cfg.ratio })
}

/// `k` indices at stride `floor((n-1)/(k-1))` starting from 0.
pub fn uniform_sample_indices(n_frames: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("sample count {k} < 2")));
    }
    if n_frames < k {
        return Err(Error::SequenceTooShort {
            frames: n_frames,
            required: k,
        });
    }
    let step = (n_frames - 1) / (k - 1);
    Ok((0..k).map(|j| j * step).collect())
}

/// True iff the pose exists and its mean keypoint confidence is strictly above `min_conf`.
pub fn validate_pose_frame(pose: Option<&PoseFrame>, min_conf: f64) -> bool {
    pose.is_some_and(|p| p.mean_confidence() > min_conf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairedIndices {
    pub indices: Vec<usize>,
    pub repairs: Vec<Repair>,
}

/// Nearest valid position to `i`; ties go to the later frame.
fn nearest_valid(i: usize, validity: &[bool]) -> Option<usize> {
    (0..validity.len()).find_map(|d| {
        let later = i + d;
        if later < validity.len() && validity[later] {
            return Some(later);
        }
        i.checked_sub(d).filter(|&earlier| validity[earlier])
    })
}

/// Replaces each invalid index with its nearest valid frame, then re-sorts.
pub fn repair_indices(indices: &[usize], validity: &[bool]) -> Result<RepairedIndices> {
    if !validity.iter().any(|v| *v) {
        return Err(Error::NoValidPoseInSegment {
            endpoint: validity.len().saturating_sub(1),
        });
    }
    let mut out = Vec::with_capacity(indices.len());
    let mut repairs = Vec::new();
    for &i in indices {
        if i >= validity.len() {
            return Err(Error::Input(format!(
                "sample index {i} beyond segment of {} frames",
                validity.len()
            )));
        }
        if validity[i] {
            out.push(i);
        } else {
            let to = nearest_valid(i, validity).expect("a valid frame exists");
            repairs.push(Repair { from: i, to });
            out.push(to);
        }
    }
    out.sort_unstable();
    Ok(RepairedIndices { indices: out, repairs })
}

/// Output of [`build_sample`]: the sample plus everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub sample: KickSample,
    pub trace: RatioTrace,
    pub endpoint: usize,
    pub sampled: Vec<usize>,
    pub repaired: RepairedIndices,
}

/// Selected stream positions for a segment ending at `endpoint` (inclusive).
pub fn select_frames(
    stream: &[FrameRecord],
    endpoint: usize,
    cfg: &ThresholdConfig,
) -> Result<(Vec<usize>, RepairedIndices)> {
    let segment = &stream[..=endpoint];
    let sampled = uniform_sample_indices(segment.len(), cfg.seq_len)?;
    let validity: Vec<bool> = segment
        .iter()
        .map(|r| validate_pose_frame(r.pose.as_ref(), cfg.min_pose_conf))
        .collect();
    let repaired = repair_indices(&sampled, &validity).map_err(|e| match e {
        Error::NoValidPoseInSegment { .. } => Error::NoValidPoseInSegment { endpoint },
        other => other,
    })?;
    Ok((sampled, repaired))
}

/// Rasters and normalised keypoints for the chosen stream positions.
pub fn gather_inputs(
    stream: &[FrameRecord],
    positions: &[usize],
    source: &dyn FrameSource,
    raster_hw: (u32, u32),
) -> Result<(Vec<image::RgbImage>, Array3<f64>)> {
    let mut frames = Vec::with_capacity(positions.len());
    let mut keypoints = Array3::zeros((positions.len(), NUM_KEYPOINTS, 2));
    for (t, &p) in positions.iter().enumerate() {
        let record = &stream[p];
        let g = source.geometry(record)?;
        let pose = record
            .pose
            .as_ref()
            .ok_or(Error::Input(format!("frame {} has no pose", record.frame_index)))?;
        let norm = normalize_keypoints(pose, g.width, g.height)?;
        for (j, [x, y]) in norm.iter().enumerate() {
            keypoints[[t, j, 0]] = x.clamp(0.0, 1.0);
            keypoints[[t, j, 1]] = y.clamp(0.0, 1.0);
        }
        frames.push(source.raster(record, raster_hw)?);
    }
    Ok((frames, keypoints))
}

/// Segments a stream that starts at the kick signal into one [`KickSample`].
pub fn build_sample(
    stream: &[FrameRecord],
    cfg: &ThresholdConfig,
    label: DirectionLabel,
    sample_id: &str,
    source: &dyn FrameSource,
    raster_hw: (u32, u32),
) -> Result<Segmented> {
    cfg.validate()?;
    let trace = ratio_trace(stream)?;
    let endpoint = find_endpoint(&trace, cfg)?;
    let (sampled, repaired) = select_frames(stream, endpoint, cfg)?;
    let (frames, keypoints) = gather_inputs(stream, &repaired.indices, source, raster_hw)?;
    let sample = KickSample {
        sample_id: sample_id.to_string(),
        label,
        frames,
        keypoints,
    };
    Ok(Segmented {
        sample,
        trace,
        endpoint,
        sampled,
        repaired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Keypoint;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn pose_with_ankles(l: (f64, f64, f64), r: (f64, f64, f64)) -> PoseFrame {
        PoseFrame::new(std::array::from_fn(|i| match i {
            kp::LEFT_ANKLE => Keypoint {
                x: l.0,
                y: l.1,
                conf: l.2,
            },
            kp::RIGHT_ANKLE => Keypoint {
                x: r.0,
                y: r.1,
                conf: r.2,
            },
            _ => Keypoint {
                x: 50.0,
                y: 50.0,
                conf: 0.9,
            },
        }))
        .unwrap()
    }

    fn trace(ratios: &[Option<f64>]) -> RatioTrace {
        RatioTrace {
            entries: ratios
                .iter()
                .enumerate()
                .map(|(i, r)| RatioEntry {
                    frame_index: i as u64,
                    ratio: *r,
                })
                .collect(),
            reference_distance: 1.0,
        }
    }

    #[test]
    fn centers() {
        assert_eq!(bbox_center(&bx(0.0, 0.0, 10.0, 20.0)), (5.0, 10.0));
        assert_eq!(bbox_center(&bx(100.0, 40.0, 300.0, 200.0)), (200.0, 120.0));
        let (x, y) = bbox_center(&bx(5.0, 5.0, 5.0001, 5.0001));
        assert!((x - 5.0).abs() < 1e-3 && (y - 5.0).abs() < 1e-3);
    }

    #[test]
    fn reference_distances() {
        assert_eq!(
            reference_distance(&bx(90.0, 90.0, 110.0, 110.0), &bx(80.0, 280.0, 120.0, 320.0)).unwrap(),
            200.0
        );
        let d = reference_distance(&bx(0.0, 0.0, 10.0, 10.0), &bx(30.0, 40.0, 50.0, 60.0)).unwrap();
        assert!((d - 3250f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            reference_distance(&bx(0.0, 0.0, 10.0, 10.0), &bx(4.0, 4.0, 6.0, 6.0)),
            Err(Error::DegenerateReference)
        ));
    }

    #[test]
    fn foot_distance_picks_nearer_ankle() {
        let ball = bx(111.0, 207.0, 113.0, 209.0);
        let p = pose_with_ankles((100.0, 200.0, 0.9), (110.0, 205.0, 0.9));
        let d = foot_to_ball_distance(&p, &ball).unwrap();
        assert!((d - 13f64.sqrt()).abs() < 1e-12);

        let on = pose_with_ankles((100.0, 200.0, 0.9), (112.0, 208.0, 0.9));
        assert_eq!(foot_to_ball_distance(&on, &ball).unwrap(), 0.0);

        let sym = pose_with_ankles((102.0, 208.0, 0.9), (122.0, 208.0, 0.9));
        assert_eq!(foot_to_ball_distance(&sym, &ball).unwrap(), 10.0);

        let none = pose_with_ankles((100.0, 200.0, 0.0), (110.0, 205.0, 0.0));
        assert!(matches!(foot_to_ball_distance(&none, &ball), Err(Error::NoValidFoot)));
        // a zero-confidence ankle is ignored even when nearer
        let one = pose_with_ankles((112.0, 208.0, 0.0), (110.0, 205.0, 0.5));
        assert!((foot_to_ball_distance(&one, &ball).unwrap() - 13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ratios() {
        assert_eq!(normalized_ratio(50.0, 200.0).unwrap(), 0.25);
        assert_eq!(normalized_ratio(0.0, 200.0).unwrap(), 0.0);
        assert_eq!(normalized_ratio(100.0, 400.0).unwrap(), 0.25);
        assert!(matches!(normalized_ratio(1.0, 0.0), Err(Error::DegenerateReference)));
    }

    #[test]
    fn endpoint_examples() {
        let cfg = ThresholdConfig::new(0.15).unwrap();
        let t = trace(&[Some(0.9), Some(0.5), Some(0.3), Some(0.14), Some(0.05)]);
        assert_eq!(find_endpoint(&t, &cfg).unwrap(), 3);
        let t = trace(&[Some(0.9), None, Some(0.12)]);
        assert_eq!(find_endpoint(&t, &cfg).unwrap(), 2);
        let t = trace(&[Some(0.9), Some(0.5), Some(0.4)]);
        assert!(matches!(find_endpoint(&t, &cfg), Err(Error::NoEndpoint { .. })));
    }

    #[test]
    fn sampling_examples() {
        let one_based: Vec<usize> = uniform_sample_indices(100, 8).unwrap().iter().map(|i| i + 1).collect();
        assert_eq!(one_based, vec![1, 15, 29, 43, 57, 71, 85, 99]);
        assert_eq!(uniform_sample_indices(8, 8).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(
            uniform_sample_indices(50, 8).unwrap(),
            vec![0, 7, 14, 21, 28, 35, 42, 49]
        );
        assert!(matches!(
            uniform_sample_indices(5, 8),
            Err(Error::SequenceTooShort { frames: 5, required: 8 })
        ));
    }

    #[test]
    fn validity_is_strict() {
        let with = |c: f64| {
            PoseFrame::new(
                [Keypoint {
                    x: 0.0,
                    y: 0.0,
                    conf: c,
                }; NUM_KEYPOINTS],
            )
            .unwrap()
        };
        assert!(validate_pose_frame(Some(&with(0.7)), 0.6));
        assert!(!validate_pose_frame(Some(&with(0.6)), 0.6));
        assert!(!validate_pose_frame(None, 0.6));
        let mut kps = [Keypoint {
            x: 0.0,
            y: 0.0,
            conf: 1.0,
        }; NUM_KEYPOINTS];
        kps[4].conf = 0.0;
        let p = PoseFrame::new(kps).unwrap();
        assert!((p.mean_confidence() - 16.0 / 17.0).abs() < 1e-12);
        assert!(validate_pose_frame(Some(&p), 0.6));
    }

    #[test]
    fn repair_examples() {
        let mut validity = vec![true; 20];
        validity[14] = false;
        let r = repair_indices(&[0, 14], &validity).unwrap();
        assert_eq!(r.indices, vec![0, 15]);
        assert_eq!(r.repairs, vec![Repair { from: 14, to: 15 }]);

        let r = repair_indices(&[0, 5, 10], &[true; 11]).unwrap();
        assert_eq!(r.indices, vec![0, 5, 10]);
        assert!(r.repairs.is_empty());

        let v = [false, false, false, true, true];
        assert_eq!(repair_indices(&[0, 4], &v).unwrap().indices, vec![3, 4]);
        assert!(matches!(
            repair_indices(&[0], &[false, false]),
            Err(Error::NoValidPoseInSegment { endpoint: 1 })
        ));
    }

    fn oracle_endpoint(ratios: &[Option<f64>], th: f64) -> Option<usize> {
        let mut found = None;
        for i in (0..ratios.len()).rev() {
            if let Some(r) = ratios[i] {
                if r <= th {
                    found = Some(i);
                }
            }
        }
        found
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn endpoint_matches_scan(
            ratios in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..1.2), 1..60),
            th in 0.01f64..0.99,
        ) {
            let cfg = ThresholdConfig::new(th).unwrap();
            let got = find_endpoint(&trace(&ratios), &cfg).ok();
            prop_assert_eq!(got, oracle_endpoint(&ratios, th));
        }

        #[test]
        fn repair_is_nearest_valid(
            validity in prop::collection::vec(prop::bool::weighted(0.6), 8..80),
        ) {
            let idx = uniform_sample_indices(validity.len(), 8).unwrap();
            match repair_indices(&idx, &validity) {
                Err(_) => prop_assert!(validity.iter().all(|v| !v)),
                Ok(r) => {
                    let mut expected: Vec<usize> = idx
                        .iter()
                        .map(|&i| {
                            let best = (0..validity.len())
                                .filter(|&j| validity[j])
                                .map(|j| (i.abs_diff(j), std::cmp::Reverse(j)))
                                .min()
                                .unwrap();
                            best.1 .0
                        })
                        .collect();
                    expected.sort_unstable();
                    prop_assert!(r.indices.iter().all(|&i| validity[i]));
                    prop_assert_eq!(r.indices, expected);
                }
            }
        }

        #[test]
        fn sampling_shape(n in 8usize..500, k in 2usize..12) {
            prop_assume!(n >= k);
            let idx = uniform_sample_indices(n, k).unwrap();
            prop_assert_eq!(idx.len(), k);
            prop_assert_eq!(idx[0], 0);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx[k - 1] < n);
        }
    }
}
