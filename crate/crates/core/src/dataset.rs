//! In-memory datasets and the on-disk sample directory layout.
//!
//! A sample directory holds `frame_0.png` … `frame_7.png` and a `sample.json`
//! sidecar with the label, normalised keypoints and, when the sample came out
//! of segmentation, the chosen indices, repairs and ratio trace.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{resolve_manifest_path, DatasetManifest, MANIFEST_FILE};
use crate::segmentation::{RatioTrace, Repair, Segmented};
use crate::split::Split;
use crate::types::{DirectionLabel, KickSample, NUM_KEYPOINTS};

pub const SIDECAR_FILE: &str = "sample.json";

/// How a sample was cut from its stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationInfo {
    pub threshold: f64,
    /// Stream position of the endpoint frame.
    pub endpoint: usize,
    pub endpoint_frame: u64,
    pub sampled: Vec<usize>,
    pub indices: Vec<usize>,
    pub repairs: Vec<Repair>,
    pub trace: RatioTrace,
}

impl SegmentationInfo {
    pub fn new(seg: &Segmented, threshold: f64) -> Self {
        Self {
            threshold,
            endpoint: seg.endpoint,
            endpoint_frame: seg.trace.entries[seg.endpoint].frame_index,
            sampled: seg.sampled.clone(),
            indices: seg.repaired.indices.clone(),
            repairs: seg.repaired.repairs.clone(),
            trace: seg.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    sample_id: String,
    label: DirectionLabel,
    frames: Vec<String>,
    keypoints: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<SegmentationInfo>,
}

fn frame_name(t: usize) -> String {
    format!("frame_{t}.png")
}

pub fn write_sample_dir(dir: &Path, sample: &KickSample, segmentation: Option<&SegmentationInfo>) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(sample.frames.len());
    for (t, img) in sample.frames.iter().enumerate() {
        let name = frame_name(t);
        let path = dir.join(&name);
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        names.push(name);
    }
    let keypoints = sample
        .keypoints
        .outer_iter()
        .map(|f| f.outer_iter().map(|k| [k[0], k[1]]).collect())
        .collect();
    let sidecar = Sidecar {
        sample_id: sample.sample_id.clone(),
        label: sample.label,
        frames: names,
        keypoints,
        segmentation: segmentation.cloned(),
    };
    let path = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_sample_dir(dir: &Path) -> Result<(KickSample, Option<SegmentationInfo>)> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut frames = Vec::with_capacity(sidecar.frames.len());
    for name in &sidecar.frames {
        let p = dir.join(name);
        let img = image::open(&p)
            .map_err(|e| Error::Image {
                path: p.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        frames.push(img);
    }
    let t = sidecar.keypoints.len();
    let mut keypoints = Array3::zeros((t, NUM_KEYPOINTS, 2));
    for (i, f) in sidecar.keypoints.iter().enumerate() {
        if f.len() != NUM_KEYPOINTS {
            return Err(Error::shape("sidecar keypoints", &[NUM_KEYPOINTS], &[f.len()]));
        }
        for (j, [x, y]) in f.iter().enumerate() {
            keypoints[[i, j, 0]] = *x;
            keypoints[[i, j, 1]] = *y;
        }
    }
    let sample = KickSample {
        sample_id: sidecar.sample_id,
        label: sidecar.label,
        frames,
        keypoints,
    };
    sample.validate()?;
    Ok((sample, sidecar.segmentation))
}

/// Manifest plus its samples, index-aligned with `manifest.samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<KickSample>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, samples: Vec<KickSample>) -> Result<Self> {
        if manifest.samples.len() != samples.len() {
            return Err(Error::Input(format!(
                "manifest lists {} samples but {} were provided",
                manifest.samples.len(),
                samples.len()
            )));
        }
        for (e, s) in manifest.samples.iter().zip(&samples) {
            if e.sample_id != s.sample_id || e.label != s.label {
                return Err(Error::Input(format!(
                    "sample `{}` does not match manifest entry `{}`",
                    s.sample_id, e.sample_id
                )));
            }
        }
        Ok(Self { manifest, samples })
    }

    /// Loads a manifest (file or containing directory) and every sample it lists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = resolve_manifest_path(path);
        let manifest = DatasetManifest::read(&file)?;
        manifest.validate()?;
        let root = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let samples = manifest
            .samples
            .iter()
            .map(|e| read_sample_dir(&root.join(&e.path)).map(|(s, _)| s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest, samples)
    }

    /// Writes `manifest.json` and every sample directory under `dir`.
    pub fn save(&self, dir: &Path, segmentation: &[SegmentationInfo]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (entry, sample)) in self.manifest.samples.iter().zip(&self.samples).enumerate() {
            write_sample_dir(&dir.join(&entry.path), sample, segmentation.get(i))?;
        }
        self.manifest.write(&dir.join(MANIFEST_FILE))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// `(height, width)` shared by every sample, if the dataset is nonempty.
    pub fn frame_hw(&self) -> Option<(usize, usize)> {
        self.samples.first().map(KickSample::frame_hw)
    }
}
