//! Dataset manifest: a single JSON document listing sample directories,
//! labels and split tags.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::split::{holdout_size, Split};
use crate::types::DirectionLabel;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    pub label: DirectionLabel,
    pub split: Split,
    /// Sample directory, relative to the manifest file.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    /// Distance ratio used at segmentation time.
    pub threshold: f64,
    #[serde(default)]
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn new(seed: u64, threshold: f64) -> Self {
        Self {
            seed,
            threshold,
            samples: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Checks that sample ids are unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::Input(format!("duplicate sample id `{}`", s.sample_id)));
            }
        }
        Ok(())
    }

    /// Checks the floor(0.15 n) holdout sizes produced by the split rule.
    /// Loading does not require this, so hand-edited splits reach training.
    pub fn check_split_sizes(&self) -> Result<()> {
        let n = self.samples.len();
        if n == 0 {
            return Ok(());
        }
        let h = holdout_size(n);
        let (val, test) = (self.split_len(Split::Val), self.split_len(Split::Test));
        if val != h || test != h {
            return Err(Error::Input(format!(
                "split sizes train/val/test = {}/{val}/{test} do not match the rule for n={n} (val = test = {h})",
                self.split_len(Split::Train)
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            Error::ManifestParse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Manifest file path for a manifest argument that may name the file or its directory.
pub fn resolve_manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::split_dataset;

    fn manifest(n: usize) -> DatasetManifest {
        let labels: Vec<DirectionLabel> = (0..n).map(|i| DirectionLabel::from_index(i % 3).unwrap()).collect();
        let tags = split_dataset(n, &labels, 3).unwrap().tags(n);
        DatasetManifest {
            seed: 3,
            threshold: 0.15,
            samples: (0..n)
                .map(|i| SampleEntry {
                    sample_id: format!("s{i:05}"),
                    label: labels[i],
                    split: tags[i],
                    path: format!("samples/s{i:05}"),
                })
                .collect(),
        }
    }

    #[test]
    fn empty_round_trip() {
        let m = DatasetManifest::new(0, 0.25);
        assert_eq!(DatasetManifest::from_json(&m.to_json()).unwrap(), m);
        m.validate().unwrap();
        m.check_split_sizes().unwrap();
    }

    #[test]
    fn large_manifest_rewrites_byte_stable() {
        let m = manifest(755);
        m.validate().unwrap();
        m.check_split_sizes().unwrap();
        assert_eq!(m.split_len(Split::Train), 529);
        let text = m.to_json();
        let back = DatasetManifest::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(30);
        let p = dir.path().join(MANIFEST_FILE);
        m.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&resolve_manifest_path(dir.path())).unwrap(), m);
    }

    #[test]
    fn parse_error_names_line_and_field() {
        let text = "{\n  \"seed\": 1,\n  \"threshold\": 0.15,\n  \"samples\": [\n    {\"sample_id\": \"a\", \"label\": \"up\", \"split\": \"train\", \"path\": \"x\"}\n  ]\n}\n";
        match DatasetManifest::from_json(text) {
            Err(Error::ManifestParse { line, field, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(field, "samples[0].label");
            }
            other => panic!("expected ManifestParse, got {other:?}"),
        }
    }

    #[test]
    fn wrong_split_sizes_fail_validation() {
        let mut m = manifest(20);
        for s in &mut m.samples {
            s.split = Split::Train;
        }
        assert!(m.check_split_sizes().is_err());
        m.validate().unwrap();
        m.samples[1].sample_id = m.samples[0].sample_id.clone();
        assert!(m.validate().is_err());
    }
}
