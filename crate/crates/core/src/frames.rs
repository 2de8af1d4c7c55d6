//! Raster frame access for segmented samples.

use std::path::PathBuf;

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{Error, Result};
use crate::types::{FrameGeometry, FrameRecord};

/// Supplies the source geometry and a resized raster for a frame record.
pub trait FrameSource {
    /// Pixel size of the original frame, used to normalise keypoints.
    fn geometry(&self, record: &FrameRecord) -> Result<FrameGeometry>;

    /// Frame raster resized to `hw = (height, width)`.
    fn raster(&self, record: &FrameRecord, hw: (u32, u32)) -> Result<RgbImage>;
}

/// Loads rasters named by each record's `image` field, relative to `root`.
#[derive(Debug, Clone)]
pub struct FileFrames {
    pub root: PathBuf,
}

impl FileFrames {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn path(&self, record: &FrameRecord) -> Result<PathBuf> {
        let rel = record
            .image_ref
            .as_ref()
            .ok_or_else(|| Error::Input(format!("frame {} has no image reference", record.frame_index)))?;
        Ok(self.root.join(rel))
    }
}

impl FrameSource for FileFrames {
    fn geometry(&self, record: &FrameRecord) -> Result<FrameGeometry> {
        if let Some(g) = record.geometry() {
            return g;
        }
        let path = self.path(record)?;
        let (w, h) = image::image_dimensions(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        FrameGeometry::new(f64::from(w), f64::from(h))
    }

    fn raster(&self, record: &FrameRecord, (h, w): (u32, u32)) -> Result<RgbImage> {
        let path = self.path(record)?;
        let img = image::open(&path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?
            .to_rgb8();
        if img.dimensions() == (w, h) {
            Ok(img)
        } else {
            Ok(image::imageops::resize(&img, w, h, FilterType::Triangle))
        }
    }
}
