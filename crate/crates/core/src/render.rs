//! Stick-figure rendering of a penalty scene.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::frames::FrameSource;
use crate::types::{BoundingBox, FrameGeometry, FrameRecord, ObjectClass, PoseFrame, SKELETON};

const BACKGROUND: Rgb<u8> = Rgb([34, 110, 52]);
const NET: Rgb<u8> = Rgb([235, 235, 235]);
const BALL: Rgb<u8> = Rgb([255, 250, 120]);
const KEEPER: Rgb<u8> = Rgb([40, 40, 40]);
const LEFT_LIMB: Rgb<u8> = Rgb([70, 130, 240]);
const RIGHT_LIMB: Rgb<u8> = Rgb([240, 70, 70]);
const TORSO: Rgb<u8> = Rgb([250, 250, 250]);

/// Everything drawn in one frame, in source-frame pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: f64,
    pub height: f64,
    pub net: Option<BoundingBox>,
    pub ball: Option<BoundingBox>,
    pub goalkeeper: Option<BoundingBox>,
    pub shooter: Option<PoseFrame>,
}

impl Scene {
    pub fn empty(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            net: None,
            ball: None,
            goalkeeper: None,
            shooter: None,
        }
    }

    pub fn from_record(record: &FrameRecord, geometry: FrameGeometry) -> Self {
        let get = |c| record.detection(c).map(|d| d.bbox);
        Self {
            width: geometry.width,
            height: geometry.height,
            net: get(ObjectClass::Net),
            ball: get(ObjectClass::Ball),
            goalkeeper: get(ObjectClass::Goalkeeper),
            shooter: record.pose.clone(),
        }
    }
}

struct Canvas {
    img: RgbImage,
    sx: f64,
    sy: f64,
}

impl Canvas {
    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (x * self.sx, y * self.sy)
    }

    /// Fills every pixel whose centre lies within `r` of segment `a`-`b` (output pixels).
    fn segment(&mut self, a: (f64, f64), b: (f64, f64), r: f64, color: Rgb<u8>) {
        let (w, h) = self.img.dimensions();
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as u32;
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as u32;
        let x1 = ((a.0.max(b.0) + r).ceil().max(0.0) as u32).min(w);
        let y1 = ((a.1.max(b.1) + r).ceil().max(0.0) as u32).min(h);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if cx * cx + cy * cy <= r * r {
                    self.img.put_pixel(x, y, color);
                }
            }
        }
    }

    fn disc(&mut self, c: (f64, f64), r: f64, color: Rgb<u8>) {
        self.segment(c, c, r, color);
    }
}

/// Line radius in output pixels for a given scale, never thinner than about one pixel.
fn stroke(base: f64, scale: f64) -> f64 {
    (base * scale).max(0.75)
}

/// Renders `scene` to an image of `hw = (height, width)` pixels.
pub fn render(scene: &Scene, (h, w): (u32, u32)) -> RgbImage {
    let mut c = Canvas {
        img: RgbImage::from_pixel(w, h, BACKGROUND),
        sx: f64::from(w) / scene.width,
        sy: f64::from(h) / scene.height,
    };
    let scale = (c.sx * c.sy).sqrt();

    if let Some(net) = scene.net {
        let r = stroke(1.5, scale);
        let p = |x, y| c.map((x, y));
        let corners = [
            p(net.x1(), net.y1()),
            p(net.x2(), net.y1()),
            p(net.x2(), net.y2()),
            p(net.x1(), net.y2()),
        ];
        for i in 0..4 {
            c.segment(corners[i], corners[(i + 1) % 4], r, NET);
        }
    }

    if let Some(gk) = scene.goalkeeper {
        let r = stroke(1.5, scale);
        let bw = gk.x2() - gk.x1();
        let bh = gk.y2() - gk.y1();
        let at = |fx: f64, fy: f64| c.map((gk.x1() + fx * bw, gk.y1() + fy * bh));
        let (head, neck, hip) = (at(0.5, 0.12), at(0.5, 0.25), at(0.5, 0.62));
        let limbs = [
            (neck, hip),
            (at(0.05, 0.2), at(0.95, 0.2)),
            (hip, at(0.25, 1.0)),
            (hip, at(0.75, 1.0)),
        ];
        for (a, b) in limbs {
            c.segment(a, b, r, KEEPER);
        }
        c.disc(head, stroke(0.1 * bh, c.sy).max(r), KEEPER);
    }

    if let Some(ball) = scene.ball {
        let (cx, cy) = c.map(ball.center());
        let r = 0.25 * ((ball.x2() - ball.x1()) * c.sx + (ball.y2() - ball.y1()) * c.sy);
        c.disc((cx, cy), r.max(0.75), BALL);
    }

    if let Some(pose) = &scene.shooter {
        let r = stroke(1.8, scale);
        let kps = pose.keypoints();
        for &(a, b) in &SKELETON {
            let (ka, kb) = (kps[a], kps[b]);
            if ka.conf <= 0.0 || kb.conf <= 0.0 {
                continue;
            }
            // COCO places left-side joints at odd indices
            let color = match (a % 2, b % 2) {
                (1, 1) if a > 0 && b > 0 => LEFT_LIMB,
                (0, 0) if a > 0 && b > 0 => RIGHT_LIMB,
                _ => TORSO,
            };
            c.segment(c.map((ka.x, ka.y)), c.map((kb.x, kb.y)), r, color);
        }
    }
    c.img
}

/// Renders frames directly from record contents, so synthetic streams need no image files.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordRenderer {
    /// Used when a record carries no `size`.
    pub default_size: Option<(f64, f64)>,
}

impl FrameSource for RecordRenderer {
    fn geometry(&self, record: &FrameRecord) -> Result<FrameGeometry> {
        match (record.geometry(), self.default_size) {
            (Some(g), _) => g,
            (None, Some((w, h))) => FrameGeometry::new(w, h),
            (None, None) => Err(Error::Input(format!(
                "frame {} has no size and no default is configured",
                record.frame_index
            ))),
        }
    }

    fn raster(&self, record: &FrameRecord, hw: (u32, u32)) -> Result<RgbImage> {
        let g = self.geometry(record)?;
        Ok(render(&Scene::from_record(record, g), hw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_flat() {
        let img = render(&Scene::empty(224.0, 224.0), (224, 224));
        assert_eq!(img.dimensions(), (224, 224));
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
    }

    #[test]
    fn centred_ball_is_centred_disc() {
        let mut s = Scene::empty(224.0, 224.0);
        s.ball = Some(BoundingBox::new(106.0, 106.0, 118.0, 118.0).unwrap());
        let img = render(&s, (224, 224));
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for (x, y, p) in img.enumerate_pixels() {
            if *p == BALL {
                sx += f64::from(x) + 0.5;
                sy += f64::from(y) + 0.5;
                n += 1.0;
            }
        }
        assert!(n > 50.0);
        assert!((sx / n - 112.0).abs() < 1e-9 && (sy / n - 112.0).abs() < 1e-9);
        assert_eq!(*img.get_pixel(112, 112), BALL);
    }

    #[test]
    fn rendering_is_pure() {
        let mut s = Scene::empty(448.0, 448.0);
        s.net = Some(BoundingBox::new(100.0, 48.0, 348.0, 136.0).unwrap());
        s.goalkeeper = Some(BoundingBox::new(210.0, 70.0, 240.0, 130.0).unwrap());
        let a = render(&s, (64, 64));
        let b = render(&s, (64, 64));
        assert_eq!(a.as_raw(), b.as_raw());
        assert!(a.pixels().any(|p| *p == NET));
        assert!(a.pixels().any(|p| *p == KEEPER));
    }
}
