//! Bounding boxes and overlap arithmetic shared by the tracker and the
//! evaluation code.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in image coordinates: `(x, y)` is the top-left corner.
///
/// Width and height must be strictly positive; constructors and the clipping
/// helpers maintain that.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        assert!(w > 0.0 && h > 0.0, "degenerate box {w}x{h}");
        BoundingBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Euclidean distance between the centers of two boxes.
    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Intersection-over-union. Symmetric, 1 on identical boxes, 0 when
    /// disjoint.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }

    /// Clip the box to `[0, w) x [0, h)` image bounds, keeping at least one
    /// pixel of extent. Centers outside the image are pulled inside.
    pub fn clip_to(&self, img_w: usize, img_h: usize) -> BoundingBox {
        let iw = img_w as f64;
        let ih = img_h as f64;
        let w = self.w.min(iw).max(1.0);
        let h = self.h.min(ih).max(1.0);
        let x = self.x.max(0.0).min(iw - w);
        let y = self.y.max(0.0).min(ih - h);
        BoundingBox { x, y, w, h }
    }

    pub fn inside(&self, img_w: usize, img_h: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= img_w as f64
            && self.y + self.h <= img_h as f64
    }
}
