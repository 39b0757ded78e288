//! Small image raster utilities: bilinear resize, box crops, gray conversion.

use crate::geom::BoundingBox;
use ndarray::{Array2, Array3};

/// Channel-wise bilinear resize of a `C x H x W` raster.
pub fn resize_bilinear(src: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = src.dim();
    let mut out = Array3::zeros((c, out_h, out_w));
    if h == out_h && w == out_w {
        out.assign(src);
        return out;
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oi in 0..out_h {
        let fy = ((oi as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for oj in 0..out_w {
            let fx = ((oj as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ci in 0..c {
                let v = src[[ci, y0, x0]] * (1.0 - wy) * (1.0 - wx)
                    + src[[ci, y0, x1]] * (1.0 - wy) * wx
                    + src[[ci, y1, x0]] * wy * (1.0 - wx)
                    + src[[ci, y1, x1]] * wy * wx;
                out[[ci, oi, oj]] = v;
            }
        }
    }
    out
}

/// Crop a box out of a raster, clamping out-of-bounds reads to the border.
pub fn crop_box(src: &Array3<f64>, b: &BoundingBox) -> Array3<f64> {
    let (c, h, w) = src.dim();
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let bw = (b.w.round() as i64).max(1) as usize;
    let bh = (b.h.round() as i64).max(1) as usize;
    let mut out = Array3::zeros((c, bh, bw));
    for ci in 0..c {
        for i in 0..bh {
            let sy = (y0 + i as i64).clamp(0, h as i64 - 1) as usize;
            for j in 0..bw {
                let sx = (x0 + j as i64).clamp(0, w as i64 - 1) as usize;
                out[[ci, i, j]] = src[[ci, sy, sx]];
            }
        }
    }
    out
}

pub fn gray_from_rgb(src: &Array3<f64>) -> Array2<f64> {
    let (_, h, w) = src.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] =
                0.299 * src[[0, i, j]] + 0.587 * src[[1, i, j]] + 0.114 * src[[2, i, j]];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_constant_stays_constant() {
        let src = Array3::from_elem((2, 8, 8), 0.4);
        let out = resize_bilinear(&src, 13, 5);
        assert_eq!(out.dim(), (2, 13, 5));
        assert!(out.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn resize_identity_when_same_size() {
        let mut src = Array3::zeros((1, 4, 4));
        src[[0, 2, 3]] = 1.0;
        let out = resize_bilinear(&src, 4, 4);
        assert_eq!(out, src);
    }

    #[test]
    fn crop_reads_expected_region() {
        let mut src = Array3::zeros((1, 10, 10));
        src[[0, 4, 5]] = 2.0;
        let b = BoundingBox::new(4.0, 3.0, 3.0, 3.0);
        let out = crop_box(&src, &b);
        assert_eq!(out.dim(), (1, 3, 3));
        assert_eq!(out[[0, 1, 1]], 2.0);
    }
}
