//! Bilinear RoI alignment over a feature map, differentiable in the map.

use super::{Arr, Graph, Op, Var};
use ndarray::{Array2, Ix3};

/// A box in feature-map coordinates.
#[derive(Clone, Copy, Debug)]
pub struct RoiBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// The four bilinear taps for a continuous sample position, with border
/// clamping. Coordinates are in pixel-center space (pixel k sits at k).
fn bilinear_taps(py: f64, px: f64, h: usize, w: usize) -> [(usize, usize, f64); 4] {
    let py = py.clamp(0.0, (h - 1) as f64);
    let px = px.clamp(0.0, (w - 1) as f64);
    let y0 = py.floor() as usize;
    let x0 = px.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let wy = py - y0 as f64;
    let wx = px - x0 as f64;
    [
        (y0, x0, (1.0 - wy) * (1.0 - wx)),
        (y0, x1, (1.0 - wy) * wx),
        (y1, x0, wy * (1.0 - wx)),
        (y1, x1, wy * wx),
    ]
}

fn sample_positions(b: &RoiBox, bins: usize) -> Vec<(f64, f64)> {
    let bw = b.w / bins as f64;
    let bh = b.h / bins as f64;
    let mut pts = Vec::with_capacity(bins * bins);
    for i in 0..bins {
        for j in 0..bins {
            // Bin centers, shifted into pixel-center coordinates.
            let cy = b.y + (i as f64 + 0.5) * bh - 0.5;
            let cx = b.x + (j as f64 + 0.5) * bw - 0.5;
            pts.push((cy, cx));
        }
    }
    pts
}

struct RoiAlign {
    boxes: Vec<RoiBox>,
    bins: usize,
}
impl Op for RoiAlign {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let x = i[0].view().into_dimensionality::<Ix3>().unwrap();
        let (c, h, w) = x.dim();
        let bins = self.bins;
        let mut dx = Arr::zeros(i[0].raw_dim());
        for (bi, b) in self.boxes.iter().enumerate() {
            for (pi, (py, px)) in sample_positions(b, bins).iter().enumerate() {
                for (ty, tx, tw) in bilinear_taps(*py, *px, h, w) {
                    for ci in 0..c {
                        dx[[ci, ty, tx]] += tw * g[[bi, ci * bins * bins + pi]];
                    }
                }
            }
        }
        dx
            .into_dimensionality::<Ix3>()
            .map(|a| vec![a.into_dyn()])
            .unwrap()
    }
}

impl<'p> Graph<'p> {
    /// Sample each box on a `bins x bins` grid (one bilinear tap per bin
    /// center) and flatten channel-major: output is `n_boxes x (C*bins*bins)`.
    pub fn roi_align(&mut self, x: Var, boxes: &[RoiBox], bins: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("roi input not 3-D");
        let (c, h, w) = xv.dim();
        let mut out = Array2::zeros((boxes.len(), c * bins * bins));
        for (bi, b) in boxes.iter().enumerate() {
            for (pi, (py, px)) in sample_positions(b, bins).iter().enumerate() {
                let taps = bilinear_taps(*py, *px, h, w);
                for ci in 0..c {
                    let mut acc = 0.0;
                    for (ty, tx, tw) in taps {
                        acc += tw * xv[[ci, ty, tx]];
                    }
                    out[[bi, ci * bins * bins + pi]] = acc;
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![x.0],
            Some(Box::new(RoiAlign {
                boxes: boxes.to_vec(),
                bins,
            })),
            None,
        )
    }
}
