//! First-frame bounding-box regression: a ridge-regularized linear model from
//! instance features to (dx, dy, dlog w, dlog h) refinements.

use crate::geom::BoundingBox;
use ndarray::{Array1, Array2, ArrayView1};

pub struct BoxRegressor {
    /// `(in_dim + 1) x 4`, bias row last; `None` until trained.
    weights: Option<Array2<f64>>,
    pub lambda: f64,
}

impl Default for BoxRegressor {
    fn default() -> Self {
        BoxRegressor {
            weights: None,
            lambda: 1.0,
        }
    }
}

fn targets(sample: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let (sx, sy) = sample.center();
    let (gx, gy) = gt.center();
    [
        (gx - sx) / sample.w,
        (gy - sy) / sample.h,
        (gt.w / sample.w).ln(),
        (gt.h / sample.h).ln(),
    ]
}

/// Solve `(X^T X + lambda I) W = X^T Y` by Cholesky.
fn ridge(x: &Array2<f64>, y: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let d = x.ncols();
    let mut a = x.t().dot(x);
    for i in 0..d {
        a[[i, i]] += lambda;
    }
    let b = x.t().dot(y);

    // Cholesky factorization A = L L^T.
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                l[[i, i]] = s.max(1e-12).sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    // Solve L z = b, then L^T w = z, one target column at a time.
    let mut w = Array2::<f64>::zeros((d, y.ncols()));
    for c in 0..y.ncols() {
        let mut z = Array1::<f64>::zeros(d);
        for i in 0..d {
            let mut s = b[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * z[k];
            }
            z[i] = s / l[[i, i]];
        }
        for i in (0..d).rev() {
            let mut s = z[i];
            for k in i + 1..d {
                s -= l[[k, i]] * w[[k, c]];
            }
            w[[i, c]] = s / l[[i, i]];
        }
    }
    w
}

impl BoxRegressor {
    pub fn is_trained(&self) -> bool {
        self.weights.is_some()
    }

    /// Fit on first-frame samples against the ground-truth box.
    pub fn train(&mut self, feats: &Array2<f64>, samples: &[BoundingBox], gt: &BoundingBox) {
        assert_eq!(feats.nrows(), samples.len());
        let n = samples.len();
        let d = feats.ncols();
        let mut x = Array2::<f64>::zeros((n, d + 1));
        let mut y = Array2::<f64>::zeros((n, 4));
        for i in 0..n {
            for j in 0..d {
                x[[i, j]] = feats[[i, j]];
            }
            x[[i, d]] = 1.0;
            let t = targets(&samples[i], gt);
            for k in 0..4 {
                y[[i, k]] = t[k];
            }
        }
        self.weights = Some(ridge(&x, &y, self.lambda));
    }

    /// Apply the refinement to a box; identity (with a warning) if untrained.
    /// Refined boxes are clipped back into the image.
    pub fn refine(
        &self,
        feat: ArrayView1<f64>,
        b: &BoundingBox,
        img_w: usize,
        img_h: usize,
    ) -> BoundingBox {
        let w = match &self.weights {
            Some(w) => w,
            None => {
                log::warn!("box regressor untrained; returning box unchanged");
                return *b;
            }
        };
        let d = w.nrows() - 1;
        debug_assert_eq!(feat.len(), d);
        let mut t = [0.0f64; 4];
        for k in 0..4 {
            let mut acc = w[[d, k]];
            for j in 0..d {
                acc += feat[j] * w[[j, k]];
            }
            t[k] = acc;
        }
        // Clamp the log-scale corrections so a bad fit cannot explode the box.
        let (cx, cy) = b.center();
        let nx = cx + t[0] * b.w;
        let ny = cy + t[1] * b.h;
        let nw = b.w * t[2].clamp(-0.5, 0.5).exp();
        let nh = b.h * t[3].clamp(-0.5, 0.5).exp();
        BoundingBox::from_center(nx, ny, nw, nh).clip_to(img_w, img_h)
    }
}
