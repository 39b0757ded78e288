//! Directional recurrent sweeps over the encoded grid.
//!
//! The cell is the printed recurrence, a highway-style simple recurrent unit:
//!
//! ```text
//! x̂   = W x
//! f   = sigmoid(W_f x + b_f)
//! r   = sigmoid(W_r x + b_r)
//! c_t = f ⊙ c_{t-1} + (1 - f) ⊙ x̂
//! h_t = r ⊙ tanh(c_t) + (1 - r) ⊙ x
//! ```
//!
//! so the hidden width equals the input width. The spatial sweep reduces the
//! map with a 1x1 projection, runs four directional passes (left-to-right,
//! right-to-left, top-to-bottom, bottom-to-top) and concatenates them back to
//! the full width. The temporal sweep encodes to 19 channels, transposes the
//! channel and row axes, runs a bidirectional pass along the new leading axis
//! (the two directions summed, keeping 19 channels), and transposes back.

use crate::graph::{Graph, Var};
use crate::nn::{xavier_normal, zeros, ParamStore};
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use rand::Rng;

/// Value-level cell parameters; the contract-level `step` mirrors the graph
/// path exactly.
#[derive(Clone, Debug)]
pub struct RecurrentCellParams {
    pub w: Array2<f64>,
    pub w_f: Array2<f64>,
    pub b_f: Array1<f64>,
    pub w_r: Array2<f64>,
    pub b_r: Array1<f64>,
}

fn random_square(rng: &mut impl Rng, dim: usize) -> Array2<f64> {
    Array2::from_shape_vec(
        (dim, dim),
        xavier_normal(rng, &[dim, dim], dim, dim).into_raw_vec(),
    )
    .unwrap()
}

impl RecurrentCellParams {
    pub fn random(rng: &mut impl Rng, dim: usize) -> Self {
        RecurrentCellParams {
            w: random_square(rng, dim),
            w_f: random_square(rng, dim),
            b_f: Array1::zeros(dim),
            w_r: random_square(rng, dim),
            b_r: Array1::zeros(dim),
        }
    }

    pub fn from_store(store: &ParamStore, scope: &str) -> Self {
        let get2 = |n: &str| {
            store
                .get(&format!("{scope}.{n}"))
                .unwrap()
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
        };
        let get1 = |n: &str| {
            store
                .get(&format!("{scope}.{n}"))
                .unwrap()
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
        };
        RecurrentCellParams {
            w: get2("w"),
            w_f: get2("w_f"),
            b_f: get1("b_f"),
            w_r: get2("w_r"),
            b_r: get1("b_r"),
        }
    }

    /// One recurrence step on a `dim x lanes` input; each lane (column) is an
    /// independent sequence.
    pub fn step(&self, x: &Array2<f64>, c_prev: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let dim = self.w.nrows();
        if x.nrows() != dim || c_prev.dim() != x.dim() {
            return Err(Error::shape(format!(
                "recurrent step dims: cell {dim}, input {:?}, state {:?}",
                x.dim(),
                c_prev.dim()
            )));
        }
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let x_hat = self.w.dot(x);
        let mut f = self.w_f.dot(x);
        let mut r = self.w_r.dot(x);
        for (mut col_f, mut col_r) in f.columns_mut().into_iter().zip(r.columns_mut()) {
            for i in 0..dim {
                col_f[i] = sigmoid(col_f[i] + self.b_f[i]);
                col_r[i] = sigmoid(col_r[i] + self.b_r[i]);
            }
        }
        let c = &f * c_prev + (1.0 - &f) * &x_hat;
        let h = &r * &c.mapv(f64::tanh) + (1.0 - &r) * x;
        Ok((h, c))
    }
}

/// Graph-side cell bound to named parameters.
pub(crate) struct CellRef {
    pub scope: String,
    pub dim: usize,
}

impl CellRef {
    pub fn init_params(store: &mut ParamStore, rng: &mut impl Rng, scope: &str, dim: usize) {
        store.insert(format!("{scope}.w"), xavier_normal(rng, &[dim, dim], dim, dim));
        store.insert(format!("{scope}.w_f"), xavier_normal(rng, &[dim, dim], dim, dim));
        store.insert(format!("{scope}.b_f"), zeros(&[dim]));
        store.insert(format!("{scope}.w_r"), xavier_normal(rng, &[dim, dim], dim, dim));
        store.insert(format!("{scope}.b_r"), zeros(&[dim]));
    }

    pub fn param_names(scope: &str) -> Vec<String> {
        ["w", "w_f", "b_f", "w_r", "b_r"]
            .iter()
            .map(|n| format!("{scope}.{n}"))
            .collect()
    }

    fn step(&self, g: &mut Graph, x: Var, c_prev: Var) -> (Var, Var) {
        let w = g.param(&format!("{}.w", self.scope));
        let w_f = g.param(&format!("{}.w_f", self.scope));
        let b_f = g.param(&format!("{}.b_f", self.scope));
        let w_r = g.param(&format!("{}.w_r", self.scope));
        let b_r = g.param(&format!("{}.b_r", self.scope));

        let x_hat = g.matmul(w, x);
        let fx = g.matmul(w_f, x);
        let fx = g.add_col_bias(fx, b_f);
        let f = g.sigmoid(fx);
        let rx = g.matmul(w_r, x);
        let rx = g.add_col_bias(rx, b_r);
        let r = g.sigmoid(rx);

        let keep = g.mul(f, c_prev);
        let one_minus_f = g.one_minus(f);
        let write = g.mul(one_minus_f, x_hat);
        let c = g.add(keep, write);

        let gc = g.tanh(c);
        let out = g.mul(r, gc);
        let one_minus_r = g.one_minus(r);
        let pass = g.mul(one_minus_r, x);
        let h = g.add(out, pass);
        (h, c)
    }

    /// Run the cell over slices of a 3-D `map` along `axis`, optionally
    /// reversed, and reassemble in original order. Each slice drops `axis`;
    /// the first remaining axis is the feature dimension of the cell, the
    /// second is the independent-lane dimension.
    fn sweep_axis(&self, g: &mut Graph, map: Var, axis: usize, reverse: bool) -> Var {
        let shape = g.shape(map).to_vec();
        let steps = shape[axis];
        let remaining: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        assert_eq!(shape[remaining[0]], self.dim, "cell dim mismatch");
        let lanes = shape[remaining[1]];

        let mut c = g.input(crate::nn::zeros(&[self.dim, lanes]));
        let mut outputs: Vec<Option<Var>> = vec![None; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let x = g.index_axis(map, axis, t);
            let (h, c_next) = self.step(g, x, c);
            c = c_next;
            outputs[t] = Some(h);
        }
        let hs: Vec<Var> = outputs.into_iter().map(|o| o.unwrap()).collect();
        g.stack(&hs, axis)
    }
}

pub struct SpatialSweep {
    pub width: usize,  // S: input and output channels
    pub hidden: usize, // S/4, per direction
    pub in_channels: usize,
}

pub const DIRECTIONS: [&str; 4] = ["lr", "rl", "tb", "bt"];

impl SpatialSweep {
    pub fn new(in_channels: usize, width: usize) -> Self {
        assert!(width % 4 == 0, "sweep width must split into 4 directions");
        SpatialSweep {
            width,
            hidden: width / 4,
            in_channels,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(
            "datanet.sweep.proj.w",
            crate::nn::he_normal(rng, &[self.width, self.in_channels, 1, 1], self.in_channels),
        );
        store.insert(
            "datanet.sweep.reduce.w",
            crate::nn::he_normal(rng, &[self.hidden, self.width, 1, 1], self.width),
        );
        for dir in DIRECTIONS {
            CellRef::init_params(store, rng, &format!("datanet.sweep.{dir}"), self.hidden);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "datanet.sweep.proj.w".to_string(),
            "datanet.sweep.reduce.w".to_string(),
        ];
        for dir in DIRECTIONS {
            names.extend(CellRef::param_names(&format!("datanet.sweep.{dir}")));
        }
        names
    }

    /// Project the clip encoding to `S` channels (the pre-sweep transform).
    pub fn project(&self, g: &mut Graph, clip_features: Var) -> Var {
        let w = g.param("datanet.sweep.proj.w");
        g.conv2d(clip_features, w, 1, 0)
    }

    /// Four directional passes over an `S x n x n` map, concatenated back to
    /// `S` channels. Rejects non-square inputs.
    pub fn forward(&self, g: &mut Graph, map: Var) -> Result<Var> {
        let shape = g.shape(map).to_vec();
        if shape[1] != shape[2] {
            return Err(Error::shape(format!(
                "spatial sweep requires a square map, got {}x{}",
                shape[1], shape[2]
            )));
        }
        if shape[0] != self.width {
            return Err(Error::shape(format!(
                "spatial sweep expects {} channels, got {}",
                self.width, shape[0]
            )));
        }
        let wr = g.param("datanet.sweep.reduce.w");
        let reduced = g.conv2d(map, wr, 1, 0); // hidden x n x n

        let mut blocks = Vec::with_capacity(4);
        for (dir, axis, reverse) in [
            ("lr", 2usize, false),
            ("rl", 2, true),
            ("tb", 1, false),
            ("bt", 1, true),
        ] {
            let cell = CellRef {
                scope: format!("datanet.sweep.{dir}"),
                dim: self.hidden,
            };
            blocks.push(cell.sweep_axis(g, reduced, axis, reverse));
        }
        Ok(g.concat(&blocks, 0))
    }
}

pub struct TemporalSweep {
    pub in_channels: usize,
    pub grid: usize, // 19: the transpose trick ties channels to the grid size
}

impl TemporalSweep {
    pub fn new(in_channels: usize, grid: usize) -> Self {
        TemporalSweep { in_channels, grid }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(
            "datanet.temporal.encode.w",
            crate::nn::he_normal(rng, &[self.grid, self.in_channels, 1, 1], self.in_channels),
        );
        for dir in ["fwd", "bwd"] {
            CellRef::init_params(store, rng, &format!("datanet.temporal.{dir}"), self.grid);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["datanet.temporal.encode.w".to_string()];
        for dir in ["fwd", "bwd"] {
            names.extend(CellRef::param_names(&format!("datanet.temporal.{dir}")));
        }
        names
    }

    /// Encode to `19 x 19 x 19`, transpose the first two axes, run the
    /// bidirectional pass along the new leading axis (directions summed),
    /// transpose back.
    pub fn forward(&self, g: &mut Graph, clip_features: Var) -> Result<Var> {
        let shape = g.shape(clip_features).to_vec();
        if shape[0] != self.in_channels {
            return Err(Error::shape(format!(
                "temporal sweep expects {} channels, got {}",
                self.in_channels, shape[0]
            )));
        }
        if shape[1] != self.grid || shape[2] != self.grid {
            return Err(Error::shape(format!(
                "temporal sweep requires a {g}x{g} grid, got {}x{}",
                shape[1],
                shape[2],
                g = self.grid
            )));
        }
        let we = g.param("datanet.temporal.encode.w");
        let enc = g.conv2d(clip_features, we, 1, 0); // 19 x 19 x 19
        let swapped = g.permute(enc, &[1, 0, 2]);

        // The new leading axis is the sequence; each step sees an
        // (original-channels x columns) matrix.
        let mut sum = None;
        for (dir, reverse) in [("fwd", false), ("bwd", true)] {
            let cell = CellRef {
                scope: format!("datanet.temporal.{dir}"),
                dim: self.grid,
            };
            let out = cell.sweep_axis(g, swapped, 0, reverse);
            sum = Some(match sum {
                None => out,
                Some(acc) => g.add(acc, out),
            });
        }
        let summed = sum.unwrap();
        Ok(g.permute(summed, &[1, 0, 2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_gate_saturation_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = RecurrentCellParams::random(&mut rng, 4);
        let x = Array2::from_shape_simple_fn((4, 3), || rng.gen_range(-1.0..1.0));
        let c_prev = Array2::from_shape_simple_fn((4, 3), || rng.gen_range(-1.0..1.0));

        // b_f -> +inf makes f ~= 1, so the cell state is carried through.
        p.b_f.fill(60.0);
        let (_, c) = p.step(&x, &c_prev).unwrap();
        for (a, b) in c.iter().zip(c_prev.iter()) {
            assert!((a - b).abs() < 1e-6);
        }

        // b_r -> -inf makes r ~= 0, so the output is the raw input.
        p.b_f.fill(0.0);
        p.b_r.fill(-60.0);
        let (h, _) = p.step(&x, &c_prev).unwrap();
        for (a, b) in h.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Three steps against a per-coordinate scalar oracle.
    #[test]
    fn step_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dim = 3;
        let p = RecurrentCellParams::random(&mut rng, dim);
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_simple_fn((dim, 2), || rng.gen_range(-1.0..1.0)))
            .collect();

        let mut c = Array2::zeros((dim, 2));
        let mut h_last = Array2::zeros((dim, 2));
        for x in &xs {
            let (h, c_next) = p.step(x, &c).unwrap();
            c = c_next;
            h_last = h;
        }

        // Scalar recurrence, one lane and coordinate at a time.
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for lane in 0..2 {
            let mut c_ref = vec![0.0; dim];
            let mut h_ref = vec![0.0; dim];
            for x in &xs {
                let mut x_hat = vec![0.0; dim];
                let mut f = vec![0.0; dim];
                let mut r = vec![0.0; dim];
                for i in 0..dim {
                    let mut ax = 0.0;
                    let mut af = 0.0;
                    let mut ar = 0.0;
                    for j in 0..dim {
                        ax += p.w[[i, j]] * x[[j, lane]];
                        af += p.w_f[[i, j]] * x[[j, lane]];
                        ar += p.w_r[[i, j]] * x[[j, lane]];
                    }
                    x_hat[i] = ax;
                    f[i] = sig(af + p.b_f[i]);
                    r[i] = sig(ar + p.b_r[i]);
                }
                for i in 0..dim {
                    c_ref[i] = f[i] * c_ref[i] + (1.0 - f[i]) * x_hat[i];
                    h_ref[i] = r[i] * c_ref[i].tanh() + (1.0 - r[i]) * x[[i, lane]];
                }
            }
            for i in 0..dim {
                assert!((c[[i, lane]] - c_ref[i]).abs() < 1e-8);
                assert!((h_last[[i, lane]] - h_ref[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn step_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = RecurrentCellParams::random(&mut rng, 4);
        let x = Array2::zeros((3, 2));
        let c = Array2::zeros((3, 2));
        assert!(p.step(&x, &c).is_err());
    }

    /// Eq. 10 makes c_t a per-coordinate convex combination; Eq. 11 bounds
    /// |h_t| by max(|tanh(c_t)|, |x_t|).
    #[test]
    fn convexity_and_output_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = RecurrentCellParams::random(&mut rng, 5);
        for _ in 0..50 {
            let x = Array2::from_shape_simple_fn((5, 4), || rng.gen_range(-2.0..2.0));
            let c_prev = Array2::from_shape_simple_fn((5, 4), || rng.gen_range(-2.0..2.0));
            let (h, c) = p.step(&x, &c_prev).unwrap();
            let x_hat = p.w.dot(&x);
            for idx in ndarray::indices(c.dim()) {
                let lo = c_prev[idx].min(x_hat[idx]) - 1e-12;
                let hi = c_prev[idx].max(x_hat[idx]) + 1e-12;
                assert!(c[idx] >= lo && c[idx] <= hi, "cell state left the convex hull");
                let bound = c[idx].tanh().abs().max(x[idx].abs()) + 1e-12;
                assert!(h[idx].abs() <= bound, "output bound violated");
            }
        }
    }
}
