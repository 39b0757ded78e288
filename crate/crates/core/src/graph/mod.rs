//! Minimal reverse-mode autodiff over `ndarray` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! its parents, and a backward rule. Parameters are pulled in by name from a
//! [`crate::nn::ParamStore`]; [`Graph::backward`] returns accumulated
//! gradients per node and per parameter name. Graphs are built per forward
//! pass and dropped afterwards.
//!
//! Everything is `f64` and single-threaded, so repeated evaluation is
//! bit-deterministic.

mod ops_basic;
mod ops_conv;
mod ops_loss;
mod ops_roi;

pub mod check;

pub use ops_conv::{col2im, conv_out_dim, im2col};
pub use ops_loss::softmax_rows;
pub use ops_roi::RoiBox;

use crate::nn::ParamStore;
use ndarray::{ArrayD, IxDyn};
use std::collections::HashMap;

pub type Arr = ArrayD<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) trait Op {
    /// Gradients with respect to each parent, in parent order.
    fn backward(&self, inputs: &[&Arr], output: &Arr, grad: &Arr) -> Vec<Arr>;
}

struct Entry {
    parents: Vec<usize>,
    op: Option<Box<dyn Op>>,
    param: Option<String>,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    values: Vec<Arr>,
    entries: Vec<Entry>,
    param_cache: HashMap<String, Var>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            values: Vec::new(),
            entries: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    /// Insert a constant input tensor.
    pub fn input(&mut self, value: Arr) -> Var {
        self.push(value, Vec::new(), None, None)
    }

    /// Fetch a parameter leaf by name. Repeated fetches of the same name
    /// return the same node, so gradients of shared weights accumulate.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.param_cache.get(name) {
            return v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not found in store"))
            .clone();
        let v = self.push(value, Vec::new(), None, Some(name.to_string()));
        self.param_cache.insert(name.to_string(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Scalar value of a 0-dim node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.values[v.0];
        assert!(val.ndim() == 0 || val.len() == 1, "not a scalar node");
        *val.iter().next().unwrap()
    }

    pub(crate) fn push(
        &mut self,
        value: Arr,
        parents: Vec<usize>,
        op: Option<Box<dyn Op>>,
        param: Option<String>,
    ) -> Var {
        debug_assert!(value.iter().all(|x| x.is_finite()), "non-finite value in graph");
        self.values.push(value);
        self.entries.push(Entry { parents, op, param });
        Var(self.values.len() - 1)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Grads {
        let n = self.values.len();
        let mut grads: Vec<Option<Arr>> = (0..n).map(|_| None).collect();
        let seed = Arr::from_elem(IxDyn(&[]), 1.0)
            .into_shape(self.values[loss.0].raw_dim())
            .unwrap_or_else(|_| Arr::from_elem(self.values[loss.0].raw_dim(), 1.0));
        grads[loss.0] = Some(seed);

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(op) = &self.entries[i].op {
                let inputs: Vec<&Arr> = self.entries[i]
                    .parents
                    .iter()
                    .map(|&p| &self.values[p])
                    .collect();
                let parent_grads = op.backward(&inputs, &self.values[i], &g);
                debug_assert_eq!(parent_grads.len(), self.entries[i].parents.len());
                for (&p, pg) in self.entries[i].parents.iter().zip(parent_grads) {
                    debug_assert_eq!(pg.shape(), self.values[p].shape());
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }

        let mut params: HashMap<String, Arr> = HashMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if let (Some(name), Some(g)) = (&e.param, &grads[i]) {
                match params.get_mut(name) {
                    Some(acc) => *acc += g,
                    None => {
                        params.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        Grads { by_var: grads, params }
    }
}

/// Result of a backward pass.
pub struct Grads {
    by_var: Vec<Option<Arr>>,
    pub params: HashMap<String, Arr>,
}

impl Grads {
    /// Gradient of the loss with respect to an arbitrary node, if it was
    /// reached by the reverse pass.
    pub fn wrt(&self, v: Var) -> Option<&Arr> {
        self.by_var.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Arr> {
        self.params.get(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{he_normal, ParamStore};
    use ndarray::{Array1, Array2, Array3, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
        he_normal(rng, shape, 4)
    }

    /// Finite-difference check of one scenario: `build` constructs the loss
    /// from whatever parameters it fetched from the store.
    fn check_scenario<F>(params: &[(&str, &[usize])], build: F)
    where
        F: Fn(&mut Graph) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParamStore::new();
        for (name, shape) in params {
            store.insert(*name, rand_arr(&mut rng, shape));
        }
        let (loss_val, grads) = {
            let mut g = Graph::new(&store);
            let loss = build(&mut g);
            (g.scalar(loss), g.backward(loss))
        };
        assert!(loss_val.is_finite());

        let names: Vec<&str> = params.iter().map(|(n, _)| *n).collect();
        let result = check::finite_diff_params(
            &mut store,
            &names,
            &grads.params,
            |s| {
                let mut g = Graph::new(s);
                let loss = build(&mut g);
                g.scalar(loss)
            },
            1e-5,
            40,
            &mut rng,
        );
        result.assert_ok(1e-4);
    }

    #[test]
    fn grad_elementwise_chain() {
        check_scenario(&[("a", &[3, 4]), ("b", &[3, 4])], |g| {
            let a = g.param("a");
            let b = g.param("b");
            let s = g.add(a, b);
            let m = g.mul(s, a);
            let t = g.tanh(m);
            let r = g.relu(t);
            let sg = g.sigmoid(r);
            g.mean_all(sg)
        });
    }

    #[test]
    fn grad_matmul_bias() {
        check_scenario(&[("w", &[5, 3]), ("x", &[4, 5]), ("b", &[3])], |g| {
            let w = g.param("w");
            let x = g.param("x");
            let b = g.param("b");
            let y = g.matmul(x, w);
            let y = g.add_row_bias(y, b);
            let y = g.tanh(y);
            g.sum_all(y)
        });
        check_scenario(&[("x", &[3, 5]), ("b", &[3])], |g| {
            let x = g.param("x");
            let b = g.param("b");
            let y = g.add_col_bias(x, b);
            let y = g.sigmoid(y);
            g.mean_all(y)
        });
    }

    #[test]
    fn grad_conv2d() {
        for (stride, pad) in [(1, 1), (2, 2), (2, 1)] {
            check_scenario(&[("x", &[3, 8, 8]), ("w", &[4, 3, 3, 3])], move |g| {
                let x = g.param("x");
                let w = g.param("w");
                let y = g.conv2d(x, w, stride, pad);
                let y = g.tanh(y);
                g.sum_all(y)
            });
        }
    }

    #[test]
    fn grad_deconv2d() {
        // 4 -> 8 with stride 2, k=4, p=1; and stride-1 same-size refinement.
        check_scenario(&[("x", &[3, 4, 4]), ("w", &[3, 2, 4, 4])], |g| {
            let x = g.param("x");
            let w = g.param("w");
            let y = g.deconv2d(x, w, 2, 1, (8, 8));
            let y = g.tanh(y);
            g.sum_all(y)
        });
        check_scenario(&[("x", &[2, 5, 5]), ("w", &[2, 3, 3, 3])], |g| {
            let x = g.param("x");
            let w = g.param("w");
            let y = g.deconv2d(x, w, 1, 1, (5, 5));
            g.mean_all(y)
        });
    }

    #[test]
    fn grad_pool_and_upsample() {
        check_scenario(&[("x", &[2, 6, 6])], |g| {
            let x = g.param("x");
            let y = g.maxpool2d(x, 2, 2);
            let y = g.upsample_nearest(y, 7, 7);
            let y = g.sigmoid(y);
            g.mean_all(y)
        });
    }

    #[test]
    fn grad_dyn_depthwise_both_inputs() {
        check_scenario(&[("x", &[2, 5, 5]), ("z", &[2, 3, 3])], |g| {
            let x = g.param("x");
            let z = g.param("z");
            let y = g.dyn_depthwise(x, z);
            let y = g.tanh(y);
            g.sum_all(y)
        });
    }

    #[test]
    fn grad_gates_and_reductions() {
        check_scenario(&[("x", &[3, 4, 4]), ("wc", &[3])], |g| {
            let x = g.param("x");
            let wc = g.param("wc");
            let cg = g.sigmoid(wc);
            let gated = g.mul_channel(x, cg);
            let mx = g.max_channels(gated);
            let mn = g.mean_channels(gated);
            let cat = g.concat(&[mx, mn], 0);
            let sp = g.mean_channels(cat);
            let sp = g.sigmoid(sp);
            let out = g.mul_spatial(gated, sp);
            g.sum_all(out)
        });
        check_scenario(&[("x", &[3, 4, 4])], |g| {
            let x = g.param("x");
            let mx = g.max_spatial(x);
            let mn = g.mean_spatial(x);
            let s = g.add(mx, mn);
            let s = g.tanh(s);
            g.sum_all(s)
        });
    }

    #[test]
    fn grad_shape_ops() {
        check_scenario(&[("x", &[2, 3, 4])], |g| {
            let x = g.param("x");
            let p = g.permute(x, &[2, 0, 1]);
            let r = g.reshape(p, &[4, 6]);
            let s0 = g.index_axis(r, 0, 1);
            let s1 = g.index_axis(r, 0, 3);
            let st = g.stack(&[s0, s1], 1);
            let t = g.tanh(st);
            g.mean_all(t)
        });
    }

    #[test]
    fn grad_roi_align() {
        let boxes = vec![
            RoiBox { x: 0.7, y: 0.3, w: 3.2, h: 4.1 },
            RoiBox { x: 2.0, y: 1.5, w: 2.0, h: 2.0 },
        ];
        check_scenario(&[("x", &[3, 6, 6])], move |g| {
            let x = g.param("x");
            let r = g.roi_align(x, &boxes, 3);
            let t = g.tanh(r);
            g.sum_all(t)
        });
    }

    #[test]
    fn grad_softmax_cross_entropy() {
        check_scenario(&[("logits", &[5, 3])], |g| {
            let l = g.param("logits");
            g.softmax_cross_entropy(l, &[0, 2, 1, 1, 0])
        });
    }

    #[test]
    fn grad_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = he_normal(&mut rng, &[3, 4], 4).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let t = target.clone();
        check_scenario(&[("x", &[3, 4])], move |g| {
            let x = g.param("x");
            let p = g.sigmoid(x);
            g.bce_loss(p, &t)
        });
    }

    #[test]
    fn shared_param_grads_accumulate() {
        // f(w) = sum(w*w) pulled through two fetches of the same leaf.
        let mut store = ParamStore::new();
        store.insert("w", Array1::from(vec![1.0, 2.0]).into_dyn());
        let mut g = Graph::new(&store);
        let a = g.param("w");
        let b = g.param("w");
        let prod = g.mul(a, b);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let gw = grads.param("w").unwrap();
        assert_eq!(gw[[0]], 2.0);
        assert_eq!(gw[[1]], 4.0);
    }

    #[test]
    fn im2col_matches_direct_conv() {
        // Direct triple-loop convolution oracle vs the gemm path.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Array3<f64> = he_normal(&mut rng, &[2, 6, 7], 9)
            .into_dimensionality()
            .unwrap();
        let w = he_normal(&mut rng, &[3, 2, 3, 3], 18);

        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone().into_dyn());
        let wv = g.input(w.clone());
        let y = g.conv2d(xv, wv, 1, 1);
        let got = g.value(y).clone();

        let mut expect = Array3::<f64>::zeros((3, 6, 7));
        for co in 0..3 {
            for oi in 0..6i64 {
                for oj in 0..7i64 {
                    let mut acc = 0.0;
                    for ci in 0..2 {
                        for u in 0..3i64 {
                            for v in 0..3i64 {
                                let (ii, jj) = (oi + u - 1, oj + v - 1);
                                if ii < 0 || ii >= 6 || jj < 0 || jj >= 7 {
                                    continue;
                                }
                                acc += x[[ci, ii as usize, jj as usize]]
                                    * w[[co, ci, u as usize, v as usize]];
                            }
                        }
                    }
                    expect[[co, oi as usize, oj as usize]] = acc;
                }
            }
        }
        let got3: Array3<f64> = got.into_dimensionality().unwrap();
        for (a, b) in got3.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.insert("w", he_normal(&mut rng, &[4, 3, 3, 3], 27));
        let x = he_normal(&mut rng, &[3, 8, 8], 27);

        let run = |store: &ParamStore, x: &Arr| {
            let mut g = Graph::new(store);
            let xv = g.input(x.clone());
            let wv = g.param("w");
            let y = g.conv2d(xv, wv, 2, 1);
            let y = g.relu(y);
            g.value(y).clone()
        };
        let a = run(&store, &x);
        let b = run(&store, &x);
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_rows_normalized() {
        let logits = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let sm = softmax_rows(&logits);
        for row in sm.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_and_shape_accessors() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let v = g.input(Arr::from_elem(IxDyn(&[2, 2]), 1.5));
        let s = g.sum_all(v);
        assert_eq!(g.scalar(s), 6.0);
        assert_eq!(g.shape(v), &[2, 2]);
    }
}
