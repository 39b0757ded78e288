//! Clip encoder: a small residual CNN taking each 300x300 image to a 19x19
//! grid, with features tapped from two depths and concatenated per image.
//!
//! Spatial schedule: stem 7x7 s2 (300 -> 150), pool 2x2 s2 (-> 75), then two
//! stride-2 residual blocks (-> 38 -> 19) and one stride-1 block at 19. The
//! two tap points are the outputs of the last two blocks, each `P/2` channels,
//! so one image contributes `P` channels. Visible and thermal features of a
//! pair are summed; template and frame features are concatenated along
//! channels.

use crate::graph::{Graph, Var};
use crate::nn::{he_normal, ParamStore};
use rand::Rng;

pub struct ClipEncoder {
    pub per_image: usize, // P; each tap is P/2
    c0: usize,
    c1: usize,
}

impl ClipEncoder {
    pub fn new(per_image: usize) -> Self {
        assert!(per_image % 2 == 0, "per-image channels must be even");
        let c2 = per_image / 2;
        ClipEncoder {
            per_image,
            c0: (c2 / 8).max(4),
            c1: (c2 / 2).max(4),
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let (c0, c1, c2) = (self.c0, self.c1, self.per_image / 2);
        store.insert("datanet.enc.stem.w", he_normal(rng, &[c0, 3, 7, 7], 3 * 49));
        self.init_block(store, rng, "block1", c0, c1);
        self.init_block(store, rng, "block2", c1, c2);
        self.init_block(store, rng, "block3", c2, c2);
    }

    fn init_block(&self, store: &mut ParamStore, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) {
        store.insert(
            format!("datanet.enc.{name}.conv1.w"),
            he_normal(rng, &[cout, cin, 3, 3], cin * 9),
        );
        store.insert(
            format!("datanet.enc.{name}.conv2.w"),
            he_normal(rng, &[cout, cout, 3, 3], cout * 9),
        );
        store.insert(
            format!("datanet.enc.{name}.skip.w"),
            he_normal(rng, &[cout, cin, 1, 1], cin),
        );
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["datanet.enc.stem.w".to_string()];
        for block in ["block1", "block2", "block3"] {
            for p in ["conv1.w", "conv2.w", "skip.w"] {
                names.push(format!("datanet.enc.{block}.{p}"));
            }
        }
        names
    }

    fn block(&self, g: &mut Graph, x: Var, name: &str, stride: usize) -> Var {
        let w1 = g.param(&format!("datanet.enc.{name}.conv1.w"));
        let w2 = g.param(&format!("datanet.enc.{name}.conv2.w"));
        let ws = g.param(&format!("datanet.enc.{name}.skip.w"));
        let y = g.conv2d(x, w1, stride, 1);
        let y = g.relu(y);
        let y = g.conv2d(y, w2, 1, 1);
        let skip = g.conv2d(x, ws, stride, 0);
        let y = g.add(y, skip);
        g.relu(y)
    }

    /// One image to its `P x 19 x 19` two-tap feature.
    pub fn encode_image(&self, g: &mut Graph, x: Var) -> Var {
        let stem_w = g.param("datanet.enc.stem.w");
        let y = g.conv2d(x, stem_w, 2, 3); // 300 -> 150
        let y = g.relu(y);
        let y = g.maxpool2d(y, 2, 2); // -> 75
        let y = self.block(g, y, "block1", 2); // -> 38
        let tap_a = self.block(g, y, "block2", 2); // -> 19
        let tap_b = self.block(g, tap_a, "block3", 1); // 19, same size
        g.concat(&[tap_a, tap_b], 0)
    }
}
