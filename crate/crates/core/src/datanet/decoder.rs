//! Attention decoder: five upsample groups take the combined 19x19 sweep
//! features to a full-resolution 300x300 map in [0,1].
//!
//! Each group is three stride-1 3x3 transposed convolutions (ReLU between)
//! followed by a nearest-neighbor upsample; target sizes are 38, 75, 150,
//! 300, 300 (the last group refines at full resolution). The final layer
//! outputs one channel through a sigmoid. Layer widths follow the profile's
//! sweep width; the exact schedule is this crate's choice and is documented
//! in the README.

use crate::graph::{Graph, Var};
use crate::nn::{he_normal, ParamStore};
use rand::Rng;

pub const GROUP_SIZES: [usize; 5] = [38, 75, 150, 300, 300];

pub struct Decoder {
    pub in_channels: usize,
    widths: [usize; 5],
}

impl Decoder {
    pub fn new(in_channels: usize, sweep_width: usize) -> Self {
        let base = (sweep_width / 16).clamp(8, 64);
        let widths = [
            base,
            (base * 3 / 4).max(4),
            (base / 2).max(4),
            (base / 4).max(4),
            (base / 4).max(4),
        ];
        Decoder { in_channels, widths }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let mut cin = self.in_channels;
        for (gi, &cout) in self.widths.iter().enumerate() {
            for li in 0..3 {
                let (ci, co) = match li {
                    0 => (cin, cout),
                    _ => (cout, cout),
                };
                // deconv weights are Cin x Cout x k x k
                store.insert(
                    format!("datanet.dec.g{gi}.d{li}.w"),
                    he_normal(rng, &[ci, co, 3, 3], ci * 9),
                );
            }
            cin = cout;
        }
        store.insert(
            "datanet.dec.head.w",
            he_normal(rng, &[cin, 1, 3, 3], cin * 9),
        );
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for gi in 0..5 {
            for li in 0..3 {
                names.push(format!("datanet.dec.g{gi}.d{li}.w"));
            }
        }
        names.push("datanet.dec.head.w".into());
        names
    }

    /// `combined x 19 x 19` to a `1 x 300 x 300` map in (0,1).
    pub fn forward(&self, g: &mut Graph, combined: Var) -> Var {
        let mut x = combined;
        for (gi, &size) in GROUP_SIZES.iter().enumerate() {
            for li in 0..3 {
                let w = g.param(&format!("datanet.dec.g{gi}.d{li}.w"));
                let (h, ww) = (g.shape(x)[1], g.shape(x)[2]);
                x = g.deconv2d(x, w, 1, 1, (h, ww));
                x = g.relu(x);
            }
            x = g.upsample_nearest(x, size, size);
        }
        let wh = g.param("datanet.dec.head.w");
        let (h, ww) = (g.shape(x)[1], g.shape(x)[2]);
        let x = g.deconv2d(x, wh, 1, 1, (h, ww));
        g.sigmoid(x)
    }
}
