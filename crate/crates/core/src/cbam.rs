//! Channel-then-spatial attention (CBAM) applied to each modality's backbone
//! map before filter generation.
//!
//! Channel attention: sigmoid of a shared two-layer MLP applied to the
//! spatial max-pool and mean-pool vectors, summed. Spatial attention: sigmoid
//! of a k x k convolution over the channelwise [max; mean] pair of the
//! channel-refined map. Both gates lie strictly in (0,1), so attention never
//! amplifies.

use crate::backbone::FeatureMap;
use crate::graph::{Graph, Var};
use crate::nn::{xavier_normal, zeros, ParamStore};
use crate::{Config, Result};
use ndarray::{Array1, Array2};
use rand::Rng;

/// Per-channel gate in (0,1).
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub weights: Array1<f64>,
}

/// Per-pixel gate in (0,1).
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub weights: Array2<f64>,
}

pub struct Cbam {
    pub channels: usize,
    pub hidden: usize,
    pub spatial_kernel: usize,
    scope: String,
}

impl Cbam {
    pub fn new(scope: &str, channels: usize, reduction: usize, spatial_kernel: usize) -> Self {
        assert!(spatial_kernel % 2 == 1, "spatial kernel must be odd");
        Cbam {
            channels,
            hidden: (channels / reduction.max(1)).max(4).min(channels),
            spatial_kernel,
            scope: scope.to_string(),
        }
    }

    pub fn from_config(cfg: &Config, scope: &str, channels: usize) -> Result<Self> {
        Ok(Cbam::new(
            scope,
            channels,
            cfg.get_usize("cbam.reduction")?,
            cfg.get_usize("cbam.spatial_kernel")?,
        ))
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let (c, h) = (self.channels, self.hidden);
        store.insert(
            format!("{}.mlp.w1", self.scope),
            xavier_normal(rng, &[c, h], c, h),
        );
        store.insert(format!("{}.mlp.b1", self.scope), zeros(&[h]));
        store.insert(
            format!("{}.mlp.w2", self.scope),
            xavier_normal(rng, &[h, c], h, c),
        );
        store.insert(format!("{}.mlp.b2", self.scope), zeros(&[c]));
        let k = self.spatial_kernel;
        store.insert(
            format!("{}.spatial.w", self.scope),
            xavier_normal(rng, &[1, 2, k, k], 2 * k * k, 1),
        );
    }

    pub fn param_names(&self) -> Vec<String> {
        vec![
            format!("{}.mlp.w1", self.scope),
            format!("{}.mlp.b1", self.scope),
            format!("{}.mlp.w2", self.scope),
            format!("{}.mlp.b2", self.scope),
            format!("{}.spatial.w", self.scope),
        ]
    }

    fn mlp(&self, g: &mut Graph, v: Var) -> Var {
        let w1 = g.param(&format!("{}.mlp.w1", self.scope));
        let b1 = g.param(&format!("{}.mlp.b1", self.scope));
        let w2 = g.param(&format!("{}.mlp.w2", self.scope));
        let b2 = g.param(&format!("{}.mlp.b2", self.scope));
        let row = g.reshape(v, &[1, self.channels]);
        let h = g.matmul(row, w1);
        let h = g.add_row_bias(h, b1);
        let h = g.relu(h);
        let o = g.matmul(h, w2);
        let o = g.add_row_bias(o, b2);
        g.reshape(o, &[self.channels])
    }

    /// sigmoid(MLP(maxpool) + MLP(avgpool)); invariant to spatial shuffles.
    pub fn channel_attention_graph(&self, g: &mut Graph, f: Var) -> Var {
        let mx = g.max_spatial(f);
        let mn = g.mean_spatial(f);
        let a = self.mlp(g, mx);
        let b = self.mlp(g, mn);
        let s = g.add(a, b);
        g.sigmoid(s)
    }

    /// sigmoid(conv_k([max over channels; mean over channels])); invariant to
    /// channel shuffles.
    pub fn spatial_attention_graph(&self, g: &mut Graph, f: Var) -> Var {
        let mx = g.max_channels(f);
        let mn = g.mean_channels(f);
        let cat = g.concat(&[mx, mn], 0);
        let w = g.param(&format!("{}.spatial.w", self.scope));
        let conv = g.conv2d(cat, w, 1, self.spatial_kernel / 2);
        g.sigmoid(conv)
    }

    /// Channel gate, then spatial gate on the channel-refined map.
    pub fn forward(&self, g: &mut Graph, f: Var) -> Var {
        let ca = self.channel_attention_graph(g, f);
        let f1 = g.mul_channel(f, ca);
        let sa = self.spatial_attention_graph(g, f1);
        g.mul_spatial(f1, sa)
    }

    pub fn channel_attention(&self, store: &ParamStore, f: &FeatureMap) -> ChannelAttention {
        let mut g = Graph::new(store);
        let x = g.input(f.data.clone().into_dyn());
        let a = self.channel_attention_graph(&mut g, x);
        ChannelAttention {
            weights: g.value(a).clone().into_dimensionality().unwrap(),
        }
    }

    pub fn spatial_attention(&self, store: &ParamStore, f: &FeatureMap) -> SpatialAttention {
        let mut g = Graph::new(store);
        let x = g.input(f.data.clone().into_dyn());
        let a = self.spatial_attention_graph(&mut g, x);
        let map3: ndarray::Array3<f64> = g.value(a).clone().into_dimensionality().unwrap();
        SpatialAttention {
            weights: map3.index_axis(ndarray::Axis(0), 0).to_owned(),
        }
    }

    pub fn apply(&self, store: &ParamStore, f: &FeatureMap) -> FeatureMap {
        let mut g = Graph::new(store);
        let x = g.input(f.data.clone().into_dyn());
        let y = self.forward(&mut g, x);
        FeatureMap::new(g.value(y).clone().into_dimensionality().unwrap())
    }
}
