//! Shared convolutional encoder for visible and thermal frames.
//!
//! One parameter set serves both modalities: thermal frames are stored with
//! their gray channel replicated to three channels. Three conv layers plus a
//! final max-pool take `3 x H x W` to `channels x H/8 x W/8`:
//!
//! * conv1 5x5 stride 2 pad 2 -> C/4 channels, ReLU
//! * conv2 3x3 stride 2 pad 1 -> C/2 channels, ReLU
//! * conv3 3x3 stride 1 pad 1 -> C channels, ReLU
//! * maxpool 2x2 stride 2
//!
//! The exact layer schedule is this crate's own (documented in the README);
//! the contract is the shape law and the 1/8-resolution, 512-channel output
//! of the full profile.

use crate::graph::{Graph, Var};
use crate::nn::{he_normal, ParamStore};
use crate::{Config, Error, Result};
use ndarray::{Array2, Array3};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visible,
    Thermal,
}

/// A `3 x H x W` image in `[0,1]`.
///
/// The backbone additionally requires H and W divisible by 8; that is checked
/// at [`Backbone::encode`], since the global-attention pipeline feeds the
/// same type at 300x300.
#[derive(Clone, Debug)]
pub struct ImageTensor {
    pub data: Array3<f64>,
    pub modality: Modality,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>, modality: Modality) -> Result<Self> {
        let (c, _, _) = data.dim();
        if c != 3 {
            return Err(Error::shape(format!("image must have 3 channels, got {c}")));
        }
        if !data.iter().all(|v| v.is_finite() && (-1e-9..=1.0 + 1e-9).contains(v)) {
            return Err(Error::invalid("image values must lie in [0,1]"));
        }
        Ok(ImageTensor { data, modality })
    }

    /// Replicate a gray image to three channels, the storage convention for
    /// thermal frames.
    pub fn from_gray(gray: &Array2<f64>, modality: Modality) -> Result<Self> {
        let (h, w) = gray.dim();
        let mut data = Array3::zeros((3, h, w));
        for c in 0..3 {
            data.index_axis_mut(ndarray::Axis(0), c).assign(gray);
        }
        ImageTensor::new(data, modality)
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// Aligned visible + thermal image for one timestamp.
#[derive(Clone, Debug)]
pub struct FramePair {
    pub visible: ImageTensor,
    pub thermal: ImageTensor,
}

impl FramePair {
    pub fn new(visible: ImageTensor, thermal: ImageTensor) -> Result<Self> {
        if visible.data.dim() != thermal.data.dim() {
            return Err(Error::shape(format!(
                "frame pair size mismatch: {:?} vs {:?}",
                visible.data.dim(),
                thermal.data.dim()
            )));
        }
        Ok(FramePair { visible, thermal })
    }

    pub fn height(&self) -> usize {
        self.visible.height()
    }

    pub fn width(&self) -> usize {
        self.visible.width()
    }
}

/// `C x h x w` activation tensor with declared channel count.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        FeatureMap { data }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
}

pub struct Backbone {
    pub channels: usize,
    c1: usize,
    c2: usize,
}

impl Backbone {
    pub fn new(channels: usize) -> Self {
        Backbone {
            channels,
            c1: (channels / 4).max(4),
            c2: (channels / 2).max(4),
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Backbone::new(cfg.get_usize("backbone.channels")?))
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(
            "backbone.conv1.w",
            he_normal(rng, &[self.c1, 3, 5, 5], 3 * 25),
        );
        store.insert(
            "backbone.conv2.w",
            he_normal(rng, &[self.c2, self.c1, 3, 3], self.c1 * 9),
        );
        store.insert(
            "backbone.conv3.w",
            he_normal(rng, &[self.channels, self.c2, 3, 3], self.c2 * 9),
        );
    }

    pub fn param_names(&self) -> Vec<String> {
        vec![
            "backbone.conv1.w".into(),
            "backbone.conv2.w".into(),
            "backbone.conv3.w".into(),
        ]
    }

    /// Graph-level forward: `3 x H x W` input node to `C x H/8 x W/8`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w1 = g.param("backbone.conv1.w");
        let w2 = g.param("backbone.conv2.w");
        let w3 = g.param("backbone.conv3.w");
        let y = g.conv2d(x, w1, 2, 2);
        let y = g.relu(y);
        let y = g.conv2d(y, w2, 2, 1);
        let y = g.relu(y);
        let y = g.conv2d(y, w3, 1, 1);
        let y = g.relu(y);
        g.maxpool2d(y, 2, 2)
    }

    /// Encode one image to its feature map.
    pub fn encode(&self, store: &ParamStore, img: &ImageTensor) -> Result<FeatureMap> {
        let (h, w) = (img.height(), img.width());
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape(format!(
                "encode requires dims divisible by 8, got {h}x{w}"
            )));
        }
        let mut g = Graph::new(store);
        let x = g.input(img.data.clone().into_dyn());
        let out = self.forward(&mut g, x);
        let data = g.value(out).clone().into_dimensionality().unwrap();
        Ok(FeatureMap::new(data))
    }

    /// Encode both modalities of a pair with the shared weights.
    pub fn encode_pair(&self, store: &ParamStore, pair: &FramePair) -> Result<(FeatureMap, FeatureMap)> {
        let f_v = self.encode(store, &pair.visible)?;
        let f_t = self.encode(store, &pair.thermal)?;
        Ok((f_v, f_t))
    }
}
