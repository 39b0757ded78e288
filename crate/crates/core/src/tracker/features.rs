//! The tracker's feature path: shared backbone per modality, optional
//! channel/spatial attention on each map, then dynamic filter fusion into the
//! doubled-channel representation that instance features are pooled from.

use crate::backbone::{Backbone, FeatureMap, FramePair};
use crate::cbam::Cbam;
use crate::graph::{Graph, Var};
use crate::mfgnet::MfgNet;
use crate::nn::ParamStore;
use crate::{Config, Result};
use rand::Rng;

pub struct FeatureExtractor {
    pub backbone: Backbone,
    pub cbam: Option<(Cbam, Cbam)>, // visible, thermal; separate weights
    pub mfgnet: MfgNet,
}

impl FeatureExtractor {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let backbone = Backbone::from_config(cfg)?;
        let channels = backbone.channels;
        let cbam = if cfg.get_bool("cbam.enabled")? {
            Some((
                Cbam::from_config(cfg, "cbam.v", channels)?,
                Cbam::from_config(cfg, "cbam.t", channels)?,
            ))
        } else {
            None
        };
        let mfgnet = MfgNet::from_config(cfg, channels)?;
        Ok(FeatureExtractor {
            backbone,
            cbam,
            mfgnet,
        })
    }

    /// Channels of the fused map: both modalities concatenated.
    pub fn fused_channels(&self) -> usize {
        2 * self.backbone.channels
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.backbone.init_params(store, rng);
        if let Some((cv, ct)) = &self.cbam {
            cv.init_params(store, rng);
            ct.init_params(store, rng);
        }
        self.mfgnet.init_params(store, rng);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.backbone.param_names();
        if let Some((cv, ct)) = &self.cbam {
            names.extend(cv.param_names());
            names.extend(ct.param_names());
        }
        names.extend(self.mfgnet.param_names());
        names
    }

    /// Fused feature node for a frame pair.
    pub fn forward(&self, g: &mut Graph, pair: &FramePair) -> Result<Var> {
        let (h, w) = (pair.height(), pair.width());
        if h % 8 != 0 || w % 8 != 0 {
            return Err(crate::Error::shape(format!(
                "frame dims must be divisible by 8, got {h}x{w}"
            )));
        }
        let xv = g.input(pair.visible.data.clone().into_dyn());
        let xt = g.input(pair.thermal.data.clone().into_dyn());
        let mut fv = self.backbone.forward(g, xv);
        let mut ft = self.backbone.forward(g, xt);
        if let Some((cv, ct)) = &self.cbam {
            fv = cv.forward(g, fv);
            ft = ct.forward(g, ft);
        }
        Ok(self.mfgnet.fuse_graph(g, fv, ft))
    }

    pub fn fused(&self, store: &ParamStore, pair: &FramePair) -> Result<FeatureMap> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, pair)?;
        Ok(FeatureMap::new(
            g.value(out).clone().into_dimensionality().unwrap(),
        ))
    }
}
