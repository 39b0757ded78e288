//! Direction-aware global attention network for re-detection.
//!
//! A short clip of RGB-T frame pairs plus the first-frame template, all at
//! 300x300, is encoded to a 19x19 grid; spatial recurrences sweep the grid in
//! four directions and a temporal recurrence sweeps the transposed encoding;
//! the combined features decode to a full-frame target-likelihood map, whose
//! peaks seed global proposals when local search has been failing.

mod decoder;
mod encoder;
mod sweep;

pub use decoder::Decoder;
pub use encoder::ClipEncoder;
pub use sweep::{RecurrentCellParams, SpatialSweep, TemporalSweep, DIRECTIONS};

use crate::backbone::{FeatureMap, FramePair};
use crate::geom::BoundingBox;
use crate::graph::{Graph, Var};
use crate::nn::{Adagrad, ParamStore};
use crate::{Config, Error, Result};
use ndarray::Array2;
use rand::Rng;

/// Input/attention resolution.
pub const ATT_SIZE: usize = 300;
/// Encoded grid resolution; also the temporal channel count, since the
/// temporal sweep transposes channels against rows.
pub const GRID: usize = 19;

/// Channel profile of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Profile {
    /// Channels contributed per image (two taps of this/2 each).
    pub per_image: usize,
    /// Width of the spatial sweep (4 directions x width/4 hidden).
    pub sweep_width: usize,
}

impl Profile {
    /// The published dimensions: 1024-channel images, 1024-wide sweeps,
    /// 3x1024 = 3072 clip channels and 1024 + 19 = 1043 combined channels.
    pub fn paper() -> Self {
        Profile {
            per_image: 1024,
            sweep_width: 1024,
        }
    }

    /// Reduced profile for CPU training and tests.
    pub fn desk() -> Self {
        Profile {
            per_image: 24,
            sweep_width: 32,
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        match cfg.get_str("datanet.profile")? {
            "paper" => Ok(Profile::paper()),
            "desk" => Ok(Profile::desk()),
            other => Err(Error::config(
                "datanet.profile",
                format!("expected paper|desk, got `{other}`"),
            )),
        }
    }
}

/// A clip of `T` frame pairs plus the first-frame template crop, all 300x300.
#[derive(Clone, Debug)]
pub struct ClipInput {
    pub frames: Vec<FramePair>,
    pub template: FramePair,
}

impl ClipInput {
    pub fn new(frames: Vec<FramePair>, template: FramePair) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("clip needs at least one frame pair"));
        }
        for p in frames.iter().chain(std::iter::once(&template)) {
            if p.height() != ATT_SIZE || p.width() != ATT_SIZE {
                return Err(Error::shape(format!(
                    "clip images must be {ATT_SIZE}x{ATT_SIZE}, got {}x{}",
                    p.height(),
                    p.width()
                )));
            }
        }
        Ok(ClipInput { frames, template })
    }
}

/// Direction-aware features: the spatial block, the temporal block, and
/// their channel concatenation.
#[derive(Clone, Debug)]
pub struct SweepFeatures {
    pub spatial: FeatureMap,
    pub temporal: FeatureMap,
    pub combined: FeatureMap,
}

/// Per-pixel target likelihood in [0,1] at frame resolution.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub data: Array2<f64>,
}

impl AttentionMap {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("attention values must lie in [0,1]"));
        }
        Ok(AttentionMap { data })
    }
}

pub struct DataNet {
    pub clip_len: usize,
    pub profile: Profile,
    pub encoder: ClipEncoder,
    pub spatial: SpatialSweep,
    pub temporal: TemporalSweep,
    pub decoder: Decoder,
}

impl DataNet {
    pub fn new(clip_len: usize, profile: Profile) -> Self {
        assert!(clip_len >= 1);
        let clip_channels = (clip_len + 1) * profile.per_image;
        DataNet {
            clip_len,
            profile,
            encoder: ClipEncoder::new(profile.per_image),
            spatial: SpatialSweep::new(clip_channels, profile.sweep_width),
            temporal: TemporalSweep::new(clip_channels, GRID),
            decoder: Decoder::new(profile.sweep_width + GRID, profile.sweep_width),
        }
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(DataNet::new(
            cfg.get_usize("datanet.clip_len")?,
            Profile::from_config(cfg)?,
        ))
    }

    /// Total channels of the clip encoding: (T+1) images x per-image.
    pub fn clip_channels(&self) -> usize {
        (self.clip_len + 1) * self.profile.per_image
    }

    /// Channels of the combined sweep features.
    pub fn combined_channels(&self) -> usize {
        self.profile.sweep_width + GRID
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.encoder.init_params(store, rng);
        self.spatial.init_params(store, rng);
        self.temporal.init_params(store, rng);
        self.decoder.init_params(store, rng);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.encoder.param_names();
        names.extend(self.spatial.param_names());
        names.extend(self.temporal.param_names());
        names.extend(self.decoder.param_names());
        names
    }

    /// Encode a clip: per image, two-tap residual features at 19x19; visible
    /// and thermal summed per pair; template then frames concatenated along
    /// channels.
    pub fn encode_clip_graph(&self, g: &mut Graph, clip: &ClipInput) -> Result<Var> {
        if clip.frames.len() != self.clip_len {
            return Err(Error::invalid(format!(
                "clip has {} frames, network configured for {}",
                clip.frames.len(),
                self.clip_len
            )));
        }
        let mut parts = Vec::with_capacity(self.clip_len + 1);
        for pair in std::iter::once(&clip.template).chain(clip.frames.iter()) {
            let xv = g.input(pair.visible.data.clone().into_dyn());
            let xt = g.input(pair.thermal.data.clone().into_dyn());
            let fv = self.encoder.encode_image(g, xv);
            let ft = self.encoder.encode_image(g, xt);
            parts.push(g.add(fv, ft));
        }
        Ok(g.concat(&parts, 0))
    }

    pub fn encode_clip(&self, store: &ParamStore, clip: &ClipInput) -> Result<FeatureMap> {
        let mut g = Graph::new(store);
        let out = self.encode_clip_graph(&mut g, clip)?;
        Ok(FeatureMap::new(
            g.value(out).clone().into_dimensionality().unwrap(),
        ))
    }

    /// Run both sweeps and concatenate: `(spatial, temporal, combined)`.
    pub fn sweep_graph(&self, g: &mut Graph, clip_features: Var) -> Result<(Var, Var, Var)> {
        let projected = self.spatial.project(g, clip_features);
        let spatial = self.spatial.forward(g, projected)?;
        let temporal = self.temporal.forward(g, clip_features)?;
        let combined = g.concat(&[spatial, temporal], 0);
        Ok((spatial, temporal, combined))
    }

    pub fn sweep(&self, store: &ParamStore, clip_features: &FeatureMap) -> Result<SweepFeatures> {
        let mut g = Graph::new(store);
        let x = g.input(clip_features.data.clone().into_dyn());
        let (s, t, c) = self.sweep_graph(&mut g, x)?;
        Ok(SweepFeatures {
            spatial: FeatureMap::new(g.value(s).clone().into_dimensionality().unwrap()),
            temporal: FeatureMap::new(g.value(t).clone().into_dimensionality().unwrap()),
            combined: FeatureMap::new(g.value(c).clone().into_dimensionality().unwrap()),
        })
    }

    /// Decode combined sweep features to the attention map node (1 x 300 x 300).
    pub fn decode_attention_graph(&self, g: &mut Graph, combined: Var) -> Result<Var> {
        let c = g.shape(combined)[0];
        if c != self.combined_channels() {
            return Err(Error::shape(format!(
                "decoder expects {} channels, got {c}",
                self.combined_channels()
            )));
        }
        Ok(self.decoder.forward(g, combined))
    }

    pub fn decode_attention(&self, store: &ParamStore, combined: &FeatureMap) -> Result<AttentionMap> {
        let mut g = Graph::new(store);
        let x = g.input(combined.data.clone().into_dyn());
        let out = self.decode_attention_graph(&mut g, x)?;
        let map3: ndarray::Array3<f64> = g.value(out).clone().into_dimensionality().unwrap();
        AttentionMap::new(map3.index_axis(ndarray::Axis(0), 0).to_owned())
    }

    /// Full pipeline to the attention node.
    pub fn forward_graph(&self, g: &mut Graph, clip: &ClipInput) -> Result<Var> {
        let feat = self.encode_clip_graph(g, clip)?;
        let (_, _, combined) = self.sweep_graph(g, feat)?;
        self.decode_attention_graph(g, combined)
    }

    pub fn predict_attention(&self, store: &ParamStore, clip: &ClipInput) -> Result<AttentionMap> {
        let mut g = Graph::new(store);
        let out = self.forward_graph(&mut g, clip)?;
        let map3: ndarray::Array3<f64> = g.value(out).clone().into_dimensionality().unwrap();
        AttentionMap::new(map3.index_axis(ndarray::Axis(0), 0).to_owned())
    }

    /// One training step: pixelwise BCE between the decoded attention and a
    /// binary mask (white target region on black background).
    pub fn attention_training_step(
        &self,
        store: &mut ParamStore,
        opt: &mut Adagrad,
        clip: &ClipInput,
        gt_mask: &Array2<f64>,
    ) -> Result<f64> {
        if gt_mask.dim() != (ATT_SIZE, ATT_SIZE) {
            return Err(Error::shape(format!(
                "mask must be {ATT_SIZE}x{ATT_SIZE}, got {:?}",
                gt_mask.dim()
            )));
        }
        let target = gt_mask
            .clone()
            .into_shape((1, ATT_SIZE, ATT_SIZE))
            .unwrap()
            .into_dyn();
        let (loss_val, grads) = {
            let mut g = Graph::new(store);
            let att = self.forward_graph(&mut g, clip)?;
            let loss = g.bce_loss(att, &target);
            (g.scalar(loss), g.backward(loss))
        };
        opt.step(store, &grads);
        Ok(loss_val)
    }
}

/// Pixelwise binary cross-entropy between an attention map and a mask, the
/// training criterion in value form.
pub fn attention_bce(att: &AttentionMap, mask: &Array2<f64>) -> Result<f64> {
    if att.data.dim() != mask.dim() {
        return Err(Error::shape(format!(
            "attention {:?} vs mask {:?}",
            att.data.dim(),
            mask.dim()
        )));
    }
    let eps = 1e-12;
    let mut loss = 0.0;
    ndarray::Zip::from(&att.data).and(mask).for_each(|&p, &t| {
        loss -= t * (p + eps).ln() + (1.0 - t) * (1.0 - p + eps).ln();
    });
    Ok(loss / att.data.len() as f64)
}

/// Result of global proposal mining.
#[derive(Clone, Debug)]
pub struct GlobalProposals {
    pub boxes: Vec<BoundingBox>,
    /// True when the attention map was degenerate (flat) and a uniform grid
    /// was used instead of peaks.
    pub grid_fallback: bool,
}

/// Mine `k` proposals from the attention peaks. Peaks are greedily selected
/// in descending value (ties broken by raster order) with suppression radius
/// `nms_radius` in map pixels; proposals cycle through the peaks, sized by
/// the prior box with up to `scale_jitter` relative size jitter (the first
/// pass over the peaks is un-jittered). A flat map falls back to a uniform
/// grid, flagged in the result.
pub fn sample_global_proposals(
    att: &AttentionMap,
    k: usize,
    prior: &BoundingBox,
    frame_w: usize,
    frame_h: usize,
    nms_radius: f64,
    scale_jitter: f64,
    rng: &mut impl Rng,
) -> Result<GlobalProposals> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let (mh, mw) = att.data.dim();
    let min = att.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = att.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    if max - min < 1e-12 {
        // Degenerate map: uniform grid of prior-sized boxes.
        let side = (k as f64).sqrt().ceil() as usize;
        let mut boxes = Vec::with_capacity(k);
        'outer: for gy in 0..side {
            for gx in 0..side {
                if boxes.len() == k {
                    break 'outer;
                }
                let cx = (gx as f64 + 0.5) * frame_w as f64 / side as f64;
                let cy = (gy as f64 + 0.5) * frame_h as f64 / side as f64;
                boxes.push(
                    BoundingBox::from_center(cx, cy, prior.w, prior.h).clip_to(frame_w, frame_h),
                );
            }
        }
        return Ok(GlobalProposals {
            boxes,
            grid_fallback: true,
        });
    }

    // Stable descending sort; raster order breaks ties.
    let mut order: Vec<usize> = (0..mh * mw).collect();
    order.sort_by(|&a, &b| {
        let va = att.data[[a / mw, a % mw]];
        let vb = att.data[[b / mw, b % mw]];
        vb.partial_cmp(&va).unwrap().then(a.cmp(&b))
    });

    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for idx in order {
        if peaks.len() == k {
            break;
        }
        let (py, px) = ((idx / mw) as f64, (idx % mw) as f64);
        if peaks
            .iter()
            .all(|&(qy, qx)| ((py - qy).powi(2) + (px - qx).powi(2)).sqrt() > nms_radius)
        {
            peaks.push((py, px));
        }
    }

    let sx = frame_w as f64 / mw as f64;
    let sy = frame_h as f64 / mh as f64;
    let mut boxes = Vec::with_capacity(k);
    for i in 0..k {
        let (py, px) = peaks[i % peaks.len()];
        let scale = if i < peaks.len() {
            1.0
        } else {
            1.0 + rng.gen_range(-scale_jitter..=scale_jitter)
        };
        let cx = (px + 0.5) * sx;
        let cy = (py + 0.5) * sy;
        boxes.push(
            BoundingBox::from_center(cx, cy, prior.w * scale, prior.h * scale)
                .clip_to(frame_w, frame_h),
        );
    }
    Ok(GlobalProposals {
        boxes,
        grid_fallback: false,
    })
}

#[cfg(test)]
mod tests;
