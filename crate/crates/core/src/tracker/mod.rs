//! Tracking-by-detection engine.
//!
//! Per frame: draw proposals (Gaussian around the last box, or mined from the
//! global attention map once local search has failed for `N` consecutive
//! frames), pool RoI-aligned instance features from the fused dual-modality
//! map, score them with the online classifier, and take the argmax. Frames
//! scoring above zero refine the box with the first-frame regressor, collect
//! labeled samples into the short/long-term stores, and reset the failure
//! streak; failures trigger a short-term update, and a scheduled long-term
//! update fires every `update_interval` frames.

mod classifier;
mod features;
mod regress;
mod roi;
mod sampling;
pub mod train;

pub use classifier::{
    hardest_negatives, loss_cls, loss_inst, loss_total, ClassifierHead, LossBreakdown, ALPHA,
};
pub use features::FeatureExtractor;
pub use regress::BoxRegressor;
pub use roi::{instance_features_graph, project_boxes, roi_instance_features};
pub use sampling::{draw_labeled, label_samples, sample_gaussian, GaussianSpread, LabeledSamples};

use crate::backbone::{FramePair, ImageTensor};
use crate::datanet::{sample_global_proposals, ClipInput, DataNet, ATT_SIZE};
use crate::geom::BoundingBox;
use crate::graph::Graph;
use crate::imgutil::resize_bilinear;
use crate::nn::{ParamStore, Sgd};
use crate::{Config, Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

/// Where a proposal came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalSource {
    Local,
    Global,
}

#[derive(Clone, Debug)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub score: f64,
    pub source: ProposalSource,
}

/// Search/update schedule: pure decisions, kept separate from the heavy
/// tracking path so scripted traces can verify the semantics.
#[derive(Clone, Copy, Debug)]
pub struct SwitchPolicy {
    pub failure_threshold: usize,
    pub update_interval: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    ShortTerm,
    Scheduled,
}

impl SwitchPolicy {
    /// Global search is used on a frame iff the failure streak entering it
    /// has reached the threshold.
    pub fn use_global(&self, failure_streak: usize) -> bool {
        failure_streak >= self.failure_threshold
    }

    /// After scoring: failures refresh from the short-term store; otherwise
    /// the scheduled update fires on every `update_interval`-th frame.
    pub fn update_after(&self, frame_index: usize, success: bool) -> Option<UpdateKind> {
        if !success {
            Some(UpdateKind::ShortTerm)
        } else if frame_index % self.update_interval == 0 {
            Some(UpdateKind::Scheduled)
        } else {
            None
        }
    }
}

/// Per-frame bundle of instance features kept for online updates.
#[derive(Clone)]
pub struct FrameSamples {
    pub pos: Array2<f64>,
    pub neg: Array2<f64>,
}

/// Bounded FIFO of per-frame samples; eviction drops the oldest frame.
pub struct SampleStore {
    frames: VecDeque<FrameSamples>,
    cap_frames: usize,
}

impl SampleStore {
    pub fn new(cap_frames: usize) -> Self {
        SampleStore {
            frames: VecDeque::new(),
            cap_frames,
        }
    }

    pub fn push(&mut self, s: FrameSamples) {
        self.frames.push_back(s);
        while self.frames.len() > self.cap_frames {
            self.frames.pop_front();
        }
    }

    pub fn len_frames(&self) -> usize {
        self.frames.len()
    }

    /// Newest first.
    pub fn iter_newest_first(&self) -> impl Iterator<Item = &FrameSamples> {
        self.frames.iter().rev()
    }

    pub fn total_pos(&self) -> usize {
        self.frames.iter().map(|f| f.pos.nrows()).sum()
    }

    pub fn total_neg(&self) -> usize {
        self.frames.iter().map(|f| f.neg.nrows()).sum()
    }

    fn gather(&self, positives: bool, idx: &[usize]) -> Array2<f64> {
        let dim = self
            .frames
            .front()
            .map(|f| if positives { f.pos.ncols() } else { f.neg.ncols() })
            .unwrap_or(0);
        let mut out = Array2::zeros((idx.len(), dim));
        for (row, &flat) in idx.iter().enumerate() {
            let mut remaining = flat;
            for f in &self.frames {
                let m = if positives { &f.pos } else { &f.neg };
                if remaining < m.nrows() {
                    out.row_mut(row).assign(&m.row(remaining));
                    break;
                }
                remaining -= m.nrows();
            }
        }
        out
    }

    /// Random rows across all stored frames (with replacement when short).
    pub fn sample_rows(&self, positives: bool, n: usize, rng: &mut impl Rng) -> Array2<f64> {
        let total = if positives { self.total_pos() } else { self.total_neg() };
        assert!(total > 0, "sampling from empty store");
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..total)).collect();
        self.gather(positives, &idx)
    }
}

/// Tunables parsed once from the flat config.
#[derive(Clone, Debug)]
pub struct TrackerConfig {
    pub local_proposals: usize,
    pub global_proposals: usize,
    pub sigma_xy: f64,
    pub sigma_scale: f64,
    pub track_sigma_scale: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub pos_per_frame: usize,
    pub neg_per_frame: usize,
    pub hard_pool: usize,
    pub roi_bins: usize,
    pub head_hidden: usize,
    pub init_pos: usize,
    pub init_neg: usize,
    pub init_iters: usize,
    pub update_iters: usize,
    pub lr: f64,
    pub init_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub short_term_frames: usize,
    pub long_term_frames: usize,
    pub store_pos: usize,
    pub store_neg: usize,
    pub failure_threshold: usize,
    pub update_interval: usize,
    pub global_search: bool,
    pub nms_radius: f64,
    pub scale_jitter: f64,
    pub seed: u64,
}

impl TrackerConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(TrackerConfig {
            local_proposals: cfg.get_usize("tracker.local_proposals")?,
            global_proposals: cfg.get_usize("tracker.global_proposals")?,
            sigma_xy: cfg.get_f64("tracker.sigma_xy")?,
            sigma_scale: cfg.get_f64("tracker.sigma_scale")?,
            track_sigma_scale: cfg.get_f64("tracker.track_sigma_scale")?,
            pos_iou: cfg.get_f64("tracker.pos_iou")?,
            neg_iou: cfg.get_f64("tracker.neg_iou")?,
            pos_per_frame: cfg.get_usize("tracker.pos_per_frame")?,
            neg_per_frame: cfg.get_usize("tracker.neg_per_frame")?,
            hard_pool: cfg.get_usize("tracker.hard_pool")?,
            roi_bins: cfg.get_usize("tracker.roi_bins")?,
            head_hidden: cfg.get_usize("tracker.head_hidden")?,
            init_pos: cfg.get_usize("tracker.init_pos")?,
            init_neg: cfg.get_usize("tracker.init_neg")?,
            init_iters: cfg.get_usize("tracker.init_iters")?,
            update_iters: cfg.get_usize("tracker.update_iters")?,
            lr: cfg.get_f64("tracker.lr")?,
            init_lr: cfg.get_f64("tracker.init_lr")?,
            momentum: cfg.get_f64("tracker.momentum")?,
            weight_decay: cfg.get_f64("tracker.weight_decay")?,
            short_term_frames: cfg.get_usize("tracker.short_term_frames")?,
            long_term_frames: cfg.get_usize("tracker.long_term_frames")?,
            store_pos: cfg.get_usize("tracker.store_pos")?,
            store_neg: cfg.get_usize("tracker.store_neg")?,
            failure_threshold: cfg.get_usize("tracker.failure_threshold")?,
            update_interval: cfg.get_usize("tracker.update_interval")?,
            global_search: cfg.get_bool("tracker.global_search")?,
            nms_radius: cfg.get_f64("datanet.nms_radius")?,
            scale_jitter: cfg.get_f64("datanet.scale_jitter")?,
            seed: cfg.get_u64("seed")?,
        })
    }
}

/// The trainable model shared across sequences: feature path plus classifier
/// head (one binary output branch for tracking).
pub struct TrackerModel {
    pub features: FeatureExtractor,
    pub head: ClassifierHead,
    pub store: ParamStore,
}

impl TrackerModel {
    /// Randomly initialized model from config.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let features = FeatureExtractor::from_config(cfg)?;
        let head = ClassifierHead::new(
            cfg.get_usize("tracker.roi_bins")?.pow(2) * features.fused_channels(),
            cfg.get_usize("tracker.head_hidden")?,
            1,
        );
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.get_u64("seed")?);
        features.init_params(&mut store, &mut rng);
        head.init_params(&mut store, &mut rng);
        Ok(TrackerModel {
            features,
            head,
            store,
        })
    }
}

/// Mutable per-sequence tracking state.
pub struct TrackerState {
    pub current_box: BoundingBox,
    pub frame_index: usize,
    pub failure_streak: usize,
    pub short_term: SampleStore,
    pub long_term: SampleStore,
    history: VecDeque<FramePair>,
    template: FramePair,
}

impl TrackerState {
    /// Streak bookkeeping: any frame with a positive max score resets it.
    pub fn register_score(&mut self, score: f64) {
        if score > 0.0 {
            self.failure_streak = 0;
        } else {
            self.failure_streak += 1;
        }
    }
}

/// Outcome of one tracked frame.
#[derive(Clone, Debug)]
pub struct TrackOutcome {
    pub bbox: BoundingBox,
    pub score: f64,
    pub used_global: bool,
    pub update_fired: Option<UpdateKind>,
    pub grid_fallback: bool,
}

/// Attention network plus its trained weights, used for global re-detection.
pub struct GlobalSearcher {
    pub net: DataNet,
    pub store: ParamStore,
}

pub struct Tracker {
    pub model: TrackerModel,
    pub tcfg: TrackerConfig,
    pub policy: SwitchPolicy,
    pub state: TrackerState,
    pub regressor: BoxRegressor,
    pub global: Option<GlobalSearcher>,
    frame_w: usize,
    frame_h: usize,
    opt: Sgd,
    rng: ChaCha8Rng,
}

fn resize_pair(pair: &FramePair, size: usize) -> FramePair {
    let v = resize_bilinear(&pair.visible.data, size, size).mapv(|x| x.clamp(0.0, 1.0));
    let t = resize_bilinear(&pair.thermal.data, size, size).mapv(|x| x.clamp(0.0, 1.0));
    FramePair {
        visible: ImageTensor {
            data: v,
            modality: pair.visible.modality,
        },
        thermal: ImageTensor {
            data: t,
            modality: pair.thermal.modality,
        },
    }
}

fn crop_pair(pair: &FramePair, b: &BoundingBox, size: usize) -> FramePair {
    let v = crate::imgutil::crop_box(&pair.visible.data, b);
    let t = crate::imgutil::crop_box(&pair.thermal.data, b);
    FramePair {
        visible: ImageTensor {
            data: resize_bilinear(&v, size, size).mapv(|x| x.clamp(0.0, 1.0)),
            modality: pair.visible.modality,
        },
        thermal: ImageTensor {
            data: resize_bilinear(&t, size, size).mapv(|x| x.clamp(0.0, 1.0)),
            modality: pair.thermal.modality,
        },
    }
}

impl Tracker {
    /// First-frame initialization: finetune a fresh binary head on samples
    /// around the ground truth, fit the box regressor, fill the stores, and
    /// cut the 300x300 template for global search.
    pub fn init(
        model: TrackerModel,
        tcfg: TrackerConfig,
        global: Option<GlobalSearcher>,
        first: &FramePair,
        gt: &BoundingBox,
    ) -> Result<Self> {
        let (w, h) = (first.width(), first.height());
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x7261636b);
        let mut model = model;
        model.head.reset_output(&mut model.store, &mut rng, 0);

        let fused = model.features.fused(&model.store, first)?;
        let spread = GaussianSpread {
            sigma_xy: tcfg.sigma_xy,
            sigma_scale: tcfg.sigma_scale,
        };
        let samples = draw_labeled(
            gt,
            tcfg.init_pos,
            tcfg.init_neg,
            &spread,
            tcfg.pos_iou,
            tcfg.neg_iou,
            w,
            h,
            &mut rng,
        )?;
        let pos_feats =
            roi_instance_features(&fused, &samples.positives, w, h, tcfg.roi_bins)?;
        let neg_feats =
            roi_instance_features(&fused, &samples.negatives, w, h, tcfg.roi_bins)?;

        let mut opt = Sgd::new(tcfg.init_lr, tcfg.momentum, tcfg.weight_decay);
        let head_names: Vec<String> = model.head.param_names();
        finetune_head(
            &model.head,
            &mut model.store,
            &mut opt,
            &pos_feats,
            &neg_feats,
            tcfg.init_iters,
            tcfg.pos_per_frame,
            tcfg.neg_per_frame,
            tcfg.hard_pool,
            &mut rng,
        );
        let _ = head_names;

        // Box regressor on looser positives (anything overlapping >= 0.6).
        let reg_spread = GaussianSpread {
            sigma_xy: tcfg.sigma_xy,
            sigma_scale: tcfg.sigma_scale * 0.5,
        };
        let reg_candidates = sample_gaussian(gt, 256, &reg_spread, w, h, &mut rng)?;
        let reg_boxes: Vec<BoundingBox> = reg_candidates
            .into_iter()
            .filter(|b| b.iou(gt) >= 0.6)
            .collect();
        let mut regressor = BoxRegressor::default();
        if reg_boxes.len() >= 8 {
            let reg_feats = roi_instance_features(&fused, &reg_boxes, w, h, tcfg.roi_bins)?;
            regressor.train(&reg_feats, &reg_boxes, gt);
        } else {
            log::warn!("too few regressor samples ({}); refinement disabled", reg_boxes.len());
        }

        let mut short_term = SampleStore::new(tcfg.short_term_frames);
        let mut long_term = SampleStore::new(tcfg.long_term_frames);
        let init_frame = FrameSamples {
            pos: pos_feats,
            neg: neg_feats,
        };
        short_term.push(init_frame.clone());
        long_term.push(init_frame);

        let template = crop_pair(first, gt, ATT_SIZE);
        let mut history = VecDeque::new();
        history.push_back(first.clone());

        let lr = tcfg.lr;
        let momentum = tcfg.momentum;
        let weight_decay = tcfg.weight_decay;
        Ok(Tracker {
            policy: SwitchPolicy {
                failure_threshold: tcfg.failure_threshold,
                update_interval: tcfg.update_interval,
            },
            state: TrackerState {
                current_box: *gt,
                frame_index: 0,
                failure_streak: 0,
                short_term,
                long_term,
                history,
                template,
            },
            regressor,
            global,
            frame_w: w,
            frame_h: h,
            opt: Sgd::new(lr, momentum, weight_decay),
            rng,
            model,
            tcfg,
        })
    }

    fn local_proposals(&mut self, rng_spread: f64) -> Result<Vec<BoundingBox>> {
        let spread = GaussianSpread {
            sigma_xy: self.tcfg.sigma_xy,
            sigma_scale: rng_spread,
        };
        sample_gaussian(
            &self.state.current_box,
            self.tcfg.local_proposals,
            &spread,
            self.frame_w,
            self.frame_h,
            &mut self.rng,
        )
    }

    fn global_proposals(&mut self, pair: &FramePair) -> Result<(Vec<BoundingBox>, bool)> {
        let searcher = self.global.as_ref().expect("global search unavailable");
        let clip_len = searcher.net.clip_len;
        let mut frames: Vec<FramePair> = Vec::with_capacity(clip_len);
        let mut source: Vec<&FramePair> = self.state.history.iter().collect();
        source.push(pair);
        while source.len() < clip_len {
            source.insert(0, source[0]);
        }
        for p in source.iter().skip(source.len() - clip_len) {
            frames.push(resize_pair(p, ATT_SIZE));
        }
        let clip = ClipInput::new(frames, self.state.template.clone())?;
        let att = searcher.net.predict_attention(&searcher.store, &clip)?;
        let props = sample_global_proposals(
            &att,
            self.tcfg.global_proposals,
            &self.state.current_box,
            self.frame_w,
            self.frame_h,
            self.tcfg.nms_radius,
            self.tcfg.scale_jitter,
            &mut self.rng,
        )?;
        Ok((props.boxes, props.grid_fallback))
    }

    /// Track one frame. Always returns a box: the argmax proposal (refined)
    /// on success, the previous box on failure.
    pub fn track_frame(&mut self, pair: &FramePair) -> Result<TrackOutcome> {
        if pair.width() != self.frame_w || pair.height() != self.frame_h {
            return Err(Error::shape("frame size changed mid-sequence"));
        }
        self.state.frame_index += 1;

        let use_global = self.tcfg.global_search
            && self.global.is_some()
            && self.policy.use_global(self.state.failure_streak);
        let (boxes, grid_fallback, source) = if use_global {
            let (b, fb) = self.global_proposals(pair)?;
            (b, fb, ProposalSource::Global)
        } else {
            (
                self.local_proposals(self.tcfg.track_sigma_scale)?,
                false,
                ProposalSource::Local,
            )
        };

        let fused = self.model.features.fused(&self.model.store, pair)?;
        let feats = roi_instance_features(
            &fused,
            &boxes,
            self.frame_w,
            self.frame_h,
            self.tcfg.roi_bins,
        )?;
        let scores = self.model.head.scores(&self.model.store, &feats, 0);

        // Eq.-1 selection: plain argmax over proposal scores.
        let (best_idx, best_score) = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, s)| (i, *s))
            .unwrap();
        let success = best_score > 0.0;

        let _proposals: Vec<Proposal> = Vec::new();
        if success {
            let raw = boxes[best_idx];
            let refined = self
                .regressor
                .refine(feats.row(best_idx), &raw, self.frame_w, self.frame_h);
            self.state.current_box = refined;
            self.collect_samples(&fused)?;
        }
        self.state.register_score(best_score);

        let update = self.policy.update_after(self.state.frame_index, success);
        if let Some(kind) = update {
            self.online_update(kind);
        }

        self.state.history.push_back(pair.clone());
        let keep = self.global.as_ref().map(|g| g.net.clip_len).unwrap_or(1);
        while self.state.history.len() > keep {
            self.state.history.pop_front();
        }
        let _ = source;

        Ok(TrackOutcome {
            bbox: self.state.current_box,
            score: best_score,
            used_global: use_global,
            update_fired: update,
            grid_fallback,
        })
    }

    /// Gather labeled instance features around the (freshly updated) box.
    fn collect_samples(&mut self, fused: &crate::backbone::FeatureMap) -> Result<()> {
        let spread = GaussianSpread {
            sigma_xy: self.tcfg.sigma_xy,
            sigma_scale: self.tcfg.sigma_scale,
        };
        let labeled = draw_labeled(
            &self.state.current_box,
            self.tcfg.store_pos,
            self.tcfg.store_neg,
            &spread,
            self.tcfg.pos_iou,
            self.tcfg.neg_iou,
            self.frame_w,
            self.frame_h,
            &mut self.rng,
        )?;
        let pos = roi_instance_features(
            fused,
            &labeled.positives,
            self.frame_w,
            self.frame_h,
            self.tcfg.roi_bins,
        )?;
        let neg = roi_instance_features(
            fused,
            &labeled.negatives,
            self.frame_w,
            self.frame_h,
            self.tcfg.roi_bins,
        )?;
        let frame = FrameSamples { pos, neg };
        self.state.short_term.push(frame.clone());
        self.state.long_term.push(frame);
        Ok(())
    }

    /// Several SGD steps on the classification loss over stored samples,
    /// mining the hardest negatives per step.
    pub fn online_update(&mut self, kind: UpdateKind) {
        let store_ref = match kind {
            UpdateKind::ShortTerm => &self.state.short_term,
            UpdateKind::Scheduled => &self.state.long_term,
        };
        if store_ref.total_pos() == 0 || store_ref.total_neg() == 0 {
            log::warn!("online update skipped: empty sample store");
            return;
        }
        for _ in 0..self.tcfg.update_iters {
            let store_ref = match kind {
                UpdateKind::ShortTerm => &self.state.short_term,
                UpdateKind::Scheduled => &self.state.long_term,
            };
            let pos = store_ref.sample_rows(true, self.tcfg.pos_per_frame, &mut self.rng);
            let pool_n = self.tcfg.hard_pool.min(store_ref.total_neg());
            let pool = store_ref.sample_rows(false, pool_n, &mut self.rng);
            let pool_scores = self.model.head.scores(&self.model.store, &pool, 0);
            let hard = hardest_negatives(&pool_scores, self.tcfg.neg_per_frame.min(pool_n));
            let mut neg = Array2::zeros((hard.len(), pool.ncols()));
            for (r, &i) in hard.iter().enumerate() {
                neg.row_mut(r).assign(&pool.row(i));
            }

            let n_pos = pos.nrows();
            let batch = ndarray::concatenate(ndarray::Axis(0), &[pos.view(), neg.view()]).unwrap();
            let labels: Vec<usize> = (0..batch.nrows()).map(|i| usize::from(i < n_pos)).collect();

            let grads = {
                let mut g = Graph::new(&self.model.store);
                let x = g.input(batch.into_dyn());
                let logits = self.model.head.forward_graph(&mut g, x, 0);
                let loss = g.softmax_cross_entropy(logits, &labels);
                g.backward(loss)
            };
            self.opt.step(&mut self.model.store, &grads);
        }
    }
}

/// First-frame head training with hard negative mining per step.
#[allow(clippy::too_many_arguments)]
fn finetune_head(
    head: &ClassifierHead,
    store: &mut ParamStore,
    opt: &mut Sgd,
    pos_feats: &Array2<f64>,
    neg_feats: &Array2<f64>,
    iters: usize,
    pos_batch: usize,
    neg_batch: usize,
    hard_pool: usize,
    rng: &mut impl Rng,
) {
    let n_pos_all = pos_feats.nrows();
    let n_neg_all = neg_feats.nrows();
    for _ in 0..iters {
        let pos_idx: Vec<usize> = (0..pos_batch.min(n_pos_all))
            .map(|_| rng.gen_range(0..n_pos_all))
            .collect();
        let pool_idx: Vec<usize> = (0..hard_pool.min(n_neg_all))
            .map(|_| rng.gen_range(0..n_neg_all))
            .collect();
        let mut pool = Array2::zeros((pool_idx.len(), neg_feats.ncols()));
        for (r, &i) in pool_idx.iter().enumerate() {
            pool.row_mut(r).assign(&neg_feats.row(i));
        }
        let pool_scores = head.scores(store, &pool, 0);
        let hard = hardest_negatives(&pool_scores, neg_batch.min(pool_idx.len()));

        let mut batch = Array2::zeros((pos_idx.len() + hard.len(), pos_feats.ncols()));
        for (r, &i) in pos_idx.iter().enumerate() {
            batch.row_mut(r).assign(&pos_feats.row(i));
        }
        for (r, &i) in hard.iter().enumerate() {
            batch.row_mut(pos_idx.len() + r).assign(&pool.row(i));
        }
        let labels: Vec<usize> = (0..batch.nrows())
            .map(|i| usize::from(i < pos_idx.len()))
            .collect();

        let grads = {
            let mut g = Graph::new(store);
            let x = g.input(batch.into_dyn());
            let logits = head.forward_graph(&mut g, x, 0);
            let loss = g.softmax_cross_entropy(logits, &labels);
            g.backward(loss)
        };
        opt.step(store, &grads);
    }
}
