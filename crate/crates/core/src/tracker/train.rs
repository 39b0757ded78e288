//! Offline multi-domain training: shared feature path and hidden layers with
//! one binary output branch per training video, optimized on the combined
//! loss `cls + 0.1 * inst` with hard negative mining.

use super::{
    draw_labeled, hardest_negatives, instance_features_graph, ClassifierHead, FeatureExtractor,
    GaussianSpread, TrackerModel,
};
use crate::graph::Graph;
use crate::harness::SequenceRecord;
use crate::nn::{ParamStore, Sgd};
use crate::{Config, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OfflineReport {
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Train on a set of sequences (one domain per sequence) and return a model
/// ready for tracking (the tracking head is branch 0, re-finetuned per
/// sequence anyway).
pub fn offline_train(
    cfg: &Config,
    domains: &[SequenceRecord],
    steps: usize,
) -> Result<(TrackerModel, OfflineReport)> {
    if domains.len() < 2 {
        log::warn!("offline training with {} domain(s); instance loss is degenerate", domains.len());
    }
    if domains.is_empty() {
        return Err(Error::invalid("offline training needs at least one sequence"));
    }
    let features = FeatureExtractor::from_config(cfg)?;
    let bins = cfg.get_usize("tracker.roi_bins")?;
    let head = ClassifierHead::new(
        bins * bins * features.fused_channels(),
        cfg.get_usize("tracker.head_hidden")?,
        domains.len(),
    );
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.get_u64("seed")? ^ 0x0ff1ce);
    features.init_params(&mut store, &mut rng);
    head.init_params(&mut store, &mut rng);

    let spread = GaussianSpread {
        sigma_xy: cfg.get_f64("tracker.sigma_xy")?,
        sigma_scale: cfg.get_f64("tracker.sigma_scale")?,
    };
    let pos_iou = cfg.get_f64("tracker.pos_iou")?;
    let neg_iou = cfg.get_f64("tracker.neg_iou")?;
    let n_pos = cfg.get_usize("tracker.pos_per_frame")?;
    let n_neg = cfg.get_usize("tracker.neg_per_frame")?;
    let mut opt = Sgd::new(
        cfg.get_f64("train.tracker_lr")?,
        cfg.get_f64("tracker.momentum")?,
        cfg.get_f64("tracker.weight_decay")?,
    );

    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for step in 0..steps {
        let d = step % domains.len();
        let seq = &domains[d];
        let fi = rng.gen_range(0..seq.len());
        let pair = &seq.frames[fi];
        let gt = &seq.gt[fi];
        let (w, h) = (seq.width(), seq.height());

        let labeled = draw_labeled(gt, n_pos, n_neg * 2, &spread, pos_iou, neg_iou, w, h, &mut rng)?;

        let mut g = Graph::new(&store);
        let fused = features.forward(&mut g, pair)?;

        // Hard negatives by current score, using a value pass on the pooled
        // candidates before the differentiable pass.
        let cand_feats = {
            let f = instance_features_graph(&mut g, fused, &labeled.negatives, w, h, bins)?;
            g.value(f).clone().into_dimensionality::<ndarray::Ix2>().unwrap()
        };
        let cand_scores = head.scores(&store, &cand_feats, d);
        let hard = hardest_negatives(&cand_scores, n_neg.min(labeled.negatives.len()));
        let negs: Vec<_> = hard.iter().map(|&i| labeled.negatives[i]).collect();

        let mut boxes = labeled.positives.clone();
        let split = boxes.len();
        boxes.extend(negs);
        let feats = instance_features_graph(&mut g, fused, &boxes, w, h, bins)?;
        let labels: Vec<usize> = (0..boxes.len()).map(|i| usize::from(i < split)).collect();

        let logits = head.forward_graph(&mut g, feats, d);
        let cls = g.softmax_cross_entropy(logits, &labels);

        // Instance embedding over the positive rows only.
        let pos_rows: Vec<_> = (0..split).collect();
        let loss = if domains.len() > 1 && split > 0 {
            let mut pos_feats = Vec::with_capacity(split);
            for &r in &pos_rows {
                pos_feats.push(g.index_axis(feats, 0, r));
            }
            let pos_mat = g.stack(&pos_feats, 0);
            let fg_all = head.all_domain_fg_graph(&mut g, pos_mat);
            let inst = g.softmax_cross_entropy(fg_all, &vec![d; split]);
            let inst_scaled = g.mul_scalar(inst, super::ALPHA);
            g.add(cls, inst_scaled)
        } else {
            cls
        };

        let loss_val = g.scalar(loss);
        if step == 0 {
            first_loss = loss_val;
        }
        last_loss = loss_val;
        let grads = g.backward(loss);
        drop(g);
        opt.step(&mut store, &grads);
    }

    let model = TrackerModel {
        head: ClassifierHead::new(
            bins * bins * features.fused_channels(),
            cfg.get_usize("tracker.head_hidden")?,
            domains.len().max(1),
        ),
        features,
        store,
    };
    Ok((
        model,
        OfflineReport {
            steps,
            first_loss,
            last_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate_sequence, SyntheticSpec};

    #[test]
    fn offline_training_runs_and_descends() {
        let mut cfg = Config::default();
        cfg.set("backbone.channels", "16").unwrap();
        cfg.set("tracker.pos_per_frame", "8").unwrap();
        cfg.set("tracker.neg_per_frame", "16").unwrap();
        cfg.set("train.tracker_lr", "0.0005").unwrap();

        let spec = SyntheticSpec::easy(48, 6);
        let seqs: Vec<SequenceRecord> = (0..2)
            .map(|s| generate_sequence(&spec, s as u64 + 1).unwrap())
            .collect();
        let (model, report) = offline_train(&cfg, &seqs, 20).unwrap();
        assert!(report.first_loss.is_finite() && report.last_loss.is_finite());
        assert!(
            report.last_loss < report.first_loss,
            "offline loss should drop: {} -> {}",
            report.first_loss,
            report.last_loss
        );
        assert!(model.store.contains("head.out.d1.w"));
    }
}
