//! Experiment drivers behind the CLI: tracking runs, evaluation, attention
//! and tracker training, and the ablation/kernel sweeps.

use crate::backbone::FramePair;
use crate::datanet::{AttentionMap, ClipInput, DataNet, ATT_SIZE};
use crate::geom::BoundingBox;
use crate::harness::eval::{evaluate, EvalResult};
use crate::harness::seqio;
use crate::harness::synth::{generate_sequence, SyntheticSpec};
use crate::harness::SequenceRecord;
use crate::imgutil::resize_bilinear;
use crate::nn::{Adagrad, ParamStore};
use crate::tracker::{GlobalSearcher, Tracker, TrackerConfig, TrackerModel, UpdateKind};
use crate::{Config, Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

/// Statistics of one tracking run.
#[derive(Clone, Debug, Default)]
pub struct TrackStats {
    pub frames: usize,
    pub global_frames: usize,
    pub short_updates: usize,
    pub scheduled_updates: usize,
    pub grid_fallbacks: usize,
}

/// Run the tracker over a sequence. The first output box is the given ground
/// truth (benchmark convention); tracking starts at the second frame.
pub fn track_sequence(
    cfg: &Config,
    model: TrackerModel,
    global: Option<GlobalSearcher>,
    seq: &SequenceRecord,
) -> Result<(Vec<BoundingBox>, TrackStats)> {
    let tcfg = TrackerConfig::from_config(cfg)?;
    let mut tracker = Tracker::init(model, tcfg, global, &seq.frames[0], &seq.gt[0])?;
    let mut boxes = vec![seq.gt[0]];
    let mut stats = TrackStats {
        frames: seq.len(),
        ..Default::default()
    };
    for pair in seq.frames.iter().skip(1) {
        let out = tracker.track_frame(pair)?;
        boxes.push(out.bbox);
        if out.used_global {
            stats.global_frames += 1;
        }
        if out.grid_fallback {
            stats.grid_fallbacks += 1;
        }
        match out.update_fired {
            Some(UpdateKind::ShortTerm) => stats.short_updates += 1,
            Some(UpdateKind::Scheduled) => stats.scheduled_updates += 1,
            None => {}
        }
    }
    Ok((boxes, stats))
}

/// Build a tracking model from config, optionally loading a checkpoint.
pub fn build_model(cfg: &Config, checkpoint: Option<&Path>) -> Result<TrackerModel> {
    let mut model = TrackerModel::from_config(cfg)?;
    if let Some(path) = checkpoint {
        let loaded = ParamStore::load(path)?;
        // Keep randomly initialized entries that the checkpoint lacks (e.g.
        // the tracking head when loading an offline-trained model).
        let mut merged = loaded;
        for name in model.store.names().map(str::to_string).collect::<Vec<_>>() {
            if !merged.contains(&name) {
                merged.insert(name.clone(), model.store.get(&name).unwrap().clone());
            }
        }
        model.store = merged;
    }
    Ok(model)
}

/// Load the attention network for global search, if a checkpoint is given.
pub fn build_global(cfg: &Config, checkpoint: Option<&Path>) -> Result<Option<GlobalSearcher>> {
    let Some(path) = checkpoint else {
        return Ok(None);
    };
    let net = DataNet::from_config(cfg)?;
    let store = ParamStore::load(path)?;
    Ok(Some(GlobalSearcher { net, store }))
}

/// `track`: run over a sequence directory, write one `x,y,w,h` line per frame.
pub fn run_track(
    cfg: &Config,
    seq_dir: &Path,
    out_file: &Path,
    checkpoint: Option<&Path>,
    attention_checkpoint: Option<&Path>,
    viz_dir: Option<&Path>,
) -> Result<TrackStats> {
    let seq = seqio::load_sequence(seq_dir)?;
    let model = build_model(cfg, checkpoint)?;
    let global = build_global(cfg, attention_checkpoint)?;

    if let Some(dir) = viz_dir {
        std::fs::create_dir_all(dir)?;
        let fused = model.features.fused(&model.store, &seq.frames[0])?;
        let mean = fused.data.mean_axis(ndarray::Axis(0)).unwrap();
        let max = mean.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
        seqio::save_image_gray(&mean.mapv(|v| (v / max).clamp(0.0, 1.0)), &dir.join("fused_frame1.png"))?;
    }

    let (boxes, stats) = track_sequence(cfg, model, global, &seq)?;
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    seqio::save_boxes(out_file, &boxes)?;
    Ok(stats)
}

/// `eval`: compare a result file against a ground-truth file.
pub fn run_eval(pred_file: &Path, gt_file: &Path, pr_threshold: f64) -> Result<EvalResult> {
    let pred = seqio::load_boxes(pred_file, 0, 0)?;
    let gt = seqio::load_boxes(gt_file, 0, 0)?;
    evaluate(&pred, &gt, pr_threshold)
}

/// Build the clip (last `clip_len` frames up to `i`, plus the first-frame
/// template) for attention training or inference on a sequence.
pub fn clip_from_sequence(seq: &SequenceRecord, i: usize, clip_len: usize) -> Result<ClipInput> {
    if i >= seq.len() {
        return Err(Error::invalid("clip frame out of range"));
    }
    let mut frames: Vec<FramePair> = Vec::with_capacity(clip_len);
    for k in 0..clip_len {
        let idx = i.saturating_sub(clip_len - 1 - k);
        frames.push(resize_pair_to(&seq.frames[idx], ATT_SIZE));
    }
    let template = crop_pair_to(&seq.frames[0], &seq.gt[0], ATT_SIZE);
    ClipInput::new(frames, template)
}

/// Binary target mask for frame `i`, in attention-map coordinates.
pub fn mask_for_frame(seq: &SequenceRecord, i: usize) -> Array2<f64> {
    let (w, h) = (seq.width() as f64, seq.height() as f64);
    let b = &seq.gt[i];
    let sx = ATT_SIZE as f64 / w;
    let sy = ATT_SIZE as f64 / h;
    let mut mask = Array2::zeros((ATT_SIZE, ATT_SIZE));
    let x0 = (b.x * sx).round().max(0.0) as usize;
    let y0 = (b.y * sy).round().max(0.0) as usize;
    let x1 = (((b.x + b.w) * sx).round() as usize).min(ATT_SIZE);
    let y1 = (((b.y + b.h) * sy).round() as usize).min(ATT_SIZE);
    for y in y0..y1 {
        for x in x0..x1 {
            mask[[y, x]] = 1.0;
        }
    }
    mask
}

fn resize_pair_to(pair: &FramePair, size: usize) -> FramePair {
    use crate::backbone::ImageTensor;
    FramePair {
        visible: ImageTensor {
            data: resize_bilinear(&pair.visible.data, size, size).mapv(|x| x.clamp(0.0, 1.0)),
            modality: pair.visible.modality,
        },
        thermal: ImageTensor {
            data: resize_bilinear(&pair.thermal.data, size, size).mapv(|x| x.clamp(0.0, 1.0)),
            modality: pair.thermal.modality,
        },
    }
}

fn crop_pair_to(pair: &FramePair, b: &BoundingBox, size: usize) -> FramePair {
    use crate::backbone::ImageTensor;
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

pub struct AttentionTrainReport {
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// `train-attention`: fit the attention network on synthetic clips with
/// box masks, save the checkpoint, and dump a sample attention map.
pub fn run_train_attention(
    cfg: &Config,
    steps: usize,
    out_ckpt: &Path,
    viz_dir: Option<&Path>,
) -> Result<AttentionTrainReport> {
    let net = DataNet::from_config(cfg)?;
    let seed = cfg.get_u64("seed")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e);
    let mut store = ParamStore::new();
    net.init_params(&mut store, &mut rng);
    let mut opt = Adagrad::new(cfg.get_f64("train.attention_lr")?);

    // A small pool of varied synthetic sequences.
    let canvas = 96;
    let seqs: Vec<SequenceRecord> = (0..4)
        .map(|k| {
            let mut spec = SyntheticSpec::easy(canvas, 8);
            spec.distractors = k % 2;
            spec.waypoints = vec![
                (
                    canvas as f64 * (0.25 + 0.12 * k as f64),
                    canvas as f64 * (0.3 + 0.1 * k as f64),
                ),
                (
                    canvas as f64 * (0.7 - 0.1 * k as f64),
                    canvas as f64 * (0.6 + 0.05 * k as f64),
                ),
            ];
            generate_sequence(&spec, seed + 100 + k as u64)
        })
        .collect::<Result<_>>()?;

    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for step in 0..steps {
        let seq = &seqs[rng.gen_range(0..seqs.len())];
        let i = rng.gen_range(1..seq.len());
        let clip = clip_from_sequence(seq, i, net.clip_len)?;
        let mask = mask_for_frame(seq, i);
        let loss = net.attention_training_step(&mut store, &mut opt, &clip, &mask)?;
        if step == 0 {
            first_loss = loss;
        }
        last_loss = loss;
        if step % 50 == 0 {
            log::info!("attention step {step}: loss {loss:.4}");
        }
    }

    if let Some(parent) = out_ckpt.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    store.save(out_ckpt)?;

    if let Some(dir) = viz_dir {
        std::fs::create_dir_all(dir)?;
        let clip = clip_from_sequence(&seqs[0], 1, net.clip_len)?;
        let att = net.predict_attention(&store, &clip)?;
        seqio::save_attention(&att, &dir.join("attention_sample.png"))?;
    }
    Ok(AttentionTrainReport {
        steps,
        first_loss,
        last_loss,
    })
}

/// `tracker-train`: offline multi-domain training on synthetic sequences.
pub fn run_tracker_train(cfg: &Config, out_ckpt: &Path) -> Result<crate::tracker::train::OfflineReport> {
    let seed = cfg.get_u64("seed")?;
    let n_domains = cfg.get_usize("train.domains")?;
    let steps = cfg.get_usize("train.tracker_steps")?;
    let seqs: Vec<SequenceRecord> = (0..n_domains)
        .map(|k| {
            let mut spec = SyntheticSpec::easy(96, 10);
            spec.distractors = k % 3;
            generate_sequence(&spec, seed + 500 + k as u64)
        })
        .collect::<Result<_>>()?;
    let (model, report) = crate::tracker::train::offline_train(cfg, &seqs, steps)?;
    if let Some(parent) = out_ckpt.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    model.store.save(out_ckpt)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub label: String,
    pub pr: Option<f64>,
    pub sr: Option<f64>,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub title: String,
    pub rows: Vec<SweepRow>,
}

impl std::fmt::Display for SweepTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}", self.title)?;
        writeln!(f, "{:<28} {:>8} {:>8}  note", "setting", "PR@20", "SR-AUC")?;
        for r in &self.rows {
            let pr = r.pr.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            let sr = r.sr.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:<28} {:>8} {:>8}  {}", r.label, pr, sr, r.note)?;
        }
        Ok(())
    }
}

impl SweepTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("setting\tpr\tsr\tnote\n");
        for r in &self.rows {
            let pr = r.pr.map(|v| v.to_string()).unwrap_or_default();
            let sr = r.sr.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.label, pr, sr, r.note);
        }
        out
    }
}

/// Short synthetic sequence used by sweeps when no directory is given.
fn sweep_sequence(cfg: &Config) -> Result<SequenceRecord> {
    let spec = SyntheticSpec::easy(96, 20);
    generate_sequence(&spec, cfg.get_u64("seed")? + 11)
}

fn one_tracking_eval(cfg: &Config, seq: &SequenceRecord) -> Result<(f64, f64)> {
    let model = TrackerModel::from_config(cfg)?;
    let (boxes, _) = track_sequence(cfg, model, None, seq)?;
    let res = evaluate(&boxes, &seq.gt, cfg.get_f64("eval.pr_threshold")?)?;
    Ok((res.pr_at, res.sr_auc))
}

/// `sweep`: run tracking+evaluation for each value of one config key.
/// Values that fail validation produce an error row; the sweep completes.
pub fn run_sweep(
    cfg: &Config,
    param: &str,
    values: &[String],
    seq_dir: Option<&Path>,
) -> Result<SweepTable> {
    let seq = match seq_dir {
        Some(d) => seqio::load_sequence(d)?,
        None => sweep_sequence(cfg)?,
    };
    let mut rows = Vec::new();
    for v in values {
        let mut c = cfg.clone();
        let label = format!("{param}={v}");
        let outcome = c
            .set(param, v)
            .and_then(|_| one_tracking_eval(&c, &seq));
        match outcome {
            Ok((pr, sr)) => rows.push(SweepRow {
                label,
                pr: Some(pr),
                sr: Some(sr),
                note: String::new(),
            }),
            Err(e) => rows.push(SweepRow {
                label,
                pr: None,
                sr: None,
                note: format!("error: {e}"),
            }),
        }
    }
    Ok(SweepTable {
        title: format!("sweep over {param}"),
        rows,
    })
}

/// Ablation product: filter mode x attention x global search, mirroring the
/// component-analysis table structure. No numeric claims, just the grid.
pub fn run_ablation(cfg: &Config, seq_dir: Option<&Path>) -> Result<SweepTable> {
    let seq = match seq_dir {
        Some(d) => seqio::load_sequence(d)?,
        None => sweep_sequence(cfg)?,
    };
    let mut rows = Vec::new();
    for mode in ["off", "naive", "mfg"] {
        for cbam in ["false", "true"] {
            for global in ["false", "true"] {
                let mut c = cfg.clone();
                c.set("mfgnet.mode", mode)?;
                c.set("cbam.enabled", cbam)?;
                c.set("tracker.global_search", global)?;
                let label = format!(
                    "{} cbam={} global={}",
                    match mode {
                        "off" => "baseline",
                        m => m,
                    },
                    cbam,
                    global
                );
                match one_tracking_eval(&c, &seq) {
                    Ok((pr, sr)) => rows.push(SweepRow {
                        label,
                        pr: Some(pr),
                        sr: Some(sr),
                        note: String::new(),
                    }),
                    Err(e) => rows.push(SweepRow {
                        label,
                        pr: None,
                        sr: None,
                        note: format!("error: {e}"),
                    }),
                }
            }
        }
    }
    Ok(SweepTable {
        title: "component ablation".into(),
        rows,
    })
}

/// Predict the attention map for one frame of a sequence.
pub fn attention_for_frame(
    net: &DataNet,
    store: &ParamStore,
    seq: &SequenceRecord,
    i: usize,
) -> Result<AttentionMap> {
    let clip = clip_from_sequence(seq, i, net.clip_len)?;
    net.predict_attention(store, &clip)
}
