//! temp diagnostic
use rgbt_core::harness::synth::{generate_sequence, SyntheticSpec};
use rgbt_core::tracker::{roi_instance_features, TrackerModel};
use rgbt_core::Config;

fn drift(cfg: &Config) -> f64 {
    let spec = SyntheticSpec::easy(96, 4);
    let seq = generate_sequence(&spec, 42).unwrap();
    let model = TrackerModel::from_config(cfg).unwrap();
    let f0 = model.features.fused(&model.store, &seq.frames[0]).unwrap();
    let f1 = model.features.fused(&model.store, &seq.frames[1]).unwrap();
    let a = roi_instance_features(&f0, &[seq.gt[0]], 96, 96, 3).unwrap();
    let b = roi_instance_features(&f1, &[seq.gt[1]], 96, 96, 3).unwrap();
    let diff = (&a - &b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm
}

fn main() {
    for (cbam, mode) in [("true", "mfg"), ("false", "mfg"), ("true", "off"), ("false", "off")] {
        let mut cfg = Config::default();
        cfg.set("backbone.channels", "32").unwrap();
        cfg.set("cbam.enabled", cbam).unwrap();
        cfg.set("mfgnet.mode", mode).unwrap();
        println!("cbam={cbam} mode={mode}: relative gt-feature drift {:.4}", drift(&cfg));
    }
}
