//! Track a synthetic sequence end to end with the reduced profile and print
//! PR/SR. Usage: `cargo run --example track_synthetic [frames]`.

use rgbt_core::harness::eval::evaluate;
use rgbt_core::harness::experiment::track_sequence;
use rgbt_core::harness::synth::{generate_sequence, SyntheticSpec};
use rgbt_core::tracker::TrackerModel;
use rgbt_core::Config;
use std::time::Instant;

fn main() {
    let frames: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(50);

    let mut cfg = Config::default();
    cfg.set("backbone.channels", "32").unwrap();
    cfg.set("datanet.profile", "desk").unwrap();

    let spec = SyntheticSpec::easy(96, frames);
    let seq = generate_sequence(&spec, 42).unwrap();

    let t0 = Instant::now();
    let model = TrackerModel::from_config(&cfg).unwrap();
    let (boxes, stats) = track_sequence(&cfg, model, None, &seq).unwrap();
    let elapsed = t0.elapsed();

    let res = evaluate(&boxes, &seq.gt, 20.0).unwrap();
    println!(
        "{} frames in {:.1}s ({:.2} s/frame incl. init)",
        frames,
        elapsed.as_secs_f64(),
        elapsed.as_secs_f64() / frames as f64
    );
    println!("PR@20px {:.3}  SR-AUC {:.3}  SR@0.6 {:.3}", res.pr_at, res.sr_auc, res.sr_at_06);
    println!(
        "updates: {} scheduled, {} short-term; {} global frames",
        stats.scheduled_updates, stats.short_updates, stats.global_frames
    );
}
