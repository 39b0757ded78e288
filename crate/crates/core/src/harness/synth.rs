//! Synthetic RGB-T sequences with scripted motion, occlusion, and teleports.
//!
//! The two modalities are complementary by construction: the target is
//! textured but low-contrast in the visible channel and a bright blob on a
//! cold background in the thermal channel, while distractors mimic the
//! target's visible texture but stay thermally cold. Occluders cover the
//! target in both modalities. Ground truth follows the motion script on
//! every frame, including occluded ones.

use crate::backbone::{FramePair, ImageTensor, Modality};
use crate::geom::BoundingBox;
use crate::harness::SequenceRecord;
use crate::{Error, Result};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OcclusionEvent {
    pub start: usize,
    pub duration: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeleportEvent {
    /// From this frame on, the motion path is shifted so the center lands
    /// here at the teleport frame.
    pub frame: usize,
    pub to: (f64, f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub frames: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Center waypoints, traversed linearly at constant parameter speed.
    pub waypoints: Vec<(f64, f64)>,
    #[serde(default)]
    pub occlusions: Vec<OcclusionEvent>,
    #[serde(default)]
    pub teleport: Option<TeleportEvent>,
    #[serde(default)]
    pub distractors: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl SyntheticSpec {
    /// Gentle diagonal drift, no occlusion: the easy tracking scenario.
    pub fn easy(canvas: usize, frames: usize) -> Self {
        let c = canvas as f64;
        SyntheticSpec {
            canvas_w: canvas,
            canvas_h: canvas,
            frames,
            target_w: c * 0.18,
            target_h: c * 0.18,
            waypoints: vec![(c * 0.3, c * 0.3), (c * 0.65, c * 0.55), (c * 0.45, c * 0.7)],
            occlusions: vec![],
            teleport: None,
            distractors: 0,
            noise: 0.02,
            tags: vec!["easy".into()],
        }
    }

    /// Full occlusion followed by a far teleport: the re-acquisition scenario.
    pub fn occlusion_teleport(canvas: usize, frames: usize, occlusion_start: usize, occlusion_len: usize) -> Self {
        let c = canvas as f64;
        SyntheticSpec {
            canvas_w: canvas,
            canvas_h: canvas,
            frames,
            target_w: c * 0.18,
            target_h: c * 0.18,
            waypoints: vec![(c * 0.25, c * 0.25), (c * 0.35, c * 0.3)],
            occlusions: vec![OcclusionEvent {
                start: occlusion_start,
                duration: occlusion_len,
            }],
            teleport: Some(TeleportEvent {
                frame: occlusion_start,
                to: (c * 0.72, c * 0.72),
            }),
            distractors: 1,
            noise: 0.02,
            tags: vec!["occlusion".into(), "teleport".into()],
        }
    }

    /// Scripted center at a frame: piecewise-linear over the waypoints, with
    /// the tail shifted after a teleport.
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        let base = |f: usize| -> (f64, f64) {
            if self.waypoints.len() == 1 || self.frames <= 1 {
                return self.waypoints[0];
            }
            let t = f as f64 / (self.frames - 1) as f64 * (self.waypoints.len() - 1) as f64;
            let seg = (t.floor() as usize).min(self.waypoints.len() - 2);
            let u = t - seg as f64;
            let (ax, ay) = self.waypoints[seg];
            let (bx, by) = self.waypoints[seg + 1];
            (ax + (bx - ax) * u, ay + (by - ay) * u)
        };
        let (mut cx, mut cy) = base(frame);
        if let Some(tp) = &self.teleport {
            if frame >= tp.frame {
                let (ox, oy) = base(tp.frame);
                cx = tp.to.0 + (cx - ox);
                cy = tp.to.1 + (cy - oy);
            }
        }
        (cx, cy)
    }

    pub fn gt_box(&self, frame: usize) -> BoundingBox {
        let (cx, cy) = self.center_at(frame);
        BoundingBox::from_center(cx, cy, self.target_w, self.target_h)
            .clip_to(self.canvas_w, self.canvas_h)
    }

    pub fn occluded(&self, frame: usize) -> bool {
        self.occlusions
            .iter()
            .any(|o| frame >= o.start && frame < o.start + o.duration)
    }
}

fn fill_rect(img: &mut Array3<f64>, b: &BoundingBox, mut f: impl FnMut(usize, usize, usize) -> f64) {
    let (c, h, w) = img.dim();
    let x0 = b.x.round().max(0.0) as usize;
    let y0 = b.y.round().max(0.0) as usize;
    let x1 = ((b.x + b.w).round() as usize).min(w);
    let y1 = ((b.y + b.h).round() as usize).min(h);
    for ci in 0..c {
        for y in y0..y1 {
            for x in x0..x1 {
                img[[ci, y, x]] = f(ci, y - y0, x - x0);
            }
        }
    }
}

struct Texture {
    phase_x: f64,
    phase_y: f64,
    freq: f64,
    base: [f64; 3],
    amp: f64,
}

impl Texture {
    fn sample(&self, c: usize, y: usize, x: usize) -> f64 {
        let v = ((x as f64 * self.freq + self.phase_x).sin()
            + (y as f64 * self.freq * 1.3 + self.phase_y).cos())
            * 0.25;
        (self.base[c] + self.amp * v).clamp(0.0, 1.0)
    }
}

fn random_texture(rng: &mut ChaCha8Rng, base: [f64; 3], amp: f64) -> Texture {
    Texture {
        phase_x: rng.gen_range(0.0..6.28),
        phase_y: rng.gen_range(0.0..6.28),
        freq: rng.gen_range(0.35..0.9),
        base,
        amp,
    }
}

/// Deterministic generation for a fixed seed.
pub fn generate_sequence(spec: &SyntheticSpec, seed: u64) -> Result<SequenceRecord> {
    if spec.target_w > spec.canvas_w as f64 || spec.target_h > spec.canvas_h as f64 {
        return Err(Error::invalid("target larger than canvas"));
    }
    if spec.frames == 0 || spec.waypoints.is_empty() {
        return Err(Error::invalid("spec needs frames and waypoints"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.canvas_w, spec.canvas_h);

    // Per-sequence appearances.
    let bg_vis = random_texture(&mut rng, [0.45, 0.5, 0.42], 0.35);
    let tgt_vis = random_texture(&mut rng, [0.55, 0.42, 0.5], 0.4);
    let occ_vis = random_texture(&mut rng, [0.35, 0.35, 0.6], 0.3);
    let thermal_bg = 0.15;
    let thermal_tgt = 0.92;
    let thermal_occ = 0.1;

    // Distractors share the target's visible texture but stay cold.
    let distractor_boxes: Vec<BoundingBox> = (0..spec.distractors)
        .map(|_| {
            let dw = spec.target_w * rng.gen_range(0.8..1.2);
            let dh = spec.target_h * rng.gen_range(0.8..1.2);
            let x = rng.gen_range(0.0..(w as f64 - dw).max(1.0));
            let y = rng.gen_range(0.0..(h as f64 - dh).max(1.0));
            BoundingBox::new(x, y, dw, dh).clip_to(w, h)
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.frames);
    let mut gts = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let gt = spec.gt_box(f);

        let mut vis = Array3::zeros((3, h, w));
        let mut thr = Array3::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    vis[[c, y, x]] = bg_vis.sample(c, y, x);
                    thr[[c, y, x]] = thermal_bg;
                }
            }
        }
        for d in &distractor_boxes {
            fill_rect(&mut vis, d, |c, y, x| tgt_vis.sample(c, y, x));
            fill_rect(&mut thr, d, |_, _, _| thermal_bg + 0.05);
        }
        fill_rect(&mut vis, &gt, |c, y, x| tgt_vis.sample(c, y, x));
        fill_rect(&mut thr, &gt, |_, _, _| thermal_tgt);

        if spec.occluded(f) {
            // Occluder sized past the target so coverage is total.
            let (cx, cy) = gt.center();
            let occ = BoundingBox::from_center(cx, cy, gt.w * 1.5, gt.h * 1.5).clip_to(w, h);
            fill_rect(&mut vis, &occ, |c, y, x| occ_vis.sample(c, y, x));
            fill_rect(&mut thr, &occ, |_, _, _| thermal_occ);
        }

        if spec.noise > 0.0 {
            for v in vis.iter_mut().chain(thr.iter_mut()) {
                *v = (*v + rng.gen_range(-spec.noise..spec.noise)).clamp(0.0, 1.0);
            }
        }

        let visible = ImageTensor::new(vis, Modality::Visible)?;
        // Thermal stored gray-replicated; all three channels are already equal.
        let thermal = ImageTensor::new(thr, Modality::Thermal)?;
        frames.push(FramePair::new(visible, thermal)?);
        gts.push(gt);
    }
    SequenceRecord::new(frames, gts, spec.tags.clone())
}
