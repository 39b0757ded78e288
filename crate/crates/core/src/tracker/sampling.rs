//! Gaussian proposal sampling and IoU-band labeling.

use crate::geom::BoundingBox;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug)]
pub struct GaussianSpread {
    /// Translation std in units of the mean target extent.
    pub sigma_xy: f64,
    /// Log-scale std applied jointly to width and height.
    pub sigma_scale: f64,
}

/// Draw `n` boxes around `center`: translations are Gaussian in the mean
/// extent, sizes get joint log-normal jitter, everything is clipped to the
/// image.
pub fn sample_gaussian(
    center: &BoundingBox,
    n: usize,
    spread: &GaussianSpread,
    img_w: usize,
    img_h: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BoundingBox>> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let (cx, cy) = center.center();
    if cx < 0.0 || cy < 0.0 || cx >= img_w as f64 || cy >= img_h as f64 {
        return Err(Error::invalid(format!(
            "sampling center ({cx:.1},{cy:.1}) outside {img_w}x{img_h} image"
        )));
    }
    let extent = 0.5 * (center.w + center.h);
    let trans = Normal::new(0.0, (spread.sigma_xy * extent).max(f64::MIN_POSITIVE)).unwrap();
    let scale = Normal::new(0.0, spread.sigma_scale.max(f64::MIN_POSITIVE)).unwrap();
    let degenerate_xy = spread.sigma_xy == 0.0;
    let degenerate_s = spread.sigma_scale == 0.0;

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let dx = if degenerate_xy { 0.0 } else { trans.sample(rng) };
        let dy = if degenerate_xy { 0.0 } else { trans.sample(rng) };
        let s = if degenerate_s {
            1.0
        } else {
            scale.sample(rng).exp()
        };
        let b = BoundingBox::from_center(cx + dx, cy + dy, center.w * s, center.h * s);
        out.push(b.clip_to(img_w, img_h));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct LabeledSamples {
    pub positives: Vec<BoundingBox>,
    pub negatives: Vec<BoundingBox>,
}

/// Split samples by IoU with the ground truth: `[pos_iou, 1]` are positives,
/// `< neg_iou` negatives, the band in between is discarded.
pub fn label_samples(
    samples: &[BoundingBox],
    gt: &BoundingBox,
    pos_iou: f64,
    neg_iou: f64,
) -> LabeledSamples {
    let mut out = LabeledSamples::default();
    for b in samples {
        let iou = b.iou(gt);
        if iou >= pos_iou {
            out.positives.push(*b);
        } else if iou < neg_iou {
            out.negatives.push(*b);
        }
    }
    out
}

/// Keep drawing positives with a tightening spread until enough are found.
/// Returns `(positives, negatives)`; the negative pool is collected along the
/// way and topped up with wide draws.
pub fn draw_labeled(
    gt: &BoundingBox,
    want_pos: usize,
    want_neg: usize,
    spread: &GaussianSpread,
    pos_iou: f64,
    neg_iou: f64,
    img_w: usize,
    img_h: usize,
    rng: &mut impl Rng,
) -> Result<LabeledSamples> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut s = *spread;
    let mut rounds = 0;
    while pos.len() < want_pos && rounds < 8 {
        let batch = sample_gaussian(gt, (want_pos * 4).max(64), &s, img_w, img_h, rng)?;
        let labeled = label_samples(&batch, gt, pos_iou, neg_iou);
        pos.extend(labeled.positives);
        neg.extend(labeled.negatives);
        if pos.len() < want_pos {
            log::debug!(
                "positive draw short ({}/{want_pos}), tightening spread",
                pos.len()
            );
            s = GaussianSpread {
                sigma_xy: s.sigma_xy * 0.5,
                sigma_scale: s.sigma_scale * 0.5,
            };
        }
        rounds += 1;
    }
    if pos.is_empty() {
        // Ground truth itself is always a valid positive.
        pos.push(gt.clip_to(img_w, img_h));
    }
    let wide = GaussianSpread {
        sigma_xy: spread.sigma_xy * 3.0,
        sigma_scale: spread.sigma_scale,
    };
    while neg.len() < want_neg {
        let batch = sample_gaussian(gt, (want_neg * 2).max(128), &wide, img_w, img_h, rng)?;
        let mut labeled = label_samples(&batch, gt, pos_iou, neg_iou);
        neg.append(&mut labeled.negatives);
        // Uniform boxes cover the far field.
        for _ in 0..want_neg / 2 {
            let w = gt.w.max(4.0);
            let h = gt.h.max(4.0);
            let x = rng.gen_range(0.0..(img_w as f64 - 1.0).max(1.0));
            let y = rng.gen_range(0.0..(img_h as f64 - 1.0).max(1.0));
            let b = BoundingBox::new(x, y, w, h).clip_to(img_w, img_h);
            if b.iou(gt) < neg_iou {
                neg.push(b);
            }
        }
    }
    pos.truncate(want_pos);
    neg.truncate(want_neg);
    Ok(LabeledSamples {
        positives: pos,
        negatives: neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_samples_clipped_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let center = BoundingBox::new(40.0, 40.0, 16.0, 16.0);
        let spread = GaussianSpread { sigma_xy: 0.3, sigma_scale: 0.5 };
        let boxes = sample_gaussian(&center, 128, &spread, 96, 96, &mut rng).unwrap();
        assert_eq!(boxes.len(), 128);
        for b in &boxes {
            assert!(b.inside(96, 96));
            assert!(b.w > 0.0 && b.h > 0.0);
        }
    }

    #[test]
    fn zero_spread_degenerates_to_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = BoundingBox::new(30.0, 30.0, 10.0, 12.0);
        let spread = GaussianSpread { sigma_xy: 0.0, sigma_scale: 0.0 };
        let boxes = sample_gaussian(&center, 16, &spread, 96, 96, &mut rng).unwrap();
        for b in &boxes {
            assert_eq!(*b, center);
        }
    }

    #[test]
    fn center_outside_image_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let outside = BoundingBox::new(200.0, 200.0, 10.0, 10.0);
        let spread = GaussianSpread { sigma_xy: 0.3, sigma_scale: 0.5 };
        assert!(sample_gaussian(&outside, 8, &spread, 96, 96, &mut rng).is_err());
    }

    /// Monte-Carlo check of the translation distribution.
    #[test]
    fn sample_mean_close_to_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Large image so clipping does not bias the mean.
        let center = BoundingBox::new(492.0, 492.0, 16.0, 16.0);
        let spread = GaussianSpread { sigma_xy: 0.3, sigma_scale: 0.0 };
        let boxes = sample_gaussian(&center, 10_000, &spread, 1000, 1000, &mut rng).unwrap();
        let n = boxes.len() as f64;
        let mean_cx = boxes.iter().map(|b| b.center().0).sum::<f64>() / n;
        let mean_cy = boxes.iter().map(|b| b.center().1).sum::<f64>() / n;
        let sigma = 0.3 * 16.0;
        let tol = 2.0 * sigma / (n).sqrt() * 2.0; // 4 standard errors
        assert!((mean_cx - 500.0).abs() < tol, "mean x off: {mean_cx}");
        assert!((mean_cy - 500.0).abs() < tol, "mean y off: {mean_cy}");
    }

    #[test]
    fn labeling_bands() {
        let gt = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        // Identical box: IoU 1 -> positive.
        // Disjoint box: IoU 0 -> negative.
        // (5,0,10,10): IoU 1/3 < 0.5 -> negative.
        // (1,0,10,10): IoU = 9/11 ~ 0.818 -> positive.
        // (3,0,10,10): IoU = 7/13 ~ 0.538 -> discard band.
        let samples = vec![
            gt,
            BoundingBox::new(50.0, 50.0, 10.0, 10.0),
            BoundingBox::new(5.0, 0.0, 10.0, 10.0),
            BoundingBox::new(1.0, 0.0, 10.0, 10.0),
            BoundingBox::new(3.0, 0.0, 10.0, 10.0),
        ];
        let labeled = label_samples(&samples, &gt, 0.7, 0.5);
        assert_eq!(labeled.positives.len(), 2);
        assert_eq!(labeled.negatives.len(), 2);
    }

    #[test]
    fn draw_labeled_fills_quotas() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = BoundingBox::new(40.0, 40.0, 16.0, 16.0);
        let spread = GaussianSpread { sigma_xy: 0.3, sigma_scale: 0.5 };
        let got = draw_labeled(&gt, 32, 96, &spread, 0.7, 0.5, 96, 96, &mut rng).unwrap();
        assert_eq!(got.positives.len(), 32);
        assert_eq!(got.negatives.len(), 96);
        for b in &got.positives {
            assert!(b.iou(&gt) >= 0.7);
        }
        for b in &got.negatives {
            assert!(b.iou(&gt) < 0.5);
        }
    }
}
