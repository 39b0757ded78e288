//! Precision-rate and success-rate evaluation.
//!
//! PR at a threshold is the fraction of frames whose predicted center lies
//! within that pixel distance of the ground-truth center. The success curve
//! runs over IoU thresholds {0, 0.05, ..., 0.95} with success meaning
//! IoU strictly above the threshold; SR-AUC is the mean of the curve and the
//! scalar SR is read at threshold 0.6.

use crate::geom::BoundingBox;
use crate::{Error, Result};
use serde::Serialize;

/// IoU thresholds of the success curve.
pub fn sr_thresholds() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalResult {
    /// (pixel threshold, precision) pairs for thresholds 0..=50.
    pub pr_curve: Vec<(f64, f64)>,
    /// (IoU threshold, success rate) pairs.
    pub sr_curve: Vec<(f64, f64)>,
    /// Precision at the configured pixel threshold.
    pub pr_at: f64,
    /// Mean of the success curve.
    pub sr_auc: f64,
    /// Success rate at IoU 0.6.
    pub sr_at_06: f64,
}

fn check_lengths(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction/ground-truth length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty evaluation"));
    }
    Ok(())
}

/// Fraction of frames with center distance <= `threshold_px`.
pub fn evaluate_pr(pred: &[BoundingBox], gt: &[BoundingBox], threshold_px: f64) -> Result<f64> {
    check_lengths(pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt.iter())
        .filter(|(p, g)| p.center_distance(g) <= threshold_px)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn evaluate_pr_curve(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<Vec<(f64, f64)>> {
    check_lengths(pred, gt)?;
    (0..=50)
        .map(|t| {
            let t = t as f64;
            Ok((t, evaluate_pr(pred, gt, t)?))
        })
        .collect()
}

/// Success curve and its area (mean over the threshold grid).
pub fn evaluate_sr(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<(f64, Vec<(f64, f64)>)> {
    check_lengths(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt.iter()).map(|(p, g)| p.iou(g)).collect();
    let curve: Vec<(f64, f64)> = sr_thresholds()
        .into_iter()
        .map(|t| {
            let rate = ious.iter().filter(|&&i| i > t).count() as f64 / ious.len() as f64;
            (t, rate)
        })
        .collect();
    let auc = curve.iter().map(|(_, r)| r).sum::<f64>() / curve.len() as f64;
    Ok((auc, curve))
}

/// Full evaluation report.
pub fn evaluate(pred: &[BoundingBox], gt: &[BoundingBox], pr_threshold: f64) -> Result<EvalResult> {
    let pr_curve = evaluate_pr_curve(pred, gt)?;
    let pr_at = evaluate_pr(pred, gt, pr_threshold)?;
    let (sr_auc, sr_curve) = evaluate_sr(pred, gt)?;
    let sr_at_06 = sr_curve
        .iter()
        .find(|(t, _)| (*t - 0.6).abs() < 1e-9)
        .map(|(_, r)| *r)
        .unwrap_or(0.0);
    Ok(EvalResult {
        pr_curve,
        sr_curve,
        pr_at,
        sr_auc,
        sr_at_06,
    })
}
