//! Classification and attention losses as fused graph ops.

use super::{Arr, Graph, Op, Var};
use ndarray::{Array2, ArrayD, Ix2, IxDyn};

/// Row-wise softmax of a 2-D array. Shift-invariant and overflow-safe.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

struct SoftmaxCrossEntropy {
    labels: Vec<usize>,
}
impl Op for SoftmaxCrossEntropy {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let logits = i[0].view().into_dimensionality::<Ix2>().unwrap().to_owned();
        let n = logits.nrows() as f64;
        let scale = g.iter().next().copied().unwrap_or(1.0) / n;
        let mut dl = softmax_rows(&logits);
        for (j, &lab) in self.labels.iter().enumerate() {
            dl[[j, lab]] -= 1.0;
        }
        dl.mapv_inplace(|v| v * scale);
        vec![dl.into_dyn()]
    }
}

const BCE_EPS: f64 = 1e-12;

struct Bce {
    target: Arr,
}
impl Op for Bce {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let p = i[0];
        let n = p.len() as f64;
        let scale = g.iter().next().copied().unwrap_or(1.0) / n;
        let mut dp = ArrayD::zeros(p.raw_dim());
        ndarray::Zip::from(&mut dp)
            .and(p)
            .and(&self.target)
            .for_each(|d, &pv, &tv| {
                *d = scale * (-(tv / (pv + BCE_EPS)) + (1.0 - tv) / (1.0 - pv + BCE_EPS));
            });
        vec![dp]
    }
}

impl<'p> Graph<'p> {
    /// Mean softmax cross-entropy over rows of an `N x C` logit matrix.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self
            .value(logits)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("cross-entropy expects 2-D logits");
        let (n, c) = lv.dim();
        assert!(n > 0, "empty batch");
        assert_eq!(labels.len(), n, "label count mismatch");
        assert!(labels.iter().all(|&l| l < c), "label out of range");

        let probs = softmax_rows(&lv.to_owned());
        let mut loss = 0.0;
        for (j, &lab) in labels.iter().enumerate() {
            loss -= (probs[[j, lab]].max(f64::MIN_POSITIVE)).ln();
        }
        loss /= n as f64;
        let v = ArrayD::from_elem(IxDyn(&[]), loss);
        self.push(
            v,
            vec![logits.0],
            Some(Box::new(SoftmaxCrossEntropy { labels: labels.to_vec() })),
            None,
        )
    }

    /// Mean binary cross-entropy of probabilities in `[0,1]` against a fixed
    /// target of the same shape. Probabilities are epsilon-clamped so exact
    /// 0/1 predictions stay finite.
    pub fn bce_loss(&mut self, pred: Var, target: &Arr) -> Var {
        assert_eq!(self.shape(pred), target.shape(), "BCE shape mismatch");
        let p = self.value(pred);
        let n = p.len() as f64;
        let mut loss = 0.0;
        ndarray::Zip::from(p).and(target).for_each(|&pv, &tv| {
            loss -= tv * (pv + BCE_EPS).ln() + (1.0 - tv) * (1.0 - pv + BCE_EPS).ln();
        });
        let v = ArrayD::from_elem(IxDyn(&[]), loss / n);
        self.push(
            v,
            vec![pred.0],
            Some(Box::new(Bce { target: target.clone() })),
            None,
        )
    }
}
