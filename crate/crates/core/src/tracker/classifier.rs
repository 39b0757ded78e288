//! Online classifier head and the training losses.
//!
//! Two shared fully-connected hidden layers feed per-domain binary output
//! layers during offline multi-domain training; tracking uses a single fresh
//! binary head. The total loss is `cls + alpha * inst` with `alpha = 0.1`:
//! `cls` is softmax cross-entropy over foreground/background, `inst` is the
//! instance embedding loss that softmaxes each positive's foreground score
//! across domains and pulls it toward its own video.

use crate::graph::{softmax_rows, Graph, Var};
use crate::nn::{he_normal, zeros, ParamStore};
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;

/// Balance between the classification and instance-embedding terms.
pub const ALPHA: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub cls: f64,
    pub inst: f64,
    pub total: f64,
}

/// `total = cls + alpha * inst`.
pub fn loss_total(cls: f64, inst: f64) -> LossBreakdown {
    LossBreakdown {
        cls,
        inst,
        total: cls + ALPHA * inst,
    }
}

/// Mean softmax cross-entropy of `N x 2` logits against binary labels.
pub fn loss_cls(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::shape("label count mismatch"));
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (j, &lab) in labels.iter().enumerate() {
        loss -= probs[[j, lab]].max(f64::MIN_POSITIVE).ln();
    }
    Ok(loss / labels.len() as f64)
}

/// Instance embedding loss: `N x D` foreground scores across domains,
/// softmaxed per row over domains, pulled toward `domain`.
pub fn loss_inst(pos_scores: &Array2<f64>, domain: usize) -> Result<f64> {
    let (n, d) = pos_scores.dim();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if domain >= d {
        return Err(Error::invalid(format!("domain {domain} out of {d}")));
    }
    if d < 2 {
        log::warn!("instance loss with {d} domain(s) is constant");
    }
    let probs = softmax_rows(pos_scores);
    let mut loss = 0.0;
    for j in 0..n {
        loss -= probs[[j, domain]].max(f64::MIN_POSITIVE).ln();
    }
    Ok(loss / n as f64)
}

pub struct ClassifierHead {
    pub in_dim: usize,
    pub hidden: usize,
    pub domains: usize,
}

impl ClassifierHead {
    pub fn new(in_dim: usize, hidden: usize, domains: usize) -> Self {
        assert!(domains >= 1);
        ClassifierHead {
            in_dim,
            hidden,
            domains,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert("head.fc1.w", he_normal(rng, &[self.in_dim, self.hidden], self.in_dim));
        store.insert("head.fc1.b", zeros(&[self.hidden]));
        store.insert("head.fc2.w", he_normal(rng, &[self.hidden, self.hidden], self.hidden));
        store.insert("head.fc2.b", zeros(&[self.hidden]));
        for d in 0..self.domains {
            store.insert(format!("head.out.d{d}.w"), he_normal(rng, &[self.hidden, 2], self.hidden));
            store.insert(format!("head.out.d{d}.b"), zeros(&[2]));
        }
    }

    /// Re-randomize one output branch (a fresh binary head for tracking).
    pub fn reset_output(&self, store: &mut ParamStore, rng: &mut impl Rng, domain: usize) {
        *store.get_mut(&format!("head.out.d{domain}.w")).unwrap() =
            he_normal(rng, &[self.hidden, 2], self.hidden);
        *store.get_mut(&format!("head.out.d{domain}.b")).unwrap() = zeros(&[2]);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "head.fc1.w".to_string(),
            "head.fc1.b".to_string(),
            "head.fc2.w".to_string(),
            "head.fc2.b".to_string(),
        ];
        for d in 0..self.domains {
            names.push(format!("head.out.d{d}.w"));
            names.push(format!("head.out.d{d}.b"));
        }
        names
    }

    fn shared_graph(&self, g: &mut Graph, feats: Var) -> Var {
        let w1 = g.param("head.fc1.w");
        let b1 = g.param("head.fc1.b");
        let w2 = g.param("head.fc2.w");
        let b2 = g.param("head.fc2.b");
        let h = g.matmul(feats, w1);
        let h = g.add_row_bias(h, b1);
        let h = g.relu(h);
        let h = g.matmul(h, w2);
        let h = g.add_row_bias(h, b2);
        g.relu(h)
    }

    /// `N x in_dim` features to `N x 2` logits of one domain branch.
    pub fn forward_graph(&self, g: &mut Graph, feats: Var, domain: usize) -> Var {
        assert!(domain < self.domains);
        let shared = self.shared_graph(g, feats);
        let w = g.param(&format!("head.out.d{domain}.w"));
        let b = g.param(&format!("head.out.d{domain}.b"));
        let out = g.matmul(shared, w);
        g.add_row_bias(out, b)
    }

    /// Foreground logits of every domain branch, as `N x D`.
    pub fn all_domain_fg_graph(&self, g: &mut Graph, feats: Var) -> Var {
        let shared = self.shared_graph(g, feats);
        let mut cols = Vec::with_capacity(self.domains);
        for d in 0..self.domains {
            let w = g.param(&format!("head.out.d{d}.w"));
            let b = g.param(&format!("head.out.d{d}.b"));
            let out = g.matmul(shared, w);
            let out = g.add_row_bias(out, b);
            cols.push(g.index_axis(out, 1, 1));
        }
        g.stack(&cols, 1)
    }

    /// Value-level classification: `N x 2` logits.
    pub fn classify(&self, store: &ParamStore, feats: &Array2<f64>, domain: usize) -> Array2<f64> {
        let mut g = Graph::new(store);
        let x = g.input(feats.clone().into_dyn());
        let out = self.forward_graph(&mut g, x, domain);
        g.value(out).clone().into_dimensionality().unwrap()
    }

    /// Shift-invariant target scores: foreground minus background logit.
    /// Positive iff the softmax foreground probability exceeds one half.
    pub fn scores(&self, store: &ParamStore, feats: &Array2<f64>, domain: usize) -> Vec<f64> {
        self.classify(store, feats, domain)
            .rows()
            .into_iter()
            .map(|r| r[1] - r[0])
            .collect()
    }
}

/// Indices of the `k` highest-scoring entries, descending, stable on ties.
pub fn hardest_negatives(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
