//! Finite-difference gradient checking. Test support: the oracle re-evaluates
//! the forward pass under central perturbations and never touches the reverse
//! pass it is checking.

use crate::nn::ParamStore;
use rand::seq::SliceRandom;
use rand::Rng;

/// Outcome of one finite-difference comparison.
#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>, // (param, flat index, analytic, numeric)
}

impl GradCheck {
    pub fn assert_ok(&self, tol: f64) {
        assert!(
            self.max_rel_err < tol,
            "gradient check failed: max rel err {:.3e} >= {:.3e} at {:?} ({} coords)",
            self.max_rel_err,
            tol,
            self.worst,
            self.checked
        );
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-7 {
        // Both effectively zero at f64 central-difference resolution.
        return (a - b).abs().min(1.0) * if (a - b).abs() < 1e-7 { 0.0 } else { 1.0 };
    }
    (a - b).abs() / denom
}

/// Compare analytic parameter gradients against central finite differences.
///
/// `loss_fn` must rebuild the forward pass from the store and return the
/// scalar loss. `analytic` maps parameter name to its gradient tensor (from a
/// single backward pass of the same loss). For large tensors only
/// `max_coords_per_param` randomly chosen coordinates are probed.
pub fn finite_diff_params<F>(
    store: &mut ParamStore,
    params: &[&str],
    analytic: &std::collections::HashMap<String, crate::graph::Arr>,
    mut loss_fn: F,
    eps: f64,
    max_coords_per_param: usize,
    rng: &mut impl Rng,
) -> GradCheck
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;

    for &name in params {
        let grad = analytic
            .get(name)
            .unwrap_or_else(|| panic!("no analytic gradient for `{name}`"))
            .as_standard_layout()
            .into_owned();
        let len = store.get(name).unwrap().len();
        let mut coords: Vec<usize> = (0..len).collect();
        if len > max_coords_per_param {
            coords.shuffle(rng);
            coords.truncate(max_coords_per_param);
        }
        for &flat in &coords {
            let orig = store.get(name).unwrap().as_slice().unwrap()[flat];

            store.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = orig + eps;
            let plus = loss_fn(store);
            store.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = orig - eps;
            let minus = loss_fn(store);
            store.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_slice().unwrap()[flat];
            let e = rel_err(a, numeric);
            checked += 1;
            if e > max_rel {
                max_rel = e;
                worst = Some((name.to_string(), flat, a, numeric));
            }
        }
    }
    GradCheck {
        checked,
        max_rel_err: max_rel,
        worst,
    }
}
