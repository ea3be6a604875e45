//! Central-difference verification of tape gradients.
//!
//! The caller runs one forward+backward pass so the store's gradient buffers
//! hold the analytic result, then hands over a loss closure. For a sampled
//! set of coordinates per parameter we nudge the value by `±eps`, re-run the
//! loss, and compare `(f(x+eps) - f(x-eps)) / 2eps` against the analytic
//! entry under the relative error `|a - n| / max(1, |a|, |n|)`.
//!
//! Coordinate sampling is deterministic: per parameter, up to
//! `coords_per_param` evenly strided coordinates whose analytic gradient is
//! nonzero, plus up to the same number strided uniformly over the whole
//! tensor, deduplicated.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numkit::store::ParamStore;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Parameter name, flat index, analytic, numeric for the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.coords_checked > 0 && self.max_rel_err < tol
    }
}

fn strided(len: usize, want: usize) -> impl Iterator<Item = usize> {
    let stride = len.div_ceil(want.max(1)).max(1);
    (0..len).step_by(stride).take(want)
}

/// Compare analytic gradients already present in `store` against central
/// differences of `loss_fn`.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    eps: f64,
    coords_per_param: usize,
) -> Result<GradReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for name in names {
        let grad = store.grad(&name)?.data().to_vec();
        let len = grad.len();
        let mut coords: BTreeSet<usize> = BTreeSet::new();
        let nonzero: Vec<usize> = (0..len).filter(|&i| grad[i].abs() > 1e-12).collect();
        for k in strided(nonzero.len(), coords_per_param) {
            coords.insert(nonzero[k]);
        }
        coords.extend(strided(len, coords_per_param));
        for i in coords {
            let original = store.get(&name)?.data()[i];
            store.get_mut(&name)?.data_mut()[i] = original + eps;
            let plus = loss_fn(store);
            store.get_mut(&name)?.data_mut()[i] = original - eps;
            let minus = loss_fn(store);
            store.get_mut(&name)?.data_mut()[i] = original;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grad[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
