//! Central finite-difference comparison for graph gradients.

use super::{Gradients, ParamId, ParamStore};

/// Entries whose analytic and numeric gradients are both below this are
/// compared absolutely instead of relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (parameter name, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` against central differences of `loss_fn` with step
/// `h` for every entry of every parameter (except structural zeros, which
/// must have an exactly zero analytic gradient).
pub fn check<F>(params: &mut ParamStore, analytic: &Gradients, h: f64, mut loss_fn: F) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = params.ids().collect();
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    for id in ids {
        let n = params.get(id).len();
        for k in 0..n {
            if params.zero_mask(id).map_or(false, |m| m[k]) {
                let a = analytic.get(id)[k];
                if a != 0.0 {
                    report.max_rel_error = f64::INFINITY;
                    report.worst = Some((params.name(id).to_string(), k, a, 0.0));
                }
                continue;
            }
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + h;
            let plus = loss_fn(params);
            params.get_mut(id).data_mut()[k] = orig - h;
            let minus = loss_fn(params);
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id)[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((params.name(id).to_string(), k, a, numeric));
                }
            }
        }
    }
    report
}
