//! Central finite-difference oracle for analytic gradients.

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error `|a - b| / max(|a|, |b|, 1e-8)` over checked coordinates.
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// Compares the tape gradient of a scalar loss against central differences
/// `(f(x+h) - f(x-h)) / 2h` for every coordinate of every trainable parameter.
///
/// `stride` > 1 checks every `stride`-th coordinate only. Parameter values
/// and gradients in `store` are left as they were.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    h: f64,
    stride: usize,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let saved_grads: Vec<_> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grads();
    let mut tape = Tape::new();
    let out = loss(&mut tape, store)?;
    tape.backward_into(out, store)?;
    let analytic: Vec<_> = store.iter().map(|p| p.grad.clone()).collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, store)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let n = store.value(id).len();
        for i in (0..n).step_by(stride.max(1)) {
            let orig = store.value(id).values()[i];
            store.value_mut(id).values_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(id).values_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(id).values_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[id.index()].values()[i];
            let rel = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }

    for (p, g) in store.iter_mut().zip(saved_grads) {
        p.grad = g;
    }
    Ok(report)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
