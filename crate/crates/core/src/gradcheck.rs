//! Central finite-difference checking of tape gradients.

use crate::error::{contract, Result};
use crate::optim::{Binder, ParamStore};
use crate::tape::{Tape, Var};

/// Largest discrepancy found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Magnitude below which errors are measured absolutely. Central
/// differences with step 1e-6 carry roughly 1e-10 of roundoff on an O(1)
/// loss, so exact-zero gradients need a floor well above that.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// `(f(x + h) - f(x - h)) / 2h` for every element of every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: for<'t, 's> Fn(&Binder<'t, 's>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let binder = Binder::all(&tape, store);
    let l = loss(&binder)?;
    let grads = tape.backward(l)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let b = Binder::frozen(&tape, s);
        loss(&b)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = store.clone();
    for (name, value) in store.iter() {
        let analytic = grads.by_name(name);
        for i in 0..value.len() {
            let orig = value.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            if !numeric.is_finite() || !a.is_finite() {
                return contract(format!("non-finite gradient for `{name}`[{i}]"));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
