//! Central finite-difference comparison against the tape's gradients, run in
//! `f64`.

use super::{Bound, ParameterStore, Tape, Var};
use crate::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Largest relative error seen and where.
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Denominator floor so that gradients that are zero up to rounding do not
/// produce spurious relative errors.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares gradients of the scalar returned by `f` for every entry of every
/// parameter (or at most `max_per_param` evenly spaced entries of each).
pub fn check<F>(store: &ParameterStore<f64>, max_per_param: Option<usize>, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let eval = |s: &ParameterStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let out = f(&mut tape, &b)?;
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    tape.backward(out)?;

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = store.clone();
    for (name, p) in store.iter() {
        let analytic = tape.grad(bound.get(name)?).unwrap_or_default();
        let n = p.value.numel();
        let stride = max_per_param.map_or(1, |k| n.div_ceil(k.max(1)));
        for i in (0..n).step_by(stride) {
            let w = p.value.data()[i];
            let h = 1e-5 * w.abs().max(1.0);
            let set = |s: &mut ParameterStore<f64>, v: f64| {
                s.get_mut(name).expect("same names").value.data_mut()[i] = v;
            };
            set(&mut probe, w + h);
            let up = eval(&probe)?;
            set(&mut probe, w - h);
            let down = eval(&probe)?;
            set(&mut probe, w);
            let numeric = (up - down) / (2.0 * h);
            let rel = relative_error(analytic[i], numeric);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some((name.to_string(), i));
                }
            }
        }
    }
    Ok(report)
}
