//! Central finite-difference gradient checking.
//!
//! The error for one coordinate is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
//! The floor keeps coordinates whose true gradient is ~0 from turning
//! rounding noise into huge relative errors.

use serde::Serialize;

use crate::error::Result;
use crate::params::ParameterStore;
use crate::tape::{Gradients, Tape, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Runs `f` once on a tape and backpropagates from its scalar output.
pub fn analytic_gradients<F>(store: &ParameterStore, f: &F) -> Result<Gradients>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    tape.backward(out)
}

pub fn evaluate<F>(store: &ParameterStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape)?;
    Ok(tape.scalar(out))
}

pub fn grad_check<F>(store: &ParameterStore, f: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &f)?;
    compare_gradients(store, &f, &analytic, step, tolerance)
}

/// Compares supplied analytic gradients against central differences of `f`.
/// Frozen parameters are skipped; parameters absent from the tape count as
/// having zero analytic gradient.
pub fn compare_gradients<F>(
    store: &ParameterStore,
    f: &F,
    analytic: &Gradients,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
        tolerance,
        passed: true,
    };
    for index in 0..store.len() {
        let (name, p) = store.by_index(index);
        if p.frozen {
            continue;
        }
        let grads = analytic.get(index);
        for i in 0..p.value.len() {
            let original = p.value.values()[i];
            probe.by_index_mut(index).1.value.values_mut()[i] = original + step;
            let plus = evaluate(&probe, f)?;
            probe.by_index_mut(index).1.value.values_mut()[i] = original - step;
            let minus = evaluate(&probe, f)?;
            probe.by_index_mut(index).1.value.values_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grads.map_or(0.0, |g| g[i]);
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_param = Some(name.to_string());
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error.is_finite() && report.max_rel_error < tolerance;
    Ok(report)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}
