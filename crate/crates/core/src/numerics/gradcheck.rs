//! Central finite-difference verification of taped gradients.

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub evaluations: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval_scalar<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::contract(format!(
            "grad_check fragment must return a scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Analytic gradients of `f` with respect to every parameter in `store`.
pub fn analytic_gradients<F>(store: &ParamStore, f: &F) -> Result<Gradients>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    Ok(store.gradients_of(&g))
}

/// Compare `analytic` against central differences of `f` with step `h`.
pub fn compare_gradients<F>(
    store: &ParamStore,
    f: &F,
    analytic: &Gradients,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut probe = store.clone();
    let mut params = Vec::new();
    let mut evaluations = 0;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for (idx, name) in names.iter().enumerate() {
        if store.get(name).is_some_and(|p| p.frozen) {
            continue;
        }
        let grad = &analytic.0[idx];
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..grad.len() {
            let orig = store.get(name).expect("name from store").value.data()[k];
            probe.get_mut(name).unwrap().value.data_mut()[k] = orig + h;
            let up = eval_scalar(f, &probe)?;
            probe.get_mut(name).unwrap().value.data_mut()[k] = orig - h;
            let down = eval_scalar(f, &probe)?;
            probe.get_mut(name).unwrap().value.data_mut()[k] = orig;
            evaluations += 2;

            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`[{k}]")));
            }
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || k == 0 {
                check.max_rel_error = err;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport {
        params,
        tolerance,
        evaluations,
    })
}

/// Check the taped gradients of the scalar fragment `f` against central
/// differences, reporting the worst relative error per parameter.
pub fn grad_check<F>(store: &ParamStore, f: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &f)?;
    compare_gradients(store, &f, &analytic, FD_STEP, tolerance)
}
