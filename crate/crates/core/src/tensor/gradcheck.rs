//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it verifies.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub relative: f64,
    pub absolute: f64,
}

impl Tolerance {
    pub const PER_OP: Tolerance = Tolerance {
        step: 1e-3,
        relative: 1e-4,
        absolute: 1e-6,
    };

    pub const END_TO_END: Tolerance = Tolerance {
        step: 1e-3,
        relative: 1e-3,
        absolute: 1e-6,
    };

    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= self.absolute || diff <= self.relative * analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl Report {
    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            return 1.0;
        }
        1.0 - self.mismatches.len() as f64 / self.checked as f64
    }

    pub fn all_pass(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Checks `f` with respect to every coordinate of every input tensor.
pub fn check_inputs<F>(inputs: &[Tensor], tol: Tolerance, f: F) -> Result<Report>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = Report::default();
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for c in 0..inputs[i].numel() {
            let orig = inputs[i].data()[c];
            work[i].data_mut()[c] = orig + tol.step;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - tol.step;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            report.checked += 1;
            if !tol.accepts(analytic[c], numeric) {
                report.mismatches.push(Mismatch {
                    input: i,
                    coord: c,
                    analytic: analytic[c],
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Checks a loss built from a [`ParamStore`]. `f` receives the graph, the
/// store, and whether parameters should be registered as trainable.
pub fn check_params<F>(store: &ParamStore, tol: Tolerance, f: F) -> Result<Report>
where
    F: Fn(&mut Graph, &ParamStore, bool) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store, true)?;
    let grads = g.backward(loss)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    grads.accumulate_into(&mut analytic);

    let mut work = store.clone();
    let mut report = Report::default();
    for id in store.ids() {
        for c in 0..store.value(id).numel() {
            let orig = store.value(id).data()[c];
            work.value_mut(id).data_mut()[c] = orig + tol.step;
            let plus = eval_store(&work, &f)?;
            work.value_mut(id).data_mut()[c] = orig - tol.step;
            let minus = eval_store(&work, &f)?;
            work.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * tol.step);
            let a = analytic.grad(id).data()[c];
            report.checked += 1;
            if !tol.accepts(a, numeric) {
                report.mismatches.push(Mismatch {
                    input: id.index(),
                    coord: c,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

fn eval_store<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore, bool) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store, false)?;
    Ok(g.value(out).item())
}
