//! Central finite-difference gradient checking against the tape.

use crate::error::Result;
use crate::graph::{DiffGraph, Var};
use crate::tensor::Tensor;

/// Result of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over all checked elements of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    /// Same measure restricted to each input, in argument order.
    pub per_input: Vec<f64>,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut DiffGraph, Var) -> Result<Var>,
{
    let report = finite_diff_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}

/// Checks the gradient of a scalar function with respect to every element of
/// every input. `f` receives one tape variable per input and returns the scalar.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut DiffGraph, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut graph = DiffGraph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let out = f(&mut graph, &vars)?;
    let grads = graph.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = DiffGraph::new();
        let vs: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vs)?;
        Ok(g.value(out).item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
    })
}
