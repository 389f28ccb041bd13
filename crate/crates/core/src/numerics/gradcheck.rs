//! Central finite-difference gradient checking against the tape.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Builds a scalar from leaf variables on a fresh graph.
pub trait ScalarFn: Fn(&mut Graph, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph, &[Var]) -> Result<Var>> ScalarFn for F {}

pub fn eval(f: &impl ScalarFn, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

pub fn analytic(f: &impl ScalarFn, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect())
}

pub fn numeric(f: &impl ScalarFn, inputs: &[Tensor], h: f64) -> Result<Vec<Vec<f64>>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; inputs[i].numel()];
        for (j, slot) in gi.iter_mut().enumerate() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(f, &work)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(f, &work)?;
            work[i].data_mut()[j] = x0;
            *slot = (fp - fm) / (2.0 * h);
        }
        out.push(gi);
    }
    Ok(out)
}

/// ‖a − n‖ / max(‖a‖, ‖n‖, 1e-12) over all inputs jointly.
pub fn relative_error(a: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().flatten().zip(n.iter().flatten()) {
        diff += (x - y) * (x - y);
        na += x * x;
        nn += y * y;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12)
}

pub fn check(f: &impl ScalarFn, inputs: &[Tensor], h: f64) -> Result<f64> {
    let a = analytic(f, inputs)?;
    let n = numeric(f, inputs, h)?;
    Ok(relative_error(&a, &n))
}
