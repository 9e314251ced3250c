//! Central finite-difference gradient checking.
//!
//! The checked objective is `L = Σ wᵢ·yᵢ` over the output `y` of the graph
//! built by the caller, with fixed projection weights `w`. The analytic side
//! seeds backward with `w`; the numeric side only ever runs forward passes.

use super::{Graph, Tensor4, Var};
use crate::error::{Error, Result};

/// Magnitudes below this floor are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares analytic and numeric gradients of every element of every input.
pub fn check_gradients<F>(
    inputs: &[Tensor4<f64>],
    projection: &[f64],
    delta: f64,
    build: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let objective = |inputs: &[Tensor4<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let y = g.value(out).data();
        if y.len() != projection.len() {
            return Err(Error::input(format!(
                "gradient check: projection of {} weights for {} outputs",
                projection.len(),
                y.len()
            )));
        }
        Ok(y.iter().zip(projection).map(|(a, b)| a * b).sum())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()))
        .collect();
    let out = build(&mut g, &vars)?;
    g.backward_with(out, projection.to_vec())?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.shape().len()])
        })
        .collect();

    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        for ei in 0..grads.len() {
            let orig = probe[ti].data()[ei];
            probe[ti].data_mut()[ei] = orig + delta;
            let up = objective(&probe)?;
            probe[ti].data_mut()[ei] = orig - delta;
            let down = objective(&probe)?;
            probe[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * delta);
            let err = relative_error(grads[ei], numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ei);
                report.analytic = grads[ei];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
