//! Gradient verification against central finite differences.
//!
//! The finite-difference side only ever evaluates the function forward, so it
//! is independent of the backward pass it is checking. The second-order mode
//! verifies double backpropagation: it differentiates the Euclidean norm of
//! the gradient and compares against nested central differences, where the
//! inner gradient is itself a finite-difference estimate.

use super::{grad, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradOrder {
    First,
    Second,
}

/// Maximum over all coordinates of `|ad - fd| / (|fd| + 1e-8)`.
///
/// `f` must be deterministic given its parameters. `step` is the central
/// difference step and must lie in `[1e-6, 1e-3]`.
pub fn finite_difference_check<F>(
    f: &F,
    params: &[Tensor],
    step: f64,
    order: GradOrder,
) -> Result<f64>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::config(format!(
            "finite-difference step {step} outside [1e-6, 1e-3]"
        )));
    }
    match order {
        GradOrder::First => {
            let ad = autodiff_gradient(f, params)?;
            let fd = fd_gradient(&|p| eval(f, p), params, step)?;
            Ok(max_relative_error(&ad, &fd))
        }
        GradOrder::Second => {
            // Autodiff route: gradient of the gradient norm, via create-graph.
            let leaves: Vec<Var> = params.iter().map(|t| Var::leaf(t.clone())).collect();
            let refs: Vec<&Var> = leaves.iter().collect();
            let out = f(&leaves)?;
            require_finite_scalar(&out)?;
            let inner = grad(&out, &refs, true)?;
            let mut sq_sum = Var::scalar(0.0);
            for g in &inner {
                sq_sum = sq_sum.add(&g.square().sum())?;
            }
            let norm = sq_sum.sqrt();
            let ad = grad(&norm, &refs, false)?
                .iter()
                .flat_map(|g| g.value().data().to_vec())
                .collect::<Vec<f64>>();

            // Oracle route: nested central differences, no backward pass at all.
            let grad_norm = |p: &[Tensor]| -> Result<f64> {
                let g = fd_gradient(&|q| eval(f, q), p, step)?;
                Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
            };
            let fd = fd_gradient(&grad_norm, params, step)?;
            Ok(max_relative_error(&ad, &fd))
        }
    }
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let vars: Vec<Var> = params.iter().map(|t| Var::constant(t.clone())).collect();
    let out = f(&vars)?;
    require_finite_scalar(&out)?;
    out.value().item()
}

fn require_finite_scalar(out: &Var) -> Result<()> {
    if out.value().numel() != 1 {
        return Err(Error::BadShape {
            op: "finite_difference_check",
            expected: "a scalar-valued function".to_string(),
            got: out.shape().to_vec(),
        });
    }
    if !out.value().all_finite() {
        return Err(Error::NonFinite {
            op: "finite_difference_check target".to_string(),
        });
    }
    Ok(())
}

fn autodiff_gradient<F>(f: &F, params: &[Tensor]) -> Result<Vec<f64>>
where
    F: Fn(&[Var]) -> Result<Var>,
{
    let leaves: Vec<Var> = params.iter().map(|t| Var::leaf(t.clone())).collect();
    let refs: Vec<&Var> = leaves.iter().collect();
    let out = f(&leaves)?;
    require_finite_scalar(&out)?;
    let grads = grad(&out, &refs, false)?;
    Ok(grads
        .iter()
        .flat_map(|g| g.value().data().to_vec())
        .collect())
}

/// Central differences of a scalar function, flattened over all coordinates.
fn fd_gradient<G>(g: &G, params: &[Tensor], step: f64) -> Result<Vec<f64>>
where
    G: Fn(&[Tensor]) -> Result<f64>,
{
    let mut out = Vec::new();
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + step;
            let plus = g(&work)?;
            work[pi].data_mut()[ci] = orig - step;
            let minus = g(&work)?;
            work[pi].data_mut()[ci] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    op: "finite_difference_check probe".to_string(),
                });
            }
            out.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(out)
}

fn max_relative_error(ad: &[f64], fd: &[f64]) -> f64 {
    ad.iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / (f.abs() + 1e-8))
        .fold(0.0, f64::max)
}
