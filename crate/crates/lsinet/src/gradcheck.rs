//! Central finite-difference gradient checking. Used by the test suite and
//! the `gradcheck` CLI subcommand. Checks run at f64; the loss closure
//! rebuilds its graph from the current leaf values on every call, so bumping
//! a coordinate and re-running gives an independent numeric derivative.

use crate::error::Result;
use crate::tensor::Tensor;

pub const FD_EPSILON: f64 = 1e-5;
/// Per-op tolerance on random inputs.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Whole-model tolerance (longer chains accumulate more float noise).
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// "param[i]: analytic vs numeric" for the worst coordinate.
    pub worst: String,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Compares analytic gradients of `loss_fn` w.r.t. every coordinate of every
/// leaf in `params` against central differences. `loss_fn` must read the
/// leaves' current values and return a scalar loss tensor.
pub fn check_params<F>(
    params: &[(String, Tensor<f64>)],
    mut loss_fn: F,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|(_, p)| p.grad_or_zeros()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        coords_checked: 0,
    };
    for (pi, (name, p)) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + eps;
            let up = loss_fn()?.item()?;
            p.data_mut()[i] = orig - eps;
            let down = loss_fn()?.item()?;
            p.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi][i];
            let e = rel_err(a, numeric);
            report.coords_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!("{name}[{i}]: analytic {a} vs numeric {numeric}");
            }
        }
    }
    Ok(report)
}
