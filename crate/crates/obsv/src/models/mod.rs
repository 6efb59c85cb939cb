//! Benchmark models: the four-tank reactor process, seeded linear systems
//! with exhaustively verified observability ground truth, and a synthetic
//! large-network generator for scalability runs.

pub mod four_cstr;
pub mod linear;
pub mod synthetic;

pub use four_cstr::{
    four_cstr_catalog, four_cstr_continuous, four_cstr_model, four_cstr_rhs, nominal_inputs,
    FourCstrParams, DEFAULT_DT, NOMINAL_STEADY_STATE,
};
pub use linear::{make_linear_benchmark, LinearBenchmark, LinearBenchmarkSpec};
pub use synthetic::{make_synthetic_network, Nonlinearity, SyntheticNetwork, SyntheticNetworkSpec};

use nalgebra::DVector;

use crate::dynamics::{fd_jacobian, ContinuousModel, JacobianConfig};
use crate::error::{Error, Result};

/// Damped-Newton root of `rhs(x, u) = 0` starting from `x_init`.
///
/// Convergence is measured on the scaled residual
/// `max_j |rhs_j| / max(|x_j|, 1)`. On failure the error carries the best
/// iterate's residual so callers can diagnose a bad initial guess.
pub fn steady_state_solve(
    model: &ContinuousModel,
    u: &DVector<f64>,
    x_init: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let scaled_residual = |x: &DVector<f64>, r: &DVector<f64>| {
        r.iter()
            .zip(x.iter())
            .map(|(ri, xi)| ri.abs() / xi.abs().max(1.0))
            .fold(0.0, f64::max)
    };

    let mut x = x_init.clone();
    let mut r = model.rhs(&x, u);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "right-hand side is not finite at the initial guess".into(),
        ));
    }
    let mut res = scaled_residual(&x, &r);
    let max_iter = 100;

    for _ in 0..max_iter {
        if res < tol {
            return Ok(x);
        }
        let jac = {
            let u = u.clone();
            fd_jacobian(|xx| model.rhs(xx, &u), &x, &JacobianConfig::default())?
        };
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| {
            Error::Numeric(format!(
                "singular Jacobian in steady-state solve (residual {res:.3e})"
            ))
        })?;

        // Backtracking line search on the scaled residual.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let x_try = &x + &step * lambda;
            let r_try = model.rhs(&x_try, u);
            if r_try.iter().all(|v| v.is_finite()) {
                let res_try = scaled_residual(&x_try, &r_try);
                if res_try < res {
                    x = x_try;
                    r = r_try;
                    res = res_try;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::Numeric(format!(
                "steady-state solve stalled at scaled residual {res:.3e}"
            )));
        }
    }
    if res < tol {
        Ok(x)
    } else {
        Err(Error::Numeric(format!(
            "steady-state solve did not converge: residual {res:.3e} after {max_iter} iterations"
        )))
    }
}
