//! Fixed-step RK4 discretization: build a discrete model from continuous
//! balances and check the one-step accuracy order on a linear system.
//!
//! ```bash
//! cargo run --release -p obsv --example rk4_integrator
//! ```

use nalgebra::{DMatrix, DVector};
use obsv::dynamics::{rk4_discretize, simulate_constant, ContinuousModel};
use obsv::models::{
    four_cstr_continuous, nominal_inputs, steady_state_solve, FourCstrParams, DEFAULT_DT,
    NOMINAL_STEADY_STATE,
};

/// Matrix exponential by scaling and squaring (reference solution).
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let s = (a.amax() * n as f64).log2().ceil().max(0.0) as i32 + 1;
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = (&term * &scaled) / k as f64;
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn main() {
    // Order check: one RK4 step against the matrix exponential.
    let a = DMatrix::from_row_slice(3, 3, &[-0.4, 0.3, 0.0, 0.1, -0.7, 0.2, 0.0, 0.5, -0.9]);
    let x0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let model = {
        let a = a.clone();
        ContinuousModel::new(3, 0, move |x, _| &a * x)
    };
    println!("one-step error against exp(A dt), halving dt:");
    let mut last: Option<f64> = None;
    for i in 0..5 {
        let dt = 0.4 / 2f64.powi(i);
        let disc = rk4_discretize(&model, dt).unwrap();
        let err = (expm(&(&a * dt)) * &x0 - disc.transition(&x0, &DVector::zeros(0))).norm();
        let order = last.map(|p: f64| (p / err).log2());
        println!(
            "  dt = {dt:7.4}  error = {err:10.3e}  measured order = {}",
            order.map_or("-".into(), |o| format!("{o:.2}"))
        );
        last = Some(err);
    }

    // The reactor benchmark holds its steady state under the nominal inputs.
    let p = FourCstrParams::default();
    let continuous = four_cstr_continuous(&p);
    let u = nominal_inputs(&p);
    let xs = steady_state_solve(
        &continuous,
        &u,
        &DVector::from_row_slice(&NOMINAL_STEADY_STATE),
        1e-10,
    )
    .unwrap();
    let disc = rk4_discretize(&continuous, DEFAULT_DT).unwrap();
    let traj = simulate_constant(&disc, &xs, &u, 240).unwrap();
    let drift = traj
        .states
        .iter()
        .map(|x| {
            (0..8)
                .map(|j| ((x[j] - xs[j]) / xs[j]).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    println!("\nfour-tank benchmark: 240 steps from the steady state");
    println!("  worst relative drift = {drift:.2e}");
}
