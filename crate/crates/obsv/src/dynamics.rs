//! Discrete-time models and state-to-initial-state sensitivity propagation.
//!
//! A [`DiscreteModel`] wraps a black-box transition map `x(k+1) = f(x(k), u(k))`.
//! Continuous models are turned into discrete ones with a fixed-step classical
//! Runge-Kutta scheme ([`rk4_discretize`]), holding the input constant over
//! each step. Sensitivities of the state with respect to the initial state are
//! propagated along a nominal trajectory by chaining per-step Jacobians:
//!
//! ```text
//! S_x(0) = I,    S_x(k+1) = (df/dx)(x(k), u(k)) * S_x(k)
//! ```
//!
//! Jacobians are computed by central finite differences so that arbitrary
//! user-supplied models work without hand-coded derivatives.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Shared function type for transition maps and right-hand sides:
/// `(state, input) -> state-sized vector`.
pub type DynFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A discrete-time state-transition model with scalar-free dimensions.
#[derive(Clone)]
pub struct DiscreteModel {
    pub n_states: usize,
    pub n_inputs: usize,
    /// Sampling interval, informational (time units of the source model).
    pub dt: f64,
    transition: DynFn,
}

impl DiscreteModel {
    pub fn new<F>(n_states: usize, n_inputs: usize, dt: f64, transition: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        DiscreteModel {
            n_states,
            n_inputs,
            dt,
            transition: Arc::new(transition),
        }
    }

    /// Evaluate the raw transition map without finiteness checks.
    pub fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.transition)(x, u)
    }
}

impl std::fmt::Debug for DiscreteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteModel")
            .field("n_states", &self.n_states)
            .field("n_inputs", &self.n_inputs)
            .field("dt", &self.dt)
            .finish()
    }
}

/// A continuous-time model `dx/dt = rhs(x, u)`, the input to [`rk4_discretize`].
#[derive(Clone)]
pub struct ContinuousModel {
    pub n_states: usize,
    pub n_inputs: usize,
    rhs: DynFn,
}

impl std::fmt::Debug for ContinuousModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousModel")
            .field("n_states", &self.n_states)
            .field("n_inputs", &self.n_inputs)
            .finish()
    }
}

impl ContinuousModel {
    pub fn new<F>(n_states: usize, n_inputs: usize, rhs: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ContinuousModel {
            n_states,
            n_inputs,
            rhs: Arc::new(rhs),
        }
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.rhs)(x, u)
    }
}

/// A simulated state/input history: `states[k]`, k = 0..=K and `inputs[k]`,
/// k = 0..K, with `states.len() == inputs.len() + 1`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Number of steps K (one less than the number of stored states).
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Number of stored samples, K + 1.
    pub fn samples(&self) -> usize {
        self.states.len()
    }
}

/// Step-size rule for finite-difference Jacobians. Column `j` perturbs state
/// `j` by `max(relative_step * |x_j|, absolute_floor)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JacobianConfig {
    pub relative_step: f64,
    pub absolute_floor: f64,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        JacobianConfig {
            relative_step: 1e-6,
            absolute_floor: 1e-9,
        }
    }
}

impl JacobianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_step > 0.0) || !(self.absolute_floor > 0.0) {
            return Err(Error::InvalidArgument(
                "jacobian steps must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn step_for(&self, xj: f64) -> f64 {
        (self.relative_step * xj.abs()).max(self.absolute_floor)
    }
}

/// Discretize a continuous model with one classical fourth-order Runge-Kutta
/// step of length `dt` per sample, holding the input constant over the step.
pub fn rk4_discretize(model: &ContinuousModel, dt: f64) -> Result<DiscreteModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rk4 step size must be positive and finite, got {dt}"
        )));
    }
    let rhs = model.rhs.clone();
    let transition = move |x: &DVector<f64>, u: &DVector<f64>| -> DVector<f64> {
        let k1 = rhs(x, u);
        let k2 = rhs(&(x + &k1 * (dt / 2.0)), u);
        let k3 = rhs(&(x + &k2 * (dt / 2.0)), u);
        let k4 = rhs(&(x + &k3 * dt), u);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    };
    Ok(DiscreteModel::new(
        model.n_states,
        model.n_inputs,
        dt,
        transition,
    ))
}

fn first_nonfinite(x: &DVector<f64>) -> Option<usize> {
    x.iter().position(|v| !v.is_finite())
}

/// Roll the model forward from `x0` through the given per-step inputs.
/// The trajectory is deterministic; noise injection lives in the estimation
/// layer.
pub fn simulate(
    model: &DiscreteModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Trajectory> {
    if x0.len() != model.n_states {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} components, model expects {}",
            x0.len(),
            model.n_states
        )));
    }
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != model.n_inputs {
            return Err(Error::InvalidArgument(format!(
                "input at step {k} has {} components, model expects {}",
                u.len(),
                model.n_inputs
            )));
        }
    }
    if let Some(state) = first_nonfinite(x0) {
        return Err(Error::IntegrationFailure { step: 0, state });
    }

    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        let next = model.transition(states.last().expect("non-empty"), u);
        if next.len() != model.n_states {
            return Err(Error::InvalidArgument(format!(
                "transition returned {} components at step {k}, expected {}",
                next.len(),
                model.n_states
            )));
        }
        if let Some(state) = first_nonfinite(&next) {
            return Err(Error::IntegrationFailure { step: k + 1, state });
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
    })
}

/// [`simulate`] with the same input vector applied at every step.
pub fn simulate_constant(
    model: &DiscreteModel,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    k_steps: usize,
) -> Result<Trajectory> {
    let inputs = vec![u.clone(); k_steps];
    simulate(model, x0, &inputs)
}

/// Central finite-difference Jacobian of an arbitrary vector map. Shared by
/// [`jacobian_state`], sensor gradients, and the steady-state solver.
pub(crate) fn fd_jacobian<F>(f: F, x: &DVector<f64>, cfg: &JacobianConfig) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    let n = x.len();
    let probe = f(x);
    let m = probe.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for j in 0..n {
        let h = cfg.step_for(x[j]);
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        let fp = f(&xp);
        let fm = f(&xm);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::JacobianFailure {
                column: j + 1,
                detail: "perturbed evaluation is non-finite (admissible-domain violation?)".into(),
            });
        }
        // The realized spread xp[j] - xm[j] is used as the denominator so the
        // quotient is exact for linear maps up to cancellation.
        let dh = xp[j] - xm[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / dh;
        }
        xp[j] = x[j];
        xm[j] = x[j];
    }
    Ok(jac)
}

/// Central finite-difference Jacobian of the transition map with respect to
/// the state, evaluated at `(x, u)`.
pub fn jacobian_state(
    model: &DiscreteModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &JacobianConfig,
) -> Result<DMatrix<f64>> {
    if x.len() != model.n_states || u.len() != model.n_inputs {
        return Err(Error::InvalidArgument(
            "jacobian_state: state/input dimensions do not match the model".into(),
        ));
    }
    fd_jacobian(|xx| model.transition(xx, u), x, cfg)
}

/// Propagate the sensitivity of the state at time k with respect to the
/// initial state along a trajectory. Returns one n-by-n matrix per sample,
/// starting with the identity at k = 0.
pub fn propagate_state_sensitivity(
    model: &DiscreteModel,
    traj: &Trajectory,
    cfg: &JacobianConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let n = model.n_states;
    let mut out = Vec::with_capacity(traj.samples());
    out.push(DMatrix::identity(n, n));
    for k in 0..traj.steps() {
        let jac = jacobian_state(model, &traj.states[k], &traj.inputs[k], cfg)?;
        let next = &jac * out.last().expect("non-empty");
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn empty_input() -> DVector<f64> {
        DVector::zeros(0)
    }

    fn linear_model(a: DMatrix<f64>) -> DiscreteModel {
        let n = a.nrows();
        DiscreteModel::new(n, 0, 1.0, move |x, _| &a * x)
    }

    /// Matrix exponential by scaling and squaring with a Taylor series,
    /// used as an independent reference for the RK4 tests.
    fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = a.amax() * n as f64;
        let s = norm.log2().ceil().max(0.0) as u32 + 1;
        let scaled = a / 2f64.powi(s as i32);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = (&term * &scaled) / k as f64;
            sum += &term;
            if term.amax() < 1e-18 {
                break;
            }
        }
        let mut result = sum;
        for _ in 0..s {
            result = &result * &result;
        }
        result
    }

    #[test]
    fn rk4_constant_dynamics_is_a_fixed_point() {
        let model = ContinuousModel::new(3, 0, |x, _| DVector::zeros(x.len()));
        let disc = rk4_discretize(&model, 0.5).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let x1 = disc.transition(&x0, &empty_input());
        assert_eq!(x1, x0);
    }

    #[test]
    fn rk4_scalar_decay_matches_hand_expansion() {
        // dx/dt = -x, dt = 0.1: one step is the quartic Taylor polynomial
        // 1 - h + h^2/2 - h^3/6 + h^4/24 = 0.9048375.
        let model = ContinuousModel::new(1, 0, |x, _| -x.clone());
        let disc = rk4_discretize(&model, 0.1).unwrap();
        let x1 = disc.transition(&DVector::from_element(1, 1.0), &empty_input());
        assert_relative_eq!(x1[0], 0.9048375, max_relative = 1e-12);
    }

    #[test]
    fn rk4_linear_system_tracks_matrix_exponential() {
        let a = DMatrix::from_row_slice(3, 3, &[-0.4, 0.3, 0.0, 0.1, -0.7, 0.2, 0.0, 0.5, -0.9]);
        let dt = 0.05;
        let model = {
            let a = a.clone();
            ContinuousModel::new(3, 0, move |x, _| &a * x)
        };
        let disc = rk4_discretize(&model, dt).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let exact = expm(&(&a * dt)) * &x0;
        let approx = disc.transition(&x0, &empty_input());
        // One-step RK4 error is O(dt^5).
        assert!((exact - approx).norm() < dt.powi(5));
    }

    #[test]
    fn rk4_one_step_error_shrinks_at_fifth_order() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.3, -0.6]);
        let x0 = DVector::from_vec(vec![1.0, 0.7]);
        let model = {
            let a = a.clone();
            ContinuousModel::new(2, 0, move |x, _| &a * x)
        };
        let err = |dt: f64| {
            let disc = rk4_discretize(&model, dt).unwrap();
            let exact = expm(&(&a * dt)) * &x0;
            (exact - disc.transition(&x0, &empty_input())).norm()
        };
        let e1 = err(0.2);
        let e2 = err(0.1);
        let order = (e1 / e2).log2();
        assert!(
            (4.5..=5.5).contains(&order),
            "measured order {order} outside [4.5, 5.5]"
        );
    }

    #[test]
    fn rk4_rejects_nonpositive_dt() {
        let model = ContinuousModel::new(1, 0, |x, _| x.clone());
        assert!(matches!(
            rk4_discretize(&model, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(rk4_discretize(&model, -0.1).is_err());
    }

    #[test]
    fn simulate_zero_steps_keeps_only_the_initial_state() {
        let model = linear_model(DMatrix::identity(2, 2));
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let traj = simulate(&model, &x0, &[]).unwrap();
        assert_eq!(traj.samples(), 1);
        assert_eq!(traj.steps(), 0);
        assert_eq!(traj.states[0], x0);
    }

    #[test]
    fn simulate_identity_transition_is_constant() {
        let model = linear_model(DMatrix::identity(3, 3));
        let x0 = DVector::from_vec(vec![1.0, -4.0, 2.0]);
        let traj = simulate_constant(&model, &x0, &empty_input(), 5).unwrap();
        assert_eq!(traj.samples(), 6);
        for s in &traj.states {
            assert_eq!(s, &x0);
        }
    }

    #[test]
    fn simulate_reports_the_step_that_diverged() {
        // Doubling map overflows to infinity after enough steps.
        let model = DiscreteModel::new(1, 0, 1.0, |x, _| x * 1e200);
        let x0 = DVector::from_element(1, 1.0);
        let err = simulate_constant(&model, &x0, &empty_input(), 5).unwrap_err();
        match err {
            Error::IntegrationFailure { step, state } => {
                assert_eq!(step, 2);
                assert_eq!(state, 0);
            }
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn jacobian_of_linear_map_recovers_the_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, -0.2, 0.0, 0.3, 0.8, -0.5, 0.0, 0.1, 0.7]);
        let model = linear_model(a.clone());
        let x = DVector::from_vec(vec![1.0, 1.1, 0.9]);
        // A linear map has no truncation error, so a wider step only reduces
        // cancellation noise.
        let cfg = JacobianConfig {
            relative_step: 1e-5,
            absolute_floor: 1e-9,
        };
        let jac = jacobian_state(&model, &x, &empty_input(), &cfg).unwrap();
        let scale = a.amax();
        assert!((&jac - &a).amax() <= 1e-10 * scale, "residual {}", (jac - a).amax());
        // The default step rule is within an order of magnitude of that.
        let jac_default =
            jacobian_state(&model, &x, &empty_input(), &JacobianConfig::default()).unwrap();
        assert!((&jac_default - &a).amax() <= 1e-9 * scale);
    }

    #[test]
    fn jacobian_of_identity_is_identity() {
        let model = linear_model(DMatrix::identity(4, 4));
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let jac = jacobian_state(&model, &x, &empty_input(), &JacobianConfig::default()).unwrap();
        assert_relative_eq!(jac, DMatrix::identity(4, 4), max_relative = 1e-10);
    }

    #[test]
    fn jacobian_of_scalar_square_matches_analytic_derivative() {
        let model = DiscreteModel::new(1, 0, 1.0, |x, _| {
            DVector::from_element(1, x[0] * x[0])
        });
        let x = DVector::from_element(1, 3.0);
        let jac = jacobian_state(&model, &x, &empty_input(), &JacobianConfig::default()).unwrap();
        assert_relative_eq!(jac[(0, 0)], 6.0, max_relative = 1e-6);
    }

    #[test]
    fn jacobian_names_the_offending_column() {
        // sqrt is non-finite when the second component is perturbed negative.
        let model = DiscreteModel::new(2, 0, 1.0, |x, _| {
            DVector::from_vec(vec![x[0], x[1].sqrt()])
        });
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let err =
            jacobian_state(&model, &x, &empty_input(), &JacobianConfig::default()).unwrap_err();
        match err {
            Error::JacobianFailure { column, .. } => assert_eq!(column, 2),
            other => panic!("expected jacobian failure, got {other:?}"),
        }
    }

    #[test]
    fn sensitivity_of_lti_model_is_the_matrix_power() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]);
        let model = linear_model(a.clone());
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let traj = simulate_constant(&model, &x0, &empty_input(), 6).unwrap();
        let s_x = propagate_state_sensitivity(&model, &traj, &JacobianConfig::default()).unwrap();
        assert_relative_eq!(s_x[0], DMatrix::identity(2, 2), max_relative = 1e-12);
        let mut power = DMatrix::identity(2, 2);
        for k in 1..=6 {
            power = &a * power;
            assert_relative_eq!(s_x[k], power, max_relative = 1e-8);
        }
    }

    #[test]
    fn sensitivity_semigroup_property_holds_for_lti() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.1, 0.9]);
        let model = linear_model(a);
        let x0 = DVector::from_vec(vec![2.0, -1.0]);
        let traj = simulate_constant(&model, &x0, &empty_input(), 8).unwrap();
        let s_x = propagate_state_sensitivity(&model, &traj, &JacobianConfig::default()).unwrap();

        // Restart the recursion at k = 3 and propagate 5 more steps.
        let restart = Trajectory {
            states: traj.states[3..].to_vec(),
            inputs: traj.inputs[3..].to_vec(),
        };
        let s_restart =
            propagate_state_sensitivity(&model, &restart, &JacobianConfig::default()).unwrap();
        let composed = &s_restart[5] * &s_x[3];
        assert_relative_eq!(composed, s_x[8], max_relative = 1e-9);
    }

    #[test]
    fn sensitivity_matches_perturbation_oracle_on_nonlinear_model() {
        // Mildly nonlinear planar system.
        let model = DiscreteModel::new(2, 0, 1.0, |x, _| {
            DVector::from_vec(vec![
                0.9 * x[0] + 0.1 * x[1] * x[1],
                0.8 * x[1] - 0.05 * x[0] * x[1],
            ])
        });
        let x0 = DVector::from_vec(vec![1.0, 0.5]);
        let k_steps = 20;
        let traj = simulate_constant(&model, &x0, &empty_input(), k_steps).unwrap();
        let s_x = propagate_state_sensitivity(&model, &traj, &JacobianConfig::default()).unwrap();

        // Two-sided perturbation of each initial component.
        for j in 0..2 {
            let delta = 1e-5 * x0[j].abs().max(1.0);
            let mut xp = x0.clone();
            xp[j] += delta;
            let mut xm = x0.clone();
            xm[j] -= delta;
            let tp = simulate_constant(&model, &xp, &empty_input(), k_steps).unwrap();
            let tm = simulate_constant(&model, &xm, &empty_input(), k_steps).unwrap();
            for k in 0..=k_steps {
                for i in 0..2 {
                    let fd = (tp.states[k][i] - tm.states[k][i]) / (2.0 * delta);
                    let got = s_x[k][(i, j)];
                    let tol = (1e-4 * fd.abs()).max(1e-7);
                    assert!(
                        (fd - got).abs() <= tol,
                        "S_x({k})[{i},{j}] = {got} vs oracle {fd}"
                    );
                }
            }
        }
    }
}
