//! Noisy simulation, extended Kalman filtering, and the error metrics used to
//! validate sensor subsets.
//!
//! The truth trajectory follows `x(k+1) = f(x(k), u(k)) + w(k)` with
//! measurements `y_i(k) = h_i(x(k)) + v_i(k)`; both noises are independent
//! zero-mean Gaussians from one seeded generator so a run is reproducible
//! bit for bit. The filter linearizes the transition with the same
//! finite-difference Jacobians used by the sensitivity pipeline, updates in
//! Joseph form and re-symmetrizes the covariance every step.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{jacobian_state, DiscreteModel, Trajectory};
use crate::error::{Error, Result};
use crate::observability::AnalysisContext;
use crate::sensitivity::SensorCatalog;

/// Per-state process and per-sensor measurement noise levels plus the
/// generator seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub process_std: DVector<f64>,
    /// Indexed by sensor id - 1 over the full catalog.
    pub measurement_std: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.process_std.iter().any(|s| *s < 0.0)
            || self.measurement_std.iter().any(|s| *s < 0.0)
        {
            return Err(Error::InvalidArgument(
                "noise standard deviations must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Noise proportional to reference magnitudes: `factor * |x_ref|` per
    /// state and `factor * |y_ref|` per sensor.
    pub fn relative(x_ref: &DVector<f64>, y_ref: &[f64], factor: f64, seed: u64) -> Self {
        NoiseSpec {
            process_std: x_ref.map(|v| factor * v.abs()),
            measurement_std: y_ref.iter().map(|v| factor * v.abs()).collect(),
            seed,
        }
    }

    pub fn zero(n_states: usize, n_sensors: usize, seed: u64) -> Self {
        NoiseSpec {
            process_std: DVector::zeros(n_states),
            measurement_std: vec![0.0; n_sensors],
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One validation run: truth, measurements, filter output and summary
/// metrics for a sensor subset.
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub truth: Trajectory,
    /// One reading vector per sample, ordered by ascending sensor id.
    pub measurements: Vec<DVector<f64>>,
    /// Posterior state estimates, one per sample.
    pub estimates: Vec<DVector<f64>>,
    /// Posterior covariances, one per sample.
    pub covariances: Vec<DMatrix<f64>>,
    pub subset: BTreeSet<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mean_normalized_error: f64,
}

/// Simulate the noisy truth and the subset's measurements. Draw order per
/// step k: measurement noise for each subset sensor in ascending id order,
/// then process noise for each state; the terminal sample draws measurement
/// noise only. Identical seeds reproduce identical outputs.
pub fn simulate_noisy(
    model: &DiscreteModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    catalog: &SensorCatalog,
    subset: &BTreeSet<usize>,
    noise: &NoiseSpec,
) -> Result<(Trajectory, Vec<DVector<f64>>)> {
    noise.validate()?;
    if noise.process_std.len() != model.n_states {
        return Err(Error::InvalidArgument(
            "process noise dimension does not match the model".into(),
        ));
    }
    if noise.measurement_std.len() != catalog.len() {
        return Err(Error::InvalidArgument(
            "measurement noise dimension does not match the catalog".into(),
        ));
    }
    if subset.is_empty() {
        return Err(Error::InvalidArgument("sensor subset is empty".into()));
    }
    for &id in subset {
        catalog.sensor(id)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut draw = |std: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    };

    let k_steps = inputs.len();
    let mut states = Vec::with_capacity(k_steps + 1);
    let mut measurements = Vec::with_capacity(k_steps + 1);
    states.push(x0.clone());

    for k in 0..=k_steps {
        let x_k = states[k].clone();
        let mut y = DVector::zeros(subset.len());
        for (r, &id) in subset.iter().enumerate() {
            let clean = catalog.sensor(id)?.read(&x_k);
            y[r] = clean + draw(noise.measurement_std[id - 1]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "measurement became non-finite at step {k}"
            )));
        }
        measurements.push(y);

        if k < k_steps {
            let mut next = model.transition(&x_k, &inputs[k]);
            for i in 0..next.len() {
                next[i] += draw(noise.process_std[i]);
            }
            if let Some(state) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::IntegrationFailure { step: k + 1, state });
            }
            states.push(next);
        }
    }

    Ok((
        Trajectory {
            states,
            inputs: inputs.to_vec(),
        },
        measurements,
    ))
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let pt = p.transpose();
    *p += pt;
    *p *= 0.5;
}

/// Extended Kalman filter over a recorded measurement sequence.
///
/// `truth` supplies the input sequence and the reference states for the
/// metrics; the filter itself sees only `measurements`, `x0_guess` and the
/// tuning matrices. The innovation covariance receives a tiny
/// diagonal regularization scaled to its own magnitude before inversion.
#[allow(clippy::too_many_arguments)]
pub fn run_ekf(
    model: &DiscreteModel,
    catalog: &SensorCatalog,
    subset: &BTreeSet<usize>,
    truth: &Trajectory,
    measurements: &[DVector<f64>],
    x0_guess: &DVector<f64>,
    q_w: &DMatrix<f64>,
    r_v: &DMatrix<f64>,
    p0: &DMatrix<f64>,
) -> Result<EstimationRun> {
    let n = model.n_states;
    let p = subset.len();
    if measurements.len() != truth.samples() {
        return Err(Error::InvalidArgument(
            "measurement count does not match the trajectory".into(),
        ));
    }
    if q_w.nrows() != n || q_w.ncols() != n || p0.nrows() != n || p0.ncols() != n {
        return Err(Error::InvalidArgument(
            "Q and P0 must be n-by-n".into(),
        ));
    }
    if r_v.nrows() != p || r_v.ncols() != p {
        return Err(Error::InvalidArgument(
            "R must match the subset size".into(),
        ));
    }

    let fd = &catalog.fd;
    let mut x_hat = x0_guess.clone();
    let mut cov = p0.clone();
    let mut estimates = Vec::with_capacity(truth.samples());
    let mut covariances = Vec::with_capacity(truth.samples());
    let identity = DMatrix::<f64>::identity(n, n);

    for k in 0..truth.samples() {
        // Measurement update.
        let mut h = DMatrix::zeros(p, n);
        let mut predicted = DVector::zeros(p);
        for (r, &id) in subset.iter().enumerate() {
            let sensor = catalog.sensor(id)?;
            predicted[r] = sensor.read(&x_hat);
            h.row_mut(r).copy_from(&sensor.gradient_at(&x_hat, fd)?);
        }
        let mut s_innov = &h * &cov * h.transpose() + r_v;
        let jitter = 1e-12 * s_innov.diagonal().amax().max(1.0);
        for i in 0..p {
            s_innov[(i, i)] += jitter;
        }
        let chol = nalgebra::Cholesky::new(s_innov.clone()).ok_or(Error::Numeric(format!(
            "innovation covariance singular at step {k}"
        )))?;
        // K = P H^T S^-1, computed as solving S K^T = H P.
        let kt = chol.solve(&(&h * &cov));
        let gain = kt.transpose();
        let innovation = &measurements[k] - &predicted;
        x_hat += &gain * &innovation;

        // Joseph-form update keeps the covariance positive semidefinite.
        let ikh = &identity - &gain * &h;
        cov = &ikh * &cov * ikh.transpose() + &gain * r_v * gain.transpose();
        symmetrize(&mut cov);

        if x_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "state estimate became non-finite at step {k}"
            )));
        }
        estimates.push(x_hat.clone());
        covariances.push(cov.clone());

        // Time update.
        if k < truth.steps() {
            let u = &truth.inputs[k];
            let f_jac = jacobian_state(model, &x_hat, u, fd)?;
            x_hat = model.transition(&x_hat, u);
            if x_hat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "state prediction became non-finite at step {}",
                    k + 1
                )));
            }
            cov = &f_jac * &cov * f_jac.transpose() + q_w;
            symmetrize(&mut cov);
        }
    }

    let mut run = EstimationRun {
        truth: truth.clone(),
        measurements: measurements.to_vec(),
        estimates,
        covariances,
        subset: subset.clone(),
        metrics: Metrics {
            rmse: 0.0,
            mean_normalized_error: 0.0,
        },
    };
    run.metrics = Metrics {
        rmse: rmse(&run),
        mean_normalized_error: mean_normalized_error(&run),
    };
    Ok(run)
}

/// Root of the mean squared estimation error over all samples and states
/// (raw units, no normalization).
pub fn rmse(run: &EstimationRun) -> f64 {
    let n = run.truth.states[0].len();
    let samples = run.truth.samples();
    let sum: f64 = run
        .estimates
        .iter()
        .zip(run.truth.states.iter())
        .map(|(e, t)| (e - t).norm_squared())
        .sum();
    (sum / (samples * n) as f64).sqrt()
}

/// Mean over samples of the per-sample normalized error
/// `e(k) = sqrt(sum_i ((xhat_i(k) - x_i(k)) / max_k |xhat_i - x_i|)^2)`.
/// A state whose error is identically zero contributes zero.
pub fn mean_normalized_error(run: &EstimationRun) -> f64 {
    let n = run.truth.states[0].len();
    let samples = run.truth.samples();
    let mut max_err = vec![0.0f64; n];
    for (e, t) in run.estimates.iter().zip(run.truth.states.iter()) {
        for i in 0..n {
            max_err[i] = max_err[i].max((e[i] - t[i]).abs());
        }
    }
    let mut total = 0.0;
    for (e, t) in run.estimates.iter().zip(run.truth.states.iter()) {
        let mut sq = 0.0;
        for i in 0..n {
            if max_err[i] > 0.0 {
                let z = (e[i] - t[i]) / max_err[i];
                sq += z * z;
            }
        }
        total += sq.sqrt();
    }
    total / samples as f64
}

/// One row of a subset-validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub subset: Vec<usize>,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_normalized_error: f64,
    pub degree: f64,
    pub rank: usize,
    pub runs: usize,
    pub failed_runs: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derive an independent stream seed from a base seed and
/// two indices; used so parallel runs never share or race a generator.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(base ^ splitmix64(a.wrapping_add(splitmix64(b))))
}

/// Filter configuration for a validation campaign: initial guess, tuning
/// matrices and the metric evaluation window.
#[derive(Debug, Clone)]
pub struct EkfSetup {
    pub x0_guess: DVector<f64>,
    pub q_w: DMatrix<f64>,
    pub p0: DMatrix<f64>,
    /// Samples excluded from the metrics (initial-transient warmup). Zero
    /// evaluates the whole run.
    pub warmup: usize,
}

impl EkfSetup {
    /// Tuning derived from magnitudes around an operating point: the filter
    /// assumes `process_rel` relative process noise and `p0_rel` relative
    /// initial uncertainty.
    pub fn from_operating_point(
        x0: &DVector<f64>,
        guess_factor: f64,
        process_rel: f64,
        p0_rel: f64,
        warmup: usize,
    ) -> Self {
        let q_w = DMatrix::from_diagonal(&x0.map(|v| {
            let s = process_rel * v.abs();
            s * s
        }));
        let p0 = DMatrix::from_diagonal(&x0.map(|v| {
            let s = p0_rel * v.abs();
            s * s
        }));
        EkfSetup {
            x0_guess: x0 * guess_factor,
            q_w,
            p0,
            warmup,
        }
    }
}

/// Metrics restricted to samples at and after `warmup`.
pub fn windowed_metrics(run: &EstimationRun, warmup: usize) -> Result<Metrics> {
    if warmup >= run.truth.samples() {
        return Err(Error::InvalidArgument(format!(
            "warmup {warmup} consumes the whole run of {} samples",
            run.truth.samples()
        )));
    }
    if warmup == 0 {
        return Ok(run.metrics);
    }
    let windowed = EstimationRun {
        truth: Trajectory {
            states: run.truth.states[warmup..].to_vec(),
            inputs: run.truth.inputs[warmup.min(run.truth.inputs.len())..].to_vec(),
        },
        measurements: run.measurements[warmup..].to_vec(),
        estimates: run.estimates[warmup..].to_vec(),
        covariances: run.covariances[warmup..].to_vec(),
        subset: run.subset.clone(),
        metrics: run.metrics,
    };
    Ok(Metrics {
        rmse: rmse(&windowed),
        mean_normalized_error: mean_normalized_error(&windowed),
    })
}

/// Validate a panel of sensor subsets: for each subset run `runs_per_subset`
/// seeded EKF runs against freshly simulated truths and report mean/std RMSE
/// next to the subset's degree of observability. Rows are sorted by mean
/// RMSE ascending; failed runs are counted rather than fatal, and a subset
/// whose runs all failed sorts last with infinite error.
///
/// Run j of every subset shares one truth realization (common random
/// numbers), with measurement noise drawn for the full catalog and
/// sliced per subset, so subsets are compared on identical experiments.
/// Measurement covariance is `diag(measurement_std^2)` from the noise
/// specification; process/initial covariance and the evaluation window come
/// from `setup`.
#[allow(clippy::too_many_arguments)]
pub fn subset_comparison(
    model: &DiscreteModel,
    catalog: &SensorCatalog,
    subsets: &[BTreeSet<usize>],
    runs_per_subset: usize,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: &NoiseSpec,
    setup: &EkfSetup,
    ctx: &AnalysisContext,
) -> Result<Vec<ComparisonRow>> {
    noise.validate()?;
    if runs_per_subset == 0 {
        return Err(Error::InvalidArgument(
            "need at least one run per subset".into(),
        ));
    }
    if setup.warmup > inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "warmup {} exceeds the {}-step horizon",
            setup.warmup,
            inputs.len()
        )));
    }
    let n = model.n_states;
    let full_set = catalog.all_ids();

    // Shared truth/measurement realizations, one per run index.
    let experiments: Vec<(Trajectory, Vec<DVector<f64>>)> = (0..runs_per_subset)
        .map(|j| {
            let run_noise = noise
                .clone()
                .with_seed(derive_seed(noise.seed, j as u64, 0));
            simulate_noisy(model, x0, inputs, catalog, &full_set, &run_noise)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<ComparisonRow> = subsets
        .par_iter()
        .map(|subset| -> Result<ComparisonRow> {
            let report = ctx.degree_for(catalog, subset)?;
            let positions: Vec<usize> =
                subset.iter().map(|id| id - 1).collect();
            let r_v = DMatrix::from_diagonal(&DVector::from_iterator(
                subset.len(),
                positions.iter().map(|&i| {
                    let s = noise.measurement_std[i];
                    s * s
                }),
            ));

            let mut rmses = Vec::with_capacity(runs_per_subset);
            let mut mnes = Vec::with_capacity(runs_per_subset);
            let mut failed = 0usize;
            for (truth, full_meas) in &experiments {
                let meas: Vec<DVector<f64>> = full_meas
                    .iter()
                    .map(|y| DVector::from_iterator(positions.len(), positions.iter().map(|&i| y[i])))
                    .collect();
                let outcome = run_ekf(
                    model,
                    catalog,
                    subset,
                    truth,
                    &meas,
                    &setup.x0_guess,
                    &setup.q_w,
                    &r_v,
                    &setup.p0,
                )
                .and_then(|run| windowed_metrics(&run, setup.warmup));
                match outcome {
                    Ok(metrics) => {
                        rmses.push(metrics.rmse);
                        mnes.push(metrics.mean_normalized_error);
                    }
                    Err(e) => {
                        log::warn!("EKF run failed for subset {subset:?}: {e}");
                        failed += 1;
                    }
                }
            }
            let (mean_rmse, std_rmse, mean_mne) = if rmses.is_empty() {
                (f64::INFINITY, f64::INFINITY, f64::INFINITY)
            } else {
                let count = rmses.len() as f64;
                let mean = rmses.iter().sum::<f64>() / count;
                let var = rmses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / count;
                (mean, var.sqrt(), mnes.iter().sum::<f64>() / count)
            };
            Ok(ComparisonRow {
                subset: subset.iter().copied().collect(),
                mean_rmse,
                std_rmse,
                mean_normalized_error: mean_mne,
                degree: report.degree,
                rank: report.rank,
                runs: runs_per_subset,
                failed_runs: failed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    debug_assert!(rows.iter().all(|r| r.subset.len() <= n || n == 0));
    rows.sort_by(|a, b| {
        a.mean_rmse
            .partial_cmp(&b.mean_rmse)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.subset.cmp(&b.subset))
    });
    Ok(rows)
}
