//! Synthetic large-network generator for scalability runs.
//!
//! Generates a stable n-state process network with sparse random couplings
//! and an optional nonlinearity, together with a catalog mixing direct and
//! composite (sum-of-states) sensors. The generator retries with the next
//! derived seed until the nominal horizon simulates to finite values.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_discretize, simulate_constant, ContinuousModel, DiscreteModel};
use crate::error::{Error, Result};
use crate::sensitivity::{SensorCatalog, SensorDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    None,
    #[default]
    Quadratic,
    ArrheniusLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticNetworkSpec {
    pub n_states: usize,
    pub n_sensors: usize,
    /// Fraction of off-diagonal couplings that are nonzero, in (0, 1].
    pub coupling_density: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

/// A generated network: discretized model, sensor catalog and a nominal
/// initial state.
#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub model: DiscreteModel,
    pub continuous: ContinuousModel,
    pub catalog: SensorCatalog,
    pub x0: DVector<f64>,
    /// The seed that actually generated the accepted network (>= spec.seed).
    pub seed_used: u64,
}

const SMOKE_HORIZON: usize = 50;
const MAX_RETRIES: u64 = 8;
const DT: f64 = 0.05;

fn generate_once(spec: &SyntheticNetworkSpec, seed: u64) -> Result<SyntheticNetwork> {
    let n = spec.n_states;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Diagonal decay plus sparse couplings, scaled to keep the linear part
    // stable: |off-diagonal row sum| < decay.
    let decay = DVector::from_fn(n, |_, _| rng.random_range(0.8..2.0f64));
    let mut coupling = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(spec.coupling_density) {
                coupling[(i, j)] = rng.random_range(-1.0..1.0f64);
            }
        }
    }
    for i in 0..n {
        let row_sum: f64 = (0..n).filter(|&j| j != i).map(|j| coupling[(i, j)].abs()).sum();
        if row_sum > 0.0 {
            let scale = 0.8 * decay[i] / row_sum;
            if scale < 1.0 {
                for j in 0..n {
                    if i != j {
                        coupling[(i, j)] *= scale;
                    }
                }
            }
        }
    }
    let drive = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5f64));
    let nonlinearity = spec.nonlinearity;

    let rhs = {
        let decay = decay.clone();
        let coupling = coupling.clone();
        let drive = drive.clone();
        move |x: &DVector<f64>, u: &DVector<f64>| -> DVector<f64> {
            let activation: DVector<f64> = match nonlinearity {
                Nonlinearity::None => x.clone(),
                Nonlinearity::Quadratic => x.map(|v| v + 0.05 * v * v),
                Nonlinearity::ArrheniusLike => {
                    // Saturating rate in the spirit of temperature-activated
                    // kinetics, bounded for all finite states.
                    x.map(|v| v * (-1.0 / (1.0 + v.abs())).exp())
                }
            };
            let mut dx = &coupling * activation;
            for i in 0..x.len() {
                dx[i] += -decay[i] * x[i] + drive[i] * (1.0 + 0.1 * u[0]);
            }
            dx
        }
    };
    let continuous = ContinuousModel::new(n, 1, rhs);
    let model = rk4_discretize(&continuous, DT)?;

    // Sensors: roughly half direct readings, the rest composite sums of
    // 2..=4 states.
    let mut sensors = Vec::with_capacity(spec.n_sensors);
    for id in 1..=spec.n_sensors {
        if rng.random_bool(0.5) {
            let j = rng.random_range(1..=n);
            sensors.push(SensorDef::state(id, format!("x{j}"), j));
        } else {
            let count = rng.random_range(2..=4usize.min(n));
            let mut idx: Vec<usize> = Vec::new();
            while idx.len() < count {
                let j = rng.random_range(1..=n);
                if !idx.contains(&j) {
                    idx.push(j);
                }
            }
            idx.sort_unstable();
            let label = idx
                .iter()
                .map(|j| format!("x{j}"))
                .collect::<Vec<_>>()
                .join("+");
            sensors.push(SensorDef::sum(id, label, &idx));
        }
    }
    let catalog = SensorCatalog::new(n, sensors)?;

    let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5f64));

    Ok(SyntheticNetwork {
        model,
        continuous,
        catalog,
        x0,
        seed_used: seed,
    })
}

/// Generate a network, retrying with consecutive seeds until the nominal
/// horizon simulates to finite values.
pub fn make_synthetic_network(spec: &SyntheticNetworkSpec) -> Result<SyntheticNetwork> {
    if spec.n_states == 0 || spec.n_sensors == 0 {
        return Err(Error::InvalidArgument(
            "network needs at least one state and one sensor".into(),
        ));
    }
    if !(spec.coupling_density > 0.0 && spec.coupling_density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coupling density must lie in (0, 1], got {}",
            spec.coupling_density
        )));
    }
    let mut last_err = None;
    for attempt in 0..MAX_RETRIES {
        let seed = spec.seed.wrapping_add(attempt);
        let net = generate_once(spec, seed)?;
        let u = DVector::from_element(1, 0.0);
        match simulate_constant(&net.model, &net.x0, &u, SMOKE_HORIZON) {
            Ok(_) => return Ok(net),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Numeric(format!(
        "no finite network found within {MAX_RETRIES} seed retries: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}
