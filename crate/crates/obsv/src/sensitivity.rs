//! Sensor catalogs and the stacked output-to-initial-state sensitivity matrix.
//!
//! For a sensor subset and a nominal trajectory, the block for time k is the
//! row-per-sensor matrix `(dh_i/dx at x(k)) * S_x(k)`; blocks for k = 0..=K are
//! stacked vertically (time-major, sensors in ascending id order within each
//! block). Before rank tests and degree computations the matrix is rescaled so
//! the outcome does not depend on engineering units: entry (i, j) is mapped to
//! `s_ij * state_scale_j / output_scale_i`, a relative (percent-per-percent)
//! sensitivity.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{fd_jacobian, JacobianConfig, Trajectory};
use crate::error::{Error, Result};

/// Scalar output map of one sensor.
pub type OutputFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Optional analytic gradient of the output map (row vector).
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;

/// One candidate sensor: a scalar reading of the state plus an optional
/// analytic gradient. When no gradient is supplied it is computed by central
/// finite differences with the catalog's [`JacobianConfig`].
#[derive(Clone)]
pub struct SensorDef {
    /// 1-based index into the catalog.
    pub id: usize,
    pub label: String,
    output: OutputFn,
    gradient: Option<GradientFn>,
}

impl SensorDef {
    pub fn new<F>(id: usize, label: impl Into<String>, output: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        SensorDef {
            id,
            label: label.into(),
            output: Arc::new(output),
            gradient: None,
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    /// Direct sensor reading state component `state_index` (1-based). The
    /// gradient is the exact unit row.
    pub fn state(id: usize, label: impl Into<String>, state_index: usize) -> Self {
        assert!(state_index >= 1, "state indices are 1-based");
        let j = state_index - 1;
        SensorDef::new(id, label, move |x: &DVector<f64>| x[j]).with_gradient(
            move |x: &DVector<f64>| {
                let mut row = RowDVector::zeros(x.len());
                row[j] = 1.0;
                row
            },
        )
    }

    /// Composite sensor reading the sum of several state components
    /// (1-based indices), e.g. lumped concentration measurements.
    pub fn sum(id: usize, label: impl Into<String>, state_indices: &[usize]) -> Self {
        let idx: Vec<usize> = state_indices.iter().map(|&j| j - 1).collect();
        let idx_grad = idx.clone();
        SensorDef::new(id, label, move |x: &DVector<f64>| {
            idx.iter().map(|&j| x[j]).sum()
        })
        .with_gradient(move |x: &DVector<f64>| {
            let mut row = RowDVector::zeros(x.len());
            for &j in &idx_grad {
                row[j] += 1.0;
            }
            row
        })
    }

    /// Linear sensor `y = row * x` with the exact constant gradient.
    pub fn linear(id: usize, label: impl Into<String>, row: RowDVector<f64>) -> Self {
        let row_out = row.clone();
        SensorDef::new(id, label, move |x: &DVector<f64>| (&row_out * x)[0])
            .with_gradient(move |_| row.clone())
    }

    pub fn read(&self, x: &DVector<f64>) -> f64 {
        (self.output)(x)
    }

    /// Gradient row at `x`: analytic if provided, central finite differences
    /// otherwise.
    pub fn gradient_at(&self, x: &DVector<f64>, cfg: &JacobianConfig) -> Result<RowDVector<f64>> {
        if let Some(g) = &self.gradient {
            let row = g(x);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "sensor {} gradient is non-finite",
                    self.id
                )));
            }
            return Ok(row);
        }
        let out = &self.output;
        let jac = fd_jacobian(|xx| DVector::from_element(1, out(xx)), x, cfg)?;
        Ok(jac.row(0).into_owned())
    }
}

impl std::fmt::Debug for SensorDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SensorDef")
            .field("id", &self.id)
            .field("label", &self.label)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

/// An ordered list of candidate sensors bound to a model of `n_states` states.
/// Ids must be contiguous 1..=m.
#[derive(Clone, Debug)]
pub struct SensorCatalog {
    sensors: Vec<SensorDef>,
    pub n_states: usize,
    /// Step rule for finite-difference sensor gradients.
    pub fd: JacobianConfig,
}

impl SensorCatalog {
    pub fn new(n_states: usize, sensors: Vec<SensorDef>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidArgument("catalog has no sensors".into()));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.id != i + 1 {
                return Err(Error::InvalidArgument(format!(
                    "sensor ids must be contiguous 1..=m; position {} has id {}",
                    i + 1,
                    s.id
                )));
            }
        }
        Ok(SensorCatalog {
            sensors,
            n_states,
            fd: JacobianConfig::default(),
        })
    }

    /// Number of sensors m.
    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensor(&self, id: usize) -> Result<&SensorDef> {
        self.sensors
            .get(id.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sensor id {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SensorDef> {
        self.sensors.iter()
    }

    /// The full sensor set {1, ..., m}.
    pub fn all_ids(&self) -> BTreeSet<usize> {
        (1..=self.len()).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.sensors.iter().map(|s| s.label.as_str()).collect()
    }

    fn validate_subset(&self, subset: &BTreeSet<usize>) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("sensor subset is empty".into()));
        }
        for &id in subset {
            self.sensor(id)?;
        }
        Ok(())
    }
}

/// Which rescaling [`normalize`] applies. `Both` is the default relative
/// scheme; the other modes exist so the effect of normalization can be
/// studied from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    None,
    Rows,
    Columns,
    #[default]
    Both,
}

/// Positive scale factors taken from the nominal trajectory:
/// `state_scales[j] = max(|x_j(0)|, floor)` and
/// `output_scales[i] = max(max_k |h_i(x(k))|, floor)`.
///
/// Scales are computed once from the full catalog and reused for every subset
/// during a selection run so degrees stay comparable across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub state_scales: DVector<f64>,
    /// Indexed by sensor id - 1, covering the full catalog.
    pub output_scales: Vec<f64>,
    pub floor: f64,
    pub mode: NormalizationMode,
}

pub const DEFAULT_SCALE_FLOOR: f64 = 1e-12;

impl ScaleSet {
    /// Unit scales: normalization becomes the identity map.
    pub fn identity(n_states: usize, n_sensors: usize) -> Self {
        ScaleSet {
            state_scales: DVector::from_element(n_states, 1.0),
            output_scales: vec![1.0; n_sensors],
            floor: DEFAULT_SCALE_FLOOR,
            mode: NormalizationMode::Both,
        }
    }

    pub fn with_mode(mut self, mode: NormalizationMode) -> Self {
        self.mode = mode;
        self
    }
}

/// The stacked sensitivity matrix for one sensor subset over a horizon, with
/// row and column provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedSensitivity {
    /// `(K+1)*|subset|` rows by `n_states` columns.
    pub matrix: DMatrix<f64>,
    /// `(sensor id, time index k)` per row, time-major.
    pub row_index: Vec<(usize, usize)>,
    /// 1-based state index per column (identity permutation).
    pub col_index: Vec<usize>,
    pub normalized: bool,
}

impl StackedSensitivity {
    /// Wrap a plain matrix as an already-normalized stacked sensitivity.
    /// Rows are labelled as distinct sensors at k = 0. Intended for direct
    /// degree/rank computations on matrices that did not come out of
    /// [`build_stacked`].
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let row_index = (1..=matrix.nrows()).map(|i| (i, 0)).collect();
        let col_index = (1..=matrix.ncols()).collect();
        StackedSensitivity {
            matrix,
            row_index,
            col_index,
            normalized: true,
        }
    }

    pub fn n_states(&self) -> usize {
        self.matrix.ncols()
    }
}

/// One time-k block: row per sensor in ascending id order, each row equal to
/// the sensor gradient at `x_k` chained with the state sensitivity `S_x(k)`.
pub fn output_sensitivity_block(
    catalog: &SensorCatalog,
    subset: &BTreeSet<usize>,
    x_k: &DVector<f64>,
    s_x_k: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    catalog.validate_subset(subset)?;
    let n = catalog.n_states;
    if s_x_k.nrows() != n || s_x_k.ncols() != n {
        return Err(Error::InvalidArgument(format!(
            "state sensitivity must be {n}x{n}, got {}x{}",
            s_x_k.nrows(),
            s_x_k.ncols()
        )));
    }
    let mut block = DMatrix::zeros(subset.len(), n);
    for (r, &id) in subset.iter().enumerate() {
        let grad = catalog.sensor(id)?.gradient_at(x_k, &catalog.fd)?;
        let row = &grad * s_x_k;
        block.row_mut(r).copy_from(&row);
    }
    Ok(block)
}

/// Stack the per-time blocks for k = 0..=K into one raw (unnormalized)
/// sensitivity matrix.
pub fn build_stacked(
    catalog: &SensorCatalog,
    subset: &BTreeSet<usize>,
    traj: &Trajectory,
    s_x: &[DMatrix<f64>],
) -> Result<StackedSensitivity> {
    catalog.validate_subset(subset)?;
    if s_x.len() != traj.samples() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} samples but {} sensitivity matrices were supplied",
            traj.samples(),
            s_x.len()
        )));
    }
    let n = catalog.n_states;
    let p = subset.len();
    let samples = traj.samples();
    let mut matrix = DMatrix::zeros(samples * p, n);
    let mut row_index = Vec::with_capacity(samples * p);
    for k in 0..samples {
        let block = output_sensitivity_block(catalog, subset, &traj.states[k], &s_x[k])?;
        matrix.rows_mut(k * p, p).copy_from(&block);
        for &id in subset.iter() {
            row_index.push((id, k));
        }
    }
    Ok(StackedSensitivity {
        matrix,
        row_index,
        col_index: (1..=n).collect(),
        normalized: false,
    })
}

/// Scales from the nominal trajectory: initial-state magnitudes for columns
/// and peak output magnitudes for rows, floored to stay positive.
pub fn default_scales(catalog: &SensorCatalog, traj: &Trajectory) -> ScaleSet {
    let floor = DEFAULT_SCALE_FLOOR;
    let x0 = &traj.states[0];
    let state_scales = DVector::from_iterator(x0.len(), x0.iter().map(|v| v.abs().max(floor)));
    let output_scales = catalog
        .iter()
        .map(|s| {
            traj.states
                .iter()
                .map(|x| s.read(x).abs())
                .fold(floor, f64::max)
        })
        .collect();
    ScaleSet {
        state_scales,
        output_scales,
        floor,
        mode: NormalizationMode::Both,
    }
}

/// Rescale a raw stacked sensitivity into relative units according to
/// `scales.mode`. Normalizing twice is an error.
pub fn normalize(s: &StackedSensitivity, scales: &ScaleSet) -> Result<StackedSensitivity> {
    if s.normalized {
        return Err(Error::InvalidState(
            "stacked sensitivity is already normalized".into(),
        ));
    }
    if scales.state_scales.len() != s.n_states() {
        return Err(Error::InvalidArgument(
            "state scale dimension does not match the matrix".into(),
        ));
    }
    let mut matrix = s.matrix.clone();
    for (r, &(sensor_id, _k)) in s.row_index.iter().enumerate() {
        let y_scale = *scales.output_scales.get(sensor_id - 1).ok_or_else(|| {
            Error::InvalidArgument(format!("no output scale for sensor {sensor_id}"))
        })?;
        for c in 0..matrix.ncols() {
            let x_scale = scales.state_scales[c];
            matrix[(r, c)] = match scales.mode {
                NormalizationMode::None => matrix[(r, c)],
                NormalizationMode::Rows => matrix[(r, c)] / y_scale,
                NormalizationMode::Columns => matrix[(r, c)] * x_scale,
                NormalizationMode::Both => matrix[(r, c)] * x_scale / y_scale,
            };
        }
    }
    Ok(StackedSensitivity {
        matrix,
        row_index: s.row_index.clone(),
        col_index: s.col_index.clone(),
        normalized: true,
    })
}

/// Default horizon policy: the smallest K giving at least `4 * n_states` rows
/// with the full catalog, capped at 200 samples. The paper-level analyses
/// never fix a horizon, so this is exposed as configuration everywhere.
pub fn default_horizon(n_sensors: usize, n_states: usize) -> usize {
    let needed = 4 * n_states;
    let samples = needed.div_ceil(n_sensors).max(1);
    (samples - 1).min(200)
}
