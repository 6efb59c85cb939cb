//! Four-tank stirred-reactor benchmark.
//!
//! Four CSTRs in series with two recycle streams: tank 1 receives fresh feed
//! plus a recycle from tank 2 and a recycle from tank 4; tanks 2-4 each
//! receive fresh feed plus the upstream effluent. Three parallel exothermic
//! reactions consume the reactant in every tank. States are concentration and
//! temperature per tank, `x = [C_A1, T1, C_A2, T2, C_A3, T3, C_A4, T4]`;
//! inputs are the four jacket heat duties `u = [Q1, Q2, Q3, Q4]`.
//!
//! Volumes are constant, so each tank's outflow equals the sum of its
//! inflows: tank 1 passes `F01 + Fr1 + Fr2` to tank 2, tank 2 splits its
//! effluent into the `Fr1` recycle and the feed to tank 3, and tank 4 splits
//! into the `Fr2` recycle and the product stream. The recycle from tank 4
//! carries tank-4 effluent composition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::ContinuousModel;
use crate::error::{Error, Result};
use crate::sensitivity::{SensorCatalog, SensorDef};

/// Physical constants of the four-tank process. Defaults are the benchmark
/// operating point; all units are SI-adjacent process units (m^3, h, K,
/// kmol, kJ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourCstrParams {
    /// Feed temperatures T0i (K).
    pub t0: [f64; 4],
    /// Feed concentrations C0i (kmol/m^3).
    pub c0: [f64; 4],
    /// Feed flow rates F0i (m^3/h).
    pub f0: [f64; 4],
    /// Reactor volumes Vi (m^3).
    pub v: [f64; 4],
    /// Inter-tank flows F1, F2, F3 (m^3/h).
    pub f_between: [f64; 3],
    /// Recycle flows Fr1 (tank 2 -> tank 1) and Fr2 (tank 4 -> tank 1).
    pub f_recycle: [f64; 2],
    /// Pre-exponential rate constants k1..k3 (1/h).
    pub k_rate: [f64; 3],
    /// Activation energies E1..E3 (kJ/kmol).
    pub e_act: [f64; 3],
    /// Reaction enthalpies dH1..dH3 (kJ/kmol), negative = exothermic.
    pub dh: [f64; 3],
    /// Gas constant (kJ/(kmol K)).
    pub r_gas: f64,
    /// Mixture density (kg/m^3).
    pub rho: f64,
    /// Mixture heat capacity (kJ/(kg K)).
    pub cp: f64,
    /// Nominal jacket heat duties Q1..Q4 (kJ/h).
    pub q_nominal: [f64; 4],
}

impl Default for FourCstrParams {
    fn default() -> Self {
        FourCstrParams {
            t0: [300.0, 300.0, 300.0, 300.0],
            c0: [4.0, 2.0, 3.0, 3.5],
            f0: [5.0, 10.0, 8.0, 12.0],
            v: [1.0, 3.0, 4.0, 6.0],
            f_between: [35.0, 45.0, 33.0],
            f_recycle: [20.0, 10.0],
            k_rate: [3.0e6, 3.0e5, 3.0e5],
            e_act: [5.0e4, 7.5e4, 7.53e4],
            dh: [-5.0e4, -5.2e4, -5.0e4],
            r_gas: 8.314,
            rho: 1000.0,
            cp: 0.231,
            q_nominal: [1.0e4, 2.0e4, 2.5e4, 1.0e4],
        }
    }
}

/// Default sampling interval for the discretized benchmark (hours).
pub const DEFAULT_DT: f64 = 1.0 / 120.0;

/// Nominal steady-state operating point under the default heat duties,
/// used as the reference initial condition and for relative noise levels.
pub const NOMINAL_STEADY_STATE: [f64; 8] = [2.78, 363.0, 2.58, 356.0, 2.6, 355.0, 2.6, 392.0];

/// Nominal heat-duty input vector.
pub fn nominal_inputs(p: &FourCstrParams) -> DVector<f64> {
    DVector::from_row_slice(&p.q_nominal)
}

/// State labels in catalog order.
pub const STATE_LABELS: [&str; 8] = ["C_A1", "T1", "C_A2", "T2", "C_A3", "T3", "C_A4", "T4"];

/// Mass and energy balances. Errors when any tank temperature is
/// nonpositive, where the Arrhenius terms are undefined.
pub fn four_cstr_rhs(x: &DVector<f64>, u: &DVector<f64>, p: &FourCstrParams) -> Result<DVector<f64>> {
    if x.len() != 8 || u.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "four-tank model expects 8 states and 4 inputs, got {} and {}",
            x.len(),
            u.len()
        )));
    }
    let c = [x[0], x[2], x[4], x[6]];
    let t = [x[1], x[3], x[5], x[7]];
    for (i, &ti) in t.iter().enumerate() {
        if ti <= 0.0 {
            return Err(Error::Domain(format!(
                "tank {} temperature {ti} K is nonpositive; rate law undefined",
                i + 1
            )));
        }
    }

    let heat_capacity = p.rho * p.cp; // kJ/(m^3 K)

    // Reaction rates and heat generation per tank.
    let mut rate_total = [0.0; 4];
    let mut heat_gen = [0.0; 4];
    for tank in 0..4 {
        for j in 0..3 {
            let r_j = p.k_rate[j] * (-p.e_act[j] / (p.r_gas * t[tank])).exp() * c[tank];
            rate_total[tank] += r_j;
            heat_gen[tank] += -p.dh[j] / heat_capacity * r_j;
        }
    }

    // Inflow streams per tank: (flow, concentration, temperature).
    let tank2_to_3 = p.f_between[1] - p.f_recycle[0];
    let streams: [Vec<(f64, f64, f64)>; 4] = [
        vec![
            (p.f0[0], p.c0[0], p.t0[0]),
            (p.f_recycle[0], c[1], t[1]),
            (p.f_recycle[1], c[3], t[3]),
        ],
        vec![(p.f0[1], p.c0[1], p.t0[1]), (p.f_between[0], c[0], t[0])],
        vec![(p.f0[2], p.c0[2], p.t0[2]), (tank2_to_3, c[1], t[1])],
        vec![(p.f0[3], p.c0[3], p.t0[3]), (p.f_between[2], c[2], t[2])],
    ];

    let mut dx = DVector::zeros(8);
    for tank in 0..4 {
        let v = p.v[tank];
        let mut dc = -rate_total[tank];
        let mut dt = heat_gen[tank] + u[tank] / (heat_capacity * v);
        for &(flow, c_in, t_in) in &streams[tank] {
            dc += flow * (c_in - c[tank]) / v;
            dt += flow * (t_in - t[tank]) / v;
        }
        dx[2 * tank] = dc;
        dx[2 * tank + 1] = dt;
    }
    Ok(dx)
}

/// The balances wrapped as a [`ContinuousModel`]. Domain violations surface
/// as non-finite evaluations, which the integrator and Jacobian routines
/// report with step or column context instead of clamping.
pub fn four_cstr_continuous(p: &FourCstrParams) -> ContinuousModel {
    let p = p.clone();
    ContinuousModel::new(8, 4, move |x, u| {
        four_cstr_rhs(x, u, &p).unwrap_or_else(|_| DVector::from_element(8, f64::NAN))
    })
}

/// RK4 discretization of the benchmark at step `dt` (hours).
pub fn four_cstr_model(p: &FourCstrParams, dt: f64) -> Result<crate::dynamics::DiscreteModel> {
    crate::dynamics::rk4_discretize(&four_cstr_continuous(p), dt)
}

/// The eight direct state sensors in state order, ids 1..=8.
pub fn four_cstr_catalog() -> SensorCatalog {
    let sensors = STATE_LABELS
        .iter()
        .enumerate()
        .map(|(i, label)| SensorDef::state(i + 1, *label, i + 1))
        .collect();
    SensorCatalog::new(8, sensors).expect("static catalog is valid")
}

/// Jacobian of the balances at `(x, u)` by central differences on the raw
/// right-hand side; used by the steady-state solver.
pub fn four_cstr_jacobian(x: &DVector<f64>, u: &DVector<f64>, p: &FourCstrParams) -> Result<DMatrix<f64>> {
    let u = u.clone();
    let p = p.clone();
    crate::dynamics::fd_jacobian(
        move |xx| {
            four_cstr_rhs(xx, &u, &p).unwrap_or_else(|_| DVector::from_element(8, f64::NAN))
        },
        x,
        &crate::dynamics::JacobianConfig::default(),
    )
}

/// On-disk parameter manifest: the constants plus free-form audit notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourCstrManifest {
    pub params: FourCstrParams,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl FourCstrManifest {
    /// The default constants with the audit notes that ship with them.
    pub fn default_manifest() -> Self {
        FourCstrManifest {
            params: FourCstrParams::default(),
            notes: vec![
                "e_act[1] = 7.5e4 and e_act[2] = 7.53e4 differ by 0.4%; reactions 2 and 3 \
                 are nearly indistinguishable and contribute little at nominal temperatures."
                    .to_string(),
                "The tank-4 recycle carries tank-4 effluent composition (C_A4, T4)."
                    .to_string(),
            ],
        }
    }

    pub fn load(path: &std::path::Path) -> Result<FourCstrParams> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let manifest: FourCstrManifest = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!("bad manifest {}: {e}", path.display()))
        })?;
        Ok(manifest.params)
    }
}
