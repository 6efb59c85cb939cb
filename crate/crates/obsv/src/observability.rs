//! Rank test and degree-of-observability measure for stacked sensitivities.
//!
//! The rank test counts singular values above a relative threshold; full
//! column rank certifies local observability. The degree measure orders the
//! state columns by successive orthogonalization: the first score is the
//! largest column norm and each subsequent score is the largest residual norm
//! after projecting out the span of the columns chosen so far. The degree is
//! the sum of all scores, gated to zero when the matrix is rank-deficient, so
//! only observable configurations receive a nonzero degree.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    propagate_state_sensitivity, simulate_constant, DiscreteModel, JacobianConfig, Trajectory,
};
use crate::error::{Error, Result};
use crate::sensitivity::{
    build_stacked, default_horizon, default_scales, normalize, NormalizationMode, ScaleSet,
    SensorCatalog, StackedSensitivity,
};

/// Numerical rank policy: singular values are counted relative to the largest
/// one, `sigma_r > relative_tol * sigma_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankPolicy {
    pub relative_tol: f64,
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy { relative_tol: 1e-8 }
    }
}

impl RankPolicy {
    pub fn new(relative_tol: f64) -> Result<Self> {
        let p = RankPolicy { relative_tol };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_tol > 0.0 && self.relative_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must lie in (0, 1), got {}",
                self.relative_tol
            )));
        }
        Ok(())
    }
}

/// Full output of the degree computation for one sensor subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
    /// 1 when `rank == n_states`, 0 otherwise.
    pub alpha: u8,
    /// Residual column norms in selection order, one per state column.
    pub f_values: Vec<f64>,
    /// 1-based state indices in selection order.
    pub column_order: Vec<usize>,
    /// Sum of all residual norms.
    pub f_total: f64,
    /// `alpha * f_total`: zero unless the matrix has full column rank.
    pub degree: f64,
}

/// Singular values of a matrix in descending order plus the count above the
/// relative threshold.
pub(crate) fn rank_from_singular_values(sv: &[f64], policy: &RankPolicy) -> usize {
    let sigma1 = sv.first().copied().unwrap_or(0.0);
    if sigma1 <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > policy.relative_tol * sigma1).count()
}

pub(crate) fn singular_values_desc(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let svd = m.clone().try_svd(false, false, f64::EPSILON, 0).ok_or_else(|| {
        Error::Numeric("singular value decomposition did not converge".into())
    })?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    Ok(sv)
}

/// SVD-based numerical rank of a normalized stacked sensitivity.
pub fn svd_rank(s: &StackedSensitivity, policy: &RankPolicy) -> Result<(usize, Vec<f64>)> {
    policy.validate()?;
    if !s.normalized {
        return Err(Error::InvalidState(
            "rank test expects a normalized stacked sensitivity".into(),
        ));
    }
    let sv = singular_values_desc(&s.matrix)?;
    Ok((rank_from_singular_values(&sv, policy), sv))
}

/// True when the stacked sensitivity has full column rank.
pub fn is_observable(s: &StackedSensitivity, policy: &RankPolicy) -> Result<bool> {
    let (rank, _) = svd_rank(s, policy)?;
    Ok(rank == s.n_states())
}

/// Rank-gated degree of observability by successive orthogonalization.
///
/// The projection is carried by an accumulated orthonormal basis rather than
/// the normal-equations form `X (X^T X)^-1 X^T`; the two are algebraically
/// identical and the basis form stays well conditioned. Ties on residual
/// norms are broken by the lowest state index.
pub fn degree_of_observability(
    s: &StackedSensitivity,
    policy: &RankPolicy,
) -> Result<ObservabilityReport> {
    let (rank, singular_values) = svd_rank(s, policy)?;
    let n = s.n_states();
    if n == 0 {
        return Err(Error::InvalidArgument("matrix has no state columns".into()));
    }
    let alpha: u8 = if rank == n { 1 } else { 0 };

    let mut residual = s.matrix.clone();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut f_values = Vec::with_capacity(n);
    let mut column_order = Vec::with_capacity(n);

    while !remaining.is_empty() {
        // Largest residual norm among unselected columns, lowest index wins ties.
        let mut best = remaining[0];
        let mut best_norm = residual.column(best).norm();
        for &j in remaining.iter().skip(1) {
            let nj = residual.column(j).norm();
            if nj > best_norm {
                best = j;
                best_norm = nj;
            }
        }
        f_values.push(best_norm);
        column_order.push(best + 1);
        remaining.retain(|&j| j != best);

        if best_norm > 0.0 && !remaining.is_empty() {
            let mut q = residual.column(best).clone_owned();
            // One re-orthogonalization pass keeps the basis orthonormal to
            // machine precision.
            for qb in &basis {
                let c = qb.dot(&q);
                q -= qb * c;
            }
            let qn = q.norm();
            if qn > 0.0 {
                q /= qn;
                for &j in &remaining {
                    let c = q.dot(&residual.column(j).clone_owned());
                    let updated = residual.column(j) - &q * c;
                    residual.set_column(j, &updated);
                }
                basis.push(q);
            }
        }
    }

    let f_total: f64 = f_values.iter().sum();
    let degree = f64::from(alpha) * f_total;
    Ok(ObservabilityReport {
        rank,
        singular_values,
        alpha,
        f_values,
        column_order,
        f_total,
        degree,
    })
}

/// Build, normalize and score the stacked sensitivity for one subset in a
/// single call.
pub fn degree_for_subset(
    catalog: &SensorCatalog,
    subset: &BTreeSet<usize>,
    traj: &Trajectory,
    s_x: &[DMatrix<f64>],
    scales: &ScaleSet,
    policy: &RankPolicy,
) -> Result<ObservabilityReport> {
    let raw = build_stacked(catalog, subset, traj, s_x)?;
    let normalized = normalize(&raw, scales)?;
    degree_of_observability(&normalized, policy)
}

/// Everything the selection and validation drivers need about one nominal
/// trajectory: the trajectory itself, the state sensitivities, the scale set
/// (computed once, from the full catalog) and the rank policy.
#[derive(Debug, Clone)]
pub struct AnalysisContext {
    pub traj: Trajectory,
    pub s_x: Vec<DMatrix<f64>>,
    pub scales: ScaleSet,
    pub policy: RankPolicy,
}

impl AnalysisContext {
    /// Simulate `k_steps` of the nominal (noise-free) trajectory under a
    /// constant input and precompute sensitivities and scales. `k_steps`
    /// defaults to the horizon policy when `None`.
    pub fn build(
        model: &DiscreteModel,
        catalog: &SensorCatalog,
        x0: &DVector<f64>,
        u: &DVector<f64>,
        k_steps: Option<usize>,
        fd: &JacobianConfig,
        policy: RankPolicy,
        mode: NormalizationMode,
    ) -> Result<Self> {
        policy.validate()?;
        let k = k_steps.unwrap_or_else(|| default_horizon(catalog.len(), catalog.n_states));
        let traj = simulate_constant(model, x0, u, k)?;
        let s_x = propagate_state_sensitivity(model, &traj, fd)?;
        let scales = default_scales(catalog, &traj).with_mode(mode);
        Ok(AnalysisContext {
            traj,
            s_x,
            scales,
            policy,
        })
    }

    pub fn degree_for(
        &self,
        catalog: &SensorCatalog,
        subset: &BTreeSet<usize>,
    ) -> Result<ObservabilityReport> {
        degree_for_subset(catalog, subset, &self.traj, &self.s_x, &self.scales, &self.policy)
    }
}
