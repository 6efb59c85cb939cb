//! Minimum-sensor-set search: backward greedy elimination, the forward-greedy
//! and exhaustive baselines, set augmentation, and evaluation-count formulas.
//!
//! Backward elimination starts from the full catalog (which must be
//! observable), removes at each step the sensor whose removal leaves the largest
//! degree of observability, and stops when every further removal destroys
//! observability. Candidate evaluations within a step run in parallel; the
//! winner is reduced deterministically by (degree, lowest id), so thread
//! count never changes the outcome.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::observability::{degree_for_subset, ObservabilityReport, RankPolicy};
use crate::sensitivity::{ScaleSet, SensorCatalog};

/// One backward-elimination step: every candidate's degree, the sensor chosen
/// for removal (none on the terminal step), and the surviving set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStep {
    pub step_index: usize,
    /// Degree of `current_set \ {id}` for every candidate id.
    pub candidate_degrees: BTreeMap<usize, f64>,
    /// Ungated information sums for the same candidates (nonzero even when
    /// the candidate set is unobservable).
    pub candidate_f_totals: BTreeMap<usize, f64>,
    pub candidate_ranks: BTreeMap<usize, usize>,
    /// `None` on the terminal step, where every removal loses observability.
    pub removed: Option<usize>,
    pub resulting_set: BTreeSet<usize>,
    pub resulting_degree: f64,
    pub resulting_rank: usize,
}

/// The full record of one backward-elimination run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub initial_set: BTreeSet<usize>,
    pub initial_degree: f64,
    pub initial_rank: usize,
    pub steps: Vec<RemovalStep>,
    pub final_set: BTreeSet<usize>,
    pub final_degree: f64,
    pub final_rank: usize,
    /// Sensors in the order they were removed.
    pub removal_order: Vec<usize>,
}

/// Candidate-evaluation counts for selecting `o` of `m` sensors under each
/// search strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityCounts {
    pub m: u32,
    pub o: u32,
    /// Backward elimination: m + (m-1) + ... + o = (m-o+1)(m+o)/2.
    pub removal_count: u64,
    /// Forward addition: m + (m-1) + ... + (m-o+1).
    pub forward_count: u64,
    /// Exhaustive search by increasing size: sum of C(m, j) for j = 1..=o.
    pub exhaustive_count: u64,
    /// Binary decision space: 2^m.
    pub binary_count: u64,
}

fn evaluate_candidates(
    catalog: &SensorCatalog,
    current: &BTreeSet<usize>,
    traj: &Trajectory,
    s_x: &[DMatrix<f64>],
    scales: &ScaleSet,
    policy: &RankPolicy,
) -> Result<Vec<(usize, ObservabilityReport)>> {
    let ids: Vec<usize> = current.iter().copied().collect();
    let mut results: Vec<(usize, ObservabilityReport)> = ids
        .par_iter()
        .map(|&id| {
            let mut candidate = current.clone();
            candidate.remove(&id);
            if candidate.is_empty() {
                // Removing the last sensor always loses observability.
                return Ok((
                    id,
                    ObservabilityReport {
                        rank: 0,
                        singular_values: vec![],
                        alpha: 0,
                        f_values: vec![],
                        column_order: vec![],
                        f_total: 0.0,
                        degree: 0.0,
                    },
                ));
            }
            degree_for_subset(catalog, &candidate, traj, s_x, scales, policy)
                .map(|report| (id, report))
        })
        .collect::<Result<Vec<_>>>()?;
    // Parallel collection preserves input order, but sort anyway so the
    // deterministic reduction never depends on rayon internals.
    results.sort_by_key(|(id, _)| *id);
    Ok(results)
}

/// Highest degree wins; exact ties go to the lowest sensor id.
fn argmax_by_degree(results: &[(usize, ObservabilityReport)]) -> (usize, f64) {
    let mut best_id = results[0].0;
    let mut best_degree = results[0].1.degree;
    for (id, report) in results.iter().skip(1) {
        if report.degree > best_degree {
            best_id = *id;
            best_degree = report.degree;
        }
    }
    (best_id, best_degree)
}

/// Backward greedy elimination from the full catalog down to a minimal
/// observable set. Fails with [`Error::NotObservable`] when the full catalog
/// is not observable to begin with.
pub fn backward_greedy(
    catalog: &SensorCatalog,
    traj: &Trajectory,
    s_x: &[DMatrix<f64>],
    scales: &ScaleSet,
    policy: &RankPolicy,
) -> Result<SelectionTrace> {
    let initial_set = catalog.all_ids();
    let initial = degree_for_subset(catalog, &initial_set, traj, s_x, scales, policy)?;
    if initial.degree <= 0.0 {
        return Err(Error::NotObservable);
    }

    let mut current = initial_set.clone();
    let mut current_degree = initial.degree;
    let mut current_rank = initial.rank;
    let mut steps = Vec::new();
    let mut removal_order = Vec::new();

    loop {
        let results = evaluate_candidates(catalog, &current, traj, s_x, scales, policy)?;
        let candidate_degrees: BTreeMap<usize, f64> =
            results.iter().map(|(id, r)| (*id, r.degree)).collect();
        let candidate_f_totals: BTreeMap<usize, f64> =
            results.iter().map(|(id, r)| (*id, r.f_total)).collect();
        let candidate_ranks: BTreeMap<usize, usize> =
            results.iter().map(|(id, r)| (*id, r.rank)).collect();
        let (best_id, best_degree) = argmax_by_degree(&results);

        if best_degree <= 0.0 {
            // Terminal step: every single-sensor removal loses observability.
            steps.push(RemovalStep {
                step_index: steps.len(),
                candidate_degrees,
                candidate_f_totals,
                candidate_ranks,
                removed: None,
                resulting_set: current.clone(),
                resulting_degree: current_degree,
                resulting_rank: current_rank,
            });
            break;
        }

        let mut resulting_set = current.clone();
        resulting_set.remove(&best_id);
        let best_rank = candidate_ranks[&best_id];
        steps.push(RemovalStep {
            step_index: steps.len(),
            candidate_degrees,
            candidate_f_totals,
            candidate_ranks,
            removed: Some(best_id),
            resulting_set: resulting_set.clone(),
            resulting_degree: best_degree,
            resulting_rank: best_rank,
        });
        removal_order.push(best_id);
        current = resulting_set;
        current_degree = best_degree;
        current_rank = best_rank;
    }

    Ok(SelectionTrace {
        initial_set,
        initial_degree: initial.degree,
        initial_rank: initial.rank,
        steps,
        final_set: current,
        final_degree: current_degree,
        final_rank: current_rank,
        removal_order,
    })
}

/// Forward greedy: grow a set from empty, adding at each step the sensor with
/// the largest resulting degree. Early sets are usually unobservable (degree
/// zero for every candidate); those ties are ranked by the ungated
/// information sum, then by lowest id. Returns ids in addition order.
pub fn forward_greedy(
    catalog: &SensorCatalog,
    traj: &Trajectory,
    s_x: &[DMatrix<f64>],
    scales: &ScaleSet,
    policy: &RankPolicy,
    target_size: usize,
) -> Result<Vec<usize>> {
    let m = catalog.len();
    if target_size < 1 || target_size > m {
        return Err(Error::InvalidArgument(format!(
            "target size must lie in 1..={m}, got {target_size}"
        )));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(target_size);
    let mut chosen_set = BTreeSet::new();
    while chosen.len() < target_size {
        let candidates: Vec<usize> =
            (1..=m).filter(|id| !chosen_set.contains(id)).collect();
        let mut results: Vec<(usize, ObservabilityReport)> = candidates
            .par_iter()
            .map(|&id| {
                let mut candidate = chosen_set.clone();
                candidate.insert(id);
                degree_for_subset(catalog, &candidate, traj, s_x, scales, policy)
                    .map(|r| (id, r))
            })
            .collect::<Result<Vec<_>>>()?;
        results.sort_by_key(|(id, _)| *id);
        let mut best = &results[0];
        for r in results.iter().skip(1) {
            let better = (r.1.degree, r.1.f_total) > (best.1.degree, best.1.f_total);
            if better {
                best = r;
            }
        }
        chosen.push(best.0);
        chosen_set.insert(best.0);
    }
    Ok(chosen)
}

/// Exhaustive baseline: enumerate subsets by increasing size and return the
/// smallest size at which some subset is observable, together with the
/// highest-degree subset of that size. Ties go to the lexicographically
/// smallest id set. Refuses catalogs larger than `max_m`.
pub fn exhaustive_min_observable(
    catalog: &SensorCatalog,
    traj: &Trajectory,
    s_x: &[DMatrix<f64>],
    scales: &ScaleSet,
    policy: &RankPolicy,
    max_m: usize,
) -> Result<(usize, BTreeSet<usize>, f64)> {
    let m = catalog.len();
    if m > max_m {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search over {m} sensors exceeds the cap of {max_m} \
             (2^m subsets); raise the cap explicitly if this is intended"
        )));
    }
    for size in 1..=m {
        let combos: Vec<Vec<usize>> = (1..=m).combinations(size).collect();
        let mut scored: Vec<(usize, f64)> = combos
            .par_iter()
            .enumerate()
            .map(|(idx, combo)| {
                let subset: BTreeSet<usize> = combo.iter().copied().collect();
                degree_for_subset(catalog, &subset, traj, s_x, scales, policy)
                    .map(|r| (idx, r.degree))
            })
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by_key(|(idx, _)| *idx);
        // combinations() yields lexicographic order, so keeping the first
        // strict maximum realizes the lexicographic tie-break.
        let mut best: Option<(usize, f64)> = None;
        for (idx, degree) in scored {
            if degree > 0.0 && best.map_or(true, |(_, d)| degree > d) {
                best = Some((idx, degree));
            }
        }
        if let Some((idx, degree)) = best {
            let subset: BTreeSet<usize> = combos[idx].iter().copied().collect();
            return Ok((size, subset, degree));
        }
    }
    Err(Error::NotObservable)
}

/// Grow a selected set back toward robustness: re-add the last `extra`
/// removed sensors in reverse removal order.
pub fn augment_set(trace: &SelectionTrace, extra: usize) -> Result<BTreeSet<usize>> {
    if extra > trace.removal_order.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot re-add {extra} sensors; only {} were removed",
            trace.removal_order.len()
        )));
    }
    let mut set = trace.final_set.clone();
    for &id in trace.removal_order.iter().rev().take(extra) {
        set.insert(id);
    }
    Ok(set)
}

fn binomial(m: u64, j: u64) -> u64 {
    let j = j.min(m - j);
    let mut acc: u64 = 1;
    for i in 0..j {
        acc = acc * (m - i) / (i + 1);
    }
    acc
}

/// Closed-form evaluation counts for each strategy.
pub fn combination_counts(m: u32, o: u32) -> Result<ComplexityCounts> {
    if o < 1 || o > m {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= o <= m, got o = {o}, m = {m}"
        )));
    }
    if m > 63 {
        return Err(Error::InvalidArgument(format!(
            "combination counts overflow u64 beyond m = 63, got m = {m}"
        )));
    }
    let (m64, o64) = (u64::from(m), u64::from(o));
    let removal_count = (m64 - o64 + 1) * (m64 + o64) / 2;
    let forward_count = (0..o64).map(|j| m64 - j).sum();
    let exhaustive_count = (1..=o64).map(|j| binomial(m64, j)).sum();
    let binary_count = 1u64 << m64;
    Ok(ComplexityCounts {
        m,
        o,
        removal_count,
        forward_count,
        exhaustive_count,
        binary_count,
    })
}
