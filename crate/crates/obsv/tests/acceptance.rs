//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`).
//!
//! ```bash
//! cargo test -p obsv --test acceptance -- --nocapture
//! ```
//!
//! Four-tank benchmark runs use the calibrated configuration shipped in
//! `configs/` (sensitivity horizon 60, rank tolerance 5e-5; validation
//! horizon 360 with a 180-sample warmup, 1% measurement noise, cold-side
//! initial guess). See the README for how these values were chosen.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use obsv::dynamics::{simulate_constant, JacobianConfig};
use obsv::estimation::{derive_seed, subset_comparison, EkfSetup, NoiseSpec};
use obsv::models::{
    four_cstr_catalog, four_cstr_continuous, four_cstr_model, make_linear_benchmark,
    nominal_inputs, steady_state_solve, FourCstrParams, LinearBenchmarkSpec, DEFAULT_DT,
    NOMINAL_STEADY_STATE,
};
use obsv::observability::{degree_of_observability, AnalysisContext, RankPolicy};
use obsv::selection::{backward_greedy, combination_counts, exhaustive_min_observable};
use obsv::sensitivity::{
    build_stacked, NormalizationMode, SensorCatalog, SensorDef, StackedSensitivity,
};

/// Reference outcome for the four-tank benchmark: removal order and final
/// pair reported for this process in the literature.
const REFERENCE_REMOVAL_ORDER: [usize; 6] = [5, 3, 6, 4, 2, 7];
const REFERENCE_FINAL_SET: [usize; 2] = [1, 8];
/// Reference low-degree pairs expected to validate poorly.
const REFERENCE_LOW_DEGREE_PAIRS: [[usize; 2]; 3] = [[1, 3], [5, 6], [3, 6]];

/// Calibrated benchmark configuration (see configs/four_cstr_*.toml).
const CSTR_SENSITIVITY_HORIZON: usize = 60;
const CSTR_RANK_TOL: f64 = 5e-5;
const CSTR_EST_HORIZON: usize = 360;
const CSTR_EST_WARMUP: usize = 180;
const CSTR_MEASUREMENT_REL: f64 = 0.01;
const CSTR_GUESS_FACTOR: f64 = 0.8;
const CSTR_EKF_PROCESS_REL: f64 = 1e-3;
const CSTR_P0_REL: f64 = 0.2;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {criterion:2} [{verdict}] {name}: {detail}");
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

struct CstrSetup {
    model: obsv::dynamics::DiscreteModel,
    catalog: SensorCatalog,
    xs: DVector<f64>,
    u: DVector<f64>,
}

fn cstr_setup() -> CstrSetup {
    let p = FourCstrParams::default();
    let continuous = four_cstr_continuous(&p);
    let u = nominal_inputs(&p);
    let guess = DVector::from_row_slice(&NOMINAL_STEADY_STATE);
    let xs = steady_state_solve(&continuous, &u, &guess, 1e-10).expect("steady state");
    let model = four_cstr_model(&p, DEFAULT_DT).expect("discretization");
    CstrSetup {
        model,
        catalog: four_cstr_catalog(),
        xs,
        u,
    }
}

fn cstr_context(setup: &CstrSetup) -> AnalysisContext {
    AnalysisContext::build(
        &setup.model,
        &setup.catalog,
        &setup.xs,
        &setup.u,
        Some(CSTR_SENSITIVITY_HORIZON),
        &JacobianConfig::default(),
        RankPolicy {
            relative_tol: CSTR_RANK_TOL,
        },
        NormalizationMode::Both,
    )
    .expect("analysis context")
}

fn set(ids: &[usize]) -> BTreeSet<usize> {
    ids.iter().copied().collect()
}

/// Criterion 1: the sensitivity-pipeline observability verdict agrees with
/// the stacked observability-matrix rank on every subset of >= 50 seeded
/// linear benchmarks, within 60 seconds.
#[test]
fn criterion_01_linear_oracle_equivalence() {
    let started = Instant::now();
    let mut benchmarks = 0usize;
    let mut subsets_checked = 0usize;
    let mut disagreements = Vec::new();
    let mut gate_violations = 0usize;

    for i in 0..50u64 {
        let n_states = 2 + (i as usize % 5); // 2..=6
        let n_sensors = 2 + ((i as usize * 7) % 11); // 2..=12
        let bench = make_linear_benchmark(&LinearBenchmarkSpec {
            n_states,
            n_sensors,
            seed: 1000 + i,
        })
        .expect("benchmark generation");
        benchmarks += 1;

        let model = bench.model();
        let catalog = bench.catalog();
        // Horizon n covers the full observability window of an n-state
        // linear system.
        let ctx = AnalysisContext::build(
            &model,
            &catalog,
            &bench.x0,
            &DVector::zeros(0),
            Some(n_states),
            &JacobianConfig::default(),
            RankPolicy::default(),
            NormalizationMode::Both,
        )
        .expect("context");

        let m = bench.n_sensors();
        for mask in 1usize..(1 << m) {
            let subset: BTreeSet<usize> =
                (0..m).filter(|b| mask & (1 << b) != 0).map(|b| b + 1).collect();
            let report = ctx.degree_for(&catalog, &subset).expect("degree");
            let pipeline_verdict = report.rank == n_states;
            let oracle_verdict = bench.is_subset_observable(&subset);
            subsets_checked += 1;
            if pipeline_verdict != oracle_verdict {
                disagreements.push((i, subset.clone()));
            }
            if (report.degree > 0.0) != (report.rank == n_states) {
                gate_violations += 1;
            }
        }
    }

    let elapsed = started.elapsed();
    let pass = disagreements.is_empty() && gate_violations == 0 && elapsed.as_secs() < 60;
    report(
        1,
        "linear oracle equivalence",
        pass,
        &format!(
            "{benchmarks} benchmarks, {subsets_checked} subsets, {} disagreements, \
             {gate_violations} gate violations, {:.1}s",
            disagreements.len(),
            elapsed.as_secs_f64()
        ),
    );
}

/// Literal normal-equations orthogonalization used as the reference for the
/// degree computation.
fn normal_equations_oracle(s: &DMatrix<f64>) -> (Vec<f64>, Vec<usize>) {
    let n = s.ncols();
    let mut chosen: Vec<usize> = Vec::new();
    let mut f_values = Vec::new();
    let mut order = Vec::new();
    for _ in 0..n {
        let residual = if chosen.is_empty() {
            s.clone()
        } else {
            let x = DMatrix::from_columns(&chosen.iter().map(|&j| s.column(j)).collect::<Vec<_>>());
            let xtx = x.transpose() * &x;
            let inv = xtx.try_inverse().expect("oracle X^T X invertible");
            s - &x * inv * x.transpose() * s
        };
        let mut best = usize::MAX;
        let mut best_norm = -1.0;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let nj = residual.column(j).norm();
            if nj > best_norm {
                best = j;
                best_norm = nj;
            }
        }
        chosen.push(best);
        order.push(best + 1);
        f_values.push(best_norm);
    }
    (f_values, order)
}

/// Criterion 2: the successive-orthogonalization scores and column order
/// match the normal-equations oracle on >= 100 random matrices to 1e-10,
/// with exact order agreement.
#[test]
fn criterion_02_orthogonalization_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_001);
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    let mut order_mismatches = 0usize;
    let mut gate_violations = 0usize;

    for _ in 0..110 {
        let rows = rng.random_range(4usize..=40);
        let cols = rng.random_range(2usize..=6.min(rows));
        let m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
        let (f_oracle, order_oracle) = normal_equations_oracle(&m);
        let report =
            degree_of_observability(&StackedSensitivity::from_matrix(m), &RankPolicy::default())
                .expect("degree");
        if report.column_order != order_oracle {
            order_mismatches += 1;
        }
        for (a, b) in report.f_values.iter().zip(f_oracle.iter()) {
            worst = worst.max((a - b).abs());
        }
        if (report.degree > 0.0) != (report.rank == report.column_order.len()) {
            gate_violations += 1;
        }
        checked += 1;
    }

    // Exact ties: orthonormal columns all tie on norm 1; both sides must
    // fall back to the lowest state index at every step.
    for n in 2..=6usize {
        let eye = DMatrix::<f64>::identity(n + 2, n);
        let report = degree_of_observability(
            &StackedSensitivity::from_matrix(eye.clone()),
            &RankPolicy::default(),
        )
        .expect("degree");
        let (_, order_oracle) = normal_equations_oracle(&eye);
        if report.column_order != order_oracle
            || report.column_order != (1..=n).collect::<Vec<_>>()
        {
            order_mismatches += 1;
        }
        checked += 1;
    }

    let pass = order_mismatches == 0 && worst < 1e-10 && gate_violations == 0;
    report(
        2,
        "orthogonalization oracle",
        pass,
        &format!(
            "{checked} matrices, worst score deviation {worst:.2e}, \
             {order_mismatches} order mismatches"
        ),
    );
}

/// Criterion 3: degree > 0 exactly when the matrix has full column rank,
/// across a randomized corpus plus the four-tank benchmark subsets.
#[test]
fn criterion_03_degree_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(333);
    let mut checked = 0usize;
    let mut violations = 0usize;

    for _ in 0..300 {
        let rows = rng.random_range(2usize..=20);
        let cols = rng.random_range(1usize..=6);
        let mut m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        // Half the corpus is made structurally rank-deficient.
        if cols >= 2 && rng.random_bool(0.5) {
            let dup = m.column(0).into_owned();
            m.set_column(cols - 1, &dup);
        }
        let report =
            degree_of_observability(&StackedSensitivity::from_matrix(m), &RankPolicy::default())
                .expect("degree");
        if (report.degree > 0.0) != (report.rank == cols) {
            violations += 1;
        }
        checked += 1;
    }

    // Every pair and singleton of the four-tank benchmark.
    let setup = cstr_setup();
    let ctx = cstr_context(&setup);
    for i in 1..=8usize {
        for j in i..=8 {
            let subset = if i == j { set(&[i]) } else { set(&[i, j]) };
            let r = ctx.degree_for(&setup.catalog, &subset).expect("degree");
            if (r.degree > 0.0) != (r.rank == 8) {
                violations += 1;
            }
            checked += 1;
        }
    }

    report(
        3,
        "degree gate",
        violations == 0,
        &format!("{checked} matrices/subsets, {violations} violations"),
    );
}

/// Criterion 4: every entry of the stacked sensitivity on the four-tank
/// model (K = 20) matches a two-sided trajectory-perturbation oracle within
/// max(1e-4 relative, 1e-7 absolute).
#[test]
fn criterion_04_sensitivity_fd_consistency() {
    let setup = cstr_setup();
    let k_steps = 20usize;
    let traj = simulate_constant(&setup.model, &setup.xs, &setup.u, k_steps).expect("simulate");
    let s_x = obsv::dynamics::propagate_state_sensitivity(
        &setup.model,
        &traj,
        &JacobianConfig::default(),
    )
    .expect("sensitivities");
    let stacked = build_stacked(&setup.catalog, &setup.catalog.all_ids(), &traj, &s_x)
        .expect("stacked");

    // Oracle: finite-difference the whole trajectory against each initial
    // state component.
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut violations = 0usize;
    let mut entries = 0usize;
    for j in 0..8 {
        let delta = 1e-5 * setup.xs[j].abs();
        let mut xp = setup.xs.clone();
        xp[j] += delta;
        let mut xm = setup.xs.clone();
        xm[j] -= delta;
        let tp = simulate_constant(&setup.model, &xp, &setup.u, k_steps).expect("plus sim");
        let tm = simulate_constant(&setup.model, &xm, &setup.u, k_steps).expect("minus sim");
        for (row, &(sensor_id, k)) in stacked.row_index.iter().enumerate() {
            let sensor = setup.catalog.sensor(sensor_id).expect("sensor");
            let oracle =
                (sensor.read(&tp.states[k]) - sensor.read(&tm.states[k])) / (2.0 * delta);
            let got = stacked.matrix[(row, j)];
            let err = (got - oracle).abs();
            let tol = (1e-4 * oracle.abs()).max(1e-7);
            if err > tol {
                violations += 1;
            }
            worst_abs = worst_abs.max(err);
            if oracle.abs() > 1e-12 {
                worst_rel = worst_rel.max(err / oracle.abs());
            }
            entries += 1;
        }
    }

    report(
        4,
        "sensitivity FD consistency",
        violations == 0,
        &format!(
            "{entries} entries, worst abs {worst_abs:.2e}, worst rel {worst_rel:.2e}, \
             {violations} outside max(1e-4 rel, 1e-7 abs)"
        ),
    );
}

/// Criterion 5: backward elimination reaches a two-sensor observable set,
/// exhaustive search confirms minimum size two and the same best pair. A
/// match of the reference outcome passes outright; a divergence passes only
/// with internal consistency and is documented here.
#[test]
fn criterion_05_greedy_vs_exhaustive_on_cstr() {
    let setup = cstr_setup();
    let ctx = cstr_context(&setup);

    let trace = backward_greedy(&setup.catalog, &ctx.traj, &ctx.s_x, &ctx.scales, &ctx.policy)
        .expect("backward greedy");
    let (min_size, best_set, best_degree) = exhaustive_min_observable(
        &setup.catalog,
        &ctx.traj,
        &ctx.s_x,
        &ctx.scales,
        &ctx.policy,
        16,
    )
    .expect("exhaustive search");

    let greedy_is_pair = trace.final_set.len() == 2 && trace.final_degree > 0.0;
    let exhaustive_confirms = min_size == 2;
    let pair_agreement = trace.final_set == best_set;
    let consistent = greedy_is_pair && exhaustive_confirms && pair_agreement;

    let matches_reference = trace.removal_order == REFERENCE_REMOVAL_ORDER
        && trace.final_set == set(&REFERENCE_FINAL_SET);
    let detail = if matches_reference {
        format!(
            "matches the reference outcome outright: removal order {:?}, final set {:?}, \
             exhaustive best degree {best_degree:.2}",
            trace.removal_order, trace.final_set
        )
    } else {
        format!(
            "DIVERGES from the reference outcome (reference order {:?}, set {:?}): \
             got order {:?}, set {:?}; internal greedy/exhaustive consistency {}",
            REFERENCE_REMOVAL_ORDER,
            REFERENCE_FINAL_SET,
            trace.removal_order,
            trace.final_set,
            if consistent { "holds" } else { "FAILS" }
        )
    };
    report(5, "greedy vs exhaustive on the four-tank benchmark", consistent, &detail);
}

/// Criterion 6: the steady-state solve converges below 1e-8 scaled residual
/// and lands within 10% per component of the reference operating point.
#[test]
fn criterion_06_steady_state_proximity() {
    let p = FourCstrParams::default();
    let continuous = four_cstr_continuous(&p);
    let u = nominal_inputs(&p);
    let reference = DVector::from_row_slice(&NOMINAL_STEADY_STATE);
    let guess = &reference * 1.1;
    let xs = steady_state_solve(&continuous, &u, &guess, 1e-8).expect("steady-state solve");

    let rhs = obsv::models::four_cstr_rhs(&xs, &u, &p).expect("rhs");
    let residual = rhs
        .iter()
        .zip(xs.iter())
        .map(|(r, x)| r.abs() / x.abs().max(1.0))
        .fold(0.0f64, f64::max);

    let mut worst_component = 0.0f64;
    for j in 0..8 {
        let rel = (xs[j] - reference[j]).abs() / reference[j].abs();
        worst_component = worst_component.max(rel);
    }

    let pass = residual < 1e-8 && worst_component < 0.10;
    report(
        6,
        "steady-state proximity",
        pass,
        &format!(
            "scaled residual {residual:.2e}, worst component deviation {:.2}% (bound 10%)",
            worst_component * 100.0
        ),
    );
}

/// Criterion 7: over the pipeline's observable pairs with 10 seeded runs
/// each, the greedy-selected pair attains the minimum mean RMSE and the
/// three reference low-degree pairs fall in the worst half, in at least 2 of
/// 3 independent seed batches, within 10 minutes.
#[test]
fn criterion_07_estimation_ranking() {
    let started = Instant::now();
    let setup = cstr_setup();
    let ctx = cstr_context(&setup);

    let trace = backward_greedy(&setup.catalog, &ctx.traj, &ctx.s_x, &ctx.scales, &ctx.policy)
        .expect("backward greedy");
    let greedy_pair: Vec<usize> = trace.final_set.iter().copied().collect();

    // Panel: every observable pair under the benchmark configuration.
    let mut panel: Vec<BTreeSet<usize>> = Vec::new();
    for i in 1..=8usize {
        for j in (i + 1)..=8 {
            let subset = set(&[i, j]);
            if ctx.degree_for(&setup.catalog, &subset).expect("degree").degree > 0.0 {
                panel.push(subset);
            }
        }
    }
    let trio_present = REFERENCE_LOW_DEGREE_PAIRS
        .iter()
        .all(|p| panel.contains(&set(p)));
    assert!(
        trio_present,
        "reference low-degree pairs must be in the observable panel"
    );

    let y_ref: Vec<f64> = setup.catalog.iter().map(|s| s.read(&setup.xs)).collect();
    let ekf = EkfSetup::from_operating_point(
        &setup.xs,
        CSTR_GUESS_FACTOR,
        CSTR_EKF_PROCESS_REL,
        CSTR_P0_REL,
        CSTR_EST_WARMUP,
    );
    let inputs = vec![setup.u.clone(); CSTR_EST_HORIZON];

    let mut batch_outcomes = Vec::new();
    for batch in 0..3u64 {
        let noise = NoiseSpec {
            process_std: DVector::zeros(8),
            measurement_std: y_ref.iter().map(|v| CSTR_MEASUREMENT_REL * v.abs()).collect(),
            seed: derive_seed(42, 7, batch),
        };
        let rows = subset_comparison(
            &setup.model,
            &setup.catalog,
            &panel,
            10,
            &setup.xs,
            &inputs,
            &noise,
            &ekf,
            &ctx,
        )
        .expect("subset comparison");

        let position = |target: &[usize]| rows.iter().position(|r| r.subset == target);
        let greedy_rank = position(&greedy_pair).map(|i| i + 1);
        let worst_half_start = rows.len() / 2 + 1;
        let trio_ranks: Vec<Option<usize>> = REFERENCE_LOW_DEGREE_PAIRS
            .iter()
            .map(|p| position(p).map(|i| i + 1))
            .collect();
        let trio_in_worst_half = trio_ranks
            .iter()
            .all(|r| r.is_some_and(|v| v >= worst_half_start));
        let ok = greedy_rank == Some(1) && trio_in_worst_half;
        println!(
            "  batch {batch}: greedy pair {greedy_pair:?} rank {greedy_rank:?}, \
             low-degree ranks {trio_ranks:?} of {} (worst half >= {worst_half_start}), \
             failed runs {}",
            rows.len(),
            rows.iter().map(|r| r.failed_runs).sum::<usize>()
        );
        batch_outcomes.push(ok);
    }

    let wins = batch_outcomes.iter().filter(|&&b| b).count();
    let elapsed = started.elapsed();
    let pass = wins >= 2 && elapsed.as_secs() < 600;
    report(
        7,
        "estimation ranking",
        pass,
        &format!(
            "{wins}/3 batches satisfied (need >= 2), panel of {} pairs, {:.0}s",
            panel.len(),
            elapsed.as_secs_f64()
        ),
    );
}

/// Criterion 8: the evaluation-count formulas equal brute-force enumeration
/// for all 1 <= o <= m <= 12 and reproduce removal_count = 91 at (16, 10).
#[test]
fn criterion_08_combination_counts() {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for m in 1u32..=12 {
        for o in 1..=m {
            let c = combination_counts(m, o).expect("counts");
            let removal: u64 = (o..=m).map(u64::from).sum();
            let forward: u64 = (0..o).map(|j| u64::from(m - j)).sum();
            let exhaustive = (1u64..(1 << m))
                .filter(|mask| (1..=o).contains(&mask.count_ones()))
                .count() as u64;
            if c.removal_count != removal
                || c.forward_count != forward
                || c.exhaustive_count != exhaustive
                || c.binary_count != (1u64 << m)
            {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    let instance = combination_counts(16, 10).expect("counts");
    let pass = mismatches == 0 && instance.removal_count == 91;
    report(
        8,
        "combination counts",
        pass,
        &format!(
            "{checked} (m,o) pairs vs brute force, {mismatches} mismatches, \
             removal(16,10) = {}",
            instance.removal_count
        ),
    );
}

/// Catalog identical to the benchmark's, with one sensor's output rescaled
/// by a constant (exact gradient supplied so the scaling is the only
/// difference).
fn scaled_cstr_catalog(scaled_sensor: usize, factor: f64) -> SensorCatalog {
    let sensors = (1..=8usize)
        .map(|id| {
            let mut row = nalgebra::RowDVector::zeros(8);
            row[id - 1] = if id == scaled_sensor { factor } else { 1.0 };
            SensorDef::linear(id, format!("y{id}"), row)
        })
        .collect();
    SensorCatalog::new(8, sensors).expect("catalog")
}

/// Criterion 9: rescaling any single sensor's output units changes no
/// selection trace, degree or rank after scale-aware normalization.
/// Power-of-two factors must reproduce the trace byte for byte; the decimal
/// factor 1e3 must reproduce the structure exactly and all degrees to 1e-12
/// relative.
#[test]
fn criterion_09_normalization_invariance() {
    let setup = cstr_setup();
    let base_catalog = scaled_cstr_catalog(1, 1.0);
    let base_ctx = AnalysisContext::build(
        &setup.model,
        &base_catalog,
        &setup.xs,
        &setup.u,
        Some(CSTR_SENSITIVITY_HORIZON),
        &JacobianConfig::default(),
        RankPolicy {
            relative_tol: CSTR_RANK_TOL,
        },
        NormalizationMode::Both,
    )
    .expect("context");
    let base_trace = backward_greedy(
        &base_catalog,
        &base_ctx.traj,
        &base_ctx.s_x,
        &base_ctx.scales,
        &base_ctx.policy,
    )
    .expect("base trace");
    let base_json = serde_json::to_string(&base_trace).expect("serialize");

    let mut bitwise_failures = Vec::new();
    for sensor in 1..=8usize {
        let catalog = scaled_cstr_catalog(sensor, 1024.0);
        let scales = obsv::sensitivity::default_scales(&catalog, &base_ctx.traj)
            .with_mode(NormalizationMode::Both);
        let trace = backward_greedy(
            &catalog,
            &base_ctx.traj,
            &base_ctx.s_x,
            &scales,
            &base_ctx.policy,
        )
        .expect("scaled trace");
        if serde_json::to_string(&trace).expect("serialize") != base_json {
            bitwise_failures.push(sensor);
        }
    }

    // Decimal factor: identical structure, degrees equal to roundoff.
    let catalog = scaled_cstr_catalog(3, 1000.0);
    let scales = obsv::sensitivity::default_scales(&catalog, &base_ctx.traj)
        .with_mode(NormalizationMode::Both);
    let decimal_trace = backward_greedy(
        &catalog,
        &base_ctx.traj,
        &base_ctx.s_x,
        &scales,
        &base_ctx.policy,
    )
    .expect("decimal trace");
    let structure_ok = decimal_trace.removal_order == base_trace.removal_order
        && decimal_trace.final_set == base_trace.final_set
        && decimal_trace.final_rank == base_trace.final_rank;
    let mut worst_degree_dev: f64 = 0.0;
    for (a, b) in decimal_trace.steps.iter().zip(base_trace.steps.iter()) {
        for (id, d) in &a.candidate_degrees {
            let base_d = b.candidate_degrees[id];
            let dev = (d - base_d).abs() / base_d.abs().max(1.0);
            worst_degree_dev = worst_degree_dev.max(dev);
        }
    }

    let pass = bitwise_failures.is_empty() && structure_ok && worst_degree_dev < 1e-12;
    report(
        9,
        "normalization invariance",
        pass,
        &format!(
            "x1024 byte-identical traces for all 8 sensors (failures: {bitwise_failures:?}); \
             x1000 structure identical = {structure_ok}, worst degree deviation {worst_degree_dev:.2e}"
        ),
    );
}

/// Criterion 10: identical config + seeds produce byte-identical report
/// bundles across repeated runs and across thread counts 1 and 8.
#[test]
fn criterion_10_determinism() {
    use obsv::cli::{bundle_fingerprint, metadata_without_timing, RunConfig};

    let tmp = tempfile::tempdir().expect("tempdir");
    let config_for = |dir: &str, threads: usize| {
        let mut cfg = RunConfig::from_toml_str(
            r#"
            seed = 42
            [model]
            kind = "four-cstr"
            [analysis]
            horizon = 60
            rank-tol = 5e-5
            [selection]
            strategy = "backward"
            augment = 2
            [noise]
            process-rel = 0.0
            measurement-rel = 0.01
            [estimate]
            panel = "listed"
            subsets = [[1, 8], [3, 6], [1, 2, 7]]
            runs-per-subset = 3
            horizon = 60
            warmup = 20
            x0-guess-factor = 0.8
            "#,
        )
        .expect("config");
        cfg.out_dir = tmp.path().join(dir);
        cfg.threads = threads;
        cfg
    };

    // Two select runs, single-threaded baseline vs repeat and 8 threads.
    let runs = [
        ("select-a", 1usize),
        ("select-b", 1),
        ("select-c", 8),
    ];
    let mut select_prints = Vec::new();
    for (dir, threads) in runs {
        let cfg = config_for(dir, threads);
        obsv::cli::cmd_select(&cfg).expect("select");
        select_prints.push((
            bundle_fingerprint(&cfg.out_dir).expect("fingerprint"),
            metadata_without_timing(&cfg.out_dir).expect("metadata"),
        ));
    }
    // Thread count is echoed in the config metadata, so compare it only
    // between runs with identical configs.
    assert!(
        !select_prints[0].0.is_empty(),
        "select bundle produced no files"
    );
    let select_ok = select_prints[0].0 == select_prints[1].0
        && select_prints[0].1 == select_prints[1].1
        && select_prints[0].0 == select_prints[2].0;

    let mut estimate_prints = Vec::new();
    for (dir, threads) in [("est-a", 1usize), ("est-b", 1), ("est-c", 8)] {
        let cfg = config_for(dir, threads);
        obsv::cli::cmd_estimate(&cfg).expect("estimate");
        estimate_prints.push((
            bundle_fingerprint(&cfg.out_dir).expect("fingerprint"),
            metadata_without_timing(&cfg.out_dir).expect("metadata"),
        ));
    }
    assert!(
        !estimate_prints[0].0.is_empty(),
        "estimate bundle produced no files"
    );
    let estimate_ok = estimate_prints[0].0 == estimate_prints[1].0
        && estimate_prints[0].1 == estimate_prints[1].1
        && estimate_prints[0].0 == estimate_prints[2].0;

    let pass = select_ok && estimate_ok;
    report(
        10,
        "determinism",
        pass,
        &format!(
            "select bundles identical across rerun and 1-vs-8 threads: {select_ok}; \
             estimate bundles identical: {estimate_ok}"
        ),
    );
}
