//! Command drivers behind the `obsv` binary: selection, subset validation
//! and complexity benchmarking, each producing a [`ReportBundle`].

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::DVector;

use crate::dynamics::{DiscreteModel, JacobianConfig};
use crate::error::{Error, Result};
use crate::estimation::{subset_comparison, EkfSetup, NoiseSpec};
use crate::models::{
    self, four_cstr::FourCstrManifest, make_linear_benchmark, make_synthetic_network,
    LinearBenchmarkSpec, SyntheticNetworkSpec,
};
use crate::observability::{AnalysisContext, ObservabilityReport, RankPolicy};
use crate::selection::{
    backward_greedy, combination_counts, exhaustive_min_observable, forward_greedy, augment_set,
    SelectionTrace,
};
use crate::sensitivity::SensorCatalog;

use super::config::{ModelConfig, Panel, RunConfig, Strategy};
use super::report::{bundle_fingerprint, format_set, CsvTable, ReportBundle};

/// A fully assembled system ready for analysis.
pub struct PreparedModel {
    pub model: DiscreteModel,
    pub catalog: SensorCatalog,
    pub x0: DVector<f64>,
    pub u: DVector<f64>,
    pub label: String,
    /// Constants manifest for reactor models, echoed into bundles for audit.
    pub manifest: Option<FourCstrManifest>,
}

/// Build the configured model, catalog and nominal operating point.
pub fn prepare_model(cfg: &RunConfig) -> Result<PreparedModel> {
    match &cfg.model {
        ModelConfig::FourCstr { dt } => prepare_four_cstr(models::FourCstrParams::default(), *dt),
        ModelConfig::Manifest { path, dt } => prepare_four_cstr(FourCstrManifest::load(path)?, *dt),
        ModelConfig::LinearBenchmark {
            n_states,
            n_sensors,
            seed,
        } => {
            let bench = make_linear_benchmark(&LinearBenchmarkSpec {
                n_states: *n_states,
                n_sensors: *n_sensors,
                seed: seed.unwrap_or(cfg.seed),
            })?;
            Ok(PreparedModel {
                model: bench.model(),
                catalog: bench.catalog(),
                x0: bench.x0.clone(),
                u: DVector::zeros(0),
                label: format!("linear-benchmark(n={n_states}, m={n_sensors})"),
                manifest: None,
            })
        }
        ModelConfig::Synthetic {
            n_states,
            n_sensors,
            coupling_density,
            nonlinearity,
            seed,
        } => {
            let net = make_synthetic_network(&SyntheticNetworkSpec {
                n_states: *n_states,
                n_sensors: *n_sensors,
                coupling_density: *coupling_density,
                nonlinearity: *nonlinearity,
                seed: seed.unwrap_or(cfg.seed),
            })?;
            Ok(PreparedModel {
                model: net.model,
                catalog: net.catalog,
                x0: net.x0,
                u: DVector::from_element(1, 0.0),
                label: format!("synthetic(n={n_states}, m={n_sensors})"),
                manifest: None,
            })
        }
    }
}

fn prepare_four_cstr(params: models::FourCstrParams, dt: f64) -> Result<PreparedModel> {
    let continuous = models::four_cstr_continuous(&params);
    let u = models::nominal_inputs(&params);
    let guess = DVector::from_row_slice(&models::NOMINAL_STEADY_STATE);
    let x0 = models::steady_state_solve(&continuous, &u, &guess, 1e-10)?;
    Ok(PreparedModel {
        model: models::four_cstr_model(&params, dt)?,
        catalog: models::four_cstr_catalog(),
        x0,
        u,
        label: "four-cstr".to_string(),
        manifest: Some(FourCstrManifest {
            params,
            notes: FourCstrManifest::default_manifest().notes,
        }),
    })
}

fn build_context(cfg: &RunConfig, prepared: &PreparedModel) -> Result<AnalysisContext> {
    AnalysisContext::build(
        &prepared.model,
        &prepared.catalog,
        &prepared.x0,
        &prepared.u,
        cfg.analysis.horizon,
        &JacobianConfig::default(),
        RankPolicy::new(cfg.analysis.rank_tol)?,
        cfg.analysis.normalization,
    )
}

fn noise_from_config(cfg: &RunConfig, prepared: &PreparedModel) -> Result<NoiseSpec> {
    let n = prepared.model.n_states;
    let m = prepared.catalog.len();
    let process_std = match &cfg.noise.process_std {
        Some(v) => {
            if v.len() != n {
                return Err(Error::Config(format!(
                    "process-std has {} entries, model has {n} states",
                    v.len()
                )));
            }
            DVector::from_row_slice(v)
        }
        None => prepared.x0.map(|x| cfg.noise.process_rel * x.abs()),
    };
    let measurement_std = match &cfg.noise.measurement_std {
        Some(v) => {
            if v.len() != m {
                return Err(Error::Config(format!(
                    "measurement-std has {} entries, catalog has {m} sensors",
                    v.len()
                )));
            }
            v.clone()
        }
        None => prepared
            .catalog
            .iter()
            .map(|s| cfg.noise.measurement_rel * s.read(&prepared.x0).abs())
            .collect(),
    };
    let spec = NoiseSpec {
        process_std,
        measurement_std,
        seed: cfg.seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

fn spectra_csv(reports: &[(String, ObservabilityReport)]) -> Result<Vec<u8>> {
    let mut table = CsvTable::new(&["set", "index", "singular_value"])?;
    for (label, report) in reports {
        for (i, sigma) in report.singular_values.iter().enumerate() {
            table.row(&[label.clone(), (i + 1).to_string(), sigma.to_string()])?;
        }
    }
    table.into_bytes()
}

/// Per-step summary of a backward-elimination trace, one row per surviving
/// set size. The final row reports the best (still unobservable) candidate
/// the search refused to take: its degree is zero and its information sum is
/// shown alongside the deficient rank.
fn selection_summary_csv(
    trace: &SelectionTrace,
    ctx: &AnalysisContext,
    catalog: &SensorCatalog,
) -> Result<Vec<u8>> {
    let mut table = CsvTable::new(&[
        "m",
        "removed_set",
        "sensor_set",
        "rank",
        "degree_max",
        "f_total",
        "sensor_to_remove",
    ])?;

    let mut removed: Vec<usize> = Vec::new();
    let mut current = trace.initial_set.clone();
    let mut degree = trace.initial_degree;
    let mut rank = trace.initial_rank;
    // f_total of the current set equals its degree while observable.
    let mut f_total = trace.initial_degree;

    for step in &trace.steps {
        let to_remove = match step.removed {
            Some(id) => id.to_string(),
            None => {
                // Terminal step: show the candidate with the largest
                // information sum, the removal the search declined.
                step.candidate_f_totals
                    .iter()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)))
                    .map(|(id, _)| id.to_string())
                    .unwrap_or_default()
            }
        };
        table.row(&[
            current.len().to_string(),
            format_set(removed.iter()),
            format_set(current.iter()),
            rank.to_string(),
            degree.to_string(),
            f_total.to_string(),
            to_remove.clone(),
        ])?;
        match step.removed {
            Some(id) => {
                removed.push(id);
                current = step.resulting_set.clone();
                degree = step.resulting_degree;
                rank = step.resulting_rank;
                f_total = step.resulting_degree;
            }
            None => {
                // Emit the declined candidate's row and stop.
                if let Ok(virtual_id) = to_remove.parse::<usize>() {
                    let mut virtual_set = current.clone();
                    virtual_set.remove(&virtual_id);
                    if !virtual_set.is_empty() {
                        let report = ctx.degree_for(catalog, &virtual_set)?;
                        let mut removed_v = removed.clone();
                        removed_v.push(virtual_id);
                        table.row(&[
                            virtual_set.len().to_string(),
                            format_set(removed_v.iter()),
                            format_set(virtual_set.iter()),
                            report.rank.to_string(),
                            report.degree.to_string(),
                            report.f_total.to_string(),
                            String::new(),
                        ])?;
                    }
                }
                break;
            }
        }
    }
    table.into_bytes()
}

fn candidate_degrees_csv(trace: &SelectionTrace) -> Result<Vec<u8>> {
    let mut table = CsvTable::new(&["step", "set_size", "candidate", "degree", "f_total", "rank"])?;
    for step in &trace.steps {
        let size = step.candidate_degrees.len();
        for (id, degree) in &step.candidate_degrees {
            table.row(&[
                step.step_index.to_string(),
                size.to_string(),
                id.to_string(),
                degree.to_string(),
                step.candidate_f_totals[id].to_string(),
                step.candidate_ranks[id].to_string(),
            ])?;
        }
    }
    table.into_bytes()
}

/// Run the configured selection strategy and write the trace bundle.
pub fn cmd_select(cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let started = Instant::now();
    let prepared = prepare_model(cfg)?;
    let mut bundle = ReportBundle::new(&cfg.out_dir)?;
    if let Some(manifest) = &prepared.manifest {
        bundle.write_json("model_manifest.json", manifest)?;
    }

    run_in_pool(cfg.threads, || {
        let ctx = build_context(cfg, &prepared)?;
        let catalog = &prepared.catalog;
        let mut spectra: Vec<(String, ObservabilityReport)> = Vec::new();

        match cfg.selection.strategy {
            Strategy::Backward => {
                let trace = backward_greedy(catalog, &ctx.traj, &ctx.s_x, &ctx.scales, &ctx.policy)?;
                bundle.write_json("selection_trace.json", &trace)?;
                bundle.write(
                    "selection_summary.csv",
                    &selection_summary_csv(&trace, &ctx, catalog)?,
                )?;
                bundle.write("candidate_degrees.csv", &candidate_degrees_csv(&trace)?)?;

                spectra.push((
                    format_set(trace.initial_set.iter()),
                    ctx.degree_for(catalog, &trace.initial_set)?,
                ));
                for step in &trace.steps {
                    if step.removed.is_some() {
                        spectra.push((
                            format_set(step.resulting_set.iter()),
                            ctx.degree_for(catalog, &step.resulting_set)?,
                        ));
                    }
                }

                if cfg.selection.augment > 0 {
                    let augmented = augment_set(&trace, cfg.selection.augment)?;
                    let report = ctx.degree_for(catalog, &augmented)?;
                    bundle.write_json(
                        "augmented_set.json",
                        &serde_json::json!({
                            "extra": cfg.selection.augment,
                            "set": augmented.iter().copied().collect::<Vec<_>>(),
                            "degree": report.degree,
                            "rank": report.rank,
                        }),
                    )?;
                }
            }
            Strategy::Forward => {
                let target = cfg.selection.target_size.unwrap_or(catalog.len());
                let order =
                    forward_greedy(catalog, &ctx.traj, &ctx.s_x, &ctx.scales, &ctx.policy, target)?;
                let mut table =
                    CsvTable::new(&["size", "added", "sensor_set", "rank", "degree_max", "f_total"])?;
                let mut chosen: BTreeSet<usize> = BTreeSet::new();
                let mut steps_json = Vec::new();
                for &id in &order {
                    chosen.insert(id);
                    let report = ctx.degree_for(catalog, &chosen)?;
                    table.row(&[
                        chosen.len().to_string(),
                        id.to_string(),
                        format_set(chosen.iter()),
                        report.rank.to_string(),
                        report.degree.to_string(),
                        report.f_total.to_string(),
                    ])?;
                    steps_json.push(serde_json::json!({
                        "added": id,
                        "set": chosen.iter().copied().collect::<Vec<_>>(),
                        "degree": report.degree,
                        "rank": report.rank,
                    }));
                    spectra.push((format_set(chosen.iter()), report));
                }
                bundle.write_json(
                    "selection_trace.json",
                    &serde_json::json!({ "strategy": "forward", "order": order, "steps": steps_json }),
                )?;
                bundle.write("selection_summary.csv", &table.into_bytes()?)?;
            }
            Strategy::Exhaustive => {
                let (min_size, best, degree) = exhaustive_min_observable(
                    catalog,
                    &ctx.traj,
                    &ctx.s_x,
                    &ctx.scales,
                    &ctx.policy,
                    cfg.selection.max_m,
                )?;
                let report = ctx.degree_for(catalog, &best)?;
                bundle.write_json(
                    "selection_trace.json",
                    &serde_json::json!({
                        "strategy": "exhaustive",
                        "min_size": min_size,
                        "best_set": best.iter().copied().collect::<Vec<_>>(),
                        "degree": degree,
                        "rank": report.rank,
                    }),
                )?;
                let mut table = CsvTable::new(&["min_size", "best_set", "rank", "degree_max"])?;
                table.row(&[
                    min_size.to_string(),
                    format_set(best.iter()),
                    report.rank.to_string(),
                    degree.to_string(),
                ])?;
                bundle.write("selection_summary.csv", &table.into_bytes()?)?;
                spectra.push((format_set(best.iter()), report));
            }
        }

        bundle.write("singular_values.csv", &spectra_csv(&spectra)?)?;
        Ok(())
    })?;

    bundle.finish("select", cfg, started.elapsed())?;
    log::info!(
        "select: wrote {} files to {}",
        bundle.files.len(),
        bundle.out_dir.display()
    );
    Ok(bundle)
}

/// Assemble the validation panel for `cmd_estimate`.
fn build_panel(
    cfg: &RunConfig,
    catalog: &SensorCatalog,
    ctx: &AnalysisContext,
) -> Result<Vec<BTreeSet<usize>>> {
    match cfg.estimate.panel {
        Panel::ObservablePairs => {
            use itertools::Itertools;
            let mut panel = Vec::new();
            for combo in (1..=catalog.len()).combinations(2) {
                let subset: BTreeSet<usize> = combo.into_iter().collect();
                if ctx.degree_for(catalog, &subset)?.degree > 0.0 {
                    panel.push(subset);
                }
            }
            if panel.is_empty() {
                return Err(Error::NotObservable);
            }
            Ok(panel)
        }
        Panel::Listed => {
            if cfg.estimate.subsets.is_empty() {
                return Err(Error::Config(
                    "panel = \"listed\" requires a non-empty estimate.subsets list".into(),
                ));
            }
            cfg.estimate
                .subsets
                .iter()
                .map(|ids| {
                    let set: BTreeSet<usize> = ids.iter().copied().collect();
                    if set.is_empty() {
                        return Err(Error::Config("subsets entries must be non-empty".into()));
                    }
                    for &id in &set {
                        catalog.sensor(id)?;
                    }
                    Ok(set)
                })
                .collect()
        }
    }
}

/// Validate a panel of subsets with seeded EKF runs and write the
/// mean/std RMSE table with degrees attached.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let started = Instant::now();
    let prepared = prepare_model(cfg)?;
    let mut bundle = ReportBundle::new(&cfg.out_dir)?;
    if let Some(manifest) = &prepared.manifest {
        bundle.write_json("model_manifest.json", manifest)?;
    }

    run_in_pool(cfg.threads, || {
        let ctx = build_context(cfg, &prepared)?;
        let catalog = &prepared.catalog;
        let panel = build_panel(cfg, catalog, &ctx)?;
        let noise = noise_from_config(cfg, &prepared)?;
        let inputs = vec![prepared.u.clone(); cfg.estimate.horizon];

        // The filter's assumed process noise never drops below the
        // configured floor even when the injected level is smaller.
        let mut setup = EkfSetup::from_operating_point(
            &prepared.x0,
            cfg.estimate.x0_guess_factor,
            cfg.estimate.ekf_process_rel,
            cfg.estimate.p0_rel,
            cfg.estimate.warmup,
        );
        for i in 0..prepared.model.n_states {
            let injected = noise.process_std[i];
            setup.q_w[(i, i)] = setup.q_w[(i, i)].max(injected * injected);
        }

        let rows = subset_comparison(
            &prepared.model,
            catalog,
            &panel,
            cfg.estimate.runs_per_subset,
            &prepared.x0,
            &inputs,
            &noise,
            &setup,
            &ctx,
        )?;

        let mut table = CsvTable::new(&[
            "subset",
            "mean_rmse",
            "std_rmse",
            "mean_normalized_error",
            "degree",
            "rank",
            "runs",
            "failed_runs",
        ])?;
        for row in &rows {
            table.row(&[
                format_set(row.subset.iter()),
                row.mean_rmse.to_string(),
                row.std_rmse.to_string(),
                row.mean_normalized_error.to_string(),
                row.degree.to_string(),
                row.rank.to_string(),
                row.runs.to_string(),
                row.failed_runs.to_string(),
            ])?;
        }
        bundle.write("estimation_comparison.csv", &table.into_bytes()?)?;
        bundle.write_json("estimation_comparison.json", &rows)?;

        // Degree table and spectra for the panel, sorted by degree.
        let mut degree_rows: Vec<(String, ObservabilityReport)> = panel
            .iter()
            .map(|s| Ok((format_set(s.iter()), ctx.degree_for(catalog, s)?)))
            .collect::<Result<Vec<_>>>()?;
        degree_rows.sort_by(|a, b| b.1.degree.partial_cmp(&a.1.degree).unwrap());
        let mut table = CsvTable::new(&["subset", "degree", "rank", "f_total"])?;
        for (label, report) in &degree_rows {
            table.row(&[
                label.clone(),
                report.degree.to_string(),
                report.rank.to_string(),
                report.f_total.to_string(),
            ])?;
        }
        bundle.write("degree_table.csv", &table.into_bytes()?)?;
        bundle.write("singular_values.csv", &spectra_csv(&degree_rows)?)?;
        Ok(())
    })?;

    bundle.finish("estimate", cfg, started.elapsed())?;
    Ok(bundle)
}

/// Evaluation-count tables and optional wall-clock timings per strategy.
pub fn cmd_bench(cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let started = Instant::now();
    let mut bundle = ReportBundle::new(&cfg.out_dir)?;

    run_in_pool(cfg.threads, || {
        let mut counts = cfg.bench.counts.clone();
        counts.sort_unstable();
        let mut table = CsvTable::new(&[
            "m",
            "o",
            "removal_count",
            "forward_count",
            "exhaustive_count",
            "binary_count",
        ])?;
        for [m, o] in &counts {
            let c = combination_counts(*m, *o)?;
            table.row(&[
                c.m.to_string(),
                c.o.to_string(),
                c.removal_count.to_string(),
                c.forward_count.to_string(),
                c.exhaustive_count.to_string(),
                c.binary_count.to_string(),
            ])?;
        }
        bundle.write("combination_counts.csv", &table.into_bytes()?)?;

        if cfg.bench.time_strategies {
            let mut sizes = cfg.bench.sizes.clone();
            sizes.sort_unstable();
            let mut timing = CsvTable::new(&[
                "model",
                "m",
                "strategy",
                "wall_clock_ms",
                "result_size",
            ])?;
            for &m in &sizes {
                let mut sized_cfg = cfg.clone();
                sized_cfg.model = match &cfg.model {
                    ModelConfig::FourCstr { dt } | ModelConfig::Manifest { dt, .. } => {
                        ModelConfig::FourCstr { dt: *dt }
                    }
                    ModelConfig::LinearBenchmark { n_states, seed, .. } => {
                        ModelConfig::LinearBenchmark {
                            n_states: *n_states,
                            n_sensors: m,
                            seed: *seed,
                        }
                    }
                    ModelConfig::Synthetic {
                        n_states,
                        coupling_density,
                        nonlinearity,
                        seed,
                        ..
                    } => ModelConfig::Synthetic {
                        n_states: *n_states,
                        n_sensors: m,
                        coupling_density: *coupling_density,
                        nonlinearity: *nonlinearity,
                        seed: *seed,
                    },
                };
                // The four-tank catalog has a fixed size; skip other sizes.
                if matches!(sized_cfg.model, ModelConfig::FourCstr { .. }) {
                    let catalog_size = 8;
                    if m != catalog_size {
                        continue;
                    }
                }
                let prepared = prepare_model(&sized_cfg)?;
                let ctx = build_context(&sized_cfg, &prepared)?;
                let catalog = &prepared.catalog;

                let t0 = Instant::now();
                let backward =
                    backward_greedy(catalog, &ctx.traj, &ctx.s_x, &ctx.scales, &ctx.policy);
                let backward_ms = t0.elapsed().as_millis();
                let (label, size) = match &backward {
                    Ok(trace) => ("ok", trace.final_set.len()),
                    Err(_) => ("failed", 0),
                };
                timing.row(&[
                    prepared.label.clone(),
                    m.to_string(),
                    format!("backward-{label}"),
                    backward_ms.to_string(),
                    size.to_string(),
                ])?;

                let target = backward.as_ref().map(|t| t.final_set.len()).unwrap_or(1);
                let t0 = Instant::now();
                let forward = forward_greedy(
                    catalog, &ctx.traj, &ctx.s_x, &ctx.scales, &ctx.policy, target,
                );
                timing.row(&[
                    prepared.label.clone(),
                    m.to_string(),
                    "forward".to_string(),
                    t0.elapsed().as_millis().to_string(),
                    forward.map(|o| o.len()).unwrap_or(0).to_string(),
                ])?;

                if catalog.len() <= cfg.selection.max_m {
                    let t0 = Instant::now();
                    let exhaustive = exhaustive_min_observable(
                        catalog,
                        &ctx.traj,
                        &ctx.s_x,
                        &ctx.scales,
                        &ctx.policy,
                        cfg.selection.max_m,
                    );
                    timing.row(&[
                        prepared.label.clone(),
                        m.to_string(),
                        "exhaustive".to_string(),
                        t0.elapsed().as_millis().to_string(),
                        exhaustive.map(|(s, _, _)| s).unwrap_or(0).to_string(),
                    ])?;
                }
            }
            bundle.write("strategy_timings.csv", &timing.into_bytes()?)?;
        }
        Ok(())
    })?;

    bundle.finish("bench", cfg, started.elapsed())?;
    Ok(bundle)
}

/// Convenience used by reproducibility tests: run `cmd_select` twice into
/// different directories and compare fingerprints.
pub fn select_fingerprint(cfg: &RunConfig) -> Result<Vec<(String, Vec<u8>)>> {
    let bundle = cmd_select(cfg)?;
    bundle_fingerprint(&bundle.out_dir)
}
