//! Run configuration: parsed from TOML or JSON (selected by file extension),
//! validated before any computation. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::synthetic::Nonlinearity;
use crate::sensitivity::NormalizationMode;

fn default_seed() -> u64 {
    42
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("obsv-out")
}
fn default_dt() -> f64 {
    crate::models::DEFAULT_DT
}
fn default_rank_tol() -> f64 {
    1e-8
}
fn default_max_m() -> usize {
    16
}
fn default_runs() -> usize {
    10
}
fn default_est_horizon() -> usize {
    240
}
fn default_guess_factor() -> f64 {
    1.2
}
fn default_noise_rel() -> f64 {
    0.01
}
fn default_bench_counts() -> Vec<[u32; 2]> {
    vec![[8, 2], [16, 10]]
}
fn default_bench_sizes() -> Vec<usize> {
    vec![6, 8, 10]
}

/// Which system to analyze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    deny_unknown_fields
)]
pub enum ModelConfig {
    /// The built-in four-tank reactor benchmark.
    FourCstr {
        #[serde(default = "default_dt")]
        dt: f64,
    },
    /// A seeded linear benchmark with known observability ground truth.
    LinearBenchmark {
        n_states: usize,
        n_sensors: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A seeded synthetic process network.
    Synthetic {
        n_states: usize,
        n_sensors: usize,
        coupling_density: f64,
        #[serde(default)]
        nonlinearity: Nonlinearity,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// The four-tank model with constants loaded from a parameter manifest.
    Manifest {
        path: PathBuf,
        #[serde(default = "default_dt")]
        dt: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AnalysisSection {
    /// Sensitivity horizon K (samples k = 0..=K). Defaults to the smallest
    /// horizon giving four rows per state with the full catalog.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub normalization: NormalizationMode,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            horizon: None,
            normalization: NormalizationMode::Both,
            rank_tol: default_rank_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Backward,
    Forward,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SelectionSection {
    #[serde(default)]
    pub strategy: Strategy,
    /// Forward greedy stops at this size (defaults to the catalog size).
    #[serde(default)]
    pub target_size: Option<usize>,
    /// Exhaustive search refuses catalogs above this size.
    #[serde(default = "default_max_m")]
    pub max_m: usize,
    /// Re-add this many removed sensors (reverse removal order) to the
    /// reported set.
    #[serde(default)]
    pub augment: usize,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            strategy: Strategy::Backward,
            target_size: None,
            max_m: default_max_m(),
            augment: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NoiseSection {
    /// Process noise as a fraction of each nominal state magnitude.
    #[serde(default = "default_noise_rel")]
    pub process_rel: f64,
    /// Measurement noise as a fraction of each nominal output magnitude.
    #[serde(default = "default_noise_rel")]
    pub measurement_rel: f64,
    /// Absolute per-state standard deviations (overrides `process_rel`).
    #[serde(default)]
    pub process_std: Option<Vec<f64>>,
    /// Absolute per-sensor standard deviations (overrides `measurement_rel`).
    #[serde(default)]
    pub measurement_std: Option<Vec<f64>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            process_rel: default_noise_rel(),
            measurement_rel: default_noise_rel(),
            process_std: None,
            measurement_std: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Panel {
    /// All two-sensor combinations that keep the state observable.
    #[default]
    ObservablePairs,
    /// The subsets listed in `subsets`.
    Listed,
}

fn default_ekf_process_rel() -> f64 {
    1e-3
}
fn default_p0_rel() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EstimateSection {
    #[serde(default = "default_runs")]
    pub runs_per_subset: usize,
    /// Number of noisy steps per validation run.
    #[serde(default = "default_est_horizon")]
    pub horizon: usize,
    /// Samples excluded from the error metrics (initial-transient warmup).
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub panel: Panel,
    #[serde(default)]
    pub subsets: Vec<Vec<usize>>,
    /// Initial estimate is `factor * x0`.
    #[serde(default = "default_guess_factor")]
    pub x0_guess_factor: f64,
    /// Relative process-noise floor the filter assumes per state, applied
    /// when it exceeds the injected level.
    #[serde(default = "default_ekf_process_rel")]
    pub ekf_process_rel: f64,
    /// Relative initial-covariance scale per state.
    #[serde(default = "default_p0_rel")]
    pub p0_rel: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            runs_per_subset: default_runs(),
            horizon: default_est_horizon(),
            warmup: 0,
            panel: Panel::ObservablePairs,
            subsets: vec![],
            x0_guess_factor: default_guess_factor(),
            ekf_process_rel: default_ekf_process_rel(),
            p0_rel: default_p0_rel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BenchSection {
    /// `(m, o)` pairs for the evaluation-count table.
    #[serde(default = "default_bench_counts")]
    pub counts: Vec<[u32; 2]>,
    /// Catalog sizes for the timing sweep on generated model families.
    #[serde(default = "default_bench_sizes")]
    pub sizes: Vec<usize>,
    /// Measure wall-clock of each strategy (written to a separate file
    /// excluded from reproducibility comparisons).
    #[serde(default)]
    pub time_strategies: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            counts: default_bench_counts(),
            sizes: default_bench_sizes(),
            time_strategies: false,
        }
    }
}

/// The complete run configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 lets the runtime pick.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Parse a config file; the format is chosen by extension (.toml or
    /// .json).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let cfg: RunConfig = match ext.as_str() {
            "toml" => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            "json" => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            other => {
                return Err(Error::Config(format!(
                    "unsupported config extension '{other}' (use .toml or .json)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.analysis.rank_tol > 0.0 && self.analysis.rank_tol < 1.0) {
            return Err(Error::Config(format!(
                "rank tolerance must lie in (0, 1), got {}",
                self.analysis.rank_tol
            )));
        }
        if self.threads > 512 {
            return Err(Error::Config(format!(
                "thread count {} is unreasonable",
                self.threads
            )));
        }
        if self.estimate.runs_per_subset == 0 {
            return Err(Error::Config("runs-per-subset must be at least 1".into()));
        }
        if self.estimate.horizon == 0 {
            return Err(Error::Config("estimate horizon must be at least 1".into()));
        }
        if self.estimate.warmup > self.estimate.horizon {
            return Err(Error::Config(format!(
                "warmup {} exceeds the estimate horizon {}",
                self.estimate.warmup, self.estimate.horizon
            )));
        }
        if self.estimate.ekf_process_rel < 0.0 || self.estimate.p0_rel < 0.0 {
            return Err(Error::Config(
                "EKF tuning fractions must be nonnegative".into(),
            ));
        }
        if !(self.estimate.x0_guess_factor.is_finite()) {
            return Err(Error::Config("x0-guess-factor must be finite".into()));
        }
        if self.noise.process_rel < 0.0 || self.noise.measurement_rel < 0.0 {
            return Err(Error::Config("noise fractions must be nonnegative".into()));
        }
        match &self.model {
            ModelConfig::FourCstr { dt } | ModelConfig::Manifest { dt, .. } => {
                if !(*dt > 0.0) {
                    return Err(Error::Config("sampling interval must be positive".into()));
                }
            }
            ModelConfig::LinearBenchmark {
                n_states, n_sensors, ..
            } => {
                if *n_states == 0 || *n_sensors == 0 || *n_sensors > 16 {
                    return Err(Error::Config(
                        "linear benchmark needs 1..=16 sensors and at least one state".into(),
                    ));
                }
            }
            ModelConfig::Synthetic {
                n_states,
                n_sensors,
                coupling_density,
                ..
            } => {
                if *n_states == 0 || *n_sensors == 0 {
                    return Err(Error::Config(
                        "synthetic network needs states and sensors".into(),
                    ));
                }
                if !(*coupling_density > 0.0 && *coupling_density <= 1.0) {
                    return Err(Error::Config("coupling density must lie in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }
}
