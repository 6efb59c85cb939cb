//! Seeded linear benchmarks with exhaustively verified observability ground
//! truth, used as oracles for the sensitivity pipeline.
//!
//! A benchmark is a discrete LTI system `x(k+1) = A x(k)` with `m` linear
//! sensor rows. At construction time every nonempty sensor subset is
//! classified observable/unobservable via the rank of the stacked
//! observability matrix `[C; CA; ...; CA^{n-1}]`, giving an independent
//! reference the sensitivity-based test must reproduce.
//!
//! Generated systems are block companion forms (optionally rotated by a
//! random orthogonal similarity). Eigenvalues are drawn from a coarse grid so
//! distinct blocks are well separated; with some probability a block reuses
//! an earlier block's characteristic polynomial, which makes single sensors
//! structurally insufficient and exercises min sizes above one.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DiscreteModel;
use crate::error::{Error, Result};
use crate::sensitivity::{SensorCatalog, SensorDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearBenchmarkSpec {
    pub n_states: usize,
    pub n_sensors: usize,
    pub seed: u64,
}

/// A generated LTI system plus its exhaustive observability ground truth.
#[derive(Debug, Clone)]
pub struct LinearBenchmark {
    pub a: DMatrix<f64>,
    pub c_rows: Vec<RowDVector<f64>>,
    /// Nominal initial state; every component is bounded away from zero so
    /// the default normalization scales stay well conditioned.
    pub x0: DVector<f64>,
    /// Smallest subset cardinality that renders the state observable
    /// (`None` when even the full set fails).
    pub known_min_observable_size: Option<usize>,
    /// `observable[mask - 1]` holds the verdict for the nonempty subset
    /// encoded by `mask` (bit i = sensor id i+1).
    observable: Vec<bool>,
}

const GROUND_TRUTH_RANK_TOL: f64 = 1e-8;

/// Rank of the stacked observability matrix `[C; CA; ...; CA^{n-1}]` for the
/// given sensor rows.
pub fn observability_matrix_rank(a: &DMatrix<f64>, rows: &[RowDVector<f64>]) -> usize {
    let n = a.nrows();
    let p = rows.len();
    let mut stacked = DMatrix::zeros(n * p, n);
    let mut power = DMatrix::identity(n, n);
    for k in 0..n {
        for (i, c) in rows.iter().enumerate() {
            stacked.row_mut(k * p + i).copy_from(&(c * &power));
        }
        power = a * power;
    }
    let svd = stacked.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let sigma1 = sv.first().copied().unwrap_or(0.0);
    if sigma1 <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > GROUND_TRUTH_RANK_TOL * sigma1).count()
}

impl LinearBenchmark {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_sensors(&self) -> usize {
        self.c_rows.len()
    }

    /// Ground-truth verdict for a subset of 1-based sensor ids.
    pub fn is_subset_observable(&self, subset: &std::collections::BTreeSet<usize>) -> bool {
        let mut mask = 0usize;
        for &id in subset {
            assert!(id >= 1 && id <= self.n_sensors(), "sensor id out of range");
            mask |= 1 << (id - 1);
        }
        assert!(mask != 0, "subset must be nonempty");
        self.observable[mask - 1]
    }

    /// The dynamics as a black-box discrete model.
    pub fn model(&self) -> DiscreteModel {
        let a = self.a.clone();
        DiscreteModel::new(self.n_states(), 0, 1.0, move |x, _| &a * x)
    }

    /// Linear sensors with exact gradients, ids 1..=m.
    pub fn catalog(&self) -> SensorCatalog {
        let sensors = self
            .c_rows
            .iter()
            .enumerate()
            .map(|(i, row)| SensorDef::linear(i + 1, format!("y{}", i + 1), row.clone()))
            .collect();
        SensorCatalog::new(self.n_states(), sensors).expect("generated catalog is valid")
    }
}

/// Companion matrix with the given characteristic roots.
fn companion_from_roots(roots: &[f64]) -> DMatrix<f64> {
    // Expand prod (z - r_i) into monic coefficients.
    let mut coeffs = vec![1.0];
    for &r in roots {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c * (-r);
            next[i + 1] += c;
        }
        coeffs = next;
    }
    let n = roots.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -coeffs[j];
    }
    a
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0f64));
    g.qr().q()
}

/// Deterministically generate a benchmark from its spec. Ground truth is
/// enumerated for catalogs of up to 16 sensors (2^16 subsets).
pub fn make_linear_benchmark(spec: &LinearBenchmarkSpec) -> Result<LinearBenchmark> {
    let n = spec.n_states;
    let m = spec.n_sensors;
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one state and one sensor".into(),
        ));
    }
    if m > 16 {
        return Err(Error::InvalidArgument(format!(
            "ground-truth enumeration is capped at 16 sensors, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Partition the states into 1..=3 blocks.
    let max_blocks = n.min(3);
    let n_blocks = rng.random_range(1..=max_blocks);
    let mut sizes = vec![1usize; n_blocks];
    for _ in 0..(n - n_blocks) {
        let i = rng.random_range(0..n_blocks);
        sizes[i] += 1;
    }

    // Eigenvalues from a coarse grid, unique within each block. A block may
    // copy an earlier block's roots, which makes the pair indistinguishable
    // from any single sensor.
    let grid: Vec<f64> = vec![-0.9, -0.8, -0.7, -0.6, -0.5, 0.5, 0.6, 0.7, 0.8, 0.9];
    let mut block_roots: Vec<Vec<f64>> = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let copy_previous = b > 0 && sizes[b] == sizes[b - 1] && rng.random_bool(0.35);
        if copy_previous {
            block_roots.push(block_roots[b - 1].clone());
        } else {
            let mut pool = grid.clone();
            pool.shuffle(&mut rng);
            block_roots.push(pool.into_iter().take(sizes[b]).collect());
        }
    }

    let mut a = DMatrix::zeros(n, n);
    let mut offset = 0;
    let mut block_spans = Vec::new();
    for roots in &block_roots {
        let blk = companion_from_roots(roots);
        let s = roots.len();
        a.view_mut((offset, offset), (s, s)).copy_from(&blk);
        block_spans.push((offset, s));
        offset += s;
    }

    // Sensor rows: unit rows, two-state sums, or dense block-local rows.
    let mut c_rows: Vec<RowDVector<f64>> = Vec::with_capacity(m);
    for _ in 0..m {
        let style = rng.random_range(0..10);
        let mut row = RowDVector::zeros(n);
        if style < 5 {
            row[rng.random_range(0..n)] = 1.0;
        } else if style < 7 {
            row[rng.random_range(0..n)] += 1.0;
            row[rng.random_range(0..n)] += 1.0;
        } else {
            let (start, len) = block_spans[rng.random_range(0..block_spans.len())];
            for j in start..start + len {
                row[j] = rng.random_range(-1.0..1.0);
            }
        }
        c_rows.push(row);
    }

    // Optional random orthogonal change of basis; observability of every
    // subset is invariant under the similarity.
    if rng.random_bool(0.5) {
        let q = random_orthogonal(n, &mut rng);
        a = &q * a * q.transpose();
        for row in &mut c_rows {
            *row = &*row * q.transpose();
        }
    }

    let x0 = DVector::from_fn(n, |_, _| {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * rng.random_range(0.6..1.4)
    });

    // Exhaustive ground truth over all nonempty subsets.
    let mut observable = vec![false; (1 << m) - 1];
    let mut min_size: Option<usize> = None;
    for mask in 1usize..(1 << m) {
        let rows: Vec<RowDVector<f64>> = (0..m)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| c_rows[i].clone())
            .collect();
        let full = observability_matrix_rank(&a, &rows) == n;
        observable[mask - 1] = full;
        if full {
            let size = mask.count_ones() as usize;
            min_size = Some(min_size.map_or(size, |s: usize| s.min(size)));
        }
    }

    Ok(LinearBenchmark {
        a,
        c_rows,
        x0,
        known_min_observable_size: min_size,
        observable,
    })
}
