//! Associated-problem construction: rebalance a dataset to a target
//! imbalance ratio while leaving the class-conditional feature rows alone.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{ObilError, Result};

pub const DEFAULT_SMOTE_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    Undersample,
    Oversample,
    Smote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociatedProblemSpec {
    pub target_qp: f64,
    pub method: ResampleMethod,
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
}

fn default_k() -> usize {
    DEFAULT_SMOTE_NEIGHBORS
}

impl AssociatedProblemSpec {
    pub fn new(target_qp: f64, method: ResampleMethod, seed: u64) -> Self {
        Self { target_qp, method, seed, k_neighbors: DEFAULT_SMOTE_NEIGHBORS }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Rebalances `dataset` so that `N_0 / N_1` is within one sample of
/// `spec.target_qp`.
///
/// `Undersample` shrinks whichever class is over-represented relative to the
/// target (uniformly, without replacement). `Oversample` grows the
/// under-represented class with replacement, `Smote` grows it with
/// synthetic interpolants. Retained rows keep their original order; new rows
/// are appended.
pub fn make_associated(dataset: &LabeledDataset, spec: &AssociatedProblemSpec) -> Result<LabeledDataset> {
    if !(spec.target_qp.is_finite() && spec.target_qp > 0.0) {
        return Err(ObilError::InfeasibleTarget(format!("target ratio {}", spec.target_qp)));
    }
    let (n0, n1) = dataset.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(ObilError::DegenerateData("both classes must be present".into()));
    }
    let current = n0 as f64 / n1 as f64;
    if ((spec.target_qp - current) / current).abs() < 1e-12 {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // which class moves, and to what size
    let shrink_majority = spec.target_qp < current;
    let (class, raw) = match (spec.method, shrink_majority) {
        (ResampleMethod::Undersample, true) => (0u8, spec.target_qp * n1 as f64),
        (ResampleMethod::Undersample, false) => (1u8, n0 as f64 / spec.target_qp),
        (_, true) => (1u8, n0 as f64 / spec.target_qp),
        (_, false) => (0u8, spec.target_qp * n1 as f64),
    };
    if raw < 1.0 {
        return Err(ObilError::InfeasibleTarget(format!(
            "class {class} would need {raw:.3} samples for ratio {}",
            spec.target_qp
        )));
    }
    let target = round_half_up(raw).max(1);
    let members = dataset.class_indices(class);
    if target == members.len() {
        return Ok(dataset.clone());
    }

    if spec.method == ResampleMethod::Undersample {
        let mut keep: Vec<usize> = index::sample(&mut rng, members.len(), target)
            .into_iter()
            .map(|j| members[j])
            .collect();
        keep.extend(dataset.class_indices(1 - class));
        keep.sort_unstable();
        return Ok(dataset.subset(&keep));
    }

    let extra = target - members.len();
    let mut out = dataset.clone();
    match spec.method {
        ResampleMethod::Oversample => {
            for _ in 0..extra {
                let i = members[rng.random_range(0..members.len())];
                out.push_row(dataset.row(i), class);
            }
        }
        ResampleMethod::Smote => {
            let pool = dataset.subset(&members);
            let synth = smote_generate(pool.features(), pool.dim(), extra, spec.k_neighbors, spec.seed)?;
            for row in synth.chunks_exact(dataset.dim()) {
                out.push_row(row, class);
            }
        }
        ResampleMethod::Undersample => unreachable!(),
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Generates `n_synthetic` SMOTE rows `x_i + λ (x_j - x_i)` with `x_j` drawn
/// from the `k_neighbors` Euclidean nearest neighbours of `x_i` and
/// `λ ~ U(0, 1)`. Input and output are row-major with `dim` columns.
pub fn smote_generate(
    minority: &[f64],
    dim: usize,
    n_synthetic: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if dim == 0 || !minority.len().is_multiple_of(dim) {
        return Err(ObilError::Shape { expected: dim, got: minority.len() });
    }
    let n = minority.len() / dim;
    if k_neighbors == 0 || n <= k_neighbors {
        return Err(ObilError::TooFewMinority { have: n, k: k_neighbors });
    }
    let row = |i: usize| &minority[i * dim..(i + 1) * dim];
    let full = k_neighbors >= n - 1;
    let neighbours: Vec<Vec<usize>> = if full {
        Vec::new()
    } else {
        (0..n)
            .map(|i| {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (sq_dist(row(i), row(j)), j)).collect();
                others.select_nth_unstable_by(k_neighbors - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut nn: Vec<usize> = others[..k_neighbors].iter().map(|p| p.1).collect();
                nn.sort_unstable();
                nn
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5307_E000_0001);
    let mut out = Vec::with_capacity(n_synthetic * dim);
    for _ in 0..n_synthetic {
        let i = rng.random_range(0..n);
        let j = if full {
            // every other point is a neighbour
            let j = rng.random_range(0..n - 1);
            if j >= i { j + 1 } else { j }
        } else {
            neighbours[i][rng.random_range(0..k_neighbors)]
        };
        let lambda = loop {
            let l: f64 = rng.random();
            if l > 0.0 {
                break l;
            }
        };
        out.extend(row(i).iter().zip(row(j)).map(|(a, b)| a + lambda * (b - a)));
    }
    Ok(out)
}
