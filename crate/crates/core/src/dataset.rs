use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{ObilError, Result};

/// Dense binary-labelled data stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 {
            return Err(ObilError::DegenerateData("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(ObilError::Shape { expected: dim * labels.len(), got: features.len() });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(ObilError::DegenerateData("labels must be 0 or 1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ObilError::NonFinite("feature value".into()));
        }
        Ok(Self { dim, features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(ObilError::Shape { expected: dim, got: bad.len() });
        }
        Self::new(dim, rows.concat(), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u8)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// `(count of y=0, count of y=1)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let n1 = self.labels.iter().filter(|&&y| y == 1).count();
        (self.len() - n1, n1)
    }

    pub fn has_both_classes(&self) -> bool {
        let (n0, n1) = self.class_counts();
        n0 > 0 && n1 > 0
    }

    /// `N_0 / N_1`; infinite when there are no positives.
    pub fn imbalance_ratio(&self) -> f64 {
        let (n0, n1) = self.class_counts();
        n0 as f64 / n1 as f64
    }

    pub fn class_indices(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self { dim: self.dim, features, labels }
    }

    pub(crate) fn push_row(&mut self, row: &[f64], label: u8) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    /// Splits each class independently by `fractions` (which must sum to 1).
    /// Every part gets at least one sample of a class when the class has
    /// enough samples; rows keep their original relative order.
    pub fn stratified_split<R: Rng + ?Sized>(&self, fractions: &[f64], rng: &mut R) -> Result<Vec<Self>> {
        let total: f64 = fractions.iter().sum();
        if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(ObilError::InvalidConfig(format!("split fractions {fractions:?} must be positive and sum to 1")));
        }
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
        for class in [0u8, 1] {
            let mut idx = self.class_indices(class);
            idx.shuffle(rng);
            let counts = allocate(idx.len(), fractions);
            let mut start = 0;
            for (part, c) in parts.iter_mut().zip(counts) {
                part.extend_from_slice(&idx[start..start + c]);
                start += c;
            }
        }
        Ok(parts
            .into_iter()
            .map(|mut p| {
                p.sort_unstable();
                self.subset(&p)
            })
            .collect())
    }
}

/// Splits `n` items by `fractions`; parts after the first get at least one
/// item while supply lasts, the first part absorbs the remainder.
fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    for c in counts.iter_mut().skip(1) {
        if *c == 0 {
            *c = 1;
        }
    }
    while counts.iter().sum::<usize>() > n {
        // shrink the largest part; only happens for tiny classes
        let (imax, _) = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap();
        counts[imax] -= 1;
    }
    let assigned: usize = counts.iter().sum();
    counts[0] += n - assigned;
    counts
}
