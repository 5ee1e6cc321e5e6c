//! Spin datasets and weighted sample populations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypercube::{decode_into, Pmf};

/// Read access shared by raw datasets and weighted populations.
///
/// A weighted population can stand in for an empirical sample anywhere a
/// statistic is a weighted average, which is how exact (enumerated) versions of
/// the estimators are obtained.
pub trait SpinSource {
    fn n_spins(&self) -> usize;
    fn n_rows(&self) -> usize;
    fn row(&self, k: usize) -> &[i8];
    fn label(&self, k: usize) -> Option<i8>;
    fn weight(&self, k: usize) -> f64;
    fn has_labels(&self) -> bool;

    fn total_weight(&self) -> f64 {
        (0..self.n_rows()).map(|k| self.weight(k)).sum()
    }
}

fn check_spins(values: &[i8], n: usize) -> Result<()> {
    if let Some(pos) = values.iter().position(|&v| v != 1 && v != -1) {
        return Err(Error::NotASpin {
            row: pos / n.max(1),
            col: pos % n.max(1),
            value: values[pos] as f64,
        });
    }
    Ok(())
}

/// Immutable matrix of ±1 samples, optionally with ±1 labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinDataset {
    n: usize,
    samples: Vec<i8>,
    labels: Option<Vec<i8>>,
}

impl SpinDataset {
    /// `samples` is row-major with `n` columns.
    pub fn new(n: usize, samples: Vec<i8>, labels: Option<Vec<i8>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dataset needs at least one column".into()));
        }
        if samples.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                what: "sample matrix length",
                expected: (samples.len() / n + 1) * n,
                found: samples.len(),
            });
        }
        check_spins(&samples, n)?;
        if let Some(l) = &labels {
            if l.len() != samples.len() / n {
                return Err(Error::DimensionMismatch {
                    what: "label vector",
                    expected: samples.len() / n,
                    found: l.len(),
                });
            }
            check_spins(l, 1)?;
        }
        Ok(Self { n, samples, labels })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let mut samples = Vec::with_capacity(n * rows.len());
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: n,
                    found: r.len(),
                });
            }
            samples.extend_from_slice(r);
        }
        Self::new(n, samples, None)
    }

    pub fn with_labels(self, labels: Vec<i8>) -> Result<Self> {
        Self::new(self.n, self.samples, Some(labels))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.samples.len() / self.n
    }

    pub fn samples(&self) -> &[i8] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[i8]> {
        self.labels.as_deref()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.samples.chunks_exact(self.n)
    }

    pub fn column_mean(&self, i: usize) -> f64 {
        let m = self.m();
        if m == 0 {
            return 0.0;
        }
        self.rows().map(|r| r[i] as f64).sum::<f64>() / m as f64
    }

    pub fn is_constant_column(&self, i: usize) -> bool {
        let mut rows = self.rows();
        match rows.next() {
            None => true,
            Some(first) => rows.all(|r| r[i] == first[i]),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SpinDataset {
        let mut samples = Vec::with_capacity(indices.len() * self.n);
        for &k in indices {
            samples.extend_from_slice(self.row_slice(k));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&k| l[k]).collect());
        SpinDataset {
            n: self.n,
            samples,
            labels,
        }
    }

    /// Rows whose label equals `label`.
    pub fn filter_label(&self, label: i8) -> Result<SpinDataset> {
        let labels = self.labels.as_ref().ok_or(Error::MissingLabels)?;
        let idx: Vec<usize> = (0..self.m()).filter(|&k| labels[k] == label).collect();
        Ok(self.select(&idx))
    }

    /// Deterministic random split into (train, holdout).
    pub fn split_holdout(&self, holdout_fraction: f64, seed: u64) -> (SpinDataset, SpinDataset) {
        let m = self.m();
        let mut idx: Vec<usize> = (0..m).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_hold = ((m as f64) * holdout_fraction).round() as usize;
        let n_hold = n_hold.min(m.saturating_sub(1));
        let (hold, train) = idx.split_at(n_hold);
        let mut train = train.to_vec();
        let mut hold = hold.to_vec();
        train.sort_unstable();
        hold.sort_unstable();
        (self.select(&train), self.select(&hold))
    }

    /// Deduplicates rows into a weighted population with integer counts.
    pub fn compress(&self) -> WeightedSpins {
        let mut counts: BTreeMap<(Vec<i8>, i8), f64> = BTreeMap::new();
        for k in 0..self.m() {
            let label = self.labels.as_ref().map_or(0, |l| l[k]);
            *counts.entry((self.row_slice(k).to_vec(), label)).or_insert(0.0) += 1.0;
        }
        let mut rows = Vec::with_capacity(counts.len() * self.n);
        let mut labels = Vec::with_capacity(counts.len());
        let mut weights = Vec::with_capacity(counts.len());
        for ((r, l), c) in counts {
            rows.extend_from_slice(&r);
            labels.push(l);
            weights.push(c);
        }
        WeightedSpins {
            n: self.n,
            rows,
            labels: self.labels.as_ref().map(|_| labels),
            weights,
        }
    }

    fn row_slice(&self, k: usize) -> &[i8] {
        &self.samples[k * self.n..(k + 1) * self.n]
    }
}

impl SpinSource for SpinDataset {
    fn n_spins(&self) -> usize {
        self.n
    }
    fn n_rows(&self) -> usize {
        self.m()
    }
    fn row(&self, k: usize) -> &[i8] {
        self.row_slice(k)
    }
    fn label(&self, k: usize) -> Option<i8> {
        self.labels.as_ref().map(|l| l[k])
    }
    fn weight(&self, _k: usize) -> f64 {
        1.0
    }
    fn has_labels(&self) -> bool {
        self.labels.is_some()
    }
    fn total_weight(&self) -> f64 {
        self.m() as f64
    }
}

/// Spin configurations with nonnegative weights: either deduplicated samples
/// (integer counts) or an exact distribution (probabilities).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSpins {
    n: usize,
    rows: Vec<i8>,
    labels: Option<Vec<i8>>,
    weights: Vec<f64>,
}

impl WeightedSpins {
    pub fn new(n: usize, rows: Vec<i8>, labels: Option<Vec<i8>>, weights: Vec<f64>) -> Result<Self> {
        if n == 0 || rows.len() != weights.len() * n {
            return Err(Error::DimensionMismatch {
                what: "weighted rows",
                expected: weights.len() * n,
                found: rows.len(),
            });
        }
        check_spins(&rows, n)?;
        if let Some(l) = &labels {
            if l.len() != weights.len() {
                return Err(Error::DimensionMismatch {
                    what: "label vector",
                    expected: weights.len(),
                    found: l.len(),
                });
            }
            check_spins(l, 1)?;
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            n,
            rows,
            labels,
            weights,
        })
    }

    /// Every state of the hypercube weighted by its probability.
    pub fn from_pmf(pmf: &Pmf) -> Self {
        let n = pmf.n();
        let mut rows = vec![0i8; pmf.probs().len() * n];
        for (s, chunk) in rows.chunks_exact_mut(n).enumerate() {
            decode_into(s, chunk);
        }
        Self {
            n,
            rows,
            labels: None,
            weights: pmf.probs().to_vec(),
        }
    }

    /// Exact joint law of (X, Y) where the label is coordinate `label_index` of `pmf`.
    pub fn from_labeled_pmf(pmf: &Pmf, label_index: usize) -> Self {
        let full = pmf.n();
        let n = full - 1;
        let mut rows = Vec::with_capacity(pmf.probs().len() * n);
        let mut labels = Vec::with_capacity(pmf.probs().len());
        let mut x = vec![0i8; full];
        for s in 0..pmf.probs().len() {
            decode_into(s, &mut x);
            labels.push(x[label_index]);
            rows.extend(
                x.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != label_index)
                    .map(|(_, &v)| v),
            );
        }
        Self {
            n,
            rows,
            labels: Some(labels),
            weights: pmf.probs().to_vec(),
        }
    }

    /// Copy of any source restricted to the given rows.
    pub fn from_source<S: SpinSource + ?Sized>(src: &S, indices: &[usize]) -> Self {
        let n = src.n_spins();
        let mut rows = Vec::with_capacity(indices.len() * n);
        let mut weights = Vec::with_capacity(indices.len());
        let mut labels = src.has_labels().then(|| Vec::with_capacity(indices.len()));
        for &k in indices {
            rows.extend_from_slice(src.row(k));
            weights.push(src.weight(k));
            if let Some(l) = labels.as_mut() {
                l.push(src.label(k).unwrap_or(1));
            }
        }
        Self {
            n,
            rows,
            labels,
            weights,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl SpinSource for WeightedSpins {
    fn n_spins(&self) -> usize {
        self.n
    }
    fn n_rows(&self) -> usize {
        self.weights.len()
    }
    fn row(&self, k: usize) -> &[i8] {
        &self.rows[k * self.n..(k + 1) * self.n]
    }
    fn label(&self, k: usize) -> Option<i8> {
        self.labels.as_ref().map(|l| l[k])
    }
    fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }
    fn has_labels(&self) -> bool {
        self.labels.is_some()
    }
}

/// Rows of `src` whose label equals `label`, keeping weights.
pub fn filter_by_label<S: SpinSource + ?Sized>(src: &S, label: i8) -> Result<WeightedSpins> {
    if !src.has_labels() {
        return Err(Error::MissingLabels);
    }
    let idx: Vec<usize> = (0..src.n_rows())
        .filter(|&k| src.label(k) == Some(label))
        .collect();
    Ok(WeightedSpins::from_source(src, &idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_spin_entries() {
        let err = SpinDataset::new(2, vec![1, 0, -1, 1], None).unwrap_err();
        assert!(matches!(err, Error::NotASpin { row: 0, col: 1, .. }));
    }

    #[test]
    fn compress_preserves_counts() {
        let d = SpinDataset::from_rows(&[vec![1, -1], vec![1, -1], vec![-1, -1]]).unwrap();
        let w = d.compress();
        assert_eq!(w.n_rows(), 2);
        assert_eq!(w.total_weight(), 3.0);
        let k = (0..2).find(|&k| w.row(k) == [1, -1]).unwrap();
        assert_eq!(w.weight(k), 2.0);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let rows: Vec<Vec<i8>> = (0..50).map(|k| vec![if k % 3 == 0 { 1 } else { -1 }]).collect();
        let d = SpinDataset::from_rows(&rows).unwrap();
        let (a, b) = d.split_holdout(0.2, 9);
        let (a2, b2) = d.split_holdout(0.2, 9);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(a.m() + b.m(), 50);
        assert_eq!(b.m(), 10);
    }

    #[test]
    fn labeled_pmf_moves_label_out() {
        let pmf = Pmf::uniform(3);
        let w = WeightedSpins::from_labeled_pmf(&pmf, 2);
        assert_eq!(w.n_spins(), 2);
        assert_eq!(w.n_rows(), 8);
        assert!((w.total_weight() - 1.0).abs() < 1e-15);
        assert!(w.has_labels());
    }
}
