//! Multilinear polynomials on the hypercube, indexed by coordinate subsets.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordering tag written next to serialized subsets.
pub const SUBSET_ORDERING: &str = "size-major-lex";

/// A sorted set of coordinate indices. Orders by size first, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(mut idx: Vec<usize>) -> Self {
        idx.sort_unstable();
        idx.dedup();
        Self(idx)
    }

    pub fn singleton(i: usize) -> Self {
        Self(vec![i])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        Self(v)
    }

    pub fn without(&self, i: usize) -> Self {
        Self(self.0.iter().copied().filter(|&k| k != i).collect())
    }

    pub fn is_subset_of(&self, other: &[usize]) -> bool {
        self.0.iter().all(|k| other.contains(k))
    }

    /// `Π_{k∈S} x_k`.
    #[inline]
    pub fn character(&self, x: &[i8]) -> i8 {
        self.0.iter().fold(1i8, |acc, &k| acc * x[k])
    }
}

impl Ord for Subset {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Subset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Map from subsets of `[n]` to real coefficients; absent subsets are zero.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparsePolynomial {
    n: usize,
    terms: BTreeMap<Subset, f64>,
}

impl SparsePolynomial {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, s: &Subset) -> f64 {
        self.terms.get(s).copied().unwrap_or(0.0)
    }

    /// Sets a coefficient; zero removes the term.
    pub fn set(&mut self, s: Subset, c: f64) {
        debug_assert!(s.indices().iter().all(|&k| k < self.n));
        if c == 0.0 {
            self.terms.remove(&s);
        } else {
            self.terms.insert(s, c);
        }
    }

    pub fn add(&mut self, s: Subset, c: f64) {
        let v = self.get(&s) + c;
        self.set(s, v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Subset, f64)> {
        self.terms.iter().map(|(s, &c)| (s, c))
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Subset::len).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[i8]) -> f64 {
        self.terms
            .iter()
            .map(|(s, &c)| c * s.character(x) as f64)
            .sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).sum()
    }

    /// `Σ_S |self_S - other_S|` over the union of supports.
    pub fn l1_distance(&self, other: &SparsePolynomial) -> f64 {
        let mut total = 0.0;
        for (s, c) in self.iter() {
            total += (c - other.get(s)).abs();
        }
        for (s, c) in other.iter() {
            if !self.terms.contains_key(s) {
                total += c.abs();
            }
        }
        total
    }

    pub fn scaled(&self, factor: f64) -> SparsePolynomial {
        let mut out = SparsePolynomial::new(self.n);
        for (s, c) in self.iter() {
            out.set(s.clone(), c * factor);
        }
        out
    }

    /// `self - other`.
    pub fn difference(&self, other: &SparsePolynomial) -> SparsePolynomial {
        let mut out = self.clone();
        for (s, c) in other.iter() {
            out.add(s.clone(), -c);
        }
        out
    }

    /// Drops the constant term and any term with magnitude at most `tol`.
    pub fn pruned(&self, tol: f64) -> SparsePolynomial {
        let mut out = SparsePolynomial::new(self.n);
        for (s, c) in self.iter() {
            if !s.is_empty() && c.abs() > tol {
                out.set(s.clone(), c);
            }
        }
        out
    }

    /// Per coordinate, the terms whose subset contains it, with the coordinate removed.
    pub fn local_fields(&self) -> Vec<Vec<(Vec<usize>, f64)>> {
        let mut out = vec![Vec::new(); self.n];
        for (s, c) in self.iter() {
            for &i in s.indices() {
                out[i].push((s.without(i).indices().to_vec(), c));
            }
        }
        out
    }

    pub fn to_record(&self) -> PolynomialRecord {
        PolynomialRecord {
            n: self.n,
            degree: self.degree(),
            ordering: SUBSET_ORDERING.to_string(),
            terms: self.iter().map(|(s, c)| (s.clone(), c)).collect(),
        }
    }

    pub fn from_record(rec: PolynomialRecord) -> Result<Self> {
        if rec.ordering != SUBSET_ORDERING {
            return Err(Error::Parse(format!(
                "unsupported subset ordering tag {:?}",
                rec.ordering
            )));
        }
        let mut p = SparsePolynomial::new(rec.n);
        for (s, c) in rec.terms {
            if let Some(&k) = s.indices().iter().find(|&&k| k >= rec.n) {
                return Err(Error::IndexOutOfRange { index: k, len: rec.n });
            }
            if !c.is_finite() {
                return Err(Error::Parse("non-finite coefficient".into()));
            }
            p.add(Subset::new(s.0), c);
        }
        Ok(p)
    }
}

/// Serialized form: subset/coefficient pairs plus basis metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolynomialRecord {
    pub n: usize,
    pub degree: usize,
    pub ordering: String,
    pub terms: Vec<(Subset, f64)>,
}

impl Serialize for SparsePolynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparsePolynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = PolynomialRecord::deserialize(d)?;
        SparsePolynomial::from_record(rec).map_err(serde::de::Error::custom)
    }
}

/// A polynomial flattened for fast repeated evaluation: each term is a bitmask and
/// `χ_S(x)` is the parity of the negative coordinates it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledPolynomial {
    n: usize,
    words: usize,
    masks: Vec<u64>,
    coeffs: Vec<f64>,
}

impl CompiledPolynomial {
    pub fn new(poly: &SparsePolynomial) -> Self {
        let words = poly.n.div_ceil(64).max(1);
        let mut masks = Vec::with_capacity(poly.len() * words);
        let mut coeffs = Vec::with_capacity(poly.len());
        for (s, c) in poly.iter() {
            let start = masks.len();
            masks.resize(start + words, 0);
            for &i in s.indices() {
                masks[start + i / 64] |= 1 << (i % 64);
            }
            coeffs.push(c);
        }
        Self {
            n: poly.n,
            words,
            masks,
            coeffs,
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Bitmask of the coordinates equal to `−1`.
    pub fn pack(&self, x: &[i8]) -> Vec<u64> {
        debug_assert_eq!(x.len(), self.n);
        let mut bits = vec![0u64; self.words];
        for (i, &v) in x.iter().enumerate() {
            if v < 0 {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        bits
    }

    /// `χ_S(x)` for every term, in term order.
    pub fn characters<'a>(&'a self, packed: &'a [u64]) -> impl Iterator<Item = f64> + 'a {
        self.masks.chunks_exact(self.words).map(move |m| {
            let odd = m.iter().zip(packed).fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones()) & 1;
            if odd == 1 {
                -1.0
            } else {
                1.0
            }
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval_packed(&self, packed: &[u64]) -> f64 {
        self.characters(packed).zip(&self.coeffs).map(|(chi, c)| chi * c).sum()
    }

    pub fn eval(&self, x: &[i8]) -> f64 {
        self.eval_packed(&self.pack(x))
    }
}
