//! Exhaustive enumeration helpers over `{-1,+1}^n`.
//!
//! States are encoded as integers: bit `k` set means coordinate `k` is `+1`.

use crate::error::{Error, Result};

/// Largest number of binary variables any exhaustive routine will enumerate.
pub const ENUMERATION_CAP: usize = 24;

#[inline]
pub fn spin_of(state: usize, k: usize) -> i8 {
    if (state >> k) & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Writes the spins of `state` into `out` (length = number of coordinates).
pub fn decode_into(state: usize, out: &mut [i8]) {
    for (k, s) in out.iter_mut().enumerate() {
        *s = spin_of(state, k);
    }
}

pub fn decode(state: usize, n: usize) -> Vec<i8> {
    let mut x = vec![0; n];
    decode_into(state, &mut x);
    x
}

pub fn encode(x: &[i8]) -> usize {
    x.iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .fold(0usize, |acc, (k, _)| acc | (1 << k))
}

pub fn check_cap(needed: usize, cap: usize) -> Result<()> {
    if needed > cap {
        Err(Error::EnumerationCap { needed, cap })
    } else {
        Ok(())
    }
}

/// In-place unnormalized Walsh–Hadamard transform.
///
/// After the call, `values[T] = Σ_x values_before[x] · Π_{k∈T} x_k`.
pub fn walsh_hadamard(values: &mut [f64]) {
    let len = values.len();
    assert!(len.is_power_of_two(), "transform length must be a power of two");
    let mut h = 1;
    while h < len {
        for block in (0..len).step_by(2 * h) {
            for k in block..block + h {
                // index k has the bit clear (spin -1), k + h has it set (spin +1)
                let minus = values[k];
                let plus = values[k + h];
                values[k] = plus + minus;
                values[k + h] = plus - minus;
            }
        }
        h *= 2;
    }
}

/// Fourier coefficients `E_{x~Uni}[f(x) χ_T(x)]` of a function tabulated over all states.
pub fn fourier_coefficients(table: &[f64]) -> Vec<f64> {
    let mut c = table.to_vec();
    walsh_hadamard(&mut c);
    let scale = 1.0 / table.len() as f64;
    c.iter_mut().for_each(|v| *v *= scale);
    c
}

/// Indices `k` of the set bits of a mask.
pub fn mask_members(mask: usize) -> impl Iterator<Item = usize> {
    let mut rest = mask;
    std::iter::from_fn(move || {
        if rest == 0 {
            None
        } else {
            let k = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(k)
        }
    })
}

/// A probability table over `{-1,+1}^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    n: usize,
    probs: Vec<f64>,
}

impl Pmf {
    /// Normalizes a table of log-weights using a running maximum.
    pub fn from_log_weights(n: usize, log_weights: &[f64]) -> Self {
        assert_eq!(log_weights.len(), 1 << n);
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Self { n, probs }
    }

    pub fn from_probs(n: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 1 << n {
            return Err(Error::DimensionMismatch {
                what: "probability table",
                expected: 1 << n,
                found: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParameter(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { n, probs })
    }

    pub fn uniform(n: usize) -> Self {
        let len = 1usize << n;
        Self {
            n,
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &[i8]) -> f64 {
        self.probs[encode(x)]
    }

    /// `E[Π_{k∈S} X_k]` for a subset given as sorted indices.
    pub fn moment(&self, subset: &[usize]) -> f64 {
        let mask = subset.iter().fold(0usize, |m, &k| m | (1 << k));
        self.probs
            .iter()
            .enumerate()
            .map(|(s, &p)| {
                if (s & mask).count_ones() % 2 == (mask.count_ones() % 2) {
                    // an even number of -1 among S: the parity of (#set bits in S) matches |S|
                    p
                } else {
                    -p
                }
            })
            .sum()
    }

    /// Marginal table over the coordinates in `coords` (in that order).
    pub fn marginal(&self, coords: &[usize]) -> Pmf {
        let mut out = vec![0.0; 1 << coords.len()];
        for (s, &p) in self.probs.iter().enumerate() {
            let mut t = 0usize;
            for (b, &k) in coords.iter().enumerate() {
                if (s >> k) & 1 == 1 {
                    t |= 1 << b;
                }
            }
            out[t] += p;
        }
        Pmf {
            n: coords.len(),
            probs: out,
        }
    }

    /// Kullback–Leibler divergence `KL(self ‖ other)` in nats.
    pub fn kl(&self, other: &Pmf) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p / q).ln())
            .sum()
    }

    /// Exact conditional mean `E[X_i | X_{~i} = x_{~i}]` for every state (indexed by state).
    pub fn conditional_means(&self, i: usize) -> Vec<f64> {
        let bit = 1usize << i;
        (0..self.probs.len())
            .map(|s| {
                let plus = self.probs[s | bit];
                let minus = self.probs[s & !bit];
                (plus - minus) / (plus + minus)
            })
            .collect()
    }

    /// `min_x 2^n P(x)`.
    pub fn min_scaled_mass(&self) -> f64 {
        let scale = (1u64 << self.n) as f64;
        self.probs.iter().copied().fold(f64::INFINITY, f64::min) * scale
    }

    /// Writes `state,spins...,probability` rows as CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.n).map(|k| format!("x{k}")).collect();
        writeln!(w, "state,{},prob", header.join(","))?;
        for (s, p) in self.probs.iter().enumerate() {
            let spins: Vec<String> = (0..self.n).map(|k| spin_of(s, k).to_string()).collect();
            writeln!(w, "{s},{},{p:.17e}", spins.join(","))?;
        }
        Ok(())
    }
}

/// Total variation distance between two tables on the same hypercube.
pub fn tv_distance(p: &Pmf, q: &Pmf) -> f64 {
    assert_eq!(p.n, q.n, "tables live on different hypercubes");
    0.5 * p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}
