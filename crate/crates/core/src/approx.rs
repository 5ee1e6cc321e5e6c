//! Low-degree polynomial approximation of `f_β` on intervals, coefficient budgets
//! and the monomial feature map.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::poly::Subset;
use crate::rbm::{f_beta_eval, FBetaParam};

/// Default upper limit for [`choose_degree`].
pub const DEFAULT_MAX_DEGREE: usize = 20;

/// Points used when measuring sup errors on `[-1, 1]`.
pub const CERT_GRID_POINTS: usize = 2001;

/// The interval `{R t + h : t ∈ [-1, 1]}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalSpec {
    r: f64,
    h: f64,
}

impl IntervalSpec {
    pub fn new(r: f64, h: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "interval needs finite R > 0 and finite h, got R={r}, h={h}"
            )));
        }
        Ok(Self { r, h })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Univariate polynomial in the power basis; `coeffs[k]` multiplies `t^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial1D {
    pub coeffs: Vec<f64>,
}

impl Polynomial1D {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn sum_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

/// Equispaced grid of `points` values covering `[-1, 1]`.
pub fn unit_grid(points: usize) -> impl Iterator<Item = f64> {
    let last = (points.max(2) - 1) as f64;
    (0..points).map(move |k| -1.0 + 2.0 * k as f64 / last)
}

/// `max_t |f(t) - q(t)|` over the certification grid.
pub fn grid_sup_error(q: &Polynomial1D, f: impl Fn(f64) -> f64) -> f64 {
    unit_grid(CERT_GRID_POINTS)
        .map(|t| (f(t) - q.eval(t)).abs())
        .fold(0.0, f64::max)
}

/// Converts a Chebyshev series `Σ c_j T_j` to power-basis coefficients.
fn chebyshev_to_power(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n];
    // T_{j-1}, T_j in power form
    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    prev[0] = 1.0;
    if n > 0 {
        out[0] += c[0];
    }
    if n > 1 {
        cur[1] = 1.0;
        out[1] += c[1];
    }
    for &cj in c.iter().skip(2) {
        let mut next = vec![0.0; n];
        for k in 0..n - 1 {
            next[k + 1] += 2.0 * cur[k];
        }
        for k in 0..n {
            next[k] -= prev[k];
        }
        for k in 0..n {
            out[k] += cj * next[k];
        }
        prev = std::mem::replace(&mut cur, next);
    }
    out
}

/// Degree-`d` Chebyshev projection of `t ↦ f_β(R t + h)` computed with
/// Chebyshev–Gauss quadrature on `4(d+1)` nodes.
pub fn best_poly_approx(p: FBetaParam, iv: IntervalSpec, d: usize) -> Polynomial1D {
    let nodes = 4 * (d + 1);
    let samples: Vec<(f64, f64)> = (0..nodes)
        .map(|k| {
            let theta = PI * (k as f64 + 0.5) / nodes as f64;
            (theta, f_beta_eval(p, iv.r * theta.cos() + iv.h))
        })
        .collect();
    let mut cheb: Vec<f64> = (0..=d)
        .map(|j| {
            let s: f64 = samples.iter().map(|(th, f)| f * (j as f64 * th).cos()).sum();
            let scale = if j == 0 { 1.0 } else { 2.0 };
            scale * s / nodes as f64
        })
        .collect();
    // coefficients at quadrature rounding level would be amplified by the power basis
    let noise = 8.0 * f64::EPSILON * samples.iter().map(|(_, f)| f.abs()).fold(0.0, f64::max);
    cheb.iter_mut().for_each(|c| {
        if c.abs() <= noise {
            *c = 0.0
        }
    });
    Polynomial1D {
        coeffs: chebyshev_to_power(&cheb),
    }
}

/// `4R(1 + 2R) / (1 + 1/(2R))^D`.
pub fn approx_error_bound(r: f64, d: usize) -> f64 {
    4.0 * r * (1.0 + 2.0 * r) / (1.0 + 1.0 / (2.0 * r)).powi(d as i32)
}

/// Smallest `D ≤ max_degree` with `8 w1 (λ + 2λ²) / (1 + 2/λ)^D ≤ eps/2`.
pub fn choose_degree_capped(lambda: f64, w1: f64, eps: f64, max_degree: usize) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !(lambda >= 2.0) {
        return Err(Error::InvalidParameter(format!("lambda must be at least 2, got {lambda}")));
    }
    if !(w1 >= 0.0) {
        return Err(Error::InvalidParameter(format!("w1 must be nonnegative, got {w1}")));
    }
    let lead = 8.0 * w1 * (lambda + 2.0 * lambda * lambda);
    let ratio = 1.0 + 2.0 / lambda;
    (0..=max_degree)
        .find(|&d| lead / ratio.powi(d as i32) <= eps / 2.0)
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "approximation error {eps} needs degree above the cap {max_degree} (lambda={lambda}, w1={w1})"
            ))
        })
}

/// [`choose_degree_capped`] with the default cap.
pub fn choose_degree(lambda: f64, w1: f64, eps: f64) -> Result<usize> {
    choose_degree_capped(lambda, w1, eps, DEFAULT_MAX_DEGREE)
}

/// `R = |b1| + √(D+1) (4e)^{D+1} Σ_j |w_j| (1 + ‖W_j‖₁)^{D+1}`.
pub fn l1_budget(b1_abs: f64, w_abs: &[f64], col_norms: &[f64], d: usize) -> f64 {
    let e = (d + 1) as i32;
    let sum: f64 = w_abs
        .iter()
        .zip(col_norms)
        .map(|(w, c)| w.abs() * (1.0 + c).powi(e))
        .sum();
    b1_abs.abs() + ((d + 1) as f64).sqrt() * (4.0 * E).powi(e) * sum
}

/// All subsets of `coords` with at most `degree` elements, ordered by size then lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasis {
    n: usize,
    degree: usize,
    coords: Vec<usize>,
    subsets: Vec<Subset>,
}

impl MonomialBasis {
    pub fn new(n: usize, degree: usize) -> Self {
        Self::over((0..n).collect(), n, degree).expect("full coordinate range is valid")
    }

    /// Basis over a subset of the coordinates of an `n`-dimensional input.
    pub fn over(mut coords: Vec<usize>, n: usize, degree: usize) -> Result<Self> {
        coords.sort_unstable();
        coords.dedup();
        if let Some(&k) = coords.iter().find(|&&k| k >= n) {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
        let mut subsets = vec![Subset::empty()];
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..degree.min(coords.len()) {
            let mut next = Vec::new();
            for s in &frontier {
                let start = s.last().map_or(0, |&last| coords.partition_point(|&c| c <= last));
                for &c in &coords[start..] {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            subsets.extend(next.iter().cloned().map(Subset::new));
            frontier = next;
        }
        Ok(Self {
            n,
            degree,
            coords,
            subsets,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn subsets(&self) -> &[Subset] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }
}

/// `Σ_{k ≤ d} C(n, k)`.
pub fn basis_size(n: usize, d: usize) -> usize {
    let mut total = 0usize;
    let mut binom = 1usize;
    for k in 0..=d.min(n) {
        total += binom;
        binom = binom * (n - k) / (k + 1);
    }
    total
}

/// `(Π_{i∈S} x_i)_S` in basis order.
pub fn monomial_features(basis: &MonomialBasis, x: &[i8]) -> Result<Vec<f64>> {
    if x.len() != basis.n {
        return Err(Error::DimensionMismatch {
            what: "feature input",
            expected: basis.n,
            found: x.len(),
        });
    }
    if x.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidParameter("feature inputs must be ±1".into()));
    }
    Ok(basis.subsets.iter().map(|s| s.character(x) as f64).collect())
}
