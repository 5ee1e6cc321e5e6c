//! Logistic regression over a bounded ℓ1 ball, solved by exponentiated gradient.
//!
//! The ball `{w : ‖w‖₁ ≤ R}` is the image of the `2p`-simplex under
//! `u ↦ R(u⁺ − u⁻)`, so multiplicative updates on the simplex keep every iterate
//! feasible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::approx::MonomialBasis;
use crate::error::{Error, Result};
use crate::hypercube::Pmf;
use crate::poly::SparsePolynomial;
use crate::spins::SpinSource;

/// Relative objective change below which the optimizer stops.
pub const REL_IMPROVEMENT_TOL: f64 = 1e-7;

/// `softplus(z) = ln(1 + e^z)`.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ℓ(v, y) = ln(1 + e^{-2vy})`, the negative log-likelihood of `y` under mean `tanh v`.
#[inline]
pub fn logistic_loss(v: f64, y: i8) -> f64 {
    softplus(-2.0 * v * y as f64)
}

/// `∂ℓ/∂v = -2y / (1 + e^{2vy})`.
#[inline]
pub fn logistic_grad(v: f64, y: i8) -> f64 {
    let y = y as f64;
    let z = 2.0 * v * y;
    if z > 0.0 {
        let e = (-z).exp();
        -2.0 * y * e / (1.0 + e)
    } else {
        -2.0 * y / (1.0 + z.exp())
    }
}

/// Loss of a predictor value against a row carrying weight `pos` on `y = +1` and `neg` on `y = -1`.
#[inline]
fn pair_loss(v: f64, pos: f64, neg: f64) -> f64 {
    let mut total = 0.0;
    if pos > 0.0 {
        total += pos * logistic_loss(v, 1);
    }
    if neg > 0.0 {
        total += neg * logistic_loss(v, -1);
    }
    total
}

#[inline]
fn pair_grad(v: f64, pos: f64, neg: f64) -> f64 {
    pos * logistic_grad(v, 1) + neg * logistic_grad(v, -1)
}

/// Regression settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub degree: usize,
    /// ℓ1 radius of the feasible ball.
    pub radius: f64,
    pub max_iters: usize,
    /// Target duality gap.
    pub tol: f64,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            radius: 10.0,
            max_iters: 2000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regression radius must be finite and nonnegative, got {}",
                self.radius
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "regression tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Feature matrix with per-row label weights, normalized to total mass one.
///
/// Repeated feature rows are merged, so a design built from `m` samples of `k`
/// binary inputs never has more than `2^k` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    p: usize,
    x: Vec<f64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
    /// Raw sample count behind the weights.
    n_samples: usize,
}

impl Design {
    /// One row per sample, each weighted `1/m`.
    pub fn new(p: usize, features: Vec<f64>, labels: &[i8]) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.len() != m * p {
            return Err(Error::DimensionMismatch {
                what: "feature matrix",
                expected: m * p,
                found: features.len(),
            });
        }
        if let Some(k) = labels.iter().position(|&y| y != 1 && y != -1) {
            return Err(Error::NotASpin {
                row: k,
                col: 0,
                value: labels[k] as f64,
            });
        }
        if features.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidParameter("features must lie in [-1, 1]".into()));
        }
        let w = 1.0 / m as f64;
        let pos = labels.iter().map(|&y| if y > 0 { w } else { 0.0 }).collect();
        let neg = labels.iter().map(|&y| if y < 0 { w } else { 0.0 }).collect();
        Ok(Self {
            p,
            x: features,
            pos,
            neg,
            n_samples: m,
        })
    }

    /// Monomial design predicting coordinate `target` of `src` from `basis`.
    pub fn from_source<S: SpinSource + ?Sized>(src: &S, target: usize, basis: &MonomialBasis) -> Result<Self> {
        let rows = src.n_rows();
        if rows == 0 {
            return Err(Error::EmptyDataset);
        }
        if target >= src.n_spins() {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: src.n_spins(),
            });
        }
        if basis.n() != src.n_spins() {
            return Err(Error::DimensionMismatch {
                what: "basis dimension",
                expected: src.n_spins(),
                found: basis.n(),
            });
        }
        let coords = basis.coords();
        let mut groups: BTreeMap<Vec<i8>, (f64, f64)> = BTreeMap::new();
        let mut total = 0.0;
        for k in 0..rows {
            let row = src.row(k);
            let w = src.weight(k);
            if w == 0.0 {
                continue;
            }
            total += w;
            let key: Vec<i8> = coords.iter().map(|&c| row[c]).collect();
            let e = groups.entry(key).or_insert((0.0, 0.0));
            if row[target] > 0 {
                e.0 += w;
            } else {
                e.1 += w;
            }
        }
        if total <= 0.0 {
            return Err(Error::EmptyDataset);
        }
        let p = basis.len();
        let mut x = Vec::with_capacity(groups.len() * p);
        let mut pos = Vec::with_capacity(groups.len());
        let mut neg = Vec::with_capacity(groups.len());
        let mut full = vec![1i8; src.n_spins()];
        for (key, (wp, wn)) in groups {
            for (&c, &v) in coords.iter().zip(&key) {
                full[c] = v;
            }
            x.extend(basis.subsets().iter().map(|s| s.character(&full) as f64));
            pos.push(wp / total);
            neg.push(wn / total);
        }
        Ok(Self {
            p,
            x,
            pos,
            neg,
            n_samples: rows,
        })
    }

    /// Rows with explicit label weights `pos`/`neg` summing to one overall.
    pub fn from_weighted_rows(p: usize, features: Vec<f64>, pos: Vec<f64>, neg: Vec<f64>, n_samples: usize) -> Result<Self> {
        let m = pos.len();
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        if neg.len() != m || features.len() != m * p {
            return Err(Error::DimensionMismatch {
                what: "weighted design",
                expected: m * p,
                found: features.len(),
            });
        }
        if features.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::InvalidParameter("features must lie in [-1, 1]".into()));
        }
        if pos.iter().chain(&neg).any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("label weights must be nonnegative".into()));
        }
        Ok(Self {
            p,
            x: features,
            pos,
            neg,
            n_samples,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.pos.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Overrides the sample count used for degenerate-label clipping.
    pub fn with_n_samples(mut self, m: usize) -> Self {
        self.n_samples = m;
        self
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.p..(r + 1) * self.p]
    }

    fn predict_into(&self, w: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(w).map(|(a, b)| a * b).sum();
        }
    }

    /// Weighted mean logistic loss of the linear predictor `w`.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let mut v = vec![0.0; self.rows()];
        self.predict_into(w, &mut v);
        self.loss_from_values(&v)
    }

    fn loss_from_values(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(self.pos.iter().zip(&self.neg))
            .map(|(&vr, (&p, &n))| pair_loss(vr, p, n))
            .sum()
    }

    fn gradient_from_values(&self, v: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|x| *x = 0.0);
        for (r, &vr) in v.iter().enumerate() {
            let d = pair_grad(vr, self.pos[r], self.neg[r]);
            if d != 0.0 {
                for (gk, xk) in g.iter_mut().zip(self.row(r)) {
                    *gk += d * xk;
                }
            }
        }
    }

    /// Total weight on `y = +1`.
    pub fn positive_mass(&self) -> f64 {
        self.pos.iter().sum()
    }

    /// Label mean `E[y]` under the design weights.
    pub fn label_mean(&self) -> f64 {
        self.pos.iter().sum::<f64>() - self.neg.iter().sum::<f64>()
    }
}

/// Output of [`fit_l1_logistic`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coeffs: Vec<f64>,
    /// Weighted empirical loss at `coeffs`.
    pub loss: f64,
    /// Frank–Wolfe duality gap `⟨g, w⟩ + R‖g‖∞`, an upper bound on the suboptimality.
    pub gap: f64,
    pub iterations: usize,
}

fn fw_gap(g: &[f64], w: &[f64], radius: f64) -> f64 {
    let inner: f64 = g.iter().zip(w).map(|(a, b)| a * b).sum();
    let sup = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
    (inner + radius * sup).max(0.0)
}

/// Minimizes the design loss over `‖w‖₁ ≤ R` by exponentiated gradient with
/// backtracking on the step size. Returns the best iterate seen.
pub fn fit_l1_logistic(design: &Design, cfg: &RegressionConfig) -> Result<LogisticFit> {
    cfg.validate()?;
    let p = design.p;
    let radius = cfg.radius;
    let mut w = vec![0.0; p];
    let mut v = vec![0.0; design.rows()];
    let mut g = vec![0.0; p];

    if p == 0 || radius == 0.0 {
        let loss = design.loss_from_values(&v);
        design.gradient_from_values(&v, &mut g);
        return Ok(LogisticFit {
            coeffs: w,
            loss,
            gap: fw_gap(&g, &vec![0.0; p], radius),
            iterations: 0,
        });
    }

    let pos_mass = design.positive_mass();
    if pos_mass <= 0.0 || pos_mass >= 1.0 - 1e-15 {
        return Ok(degenerate_fit(design, radius, pos_mass > 0.5));
    }

    // log-weights of the 2p simplex coordinates: [u⁺ | u⁻]
    let mut log_u = vec![-((2 * p) as f64).ln(); 2 * p];
    let mut loss = design.loss_from_values(&v);
    design.gradient_from_values(&v, &mut g);
    // first trial moves every log-weight by at most one unit
    let gmax = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut eta = 1.0 / (radius * gmax.max(1e-12));
    let mut stalled = 0;
    let mut best = (loss, w.clone());
    let mut iterations = 0;
    let mut trial_log = vec![0.0; 2 * p];
    let mut trial_w = vec![0.0; p];
    let mut trial_v = vec![0.0; design.rows()];

    while iterations < cfg.max_iters {
        if fw_gap(&g, &w, radius) <= cfg.tol {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        let mut trial_loss = loss;
        for _ in 0..60 {
            for k in 0..p {
                trial_log[k] = log_u[k] - eta * radius * g[k];
                trial_log[p + k] = log_u[p + k] + eta * radius * g[k];
            }
            let max = trial_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = trial_log.iter().map(|l| (l - max).exp()).sum();
            let shift = max + z.ln();
            trial_log.iter_mut().for_each(|l| *l -= shift);
            for k in 0..p {
                trial_w[k] = radius * (trial_log[k].exp() - trial_log[p + k].exp());
            }
            design.predict_into(&trial_w, &mut trial_v);
            trial_loss = design.loss_from_values(&trial_v);
            let kl: f64 = trial_log
                .iter()
                .zip(&log_u)
                .map(|(&a, &b)| a.exp() * (a - b))
                .sum::<f64>()
                .max(0.0);
            let lin: f64 = g.iter().zip(trial_w.iter().zip(&w)).map(|(gk, (a, b))| gk * (a - b)).sum();
            if trial_loss <= loss + lin + kl / eta + 1e-15 * loss.abs() {
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
        let improvement = loss - trial_loss;
        std::mem::swap(&mut log_u, &mut trial_log);
        std::mem::swap(&mut w, &mut trial_w);
        std::mem::swap(&mut v, &mut trial_v);
        loss = trial_loss;
        design.gradient_from_values(&v, &mut g);
        if loss < best.0 {
            best = (loss, w.clone());
        }
        eta *= 1.5;
        if improvement.abs() <= REL_IMPROVEMENT_TOL * loss.abs().max(1e-12) {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let (loss, coeffs) = best;
    let mut vb = vec![0.0; design.rows()];
    design.predict_into(&coeffs, &mut vb);
    design.gradient_from_values(&vb, &mut g);
    Ok(LogisticFit {
        gap: fw_gap(&g, &coeffs, radius),
        coeffs,
        loss,
        iterations,
    })
}

/// All labels equal: a constant predictor `atanh(±(1 - 1/m))` on the first
/// constant-valued column, clipped to the radius.
fn degenerate_fit(design: &Design, radius: f64, positive: bool) -> LogisticFit {
    let p = design.p;
    let mut coeffs = vec![0.0; p];
    let constant_col = (0..p).find(|&k| {
        (0..design.rows()).all(|r| design.row(r)[k] == 1.0)
    });
    if let Some(k) = constant_col {
        let m = design.n_samples.max(2) as f64;
        let c = (1.0 - 1.0 / m).atanh().min(radius);
        coeffs[k] = if positive { c } else { -c };
    }
    let loss = design.loss(&coeffs);
    let mut v = vec![0.0; design.rows()];
    design.predict_into(&coeffs, &mut v);
    let mut g = vec![0.0; p];
    design.gradient_from_values(&v, &mut g);
    LogisticFit {
        gap: fw_gap(&g, &coeffs, radius),
        coeffs,
        loss,
        iterations: 0,
    }
}

/// `4R√(2 ln(2p)/m) + 2R√(2 ln(2/δ)/m)`.
pub fn excess_loss_bound(r: f64, m: usize, p: usize, delta: f64) -> f64 {
    let m = m as f64;
    4.0 * r * (2.0 * (2.0 * p as f64).ln() / m).sqrt() + 2.0 * r * (2.0 * (2.0 / delta).ln() / m).sqrt()
}

/// Smallest sample count with `excess_loss_bound(r, m, p, δ) ≤ target`.
pub fn samples_for_excess(r: f64, p: usize, delta: f64, target: f64) -> f64 {
    let c = 4.0 * r * (2.0 * (2.0 * p as f64).ln()).sqrt() + 2.0 * r * (2.0 * (2.0 / delta).ln()).sqrt();
    (c / target).powi(2)
}

/// Converts basis coefficients to a polynomial over the ambient coordinates.
pub fn coefficients_to_polynomial(basis: &MonomialBasis, coeffs: &[f64]) -> SparsePolynomial {
    let mut poly = SparsePolynomial::new(basis.n());
    for (s, &c) in basis.subsets().iter().zip(coeffs) {
        poly.add(s.clone(), c);
    }
    poly
}

/// Fitted predictor of one coordinate together with its basis.
#[derive(Clone, Debug)]
pub struct NetworkPredictor {
    pub target: usize,
    pub basis: MonomialBasis,
    pub fit: LogisticFit,
}

impl NetworkPredictor {
    pub fn polynomial(&self) -> SparsePolynomial {
        coefficients_to_polynomial(&self.basis, &self.fit.coeffs)
    }

    /// Weighted loss on another sample of the same coordinates.
    pub fn loss_on<S: SpinSource + ?Sized>(&self, src: &S) -> Result<f64> {
        Ok(Design::from_source(src, self.target, &self.basis)?.loss(&self.fit.coeffs))
    }
}

/// Fits a degree-`cfg.degree` monomial predictor of `X_target` from every
/// coordinate outside `excluded ∪ {target}`.
pub fn fit_network_predictor<S: SpinSource + ?Sized>(
    data: &S,
    target: usize,
    excluded: &[usize],
    cfg: &RegressionConfig,
) -> Result<NetworkPredictor> {
    let n = data.n_spins();
    if target >= n {
        return Err(Error::IndexOutOfRange { index: target, len: n });
    }
    if excluded.contains(&target) {
        return Err(Error::InvalidParameter(format!(
            "target {target} cannot also be excluded"
        )));
    }
    if data.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let coords: Vec<usize> = (0..n).filter(|k| *k != target && !excluded.contains(k)).collect();
    let basis = MonomialBasis::over(coords, n, cfg.degree)?;
    let design = Design::from_source(data, target, &basis)?;
    let fit = fit_l1_logistic(&design, cfg)?;
    Ok(NetworkPredictor { target, basis, fit })
}

/// Predictor of `X_target` as a polynomial plus its training loss.
pub fn learn_network_predictor<S: SpinSource + ?Sized>(
    data: &S,
    target: usize,
    excluded: &[usize],
    cfg: &RegressionConfig,
) -> Result<(SparsePolynomial, f64)> {
    let pred = fit_network_predictor(data, target, excluded, cfg)?;
    Ok((pred.polynomial(), pred.fit.loss))
}

/// `E_P[ℓ(q(X), X_target)]` where `q` ignores the target coordinate.
pub fn population_loss(pmf: &Pmf, target: usize, predictor: &SparsePolynomial) -> f64 {
    let n = pmf.n();
    let mut x = vec![0i8; n];
    pmf.probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| {
            crate::hypercube::decode_into(s, &mut x);
            p * logistic_loss(predictor.eval(&x), x[target])
        })
        .sum()
}

/// `E_P[ℓ(atanh E[X_t | X_{~t}], X_t)]`, the conditional entropy of `X_t` given the rest.
pub fn bayes_loss(pmf: &Pmf, target: usize) -> f64 {
    let means = pmf.conditional_means(target);
    pmf.probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| {
            let y = crate::hypercube::spin_of(s, target);
            let mu = means[s];
            // ℓ(atanh μ, y) = -ln((1 + yμ)/2)
            -p * (0.5 * (1.0 + y as f64 * mu)).ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_and_grad_reference() {
        assert!((logistic_loss(0.0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((logistic_loss(0.0, -1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(logistic_grad(0.0, 1), -1.0);
        assert_eq!(logistic_grad(0.0, -1), 1.0);
        let h = 1e-4;
        let second = (logistic_loss(h, 1) - 2.0 * logistic_loss(0.0, 1) + logistic_loss(-h, 1)) / (h * h);
        assert!((second - 1.0).abs() < 1e-6);
        assert!(logistic_loss(800.0, -1).is_finite());
        assert!(logistic_loss(-800.0, 1) > 1500.0);
    }

    #[test]
    fn zero_radius_gives_log_two() {
        let d = Design::new(1, vec![1.0, -1.0, 1.0], &[1, 1, -1]).unwrap();
        let cfg = RegressionConfig {
            radius: 0.0,
            ..Default::default()
        };
        let fit = fit_l1_logistic(&d, &cfg).unwrap();
        assert_eq!(fit.coeffs, vec![0.0]);
        assert!((fit.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn separable_data_hits_the_boundary() {
        let x = vec![1.0, -1.0, 1.0, -1.0];
        let d = Design::new(1, x, &[1, -1, 1, -1]).unwrap();
        let cfg = RegressionConfig {
            radius: 10.0,
            max_iters: 5000,
            ..Default::default()
        };
        let fit = fit_l1_logistic(&d, &cfg).unwrap();
        let l1: f64 = fit.coeffs.iter().map(|c| c.abs()).sum();
        assert!(l1 <= 10.0 + 1e-12);
        assert!(fit.loss < std::f64::consts::LN_2);
        assert!((fit.loss - logistic_loss(10.0, 1)).abs() < 1e-6, "{}", fit.loss);
    }

    #[test]
    fn weighted_two_point_problem_recovers_parameter() {
        // E[Y | X = x] = tanh(0.4 x) with a balanced X: closed-form minimizer 0.4
        let mu = 0.4f64.tanh();
        let pos = [(1.0 + mu) / 4.0, (1.0 - mu) / 4.0];
        let neg = [(1.0 - mu) / 4.0, (1.0 + mu) / 4.0];
        let d = Design {
            p: 1,
            x: vec![1.0, -1.0],
            pos: pos.to_vec(),
            neg: neg.to_vec(),
            n_samples: 1000,
        };
        let fit = fit_l1_logistic(&d, &RegressionConfig::default()).unwrap();
        assert!((fit.coeffs[0] - 0.4).abs() < 1e-3, "{:?}", fit);
        let q = (1.0 + mu) / 2.0;
        let entropy = -(q * q.ln() + (1.0 - q) * (1.0 - q).ln());
        assert!(fit.loss - entropy < 1e-8, "{:?}", fit);
        assert!(fit.gap >= fit.loss - entropy);
    }

    #[test]
    fn constant_labels_use_clipped_bias() {
        let d = Design::new(2, vec![1.0, 1.0, 1.0, -1.0], &[-1, -1]).unwrap();
        let fit = fit_l1_logistic(&d, &RegressionConfig::default()).unwrap();
        assert!((fit.coeffs[0] + 0.5f64.atanh()).abs() < 1e-15);
        assert_eq!(fit.coeffs[1], 0.0);
    }

    #[test]
    fn excess_bound_reference() {
        assert_eq!(excess_loss_bound(0.0, 100, 10, 0.1), 0.0);
        let b = excess_loss_bound(1.0, 10_000, 100, 0.05);
        assert!((b - 0.184_533_951_087_123).abs() < 1e-12, "{b}");
        let ratio = excess_loss_bound(2.0, 400, 7, 0.1) / excess_loss_bound(2.0, 1600, 7, 0.1);
        assert!((ratio - 2.0).abs() < 1e-12);
        let m = samples_for_excess(1.0, 100, 0.05, 0.1);
        assert!((excess_loss_bound(1.0, m.ceil() as usize, 100, 0.05) - 0.1).abs() < 1e-4);
    }

    #[test]
    fn design_rejects_bad_inputs() {
        assert!(Design::new(1, vec![1.0], &[0]).is_err());
        assert!(Design::new(2, vec![1.0], &[1]).is_err());
        assert!(Design::new(1, vec![1.5], &[1]).is_err());
        assert!(matches!(Design::new(1, vec![], &[]), Err(Error::EmptyDataset)));
    }
}
