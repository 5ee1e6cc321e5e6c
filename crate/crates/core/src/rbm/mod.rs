//! Restricted Boltzmann machines: exact conditional means, brute-force oracles,
//! block Gibbs sampling and norm diagnostics.
//!
//! The joint law is `P(x, h) ∝ exp(⟨x, W h⟩ + ⟨b_vis, x⟩ + ⟨b_hid, h⟩)` with
//! `x ∈ {±1}^{n_visible}` and `h ∈ {±1}^{n_hidden}`. Summing out the hidden layer
//! shows that the conditional mean of one visible unit given the others is a
//! two-layer feedforward network whose hidden activations are `f_β`.

mod exact;
mod gibbs;
mod network;

pub use exact::{conditional_mean_oracle, exact_visible_pmf, ORACLE_HIDDEN_CAP};
pub use gibbs::{gibbs_sample, gibbs_sample_chains, GibbsSchedule};
pub(crate) use gibbs::{chain_rng, draw_spin};
pub use network::{rbm_from_tanh_network, NetworkEmbedding, DEFAULT_REPLICATION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Below this `β` the activation is evaluated as its `β → 0` limit, `tanh`.
pub const SMALL_BETA: f64 = 1e-8;

/// Parameter of the `f_β` activation, `0 ≤ β ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FBetaParam(f64);

impl FBetaParam {
    pub fn new(beta: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&beta) {
            Ok(Self(beta))
        } else {
            Err(Error::InvalidParameter(format!("beta must lie in [0, 1], got {beta}")))
        }
    }

    /// The activation index carried by a coupling: `|tanh(w)|`.
    pub fn from_coupling(w: f64) -> Self {
        Self(w.tanh().abs())
    }

    pub fn beta(self) -> f64 {
        self.0
    }
}

/// `f_β(x) = atanh(β tanh x) / β`, interpolating `tanh` (β = 0) and the identity (β = 1).
pub fn f_beta_eval(p: FBetaParam, x: f64) -> f64 {
    let beta = p.0;
    if beta < SMALL_BETA {
        return x.tanh();
    }
    if x.abs() < 1.0 {
        return (beta * x.tanh()).atanh() / beta;
    }
    // (1 + β tanh x) / (1 - β tanh x) rewritten with e^{-2|x|} so that it does not
    // saturate to 1/0 when tanh rounds to 1
    let a = x.abs();
    let e = (-2.0 * a).exp();
    let val = 0.5 * (((1.0 + beta) + (1.0 - beta) * e).ln() - ((1.0 - beta) + (1.0 + beta) * e).ln());
    (val / beta).copysign(x)
}

/// `ln(2 cosh z)` without overflow.
#[inline]
pub(crate) fn ln_2cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Restricted Boltzmann machine over ±1 units.
#[derive(Clone, Debug, PartialEq)]
pub struct Rbm {
    n_visible: usize,
    n_hidden: usize,
    /// Row-major `n_visible × n_hidden`.
    weights: Vec<f64>,
    b_vis: Vec<f64>,
    b_hid: Vec<f64>,
}

impl Rbm {
    pub fn new(
        n_visible: usize,
        n_hidden: usize,
        weights: Vec<f64>,
        b_vis: Vec<f64>,
        b_hid: Vec<f64>,
    ) -> Result<Self> {
        if n_visible == 0 {
            return Err(Error::InvalidParameter("an RBM needs at least one visible unit".into()));
        }
        let checks = [
            ("weight matrix", n_visible * n_hidden, weights.len()),
            ("visible biases", n_visible, b_vis.len()),
            ("hidden biases", n_hidden, b_hid.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch { what, expected, found });
            }
        }
        if weights.iter().chain(&b_vis).chain(&b_hid).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("RBM parameters must be finite".into()));
        }
        Ok(Self {
            n_visible,
            n_hidden,
            weights,
            b_vis,
            b_hid,
        })
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self::new(
            n_visible,
            n_hidden,
            vec![0.0; n_visible * n_hidden],
            vec![0.0; n_visible],
            vec![0.0; n_hidden],
        )
        .expect("zero model is valid")
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_hidden + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn b_vis(&self) -> &[f64] {
        &self.b_vis
    }

    pub fn b_hid(&self) -> &[f64] {
        &self.b_hid
    }

    pub fn with_visible_biases(mut self, b_vis: Vec<f64>) -> Result<Self> {
        if b_vis.len() != self.n_visible {
            return Err(Error::DimensionMismatch {
                what: "visible biases",
                expected: self.n_visible,
                found: b_vis.len(),
            });
        }
        self.b_vis = b_vis;
        Ok(self)
    }

    /// `b_hid_j + Σ_i W_ij x_i`.
    #[inline]
    pub fn hidden_field(&self, j: usize, x: &[i8]) -> f64 {
        self.b_hid[j]
            + x.iter()
                .enumerate()
                .map(|(i, &s)| self.weight(i, j) * s as f64)
                .sum::<f64>()
    }

    /// `b_vis_i + Σ_j W_ij h_j`.
    #[inline]
    pub fn visible_field(&self, i: usize, h: &[i8]) -> f64 {
        let row = &self.weights[i * self.n_hidden..(i + 1) * self.n_hidden];
        self.b_vis[i] + row.iter().zip(h).map(|(w, &s)| w * s as f64).sum::<f64>()
    }

    /// Hidden-degree-2 model whose visible marginal is the Ising model with the given
    /// pairwise couplings `(a, b, J)` and external fields. Each edge gets its own
    /// hidden unit with weights `(c, sign(J) c)`, `c = atanh(√tanh|J|)`.
    pub fn from_ising(n: usize, edges: &[(usize, usize, f64)], fields: &[f64]) -> Result<Self> {
        if fields.len() != n {
            return Err(Error::DimensionMismatch {
                what: "external fields",
                expected: n,
                found: fields.len(),
            });
        }
        let nh = edges.len();
        let mut w = vec![0.0; n * nh];
        for (j, &(a, b, coupling)) in edges.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidParameter(format!("invalid edge ({a}, {b}) for {n} spins")));
            }
            let c = coupling.abs().tanh().sqrt().atanh();
            w[a * nh + j] = c;
            w[b * nh + j] = c.copysign(coupling);
        }
        Rbm::new(n, nh, w, fields.to_vec(), vec![0.0; nh])
    }

    /// Model with every bias negated (its law is the spin-flip of this one).
    pub fn negated_biases(&self) -> Rbm {
        Rbm {
            b_vis: self.b_vis.iter().map(|b| -b).collect(),
            b_hid: self.b_hid.iter().map(|b| -b).collect(),
            ..self.clone()
        }
    }

    /// Pairs of visible units sharing a hidden unit with nonzero couplings.
    pub fn two_hop_neighborhoods(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![std::collections::BTreeSet::new(); self.n_visible];
        for j in 0..self.n_hidden {
            let members: Vec<usize> = (0..self.n_visible)
                .filter(|&i| self.weight(i, j) != 0.0)
                .collect();
            for &a in &members {
                for &b in &members {
                    if a != b {
                        nb[a].insert(b);
                    }
                }
            }
        }
        nb.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Inserts `x_i` (value irrelevant) back into a vector of the other coordinates.
    fn expand_rest(&self, i: usize, x_rest: &[i8]) -> Result<Vec<i8>> {
        if i >= self.n_visible {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n_visible,
            });
        }
        if x_rest.len() + 1 != self.n_visible {
            return Err(Error::DimensionMismatch {
                what: "conditioning vector",
                expected: self.n_visible - 1,
                found: x_rest.len(),
            });
        }
        if x_rest.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter("conditioning values must be ±1".into()));
        }
        let mut x = Vec::with_capacity(self.n_visible);
        x.extend_from_slice(&x_rest[..i]);
        x.push(1);
        x.extend_from_slice(&x_rest[i..]);
        Ok(x)
    }

    /// Conditional mean of unit `i` where `x` is a full visible vector (entry `i` ignored).
    pub fn conditional_mean_full(&self, i: usize, x: &[i8]) -> f64 {
        let mut total = self.b_vis[i];
        for j in 0..self.n_hidden {
            let w = self.weight(i, j);
            if w == 0.0 {
                continue;
            }
            let field = self.hidden_field(j, x) - w * x[i] as f64;
            total += w.tanh() * f_beta_eval(FBetaParam::from_coupling(w), field);
        }
        total.tanh()
    }

    pub fn to_record(&self) -> RbmRecord {
        RbmRecord {
            format_version: MODEL_FORMAT_VERSION,
            n_visible: self.n_visible,
            n_hidden: self.n_hidden,
            w: self.weights.clone(),
            b_vis: self.b_vis.clone(),
            b_hid: self.b_hid.clone(),
        }
    }

    pub fn from_record(rec: RbmRecord) -> Result<Self> {
        if rec.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format_version {}",
                rec.format_version
            )));
        }
        Self::new(rec.n_visible, rec.n_hidden, rec.w, rec.b_vis, rec.b_hid)
    }
}

/// Serialized model document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RbmRecord {
    pub format_version: u32,
    pub n_visible: usize,
    pub n_hidden: usize,
    /// Row-major `n_visible × n_hidden`.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b_vis: Vec<f64>,
    pub b_hid: Vec<f64>,
}

impl Serialize for Rbm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rbm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Rbm::from_record(RbmRecord::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// `E[X_i | X_{~i} = x_rest]` through the `f_β` network:
/// `tanh(b_vis_i + Σ_j tanh(W_ij) f_{|tanh W_ij|}(b_hid_j + Σ_{k≠i} W_kj x_k))`.
///
/// `x_rest` lists the other visible units in increasing index order.
pub fn conditional_mean(model: &Rbm, i: usize, x_rest: &[i8]) -> Result<f64> {
    let x = model.expand_rest(i, x_rest)?;
    Ok(model.conditional_mean_full(i, &x))
}

/// `(λ1, λ2)` norm bounds of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    /// `max_i Σ_j |tanh W_ij| + |b_vis_i|`.
    pub lambda1: f64,
    /// Largest column ℓ1 norm of `W`.
    pub lambda2: f64,
}

pub fn norm_bounds(model: &Rbm) -> NormBounds {
    let lambda1 = (0..model.n_visible)
        .map(|i| {
            (0..model.n_hidden)
                .map(|j| model.weight(i, j).tanh().abs())
                .sum::<f64>()
                + model.b_vis[i].abs()
        })
        .fold(0.0, f64::max);
    let lambda2 = (0..model.n_hidden)
        .map(|j| (0..model.n_visible).map(|i| model.weight(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    NormBounds { lambda1, lambda2 }
}

/// `max_i Σ_j |W_ij| + |b_vis_i|`, which bounds `|atanh E[X_i | X_{~i}]|`.
///
/// Each hidden unit moves the visible field by `atanh(tanh W_ij · tanh z_j)`, whose size
/// reaches `|W_ij|` rather than `|tanh W_ij|` when the hidden field `z_j` is large, so
/// `λ1` alone does not bound the conditional means.
pub fn field_bound(model: &Rbm) -> f64 {
    (0..model.n_visible)
        .map(|i| (0..model.n_hidden).map(|j| model.weight(i, j).abs()).sum::<f64>() + model.b_vis[i].abs())
        .fold(0.0, f64::max)
}

/// Lower bound `(1 - tanh λ1)^d` on `2^{|S|} P(X_S = x_S)` over sets of size `d`.
pub fn min_marginal_bound(bounds: NormBounds, d: usize) -> f64 {
    (1.0 - bounds.lambda1.tanh()).powi(d as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_beta_endpoints() {
        assert!((f_beta_eval(FBetaParam::new(1.0).unwrap(), 0.7) - 0.7).abs() < 1e-15);
        assert_eq!(f_beta_eval(FBetaParam::new(0.3).unwrap(), 0.0), 0.0);
        for k in -40..=40 {
            let x = k as f64 * 0.5;
            let id = f_beta_eval(FBetaParam::new(1.0).unwrap(), x);
            assert!((id - x).abs() < 1e-12, "x={x} got {id}");
            let t = f_beta_eval(FBetaParam::new(0.0).unwrap(), x);
            assert!((t - x.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn f_beta_reference_value() {
        // 40-digit evaluation of atanh(0.5 tanh 2) / 0.5
        let v = f_beta_eval(FBetaParam::new(0.5).unwrap(), 2.0);
        assert!((v - 1.051_208_490_621_256_9).abs() < 1e-14, "{v}");
    }

    #[test]
    fn f_beta_branches_agree_at_switch() {
        for &beta in &[0.1, 0.5, 0.9, 0.999] {
            let p = FBetaParam::new(beta).unwrap();
            let direct = (beta * 1.0f64.tanh()).atanh() / beta;
            assert!((f_beta_eval(p, 1.0) - direct).abs() < 1e-14);
            assert!((f_beta_eval(p, -1.0) + direct).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_beta() {
        assert!(FBetaParam::new(1.5).is_err());
        assert!(FBetaParam::new(-0.1).is_err());
    }

    #[test]
    fn zero_coupling_gives_bias_mean() {
        let m = Rbm::zeros(3, 2).with_visible_biases(vec![0.3, -0.2, 0.0]).unwrap();
        let v = conditional_mean(&m, 1, &[1, -1]).unwrap();
        assert!((v - (-0.2f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn conditional_mean_validates_input() {
        let m = Rbm::zeros(3, 1);
        assert!(matches!(
            conditional_mean(&m, 3, &[1, 1]),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(conditional_mean(&m, 0, &[1]).is_err());
    }

    #[test]
    fn norm_bounds_reference() {
        let m = Rbm::new(2, 1, vec![0.5, -0.5], vec![0.1, 0.0], vec![0.0]).unwrap();
        let b = norm_bounds(&m);
        assert!((b.lambda1 - (0.5f64.tanh() + 0.1)).abs() < 1e-15);
        assert!((b.lambda1 - 0.56212).abs() < 1e-5);
        assert!((b.lambda2 - 1.0).abs() < 1e-15);
        let flipped = Rbm::new(2, 1, vec![-0.5, 0.5], vec![0.1, 0.0], vec![0.0]).unwrap();
        assert_eq!(norm_bounds(&flipped), b);
        assert_eq!(norm_bounds(&Rbm::zeros(2, 2)), NormBounds { lambda1: 0.0, lambda2: 0.0 });
    }

    #[test]
    fn min_marginal_bound_values() {
        let b = NormBounds { lambda1: 1.0, lambda2: 0.0 };
        assert!((min_marginal_bound(b, 3) - 0.013551).abs() < 1e-6);
        assert_eq!(min_marginal_bound(NormBounds { lambda1: 0.0, lambda2: 3.0 }, 7), 1.0);
        let mut prev = 1.0;
        for d in 1..6 {
            let v = min_marginal_bound(b, d);
            assert!(v < prev);
            prev = v;
        }
        assert!(min_marginal_bound(NormBounds { lambda1: 1.5, lambda2: 0.0 }, 3) < min_marginal_bound(b, 3));
    }

    #[test]
    fn strong_hidden_field_exceeds_lambda1() {
        let m = Rbm::new(2, 1, vec![2.0, 2.0], vec![0.0; 2], vec![10.0]).unwrap();
        let mean = m.conditional_mean_full(0, &[1, -1]);
        assert!(mean > norm_bounds(&m).lambda1.tanh());
        assert!(mean <= field_bound(&m).tanh());
    }

    #[test]
    fn record_roundtrip_and_version_check() {
        let m = Rbm::new(2, 1, vec![0.5, -0.25], vec![0.1, 0.0], vec![0.3]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"format_version\":1"));
        let back: Rbm = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad = s.replace("\"format_version\":1", "\"format_version\":9");
        assert!(serde_json::from_str::<Rbm>(&bad).is_err());
    }

    #[test]
    fn ising_embedding_reproduces_coupling() {
        let m = Rbm::from_ising(2, &[(0, 1, -0.4)], &[0.0, 0.1]).unwrap();
        let j = (m.weight(0, 0).tanh() * m.weight(1, 0).tanh()).atanh();
        assert!((j + 0.4).abs() < 1e-14);
        assert!(Rbm::from_ising(2, &[(0, 0, 0.4)], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn two_hop_from_shared_hidden_units() {
        let m = Rbm::new(4, 2, vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 2])
            .unwrap();
        assert_eq!(m.two_hop_neighborhoods(), vec![vec![1], vec![0, 2], vec![1], vec![]]);
    }
}
