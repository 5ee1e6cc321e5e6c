//! Supervised RBMs: the label couples to the hidden layer, so conditioning on it
//! leaves a sparse ferromagnetic RBM over the inputs. Neighborhoods are grown
//! greedily by label-averaged conditional covariance, each label class gets its
//! own MRF, and the label predictor is `tanh((f⁺ − f⁻)/2 + b)`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{distribution_from_structure, ClipSpec, MrfPotential};
use crate::error::{Error, Result};
use crate::hypercube::{check_cap, decode_into, fourier_coefficients, mask_members, Pmf, ENUMERATION_CAP};
use crate::logistic::{fit_l1_logistic, logistic_grad, logistic_loss, Design, RegressionConfig};
use crate::poly::{CompiledPolynomial, SparsePolynomial, Subset};
use crate::rbm::{exact_visible_pmf, NormBounds, Rbm};
use crate::spins::{filter_by_label, SpinDataset, SpinSource, WeightedSpins};
use crate::structure::NeighborhoodMap;

/// Hard ceiling on greedy additions.
pub const T_STAR_HARD_CAP: usize = 30;

/// RBM whose hidden layer also couples to a ±1 label `y`:
/// `P(x, h, y) ∝ exp(⟨x, W h⟩ + ⟨h, w⟩ y + ⟨b1, x⟩ + ⟨b2, h⟩ + b3 y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedRbm {
    pub base: Rbm,
    pub w_label: Vec<f64>,
    pub b_label: f64,
}

impl SupervisedRbm {
    pub fn new(base: Rbm, w_label: Vec<f64>, b_label: f64) -> Result<Self> {
        if w_label.len() != base.n_hidden() {
            return Err(Error::DimensionMismatch {
                what: "label couplings",
                expected: base.n_hidden(),
                found: w_label.len(),
            });
        }
        if w_label.iter().any(|v| !v.is_finite()) || !b_label.is_finite() {
            return Err(Error::InvalidParameter("label parameters must be finite".into()));
        }
        Ok(Self {
            base,
            w_label,
            b_label,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.base.n_visible()
    }

    /// The same law as an RBM whose last visible unit is the label.
    pub fn joint_rbm(&self) -> Rbm {
        let (nv, nh) = (self.base.n_visible(), self.base.n_hidden());
        let mut w = self.base.weights().to_vec();
        w.extend_from_slice(&self.w_label);
        let mut b_vis = self.base.b_vis().to_vec();
        b_vis.push(self.b_label);
        Rbm::new(nv + 1, nh, w, b_vis, self.base.b_hid().to_vec()).expect("dimensions checked at construction")
    }

    /// The input model given `Y = y`: hidden biases shift by `y w`.
    pub fn conditional_rbm(&self, y: i8) -> Rbm {
        let b_hid: Vec<f64> = self
            .base
            .b_hid()
            .iter()
            .zip(&self.w_label)
            .map(|(b, w)| b + y as f64 * w)
            .collect();
        Rbm::new(
            self.base.n_visible(),
            self.base.n_hidden(),
            self.base.weights().to_vec(),
            self.base.b_vis().to_vec(),
            b_hid,
        )
        .expect("same shape as the base model")
    }

    /// Exact joint table over `(x, y)` with the label as the last coordinate.
    pub fn exact_joint_pmf(&self) -> Result<Pmf> {
        exact_visible_pmf(&self.joint_rbm())
    }

    /// `E[Y | X = x]` in closed form: `tanh(b3 + Σ_j atanh(tanh(w_j) tanh(b2_j + Σ_i W_ij x_i)))`.
    pub fn label_mean(&self, x: &[i8]) -> f64 {
        let mut full = x.to_vec();
        full.push(1);
        self.joint_rbm().conditional_mean_full(self.n_inputs(), &full)
    }

    /// Exact potentials of `X | Y = +1` and `X | Y = -1` (constant terms dropped,
    /// coefficients of magnitude ≤ `tol` removed).
    pub fn exact_conditional_potentials(&self, tol: f64) -> Result<(MrfPotential, MrfPotential)> {
        let pmf = self.exact_joint_pmf()?;
        Ok((
            conditional_potential(&pmf, 1, tol),
            conditional_potential(&pmf, -1, tol),
        ))
    }

    /// Exact `(X, Y)` population as weighted rows.
    pub fn exact_population(&self) -> Result<WeightedSpins> {
        Ok(WeightedSpins::from_labeled_pmf(&self.exact_joint_pmf()?, self.n_inputs()))
    }

    pub fn two_hop_neighborhoods(&self) -> Vec<Vec<usize>> {
        self.base.two_hop_neighborhoods()
    }

    /// `(λ, β)` of the sparsity and balance assumptions: the smallest `λ` bounding both
    /// `Σ_j W_ij + |b1_i|` and, for the better label, `Σ_i W_ij + |b2_j + y w_j|`;
    /// `β = min_y P(Y = y)`.
    pub fn assumption_levels(&self) -> Result<(f64, f64)> {
        let (nv, nh) = (self.base.n_visible(), self.base.n_hidden());
        let visible = (0..nv)
            .map(|i| (0..nh).map(|j| self.base.weight(i, j)).sum::<f64>() + self.base.b_vis()[i].abs())
            .fold(0.0, f64::max);
        let hidden = |y: f64| {
            (0..nh)
                .map(|j| {
                    (0..nv).map(|i| self.base.weight(i, j)).sum::<f64>()
                        + (self.base.b_hid()[j] + y * self.w_label[j]).abs()
                })
                .fold(0.0, f64::max)
        };
        let lambda = visible.max(hidden(1.0).min(hidden(-1.0)));
        let pmf = self.exact_joint_pmf()?;
        let p_plus = pmf.moment(&[nv]) * 0.5 + 0.5;
        Ok((lambda, p_plus.min(1.0 - p_plus)))
    }

    /// Minimum nonzero input coupling and whether every coupling is nonnegative.
    pub fn min_coupling(&self) -> (f64, bool) {
        let w = self.base.weights();
        let min = w.iter().copied().filter(|v| *v != 0.0).fold(f64::INFINITY, f64::min);
        (min, w.iter().all(|v| *v >= 0.0))
    }

    /// Draws labeled samples by block Gibbs on the joint model.
    pub fn sample(&self, schedule: crate::rbm::GibbsSchedule, seed: u64) -> Result<SpinDataset> {
        let joint = crate::rbm::gibbs_sample_chains(&self.joint_rbm(), schedule, seed);
        let n = self.n_inputs();
        let mut rows = Vec::with_capacity(joint.m() * n);
        let mut labels = Vec::with_capacity(joint.m());
        for r in joint.rows() {
            rows.extend_from_slice(&r[..n]);
            labels.push(r[n]);
        }
        SpinDataset::new(n, rows, Some(labels))
    }
}

/// Fourier expansion of `log P(x | Y = y)` from a joint table whose last coordinate is the label.
fn conditional_potential(pmf: &Pmf, y: i8, tol: f64) -> MrfPotential {
    let n = pmf.n() - 1;
    let offset = if y > 0 { 1usize << n } else { 0 };
    let logs: Vec<f64> = (0..1usize << n).map(|s| pmf.probs()[s | offset].ln()).collect();
    let mut out = SparsePolynomial::new(n);
    for (mask, c) in fourier_coefficients(&logs).into_iter().enumerate() {
        if mask != 0 && c.abs() > tol {
            out.set(Subset::new(mask_members(mask).collect()), c);
        }
    }
    out
}

/// How the greedy loop decides to stop adding nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    /// Stop when the best averaged covariance drops below `τ`.
    #[default]
    Threshold,
    /// Also stop when the label-averaged conditional variance of `X_u` shrinks by less than 1%.
    VarianceShrink,
}

/// Settings of the supervised pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    /// Covariance threshold; `None` uses `β α² e^{−12λ} / 2`.
    pub tau: Option<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub beta_bal: f64,
    /// Bound on the fitted bias magnitude.
    pub bias_bound: f64,
    /// Cap on greedy additions; `None` uses `min(8/τ², 30)`.
    pub t_star: Option<usize>,
    /// Bins with less total weight contribute zero covariance.
    pub min_bin: f64,
    pub stopping: StoppingRule,
    /// Minimum total weight (the sample count for sampled data) of each label class.
    pub min_class_count: usize,
    /// ℓ1 budget of the extended fit; `None` uses `2 Σ_i s_i + B` with `s_i` the feature scales.
    pub extended_radius: Option<f64>,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            tau: None,
            alpha: 0.3,
            lambda: 1.5,
            beta_bal: 0.3,
            bias_bound: 20.0,
            t_star: None,
            min_bin: 25.0,
            stopping: StoppingRule::Threshold,
            min_class_count: 0,
            extended_radius: None,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("alpha", self.alpha), ("lambda", self.lambda), ("bias_bound", self.bias_bound)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta_bal > 0.0 && self.beta_bal <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta_bal must lie in (0, 1], got {}",
                self.beta_bal
            )));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("tau must be positive, got {t}")));
            }
        }
        if !(self.min_bin >= 0.0) {
            return Err(Error::InvalidParameter("min_bin must be nonnegative".into()));
        }
        Ok(())
    }

    /// `β α² e^{−12λ} / 2`.
    pub fn theoretical_tau(&self) -> f64 {
        0.5 * self.beta_bal * self.alpha * self.alpha * (-12.0 * self.lambda).exp()
    }

    pub fn effective_tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| self.theoretical_tau())
    }

    /// `min(8/τ², 30)` unless overridden; never above the hard cap.
    pub fn effective_t_star(&self) -> usize {
        let tau = self.effective_tau();
        let theory = (8.0 / (tau * tau)).min(T_STAR_HARD_CAP as f64) as usize;
        self.t_star.unwrap_or(theory).min(T_STAR_HARD_CAP)
    }
}

/// Rows grouped by the values of `(X_S, Y)`.
struct Bins {
    of_row: Vec<usize>,
    weight: Vec<f64>,
}

fn bin_rows<S: SpinSource + ?Sized>(src: &S, set: &[usize]) -> Result<Bins> {
    check_cap(set.len() + 1, 63)?;
    let mut ids: HashMap<u64, usize> = HashMap::new();
    let mut of_row = Vec::with_capacity(src.n_rows());
    let mut weight = Vec::new();
    for k in 0..src.n_rows() {
        let row = src.row(k);
        let y = src.label(k).ok_or(Error::MissingLabels)?;
        let mut key = u64::from(y > 0);
        for (b, &c) in set.iter().enumerate() {
            if row[c] > 0 {
                key |= 1 << (b + 1);
            }
        }
        let next = ids.len();
        let id = *ids.entry(key).or_insert(next);
        if id == weight.len() {
            weight.push(0.0);
        }
        weight[id] += src.weight(k);
        of_row.push(id);
    }
    Ok(Bins { of_row, weight })
}

/// Label- and set-averaged conditional covariance with bin diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovAvg {
    pub value: f64,
    /// Nonempty bins that fell below `min_bin` and were skipped.
    pub flagged_bins: usize,
    pub bins: usize,
}

fn cov_in_bins<S: SpinSource + ?Sized>(src: &S, bins: &Bins, u: usize, v: usize, min_bin: f64) -> CovAvg {
    let nb = bins.weight.len();
    let (mut su, mut sv, mut suv) = (vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]);
    for (k, &b) in bins.of_row.iter().enumerate() {
        let row = src.row(k);
        let w = src.weight(k);
        let (xu, xv) = (row[u] as f64, row[v] as f64);
        su[b] += w * xu;
        sv[b] += w * xv;
        suv[b] += w * xu * xv;
    }
    let total: f64 = bins.weight.iter().sum();
    let mut value = 0.0;
    let mut flagged = 0;
    for b in 0..nb {
        let w = bins.weight[b];
        if w <= 0.0 {
            continue;
        }
        if w < min_bin {
            flagged += 1;
            continue;
        }
        let cov = suv[b] / w - (su[b] / w) * (sv[b] / w);
        value += w / total * cov;
    }
    CovAvg {
        value,
        flagged_bins: flagged,
        bins: nb,
    }
}

/// `E_{x_S, y}[Var(X_u | X_S = x_S, Y = y)]` over the bins.
fn variance_in_bins<S: SpinSource + ?Sized>(src: &S, bins: &Bins, u: usize) -> f64 {
    let nb = bins.weight.len();
    let mut su = vec![0.0; nb];
    for (k, &b) in bins.of_row.iter().enumerate() {
        su[b] += src.weight(k) * src.row(k)[u] as f64;
    }
    let total: f64 = bins.weight.iter().sum();
    (0..nb)
        .filter(|&b| bins.weight[b] > 0.0)
        .map(|b| {
            let m = su[b] / bins.weight[b];
            bins.weight[b] / total * (1.0 - m * m)
        })
        .sum()
}

fn check_pair<S: SpinSource + ?Sized>(src: &S, u: usize, v: usize, set: &[usize]) -> Result<()> {
    let n = src.n_spins();
    for &k in set.iter().chain([u, v].iter()) {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
    }
    if u == v || set.contains(&u) || set.contains(&v) {
        return Err(Error::InvalidParameter("u, v must be distinct and outside the conditioning set".into()));
    }
    if !src.has_labels() {
        return Err(Error::MissingLabels);
    }
    if src.total_weight() <= 0.0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// `Cov^Avg(u, v | S, Y) = Σ_{x_S, y} P̂(x_S, y) Cov̂(X_u, X_v | X_S = x_S, Y = y)`.
pub fn avg_conditional_covariance<S: SpinSource + ?Sized>(
    data: &S,
    u: usize,
    v: usize,
    set: &[usize],
    min_bin: f64,
) -> Result<CovAvg> {
    check_pair(data, u, v, set)?;
    let bins = bin_rows(data, set)?;
    Ok(cov_in_bins(data, &bins, u, v, min_bin))
}

/// Greedy neighborhood of one node with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbhdResult {
    pub node: usize,
    pub set: Vec<usize>,
    /// Nodes added by the greedy phase, in order, with their scores.
    pub added: Vec<(usize, f64)>,
    /// Nodes removed by pruning.
    pub pruned: Vec<usize>,
    pub cap_hit: bool,
    pub max_flagged_bins: usize,
}

/// Greedy covariance maximization followed by one pruning pass.
pub fn learn_supervised_nbhd<S: SpinSource + ?Sized>(data: &S, u: usize, cfg: &SupervisedConfig) -> Result<NbhdResult> {
    cfg.validate()?;
    let n = data.n_spins();
    if u >= n {
        return Err(Error::IndexOutOfRange { index: u, len: n });
    }
    if !data.has_labels() {
        return Err(Error::MissingLabels);
    }
    if data.total_weight() <= 0.0 {
        return Err(Error::EmptyDataset);
    }
    let tau = cfg.effective_tau();
    let t_star = cfg.effective_t_star();
    let mut set: Vec<usize> = Vec::new();
    let mut added = Vec::new();
    let mut cap_hit = false;
    let mut max_flagged = 0;
    let mut variance = None;
    loop {
        let bins = bin_rows(data, &set)?;
        if cfg.stopping == StoppingRule::VarianceShrink {
            let var = variance_in_bins(data, &bins, u);
            if let Some(prev) = variance {
                if prev - var < 0.01 * prev {
                    break;
                }
            }
            variance = Some(var);
        }
        let mut best: Option<(usize, f64)> = None;
        for v in (0..n).filter(|&v| v != u && !set.contains(&v)) {
            let c = cov_in_bins(data, &bins, u, v, cfg.min_bin);
            max_flagged = max_flagged.max(c.flagged_bins);
            if best.is_none_or(|(_, b)| c.value > b) {
                best = Some((v, c.value));
            }
        }
        let Some((v, score)) = best else { break };
        if score < tau {
            break;
        }
        if set.len() >= t_star {
            cap_hit = true;
            log::warn!("node {u}: greedy neighborhood reached the cap T* = {t_star}");
            break;
        }
        set.push(v);
        set.sort_unstable();
        added.push((v, score));
    }
    let mut pruned = Vec::new();
    let kept: Vec<usize> = set
        .iter()
        .copied()
        .filter(|&v| {
            let rest: Vec<usize> = set.iter().copied().filter(|&k| k != v).collect();
            let bins = bin_rows(data, &rest).expect("conditioning set already binned");
            let c = cov_in_bins(data, &bins, u, v, cfg.min_bin);
            max_flagged = max_flagged.max(c.flagged_bins);
            if c.value < tau {
                pruned.push(v);
                false
            } else {
                true
            }
        })
        .collect();
    Ok(NbhdResult {
        node: u,
        set: kept,
        added,
        pruned,
        cap_hit,
        max_flagged_bins: max_flagged,
    })
}

/// Runs [`learn_supervised_nbhd`] for every node in parallel.
pub fn learn_all_nbhds<S: SpinSource + Sync + ?Sized>(data: &S, cfg: &SupervisedConfig) -> Result<Vec<NbhdResult>> {
    (0..data.n_spins())
        .into_par_iter()
        .map(|u| learn_supervised_nbhd(data, u, cfg))
        .collect()
}

/// Splits by label and learns one MRF per class on the given neighborhoods.
pub fn fit_conditional_mrfs<S: SpinSource + ?Sized>(
    data: &S,
    nbhds: &NeighborhoodMap,
    clip_plus: ClipSpec,
    clip_minus: ClipSpec,
    min_class_count: usize,
) -> Result<(MrfPotential, MrfPotential)> {
    let plus = filter_by_label(data, 1)?;
    let minus = filter_by_label(data, -1)?;
    for (label, part) in [(1i8, &plus), (-1, &minus)] {
        let mass = part.total_weight();
        if mass <= 0.0 || mass < min_class_count as f64 {
            return Err(Error::LabelClassTooSmall {
                label,
                count: mass.floor() as usize,
                required: min_class_count.max(1),
            });
        }
    }
    let (f_plus, f_minus) = rayon::join(
        || distribution_from_structure(&plus, nbhds, clip_plus),
        || distribution_from_structure(&minus, nbhds, clip_minus),
    );
    Ok((f_plus?, f_minus?))
}

/// A trained predictor with the neighborhoods it was built on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub predictor: LabelPredictor,
    pub neighborhoods: Vec<NbhdResult>,
}

/// Full pipeline on labeled samples: greedy neighborhoods, one MRF per label, bias fit.
pub fn train_label_predictor(
    data: &SpinDataset,
    cfg: &SupervisedConfig,
    mode: BiasMode,
    clip: ClipSpec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !data.has_labels() {
        return Err(Error::MissingLabels);
    }
    let pop = data.compress();
    let neighborhoods = learn_all_nbhds(&pop, cfg)?;
    let map = NeighborhoodMap::from_neighborhoods(neighborhoods.iter().map(|r| r.set.clone()).collect());
    let (f_plus, f_minus) = fit_conditional_mrfs(&pop, &map, clip, clip, cfg.min_class_count)?;
    let mut predictor = fit_bias(&pop, &f_plus, &f_minus, mode, cfg)?;
    predictor.provenance.insert("samples".into(), data.m().to_string());
    let labels = data.labels().expect("labels checked");
    let label_mean = labels.iter().map(|&y| y as f64).sum::<f64>() / labels.len() as f64;
    predictor
        .provenance
        .insert("train_label_mean".into(), format!("{label_mean:.17e}"));
    predictor
        .provenance
        .insert("config".into(), serde_json::to_string(cfg).expect("config serializes"));
    Ok(TrainOutcome {
        predictor,
        neighborhoods,
    })
}

/// Whether the bias alone or also per-node multipliers are fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BiasMode {
    #[default]
    Scalar,
    Extended,
}

/// `E[Y | X = x] ≈ tanh(h(x))` with `h = Σ_S (f⁺_S − f⁻_S)/2 · x_S + b`, or in
/// extended form `h = Σ_i c_i z_i(x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelPredictor {
    pub f_plus: MrfPotential,
    pub f_minus: MrfPotential,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended_coeffs: Option<Vec<f64>>,
    /// Free-form provenance (config echo, seed, sample count).
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl LabelPredictor {
    pub fn n(&self) -> usize {
        self.f_plus.n()
    }

    /// `(f⁺ − f⁻)/2`.
    pub fn half_difference(&self) -> SparsePolynomial {
        self.f_plus.difference(&self.f_minus).scaled(0.5)
    }

    /// `h − b` as one polynomial. In extended mode every term of `Δ` is weighted by
    /// the mean multiplier of its members.
    pub fn logit_polynomial(&self) -> SparsePolynomial {
        let delta = self.half_difference();
        let Some(c) = &self.extended_coeffs else { return delta };
        let mut out = SparsePolynomial::new(delta.n());
        for (s, v) in delta.iter() {
            let mean = s.indices().iter().map(|&i| c[i]).sum::<f64>() / s.len().max(1) as f64;
            out.set(s.clone(), v * mean);
        }
        out
    }

    /// Fast evaluator for many inputs.
    pub fn compile(&self) -> CompiledPredictor {
        CompiledPredictor {
            poly: CompiledPolynomial::new(&self.logit_polynomial()),
            bias: self.bias,
        }
    }

    /// The logit `h(x)`.
    pub fn logit(&self, x: &[i8]) -> f64 {
        match &self.extended_coeffs {
            None => 0.5 * (self.f_plus.eval(x) - self.f_minus.eval(x)) + self.bias,
            Some(c) => {
                let mut z = vec![0.0; self.n()];
                accumulate_node_features(&self.f_plus, x, 0.5, &mut z);
                accumulate_node_features(&self.f_minus, x, -0.5, &mut z);
                z.iter().zip(c).map(|(z, ci)| z * ci).sum::<f64>() + self.bias
            }
        }
    }
}

/// A [`LabelPredictor`] flattened for batch evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPredictor {
    poly: CompiledPolynomial,
    bias: f64,
}

impl CompiledPredictor {
    pub fn logit(&self, x: &[i8]) -> f64 {
        self.poly.eval(x) + self.bias
    }

    pub fn predict(&self, x: &[i8]) -> f64 {
        self.logit(x).tanh()
    }
}

/// `z_i(x) = Σ_{S∋i} Δ_S x_S / |S|`, an even split of every term of `Δ` among its
/// members so that `Σ_i z_i = Δ`.
pub fn node_features(delta: &SparsePolynomial, x: &[i8]) -> Vec<f64> {
    let mut z = vec![0.0; delta.n()];
    accumulate_node_features(delta, x, 1.0, &mut z);
    z
}

fn accumulate_node_features(poly: &SparsePolynomial, x: &[i8], scale: f64, z: &mut [f64]) {
    for (s, c) in poly.iter() {
        let share = scale * c * s.character(x) as f64 / s.len().max(1) as f64;
        for &i in s.indices() {
            z[i] += share;
        }
    }
}

/// `Σ_{S∋i} |Δ_S| / |S|`, a bound on `|z_i|`.
fn node_feature_scales(delta: &SparsePolynomial) -> Vec<f64> {
    let mut s = vec![0.0; delta.n()];
    for (set, c) in delta.iter() {
        for &i in set.indices() {
            s[i] += c.abs() / set.len() as f64;
        }
    }
    s
}

/// Minimizes `Σ_k w_k ℓ(z_k + b, y_k)` over `|b| ≤ bound`: safeguarded Newton on the
/// monotone derivative until `|grad| ≤ 1e-10`.
fn fit_scalar_bias(z: &[f64], y: &[i8], w: &[f64], bound: f64) -> f64 {
    let total: f64 = w.iter().sum();
    let grad = |b: f64| -> f64 {
        z.iter()
            .zip(y)
            .zip(w)
            .map(|((zk, &yk), wk)| wk * logistic_grad(zk + b, yk))
            .sum::<f64>()
            / total
    };
    let hess = |b: f64| -> f64 {
        z.iter()
            .zip(w)
            .map(|(zk, wk)| {
                let c = (zk + b).cosh();
                wk / (c * c)
            })
            .sum::<f64>()
            / total
    };
    let (mut lo, mut hi) = (-bound, bound);
    if grad(lo) >= 0.0 {
        return lo;
    }
    if grad(hi) <= 0.0 {
        return hi;
    }
    let mut b = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let g = grad(b);
        if g.abs() <= 1e-10 {
            break;
        }
        if g > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let h = hess(b);
        let newton = b - g / h;
        b = if h > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    b
}

/// Fits the bias (and in extended mode the per-node multipliers) of the Bayes-rule predictor.
pub fn fit_bias<S: SpinSource + Sync + ?Sized>(
    data: &S,
    f_plus: &MrfPotential,
    f_minus: &MrfPotential,
    mode: BiasMode,
    cfg: &SupervisedConfig,
) -> Result<LabelPredictor> {
    cfg.validate()?;
    if !data.has_labels() {
        return Err(Error::MissingLabels);
    }
    let rows = data.n_rows();
    if rows == 0 || data.total_weight() <= 0.0 {
        return Err(Error::EmptyDataset);
    }
    let mut pred = LabelPredictor {
        f_plus: f_plus.clone(),
        f_minus: f_minus.clone(),
        bias: 0.0,
        extended_coeffs: None,
        provenance: BTreeMap::new(),
    };
    let labels: Vec<i8> = (0..rows).map(|k| data.label(k).expect("labels checked")).collect();
    let weights: Vec<f64> = (0..rows).map(|k| data.weight(k)).collect();
    let plus: f64 = labels.iter().zip(&weights).filter(|(y, _)| **y > 0).map(|(_, w)| w).sum();
    if plus <= 0.0 || plus >= data.total_weight() {
        let m = data.total_weight().round().max(2.0);
        let c = (1.0 - 1.0 / m).atanh().min(cfg.bias_bound);
        pred.f_plus = SparsePolynomial::new(f_plus.n());
        pred.f_minus = SparsePolynomial::new(f_plus.n());
        pred.bias = if plus > 0.0 { c } else { -c };
        return Ok(pred);
    }
    let delta = pred.half_difference();
    match mode {
        BiasMode::Scalar => {
            let compiled = CompiledPolynomial::new(&delta);
            let z: Vec<f64> = (0..rows).into_par_iter().map(|k| compiled.eval(data.row(k))).collect();
            pred.bias = fit_scalar_bias(&z, &labels, &weights, cfg.bias_bound);
        }
        BiasMode::Extended => {
            let n = delta.n();
            let scales = node_feature_scales(&delta);
            let p = n + 1;
            let mut features = Vec::with_capacity(rows * p);
            let compiled = CompiledPolynomial::new(&delta);
            let members: Vec<(Vec<usize>, f64)> = delta
                .iter()
                .map(|(s, _)| (s.indices().to_vec(), 1.0 / s.len().max(1) as f64))
                .collect();
            for k in 0..rows {
                let mut z = vec![0.0; n];
                let packed = compiled.pack(data.row(k));
                for ((chi, c), (idx, inv)) in compiled.characters(&packed).zip(compiled.coeffs()).zip(&members) {
                    let share = chi * c * inv;
                    for &i in idx {
                        z[i] += share;
                    }
                }
                features.extend(z.iter().zip(&scales).map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 }));
                features.push(1.0);
            }
            let design = weighted_design(p, features, &labels, &weights)?;
            let radius = cfg
                .extended_radius
                .unwrap_or_else(|| 2.0 * scales.iter().sum::<f64>() + cfg.bias_bound);
            let reg = RegressionConfig {
                degree: 1,
                radius,
                max_iters: 5000,
                tol: 1e-8,
                seed: 0,
            };
            let fit = fit_l1_logistic(&design, &reg)?;
            let coeffs: Vec<f64> = (0..n)
                .map(|i| if scales[i] > 0.0 { fit.coeffs[i] / scales[i] } else { 0.0 })
                .collect();
            pred.bias = fit.coeffs[n];
            pred.extended_coeffs = Some(coeffs);
        }
    }
    Ok(pred)
}

/// Design whose rows carry arbitrary nonnegative weights.
fn weighted_design(p: usize, features: Vec<f64>, labels: &[i8], weights: &[f64]) -> Result<Design> {
    let total: f64 = weights.iter().sum();
    let m = labels.len();
    // repeat rows proportionally through the label-weight representation
    let mut pos = Vec::with_capacity(m);
    let mut neg = Vec::with_capacity(m);
    for (y, w) in labels.iter().zip(weights) {
        pos.push(if *y > 0 { w / total } else { 0.0 });
        neg.push(if *y < 0 { w / total } else { 0.0 });
    }
    Design::from_weighted_rows(p, features, pos, neg, total.round() as usize)
}

/// `tanh(h(x))`.
pub fn predict_label(x: &[i8], pred: &LabelPredictor) -> f64 {
    pred.logit(x).tanh()
}

/// `E[ℓ(h(X), Y)]` over a weighted labeled population.
pub fn population_logistic_loss<S: SpinSource + Sync + ?Sized>(data: &S, pred: &LabelPredictor) -> Result<f64> {
    if !data.has_labels() {
        return Err(Error::MissingLabels);
    }
    let total = data.total_weight();
    if total <= 0.0 {
        return Err(Error::EmptyDataset);
    }
    let compiled = pred.compile();
    let logits: Vec<f64> = (0..data.n_rows())
        .into_par_iter()
        .map(|k| compiled.logit(data.row(k)))
        .collect();
    Ok(logits
        .iter()
        .enumerate()
        .map(|(k, &h)| data.weight(k) * logistic_loss(h, data.label(k).expect("checked")))
        .sum::<f64>()
        / total)
}

/// `E[ℓ(atanh E[Y|X], Y)]` of the true model, the smallest achievable population loss.
pub fn bayes_label_loss(model: &SupervisedRbm) -> Result<f64> {
    let n = model.n_inputs();
    check_cap(n + 1 + model.base.n_hidden(), ENUMERATION_CAP)?;
    let pmf = model.exact_joint_pmf()?;
    let mut x = vec![0i8; n];
    let mut total = 0.0;
    for s in 0..1usize << n {
        decode_into(s, &mut x);
        let mu = model.label_mean(&x);
        for (y, offset) in [(1i8, 1usize << n), (-1, 0)] {
            let p = pmf.probs()[s | offset];
            if p > 0.0 {
                total -= p * (0.5 * (1.0 + y as f64 * mu)).ln();
            }
        }
    }
    Ok(total)
}

/// Clip level shared by the two conditional models; the field bound ignores hidden biases,
/// so it does not depend on the label.
pub fn conditional_clip(model: &SupervisedRbm) -> Result<ClipSpec> {
    ClipSpec::for_model(&model.base)
}

/// Clip level from a user-supplied `λ1`.
pub fn clip_from_lambda1(lambda1: f64) -> Result<ClipSpec> {
    ClipSpec::from_bounds(NormBounds {
        lambda1,
        lambda2: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star_model() -> SupervisedRbm {
        // hidden 0 joins inputs 0,1,2; hidden 1 joins 3,4; input 5 is isolated
        let (nv, nh) = (6, 2);
        let mut w = vec![0.0; nv * nh];
        for i in 0..3 {
            w[i * nh] = 0.4;
        }
        for i in 3..5 {
            w[i * nh + 1] = 0.5;
        }
        let base = Rbm::new(nv, nh, w, vec![0.1, -0.1, 0.0, 0.05, 0.0, 0.2], vec![0.0, 0.1]).unwrap();
        SupervisedRbm::new(base, vec![0.8, -0.6], 0.1).unwrap()
    }

    #[test]
    fn closed_form_label_mean_matches_enumeration() {
        let m = star_model();
        let pmf = m.exact_joint_pmf().unwrap();
        let means = pmf.conditional_means(m.n_inputs());
        let mut x = vec![0i8; 6];
        for s in 0..64 {
            decode_into(s, &mut x);
            assert!((m.label_mean(&x) - means[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_greedy_finds_star_neighborhoods() {
        let m = star_model();
        let pop = m.exact_population().unwrap();
        let cfg = SupervisedConfig {
            min_bin: 0.0,
            ..Default::default()
        };
        let truth = m.two_hop_neighborhoods();
        for u in 0..6 {
            let r = learn_supervised_nbhd(&pop, u, &cfg).unwrap();
            assert_eq!(r.set, truth[u], "node {u}: {r:?}");
        }
    }

    #[test]
    fn tau_above_every_covariance_gives_empty_sets() {
        let pop = star_model().exact_population().unwrap();
        let cfg = SupervisedConfig {
            tau: Some(2.0),
            min_bin: 0.0,
            ..Default::default()
        };
        assert!(learn_supervised_nbhd(&pop, 0, &cfg).unwrap().set.is_empty());
    }

    #[test]
    fn exact_potentials_and_bias_reproduce_label_mean() {
        let m = star_model();
        let pop = m.exact_population().unwrap();
        let (fp, fm) = m.exact_conditional_potentials(0.0).unwrap();
        let cfg = SupervisedConfig::default();
        let pred = fit_bias(&pop, &fp, &fm, BiasMode::Scalar, &cfg).unwrap();
        let mut x = vec![0i8; 6];
        for s in 0..64 {
            decode_into(s, &mut x);
            assert!((predict_label(&x, &pred) - m.label_mean(&x)).abs() < 1e-9);
        }
        let loss = population_logistic_loss(&pop, &pred).unwrap();
        assert!((loss - bayes_label_loss(&m).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn uninformative_potentials_fit_label_mean() {
        let data = SpinDataset::new(1, vec![1, 1, -1, 1], Some(vec![1, 1, -1, 1])).unwrap();
        let zero = SparsePolynomial::new(1);
        let pred = fit_bias(&data, &zero, &zero, BiasMode::Scalar, &SupervisedConfig::default()).unwrap();
        assert!((pred.bias - 0.5f64.atanh()).abs() < 1e-9);
    }

    #[test]
    fn constant_labels_give_clipped_bias() {
        let data = SpinDataset::new(1, vec![1, -1], Some(vec![-1, -1])).unwrap();
        let zero = SparsePolynomial::new(1);
        let pred = fit_bias(&data, &zero, &zero, BiasMode::Scalar, &SupervisedConfig::default()).unwrap();
        assert!((pred.bias + 0.5f64.atanh()).abs() < 1e-12);
    }

    #[test]
    fn node_features_sum_to_logit() {
        let mut d = SparsePolynomial::new(3);
        d.set(Subset::new(vec![0, 1]), 0.6);
        d.set(Subset::singleton(2), -0.2);
        let x = [1i8, -1, 1];
        let z = node_features(&d, &x);
        let pred = LabelPredictor {
            f_plus: d.scaled(2.0),
            f_minus: SparsePolynomial::new(3),
            bias: 0.1,
            extended_coeffs: Some(vec![1.0, 2.0, -1.0]),
            provenance: BTreeMap::new(),
        };
        assert!((pred.compile().logit(&x) - pred.logit(&x)).abs() < 1e-15);
        assert!((z.iter().sum::<f64>() - d.eval(&x)).abs() < 1e-15);
        assert_eq!(z, vec![-0.3, -0.3, -0.2]);
    }

    #[test]
    fn tau_and_cap_defaults() {
        let cfg = SupervisedConfig::default();
        let tau = 0.5 * 0.3 * 0.09 * (-18.0f64).exp();
        assert!((cfg.effective_tau() - tau).abs() < 1e-22);
        assert_eq!(cfg.effective_t_star(), 30);
        let big = SupervisedConfig {
            tau: Some(1.0),
            ..Default::default()
        };
        assert_eq!(big.effective_t_star(), 8);
    }
}
