//! Synthetic model generators, dataset I/O and experiment drivers.

mod experiment;
mod io;

pub use experiment::*;
pub use io::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{norm_bounds, Rbm};
use crate::supervised::SupervisedRbm;

/// Seed of trial `index` in a run seeded with `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Ising path through the visible units, one hidden unit per edge.
    Chain,
    /// Ising cycle, one hidden unit per edge.
    Cycle,
    /// Ising square lattice on `√n × √n` visible units.
    Grid,
    /// One hidden unit joined to every visible unit.
    Star,
    /// Each hidden unit joins a random subset of visible units.
    RandomBipartite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SignMode {
    #[default]
    Ferromagnetic,
    Mixed,
}

/// How the label attaches to the hidden layer of a supervised model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelCouplingSpec {
    /// `|w_j|` is drawn uniformly from `[min, max]` with a random sign.
    pub min: f64,
    pub max: f64,
    /// When set to `y0 = ±1`, hidden biases become `−y0 w_j` plus jitter so the model
    /// given `Y = y0` keeps small hidden fields.
    #[serde(default)]
    pub anchor: Option<i8>,
    #[serde(default)]
    pub bias: f64,
    /// Add to `bias` the shift that makes both labels equally likely (needs enumeration).
    #[serde(default)]
    pub balance: bool,
}

/// Recipe for a synthetic model; identical specs give bit-identical models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub topology: Topology,
    pub n_visible: usize,
    /// Required for `random-bipartite`; derived from the topology otherwise.
    #[serde(default)]
    pub n_hidden: Option<usize>,
    /// Ising coupling for chain/cycle/grid; upper end of `|W|` otherwise.
    pub weight_scale: f64,
    /// Lower end of `|W|` on present edges for star and random-bipartite models.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub sign_mode: SignMode,
    /// Visible units joined by each random hidden unit, inclusive range.
    #[serde(default = "default_hidden_degree")]
    pub hidden_degree: (usize, usize),
    /// Biases are drawn from `[−field_scale, field_scale]`.
    #[serde(default)]
    pub field_scale: f64,
    /// Shrink all parameters so that `λ1, λ2 ≤ 1`.
    #[serde(default)]
    pub dobrushin_scale: bool,
    #[serde(default)]
    pub label_coupling: Option<LabelCouplingSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.3
}

fn default_hidden_degree() -> (usize, usize) {
    (2, 3)
}

impl GeneratorSpec {
    pub fn ising(topology: Topology, n_visible: usize, coupling: f64) -> Self {
        Self {
            topology,
            n_visible,
            n_hidden: None,
            weight_scale: coupling,
            alpha: default_alpha(),
            sign_mode: SignMode::Ferromagnetic,
            hidden_degree: default_hidden_degree(),
            field_scale: 0.0,
            dobrushin_scale: false,
            label_coupling: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_visible < 2 {
            return bad(format!("n_visible must be at least 2, got {}", self.n_visible));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale >= 0.0) {
            return bad(format!("weight_scale must be nonnegative, got {}", self.weight_scale));
        }
        if !(self.field_scale.is_finite() && self.field_scale >= 0.0) {
            return bad(format!("field_scale must be nonnegative, got {}", self.field_scale));
        }
        match self.topology {
            Topology::Cycle if self.n_visible < 3 => return bad("a cycle needs at least 3 nodes".into()),
            Topology::Grid => {
                let side = grid_side(self.n_visible);
                if side * side != self.n_visible {
                    return bad(format!("grid needs a square node count, got {}", self.n_visible));
                }
            }
            Topology::RandomBipartite => {
                let (lo, hi) = self.hidden_degree;
                if self.n_hidden.is_none_or(|h| h == 0) {
                    return bad("random-bipartite needs n_hidden ≥ 1".into());
                }
                if lo < 1 || lo > hi || hi > self.n_visible {
                    return bad(format!("hidden_degree {lo}..={hi} is inconsistent with {} visible units", self.n_visible));
                }
                if !(self.alpha >= 0.0 && self.alpha <= self.weight_scale) {
                    return bad(format!("need 0 ≤ alpha ≤ weight_scale, got alpha = {}", self.alpha));
                }
            }
            Topology::Star => {
                if !(self.alpha >= 0.0 && self.alpha <= self.weight_scale) {
                    return bad(format!("need 0 ≤ alpha ≤ weight_scale, got alpha = {}", self.alpha));
                }
            }
            _ => {}
        }
        if let (Some(h), Topology::Star) = (self.n_hidden, self.topology) {
            if h != 1 {
                return bad(format!("a star has exactly one hidden unit, got n_hidden = {h}"));
            }
        }
        if let Some(lc) = &self.label_coupling {
            if !(lc.min >= 0.0 && lc.min <= lc.max && lc.max.is_finite() && lc.bias.is_finite()) {
                return bad("label_coupling needs 0 ≤ min ≤ max".into());
            }
            if lc.anchor.is_some_and(|a| a != 1 && a != -1) {
                return bad("label_coupling.anchor must be 1 or -1".into());
            }
        }
        Ok(())
    }
}

fn grid_side(n: usize) -> usize {
    (n as f64).sqrt().round() as usize
}

fn ising_edges(spec: &GeneratorSpec) -> Vec<(usize, usize)> {
    let n = spec.n_visible;
    match spec.topology {
        Topology::Chain => (0..n - 1).map(|i| (i, i + 1)).collect(),
        Topology::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        Topology::Grid => {
            let side = grid_side(n);
            let mut e = Vec::new();
            for r in 0..side {
                for c in 0..side {
                    let k = r * side + c;
                    if c + 1 < side {
                        e.push((k, k + 1));
                    }
                    if r + 1 < side {
                        e.push((k, k + side));
                    }
                }
            }
            e
        }
        _ => Vec::new(),
    }
}

/// A generated model, with a label when the spec asks for one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratedModel {
    Plain { model: Rbm },
    Supervised { model: SupervisedRbm },
}

impl GeneratedModel {
    /// The RBM over the inputs (without the label).
    pub fn base(&self) -> &Rbm {
        match self {
            GeneratedModel::Plain { model } => model,
            GeneratedModel::Supervised { model } => &model.base,
        }
    }

    pub fn supervised(&self) -> Option<&SupervisedRbm> {
        match self {
            GeneratedModel::Supervised { model } => Some(model),
            GeneratedModel::Plain { .. } => None,
        }
    }
}

fn signed<R: Rng>(rng: &mut R, magnitude: f64, mode: SignMode) -> f64 {
    match mode {
        SignMode::Ferromagnetic => magnitude,
        SignMode::Mixed => {
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn scaled(model: &Rbm, s: f64) -> Rbm {
    Rbm::new(
        model.n_visible(),
        model.n_hidden(),
        model.weights().iter().map(|w| w * s).collect(),
        model.b_vis().iter().map(|b| b * s).collect(),
        model.b_hid().iter().map(|b| b * s).collect(),
    )
    .expect("same shape")
}

/// Largest uniform shrink factor in `(0, 1]` with `max(λ1, λ2) ≤ 1`.
fn dobrushin_factor(model: &Rbm) -> f64 {
    let level = |s: f64| {
        let b = norm_bounds(&scaled(model, s));
        b.lambda1.max(b.lambda2)
    };
    if level(1.0) <= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if level(mid) <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Builds the model described by `spec`.
pub fn generate_model(spec: &GeneratorSpec) -> Result<GeneratedModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_visible;
    let fields: Vec<f64> = (0..n)
        .map(|_| uniform(&mut rng, -spec.field_scale, spec.field_scale))
        .collect();
    let mut base = match spec.topology {
        Topology::Chain | Topology::Cycle | Topology::Grid => {
            let edges: Vec<(usize, usize, f64)> = ising_edges(spec)
                .into_iter()
                .map(|(a, b)| (a, b, signed(&mut rng, spec.weight_scale, spec.sign_mode)))
                .collect();
            if let Some(h) = spec.n_hidden {
                if h != edges.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{:?} topology on {n} nodes has {} hidden units, spec says {h}",
                        spec.topology,
                        edges.len()
                    )));
                }
            }
            Rbm::from_ising(n, &edges, &fields)?
        }
        Topology::Star | Topology::RandomBipartite => {
            let nh = spec.n_hidden.unwrap_or(1);
            let mut w = vec![0.0; n * nh];
            for j in 0..nh {
                let members: Vec<usize> = if spec.topology == Topology::Star {
                    (0..n).collect()
                } else {
                    let (lo, hi) = spec.hidden_degree;
                    let k = rng.random_range(lo..=hi);
                    rand::seq::index::sample(&mut rng, n, k).into_vec()
                };
                for i in members {
                    let mag = uniform(&mut rng, spec.alpha, spec.weight_scale);
                    w[i * nh + j] = signed(&mut rng, mag, spec.sign_mode);
                }
            }
            let b_hid = (0..nh)
                .map(|_| uniform(&mut rng, -spec.field_scale, spec.field_scale))
                .collect();
            Rbm::new(n, nh, w, fields, b_hid)?
        }
    };
    if spec.dobrushin_scale {
        let s = dobrushin_factor(&base);
        if s < 1.0 {
            log::info!("dobrushin scaling: parameters shrunk by {s:.6}");
            base = scaled(&base, s);
        }
    }
    let Some(lc) = &spec.label_coupling else {
        return Ok(GeneratedModel::Plain { model: base });
    };
    let nh = base.n_hidden();
    let w_label: Vec<f64> = (0..nh)
        .map(|_| {
            let mag = uniform(&mut rng, lc.min, lc.max);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    if let Some(y0) = lc.anchor {
        let b_hid: Vec<f64> = base
            .b_hid()
            .iter()
            .zip(&w_label)
            .map(|(b, w)| b - y0 as f64 * w)
            .collect();
        base = Rbm::new(n, nh, base.weights().to_vec(), base.b_vis().to_vec(), b_hid)?;
    }
    let mut model = SupervisedRbm::new(base, w_label, lc.bias)?;
    if lc.balance {
        let pmf = model.exact_joint_pmf()?;
        let p_plus = 0.5 * (1.0 + pmf.moment(&[n]));
        model.b_label += 0.5 * ((1.0 - p_plus) / p_plus).ln();
    }
    Ok(GeneratedModel::Supervised { model })
}

/// Supervised model meeting the sparsity and balance levels `λ ≤ lambda_max`,
/// `P(Y = y) ≥ beta_min` and nonnegative couplings `≥ alpha`. Candidate seeds are
/// derived from `spec.seed` and tried in order.
pub fn generate_admissible_supervised(
    spec: &GeneratorSpec,
    lambda_max: f64,
    beta_min: f64,
    max_tries: usize,
) -> Result<SupervisedRbm> {
    if spec.label_coupling.is_none() {
        return Err(Error::InvalidParameter("spec has no label coupling".into()));
    }
    for t in 0..max_tries {
        let candidate = GeneratorSpec {
            seed: derive_seed(spec.seed, t as u64),
            ..spec.clone()
        };
        let GeneratedModel::Supervised { model } = generate_model(&candidate)? else {
            unreachable!("label coupling requested")
        };
        let (lambda, beta) = model.assumption_levels()?;
        let (min_w, ferro) = model.min_coupling();
        if lambda <= lambda_max && beta >= beta_min && ferro && min_w >= spec.alpha {
            return Ok(model);
        }
    }
    Err(Error::Infeasible(format!(
        "no admissible supervised model in {max_tries} draws"
    )))
}
