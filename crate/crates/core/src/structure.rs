//! Two-hop neighborhood recovery by comparing held-out regression losses with and
//! without a candidate neighbor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::Pmf;
use crate::logistic::{bayes_loss, fit_network_predictor, samples_for_excess, NetworkPredictor, RegressionConfig};
use crate::approx::basis_size;
use crate::spins::{SpinDataset, WeightedSpins};

/// Settings of the loss-drop test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    /// Nondegeneracy level: true neighbors raise the loss by at least this much.
    pub eta: f64,
    pub regression: RegressionConfig,
    /// Overall failure probability, split evenly over ordered pairs.
    pub delta: f64,
    pub holdout_fraction: f64,
    /// Fail instead of warning when the sample-size bound is not met.
    pub strict_samples: bool,
    pub seed: u64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            eta: 0.02,
            regression: RegressionConfig::default(),
            delta: 0.05,
            holdout_fraction: 0.2,
            strict_samples: false,
            seed: 0,
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        self.regression.validate()
    }

    /// Loss increase that declares a neighbor.
    pub fn threshold(&self) -> f64 {
        0.75 * self.eta
    }

    /// Drops in `[η/4 + 2ε, η − 2ε]` with `ε = η/8` are reported as borderline.
    pub fn gray_zone(&self) -> (f64, f64) {
        let eps = self.eta / 8.0;
        (self.eta / 4.0 + 2.0 * eps, self.eta - 2.0 * eps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Neighbor,
    NonNeighbor,
}

/// One direction of a pair test: target `i`, candidate `j` removed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedDrop {
    pub i: usize,
    pub j: usize,
    pub loss_full: f64,
    pub loss_excl: f64,
    pub drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub i: usize,
    pub j: usize,
    pub forward: Option<DirectedDrop>,
    pub backward: Option<DirectedDrop>,
    pub decision: Decision,
    pub gray_zone: bool,
    /// Set when either spin never varies in the data.
    pub constant_column: bool,
}

impl PairTest {
    pub fn max_drop(&self) -> f64 {
        [self.forward, self.backward]
            .iter()
            .flatten()
            .map(|d| d.drop)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Whether the generalization bound certifies the test at this sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCheck {
    pub available: usize,
    pub required: f64,
    pub adequate: bool,
}

/// Recovered neighborhoods with per-pair diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodMap {
    pub n: usize,
    pub eta: f64,
    pub neighborhoods: Vec<Vec<usize>>,
    pub pairs: Vec<PairTest>,
    pub sample_check: SampleCheck,
}

impl NeighborhoodMap {
    /// Map with no pair diagnostics, e.g. a known ground truth.
    pub fn from_neighborhoods(neighborhoods: Vec<Vec<usize>>) -> Self {
        let n = neighborhoods.len();
        Self {
            n,
            eta: 0.0,
            neighborhoods: neighborhoods
                .into_iter()
                .map(|mut v| {
                    v.sort_unstable();
                    v.dedup();
                    v
                })
                .collect(),
            pairs: Vec::new(),
            sample_check: SampleCheck {
                available: 0,
                required: 0.0,
                adequate: true,
            },
        }
    }

    pub fn neighborhood(&self, i: usize) -> Result<&[usize]> {
        self.neighborhoods
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::MissingNeighborhood(i))
    }

    /// Undirected edges `(i, j)`, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighborhoods.iter().enumerate() {
            for &j in nb {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `i,j,loss_full,loss_excl,drop,decision`, one row per tested direction.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,loss_full,loss_excl,drop,decision")?;
        for pair in &self.pairs {
            let decision = match pair.decision {
                Decision::Neighbor => "neighbor",
                Decision::NonNeighbor => "non-neighbor",
            };
            for d in [pair.forward, pair.backward].iter().flatten() {
                writeln!(
                    w,
                    "{},{},{:.12e},{:.12e},{:.12e},{}",
                    d.i, d.j, d.loss_full, d.loss_excl, d.drop, decision
                )?;
            }
        }
        Ok(())
    }
}

/// Precision and recall of a recovered edge set against the truth.
pub fn edge_precision_recall(found: &NeighborhoodMap, truth: &NeighborhoodMap) -> (f64, f64) {
    let f = found.edges();
    let t = truth.edges();
    let hit = f.iter().filter(|e| t.contains(e)).count() as f64;
    let precision = if f.is_empty() { 1.0 } else { hit / f.len() as f64 };
    let recall = if t.is_empty() { 1.0 } else { hit / t.len() as f64 };
    (precision, recall)
}

fn decide(cfg: &StructureConfig, i: usize, j: usize, fwd: Option<DirectedDrop>, bwd: Option<DirectedDrop>, constant: bool) -> PairTest {
    let mut test = PairTest {
        i,
        j,
        forward: fwd,
        backward: bwd,
        decision: Decision::NonNeighbor,
        gray_zone: false,
        constant_column: constant,
    };
    if !constant {
        let drop = test.max_drop();
        let (lo, hi) = cfg.gray_zone();
        test.gray_zone = drop >= lo && drop <= hi;
        if drop >= cfg.threshold() {
            test.decision = Decision::Neighbor;
        }
    }
    test
}

fn sample_check(cfg: &StructureConfig, n: usize, available: usize) -> SampleCheck {
    let p = basis_size(n.saturating_sub(1), cfg.regression.degree);
    let pairs = (n * n.saturating_sub(1)).max(1) as f64;
    let required = samples_for_excess(cfg.regression.radius, p, cfg.delta / pairs, cfg.eta / 8.0);
    SampleCheck {
        available,
        required,
        adequate: available as f64 >= required,
    }
}

fn holdout_sources(data: &SpinDataset, cfg: &StructureConfig) -> (WeightedSpins, WeightedSpins) {
    let (train, hold) = data.split_holdout(cfg.holdout_fraction, cfg.seed);
    (train.compress(), hold.compress())
}

fn directed(
    train: &WeightedSpins,
    hold: &WeightedSpins,
    full: &NetworkPredictor,
    full_loss: f64,
    j: usize,
    cfg: &RegressionConfig,
) -> Result<DirectedDrop> {
    let i = full.target;
    let excl = fit_network_predictor(train, i, &[j], cfg)?;
    let loss_excl = excl.loss_on(hold)?;
    Ok(DirectedDrop {
        i,
        j,
        loss_full: full_loss,
        loss_excl,
        drop: loss_excl - full_loss,
    })
}

fn preflight(data: &SpinDataset, cfg: &StructureConfig) -> Result<SampleCheck> {
    cfg.validate()?;
    if data.m() == 0 {
        return Err(Error::EmptyDataset);
    }
    let train_m = data.m() - ((data.m() as f64 * cfg.holdout_fraction).round() as usize).min(data.m() - 1);
    let check = sample_check(cfg, data.n(), train_m);
    if !check.adequate {
        if cfg.strict_samples {
            return Err(Error::InsufficientSamples {
                available: check.available,
                required: check.required,
            });
        }
        log::warn!(
            "sample-size bound not met: {} training samples, {:.3e} required",
            check.available,
            check.required
        );
    }
    Ok(check)
}

/// Tests whether `j` is a two-hop neighbor of `i` by the held-out loss increase
/// from removing it, in both directions.
pub fn test_two_hop(data: &SpinDataset, i: usize, j: usize, cfg: &StructureConfig) -> Result<PairTest> {
    let n = data.n();
    for k in [i, j] {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
    }
    if i == j {
        return Err(Error::InvalidParameter("a pair test needs two distinct nodes".into()));
    }
    preflight(data, cfg)?;
    if data.is_constant_column(i) || data.is_constant_column(j) {
        return Ok(decide(cfg, i, j, None, None, true));
    }
    let (train, hold) = holdout_sources(data, cfg);
    let mut drops = Vec::with_capacity(2);
    for (a, b) in [(i, j), (j, i)] {
        let full = fit_network_predictor(&train, a, &[], &cfg.regression)?;
        let full_loss = full.loss_on(&hold)?;
        drops.push(directed(&train, &hold, &full, full_loss, b, &cfg.regression)?);
    }
    Ok(decide(cfg, i, j, Some(drops[0]), Some(drops[1]), false))
}

/// Runs the pair test on every pair, reusing each node's full regression.
pub fn recover_structure(data: &SpinDataset, cfg: &StructureConfig) -> Result<NeighborhoodMap> {
    let check = preflight(data, cfg)?;
    let n = data.n();
    let constant: Vec<bool> = (0..n).map(|i| data.is_constant_column(i)).collect();
    let (train, hold) = holdout_sources(data, cfg);

    let fulls: Vec<Option<(NetworkPredictor, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Option<(NetworkPredictor, f64)>> {
            if constant[i] {
                return Ok(None);
            }
            let full = fit_network_predictor(&train, i, &[], &cfg.regression)?;
            let loss = full.loss_on(&hold)?;
            Ok(Some((full, loss)))
        })
        .collect::<Result<_>>()?;

    let ordered: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .filter(|&(i, j)| !constant[i] && !constant[j])
        .collect();
    let drops: Vec<DirectedDrop> = ordered
        .par_iter()
        .map(|&(i, j)| {
            let (full, loss) = fulls[i].as_ref().expect("non-constant node has a fit");
            directed(&train, &hold, full, *loss, j, &cfg.regression)
        })
        .collect::<Result<_>>()?;
    let lookup = |i: usize, j: usize| -> Option<DirectedDrop> {
        ordered
            .binary_search(&(i, j))
            .ok()
            .map(|k| drops[k])
    };

    let mut neighborhoods = vec![Vec::new(); n];
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let test = decide(cfg, i, j, lookup(i, j), lookup(j, i), constant[i] || constant[j]);
            if test.decision == Decision::Neighbor {
                neighborhoods[i].push(j);
                neighborhoods[j].push(i);
            }
            pairs.push(test);
        }
    }
    neighborhoods.iter_mut().for_each(|v| v.sort_unstable());
    Ok(NeighborhoodMap {
        n,
        eta: cfg.eta,
        neighborhoods,
        pairs,
        sample_check: check,
    })
}

/// Conditional entropy of `X_i` given the coordinates outside `excluded ∪ {i}`.
pub fn conditional_entropy_excluding(pmf: &Pmf, i: usize, excluded: &[usize]) -> f64 {
    let keep: Vec<usize> = (0..pmf.n()).filter(|k| !excluded.contains(k)).collect();
    let marginal = pmf.marginal(&keep);
    let pos = keep.iter().position(|&k| k == i).expect("target is kept");
    bayes_loss(&marginal, pos)
}

/// Population loss drop `H(X_i | X_{~i,j}) − H(X_i | X_{~i})` of the Bayes predictors.
pub fn exact_loss_drop(pmf: &Pmf, i: usize, j: usize) -> f64 {
    conditional_entropy_excluding(pmf, i, &[j]) - conditional_entropy_excluding(pmf, i, &[])
}

/// `I(X_i; X_j | X_{~i,j})` computed from the joint table.
pub fn conditional_mutual_information(pmf: &Pmf, i: usize, j: usize) -> f64 {
    let (bi, bj) = (1usize << i, 1usize << j);
    let p = pmf.probs();
    let mut total = 0.0;
    for s in 0..p.len() {
        if s & (bi | bj) != 0 {
            continue;
        }
        let cell = [p[s], p[s | bi], p[s | bj], p[s | bi | bj]];
        let z: f64 = cell.iter().sum();
        if z <= 0.0 {
            continue;
        }
        // rows: x_i = -1, +1; columns: x_j = -1, +1
        let pi = [cell[0] + cell[2], cell[1] + cell[3]];
        let pj = [cell[0] + cell[1], cell[2] + cell[3]];
        for (k, &c) in cell.iter().enumerate() {
            if c > 0.0 {
                let a = pi[k & 1];
                let b = pj[k >> 1];
                total += c * (c * z / (a * b)).ln();
            }
        }
    }
    total
}
