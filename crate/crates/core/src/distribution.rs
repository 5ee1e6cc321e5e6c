//! Distribution recovery: per-node conditional predictors are turned into a
//! sparse MRF potential through the Fourier expansion of `atanh` of the predictor.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{check_cap, fourier_coefficients, mask_members, spin_of, Pmf, ENUMERATION_CAP};
use crate::poly::{SparsePolynomial, Subset};
use crate::rbm::{chain_rng, draw_spin, NormBounds, Rbm};
use crate::spins::{SpinDataset, SpinSource};
use crate::structure::NeighborhoodMap;

/// Log-likelihood up to normalization; the empty-set coefficient is kept at zero.
pub type MrfPotential = SparsePolynomial;

/// Default largest neighborhood a conditional table is built for.
pub const TABLE_CAP: usize = 16;

/// Clipping level `r` of the empirical conditional means, `0 < r < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    r: f64,
}

impl ClipSpec {
    pub fn new(r: f64) -> Result<Self> {
        if r > 0.0 && r < 1.0 {
            Ok(Self { r })
        } else {
            Err(Error::InvalidParameter(format!("clip level must lie in (0, 1), got {r}")))
        }
    }

    /// `r = tanh(λ1)`.
    pub fn from_bounds(bounds: NormBounds) -> Result<Self> {
        Self::new(bounds.lambda1.tanh())
    }

    /// `r = tanh(field_bound)`: no conditional mean of the model exceeds it.
    pub fn for_model(model: &Rbm) -> Result<Self> {
        Self::new(crate::rbm::field_bound(model).tanh())
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn apply(&self, v: f64) -> f64 {
        v.clamp(-self.r, self.r)
    }
}

/// Predictor of one node as a table over its neighborhood.
///
/// Cell `s` corresponds to `x_{nbhd[b]} = +1` exactly when bit `b` of `s` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub target: usize,
    pub nbhd: Vec<usize>,
    pub values: Vec<f64>,
    /// Sample weight behind each cell.
    pub counts: Vec<f64>,
}

fn check_nbhd(n: usize, i: usize, nbhd: &[usize], cap: usize) -> Result<()> {
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    if let Some(&k) = nbhd.iter().find(|&&k| k >= n) {
        return Err(Error::IndexOutOfRange { index: k, len: n });
    }
    if nbhd.contains(&i) {
        return Err(Error::InvalidParameter(format!("node {i} cannot be in its own neighborhood")));
    }
    if nbhd.len() > cap {
        return Err(Error::NeighborhoodTooLarge {
            node: i,
            size: nbhd.len(),
            cap,
        });
    }
    Ok(())
}

fn cell_of(row: &[i8], nbhd: &[usize]) -> usize {
    nbhd.iter()
        .enumerate()
        .filter(|(_, &k)| row[k] > 0)
        .fold(0, |s, (b, _)| s | (1 << b))
}

/// Clipped empirical `E[X_i | X_nbhd]`; cells with no data are 0.
pub fn empirical_conditional_table<S: SpinSource + ?Sized>(
    data: &S,
    i: usize,
    nbhd: &[usize],
    clip: ClipSpec,
) -> Result<ConditionalTable> {
    check_nbhd(data.n_spins(), i, nbhd, TABLE_CAP)?;
    let cells = 1usize << nbhd.len();
    let mut sum = vec![0.0; cells];
    let mut counts = vec![0.0; cells];
    for k in 0..data.n_rows() {
        let row = data.row(k);
        let w = data.weight(k);
        let c = cell_of(row, nbhd);
        sum[c] += w * row[i] as f64;
        counts[c] += w;
    }
    let values = sum
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0.0 { clip.apply(s / c) } else { 0.0 })
        .collect();
    Ok(ConditionalTable {
        target: i,
        nbhd: nbhd.to_vec(),
        values,
        counts,
    })
}

/// Exact `E[X_i | X_nbhd]` from a joint table.
pub fn exact_conditional_table(pmf: &Pmf, i: usize, nbhd: &[usize]) -> Result<ConditionalTable> {
    check_nbhd(pmf.n(), i, nbhd, ENUMERATION_CAP)?;
    let mut coords = nbhd.to_vec();
    coords.push(i);
    let marginal = pmf.marginal(&coords);
    let top = 1usize << nbhd.len();
    let probs = marginal.probs();
    let values = (0..top)
        .map(|s| {
            let (minus, plus) = (probs[s], probs[s | top]);
            if plus + minus > 0.0 {
                (plus - minus) / (plus + minus)
            } else {
                0.0
            }
        })
        .collect();
    let counts = (0..top).map(|s| probs[s] + probs[s | top]).collect();
    Ok(ConditionalTable {
        target: i,
        nbhd: nbhd.to_vec(),
        values,
        counts,
    })
}

/// `ŵ_{S,i} = E_{X∼Uni}[atanh(f_i(X)) X_{S∖i}]` for every `S ∋ i` inside `nbhd ∪ {i}`.
///
/// The predictor only depends on the neighborhood, so the uniform average over the
/// full cube reduces to the Walsh–Hadamard transform of the table.
pub fn fourier_from_predictor(table: &ConditionalTable) -> Result<SparsePolynomial> {
    if let Some(v) = table.values.iter().find(|v| !(v.abs() < 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "conditional table entries must lie in (-1, 1), found {v}"
        )));
    }
    let logits: Vec<f64> = table.values.iter().map(|v| v.atanh()).collect();
    let coeffs = fourier_coefficients(&logits);
    let n = table
        .nbhd
        .iter()
        .copied()
        .chain(std::iter::once(table.target))
        .max()
        .map_or(0, |k| k + 1);
    let mut out = SparsePolynomial::new(n);
    for (mask, c) in coeffs.into_iter().enumerate() {
        let mut idx: Vec<usize> = mask_members(mask).map(|b| table.nbhd[b]).collect();
        idx.push(table.target);
        out.set(Subset::new(idx), c);
    }
    Ok(out)
}

/// Assembles `ŵ_S = (1/|S|) Σ_{i∈S} ŵ_{S,i}` over the sets covered by some
/// neighborhood; a node whose neighborhood does not cover `S` contributes zero.
pub fn distribution_from_predictors(n: usize, tables: &[ConditionalTable]) -> Result<MrfPotential> {
    let per_node: Vec<SparsePolynomial> = tables
        .par_iter()
        .map(fourier_from_predictor)
        .collect::<Result<_>>()?;
    let mut sums: BTreeMap<Subset, f64> = BTreeMap::new();
    for (table, poly) in tables.iter().zip(&per_node) {
        if table.target >= n {
            return Err(Error::IndexOutOfRange {
                index: table.target,
                len: n,
            });
        }
        for (s, c) in poly.iter() {
            *sums.entry(s.clone()).or_insert(0.0) += c;
        }
    }
    let mut out = SparsePolynomial::new(n);
    for (s, total) in sums {
        let size = s.len() as f64;
        out.set(s, total / size);
    }
    Ok(out)
}

/// Builds clipped empirical tables on the given neighborhoods and assembles the potential.
pub fn distribution_from_structure<S: SpinSource + Sync + ?Sized>(
    data: &S,
    nbhds: &NeighborhoodMap,
    clip: ClipSpec,
) -> Result<MrfPotential> {
    let n = data.n_spins();
    if data.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let tables: Vec<ConditionalTable> = (0..n)
        .into_par_iter()
        .map(|i| empirical_conditional_table(data, i, nbhds.neighborhood(i)?, clip))
        .collect::<Result<_>>()?;
    distribution_from_predictors(n, &tables)
}

/// Exact table of an MRF with at most [`ENUMERATION_CAP`] spins.
pub fn mrf_pmf(potential: &MrfPotential) -> Result<Pmf> {
    let n = potential.n();
    check_cap(n, ENUMERATION_CAP)?;
    let terms: Vec<(usize, f64)> = potential
        .iter()
        .map(|(s, c)| (s.indices().iter().fold(0usize, |m, &k| m | (1 << k)), c))
        .collect();
    let lw: Vec<f64> = (0..1usize << n)
        .map(|state| {
            terms
                .iter()
                .map(|&(mask, c)| {
                    // χ_S(x) = (-1)^{#minus spins in S}
                    if (mask.count_ones() - (state & mask).count_ones()) % 2 == 0 {
                        c
                    } else {
                        -c
                    }
                })
                .sum()
        })
        .collect();
    Ok(Pmf::from_log_weights(n, &lw))
}

/// Where the moments `E[X_S]` in the divergence formula come from.
pub enum MomentSource<'a> {
    /// Enumerate both models.
    Exact,
    /// Empirical averages over samples from each model.
    Sampled {
        p: &'a (dyn SpinSource + Sync),
        q: &'a (dyn SpinSource + Sync),
    },
}

/// Symmetrized KL divergence with a standard error when moments are sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SklEstimate {
    pub value: f64,
    pub stderr: Option<f64>,
}

/// Mean and variance of `Σ_S d_S x_S` over a weighted sample.
fn weighted_mean_var(src: &(dyn SpinSource + Sync), diff: &SparsePolynomial) -> (f64, f64, f64) {
    let mut w_sum = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..src.n_rows() {
        let w = src.weight(k);
        if w <= 0.0 {
            continue;
        }
        let v = diff.eval(src.row(k));
        w_sum += w;
        let delta = v - mean;
        mean += delta * w / w_sum;
        m2 += w * delta * (v - mean);
    }
    (mean, m2 / w_sum.max(1e-300), w_sum)
}

/// `SKL(P, Q) = Σ_S (p_S − q_S)(E_P[X_S] − E_Q[X_S])`.
pub fn skl_divergence(p: &MrfPotential, q: &MrfPotential, moments: &MomentSource<'_>) -> Result<SklEstimate> {
    if p.n() != q.n() {
        return Err(Error::DimensionMismatch {
            what: "potential dimension",
            expected: p.n(),
            found: q.n(),
        });
    }
    let mut diff = p.difference(q);
    diff.set(Subset::empty(), 0.0);
    match moments {
        MomentSource::Exact => {
            let (pp, qp) = (mrf_pmf(p)?, mrf_pmf(q)?);
            let value = diff
                .iter()
                .map(|(s, d)| d * (pp.moment(s.indices()) - qp.moment(s.indices())))
                .sum();
            Ok(SklEstimate { value, stderr: None })
        }
        MomentSource::Sampled { p: sp, q: sq } => {
            let (mp, vp, np) = weighted_mean_var(*sp, &diff);
            let (mq, vq, nq) = weighted_mean_var(*sq, &diff);
            if np <= 0.0 || nq <= 0.0 {
                return Err(Error::EmptyDataset);
            }
            Ok(SklEstimate {
                value: mp - mq,
                stderr: Some((vp / sp.n_rows() as f64 + vq / sq.n_rows() as f64).sqrt()),
            })
        }
    }
}

/// Half the ℓ1 distance between two tables.
pub fn tv_distance_exact(p: &Pmf, q: &Pmf) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::DimensionMismatch {
            what: "table dimension",
            expected: p.n(),
            found: q.n(),
        });
    }
    Ok(crate::hypercube::tv_distance(p, q))
}

/// Conditional table of node `i` implied by a potential, read from its local field.
pub fn potential_conditional_table(potential: &MrfPotential, i: usize, nbhd: &[usize]) -> Result<ConditionalTable> {
    let n = potential.n();
    check_nbhd(n, i, nbhd, ENUMERATION_CAP)?;
    let fields: Vec<(Subset, f64)> = potential
        .iter()
        .filter(|(s, _)| s.contains(i))
        .map(|(s, c)| (s.without(i), c))
        .collect();
    let mut x = vec![1i8; n];
    let values = (0..1usize << nbhd.len())
        .map(|cell| {
            for (b, &k) in nbhd.iter().enumerate() {
                x[k] = spin_of(cell, b);
            }
            fields.iter().map(|(s, c)| c * s.character(&x) as f64).sum::<f64>().tanh()
        })
        .collect();
    Ok(ConditionalTable {
        target: i,
        nbhd: nbhd.to_vec(),
        values,
        counts: vec![1.0; 1 << nbhd.len()],
    })
}

/// Final states of single-site Gibbs chains on an MRF and the conditional
/// probabilities `P(X_i = +1 | rest)` seen during the last sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct MrfChains {
    pub states: SpinDataset,
    pub last_probabilities: Vec<Vec<f64>>,
}

/// Runs `chains` independent systematic-scan Gibbs chains for `sweeps` sweeps from
/// uniform random starts. Chain `c` uses stream `c` of `seed`.
pub fn mrf_gibbs(potential: &MrfPotential, sweeps: usize, chains: usize, seed: u64) -> Result<MrfChains> {
    if sweeps == 0 || chains == 0 {
        return Err(Error::InvalidParameter("sweeps and chains must be positive".into()));
    }
    let n = potential.n();
    let fields = potential.local_fields();
    let runs: Vec<(Vec<i8>, Vec<f64>)> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(seed, c);
            let mut x: Vec<i8> = (0..n).map(|_| draw_spin(&mut rng, 0.0)).collect();
            let mut probs = vec![0.5; n];
            for _ in 0..sweeps {
                for i in 0..n {
                    let h: f64 = fields[i]
                        .iter()
                        .map(|(rest, coeff)| coeff * rest.iter().map(|&k| x[k] as f64).product::<f64>())
                        .sum();
                    let mean = h.tanh();
                    probs[i] = 0.5 * (1.0 + mean);
                    x[i] = draw_spin(&mut rng, mean);
                }
            }
            (x, probs)
        })
        .collect();
    let mut spins = Vec::with_capacity(chains * n);
    let mut last_probabilities = Vec::with_capacity(chains);
    for (x, p) in runs {
        spins.extend(x);
        last_probabilities.push(p);
    }
    Ok(MrfChains {
        states: SpinDataset::new(n, spins, None)?,
        last_probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(target: usize, nbhd: Vec<usize>, values: Vec<f64>) -> ConditionalTable {
        let len = values.len();
        ConditionalTable {
            target,
            nbhd,
            values,
            counts: vec![1.0; len],
        }
    }

    #[test]
    fn constant_table_has_only_singleton() {
        let t = table(0, vec![2, 1], vec![0.3; 4]);
        let w = fourier_from_predictor(&t).unwrap();
        assert_eq!(w.len(), 1);
        assert!((w.get(&Subset::singleton(0)) - 0.3f64.atanh()).abs() < 1e-15);
    }

    #[test]
    fn linear_logit_recovers_coupling() {
        // cell 0: x_1 = -1, cell 1: x_1 = +1
        let t = table(0, vec![1], vec![(-0.3f64).tanh(), 0.3f64.tanh()]);
        let w = fourier_from_predictor(&t).unwrap();
        assert!((w.get(&Subset::new(vec![0, 1])) - 0.3).abs() < 1e-12);
        assert!(w.get(&Subset::singleton(0)).abs() < 1e-12);
    }

    #[test]
    fn averaging_divides_by_set_size() {
        let a = table(0, vec![1], vec![(-0.2f64).tanh(), 0.2f64.tanh()]);
        let b = table(1, vec![0], vec![(-0.4f64).tanh(), 0.4f64.tanh()]);
        let w = distribution_from_predictors(2, &[a.clone(), b]).unwrap();
        assert!((w.get(&Subset::new(vec![0, 1])) - 0.3).abs() < 1e-12);
        // a set seen by only one of its members is still divided by |S|
        let lone = table(1, vec![], vec![0.0]);
        let w = distribution_from_predictors(2, &[a, lone]).unwrap();
        assert!((w.get(&Subset::new(vec![0, 1])) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn clip_bounds_cells() {
        let clip = ClipSpec::new(0.5).unwrap();
        assert_eq!(clip.apply(0.9), 0.5);
        assert_eq!(clip.apply(-0.7), -0.5);
        assert!(ClipSpec::new(1.0).is_err());
        assert!(ClipSpec::new(0.0).is_err());
    }

    #[test]
    fn skl_single_spin_reference() {
        let mut p = SparsePolynomial::new(1);
        p.set(Subset::singleton(0), 0.5);
        let q = SparsePolynomial::new(1);
        let s = skl_divergence(&p, &q, &MomentSource::Exact).unwrap();
        assert!((s.value - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        let (pp, qp) = (mrf_pmf(&p).unwrap(), mrf_pmf(&q).unwrap());
        assert!((s.value - (pp.kl(&qp) + qp.kl(&pp))).abs() < 1e-12);
        assert!((s.value - 0.231_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn mrf_pmf_of_pair_coupling() {
        let mut p = SparsePolynomial::new(2);
        p.set(Subset::new(vec![0, 1]), 0.7);
        let pmf = mrf_pmf(&p).unwrap();
        assert!((pmf.moment(&[0, 1]) - 0.7f64.tanh()).abs() < 1e-14);
    }

    #[test]
    fn oversized_neighborhood_rejected() {
        let data = crate::spins::SpinDataset::new(18, vec![1; 18], None).unwrap();
        let nb: Vec<usize> = (1..18).collect();
        let clip = ClipSpec::new(0.9).unwrap();
        assert!(matches!(
            empirical_conditional_table(&data, 0, &nb, clip),
            Err(Error::NeighborhoodTooLarge { size: 17, .. })
        ));
    }

    #[test]
    fn mrf_gibbs_matches_enumerated_moments() {
        let mut pot = SparsePolynomial::new(3);
        pot.set(Subset::new(vec![0, 1]), 0.6);
        pot.set(Subset::new(vec![1, 2]), -0.4);
        pot.set(Subset::singleton(0), 0.3);
        let exact = mrf_pmf(&pot).unwrap();
        let runs = mrf_gibbs(&pot, 30, 20_000, 5).unwrap();
        for s in [vec![0], vec![0, 1], vec![1, 2]] {
            let emp: f64 = runs
                .states
                .rows()
                .map(|r| s.iter().map(|&k| r[k] as f64).product::<f64>())
                .sum::<f64>()
                / 20_000.0;
            assert!((emp - exact.moment(&s)).abs() < 4.0 / (20_000f64).sqrt(), "{s:?}");
        }
        assert!(runs.last_probabilities.iter().flatten().all(|p| *p > 0.0 && *p < 1.0));
    }
}
