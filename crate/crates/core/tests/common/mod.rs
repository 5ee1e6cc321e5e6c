#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbmlearn::hypercube::{decode, encode};
use rbmlearn::{Pmf, Rbm, SpinDataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rbm(rng: &mut ChaCha8Rng, nv: usize, nh: usize, w_scale: f64, b_scale: f64) -> Rbm {
    let w = (0..nv * nh).map(|_| rng.random_range(-w_scale..=w_scale)).collect();
    let bv = (0..nv).map(|_| rng.random_range(-b_scale..=b_scale)).collect();
    let bh = (0..nh).map(|_| rng.random_range(-b_scale..=b_scale)).collect();
    Rbm::new(nv, nh, w, bv, bh).unwrap()
}

/// Ising law `∝ exp(Σ J x_a x_b + Σ h_i x_i)` by brute force.
pub fn ising_pmf(n: usize, edges: &[(usize, usize, f64)], fields: &[f64]) -> Pmf {
    let lw: Vec<f64> = (0..1usize << n)
        .map(|s| {
            let x = decode(s, n);
            let pair: f64 = edges.iter().map(|&(a, b, j)| j * (x[a] * x[b]) as f64).sum();
            let single: f64 = fields.iter().zip(&x).map(|(h, &v)| h * v as f64).sum();
            pair + single
        })
        .collect();
    Pmf::from_log_weights(n, &lw)
}

pub fn empirical_pmf(data: &SpinDataset) -> Pmf {
    let mut counts = vec![0.0; 1usize << data.n()];
    for r in data.rows() {
        counts[encode(r)] += 1.0;
    }
    let m = data.m() as f64;
    Pmf::from_probs(data.n(), counts.into_iter().map(|c| c / m).collect()).unwrap()
}

pub fn chain_edges(n: usize, j: f64) -> Vec<(usize, usize, f64)> {
    (0..n - 1).map(|i| (i, i + 1, j)).collect()
}

pub fn cycle_edges(n: usize, j: f64) -> Vec<(usize, usize, f64)> {
    (0..n).map(|i| (i, (i + 1) % n, j)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Conditionally ferromagnetic supervised models with 8 inputs and 4 hidden units.
pub fn supervised_spec(seed: u64) -> rbmlearn::harness::GeneratorSpec {
    use rbmlearn::harness::*;
    GeneratorSpec {
        topology: Topology::RandomBipartite,
        n_visible: 8,
        n_hidden: Some(4),
        weight_scale: 0.45,
        alpha: 0.3,
        sign_mode: SignMode::Ferromagnetic,
        hidden_degree: (2, 3),
        field_scale: 0.1,
        dobrushin_scale: false,
        label_coupling: Some(LabelCouplingSpec {
            min: 0.5,
            max: 1.0,
            anchor: Some(1),
            bias: 0.0,
            balance: true,
        }),
        seed,
    }
}

pub fn admissible_supervised(seed: u64) -> rbmlearn::supervised::SupervisedRbm {
    rbmlearn::harness::generate_admissible_supervised(&supervised_spec(seed), 1.5, 0.3, 1000).unwrap()
}
