mod common;

use common::*;
use rbmlearn::hypercube::{decode, tv_distance};
use rbmlearn::rbm::*;
use rbmlearn::Rbm;

#[test]
fn reference_pair_matches_oracle() {
    let m = Rbm::new(2, 1, vec![0.8, 0.6], vec![0.0; 2], vec![0.0]).unwrap();
    for x in [1i8, -1] {
        let a = conditional_mean(&m, 0, &[x]).unwrap();
        let b = conditional_mean_oracle(&m, 0, &[x]).unwrap();
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn ising_edge_conditional_matches_two_spin_enumeration() {
    for j in [0.5, -0.7, 1.3] {
        let m = Rbm::from_ising(2, &[(0, 1, j)], &[0.0, 0.0]).unwrap();
        let pmf = ising_pmf(2, &[(0, 1, j)], &[0.0, 0.0]);
        let means = pmf.conditional_means(0);
        for s in 0..4usize {
            let x = decode(s, 2);
            let got = conditional_mean(&m, 0, &x[1..]).unwrap();
            assert!((got - means[s]).abs() <= 1e-12, "J={j} state {s}");
        }
    }
}

#[test]
fn zero_weights_give_bias_mean() {
    let m = Rbm::new(3, 2, vec![0.0; 6], vec![0.2, -0.4, 0.9], vec![0.5, -0.5]).unwrap();
    for i in 0..3 {
        let got = conditional_mean_oracle(&m, i, &[1, -1]).unwrap();
        assert!((got - m.b_vis()[i].tanh()).abs() < 1e-15);
    }
}

#[test]
fn zero_model_gibbs_is_fair() {
    let m = Rbm::zeros(4, 3);
    let data = gibbs_sample_chains(
        &m,
        GibbsSchedule {
            burn_in: 10,
            n_samples: 40_000,
            thin: 1,
            chains: 4,
        },
        9,
    );
    let tol = 3.0 / (data.m() as f64).sqrt();
    for i in 0..4 {
        assert!(data.column_mean(i).abs() <= tol, "spin {i}: {}", data.column_mean(i));
    }
}

#[test]
fn gibbs_matches_exact_pmf_in_tv() {
    let mut r = rng(42);
    let m = random_rbm(&mut r, 4, 2, 1.0, 0.5);
    let data = gibbs_sample_chains(
        &m,
        GibbsSchedule {
            burn_in: 500,
            n_samples: 200_000,
            thin: 2,
            chains: 8,
        },
        3,
    );
    let tv = tv_distance(&empirical_pmf(&data), &exact_visible_pmf(&m).unwrap());
    assert!(tv <= 0.02, "tv {tv}");
}

#[test]
fn hidden_degree_two_marginal_is_ising() {
    let edges = [(0, 1, 0.5), (1, 2, -0.3), (2, 3, 0.8), (0, 3, 0.2)];
    let fields = [0.1, -0.2, 0.0, 0.3];
    let m = Rbm::from_ising(4, &edges, &fields).unwrap();
    let got = exact_visible_pmf(&m).unwrap();
    let want = ising_pmf(4, &edges, &fields);
    assert!(max_abs_diff(got.probs(), want.probs()) <= 1e-9);
}

#[test]
fn hidden_degree_two_coupling_formula() {
    // Arbitrary per-unit weights: each hidden unit contributes atanh(tanh w1 tanh w2) to its edge.
    let w = vec![0.4, 0.0, 0.9, -0.6, 0.0, 0.7];
    let m = Rbm::new(3, 2, w, vec![0.0; 3], vec![0.0; 2]).unwrap();
    let j01 = (0.4f64.tanh() * 0.9f64.tanh()).atanh();
    let j12 = ((-0.6f64).tanh() * 0.7f64.tanh()).atanh();
    let want = ising_pmf(3, &[(0, 1, j01), (1, 2, j12)], &[0.0; 3]);
    let got = exact_visible_pmf(&m).unwrap();
    assert!(max_abs_diff(got.probs(), want.probs()) <= 1e-9);
}

#[test]
fn negated_biases_flip_spins() {
    let mut r = rng(5);
    let m = random_rbm(&mut r, 4, 3, 1.0, 1.0);
    let p = exact_visible_pmf(&m).unwrap();
    let q = exact_visible_pmf(&m.negated_biases()).unwrap();
    let full = (1usize << 4) - 1;
    for s in 0..=full {
        assert!((p.probs()[s] - q.probs()[full ^ s]).abs() <= 1e-14);
    }
}

#[test]
fn mgf_of_recentered_spin() {
    for li in -20..=20 {
        for zi in -20..=20 {
            let (lambda, z) = (li as f64 * 0.15, zi as f64 * 0.2);
            let mean = z.tanh();
            let direct = 0.5 * (1.0 + mean) * lambda.exp() + 0.5 * (1.0 - mean) * (-lambda).exp();
            let closed = lambda.cosh() + lambda.sinh() * mean;
            assert!((direct - closed).abs() <= 1e-12 * direct.max(1.0), "λ={lambda} z={z}");
        }
    }
}

#[test]
fn bounds_ignore_weight_sign() {
    let mut r = rng(8);
    let m = random_rbm(&mut r, 4, 3, 2.0, 1.0);
    let flipped = Rbm::new(
        4,
        3,
        m.weights().iter().map(|w| -w).collect(),
        m.b_vis().to_vec(),
        m.b_hid().to_vec(),
    )
    .unwrap();
    assert_eq!(norm_bounds(&m), norm_bounds(&flipped));
}

#[test]
fn replication_tightens_network_embedding() {
    let coarse = rbm_from_tanh_network(0.0, &[0.5], &[0.0], &[vec![1.0]], 8).unwrap();
    let fine = rbm_from_tanh_network(0.0, &[0.5], &[0.0], &[vec![1.0]], 64).unwrap();
    assert!(fine.sup_deviation <= coarse.sup_deviation);
    let flat = rbm_from_tanh_network(0.3, &[0.0], &[0.0], &[vec![1.0]], 64).unwrap();
    for x in [1i8, -1] {
        let got = conditional_mean(&flat.model, flat.target, &[x]).unwrap();
        assert!((got - 0.3f64.tanh()).abs() < 1e-15);
    }
}
