mod common;

use common::*;
use rand::Rng;
use rbmlearn::hypercube::spin_of;
use rbmlearn::rbm::GibbsSchedule;
use rbmlearn::structure::NeighborhoodMap;
use rbmlearn::supervised::*;
use rbmlearn::{Rbm, SparsePolynomial, SpinDataset, SpinSource};

/// Inputs 0-1-2 in a chain through two hidden units that both see the label; input 3 is isolated.
fn chain_model() -> SupervisedRbm {
    let w = vec![0.5, 0.0, 0.5, 0.5, 0.0, 0.5, 0.0, 0.0];
    let base = Rbm::new(4, 2, w, vec![0.1, 0.0, -0.1, 0.2], vec![0.0, 0.1]).unwrap();
    SupervisedRbm::new(base, vec![0.6, 0.4], 0.0).unwrap()
}

fn schedule(n_samples: usize) -> GibbsSchedule {
    GibbsSchedule {
        burn_in: 200,
        n_samples,
        thin: 2,
        chains: 8,
    }
}

fn flip_labels(data: &SpinDataset) -> SpinDataset {
    let flipped = data.labels().unwrap().iter().map(|y| -y).collect();
    SpinDataset::new(data.n(), data.samples().to_vec(), Some(flipped)).unwrap()
}

#[test]
fn independent_spins_have_no_covariance() {
    let mut r = rng(1);
    let m = 40_000;
    let rows: Vec<i8> = (0..m * 3).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
    let labels: Vec<i8> = (0..m).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
    let data = SpinDataset::new(3, rows, Some(labels)).unwrap();
    for set in [vec![], vec![2]] {
        let c = avg_conditional_covariance(&data, 0, 1, &set, 25.0).unwrap();
        assert!(c.value.abs() < 4.0 / (m as f64).sqrt(), "{set:?}: {}", c.value);
    }
}

#[test]
fn shared_hidden_unit_clears_the_covariance_floor() {
    let model = chain_model();
    let pop = model.exact_population().unwrap();
    let (lambda, beta) = model.assumption_levels().unwrap();
    let floor = beta * 0.5f64.powi(2) * (-12.0 * lambda).exp();
    for (u, v, other) in [(0, 1, 2), (1, 2, 0)] {
        for set in [vec![], vec![other], vec![other, 3]] {
            let c = avg_conditional_covariance(&pop, u, v, &set, 0.0).unwrap();
            assert!(c.value >= floor, "({u},{v}|{set:?}) {} < {floor}", c.value);
        }
    }
}

#[test]
fn separating_set_removes_covariance() {
    let pop = chain_model().exact_population().unwrap();
    let marginal = avg_conditional_covariance(&pop, 0, 2, &[], 0.0).unwrap().value;
    assert!(marginal > 1e-3);
    let separated = avg_conditional_covariance(&pop, 0, 2, &[1], 0.0).unwrap().value;
    assert!(separated.abs() < 1e-14, "{separated}");
}

#[test]
fn exact_greedy_on_chain_and_isolated_node() {
    let model = chain_model();
    let pop = model.exact_population().unwrap();
    let (lambda, beta) = model.assumption_levels().unwrap();
    let cfg = SupervisedConfig {
        alpha: 0.5,
        lambda,
        beta_bal: beta,
        min_bin: 0.0,
        ..Default::default()
    };
    let sets: Vec<Vec<usize>> = (0..4).map(|u| learn_supervised_nbhd(&pop, u, &cfg).unwrap().set).collect();
    assert_eq!(sets, vec![vec![1], vec![0, 2], vec![1], vec![]]);
    assert_eq!(sets, model.two_hop_neighborhoods());
}

#[test]
fn flipped_labels_swap_the_conditionals() {
    let model = chain_model();
    let data = model.sample(schedule(20_000), 2).unwrap();
    let map = NeighborhoodMap::from_neighborhoods(model.two_hop_neighborhoods());
    let clip = conditional_clip(&model).unwrap();
    let (fp, fm) = fit_conditional_mrfs(&data, &map, clip, clip, 0).unwrap();
    let (gp, gm) = fit_conditional_mrfs(&flip_labels(&data), &map, clip, clip, 0).unwrap();
    assert_eq!(fp, gm);
    assert_eq!(fm, gp);
}

#[test]
fn uninformative_label_gives_matching_conditionals() {
    let base = chain_model().base;
    let model = SupervisedRbm::new(base, vec![0.0, 0.0], 0.2).unwrap();
    let data = model.sample(schedule(200_000), 3).unwrap();
    let map = NeighborhoodMap::from_neighborhoods(model.two_hop_neighborhoods());
    let clip = conditional_clip(&model).unwrap();
    let (fp, fm) = fit_conditional_mrfs(&data, &map, clip, clip, 0).unwrap();
    for (s, c) in fp.iter() {
        assert!((c - fm.get(s)).abs() < 0.03, "{s:?}: {c} vs {}", fm.get(s));
    }
}

#[test]
fn sampled_conditionals_close_to_truth() {
    let model = chain_model();
    let data = model.sample(schedule(200_000), 4).unwrap();
    let map = NeighborhoodMap::from_neighborhoods(model.two_hop_neighborhoods());
    let clip = conditional_clip(&model).unwrap();
    let (fp, fm) = fit_conditional_mrfs(&data.compress(), &map, clip, clip, 1000).unwrap();
    let (tp, tm) = model.exact_conditional_potentials(1e-12).unwrap();
    let (ep, em) = (fp.l1_distance(&tp), fm.l1_distance(&tm));
    assert!(ep <= 0.05 && em <= 0.05, "{ep} {em}");
}

#[test]
fn small_class_is_rejected() {
    let model = chain_model();
    let data = model.sample(schedule(2_000), 5).unwrap();
    let map = NeighborhoodMap::from_neighborhoods(model.two_hop_neighborhoods());
    let clip = conditional_clip(&model).unwrap();
    let err = fit_conditional_mrfs(&data, &map, clip, clip, 5_000).unwrap_err();
    assert_eq!(err.kind(), "label-class-too-small");
}

#[test]
fn symmetric_model_needs_no_bias() {
    let w = vec![0.5, 0.0, 0.5, 0.5, 0.0, 0.5];
    let base = Rbm::new(3, 2, w, vec![0.0; 3], vec![0.0; 2]).unwrap();
    let model = SupervisedRbm::new(base, vec![0.7, 0.3], 0.0).unwrap();
    let pop = model.exact_population().unwrap();
    let (fp, fm) = model.exact_conditional_potentials(0.0).unwrap();
    let pred = fit_bias(&pop, &fp, &fm, BiasMode::Scalar, &SupervisedConfig::default()).unwrap();
    assert!(pred.bias.abs() < 1e-9, "{}", pred.bias);
}

fn predictor(bias: f64, f_plus: SparsePolynomial, f_minus: SparsePolynomial) -> LabelPredictor {
    LabelPredictor {
        f_plus,
        f_minus,
        bias,
        extended_coeffs: None,
        provenance: Default::default(),
    }
}

#[test]
fn zero_predictor_is_a_coin_flip() {
    let zero = SparsePolynomial::new(4);
    let p = predictor(0.0, zero.clone(), zero);
    assert_eq!(predict_label(&[1, -1, 1, 1], &p), 0.0);
}

#[test]
fn prediction_increases_with_bias() {
    let model = chain_model();
    let (fp, fm) = model.exact_conditional_potentials(0.0).unwrap();
    for s in 0..16usize {
        let x: Vec<i8> = (0..4).map(|k| spin_of(s, k)).collect();
        let mut last = -1.0;
        for k in -10..=10 {
            let v = predict_label(&x, &predictor(k as f64 * 0.3, fp.clone(), fm.clone()));
            assert!(v > last);
            last = v;
        }
    }
}

#[test]
fn scalar_objective_is_convex_in_bias() {
    let model = chain_model();
    let pop = model.exact_population().unwrap();
    let (fp, fm) = model.exact_conditional_potentials(0.0).unwrap();
    let loss = |b: f64| population_logistic_loss(&pop, &predictor(b, fp.clone(), fm.clone())).unwrap();
    let h = 1e-3;
    for k in -30..=30 {
        let b = k as f64 * 0.25;
        let second = (loss(b + h) - 2.0 * loss(b) + loss(b - h)) / (h * h);
        assert!(second > 0.0, "b={b}: {second}");
    }
}

/// Joint table indexed by (x bits, label bit) as produced by the exact joint pmf.
fn bins_of(model: &SupervisedRbm) -> (usize, Vec<f64>) {
    let pmf = model.exact_joint_pmf().unwrap();
    (model.n_inputs(), pmf.probs().to_vec())
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    (0..1usize << n)
        .filter(|m| m.count_ones() as usize <= max)
        .map(|m| (0..n).filter(|k| m >> k & 1 == 1).collect())
        .collect()
}

#[test]
fn bin_probabilities_respect_the_floor() {
    for seed in 0..5 {
        let model = admissible_supervised(seed);
        let (lambda, beta) = model.assumption_levels().unwrap();
        let delta = (-2.0 * lambda).exp() / 2.0;
        let (n, probs) = bins_of(&model);
        for set in subsets(n, 3) {
            let mut mass = std::collections::HashMap::new();
            for (s, &p) in probs.iter().enumerate() {
                let key: Vec<i8> = set.iter().map(|&k| spin_of(s, k)).chain([spin_of(s, n)]).collect();
                *mass.entry(key).or_insert(0.0) += p;
            }
            assert_eq!(mass.len(), 1 << (set.len() + 1));
            let floor = beta * delta.powi(set.len() as i32) * (1.0 - 1e-12);
            assert!(mass.values().all(|&p| p >= floor), "seed {seed} set {set:?}");
        }
    }
}

#[test]
fn conditional_covariances_are_nonnegative() {
    for seed in 0..3 {
        let model = admissible_supervised(seed);
        let (n, probs) = bins_of(&model);
        for set in subsets(n, 2) {
            for u in (0..n).filter(|k| !set.contains(k)) {
                for v in (u + 1..n).filter(|k| !set.contains(k)) {
                    let mut acc: std::collections::HashMap<Vec<i8>, [f64; 4]> = Default::default();
                    for (s, &p) in probs.iter().enumerate() {
                        let key: Vec<i8> = set.iter().map(|&k| spin_of(s, k)).chain([spin_of(s, n)]).collect();
                        let (xu, xv) = (spin_of(s, u) as f64, spin_of(s, v) as f64);
                        let e = acc.entry(key).or_default();
                        e[0] += p;
                        e[1] += p * xu;
                        e[2] += p * xv;
                        e[3] += p * xu * xv;
                    }
                    for [z, a, b, ab] in acc.into_values() {
                        let cov = ab / z - (a / z) * (b / z);
                        assert!(cov >= -1e-12, "seed {seed} ({u},{v}|{set:?}) {cov}");
                    }
                }
            }
        }
    }
}

#[test]
fn label_rows_are_weighted_by_class() {
    let pop = chain_model().exact_population().unwrap();
    let total: f64 = (0..pop.n_rows()).map(|k| pop.weight(k)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}
