mod common;

use common::*;
use rbmlearn::harness::*;
use rbmlearn::logistic::RegressionConfig;
use rbmlearn::rbm::{exact_visible_pmf, GibbsSchedule};
use rbmlearn::SpinDataset;

#[test]
fn generated_chain_is_the_ising_chain() {
    let spec = GeneratorSpec::ising(Topology::Chain, 5, 0.45);
    let model = generate_model(&spec).unwrap();
    let got = exact_visible_pmf(model.base()).unwrap();
    let want = ising_pmf(5, &chain_edges(5, 0.45), &[0.0; 5]);
    assert!(max_abs_diff(got.probs(), want.probs()) <= 1e-9);
    assert_eq!(model.base().n_hidden(), 4);
}

#[test]
fn ferromagnetic_weights_respect_alpha() {
    for seed in 0..10 {
        let spec = GeneratorSpec {
            seed,
            label_coupling: None,
            ..supervised_spec(seed)
        };
        let model = generate_model(&spec).unwrap();
        let w = model.base().weights();
        assert!(w.iter().all(|&v| v == 0.0 || v >= spec.alpha), "seed {seed}");
        assert!(w.iter().any(|&v| v > 0.0));
    }
}

#[test]
fn same_seed_same_model() {
    let spec = supervised_spec(9);
    let a = serde_json::to_string(&generate_model(&spec).unwrap()).unwrap();
    let b = serde_json::to_string(&generate_model(&spec).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = serde_json::to_string(&generate_model(&supervised_spec(10)).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn half_intensity_plane_is_balanced() {
    let m = 100_000;
    let data = binarize_images(&vec![0.5; m], 1, 4).unwrap();
    assert!(data.column_mean(0).abs() <= 3.0 / (m as f64).sqrt());
    assert_eq!(binarize_images(&vec![0.5; m], 1, 4).unwrap(), data);
}

#[test]
fn idx_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = synthetic_digits(12, 28, 3);
    write_idx_images(&dir.path().join("img"), &images).unwrap();
    write_idx_labels(&dir.path().join("lab"), &labels).unwrap();
    assert_eq!(read_idx_images(&dir.path().join("img")).unwrap(), images);
    assert_eq!(read_idx_labels(&dir.path().join("lab")).unwrap(), labels);
    let raw = std::fs::read(dir.path().join("img")).unwrap();
    assert_eq!(&raw[..4], &[0, 0, 8, 3]);
    assert!(read_idx_labels(&dir.path().join("img")).is_err());
}

#[test]
fn dataset_csv_roundtrip() {
    let data = SpinDataset::new(3, vec![1, -1, 1, -1, -1, 1], Some(vec![1, -1])).unwrap();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    assert!(buf.starts_with(b"x0,x1,x2,y\n"));
    assert_eq!(read_dataset(&buf[..]).unwrap(), data);
    let unlabeled = SpinDataset::new(2, vec![1, 1, -1, 1], None).unwrap();
    let mut buf = Vec::new();
    write_dataset(&unlabeled, &mut buf).unwrap();
    assert_eq!(read_dataset(&buf[..]).unwrap(), unlabeled);
    assert!(read_dataset(&b"x0,x1\n1,0\n"[..]).is_err());
}

#[test]
fn pgm_has_binary_header() {
    let mut buf = Vec::new();
    write_pgm(&mut buf, 3, 2, &[0, 50, 100, 150, 200, 250]).unwrap();
    assert!(buf.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(&buf[buf.len() - 6..], &[0, 50, 100, 150, 200, 250]);
}

#[test]
fn structure_report_on_cycle() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Structure);
    cfg.seed = 4;
    cfg.model = Some(GeneratorSpec::ising(Topology::Cycle, 6, 0.5));
    cfg.sampling = GibbsSchedule {
        n_samples: 20_000,
        ..Default::default()
    };
    cfg.structure.eta_cmi_fraction = Some(0.5);
    cfg.structure.learn.regression = RegressionConfig {
        radius: 5.0,
        ..Default::default()
    };
    let report = run_experiment(&cfg, None).unwrap();
    assert_eq!(report.metrics["precision"].value, 1.0);
    assert_eq!(report.metrics["recall"].value, 1.0);
    assert_eq!(report.metrics["precision"].method, MetricMethod::Exact);
}

#[test]
fn distribution_report_tags_exact_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::Distribution);
    cfg.exact = true;
    cfg.model = Some(GeneratorSpec::ising(Topology::Chain, 6, 0.4));
    cfg.sampling.n_samples = 20_000;
    let report = run_experiment(&cfg, Some(dir.path())).unwrap();
    for key in ["skl", "tv", "l1_coefficient_error"] {
        assert_eq!(report.metrics[key].method, MetricMethod::Exact, "{key}");
        assert!(report.metrics[key].stderr.is_none());
    }
    let tv = report.metrics["tv"].value;
    assert!(2.0 * tv * tv <= report.metrics["skl"].value);
    for f in ["report.json", "metrics.csv", "model.json", "potential.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn sampled_metrics_carry_stderr() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Supervised);
    cfg.model = Some(supervised_spec(0));
    cfg.supervised.lambda_max = Some(1.5);
    cfg.supervised.beta_min = Some(0.3);
    cfg.supervised.test_samples = 5_000;
    cfg.sampling.n_samples = 20_000;
    let report = run_experiment(&cfg, None).unwrap();
    for (k, m) in &report.metrics {
        match m.method {
            MetricMethod::Sampled => assert!(m.stderr.is_some(), "{k}"),
            MetricMethod::Exact => assert!(m.stderr.is_none(), "{k}"),
        }
    }
    assert_eq!(report.metrics["population_loss"].method, MetricMethod::Sampled);
}

#[test]
fn sample_kind_writes_bitmaps() {
    let dir = tempfile::tempdir().unwrap();
    let model = admissible_supervised(1);
    let (fp, fm) = model.exact_conditional_potentials(1e-9).unwrap();
    let pred = rbmlearn::supervised::LabelPredictor {
        f_plus: fp,
        f_minus: fm,
        bias: 0.0,
        extended_coeffs: None,
        provenance: Default::default(),
    };
    let path = dir.path().join("predictor.json");
    std::fs::write(&path, serde_json::to_string(&pred).unwrap()).unwrap();
    let text = format!(
        "kind = \"sample\"\nseed = 3\n[sample]\npredictor = \"{}\"\nsweeps = 50\nper_class = 4\nwidth = 4\nheight = 2\n",
        path.display()
    );
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let out = dir.path().join("out");
    run_experiment(&cfg, Some(&out)).unwrap();
    for name in ["samples_plus.pgm", "samples_minus.pgm"] {
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert!(bytes.starts_with(b"P5\n"), "{name}");
    }
}

#[test]
fn repeated_runs_give_identical_metrics() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Distribution);
    cfg.exact = true;
    cfg.trials = 3;
    cfg.seed = 12;
    cfg.model = Some(GeneratorSpec::ising(Topology::Cycle, 5, 0.4));
    cfg.sampling.n_samples = 5_000;
    let a = run_experiment(&cfg, None).unwrap().metrics_document();
    let b = run_experiment(&cfg, None).unwrap().metrics_document();
    assert_eq!(a, b);
}
