use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbmlearn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn invalid_config_gives_error_document() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"structure\"\ntrials = 0\n").unwrap();
    let out = run(&["report", "--config", &s(&cfg), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(doc["error"], "invalid-config");
    assert!(!doc["issues"].as_array().unwrap().is_empty());
}

#[test]
fn missing_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["structure", "--data", &s(&dir.path().join("none.csv")), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(doc["message"].as_str().unwrap().contains("none.csv"));
}

#[test]
fn generate_sample_structure_distill() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.toml");
    std::fs::write(&spec, "topology = \"chain\"\nn_visible = 5\nweight_scale = 0.8\n").unwrap();
    ok(&["generate", "--config", &s(&spec), "--out", &s(d)]);
    let model = s(&d.join("model.json"));
    ok(&["sample", "--model", &model, "--n-samples", "20000", "--seed", "3", "--out", &s(d)]);
    let data = s(&d.join("samples.csv"));
    let structure = d.join("structure.toml");
    std::fs::write(&structure, "eta = 0.05\n[regression]\ndegree = 2\nradius = 5.0\n").unwrap();
    ok(&["structure", "--data", &data, "--config", &s(&structure), "--out", &s(d)]);
    let map: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("structure.json")).unwrap()).unwrap();
    let want = serde_json::json!([[1], [0, 2], [1, 3], [2, 4], [3]]);
    assert_eq!(map["neighborhoods"], want);
    ok(&[
        "distill",
        "--data",
        &data,
        "--neighborhoods",
        &s(&d.join("structure.json")),
        "--model",
        &model,
        "--exact",
        "--out",
        &s(d),
    ]);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("distill_metrics.json")).unwrap()).unwrap();
    assert!(metrics["skl"]["value"].as_f64().unwrap() < 0.01);
    assert_eq!(metrics["tv"]["method"], "exact");
}

#[test]
fn report_writes_metrics_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "kind = \"distribution\"\nseed = 2\ntrials = 2\nexact = true\n\
         [model]\ntopology = \"cycle\"\nn_visible = 6\nweight_scale = 0.4\n\
         [sampling]\nn_samples = 5000\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["report", "--config", &s(&cfg), "--out", &s(&a)]);
    ok(&["report", "--config", &s(&cfg), "--out", &s(&b)]);
    let csv = |p: &Path| std::fs::read_to_string(p.join("metrics.csv")).unwrap();
    assert!(csv(&a).starts_with("metric,value,method,stderr\n"));
    assert_eq!(csv(&a), csv(&b));
    assert!(a.join("trial000_potential.json").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "topology = \"random-bipartite\"\nn_visible = 6\nn_hidden = 3\nweight_scale = 1.0\nseed = 1\n",
    )
    .unwrap();
    let model = |seed: &str, out: &str| {
        let o = dir.path().join(out);
        ok(&["generate", "--config", &s(&spec), "--seed", seed, "--out", &s(&o)]);
        std::fs::read_to_string(o.join("model.json")).unwrap()
    };
    assert_eq!(model("4", "x"), model("4", "y"));
    assert_ne!(model("4", "x"), model("5", "z"));
}
