use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, generate_admissible_supervised, generate_model, tile_images, write_pgm, GeneratedModel, GeneratorSpec};
use crate::distribution::{distribution_from_structure, mrf_gibbs, mrf_pmf, skl_divergence, tv_distance_exact, ClipSpec, MomentSource};
use crate::error::{ConfigIssue, Error, Result};
use crate::hypercube::ENUMERATION_CAP;
use crate::rbm::{exact_visible_pmf, GibbsSchedule, Rbm};
use crate::spins::SpinSource;
use crate::structure::{conditional_mutual_information, edge_precision_recall, recover_structure, NeighborhoodMap, StructureConfig};
use crate::supervised::{
    bayes_label_loss, conditional_clip, fit_bias, population_logistic_loss, train_label_predictor, BiasMode,
    LabelPredictor, SupervisedConfig, SupervisedRbm,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Structure,
    Distribution,
    Supervised,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSettings {
    pub learn: StructureConfig,
    /// Set `η` to this fraction of the smallest enumerated conditional mutual
    /// information over true edges (needs an enumerable model).
    pub eta_cmi_fraction: Option<f64>,
}

impl Default for StructureSettings {
    fn default() -> Self {
        Self {
            learn: StructureConfig::default(),
            eta_cmi_fraction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionSettings {
    /// Use the true two-hop neighborhoods instead of learning them.
    pub known_structure: bool,
    pub learn: StructureConfig,
    /// Gibbs sweeps and chains for sampled divergence estimates.
    pub skl_sweeps: usize,
    pub skl_chains: usize,
}

impl Default for DistributionSettings {
    fn default() -> Self {
        Self {
            known_structure: true,
            learn: StructureConfig::default(),
            skl_sweeps: 200,
            skl_chains: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedSettings {
    pub learn: SupervisedConfig,
    pub bias_mode: BiasMode,
    /// Draw models until `λ ≤ lambda_max` and `min_y P(Y = y) ≥ beta_min`.
    pub lambda_max: Option<f64>,
    pub beta_min: Option<f64>,
    /// Replace `λ`, `β` and `α` in `learn` by the generated model's own levels.
    pub use_model_levels: bool,
    /// Fresh samples for sampled loss estimates.
    pub test_samples: usize,
}

impl Default for SupervisedSettings {
    fn default() -> Self {
        Self {
            learn: SupervisedConfig::default(),
            bias_mode: BiasMode::Scalar,
            lambda_max: None,
            beta_min: None,
            use_model_levels: true,
            test_samples: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    /// Trained predictor (JSON) whose class-conditional models are sampled.
    pub predictor: Option<PathBuf>,
    pub sweeps: usize,
    pub per_class: usize,
    /// Image shape for the bitmap grids; defaults to the nearest square.
    pub width: Option<usize>,
    pub height: Option<usize>,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            predictor: None,
            sweeps: 6000,
            per_class: 8,
            width: None,
            height: None,
        }
    }
}

/// One run, parsed from a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    /// Compute oracle metrics by enumeration instead of sampling.
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub model: Option<GeneratorSpec>,
    #[serde(default)]
    pub sampling: GibbsSchedule,
    #[serde(default)]
    pub structure: StructureSettings,
    #[serde(default)]
    pub distribution: DistributionSettings,
    #[serde(default)]
    pub supervised: SupervisedSettings,
    #[serde(default)]
    pub sample: SampleSettings,
}

fn one() -> usize {
    1
}

fn issue(path: &str, message: impl ToString) -> ConfigIssue {
    ConfigIssue {
        path: path.into(),
        message: message.to_string(),
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            trials: 1,
            exact: false,
            model: None,
            sampling: GibbsSchedule::default(),
            structure: StructureSettings::default(),
            distribution: DistributionSettings::default(),
            supervised: SupervisedSettings::default(),
            sample: SampleSettings::default(),
        }
    }

    /// Parses and validates a document; all problems are reported together.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            Error::InvalidConfig(vec![issue(
                "<document>",
                e.message().to_string() + &e.span().map(|s| format!(" (bytes {}..{})", s.start, s.end)).unwrap_or_default(),
            )])
        })?;
        let issues = cfg.validate();
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    /// Reads a document; relative paths inside it are taken relative to its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path)?)?;
        if let (Some(p), Some(dir)) = (&cfg.sample.predictor, path.parent()) {
            if p.is_relative() {
                cfg.sample.predictor = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if self.trials == 0 {
            out.push(issue("trials", "must be at least 1"));
        }
        let needs_model = self.kind != ExperimentKind::Sample;
        match &self.model {
            None if needs_model => out.push(issue("model", "required for this kind")),
            Some(spec) => {
                if let Err(e) = spec.validate() {
                    out.push(issue("model", e));
                }
                if self.kind == ExperimentKind::Supervised && spec.label_coupling.is_none() {
                    out.push(issue("model.label_coupling", "required for supervised runs"));
                }
                let enumerable = spec.n_visible + model_hidden_count(spec) + usize::from(spec.label_coupling.is_some())
                    <= ENUMERATION_CAP;
                if self.exact && needs_model && !enumerable {
                    out.push(issue("exact", "model is too large to enumerate"));
                }
            }
            None => {}
        }
        if self.sampling.chains == 0 {
            out.push(issue("sampling.chains", "must be at least 1"));
        }
        if self.sampling.n_samples == 0 {
            out.push(issue("sampling.n_samples", "must be at least 1"));
        }
        match self.kind {
            ExperimentKind::Structure => {
                if let Err(e) = self.structure.learn.validate() {
                    out.push(issue("structure.learn", e));
                }
                if let Some(f) = self.structure.eta_cmi_fraction {
                    if !(f > 0.0 && f <= 1.0) {
                        out.push(issue("structure.eta_cmi_fraction", "must lie in (0, 1]"));
                    }
                }
            }
            ExperimentKind::Distribution => {
                if !self.distribution.known_structure {
                    if let Err(e) = self.distribution.learn.validate() {
                        out.push(issue("distribution.learn", e));
                    }
                }
                if !self.exact && (self.distribution.skl_sweeps == 0 || self.distribution.skl_chains == 0) {
                    out.push(issue("distribution.skl_chains", "sweeps and chains must be positive"));
                }
            }
            ExperimentKind::Supervised => {
                if let Err(e) = self.supervised.learn.validate() {
                    out.push(issue("supervised.learn", e));
                }
                if !self.exact && self.supervised.test_samples == 0 {
                    out.push(issue("supervised.test_samples", "must be positive without exact evaluation"));
                }
            }
            ExperimentKind::Sample => {
                if self.sample.predictor.is_none() {
                    out.push(issue("sample.predictor", "required for sample runs"));
                }
                if self.sample.sweeps == 0 {
                    out.push(issue("sample.sweeps", "must be at least 1"));
                }
                if self.sample.per_class == 0 {
                    out.push(issue("sample.per_class", "must be at least 1"));
                }
            }
        }
        out
    }
}

fn model_hidden_count(spec: &GeneratorSpec) -> usize {
    use super::Topology::*;
    let n = spec.n_visible;
    match spec.topology {
        Chain => n.saturating_sub(1),
        Cycle => n,
        Grid => {
            let side = (n as f64).sqrt().round() as usize;
            2 * side * side.saturating_sub(1)
        }
        Star => 1,
        RandomBipartite => spec.n_hidden.unwrap_or(0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricMethod {
    Exact,
    Sampled,
}

/// A reported number with how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub method: MetricMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

impl Metric {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            method: MetricMethod::Exact,
            stderr: None,
        }
    }

    pub fn sampled(value: f64, stderr: f64) -> Self {
        Self {
            value,
            method: MetricMethod::Sampled,
            stderr: Some(stderr),
        }
    }
}

pub type Metrics = BTreeMap<String, Metric>;

fn put(m: &mut Metrics, key: &str, metric: Metric) {
    m.insert(key.to_string(), metric);
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Trial averages; metrics identical in every trial are passed through unchanged.
fn aggregate(trials: &[Metrics]) -> Metrics {
    let mut out = Metrics::new();
    let Some(first) = trials.first() else { return out };
    for (key, m0) in first {
        let values: Vec<f64> = trials.iter().filter_map(|t| t.get(key)).map(|m| m.value).collect();
        if trials.len() == 1 || values.iter().all(|v| *v == m0.value) {
            out.insert(key.clone(), *m0);
        } else {
            let (mean, se) = mean_stderr(&values);
            out.insert(key.clone(), Metric::sampled(mean, se));
        }
    }
    out
}

/// Outcome of [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub metrics: Metrics,
    pub trials: Vec<Metrics>,
    /// Wall-clock seconds per phase; excluded from [`ExperimentReport::metrics_document`].
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    /// The reproducible part of the report: identical for identical config and seed.
    pub fn metrics_document(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            kind: ExperimentKind,
            seed: u64,
            metrics: &'a Metrics,
            trials: &'a [Metrics],
        }
        serde_json::to_string_pretty(&Doc {
            kind: self.kind,
            seed: self.seed,
            metrics: &self.metrics,
            trials: &self.trials,
        })
        .expect("metrics serialize")
    }

    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,value,method,stderr")?;
        for (k, m) in &self.metrics {
            let method = match m.method {
                MetricMethod::Exact => "exact",
                MetricMethod::Sampled => "sampled",
            };
            let se = m.stderr.map(|s| format!("{s:.17e}")).unwrap_or_default();
            writeln!(w, "{k},{:.17e},{method},{se}", m.value)?;
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for (k, m) in self.metrics.iter().chain(self.trials.iter().flatten()) {
            if !m.value.is_finite() || m.stderr.is_some_and(|s| !s.is_finite()) {
                return Err(Error::Infeasible(format!("metric `{k}` is not finite")));
            }
        }
        Ok(())
    }
}

/// Named artifact produced by a trial, written under the output directory.
enum Artifact {
    Text(String, String),
    Binary(String, Vec<u8>),
}

struct TrialOutput {
    metrics: Metrics,
    artifacts: Vec<Artifact>,
}

fn enumerable(model: &Rbm) -> bool {
    model.n_visible() + model.n_hidden() <= ENUMERATION_CAP
}

fn structure_trial(model: &Rbm, cfg: &ExperimentConfig, learn: &StructureConfig, seed: u64) -> Result<TrialOutput> {
    let data = crate::rbm::gibbs_sample_chains(model, cfg.sampling, seed);
    let learn = StructureConfig {
        seed,
        ..learn.clone()
    };
    let found = recover_structure(&data, &learn)?;
    let truth = NeighborhoodMap::from_neighborhoods(model.two_hop_neighborhoods());
    let (precision, recall) = edge_precision_recall(&found, &truth);
    let mut m = Metrics::new();
    put(&mut m, "precision", Metric::exact(precision));
    put(&mut m, "recall", Metric::exact(recall));
    put(&mut m, "exact_recovery", Metric::exact(flag(found.neighborhoods == truth.neighborhoods)));
    put(&mut m, "gray_zone_pairs", Metric::exact(found.pairs.iter().filter(|p| p.gray_zone).count() as f64));
    put(&mut m, "sample_bound_met", Metric::exact(flag(found.sample_check.adequate)));
    let mut csv = Vec::new();
    found.write_csv(&mut csv)?;
    Ok(TrialOutput {
        metrics: m,
        artifacts: vec![Artifact::Binary("neighborhoods.csv".into(), csv)],
    })
}

fn distribution_trial(model: &Rbm, cfg: &ExperimentConfig, seed: u64) -> Result<TrialOutput> {
    let settings = &cfg.distribution;
    let data = crate::rbm::gibbs_sample_chains(model, cfg.sampling, seed);
    let map = if settings.known_structure {
        NeighborhoodMap::from_neighborhoods(model.two_hop_neighborhoods())
    } else {
        recover_structure(
            &data,
            &StructureConfig {
                seed,
                ..settings.learn.clone()
            },
        )?
    };
    let clip = ClipSpec::for_model(model)?;
    let estimate = distribution_from_structure(&data.compress(), &map, clip)?;
    let mut m = Metrics::new();
    put(&mut m, "terms", Metric::exact(estimate.len() as f64));
    if cfg.exact {
        let truth = model.visible_potential(1e-12)?;
        let skl = skl_divergence(&truth, &estimate, &MomentSource::Exact)?.value;
        let tv = tv_distance_exact(&exact_visible_pmf(model)?, &mrf_pmf(&estimate)?)?;
        put(&mut m, "l1_coefficient_error", Metric::exact(truth.l1_distance(&estimate)));
        put(&mut m, "skl", Metric::exact(skl));
        put(&mut m, "tv", Metric::exact(tv));
        put(&mut m, "pinsker_holds", Metric::exact(flag(2.0 * tv * tv <= skl)));
    } else {
        let q = mrf_gibbs(&estimate, settings.skl_sweeps, settings.skl_chains, derive_seed(seed, 1))?;
        let truth_samples = crate::rbm::gibbs_sample_chains(
            model,
            GibbsSchedule {
                n_samples: settings.skl_chains,
                ..cfg.sampling
            },
            derive_seed(seed, 2),
        );
        let truth = model.visible_potential(1e-12).ok();
        if let Some(truth) = truth {
            let est = skl_divergence(
                &truth,
                &estimate,
                &MomentSource::Sampled {
                    p: &truth_samples,
                    q: &q.states,
                },
            )?;
            put(&mut m, "skl", Metric::sampled(est.value, est.stderr.unwrap_or(0.0)));
        }
    }
    let json = serde_json::to_string_pretty(&estimate.to_record())?;
    Ok(TrialOutput {
        metrics: m,
        artifacts: vec![Artifact::Text("potential.json".into(), json)],
    })
}

/// Loss, accuracy and baseline of a predictor against a labeled source.
fn label_metrics<S: SpinSource + Sync + ?Sized>(
    src: &S,
    pred: &LabelPredictor,
    baseline: &LabelPredictor,
    exact: bool,
) -> Result<Metrics> {
    let total = src.total_weight();
    let mut losses = Vec::with_capacity(src.n_rows());
    let mut hits = Vec::with_capacity(src.n_rows());
    let compiled = pred.compile();
    for k in 0..src.n_rows() {
        let x = src.row(k);
        let y = src.label(k).ok_or(Error::MissingLabels)?;
        let h = compiled.logit(x);
        losses.push(crate::logistic::logistic_loss(h, y));
        let p = h.tanh();
        hits.push(if p == 0.0 { 0.5 } else { flag(p.signum() as i8 == y) });
    }
    let weighted = |v: &[f64]| -> (f64, f64) {
        let mean = (0..v.len()).map(|k| src.weight(k) * v[k]).sum::<f64>() / total;
        let var = (0..v.len()).map(|k| src.weight(k) * (v[k] - mean).powi(2)).sum::<f64>() / total;
        (mean, (var / total).sqrt())
    };
    let base_loss = population_logistic_loss(src, baseline)?;
    let (loss, loss_se) = weighted(&losses);
    let (acc, acc_se) = weighted(&hits);
    let mut m = Metrics::new();
    if exact {
        put(&mut m, "population_loss", Metric::exact(loss));
        put(&mut m, "accuracy", Metric::exact(acc));
        put(&mut m, "baseline_loss", Metric::exact(base_loss));
    } else {
        put(&mut m, "population_loss", Metric::sampled(loss, loss_se));
        put(&mut m, "accuracy", Metric::sampled(acc, acc_se));
        put(&mut m, "baseline_loss", Metric::sampled(base_loss, loss_se));
    }
    Ok(m)
}

fn supervised_trial(model: &SupervisedRbm, cfg: &ExperimentConfig, learn: &SupervisedConfig, seed: u64) -> Result<TrialOutput> {
    let data = model.sample(cfg.sampling, seed)?;
    let clip = conditional_clip(model)?;
    let outcome = train_label_predictor(&data, learn, cfg.supervised.bias_mode, clip)?;
    let mut pred = outcome.predictor;
    pred.provenance.insert("seed".into(), seed.to_string());
    let truth = model.two_hop_neighborhoods();
    let exact_nodes = outcome
        .neighborhoods
        .iter()
        .filter(|r| r.set == truth[r.node])
        .count();
    let zero = crate::poly::SparsePolynomial::new(model.n_inputs());
    let baseline = fit_bias(&data, &zero, &zero, BiasMode::Scalar, learn)?;
    let mut m = if cfg.exact {
        let pop = model.exact_population()?;
        let mut m = label_metrics(&pop, &pred, &baseline, true)?;
        let bayes = bayes_label_loss(model)?;
        put(&mut m, "bayes_loss", Metric::exact(bayes));
        let excess = m["population_loss"].value - bayes;
        put(&mut m, "excess_loss", Metric::exact(excess));
        m
    } else {
        let test = model.sample(
            GibbsSchedule {
                n_samples: cfg.supervised.test_samples,
                ..cfg.sampling
            },
            derive_seed(seed, 1),
        )?;
        label_metrics(&test.compress(), &pred, &baseline, false)?
    };
    put(
        &mut m,
        "neighborhood_exact_fraction",
        Metric::exact(exact_nodes as f64 / model.n_inputs() as f64),
    );
    put(
        &mut m,
        "cap_hits",
        Metric::exact(outcome.neighborhoods.iter().filter(|r| r.cap_hit).count() as f64),
    );
    put(
        &mut m,
        "max_flagged_bins",
        Metric::exact(outcome.neighborhoods.iter().map(|r| r.max_flagged_bins).max().unwrap_or(0) as f64),
    );
    Ok(TrialOutput {
        metrics: m,
        artifacts: vec![Artifact::Text("predictor.json".into(), serde_json::to_string_pretty(&pred)?)],
    })
}

fn image_shape(n: usize, s: &SampleSettings) -> Result<(usize, usize)> {
    let side = (n as f64).sqrt().round() as usize;
    let (w, h) = match (s.width, s.height) {
        (Some(w), Some(h)) => (w, h),
        (Some(w), None) => (w, n / w.max(1)),
        (None, Some(h)) => (n / h.max(1), h),
        (None, None) => (side, side),
    };
    if w * h != n {
        return Err(Error::InvalidConfig(vec![issue(
            "sample.width",
            format!("{w}x{h} image does not hold {n} pixels"),
        )]));
    }
    Ok((w, h))
}

fn sample_run(cfg: &ExperimentConfig) -> Result<TrialOutput> {
    let path = cfg.sample.predictor.as_ref().expect("validated");
    let pred: LabelPredictor = serde_json::from_reader(File::open(path)?)?;
    let n = pred.n();
    let (w, h) = image_shape(n, &cfg.sample)?;
    let mut m = Metrics::new();
    let mut artifacts = Vec::new();
    for (name, potential, stream) in [("plus", &pred.f_plus, 0u64), ("minus", &pred.f_minus, 1)] {
        let runs = mrf_gibbs(potential, cfg.sample.sweeps, cfg.sample.per_class, derive_seed(cfg.seed, stream))?;
        let means: Vec<f64> = runs
            .last_probabilities
            .iter()
            .map(|p| p.iter().sum::<f64>() / n as f64)
            .collect();
        let (mean, se) = mean_stderr(&means);
        put(&mut m, &format!("mean_probability_{name}"), Metric::sampled(mean, se));
        let (tw, th, pixels) = tile_images(&runs.last_probabilities, h, w);
        let mut pgm = Vec::new();
        write_pgm(&mut pgm, tw, th, &pixels)?;
        artifacts.push(Artifact::Binary(format!("samples_{name}.pgm"), pgm));
    }
    Ok(TrialOutput { metrics: m, artifacts })
}

fn write_artifacts(dir: &Path, trial: usize, trials: usize, artifacts: &[Artifact]) -> Result<()> {
    let name = |n: &str| {
        if trials > 1 {
            format!("trial{trial:03}_{n}")
        } else {
            n.to_string()
        }
    };
    for a in artifacts {
        match a {
            Artifact::Text(n, s) => fs::write(dir.join(name(n)), s)?,
            Artifact::Binary(n, b) => fs::write(dir.join(name(n)), b)?,
        }
    }
    Ok(())
}

/// Runs the pipeline selected by `cfg.kind`. Trials run in parallel with seeds
/// derived from `cfg.seed` and are reported in trial order. When `out` is given,
/// `report.json`, `metrics.csv` and per-trial artifacts are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let issues = cfg.validate();
    if !issues.is_empty() {
        return Err(Error::InvalidConfig(issues));
    }
    let start = Instant::now();
    let mut timings = BTreeMap::new();
    let mut header = Metrics::new();
    let model = match &cfg.model {
        Some(spec) => {
            Some(match (cfg.kind, cfg.supervised.lambda_max, cfg.supervised.beta_min) {
                (ExperimentKind::Supervised, Some(l), Some(b)) => GeneratedModel::Supervised {
                    model: generate_admissible_supervised(spec, l, b, 10_000)?,
                },
                _ => generate_model(spec)?,
            })
        }
        None => None,
    };
    timings.insert("generate".to_string(), start.elapsed().as_secs_f64());
    let trial_seeds: Vec<u64> = (0..cfg.trials as u64).map(|t| derive_seed(cfg.seed, t)).collect();
    let t_run = Instant::now();
    let outputs: Vec<TrialOutput> = match cfg.kind {
        ExperimentKind::Structure => {
            let base = model.as_ref().expect("validated").base();
            let mut learn = cfg.structure.learn.clone();
            if let Some(frac) = cfg.structure.eta_cmi_fraction {
                let pmf = exact_visible_pmf(base)?;
                let min_cmi = base
                    .two_hop_neighborhoods()
                    .iter()
                    .enumerate()
                    .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
                    .map(|(i, j)| conditional_mutual_information(&pmf, i, j))
                    .fold(f64::INFINITY, f64::min);
                learn.eta = frac * min_cmi;
                put(&mut header, "min_true_cmi", Metric::exact(min_cmi));
            }
            put(&mut header, "eta", Metric::exact(learn.eta));
            trial_seeds
                .par_iter()
                .map(|&s| structure_trial(base, cfg, &learn, s))
                .collect::<Result<_>>()?
        }
        ExperimentKind::Distribution => {
            let base = model.as_ref().expect("validated").base();
            if cfg.exact && !enumerable(base) {
                return Err(Error::EnumerationCap {
                    needed: base.n_visible() + base.n_hidden(),
                    cap: ENUMERATION_CAP,
                });
            }
            trial_seeds
                .par_iter()
                .map(|&s| distribution_trial(base, cfg, s))
                .collect::<Result<_>>()?
        }
        ExperimentKind::Supervised => {
            let sup = model
                .as_ref()
                .and_then(GeneratedModel::supervised)
                .ok_or_else(|| Error::InvalidConfig(vec![issue("model.label_coupling", "required")]))?;
            let mut learn = cfg.supervised.learn.clone();
            if cfg.supervised.use_model_levels {
                let (lambda, beta) = sup.assumption_levels()?;
                let (alpha, _) = sup.min_coupling();
                learn.lambda = lambda;
                learn.beta_bal = beta;
                learn.alpha = alpha;
            }
            put(&mut header, "tau", Metric::exact(learn.effective_tau()));
            trial_seeds
                .par_iter()
                .map(|&s| supervised_trial(sup, cfg, &learn, s))
                .collect::<Result<_>>()?
        }
        ExperimentKind::Sample => vec![sample_run(cfg)?],
    };
    timings.insert("trials".to_string(), t_run.elapsed().as_secs_f64());
    let trials: Vec<Metrics> = outputs.iter().map(|o| o.metrics.clone()).collect();
    let mut metrics = aggregate(&trials);
    metrics.extend(header);
    timings.insert("total".to_string(), start.elapsed().as_secs_f64());
    let report = ExperimentReport {
        kind: cfg.kind,
        seed: cfg.seed,
        config: cfg.clone(),
        metrics,
        trials,
        timings,
    };
    report.check_finite()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for (t, o) in outputs.iter().enumerate() {
            write_artifacts(dir, t, outputs.len(), &o.artifacts)?;
        }
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        report.write_metrics_csv(File::create(dir.join("metrics.csv"))?)?;
        if let Some(m) = &model {
            fs::write(dir.join("model.json"), serde_json::to_string_pretty(m)?)?;
        }
    }
    Ok(report)
}
