use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rbmlearn::distribution::{distribution_from_structure, mrf_pmf, skl_divergence, tv_distance_exact, ClipSpec, MomentSource};
use rbmlearn::harness::{
    derive_seed, generate_model, image_dataset, read_dataset, read_idx_images, read_idx_labels, run_experiment, write_dataset,
    ExperimentConfig, ExperimentKind, GeneratedModel, GeneratorSpec, ImagePipeline, Metric, Metrics,
};
use rbmlearn::logistic::logistic_loss;
use rbmlearn::rbm::{exact_visible_pmf, gibbs_sample_chains, norm_bounds, GibbsSchedule};
use rbmlearn::structure::{recover_structure, NeighborhoodMap, StructureConfig};
use rbmlearn::supervised::{clip_from_lambda1, train_label_predictor, BiasMode, LabelPredictor, SupervisedConfig};
use rbmlearn::{SpinDataset, SpinSource};

/// Learning RBMs and their visible marginals from samples.
#[derive(Parser)]
#[command(name = "rbmlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML document for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "rbmlearn-out")]
    out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long, global = true, env = "RBMLEARN_THREADS")]
    threads: Option<usize>,
    /// Use exhaustive enumeration for oracle metrics where the model is small enough.
    #[arg(long, global = true)]
    exact: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic model from a generator spec (`--config`).
    Generate,
    /// Draw samples from a model, or class-conditional images from a predictor.
    Sample(SampleArgs),
    /// Recover two-hop neighborhoods from a dataset.
    Structure(DataArgs),
    /// Learn the MRF potential of a dataset on given neighborhoods.
    Distill(DistillArgs),
    /// Train a label predictor from labeled spins or IDX images.
    TrainSupervised(SupervisedData),
    /// Evaluate a trained label predictor.
    EvalSupervised(EvalArgs),
    /// Run a full experiment described by `--config`.
    Report,
}

#[derive(Args)]
struct SampleArgs {
    /// Model JSON written by `generate`.
    #[arg(long, conflicts_with = "predictor", required_unless_present = "predictor")]
    model: Option<PathBuf>,
    /// Predictor JSON written by `train-supervised`.
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    #[arg(long, default_value_t = 2)]
    thin: usize,
    #[arg(long, default_value_t = 8)]
    chains: usize,
    /// Gibbs sweeps per chain when sampling a predictor.
    #[arg(long, default_value_t = 6000)]
    sweeps: usize,
    #[arg(long, default_value_t = 8)]
    per_class: usize,
}

#[derive(Args)]
struct DataArgs {
    /// Spin dataset CSV.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    data: PathBuf,
    /// `structure.json` written by `structure`.
    #[arg(long)]
    neighborhoods: PathBuf,
    /// Clip level is `tanh(lambda1)`; taken from `--model` when given.
    #[arg(long)]
    lambda1: Option<f64>,
    /// True model, for reporting divergences.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SupervisedData {
    /// Labeled spin dataset CSV.
    #[arg(long, conflicts_with_all = ["images", "labels"], required_unless_present = "images")]
    data: Option<PathBuf>,
    /// IDX image file.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictor: PathBuf,
    #[command(flatten)]
    data: SupervisedData,
}

/// `train-supervised` settings.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    learn: SupervisedConfig,
    bias_mode: BiasMode,
    /// Clip conditional means at `tanh(lambda1)`.
    lambda1: Option<f64>,
    images: ImagePipeline,
}

const DEFAULT_LAMBDA1: f64 = 2.0;

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| {
        rbmlearn::Error::InvalidConfig(vec![rbmlearn::error::ConfigIssue {
            path: "<document>".into(),
            message: e.message().to_string(),
        }])
        .into()
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn load_dataset(path: &Path) -> anyhow::Result<SpinDataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_dataset(f)?)
}

fn supervised_dataset(src: &SupervisedData, pipeline: &ImagePipeline, seed: u64) -> anyhow::Result<SpinDataset> {
    match (&src.data, &src.images, &src.labels) {
        (Some(d), _, _) => load_dataset(d),
        (None, Some(i), Some(l)) => Ok(image_dataset(&read_idx_images(i)?, &read_idx_labels(l)?, pipeline, seed)?),
        _ => bail!("pass --data or both --images and --labels"),
    }
}

fn print_metrics(m: &Metrics) {
    for (k, v) in m {
        match v.stderr {
            Some(se) => println!("{k} = {:.6} ± {se:.6} ({:?})", v.value, v.method),
            None => println!("{k} = {:.6} ({:?})", v.value, v.method),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Generate => {
            let path = cli.config.as_ref().context("generate needs --config with a generator spec")?;
            let mut spec: GeneratorSpec = read_toml(path)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let model = generate_model(&spec)?;
            write_json(&out.join("model.json"), &model)?;
            let b = norm_bounds(model.base());
            println!("lambda1 = {:.6}, lambda2 = {:.6}", b.lambda1, b.lambda2);
        }
        Command::Sample(args) => {
            if let Some(p) = &args.predictor {
                let mut cfg = match &cli.config {
                    Some(c) => ExperimentConfig::from_toml_file(c)?,
                    None => ExperimentConfig::new(ExperimentKind::Sample),
                };
                cfg.kind = ExperimentKind::Sample;
                cfg.seed = seed;
                cfg.sample.predictor = Some(p.clone());
                cfg.sample.sweeps = args.sweeps;
                cfg.sample.per_class = args.per_class;
                let report = run_experiment(&cfg, Some(out))?;
                print_metrics(&report.metrics);
            } else {
                let model: GeneratedModel = read_json(args.model.as_ref().expect("required by clap"))?;
                let schedule = GibbsSchedule {
                    burn_in: args.burn_in,
                    n_samples: args.n_samples,
                    thin: args.thin,
                    chains: args.chains,
                };
                let data = match &model {
                    GeneratedModel::Plain { model } => gibbs_sample_chains(model, schedule, seed),
                    GeneratedModel::Supervised { model } => model.sample(schedule, seed)?,
                };
                write_dataset(&data, File::create(out.join("samples.csv"))?)?;
                println!("wrote {} samples of {} spins", data.m(), data.n());
            }
        }
        Command::Structure(args) => {
            let mut cfg: StructureConfig = match &cli.config {
                Some(c) => read_toml(c)?,
                None => StructureConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let data = load_dataset(&args.data)?;
            let map = recover_structure(&data, &cfg)?;
            write_json(&out.join("structure.json"), &map)?;
            map.write_csv(File::create(out.join("neighborhoods.csv"))?)?;
            println!("{} edges; sample bound met: {}", map.edges().len(), map.sample_check.adequate);
        }
        Command::Distill(args) => {
            let data = load_dataset(&args.data)?;
            let map: NeighborhoodMap = read_json(&args.neighborhoods)?;
            let model: Option<GeneratedModel> = args.model.as_ref().map(|p| read_json(p)).transpose()?;
            let clip = match (args.lambda1, &model) {
                (Some(l), _) => clip_from_lambda1(l)?,
                (None, Some(m)) => ClipSpec::for_model(m.base())?,
                (None, None) => clip_from_lambda1(DEFAULT_LAMBDA1)?,
            };
            let potential = distribution_from_structure(&data.compress(), &map, clip)?;
            write_json(&out.join("potential.json"), &potential.to_record())?;
            println!("{} terms", potential.len());
            if let (Some(m), true) = (&model, cli.exact) {
                let base = m.base();
                let truth = base.visible_potential(1e-12)?;
                let mut metrics = Metrics::new();
                let skl = skl_divergence(&truth, &potential, &MomentSource::Exact)?.value;
                let tv = tv_distance_exact(&exact_visible_pmf(base)?, &mrf_pmf(&potential)?)?;
                metrics.insert("l1_coefficient_error".into(), Metric::exact(truth.l1_distance(&potential)));
                metrics.insert("skl".into(), Metric::exact(skl));
                metrics.insert("tv".into(), Metric::exact(tv));
                write_json(&out.join("distill_metrics.json"), &metrics)?;
                print_metrics(&metrics);
            }
        }
        Command::TrainSupervised(src) => {
            let cfg: TrainConfig = match &cli.config {
                Some(c) => read_toml(c)?,
                None => TrainConfig::default(),
            };
            let data = supervised_dataset(src, &cfg.images, seed)?;
            let clip = clip_from_lambda1(cfg.lambda1.unwrap_or(DEFAULT_LAMBDA1))?;
            let outcome = train_label_predictor(&data, &cfg.learn, cfg.bias_mode, clip)?;
            let mut pred = outcome.predictor;
            pred.provenance.insert("seed".into(), seed.to_string());
            pred.provenance.insert("images".into(), serde_json::to_string(&cfg.images)?);
            write_json(&out.join("predictor.json"), &pred)?;
            write_json(&out.join("neighborhoods.json"), &outcome.neighborhoods)?;
            let caps = outcome.neighborhoods.iter().filter(|r| r.cap_hit).count();
            if caps > 0 {
                log::warn!("{caps} neighborhoods stopped at the T* cap");
            }
            println!(
                "trained on {} samples; {} + {} potential terms; bias {:.6}",
                data.m(),
                pred.f_plus.len(),
                pred.f_minus.len(),
                pred.bias
            );
        }
        Command::EvalSupervised(args) => {
            let pred: LabelPredictor = read_json(&args.predictor)?;
            let pipeline: ImagePipeline = match pred.provenance.get("images") {
                Some(s) => serde_json::from_str(s)?,
                None => ImagePipeline::default(),
            };
            let data = supervised_dataset(&args.data, &pipeline, derive_seed(seed, 1))?;
            let metrics = evaluate(&pred, &data)?;
            write_json(&out.join("eval.json"), &metrics)?;
            print_metrics(&metrics);
        }
        Command::Report => {
            let path = cli.config.as_ref().context("report needs --config with an experiment document")?;
            let mut cfg = ExperimentConfig::from_toml_file(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.exact |= cli.exact;
            let report = run_experiment(&cfg, Some(out))?;
            print_metrics(&report.metrics);
        }
    }
    Ok(())
}

/// Test loss and accuracy of `pred`, and the loss of the constant predictor that
/// matches the training label mean.
fn evaluate(pred: &LabelPredictor, data: &SpinDataset) -> anyhow::Result<Metrics> {
    let labels = data.labels().context("evaluation data has no labels")?;
    if data.n() != pred.n() {
        bail!("predictor expects {} inputs, data has {}", pred.n(), data.n());
    }
    let m = data.m() as f64;
    let compiled = pred.compile();
    let mut losses = Vec::with_capacity(data.m());
    let mut hits = Vec::with_capacity(data.m());
    for (k, &y) in labels.iter().enumerate() {
        let h = compiled.logit(data.row(k));
        losses.push(logistic_loss(h, y));
        hits.push(if h == 0.0 { 0.5 } else if (h > 0.0) == (y > 0) { 1.0 } else { 0.0 });
    }
    let train_mean: f64 = match pred.provenance.get("train_label_mean") {
        Some(s) => s.parse()?,
        None => labels.iter().map(|&y| y as f64).sum::<f64>() / m,
    };
    let c = train_mean.clamp(-1.0 + 1.0 / m, 1.0 - 1.0 / m).atanh();
    let base: Vec<f64> = labels.iter().map(|&y| logistic_loss(c, y)).collect();
    let stat = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / m;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        Metric::sampled(mean, (var / m).sqrt())
    };
    let mut out = Metrics::new();
    out.insert("loss".into(), stat(&losses));
    out.insert("accuracy".into(), stat(&hits));
    out.insert("baseline_loss".into(), stat(&base));
    out.insert("samples".into(), Metric::exact(m));
    Ok(out)
}

#[derive(Serialize)]
struct ErrorDocument {
    error: String,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    issues: Vec<rbmlearn::error::ConfigIssue>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, issues) = match e.downcast_ref::<rbmlearn::Error>() {
                Some(rbmlearn::Error::InvalidConfig(issues)) => ("invalid-config".to_string(), issues.clone()),
                Some(inner) => (inner.kind().to_string(), Vec::new()),
                None => ("runtime".to_string(), Vec::new()),
            };
            let doc = ErrorDocument {
                error: kind,
                message: format!("{e:#}"),
                issues,
            };
            eprintln!("{}", serde_json::to_string_pretty(&doc).expect("error document serializes"));
            ExitCode::from(2)
        }
    }
}
