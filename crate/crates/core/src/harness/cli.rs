//! `sabench` command line.

use std::ffi::OsString;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{load_samples, run_experiment, score, ExperimentConfig, HarnessError, MetricReport};
use crate::attribution::{AttributionFunction, FunctionKind};
use crate::datagen::{generate_dataset, grid, load_dataset, GenConfig};
use crate::explainer::{explain, RenderMode, SampleSize};
use crate::metrics::{DEFAULT_BIN_GRID, DEFAULT_EPS};
use crate::predictor::{serve, BridgeOptions, ExternalPredictor, Handshake, Predictor, SceneLookupOracle, PROTOCOL_VERSION};
use crate::scene::DatasetKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sabench", version, about = "Synthetic attribution benchmark: datasets, explanations, metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset of scenes, labels and ground-truth maps.
    Generate(GenerateArgs),
    /// Explain one dataset sample and score it against its ground truth.
    Explain(ExplainArgs),
    /// Score a saliency grid against a ground-truth grid.
    Evaluate(EvaluateArgs),
    /// Run experiment 1, 2 or 3.
    Experiment(ExperimentArgs),
    /// Answer bridge requests with the exact oracle (test double).
    #[command(hide = true)]
    ServeOracle(ServeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "shape")]
    dataset: DatasetKind,
    /// Training images.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Validation images.
    #[arg(long, default_value_t = 200)]
    n_val: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sample id such as `val_00003`; defaults to the first evaluation sample.
    #[arg(long)]
    sample: Option<String>,
    #[arg(long, default_value = "suum")]
    function: FunctionKind,
    #[arg(long, default_value = "full")]
    sample_size: SampleSize,
    /// clip or abs; defaults to abs for class and clip otherwise.
    #[arg(long)]
    render: Option<RenderMode>,
    /// Plan seed for partial sample sizes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BIN_GRID)]
    bins: usize,
    #[arg(long)]
    bridge_cmd: Option<String>,
    /// Where to write the explanation grid.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BIN_GRID)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
    number: u8,
    /// TOML or JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    dataset: Option<Vec<DatasetKind>>,
    #[arg(long, value_delimiter = ',')]
    function: Option<Vec<FunctionKind>>,
    /// Evaluation samples per dataset.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, alias = "sample-size", value_delimiter = ',')]
    sample_sizes: Option<Vec<SampleSize>>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    render: Option<RenderMode>,
    /// Generated dataset to evaluate instead of freshly sampled scenes.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    bridge_cmd: Option<String>,
    /// Seconds to wait for each bridge response.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "suum")]
    function: FunctionKind,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "shape,color")]
    dataset: Vec<DatasetKind>,
    #[arg(long, default_value_t = super::DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Answer every image with this value instead of the oracle.
    #[arg(long)]
    constant: Option<f64>,
    /// Exit abruptly on the request after this many, as a crashed model would.
    #[arg(long)]
    max_requests: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Explain(a) => explain_one(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
        Command::ServeOracle(a) => serve_oracle(a),
    }
}

fn generate(a: GenerateArgs) -> Result<(), HarnessError> {
    let config = GenConfig::new(a.dataset).with_counts(a.n, a.n_val).with_seed(a.seed);
    let manifest = generate_dataset(&config, &a.out)?;
    println!("wrote {} samples to {}", manifest.records.len(), a.out.display());
    Ok(())
}

fn explain_one(a: ExplainArgs) -> Result<(), HarnessError> {
    let dataset = load_dataset(&a.data)?;
    let records = dataset.evaluation_records();
    let record = match &a.sample {
        Some(id) => dataset
            .manifest
            .records
            .iter()
            .find(|r| &r.sample_id() == id)
            .ok_or_else(|| HarnessError::Config(format!("no sample `{id}` in {}", a.data.display())))?,
        None => records.first().copied().ok_or_else(|| HarnessError::Config("dataset is empty".into()))?,
    };
    let sample = dataset.load_record(record)?;
    let render = a.render.unwrap_or(RenderMode::for_function(a.function));
    let scene = &sample.record.scene;
    let ex = match &a.bridge_cmd {
        Some(cmd) => {
            let p = ExternalPredictor::spawn(cmd, BridgeOptions::default())?;
            explain(&sample.image, scene, &p, a.sample_size, a.seed, render)?
        }
        None => {
            let p = crate::predictor::OraclePredictor::new(scene.clone(), AttributionFunction::new(a.function));
            explain(&sample.image, scene, &p, a.sample_size, a.seed, render)?
        }
    };
    if let Some(out) = &a.out {
        grid::write(out, &ex.map)?;
    }
    let gt = sample
        .gt_maps
        .get(&a.function)
        .ok_or_else(|| HarnessError::Config(format!("no {} ground truth for {}", a.function, record.sample_id())))?;
    let (emd, kl) = score(gt, &ex.map, a.bins, DEFAULT_EPS)?;
    let summary = serde_json::json!({
        "sample_id": record.sample_id(),
        "function": a.function,
        "sample_size": ex.plan.sample_size,
        "coefficients": ex.fit.coefficients,
        "intercept": ex.fit.intercept,
        "emd": emd,
        "kl": kl,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<(), HarnessError> {
    let gt = grid::read(&a.gt)?;
    let map = grid::read(&a.map)?;
    let (emd, kl) = score(&gt, &map, a.bins, a.eps)?;
    println!("{}", serde_json::json!({ "emd": emd, "kl": kl }));
    Ok(())
}

fn read_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

fn experiment_config(a: ExperimentArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut c = match &a.config {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::new(a.number),
    };
    c.experiment = a.number;
    if let Some(v) = a.dataset {
        c.datasets = v;
    }
    if let Some(v) = a.function {
        c.functions = v;
    }
    if let Some(v) = a.n {
        c.n_samples = v;
    }
    if let Some(v) = a.sample_sizes {
        c.sample_sizes = v;
    }
    if c.experiment == 1 && c.sample_sizes.is_empty() {
        c.sample_sizes = ExperimentConfig::default_sweep();
    }
    if let Some(v) = a.bins {
        c.bins = v;
    }
    if let Some(v) = a.eps {
        c.eps = v;
    }
    if let Some(v) = a.render {
        c.render = Some(v);
    }
    if a.data.is_some() {
        c.data_dir = a.data;
    }
    if a.bridge_cmd.is_some() {
        c.bridge_cmd = a.bridge_cmd;
    }
    if let Some(v) = a.timeout {
        c.bridge_timeout_secs = v;
    }
    if a.out.is_some() {
        c.out_dir = a.out;
    }
    if let Some(v) = a.seed {
        c.master_seed = v;
    }
    c.resume |= a.resume;
    Ok(c)
}

fn print_report(out: &mut impl Write, report: &MetricReport) -> std::io::Result<()> {
    writeln!(out, "function  dataset  size   n     emd_mean  emd_median  kl_mean   kl_median")?;
    for a in &report.aggregates {
        writeln!(
            out,
            "{:<9} {:<8} {:<6} {:<5} {:<9.4} {:<11.4} {:<9.4} {:.4}",
            a.function.name(),
            a.dataset.name(),
            a.sample_size.to_string(),
            a.n,
            a.emd_mean,
            a.emd_median,
            a.kl_mean,
            a.kl_median
        )?;
    }
    for b in &report.baseline {
        writeln!(out, "baseline {} {}: emd {:.4} kl {:.4}", b.function, b.dataset, b.emd_mean, b.kl_mean)?;
    }
    for g in &report.agreement {
        let acc = g.accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        writeln!(out, "agreement {} {}: mae {:.4} accuracy {acc}", g.function, g.dataset, g.mae)?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<(), HarnessError> {
    let config = experiment_config(a)?;
    let report = run_experiment(&config)?;
    let mut out = std::io::stdout().lock();
    // a closed pipe on stdout is not a failure; the reports are on disk
    let _ = print_report(&mut out, &report);
    if let Some(dir) = &config.out_dir {
        let _ = writeln!(out, "reports written to {}", dir.display());
    }
    Ok(())
}
fn serve_oracle(a: ServeArgs) -> Result<(), HarnessError> {
    let handshake = Handshake {
        proto: PROTOCOL_VERSION,
        name: format!("oracle-{}", a.function),
        is_classifier: a.function.is_classifier(),
        raw_logit: false,
    };
    let stdin = std::io::stdin().lock();
    let stdout = BufWriter::new(std::io::stdout().lock());
    let mut answered = 0usize;
    let mut budget = move || {
        if a.max_requests.is_some_and(|max| answered >= max) {
            std::process::exit(EXIT_RUNTIME);
        }
        answered += 1;
    };
    let served = if let Some(v) = a.constant {
        serve(stdin, stdout, &handshake, |images| {
            budget();
            Ok(vec![v; images.len()])
        })
    } else {
        let mut c = ExperimentConfig::new(2);
        c.data_dir = a.data;
        c.datasets = a.dataset;
        c.functions = vec![a.function];
        c.n_samples = a.n;
        c.master_seed = a.seed;
        // a data dir keeps its own dataset kind; scenes of other kinds never match
        let scenes = load_samples(&c)?.into_iter().map(|s| s.scene).collect();
        let oracle = SceneLookupOracle::new(scenes, AttributionFunction::new(a.function))?;
        serve(stdin, stdout, &handshake, |images| {
            budget();
            oracle.predict_batch(images).map_err(|e| e.to_string())
        })
    };
    served.map_err(|e| HarnessError::io("<stdio>", e))?;
    let _ = std::io::stdout().flush();
    Ok(())
}
