//! Command-line interface: dataset simulation and statistics, training,
//! evaluation, prediction, gradient checking, time perturbation, and dataset
//! fetching.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

mod config;
mod prompts;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tppkit::data::{
    dataset_stats, load_dataset, save_dataset, split_dataset, validate_dataset, Dataset,
};
use tppkit::error::{DataError, ModelError, TrainError};
use tppkit::model::{load_checkpoint, save_checkpoint, Model};
use tppkit::synth::{
    perturb_times, simulate_hawkes_dataset, simulate_poisson_dataset, HawkesParams, SimConfig,
    TypeNaming,
};
use tppkit::train::{evaluate, reference_gradcheck, train_loop, Metrics};

use config::{parse_kv, parse_kv_file, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "tppkit", version, about = "Marked temporal point process engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a dataset and write a checkpoint plus a metrics log
    Train(TrainArgs),
    /// Compute metrics for a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Generate a synthetic dataset
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Print summary statistics of a dataset
    Stats(StatsArgs),
    /// Emit next-event predictions for every sequence prefix
    Predict(PredictArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Randomly perturb event times
    Perturb(PerturbArgs),
    /// Download a dataset JSON and verify its content hash
    Fetch(FetchArgs),
}

#[derive(Args)]
struct CommonConfig {
    /// Key-value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, e.g. --set learning_rate=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl CommonConfig {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply(&parse_kv_file(path)?)?;
        }
        if !self.sets.is_empty() {
            let joined = self.sets.join("\n");
            cfg.apply(&parse_kv(&joined)?)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset JSON path
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint and logs
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Start from an existing checkpoint instead of random weights
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Prompt template override file
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which split to evaluate: all, train, val, or test
    #[arg(long, default_value = "all")]
    split: String,
    /// Write the metrics JSON here as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonConfig,
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Homogeneous Poisson superposition
    Poisson(PoissonArgs),
    /// Multivariate exponential Hawkes via thinning
    Hawkes(HawkesArgs),
}

#[derive(Args)]
struct PoissonArgs {
    /// Per-type event rate
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 1)]
    types: usize,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 100)]
    seqs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "textual")]
    naming: String,
    #[arg(long, default_value_t = 100_000)]
    max_events: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HawkesArgs {
    /// Comma-separated base rates, one per type
    #[arg(long)]
    mu: String,
    /// Excitation: a scalar (fills the matrix) or rows like "0.3,0.1;0.2,0.4"
    #[arg(long)]
    excite: String,
    /// Shared exponential decay rate
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 100)]
    seqs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "textual")]
    naming: String,
    #[arg(long, default_value_t = 100_000)]
    max_events: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write JSON lines here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 3)]
    types: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    data: PathBuf,
    /// Perturbation ratio applied to each inter-event gap
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long)]
    url: String,
    /// Expected SHA-256 of the payload, hex-encoded
    #[arg(long)]
    sha256: String,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig { .. } => CliError::Usage(e.to_string()),
            ModelError::NonFiniteActivation { .. }
            | ModelError::NonFiniteObjective { .. }
            | ModelError::NonFiniteGradient { .. }
            | ModelError::ZeroIntensity { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::EmptyTrainSplit => CliError::Data(e.to_string()),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Simulate(cmd) => cmd_simulate(cmd),
        Command::Stats(args) => cmd_stats(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Perturb(args) => cmd_perturb(args),
        Command::Fetch(args) => cmd_fetch(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}

fn load_and_validate(path: &Path) -> Result<Dataset, CliError> {
    let ds = load_dataset(path)?;
    validate_dataset(&ds)?;
    Ok(ds)
}

fn split_by_name(ds: &Dataset, cfg: &RunConfig, which: &str) -> Result<Dataset, CliError> {
    if which == "all" {
        return Ok(ds.clone());
    }
    let (train, val, test) = split_dataset(ds, cfg.split_ratios, cfg.split_seed)?;
    match which {
        "train" => Ok(train),
        "val" => Ok(val),
        "test" => Ok(test),
        other => Err(CliError::Usage(format!("unknown split {other:?}"))),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = args.common.resolve()?;
    let ds = load_and_validate(&args.data)?;

    // resolve the prompt text for this dataset
    if cfg.prompt_enabled && cfg.model.prompt.text.is_empty() {
        let overrides = match &args.prompt_file {
            Some(p) => prompts::load_overrides(p).map_err(CliError::Usage)?,
            None => BTreeMap::new(),
        };
        cfg.model.prompt.text = prompts::prompt_for(&ds.name, cfg.model.prompt.order, &overrides);
    }
    cfg.model.prompt.enabled = cfg.prompt_enabled;

    let (train, val, _test) = split_dataset(&ds, cfg.split_ratios, cfg.split_seed)?;

    let mut model = match &args.init_from {
        Some(path) => load_checkpoint(path)?,
        None => Model::init(&ds.types, cfg.model.clone(), &ds, cfg.train.seed)?,
    };
    if let (Some(lora_cfg), None) = (&cfg.lora, &model.lora) {
        model.attach_lora(lora_cfg.clone(), cfg.train.seed ^ 0x10ad)?;
    }

    let outcome = train_loop(model, &train, &val, &cfg.train)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let ckpt_path = args.out.join("checkpoint.json");
    save_checkpoint(&outcome.model, &ckpt_path)?;
    let log_path = args.out.join("metrics.jsonl");
    let mut log = String::new();
    for record in &outcome.history {
        log.push_str(&serde_json::to_string(record).expect("record serializes"));
        log.push('\n');
    }
    std::fs::write(&log_path, log)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", log_path.display())))?;
    println!(
        "trained {} epochs (best epoch {}); checkpoint at {}",
        outcome.history.len(),
        outcome.best_epoch,
        ckpt_path.display()
    );
    Ok(())
}

/// Stable metadata describing how the metrics were computed.
#[derive(Serialize)]
struct Conventions {
    ll_normalization: &'static str,
    eval_events: &'static str,
    time_target: String,
    mc_samples: usize,
    mc_seed: u64,
}

#[derive(Serialize)]
struct EvalOutput {
    ll_per_event: f64,
    accuracy: f64,
    rmse: f64,
    num_events: usize,
    num_sequences: usize,
    num_predicted: usize,
    conventions: Conventions,
}

fn eval_output(metrics: &Metrics, cfg: &RunConfig, model: &Model) -> EvalOutput {
    EvalOutput {
        ll_per_event: metrics.ll_per_event,
        accuracy: metrics.accuracy,
        rmse: metrics.rmse,
        num_events: metrics.num_events,
        num_sequences: metrics.num_sequences,
        num_predicted: metrics.num_predicted,
        conventions: Conventions {
            ll_normalization: "total log-likelihood divided by predicted events (2..n)",
            eval_events: "2..n",
            time_target: format!("{:?}", model.config.time_target).to_lowercase(),
            mc_samples: cfg.train.mc.samples_per_interval,
            mc_seed: cfg.train.mc.seed,
        },
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.common.resolve()?;
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = load_and_validate(&args.data)?;
    let subset = split_by_name(&ds, &cfg, &args.split)?;
    let metrics = evaluate(&model, &subset, &cfg.train.mc)?;
    let out = eval_output(&metrics, &cfg, &model);
    let text = serde_json::to_string_pretty(&out).expect("metrics serialize");
    println!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, &text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn parse_mu(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--mu: {e}")))
}

fn parse_excite(text: &str, k: usize) -> Result<Array2<f64>, CliError> {
    if !text.contains(',') && !text.contains(';') {
        let v: f64 =
            text.trim().parse().map_err(|e| CliError::Usage(format!("--excite: {e}")))?;
        return Ok(Array2::from_elem((k, k), v));
    }
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--excite: {e}")))?;
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::Usage(format!("--excite must be {k}x{k}")));
    }
    Ok(Array2::from_shape_fn((k, k), |(r, c)| rows[r][c]))
}

fn parse_naming(text: &str) -> Result<TypeNaming, CliError> {
    match text {
        "textual" => Ok(TypeNaming::Textual),
        "ordinal" => Ok(TypeNaming::Ordinal),
        other => Err(CliError::Usage(format!("unknown naming {other:?}"))),
    }
}

fn cmd_simulate(cmd: SimulateCmd) -> Result<(), CliError> {
    let (ds, out) = match cmd {
        SimulateCmd::Poisson(a) => {
            if a.rate <= 0.0 || a.types == 0 || a.horizon < 0.0 {
                return Err(CliError::Usage("rate, types, horizon must be positive".into()));
            }
            let sim = SimConfig { horizon: a.horizon, max_events: a.max_events, seed: a.seed };
            let naming = parse_naming(&a.naming)?;
            (
                simulate_poisson_dataset(a.rate, a.types, a.seqs, &sim, naming, "poisson-synthetic"),
                a.out,
            )
        }
        SimulateCmd::Hawkes(a) => {
            let mu = parse_mu(&a.mu)?;
            let excite = parse_excite(&a.excite, mu.len())?;
            let params = HawkesParams::new(mu, excite, a.beta)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let sim = SimConfig { horizon: a.horizon, max_events: a.max_events, seed: a.seed };
            let naming = parse_naming(&a.naming)?;
            (
                simulate_hawkes_dataset(&params, a.seqs, &sim, naming, "hawkes-synthetic"),
                a.out,
            )
        }
    };
    save_dataset(&ds, &out)?;
    let stats = dataset_stats(&ds)?;
    println!(
        "wrote {} with {} sequences, {} events",
        out.display(),
        stats.num_sequences,
        stats.num_events
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let ds = load_and_validate(&args.data)?;
    let st = dataset_stats(&ds)?;
    println!("{}/{}/{}/{:.2}", st.num_types, st.num_events, st.num_sequences, st.avg_seq_length);
    println!("{}", serde_json::to_string(&st).expect("stats serialize"));
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow {
    event_index: usize,
    pred_type: usize,
    pred_time: f64,
    true_type: Option<usize>,
    true_time: Option<f64>,
}

#[derive(Serialize)]
struct PredictionLine {
    id: String,
    predictions: Vec<PredictionRow>,
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = load_and_validate(&args.data)?;
    let mc = tppkit::tpp::MCConfig::default();
    let mut lines = String::new();
    for seq in &ds.sequences {
        let eval = model.evaluate_sequence(seq, &mc)?;
        let mut predictions = Vec::with_capacity(seq.events.len());
        for i in 1..seq.events.len() {
            predictions.push(PredictionRow {
                event_index: i,
                pred_type: eval.pred_types[i - 1],
                pred_time: eval.pred_times[i - 1],
                true_type: Some(seq.events[i].type_id),
                true_time: Some(seq.events[i].time),
            });
        }
        let (next_type, next_time) = model.predict_next(seq)?;
        predictions.push(PredictionRow {
            event_index: seq.events.len(),
            pred_type: next_type,
            pred_time: next_time,
            true_type: None,
            true_time: None,
        });
        let line = PredictionLine { id: seq.id.clone(), predictions };
        lines.push_str(&serde_json::to_string(&line).expect("prediction serializes"));
        lines.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, lines)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let reports = reference_gradcheck(args.dim, args.layers, args.heads, args.types)?;
    let mut worst = 0.0f64;
    for (label, report) in &reports {
        println!(
            "{label}: max relative error {:.3e} over {} coordinates ({} parameters), worst at {}",
            report.max_rel_error, report.num_coords, report.num_params, report.worst_param
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst < args.tolerance {
        println!("gradcheck passed: max relative error {worst:.3e} < {:.1e}", args.tolerance);
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} >= {:.1e}",
            args.tolerance
        )))
    }
}

fn cmd_perturb(args: PerturbArgs) -> Result<(), CliError> {
    if args.ratio < 0.0 {
        return Err(CliError::Usage("ratio must be non-negative".into()));
    }
    let ds = load_and_validate(&args.data)?;
    let perturbed = Dataset {
        sequences: ds
            .sequences
            .iter()
            .enumerate()
            .map(|(i, s)| perturb_times(s, args.ratio, args.seed.wrapping_add(i as u64)))
            .collect(),
        ..ds
    };
    save_dataset(&perturbed, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_fetch(args: FetchArgs) -> Result<(), CliError> {
    use sha2::{Digest, Sha256};
    use std::io::Read;
    let response = ureq::get(&args.url)
        .call()
        .map_err(|e| CliError::Data(format!("fetch {}: {e}", args.url)))?;
    let mut bytes = Vec::new();
    response
        .into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::Data(format!("read body: {e}")))?;
    let digest = hex_string(&Sha256::digest(&bytes));
    if !digest.eq_ignore_ascii_case(&args.sha256) {
        return Err(CliError::Data(format!(
            "content hash mismatch: expected {}, got {digest}",
            args.sha256
        )));
    }
    std::fs::write(&args.out, &bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", args.out.display())))?;
    println!("fetched {} bytes to {}", bytes.len(), args.out.display());
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
