use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurocube::ablation::{render_table, run_ablation, AblationAxis, AblationSettings};
use neurocube::datagen::{generate, generate_test, SamplingStrategy, TrainingSet};
use neurocube::nn::{Model, ModelConfig};
use neurocube::oracle::ColumnStore;
use neurocube::schema::{brightkite_like, Schema};
use neurocube::service::{serve, AppState, ServeOptions};
use neurocube::synth;
use neurocube::training::{evaluate_rae, train_with, CheckpointPolicy, TrainPlan};
use neurocube::{Error, Result};

/// Train compact neural networks that answer range-filtered group-by queries.
#[derive(Parser)]
#[command(name = "neurocube", version, about)]
#[command(after_help = "Set NEUROCUBE_LOG (error, warn, info, debug, trace) to control log verbosity.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV together with its schema.
    Synth(SynthArgs),
    /// Bin a CSV file into a store cache.
    Ingest(IngestArgs),
    /// Sample dashboard states and expand them into training samples.
    Generate(GenerateArgs),
    /// Train a model on generated sets.
    Train(TrainArgs),
    /// Report the held-out RAE of a model.
    Eval(EvalArgs),
    /// Write a model's portable JSON export.
    Export(ExportArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
    /// Sweep one experimental factor on synthetic data and print a table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Splom,
    Checkins,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "splom")]
    kind: SynthKind,
    #[arg(long, default_value_t = 100_000)]
    rows: usize,
    /// Bins per attribute (splom only).
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Schema JSON output path.
    #[arg(long)]
    schema_out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Store cache output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    /// Uniform lower bound, then uniform upper bound.
    #[value(name = "lower-bound-first", alias = "1")]
    LowerBoundFirst,
    /// Uniform length, then uniform position.
    #[value(name = "length-first", alias = "2")]
    LengthFirst,
}

impl From<Strategy> for SamplingStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::LowerBoundFirst => SamplingStrategy::LowerBoundFirst,
            Strategy::LengthFirst => SamplingStrategy::LengthFirst,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Store cache written by `ingest`.
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    states: usize,
    #[arg(long, value_enum, default_value = "length-first")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training set output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the held-out set (a tenth of the states, derived seed).
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// `[16, 8, 2, 8, 16]` towers on every attribute, regressor `[120, 60]`.
    Splom,
    /// Month, day-of-week, hour and 20x20 grid towers, regressor `[220]`.
    Brightkite,
}

#[derive(Clone, Copy, ValueEnum)]
enum Checkpoint {
    Best,
    Last,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Model config JSON; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "splom")]
    preset: Preset,
    #[arg(long, default_value_t = 1000)]
    epochs: u32,
    /// Epochs trained with Adam before switching to SGD.
    #[arg(long, default_value_t = 15)]
    adam_epochs: u32,
    #[arg(long, default_value_t = 8)]
    states_per_batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    eval_every: u32,
    #[arg(long, value_enum, default_value = "best")]
    checkpoint: Checkpoint,
    /// Stop after this many seconds (checked at epoch ends).
    #[arg(long)]
    time_limit: Option<f64>,
    /// Model output path; with --repeat, `-<i>` is inserted before the extension.
    #[arg(long)]
    out: PathBuf,
    /// NDJSON training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Train this many times with seeds seed, seed+1, ... and summarize the RAEs.
    #[arg(long, default_value_t = 1)]
    repeat: u32,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Store cache enabling exact (oracle) answers.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Allowed CORS origin (default: any).
    #[arg(long)]
    cors_origin: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    /// model-size, training-set-size, bin-count or raw-data-size.
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the axis (default depends on the axis).
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 2000)]
    states: usize,
    #[arg(long, default_value_t = 100)]
    epochs: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the rows as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

fn numbered(path: &Path, i: u32) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-{i}.{ext}"),
        None => format!("{stem}-{i}"),
    };
    path.with_file_name(name)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    match a.kind {
        SynthKind::Splom => {
            let schema = synth::splom_schema(a.bins)?;
            synth::write_splom_csv(&a.out, &synth::splom_rows(a.rows, a.seed))?;
            schema.save(&a.schema_out)?;
        }
        SynthKind::Checkins => {
            synth::write_checkin_csv(&a.out, &synth::checkin_rows(a.rows, a.seed))?;
            brightkite_like().save(&a.schema_out)?;
        }
    }
    println!("wrote {} rows to {}", a.rows, a.out.display());
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let schema = Schema::load(&a.schema)?;
    let (store, report) = ColumnStore::ingest_csv(&schema, &a.csv)?;
    store.save_cache(&a.out)?;
    println!("accepted {} rejected {}", report.accepted, report.rejected);
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let schema = Schema::load(&a.schema)?;
    let store = ColumnStore::load_cache(&schema, &a.store)?;
    let strategy = a.strategy.into();
    let set = generate(&store, a.states, strategy, a.seed)?;
    set.save(&a.out)?;
    println!("states {} samples {}", set.n_states(), set.len());
    if let Some(p) = a.test_out {
        let test = generate_test(&store, a.states, strategy, a.seed)?;
        test.save(&p)?;
        println!("test states {} samples {}", test.n_states(), test.len());
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let schema = Schema::load(&a.schema)?;
    let train_set = TrainingSet::load(&a.train)?;
    let test_set = TrainingSet::load(&a.test)?;
    let config = match &a.config {
        Some(p) => ModelConfig::load(p)?,
        None => match a.preset {
            Preset::Splom => ModelConfig::splom(&schema),
            Preset::Brightkite => ModelConfig::brightkite(&schema),
        },
    };
    let mut log = String::new();
    let mut finals = Vec::new();
    for i in 0..a.repeat {
        let seed = a.seed + u64::from(i);
        let plan = TrainPlan {
            epochs: a.epochs,
            adam_epochs: a.adam_epochs,
            states_per_batch: a.states_per_batch,
            seed,
            eval_every: a.eval_every,
            checkpoint: match a.checkpoint {
                Checkpoint::Best => CheckpointPolicy::Best,
                Checkpoint::Last => CheckpointPolicy::Last,
            },
            time_limit: a.time_limit.map(Duration::from_secs_f64),
        };
        let model = Model::build(&config, &schema, seed)?;
        let (model, reports) = train_with(model, &train_set, &test_set, &plan, |r| {
            let mut line = serde_json::from_str::<serde_json::Value>(&r.log_line()).expect("valid");
            if a.repeat > 1 {
                line["run"] = i.into();
            }
            log.push_str(&line.to_string());
            log.push('\n');
        })?;
        let out = if a.repeat > 1 {
            numbered(&a.out, i)
        } else {
            a.out.clone()
        };
        model.save(&out)?;
        let best = reports.iter().map(|r| r.rae).fold(f64::INFINITY, f64::min);
        println!("run {i} seed {seed}: best test RAE {best:.3}% -> {}", out.display());
        finals.push(best);
    }
    if let Some(p) = &a.log {
        write(p, &log)?;
    }
    if finals.len() > 1 {
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let sd = (finals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "RAE over {} runs: mean {mean:.3}% sd {sd:.3} min {min:.3}% max {max:.3}%",
            finals.len()
        );
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let test = TrainingSet::load(&a.test)?;
    let report = evaluate_rae(&model, &test)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("RAE {:.3}%", report.rae);
        for p in &report.per_attribute {
            match p.rae {
                Some(r) => println!("  {:<16} {r:.3}%", p.attribute),
                None => println!("  {:<16} n/a", p.attribute),
            }
        }
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    model.export_portable(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let store = match &a.store {
        Some(p) => Some(ColumnStore::load_cache(model.schema(), p)?),
        None => None,
    };
    let app = AppState::new(model, store)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from("<runtime>"),
        source: e,
    })?;
    runtime.block_on(serve(
        app,
        ServeOptions {
            addr: a.addr,
            cors_origin: a.cors_origin,
        },
    ))
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let axis: AblationAxis = a.axis.parse()?;
    let values = if a.values.is_empty() {
        axis.default_values()
    } else {
        a.values
    };
    let settings = AblationSettings {
        rows: a.rows,
        bins: a.bins,
        states: a.states,
        epochs: a.epochs,
        adam_epochs: a.epochs,
        seed: a.seed,
        ..AblationSettings::default()
    };
    let rows = run_ablation(axis, &values, &settings, |r| {
        log::info!("{} = {}: RAE {:.3}% in {:.1}s", axis.name(), r.value, r.rae, r.seconds);
    })?;
    print!("{}", render_table(axis, &rows));
    if let Some(p) = &a.json_out {
        write(p, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEUROCUBE_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
