use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hgomics::biomarker::{run_biomarkers, DropMetric};
use hgomics::config::{preset, schema, Config};
use hgomics::hetero::Ablation;
use hgomics::pipeline::{load_data_dir, run_evaluate, run_preprocess, run_select, run_train, TrainOptions};
use hgomics::Error;

#[derive(Parser)]
#[command(name = "hgomics", version, about = "Multi-omic ACO feature selection and heterogeneous GAT classification")]
struct Cli {
    /// Worker threads for folds and per-omic training.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drop incomplete features, min-max scale and variance-filter each omic.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One value for all omics or one per omic, comma separated.
        #[arg(long, value_delimiter = ',')]
        variance_threshold: Vec<f64>,
    },
    /// Build similarity networks and run ant colony selection per fold.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from a dataset preset (blca, lgg, rcc) instead of a file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the per-omic graph models and fusion network on every fold.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        /// Defaults to the config stored with the selection.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        modalities: Vec<String>,
        #[arg(long, value_enum, default_value_t = AblationArg::None)]
        ablation: AblationArg,
    },
    /// Compute metrics.json for a trained run.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Rank selected features by the test-metric drop when ablated.
    Biomarkers {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Auroc)]
        metric: MetricArg,
    },
    /// Print the default config, a preset, or the config JSON schema.
    Config {
        #[arg(long)]
        schema: bool,
        #[arg(long, conflicts_with = "schema")]
        preset: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    None,
    Homogeneous,
    NoEdgeAttr,
    NoNodeAttr,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Ablation {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::Homogeneous => Ablation::Homogeneous,
            AblationArg::NoEdgeAttr => Ablation::NoEdgeAttr,
            AblationArg::NoNodeAttr => Ablation::NoNodeAttr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Auroc,
    WeightedF1,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn load_config(path: Option<&Path>, preset_name: Option<&str>, fallback_dir: Option<&Path>) -> hgomics::Result<Config> {
    match (path, preset_name) {
        (Some(p), _) => Config::load(p),
        (None, Some(name)) => preset(name),
        (None, None) => match fallback_dir {
            Some(dir) if dir.join("config.json").is_file() => Config::load(&dir.join("config.json")),
            _ => Ok(Config::default()),
        },
    }
}

fn print_json(v: &impl serde::Serialize) -> hgomics::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> hgomics::Result<()> {
    match cli.command {
        Command::Preprocess { manifest, out, variance_threshold } => {
            let thr = (!variance_threshold.is_empty()).then_some(variance_threshold.as_slice());
            let report = run_preprocess(&manifest, &out, thr)?;
            for o in &report.omics {
                log::info!("{}: kept {} of {} features", o.name, o.after_variance, o.original);
            }
        }
        Command::Select { data, config, preset, out } => {
            let cfg = load_config(config.as_deref(), preset.as_deref(), None)?;
            let ds = load_data_dir(&data)?;
            run_select(&ds, &cfg, &out)?;
        }
        Command::Train { data, selection, config, out, modalities, ablation } => {
            let cfg = load_config(config.as_deref(), None, Some(&selection))?;
            let opts = TrainOptions {
                modalities: (!modalities.is_empty()).then_some(modalities),
                ablation: ablation.into(),
            };
            run_train(&data, &selection, &cfg, &out, &opts)?;
        }
        Command::Evaluate { run } => {
            let metrics = run_evaluate(&run)?;
            for (name, s) in &metrics {
                println!("{name}\t{:.4}\t{:.4}", s.mean, s.std);
            }
        }
        Command::Biomarkers { run, metric } => {
            let metric = match metric {
                MetricArg::Auroc => DropMetric::Auroc,
                MetricArg::WeightedF1 => DropMetric::WeightedF1,
            };
            let rows = run_biomarkers(&run, metric)?;
            for r in rows.iter().take(30) {
                println!("{}\t{}\t{}\t{:.6}", r.rank, r.feature_id, r.omic, r.score);
            }
        }
        Command::Config { schema: true, .. } => print_json(&schema())?,
        Command::Config { preset: Some(name), .. } => print_json(&preset(&name)?)?,
        Command::Config { .. } => print_json(&Config::default())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global() {
        log::warn!("thread pool: {e}");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
