use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labelattn_cli::ablate::{run_ablation, Suite};
use labelattn_cli::pipeline::{resolve_out, run_eval, run_gen_data, run_pretrain, run_train, Split};
use labelattn_cli::report::{run_report, Format};
use labelattn_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "labelattn", version, about = "Long-document multi-label classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Use the built-in smoke-run preset instead of a config file.
    #[arg(long, conflicts_with = "config")]
    quick: bool,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, self.quick) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, true) => ExperimentConfig::quick(self.seed.unwrap_or(0)),
            (None, false) => return Err(CliError::Config("pass --config FILE or --quick".into())),
        };
        if let Some(seed) = self.seed {
            config.set_seed(seed);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/dev/test corpus.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Masked-LM pretraining of the encoder.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a classifier and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Encoder checkpoint, or `random`.
        #[arg(long, default_value = "random")]
        init: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a split with a trained run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Use this threshold instead of the dev-tuned one.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run an ablation suite and write a comparison table.
    Ablate {
        #[arg(long)]
        suite: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge run directories into one table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<()> {
    let Some(value) = std::env::var_os("LABELATTN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .to_str()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("LABELATTN_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Other(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData { cfg, out } => {
            let config = cfg.resolve()?;
            let out = resolve_out(out)?;
            let data = run_gen_data(&config, &out)?;
            println!(
                "wrote {} / {} / {} documents over {} labels to {}",
                data.train.len(),
                data.dev.len(),
                data.test.len(),
                data.labels.len(),
                out.display()
            );
        }
        Command::Pretrain { cfg, data, out } => {
            let config = cfg.resolve()?;
            let out = match out {
                Some(p) => p,
                None => resolve_out(None)?.join("encoder.ckpt"),
            };
            run_pretrain(&config, data.as_deref(), &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { cfg, data, init, out } => {
            let config = cfg.resolve()?;
            let out = resolve_out(out)?;
            let ckpt = (init != "random").then(|| PathBuf::from(&init));
            let manifest = run_train(&config, data.as_deref(), ckpt.as_deref(), &out)?;
            print!("{}", manifest.report.to_table());
        }
        Command::Eval {
            run,
            split,
            threshold,
            data,
        } => {
            let report = run_eval(&run, split, threshold, data.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Ablate { suite, cfg, data, out } => {
            let suite: Suite = suite.parse()?;
            let config = cfg.resolve()?;
            let out = resolve_out(out)?;
            let rows = run_ablation(suite, &config, data.as_deref(), &out)?;
            print!("{}", labelattn_cli::report::to_markdown(&rows));
        }
        Command::Report { runs, format, out } => {
            let text = run_report(&runs, format, out.as_deref())?;
            if out.is_none() {
                print!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
