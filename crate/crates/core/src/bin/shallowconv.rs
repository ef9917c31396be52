use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shallowconv::pipeline::{run_eval, run_sweep, run_train, PipelineConfig, Split};
use shallowconv::{Error, Phase, Result};

#[derive(Parser)]
#[command(name = "shallowconv", version, about = "Train and evaluate a shallow convolutional classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the filter sampling seed.
    #[arg(long)]
    seed_filters: Option<u64>,
    /// Override the input-weight seed.
    #[arg(long)]
    seed_weights: Option<u64>,
    /// Model file to write (train) or read (eval).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and evaluate it on the test split.
    Train(Common),
    /// Evaluate a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Test error against hidden-layer size, reusing extracted features.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Hidden sizes, e.g. `--hidden 400,1600,6400`; defaults to [sweep].
        #[arg(long, value_delimiter = ',')]
        hidden: Vec<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed_filters {
        cfg.filters.seed = s;
    }
    if let Some(s) = c.seed_weights {
        cfg.stage2.seed = s;
    }
    if let Some(m) = &c.model {
        cfg.run.model = Some(m.clone());
    }
    if let Some(r) = &c.report {
        cfg.run.report = Some(r.clone());
    }
    Ok(cfg)
}

fn print_summary(report: &shallowconv::pipeline::RunReport) {
    for line in report.summary() {
        println!("{line}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common).map_err(|e| tag(e, Phase::Config))?;
            let out = run_train(&cfg)?;
            print_summary(&out.report);
            if let Some(p) = &cfg.run.model {
                println!("model written to {}", p.display());
            }
        }
        Command::Eval { common, split } => {
            let cfg = load_config(&common).map_err(|e| tag(e, Phase::Config))?;
            let model = cfg
                .run
                .model
                .clone()
                .ok_or_else(|| tag(Error::Config("eval needs --model or run.model".into()), Phase::Config))?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            print_summary(&run_eval(&model, &cfg, split)?);
        }
        Command::Sweep {
            common,
            hidden,
            repeats,
        } => {
            let cfg = load_config(&common).map_err(|e| tag(e, Phase::Config))?;
            let (default_hidden, default_repeats) = match &cfg.sweep {
                Some(s) => (s.hidden.clone(), s.repeats),
                None => (vec![cfg.stage2.hidden], 1),
            };
            let hidden = if hidden.is_empty() { default_hidden } else { hidden };
            print_summary(&run_sweep(&cfg, &hidden, repeats.unwrap_or(default_repeats))?);
        }
    }
    Ok(())
}

fn tag(e: Error, phase: Phase) -> Error {
    match e {
        tagged @ Error::Phase { .. } => tagged,
        other => Error::Phase {
            phase,
            source: Box::new(other),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
