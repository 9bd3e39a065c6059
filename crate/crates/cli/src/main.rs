use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satcause::pipeline::{self, CausalConfig, RunConfig, SimulateConfig};
use satcause::Error;

/// Satisfaction classification and inverse-propensity-weighted effect
/// estimation on survey tables.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: preprocess, tune models, attribute, estimate effects.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a confounded synthetic dataset with known effect.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Causal stage only, on every row of the input.
    Causal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Summarize an input table, or verify the hashes of a report bundle.
    Inspect {
        #[arg(long, conflicts_with = "bundle", required_unless_present = "bundle")]
        input: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Grouping column; the target when omitted.
        #[arg(long)]
        group_by: Option<String>,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

// stdout may be a closed pipe (`satcause inspect ... | head`)
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stdout(), $($arg)*);
    };
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out_dir } => {
            let mut config: RunConfig = pipeline::load_config(&config)?;
            if let Some(dir) = out_dir {
                config.output_dir = dir;
            }
            let out = pipeline::run(&config)?;
            say!("wrote {} files to {}", out.files.len(), out.out_dir.display());
            for m in &out.report.models {
                say!(
                    "{:<24} {}={} cv={:.4} holdout={:.4} auc={:.4}",
                    m.name,
                    m.cv.param.as_str(),
                    m.cv.selected_value,
                    m.cv.cv_accuracy,
                    m.cv.holdout_accuracy.unwrap_or(f64::NAN),
                    m.holdout_auc
                );
            }
            for t in &out.report.treatments {
                say!(
                    "{:<24} ate={:.4} marginal={:.4} max_smd {:.3} -> {:.3}",
                    t.name,
                    t.effects.ate,
                    t.effects.marginal_effect,
                    t.max_smd_unweighted,
                    t.max_smd_weighted
                );
            }
        }
        Command::Simulate { config, out_dir } => {
            let mut config: SimulateConfig = pipeline::load_config(&config)?;
            if let Some(dir) = out_dir {
                config.output_dir = dir;
            }
            let out = pipeline::simulate(&config)?;
            say!("wrote {} files to {}", out.files.len(), out.out_dir.display());
            say!(
                "true_ate={:.6} (se {:.2e}) marginal={:.6}",
                out.report.true_ate.value,
                out.report.true_ate.standard_error,
                out.report.marginal_effect
            );
        }
        Command::Causal { config, out_dir } => {
            let mut config: CausalConfig = pipeline::load_config(&config)?;
            if let Some(dir) = out_dir {
                config.output_dir = dir;
            }
            let out = pipeline::run_causal(&config)?;
            say!("wrote {} files to {}", out.files.len(), out.out_dir.display());
            for t in &out.report.treatments {
                say!(
                    "{:<24} ate={:.4} marginal={:.4}",
                    t.name,
                    t.effects.ate,
                    t.effects.marginal_effect
                );
            }
        }
        Command::Inspect {
            input,
            schema,
            group_by,
            bundle,
        } => {
            if let Some(dir) = bundle {
                let files = pipeline::verify_bundle(&dir)?;
                say!("{} files verified in {}", files.len() + 1, dir.display());
            } else {
                let input = input.expect("clap enforces --input without --bundle");
                let summary = pipeline::inspect(&input, schema.as_deref(), group_by.as_deref())?;
                say!("{}", serde_json::to_string_pretty(&summary)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
