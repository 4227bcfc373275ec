//! Command line interface for the explainable process prediction pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use xppm_core::pipeline::{
    export_tree_dot, load_bundle, load_config, run_encode, run_explain, run_train, save_bundle,
    write_report,
};

#[derive(Parser)]
#[command(
    name = "xppm",
    version,
    about = "Explainable predictive process monitoring: train, evaluate, explain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write a model bundle.
    Train {
        /// Pipeline configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output bundle path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the evaluation report directory for a trained bundle.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        /// Report directory (created if missing).
        #[arg(long)]
        report: PathBuf,
    },
    /// Explain one validation instance (case id + prefix length).
    Explain {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        prefix: usize,
        /// Write the record as JSON instead of printing text only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export one cluster's surrogate tree as DOT.
    ExportTree {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        cluster: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode the configured log and write the dataset as CSV.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train { config, out } => {
            let config = load_config(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let bundle = run_train(&config)?;
            save_bundle(&bundle, &out)?;
            println!(
                "bundle written to {} (AUROC {:.4}, tau {:.4}, k {})",
                out.display(),
                bundle.evaluation.auroc,
                bundle.tau,
                bundle.regions.k
            );
        }
        Command::Evaluate { bundle, report } => {
            let bundle = load_bundle(&bundle)?;
            let written = write_report(&bundle, &report)?;
            println!(
                "report written to {} ({} files)",
                report.display(),
                written.len()
            );
        }
        Command::Explain {
            bundle,
            case,
            prefix,
            out,
        } => {
            let bundle = load_bundle(&bundle)?;
            let record = run_explain(&bundle, &case, prefix)?;
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&record)?)?;
                println!("record written to {}", path.display());
            }
            print!("{}", record.render_text());
        }
        Command::ExportTree {
            bundle,
            cluster,
            out,
        } => {
            let bundle = load_bundle(&bundle)?;
            let dot = export_tree_dot(&bundle, cluster)?;
            std::fs::write(&out, dot)?;
            println!("tree for cluster {cluster} written to {}", out.display());
        }
        Command::Encode { config, out } => {
            let config = load_config(&config)
                .with_context(|| format!("reading config {}", config.display()))?;
            let csv = run_encode(&config)?;
            std::fs::write(&out, csv)?;
            println!("encoded dataset written to {}", out.display());
        }
    }
    Ok(())
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(error) => {
            let code = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = error.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(error) => {
            eprintln!("error: {error:#}");
            2
        }
    }
}
