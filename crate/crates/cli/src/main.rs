//! `anno-audit`: train per-code classifiers on expert-annotated interviews,
//! annotate with an LLM, and audit every annotation source for accuracy and
//! covariate-correlated error.

mod commands;
mod config;
mod run;
mod svg;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anno_audit_core::llmbridge::ProviderKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{CmdResult, Context, Failure};
use crate::config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "anno-audit", version, about = "Scale qualitative interview coding and audit annotation sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the pipeline seed (and the synthetic corpus seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated code names to restrict the run to.
    #[arg(long, global = true, value_delimiter = ',')]
    codes: Option<Vec<String>>,

    /// Overrides the LLM provider kind.
    #[arg(long, global = true)]
    provider: Option<ProviderArg>,

    /// Also emit SVG charts where a command supports them.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProviderArg {
    Stub,
    Http,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Validate inputs, assign the holdout split and record the data manifest.
    Ingest,
    /// Cross-validated model selection and final fit for each code.
    Train,
    /// QA-level predictions and interview-level scores.
    Predict,
    /// F1, accuracy, random baseline and net over-prediction per source.
    Evaluate,
    /// Bias tests, F-test summary and coefficient comparison.
    Audit,
    /// Annotate QA pairs with an LLM.
    AnnotateLlm,
    /// Paraphrase labeled QA pairs into extra training data.
    Augment,
    /// Write a synthetic corpus with planted signals.
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Audit => "audit",
            Command::AnnotateLlm => "annotate-llm",
            Command::Augment => "augment",
            Command::Synth => "synth",
        }
    }
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("{}", f.to_json());
    ExitCode::from(f.exit_code() as u8)
}

fn run(cli: Cli) -> CmdResult {
    let Some(path) = cli.config else {
        return Err(anno_audit_core::Error::Config("--config is required".into()).into());
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        codes: cli.codes,
        provider: cli.provider.map(|p| match p {
            ProviderArg::Stub => ProviderKind::Stub,
            ProviderArg::Http => ProviderKind::HttpChat,
        }),
    };
    let (cfg, _) = RunConfig::load(&path, &overrides)?;
    let ctx = Context {
        command: cli.command.name(),
        config_sha256: cfg.sha256(),
        cfg,
        svg: cli.svg,
    };
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Predict => commands::predict(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Audit => commands::audit(&ctx),
        Command::AnnotateLlm => commands::annotate_llm(&ctx),
        Command::Augment => commands::augment(&ctx),
        Command::Synth => commands::synth(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::Core(anno_audit_core::Error::Config(e.to_string().trim().to_string()));
            return fail(&f);
        }
    };
    match run(cli) {
        Ok(summary) => {
            // a closed stdout is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(f) => fail(&f),
    }
}
