//! `pezlab`: discrete prompt optimization experiments from the command line.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags, unknown
//! keys, unreadable config), 2 on runtime errors (a failed run, a gradient
//! check above tolerance).

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_config, ConfigError, ConfigRequest, SeedTarget, SEED_ENV_VAR};
use pezlab_core::harness::{Method, TaskName};
use pezlab_core::{certify_gradients, gen_table, save_table, token_path};

#[derive(Parser)]
#[command(
    name = "pezlab",
    version,
    about = "Hard-prompt optimization over embedding tables"
)]
struct Cli {
    /// Progress and diagnostics on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded vocabulary and write it as an EMB1 file pair.
    GenVocab(GenVocabArgs),
    /// Optimize a prompt against a planted feature target.
    Invert(RunArgs),
    /// Compress a longer planted prompt into fewer tokens.
    Distill(RunArgs),
    /// Optimize a prompt for a teacher-labeled few-shot classification task.
    Classify(RunArgs),
    /// Run the full (method x seed x prompt-length) comparison matrix.
    Compare(CompareArgs),
    /// Exhaustively search the token space of the configured task.
    Oracle(RunArgs),
    /// Certify every analytic gradient against finite differences.
    CheckGrads(CheckGradsArgs),
}

#[derive(Args)]
struct GenVocabArgs {
    /// Vocabulary size.
    #[arg(long = "V")]
    vocab: usize,
    /// Embedding dimension.
    #[arg(long = "d")]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; the token file lands next to it with a .tokens extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-key overrides, e.g. --set opt.gamma=0.05; they win over the file.
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    overrides: Vec<String>,
    /// Seed override; falls back to the config, then $PEZLAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// File of banned token strings, one per line.
    #[arg(long)]
    banned: Option<PathBuf>,
    /// Method for this run (pez, autoprompt_sgd, fluentprompt, soft).
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    overrides: Vec<String>,
    /// Base-seed override; falls back to the config, then $PEZLAB_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    banned: Option<PathBuf>,
    /// Parallel cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CheckGradsArgs {
    /// Seeded random instances per objective kind.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

fn runtime(e: pezlab_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenVocab(args) => gen_vocab(args, cli.verbose),
        Command::Invert(args) => run_single_command(args, TaskName::Invert, None, cli.verbose),
        Command::Distill(args) => run_single_command(args, TaskName::Distill, None, cli.verbose),
        Command::Classify(args) => run_single_command(args, TaskName::Classify, None, cli.verbose),
        Command::Oracle(args) => run_oracle(args, cli.verbose),
        Command::Compare(args) => compare(args, cli.verbose),
        Command::CheckGrads(args) => check_grads(args, cli.verbose),
    }
}

fn gen_vocab(args: &GenVocabArgs, verbose: bool) -> Result<(), CliError> {
    let table = gen_table(args.vocab, args.dim, args.seed).map_err(runtime)?;
    save_table(&table, &args.out).map_err(runtime)?;
    if verbose {
        eprintln!(
            "generated V={} d={} seed={} vocabulary",
            args.vocab, args.dim, args.seed
        );
    }
    println!("{}", args.out.display());
    println!("{}", token_path(&args.out).display());
    Ok(())
}

fn parse_method(name: &str) -> Result<Method, CliError> {
    match Method::parse(name) {
        Some(Method::Oracle) | None => Err(CliError::Config(format!(
            "unknown method {name:?}; choose pez, autoprompt_sgd, fluentprompt, or soft"
        ))),
        Some(m) => Ok(m),
    }
}

/// invert / distill / classify: run one cell, print the final prompt tokens
/// and the report path.
fn run_single_command(
    args: &RunArgs,
    task: TaskName,
    forced_method: Option<Method>,
    verbose: bool,
) -> Result<(), CliError> {
    let cfg = load_config(&ConfigRequest {
        path: &args.config,
        overrides: &args.overrides,
        seed: args.seed,
        seed_target: SeedTarget::SeedList,
        expected_task: Some(task),
        banned_file: args.banned.as_deref(),
    })?;
    let method = match (forced_method, &args.method) {
        (Some(m), _) => m,
        (None, Some(name)) => parse_method(name)?,
        (None, None) => *cfg
            .methods
            .iter()
            .find(|m| **m != Method::Oracle)
            .unwrap_or(&Method::Pez),
    };
    if verbose {
        let seed = cfg.resolved_seeds()[0];
        eprintln!(
            "running {method} on seed {seed}, M={:?}, T={}; eval every {} steps",
            cfg.m.as_vec()[0],
            cfg.opt.steps,
            cfg.eval_every
        );
    }
    let (row, rendered) = pezlab_core::run_single(&cfg, method).map_err(runtime)?;
    if verbose {
        eprintln!(
            "train_loss={:?} hard_loss={:?} ref_sim={:?} best_metric={:?}",
            row.train_loss, row.hard_loss, row.ref_sim, row.best_metric
        );
    }
    println!("{rendered}");
    println!("{}", cfg.out.display());
    Ok(())
}

fn run_oracle(args: &RunArgs, verbose: bool) -> Result<(), CliError> {
    if args.method.is_some() {
        return Err(CliError::Config(
            "--method does not apply to the oracle subcommand".into(),
        ));
    }
    // the oracle shares the config's task kind; only the search method is fixed
    let cfg = load_config(&ConfigRequest {
        path: &args.config,
        overrides: &args.overrides,
        seed: args.seed,
        seed_target: SeedTarget::SeedList,
        expected_task: None,
        banned_file: args.banned.as_deref(),
    })?;
    if verbose {
        eprintln!(
            "exhaustive search over M={} tokens, seed {}",
            cfg.m.as_vec()[0],
            cfg.resolved_seeds()[0]
        );
    }
    let (row, rendered) = pezlab_core::run_single(&cfg, Method::Oracle).map_err(runtime)?;
    if verbose {
        eprintln!(
            "oracle hard_loss={:?} ref_sim={:?}",
            row.hard_loss, row.ref_sim
        );
    }
    println!("{rendered}");
    println!("{}", cfg.out.display());
    Ok(())
}

fn compare(args: &CompareArgs, verbose: bool) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let cfg = load_config(&ConfigRequest {
        path: &args.config,
        overrides: &args.overrides,
        seed: args.seed,
        seed_target: SeedTarget::BaseSeed,
        expected_task: None,
        banned_file: args.banned.as_deref(),
    })?;
    if verbose {
        eprintln!(
            "comparing {:?} over {} seeds and M={:?} with {} job(s)",
            cfg.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
            cfg.resolved_seeds().len(),
            cfg.m.as_vec(),
            args.jobs
        );
    }
    let report = pezlab_core::run_matrix(&cfg, args.jobs).map_err(runtime)?;
    if verbose {
        let failures = report.rows.iter().filter(|r| r.is_error()).count();
        eprintln!("{} cells, {failures} error row(s)", report.rows.len());
    }
    println!("{}", cfg.out.display());
    Ok(())
}

fn check_grads(args: &CheckGradsArgs, verbose: bool) -> Result<(), CliError> {
    if args.instances == 0 {
        return Err(CliError::Config("--instances must be at least 1".into()));
    }
    if !(args.tolerance > 0.0 && args.h > 0.0) {
        return Err(CliError::Config(
            "--tolerance and --h must be positive".into(),
        ));
    }
    if verbose {
        eprintln!(
            "checking {} instances per objective at h={} (seed {}, env {SEED_ENV_VAR} ignored here)",
            args.instances, args.h, args.seed
        );
    }
    let report =
        certify_gradients(args.instances, args.tolerance, args.h, args.seed).map_err(runtime)?;
    for (kind, err) in &report.per_kind {
        println!(
            "{kind}: max_rel_err={err:.3e} tolerance={:.1e} {}",
            report.tolerance,
            if *err < report.tolerance {
                "ok"
            } else {
                "FAIL"
            }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Runtime(
            "finite-difference check exceeded tolerance".into(),
        ))
    }
}
