use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use privstory::config::RunConfig;
use privstory::pipeline::{self, ProviderChoice};
use privstory_core::run::RunDir;
use privstory_review::AppState;

/// Extract privacy behaviors and privacy stories from software documentation.
#[derive(Parser)]
#[command(name = "privstory", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "privstory.toml")]
    config: PathBuf,
    /// Run directory; overrides `run_dir` in the config.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Use recorded responses only; never call the model endpoint.
    #[arg(long, global = true)]
    replay: bool,
    /// Debug-level logging.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the corpus, attach gold annotations and write the manifest.
    Ingest,
    /// Build prompts, obtain completions and parse them.
    Annotate,
    /// Score parsed annotations against gold.
    Evaluate,
    /// Export supervised fine-tuning pairs.
    ExportSft,
    /// Export preference pairs from review sessions.
    ExportDpo,
    /// Serve the review API (and UI, if configured).
    ReviewServe {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Session log directory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Validate the taxonomy and any configured gold annotations.
    TaxonomyCheck {
        /// Taxonomy file to check instead of the configured one.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
}

fn run_dir(cli: &Cli, cfg: &RunConfig) -> Result<RunDir> {
    match (&cli.run_dir, &cfg.run_dir) {
        (Some(d), _) => Ok(RunDir::new(d)),
        (None, Some(d)) => Ok(RunDir::new(cfg.resolve(d))),
        (None, None) => bail!("no run directory: pass --run-dir or set run_dir in the config"),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::TaxonomyCheck { taxonomy } = &cli.command {
        let cfg = if cli.config.exists() {
            Some(RunConfig::load(&cli.config)?)
        } else {
            None
        };
        let report = pipeline::taxonomy_check(cfg.as_ref(), taxonomy.as_deref())?;
        eprintln!("taxonomy {}", report.version);
        for (cat, n) in &report.labels {
            eprintln!("  {cat}: {n} labels");
        }
        for p in &report.problems {
            eprintln!("  problem: {p}");
        }
        if !report.problems.is_empty() {
            bail!("{} gold annotation problem(s)", report.problems.len());
        }
        return Ok(());
    }

    let cfg = RunConfig::load(&cli.config)?;
    let run = run_dir(&cli, &cfg)?;
    match cli.command {
        Command::Ingest => {
            pipeline::ingest(&cfg, &run)?;
        }
        Command::Annotate => {
            pipeline::annotate(
                &cfg,
                &run,
                ProviderChoice::Configured {
                    force_replay: cli.replay,
                },
            )?;
        }
        Command::Evaluate => {
            let r = pipeline::evaluate(&cfg, &run)?;
            eprintln!("{:<28} {:>6} {:>6} {:>6}", "", "P", "R", "F1");
            for (ft, row) in &r.per_file_type {
                eprintln!(
                    "{:<28} {:>6.3} {:>6.3} {:>6.3}",
                    ft.title(),
                    row.mean.precision,
                    row.mean.recall,
                    row.mean.f1
                );
            }
            let o = &r.overall_macro;
            eprintln!("{:<28} {:>6.3} {:>6.3} {:>6.3}", "Overall", o.precision, o.recall, o.f1);
        }
        Command::ExportSft => {
            pipeline::export_sft(&cfg, &run)?;
        }
        Command::ExportDpo => {
            pipeline::export_dpo(&cfg, &run)?;
        }
        Command::ReviewServe {
            bind,
            ui_dir,
            data_dir,
        } => {
            let bind = bind.unwrap_or_else(|| cfg.review.bind.clone());
            let addr = bind.parse().with_context(|| format!("bad bind address `{bind}`"))?;
            let review_dir = data_dir.unwrap_or_else(|| pipeline::review_dir(&cfg, &run));
            let ui = ui_dir.or_else(|| cfg.review.ui_dir.as_ref().map(|d| cfg.resolve(d)));
            let state = AppState::load(&[run.root().to_path_buf()], &review_dir, ui)?;
            tokio::runtime::Runtime::new()?.block_on(privstory_review::serve(addr, state))?;
        }
        Command::TaxonomyCheck { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
