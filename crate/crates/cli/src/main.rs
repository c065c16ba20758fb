//! `rfexplore`: planning, single runs and the comparison experiments.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rfexplore::harness::{
    format_float, plan_table, run_error_curve, run_event_coverage, run_sample_complexity, run_single, run_visit_counts,
    ExperimentConfig, OutputFormat, Table,
};
use rfexplore::rf::Outcome;
use rfexplore::Error;

#[derive(Parser)]
#[command(name = "rfexplore", version, about = "Exploration experiments on tabular episodic MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal values and actions; prints V*(s1).
    Plan,
    /// One run of an agent with a stopping rule.
    Explore {
        /// Agent name; defaults to the first configured agent that can stop.
        #[arg(long)]
        agent: Option<String>,
    },
    /// Error against the number of transitions, per agent.
    Curve,
    /// Per-state visit counts, per agent.
    Visits,
    /// Stopping times over the accuracy grid.
    Complexity,
    /// How often the concentration events fail.
    Coverage,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

/// Exit status of a completed command.
enum Status {
    Done,
    BudgetExhausted,
}

fn load_config(cli: &Cli) -> rfexplore::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(table: &Table, cfg: &ExperimentConfig, stem: &str, format: Format) -> rfexplore::Result<()> {
    let path = table.write(&cfg.out_dir, stem, format.into())?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> rfexplore::Result<Status> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Plan => {
            let (value, table) = plan_table(&cfg)?;
            println!("{}", format_float(value));
            emit(&table, &cfg, "plan", cli.format)?;
        }
        Command::Explore { agent } => {
            let kind = match agent {
                Some(name) => name.parse()?,
                None => cfg
                    .agent_kinds()?
                    .into_iter()
                    .find(|k| k.has_stopping_rule())
                    .ok_or_else(|| Error::Config("no configured agent has a stopping rule".into()))?,
            };
            let run = run_single(&cfg, kind, 0)?;
            emit(&run.log, &cfg, &format!("explore_{kind}"), cli.format)?;
            match run.outcome {
                Outcome::Stopped { tau } => println!("{kind} stopped at episode {tau}"),
                Outcome::BudgetExhausted { episodes } => {
                    println!("{kind} exhausted the budget after {episodes} episodes");
                    return Ok(Status::BudgetExhausted);
                }
            }
        }
        Command::Curve => {
            let curve = run_error_curve(&cfg)?;
            emit(&curve.to_table(), &cfg, "curve", cli.format)?;
            for r in &curve.records {
                eprintln!("{} seed {}: {:.3}s", r.agent, r.seed, r.wall_clock.as_secs_f64());
            }
        }
        Command::Visits => {
            let visits = run_visit_counts(&cfg)?;
            emit(&visits.to_table(), &cfg, "visits", cli.format)?;
        }
        Command::Complexity => {
            let result = run_sample_complexity(&cfg)?;
            emit(&result.to_table(), &cfg, "complexity", cli.format)?;
            emit(&result.per_seed_table(), &cfg, "complexity_per_seed", cli.format)?;
        }
        Command::Coverage => {
            let report = run_event_coverage(&cfg)?;
            emit(&report.to_table(), &cfg, "coverage", cli.format)?;
        }
    }
    Ok(Status::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = run(&cli);
    eprintln!("wall-clock {:.3}s", start.elapsed().as_secs_f64());
    match result {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::BudgetExhausted) => ExitCode::from(3),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
