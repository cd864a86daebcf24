use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selboost::sim::{run_study, write_records, Methods, ScenarioConfig};
use selboost_cli::{run_from_config, CliError, Result, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "selboost", version, about = "L2-Boosting with selective inference")]
struct Cli {
    /// Run config (fit, infer) or scenario file (simulate), TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the inference seed (fit, infer) or the base seed (simulate).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size of the worker pool. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select and fit only.
    Fit(ReportArgs),
    /// Select, fit and run the selective tests.
    Infer(ReportArgs),
    /// Run a simulation study.
    Simulate(SimArgs),
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aligned text table path.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Effect table (CSV) path.
    #[arg(long)]
    effects: Option<PathBuf>,
    /// Include wall times in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SimArgs {
    /// Named scenario; see `--list`.
    #[arg(long, conflicts_with = "list")]
    preset: Option<String>,
    /// Print the preset names and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    /// Comma-separated subset of sampling, polyhedron, naive.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Per-test records (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregates (JSON); stdout when absent.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Print the resolved scenario as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(args) => pipeline(cli.config.as_deref(), cli.seed, &args, true),
        Command::Infer(args) => pipeline(cli.config.as_deref(), cli.seed, &args, false),
        Command::Simulate(args) => simulate(cli.config.as_deref(), cli.seed, &args),
    }
}

fn pipeline(config: Option<&Path>, seed: Option<u64>, args: &ReportArgs, fit_only: bool) -> Result<u8> {
    let path = config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.inference.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let report = run_from_config(&cfg, base, &RunOptions { fit_only, timing: args.timing })?;
    let json = report.to_json()?;
    match &args.out {
        Some(p) => fs::write(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = &args.table {
        fs::write(p, report.to_table())?;
    }
    if let Some(p) = &args.effects {
        report.write_effects(fs::File::create(p)?)?;
    }
    if args.out.is_some() && args.table.is_none() {
        print!("{}", report.to_table());
    }
    for t in report.targets.iter().filter(|t| t.status == selboost_cli::report::Status::Error) {
        eprintln!("target '{}' ({}): {}", t.learner, t.test, t.reason.as_deref().unwrap_or(""));
    }
    Ok(if report.has_errors() { 2 } else { 0 })
}

fn simulate(config: Option<&Path>, seed: Option<u64>, args: &SimArgs) -> Result<u8> {
    if args.list {
        for p in selboost::sim::PRESETS {
            println!("{p}");
        }
        return Ok(0);
    }
    let mut cfg = match (&args.preset, config) {
        (Some(name), None) => ScenarioConfig::preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        _ => return Err(CliError::Config("give exactly one of --preset or --config".into())),
    };
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(b) = args.draws {
        cfg.draws = b;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(list) = &args.methods {
        let mut m = Methods { sampling: false, polyhedron: false, naive: false };
        for name in list {
            match name.trim() {
                "sampling" => m.sampling = true,
                "polyhedron" => m.polyhedron = true,
                "naive" => m.naive = true,
                other => return Err(CliError::Config(format!("unknown method '{other}'"))),
            }
        }
        cfg.methods = m;
    }
    cfg.validate()?;
    if args.print_config {
        print!("{}", toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?);
        return Ok(0);
    }
    let study = run_study(&cfg)?;
    if let Some(p) = &args.out {
        write_records(&study.records, fs::File::create(p)?)?;
    }
    let json = serde_json::to_string_pretty(&study.aggregates)? + "\n";
    match &args.summary {
        Some(p) => fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(0)
}
