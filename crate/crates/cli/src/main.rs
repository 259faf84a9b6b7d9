use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loopspam_cli::commands::{self, Execution, SweepRange};
use loopspam_cli::config::{cheat_from_arg, ConfigError, CountsSpec, OutputFormat, ScenarioConfig};
use loopspam_cli::report;
use loopspam_cli::selftest;

#[derive(Parser)]
#[command(name = "loopspam", version, about = "Simulate CHSH runs and test them for SPAM with loop partial determinants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trials, compute the loop statistics and emit a report.
    Run(RunArgs),
    /// Tabulate M, S_max and negativity over a (p_s, p_w) grid.
    Sweep(SweepArgs),
    /// Reconstruct the state from simulated data and check the CHSH bound.
    Characterize(RunArgs),
    /// Exact-arithmetic sanity checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Expected counts per setting pair, or "exact".
    #[arg(long)]
    counts: Option<String>,
    /// "none", "paper" or a path to a TOML file with [[rules]] entries.
    #[arg(long)]
    cheat: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Run trials on one thread (results are identical).
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.0)]
    ps_min: f64,
    #[arg(long, default_value_t = 1.0)]
    ps_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pw_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pw_max: f64,
    #[arg(long, default_value_t = 11)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<loopspam_core::Error> for Failure {
    fn from(e: loopspam_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn scenario(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.plan.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.plan.trials = trials;
    }
    if let Some(counts) = &args.counts {
        cfg.plan.counts = CountsSpec::Keyword(counts.clone())
            .mode()
            .map_err(|m| ConfigError::field("--counts", m))?;
    }
    if let Some(cheat) = &args.cheat {
        cfg.cheat = cheat_from_arg(cheat)?;
        cfg.cheat.policy()?;
    }
    if let Some(t) = args.threshold {
        if !(t > 0.0 && t.is_finite()) {
            return Err(ConfigError::field("--threshold", format!("must be a positive number, got {t}")).into());
        }
        cfg.threshold = t;
    }
    if let Some(out) = &args.out {
        cfg.report = Some(out.clone());
    }
    if let Some(f) = args.format {
        cfg.format = f.into();
    }
    cfg.plan
        .validate()
        .map_err(|e| ConfigError::field("plan", e.to_string()))?;
    Ok(cfg)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn exec(args: &RunArgs) -> Execution {
    if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = scenario(&args)?;
    let r = commands::run_scenario(&cfg, exec(&args))?;
    let text = match cfg.format {
        OutputFormat::Json => report::to_json(&r).map_err(|e| Failure::Runtime(e.to_string()))?,
        OutputFormat::Csv => r.to_csv(),
    };
    write_or_print(cfg.report.as_deref(), &text)?;
    if cfg.report.is_some() {
        print!("{}", commands::run_summary(&r));
    }
    Ok(())
}

fn characterize(args: RunArgs) -> Result<(), Failure> {
    let cfg = scenario(&args)?;
    let set = commands::simulate(&cfg, exec(&args))?;
    let chsh = report::ChshSummary::from_trials(&set);
    let c = commands::characterize_trials(&cfg, &set, chsh.mean)?;
    let text = match cfg.format {
        OutputFormat::Json => report::to_json(&c).map_err(|e| Failure::Runtime(e.to_string()))?,
        OutputFormat::Csv => {
            return Err(Failure::Config("characterize supports --format json only".into()));
        }
    };
    if args.format.is_some() || args.out.is_some() {
        write_or_print(args.out.as_deref(), &text)
    } else {
        print!("{}", commands::characterize_text(&cfg, &c));
        Ok(())
    }
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    if args.steps == 0 {
        return Err(Failure::Config("--steps must be at least 1".into()));
    }
    let rows = commands::sweep(SweepRange {
        ps_min: args.ps_min,
        ps_max: args.ps_max,
        pw_min: args.pw_min,
        pw_max: args.pw_max,
        steps: args.steps,
    })
    .map_err(|e| Failure::Config(e.to_string()))?;
    let text = match args.format {
        Format::Csv => commands::sweep_csv(&rows),
        Format::Json => report::to_json(&rows).map_err(|e| Failure::Runtime(e.to_string()))?,
    };
    write_or_print(args.out.as_deref(), &text)
}

fn selftest() -> Result<(), Failure> {
    let checks = selftest::run()?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} self-test check(s) failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Characterize(a) => characterize(a),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
