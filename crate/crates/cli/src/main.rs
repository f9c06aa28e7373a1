use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plateau_core::design::DesignConfig;
use plateau_core::inference::Method;
use plateau_core::simulation::{
    builtin_scenarios, parse_scenarios, report, run_replicates, OperatingCharacteristics, Scenario,
};
use plateau_core::Error;

#[derive(Parser)]
#[command(name = "plateau-dose", version, about = "Plateau-aware Bayesian dose finding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trials and report operating characteristics.
    Simulate(SimulateArgs),
    /// Check a design config and print the quantities derived from it.
    Validate(ValidateArgs),
    /// Run the trial-conduct HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Design config document (.toml or .json); replaces --method/--L/--n.
    #[arg(long, conflicts_with_all = ["method", "levels", "n"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    method: Option<Method>,
    /// Number of dose levels.
    #[arg(long = "L", visible_alias = "levels", required_unless_present = "config")]
    levels: Option<usize>,
    /// Maximum sample size; a comma-separated list runs each in turn.
    #[arg(long, value_delimiter = ',', required_unless_present = "config")]
    n: Vec<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Scenario number 1-8, `all`, or a scenario file (.toml or .json).
    #[arg(long, default_value = "all")]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 20240611)]
    seed: u64,
    /// Worker threads; defaults to one per core. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Markdown table report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-replicate CSV for selection and allocation plots.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Config document; omit to check the standard design given by flags.
    path: Option<PathBuf>,
    #[arg(long, conflicts_with = "path", default_value = "selection")]
    method: Method,
    #[arg(long = "L", visible_alias = "levels", conflicts_with = "path", default_value_t = 3)]
    levels: usize,
    #[arg(long, conflicts_with = "path", default_value_t = 24)]
    n: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = plateau_service::ADDR_ENV, default_value = plateau_service::DEFAULT_ADDR)]
    addr: SocketAddr,
    /// Directory holding one event log per trial. Created if missing.
    #[arg(long, env = plateau_service::DATA_DIR_ENV, default_value = plateau_service::DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
}

/// Usage problems exit with 2, runtime failures with 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn runtime(e: Error) -> Failure {
    match e {
        Error::Replicate { index, seed, source } => Failure::Runtime(format!(
            "replicate {index} failed: {source}\nreproduce with trial seed {seed}"
        )),
        other => Failure::Runtime(other.to_string()),
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn configs(args: &DesignArgs) -> Result<Vec<DesignConfig>, Failure> {
    if let Some(path) = &args.config {
        return Ok(vec![DesignConfig::from_path(path).map_err(usage)?]);
    }
    let method = args.method.expect("required by clap");
    let levels = args.levels.expect("required by clap");
    args.n
        .iter()
        .map(|&n| DesignConfig::standard(method, levels, n).map_err(usage))
        .collect()
}

fn scenarios(spec: &str, num_levels: usize) -> Result<Vec<Scenario>, Failure> {
    let builtin = || builtin_scenarios(num_levels).map_err(usage);
    if spec == "all" {
        return builtin();
    }
    if let Ok(k) = spec.parse::<usize>() {
        if !(1..=8).contains(&k) {
            return Err(Failure::Usage(format!("scenario must be 1-8, got {k}")));
        }
        return Ok(vec![builtin()?.remove(k - 1)]);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read scenario file {spec}: {e}")))?;
    let json = path.extension().and_then(|e| e.to_str()) == Some("json");
    let list = parse_scenarios(&text, json).map_err(usage)?;
    for s in &list {
        for w in s.validate(num_levels).map_err(usage)? {
            eprintln!("warning: {w}");
        }
    }
    Ok(list)
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let configs = configs(&args.design)?;
    let num_levels = configs[0].grid.num_levels();
    let method = configs[0].method;
    let scenarios = scenarios(&args.scenario, num_levels)?;
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    if args.workers == Some(0) {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }

    // Summaries go to stderr when the CSV itself is on stdout.
    let mut summary: Box<dyn Write> = if args.out.is_some() {
        Box::new(io::stdout())
    } else {
        Box::new(io::stderr())
    };
    let mut plot = match &args.plot_data {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut rows = Vec::new();
    let mut grouped = Vec::new();
    for scenario in &scenarios {
        let mut per_n = Vec::new();
        for config in &configs {
            let reps = run_replicates(scenario, config, args.reps, args.seed, args.workers)
                .map_err(runtime)?;
            let oc = OperatingCharacteristics::from_replicates(scenario, config, args.seed, &reps);
            if let Some(w) = plot.as_mut() {
                report::write_plot_data(&mut *w, scenario, method, config.n, &reps, rows.is_empty())
                    .map_err(runtime)?;
            }
            let sel: Vec<String> = oc.sel_pct.iter().map(|p| format!("{p:.1}")).collect();
            writeln!(
                summary,
                "scenario {} n={}: selection % [{}], early termination {:.1}%, mean total {:.2}",
                scenario.name,
                config.n,
                sel.join(", "),
                oc.early_term_pct,
                oc.total_mean
            )?;
            rows.push(oc.clone());
            per_n.push(oc);
        }
        grouped.push((scenario.clone(), per_n));
    }
    if let Some(w) = plot.as_mut() {
        w.flush()?;
    }
    match &args.out {
        Some(p) => report::write_csv(BufWriter::new(File::create(p)?), &rows),
        None => report::write_csv(io::stdout().lock(), &rows),
    }
    .map_err(runtime)?;
    if let Some(p) = &args.report {
        std::fs::write(p, report::markdown_report(method, num_levels, &grouped))?;
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), Failure> {
    let config = match &args.path {
        Some(p) => DesignConfig::from_path(p),
        None => DesignConfig::standard(args.method, args.levels, args.n),
    }
    .map_err(usage)?;
    let p = &config.prior;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    println!("config OK");
    println!("method = {}", config.method);
    println!("L = {}", config.grid.num_levels());
    println!("n = {}", config.n);
    println!("K_model = {}", config.k_model);
    println!("K_start = {}", config.startup_cohort_size());
    println!("target = {}", config.grid.target());
    println!("gamma0_mean = {:.4}", p.gamma0_mean);
    println!("gamma0_sd = {:.4}", p.gamma0_sd);
    println!("gamma1_mean = {:.4}", p.gamma1_mean);
    println!("gamma1_shape = {:.4}", p.gamma1_shape);
    println!("model_prior = [{}]", fmt(&p.model_prior));
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(plateau_service::serve(args.addr, &args.data_dir))
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
        Command::Serve(a) => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .with_writer(io::stderr)
                .init();
            serve(a)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\nRun with --help for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
