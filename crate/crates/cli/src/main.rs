//! Batch planner front end: validate datasets, run single power flows,
//! optimize the 24-hour capacitor schedule, and re-render reports.
//!
//! Exit codes are a stable contract: 0 success, 1 validation diagnostics,
//! 2 parse/read failure, 3 solver failure, 4 infeasible schedule, 64 usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};

use feederopt_core::dispatch::{optimize_day, DispatchError, DispatchOptions, Method, Schedule};
use feederopt_core::io::{
    bundled_khodabandelu, export_schedule, load_dataset, read_schedule_report, write_report_csv,
    Dataset, DatasetError, ReportFormat, ScheduleReport,
};
use feederopt_core::load::loads_at_hour;
use feederopt_core::net::{build_ybus, validate_network, BusId, Network};
use feederopt_core::powerflow::{
    losses, solve_powerflow, CapacitorConfig, PowerFlowSolution, SolverOptions,
};

const EXIT_OK: u8 = 0;
const EXIT_DIAGNOSTICS: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "feederopt",
    version,
    about = "Day-ahead capacitor dispatch planner for distribution feeders",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset and print every diagnostic.
    Validate(DatasetArgs),
    /// Solve one hour's power flow for a fixed capacitor configuration.
    Pf(PfArgs),
    /// Optimize the capacitor schedule over all 24 hours.
    Optimize(OptimizeArgs),
    /// Summarize or convert a previously written JSON schedule report.
    Report(ReportArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Use the bundled 13-bus Khodabandelu feeder dataset.
    #[arg(long, conflicts_with_all = ["network", "prices", "profile"])]
    bundled: bool,
    /// Network file (TOML).
    #[arg(long, requires = "prices", requires = "profile")]
    network: Option<PathBuf>,
    /// Prices file (TOML).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Load profile file (TOML).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Override the system base in MVA.
    #[arg(long)]
    base_mva: Option<f64>,
    /// Override the system frequency in Hz.
    #[arg(long)]
    frequency_hz: Option<f64>,
    /// Override every bus's lower voltage bound (pu).
    #[arg(long)]
    v_min: Option<f64>,
    /// Override every bus's upper voltage bound (pu).
    #[arg(long)]
    v_max: Option<f64>,
}

#[derive(Args)]
struct SolverArgs {
    /// Convergence tolerance on the residual infinity norm (pu).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Newton-Raphson iteration cap.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_iterations: Option<u32>,
    /// Enable step-halving when the residual norm increases.
    #[arg(long)]
    line_search: bool,
}

#[derive(Args)]
struct PfArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Hour of the day, 1..=24.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=24))]
    hour: u32,
    /// Capacitor configuration literal, e.g. "10=1,12=0,13=3".
    /// Unlisted capacitor buses default to 0 units.
    #[arg(long)]
    config: Option<String>,
    /// Write the solved operating point as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Search strategy per hour.
    #[arg(long, value_enum, default_value = "exhaustive")]
    method: MethodArg,
    /// Write the schedule report as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Write the schedule report as JSON.
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Worker threads for the 24 independent hours.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    /// Credit exported energy at the wholesale tariff.
    #[arg(long)]
    sale_credit: bool,
    /// Refuse exhaustive enumeration beyond this many configurations.
    #[arg(long, default_value_t = 1_000_000)]
    enumeration_cap: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON schedule report to read.
    #[arg(long)]
    input: PathBuf,
    /// Re-render the report as CSV to this path instead of summarizing.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MethodArg {
    Exhaustive,
    LocalSearch,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::from(EXIT_OK)
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };
    let code = match cli.command {
        Command::Validate(args) => run_validate(args),
        Command::Pf(args) => run_pf(args),
        Command::Optimize(args) => run_optimize(args),
        Command::Report(args) => run_report(args),
    };
    ExitCode::from(code)
}

/// Failure already rendered to stderr, carrying only the exit code.
struct Failed(u8);

fn dataset_error_code(e: &DatasetError) -> u8 {
    match e {
        DatasetError::Read { .. } | DatasetError::Parse { .. } => EXIT_PARSE,
        _ => EXIT_DIAGNOSTICS,
    }
}

fn report_dataset_error(e: DatasetError) -> Failed {
    if let DatasetError::Invalid { diagnostics } = &e {
        for d in diagnostics {
            eprintln!("{d}");
        }
        eprintln!("{} diagnostic(s)", diagnostics.len());
    } else {
        eprintln!("error: {e}");
    }
    Failed(dataset_error_code(&e))
}

fn load(args: &DatasetArgs) -> Result<Dataset, Failed> {
    let mut ds = if args.bundled {
        bundled_khodabandelu()
    } else {
        match (&args.network, &args.prices, &args.profile) {
            (Some(network), Some(prices), Some(profile)) => {
                load_dataset(network, prices, profile).map_err(report_dataset_error)?
            }
            _ => {
                eprintln!("error: provide --bundled or all of --network, --prices, --profile");
                return Err(Failed(EXIT_USAGE));
            }
        }
    };
    apply_overrides(args, &mut ds.network)?;
    Ok(ds)
}

fn apply_overrides(args: &DatasetArgs, network: &mut Network) -> Result<(), Failed> {
    let usage = |msg: String| {
        eprintln!("error: {msg}");
        Failed(EXIT_USAGE)
    };
    if let Some(mva) = args.base_mva {
        if mva.is_nan() || mva <= 0.0 {
            return Err(usage(format!("--base-mva must be positive, got {mva}")));
        }
        network.base.base_mva = mva;
    }
    if let Some(f) = args.frequency_hz {
        if f.is_nan() || f <= 0.0 {
            return Err(usage(format!("--frequency-hz must be positive, got {f}")));
        }
        network.frequency_hz = f;
    }
    for bus in &mut network.buses {
        if let Some(v_min) = args.v_min {
            bus.v_min_pu = v_min;
        }
        if let Some(v_max) = args.v_max {
            bus.v_max_pu = v_max;
        }
        if !(bus.v_min_pu > 0.0 && bus.v_min_pu < bus.v_max_pu) {
            return Err(usage(format!(
                "voltage band [{}, {}] must satisfy 0 < min < max",
                bus.v_min_pu, bus.v_max_pu
            )));
        }
    }
    Ok(())
}

fn solver_options(args: &SolverArgs) -> Result<SolverOptions, Failed> {
    let mut options = SolverOptions::default();
    if let Some(tol) = args.tolerance {
        if tol.is_nan() || tol <= 0.0 {
            eprintln!("error: --tolerance must be positive, got {tol}");
            return Err(Failed(EXIT_USAGE));
        }
        options.tolerance = tol;
    }
    if let Some(iters) = args.max_iterations {
        options.max_iterations = iters as usize;
    }
    options.line_search = args.line_search;
    Ok(options)
}

/// Parses "bus=count" pairs; unlisted capacitor buses default to zero.
fn parse_config(literal: &str, network: &Network) -> Result<CapacitorConfig, String> {
    let mut config = CapacitorConfig::all_off(network);
    if literal.trim().is_empty() {
        return Ok(config);
    }
    let mut seen = std::collections::BTreeSet::new();
    for part in literal.split(',') {
        let (bus_str, count_str) = part
            .split_once('=')
            .ok_or_else(|| format!("bad config entry {part:?}, expected bus=count"))?;
        let bus: u32 = bus_str
            .trim()
            .parse()
            .map_err(|_| format!("bad bus id {bus_str:?}"))?;
        let count: u32 = count_str
            .trim()
            .parse()
            .map_err(|_| format!("bad unit count {count_str:?}"))?;
        let bus = BusId(bus);
        if !seen.insert(bus) {
            return Err(format!("bus {bus} listed twice"));
        }
        let bank = network
            .bus(bus)
            .and_then(|b| b.bank.as_ref())
            .ok_or_else(|| format!("bus {bus} carries no capacitor bank"))?;
        if count > bank.n_max {
            return Err(format!(
                "count {count} at bus {bus} exceeds the bank bound {}",
                bank.n_max
            ));
        }
        config.set(bus, count);
    }
    Ok(config)
}

fn run_validate(args: DatasetArgs) -> u8 {
    let ds = match load(&args) {
        Ok(ds) => ds,
        Err(Failed(code)) => return code,
    };
    let diagnostics = validate_network(&ds.network);
    for d in &diagnostics {
        println!("{d}");
    }
    println!("{} diagnostics", diagnostics.len());
    if diagnostics.is_empty() {
        println!(
            "dataset valid: {} buses, {} lines, {} capacitor buses",
            ds.network.n_buses(),
            ds.network.lines.len(),
            ds.network.capacitor_buses().count()
        );
        EXIT_OK
    } else {
        EXIT_DIAGNOSTICS
    }
}

fn run_pf(args: PfArgs) -> u8 {
    let ds = match load(&args.dataset) {
        Ok(ds) => ds,
        Err(Failed(code)) => return code,
    };
    let options = match solver_options(&args.solver) {
        Ok(o) => o,
        Err(Failed(code)) => return code,
    };
    let config = match parse_config(args.config.as_deref().unwrap_or(""), &ds.network) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let t = args.hour as usize;
    let ybus = match build_ybus(&ds.network) {
        Ok(y) => y,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DIAGNOSTICS;
        }
    };
    let loads = match loads_at_hour(&ds.network, &ds.profile, t) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_DIAGNOSTICS;
        }
    };
    let solution = match solve_powerflow(&ds.network, &ybus, &loads, &config, &options) {
        Ok(sol) => sol,
        Err(e) => {
            eprintln!("solver failure: {e}");
            return EXIT_SOLVER;
        }
    };

    print_pf_table(&ds.network, t, &config, &solution);
    if let Some(path) = &args.json {
        if let Err(e) = write_pf_json(path, &ds.network, t, &config, &solution) {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
    }
    if solution.converged {
        EXIT_OK
    } else {
        eprintln!(
            "did not converge after {} iterations, max residual {:e}",
            solution.iterations, solution.max_residual
        );
        EXIT_SOLVER
    }
}

fn print_pf_table(network: &Network, t: usize, config: &CapacitorConfig, sol: &PowerFlowSolution) {
    println!("hour {t}  config {config}");
    println!(
        "{:<5} {:<12} {:>10} {:>11} {:>10} {:>10} {:>10}",
        "bus", "class", "v_pu", "delta_deg", "p_pu", "q_pu", "q_cap_pu"
    );
    for (i, bus) in network.buses.iter().enumerate() {
        let class = if bus.id == network.slack {
            "(slack)".to_string()
        } else {
            bus.class.to_string()
        };
        println!(
            "{:<5} {:<12} {:>10.6} {:>11.4} {:>10.6} {:>10.6} {:>10.6}",
            bus.id.to_string(),
            class,
            sol.state.v_pu[i],
            sol.state.delta_rad[i].to_degrees(),
            sol.p_consumed[i],
            sol.q_consumed[i],
            sol.q_cap[i]
        );
    }
    let base = network.base.base_mva;
    println!(
        "slack exchange: p = {:.6} pu ({:.4} MW), q = {:.6} pu ({:.4} MVAr)",
        sol.p_slack_pu,
        sol.p_slack_pu * base,
        sol.q_slack_pu,
        sol.q_slack_pu * base
    );
    if sol.converged {
        if let Ok(loss) = losses(sol, network) {
            println!("series losses: {:.6} pu ({:.4} MW)", loss, loss * base);
        }
        println!(
            "converged in {} iterations, max residual {:.3e}",
            sol.iterations, sol.max_residual
        );
    }
}

fn write_pf_json(
    path: &Path,
    network: &Network,
    t: usize,
    config: &CapacitorConfig,
    sol: &PowerFlowSolution,
) -> Result<(), String> {
    let buses: Vec<serde_json::Value> = network
        .buses
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            serde_json::json!({
                "id": bus.id.0,
                "class": bus.class.to_string(),
                "v_pu": sol.state.v_pu[i],
                "delta_rad": sol.state.delta_rad[i],
                "p_pu": sol.p_consumed[i],
                "q_pu": sol.q_consumed[i],
                "q_cap_pu": sol.q_cap[i],
            })
        })
        .collect();
    let doc = serde_json::json!({
        "hour": t,
        "config": config.to_string(),
        "converged": sol.converged,
        "iterations": sol.iterations,
        "max_residual": sol.max_residual,
        "buses": buses,
        "p_slack_pu": sol.p_slack_pu,
        "q_slack_pu": sol.q_slack_pu,
        "losses_pu": losses(sol, network).ok(),
    });
    let mut body = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn run_optimize(args: OptimizeArgs) -> u8 {
    let ds = match load(&args.dataset) {
        Ok(ds) => ds,
        Err(Failed(code)) => return code,
    };
    let solver = match solver_options(&args.solver) {
        Ok(o) => o,
        Err(Failed(code)) => return code,
    };
    let options = DispatchOptions {
        solver,
        method: match args.method {
            MethodArg::Exhaustive => Method::Exhaustive,
            MethodArg::LocalSearch => Method::LocalSearch,
        },
        sale_credit: args.sale_credit,
        enumeration_cap: args.enumeration_cap,
        workers: args.workers as usize,
    };

    let schedule = match optimize_day(&ds.network, &ds.prices, &ds.profile, &options) {
        Ok(s) => s,
        Err(e @ DispatchError::EnumerationOverflow { .. }) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER;
        }
    };

    for (hour, wall) in schedule.hours.iter().zip(&schedule.hour_wall) {
        println!(
            "t={:<2} config={:<16} profit={:>10.4} feasible={:<5} evals={:<3} wall={:.1?}",
            hour.t,
            hour.config.to_string(),
            hour.econ.profit,
            hour.feasible,
            hour.evaluations,
            wall
        );
        for reason in &hour.infeasibility_reasons {
            println!("    reason: {reason}");
        }
    }
    println!(
        "revenue={} cost={} profit={}",
        schedule.totals.revenue, schedule.totals.cost, schedule.totals.profit
    );

    if let Some(path) = &args.out_csv {
        if let Err(e) = export_schedule(&schedule, &ds.network, ReportFormat::Csv, path) {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
        if let Err(e) = write_sidecar(path, &schedule) {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
    }
    if let Some(path) = &args.out_json {
        if let Err(e) = export_schedule(&schedule, &ds.network, ReportFormat::Json, path) {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
        if let Err(e) = write_sidecar(path, &schedule) {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
    }

    if schedule.feasible {
        EXIT_OK
    } else {
        eprintln!("infeasible hours: {:?}", schedule.infeasible_hours);
        EXIT_INFEASIBLE
    }
}

/// Timing and timestamps never enter report bodies; they go to a sidecar
/// next to each output file.
fn write_sidecar(report_path: &Path, schedule: &Schedule) -> Result<(), String> {
    let generated_unix_ms = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let hour_wall_ms: Vec<f64> = schedule
        .hour_wall
        .iter()
        .map(|d| d.as_secs_f64() * 1e3)
        .collect();
    let doc = serde_json::json!({
        "generated_unix_ms": generated_unix_ms,
        "hour_wall_ms": hour_wall_ms,
        "total_wall_ms": hour_wall_ms.iter().sum::<f64>(),
    });
    let path = sidecar_path(report_path);
    let mut body = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn sidecar_path(report_path: &Path) -> PathBuf {
    let mut name = report_path.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn run_report(args: ReportArgs) -> u8 {
    let report = match read_schedule_report(&args.input) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return dataset_error_code(&e);
        }
    };
    if let Some(path) = &args.out_csv {
        let file = match std::fs::File::create(path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_PARSE;
            }
        };
        if let Err(e) = write_report_csv(&report, std::io::BufWriter::new(file)) {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
        return EXIT_OK;
    }
    print_report_summary(&report);
    EXIT_OK
}

fn print_report_summary(report: &ScheduleReport) {
    println!(
        "{:<4} {:<16} {:>12} {:>12} {:>12} {:>9}",
        "t", "config", "revenue", "cost", "profit", "feasible"
    );
    for row in &report.hours {
        println!(
            "{:<4} {:<16} {:>12.4} {:>12.4} {:>12.4} {:>9}",
            row.t, row.config, row.revenue_usd, row.cost_usd, row.profit_usd, row.feasible
        );
    }
    println!(
        "revenue={} cost={} profit={}",
        report.totals.revenue_usd, report.totals.cost_usd, report.totals.profit_usd
    );
    if !report.feasible {
        println!("infeasible hours: {:?}", report.infeasible_hours);
    }
}
