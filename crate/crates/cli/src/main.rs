use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use genagg::aggregators::StandardAggregator;
use genagg::distributive::{distributive_catalog, entry_function_label, verify_catalog};
use genagg::experiments::{
    expand_cells, format_summary, negative_control, run_cells, summarize, verify_gradients, verify_parametrisations,
    write_csv, write_csv_file, write_json_file, ExperimentConfig, ExperimentKind, Method, ResultRecord, RunOptions,
};
use genagg::genagg::symbolic_params_for;
use genagg::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "genagg",
    version,
    about = "Augmented f-mean aggregation: verification suites and regression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every standard aggregator against its ⟨f, α, β⟩ parametrisation.
    VerifyParametrisations {
        /// Random multisets per aggregator.
        #[arg(long, default_value_t = 1000)]
        sets: usize,
        #[command(flatten)]
        common: VerifyArgs,
    },
    /// Check the distributive operator of every catalog row.
    VerifyDistributive {
        /// Random (c, xs) draws per row.
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        #[command(flatten)]
        common: VerifyArgs,
    },
    /// Aggregator regression: a single parametrised aggregator fit to a standard one.
    RunRegression(RunArgs),
    /// GNN regression: a 4-layer GraphConv network with the parametrised aggregator.
    RunGnnRegression(RunArgs),
    /// Finite-difference check of every differentiable primitive and a GenAgg GNN.
    GradCheck {
        /// Random points per check.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        quiet: bool,
    },
    /// Print the parametrisation table and the distributive operators.
    Catalog,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TableFormat::Table)]
    format: TableFormat,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
    Both,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target aggregator(s), comma separated, or "all".
    #[arg(long)]
    target: Option<String>,
    /// Method(s), comma separated, or "all".
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_graphs: Option<usize>,
    #[arg(long)]
    eval_graphs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_inv: Option<f64>,
    /// Output directory for results.csv / results.json (default: $GENAGG_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Both)]
    format: OutFormat,
    /// Print wall-clock time per phase.
    #[arg(long)]
    time: bool,
    #[arg(long)]
    quiet: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Save trained GenAgg parameters (aggregator regression only).
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Log the training loss every N epochs.
    #[arg(long, default_value_t = 0)]
    log_every: usize,
}

enum CliError {
    Usage(String),
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownName { .. } | Error::Config(_) | Error::Serde(_) => CliError::Usage(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::VerifyParametrisations { sets, common } => verify_parametrisations_cmd(sets, &common),
        Command::VerifyDistributive { probes, common } => verify_distributive_cmd(probes, &common),
        Command::RunRegression(args) => run_cmd(ExperimentKind::AggregatorRegression, &args),
        Command::RunGnnRegression(args) => run_cmd(ExperimentKind::GnnRegression, &args),
        Command::GradCheck { points, seed, quiet } => grad_check_cmd(points, seed, quiet),
        Command::Catalog => {
            catalog_cmd();
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn emit(args: &VerifyArgs, table: String, csv_text: String, json: String) -> CliResult {
    let text = match args.format {
        TableFormat::Table => table,
        TableFormat::Csv => csv_text,
        TableFormat::Json => json,
    };
    if !args.quiet {
        print!("{text}");
    }
    if let Some(path) = &args.out {
        std::fs::write(path, &text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn verify_parametrisations_cmd(sets: usize, args: &VerifyArgs) -> CliResult {
    let rows = verify_parametrisations(sets, args.seed)?;
    let control = negative_control(sets, args.seed)?;
    let mut table = format!(
        "{:<20} {:<18} {:>5} {:>5} {:>14}  result\n",
        "aggregator", "f", "alpha", "beta", "max rel err"
    );
    let mut csv_text = String::from("aggregator,f,alpha,beta,max_rel_error,passed\n");
    for r in &rows {
        table.push_str(&format!(
            "{:<20} {:<18} {:>5} {:>5} {:>14.3e}  {}\n",
            r.aggregator.name(),
            r.f,
            r.alpha,
            r.beta,
            r.max_rel_error,
            pass(r.passed)
        ));
        csv_text.push_str(&format!(
            "{},{},{},{},{:e},{}\n",
            r.aggregator.name(),
            r.f,
            r.alpha,
            r.beta,
            r.max_rel_error,
            r.passed
        ));
    }
    table.push_str(&format!(
        "negative control (mean with alpha=1): max rel err {:.3e}, {}\n",
        control.max_rel_error,
        if control.passed { "NOT DETECTED" } else { "detected" }
    ));
    let json = serde_json::to_string_pretty(&rows).map_err(|e| CliError::Failed(e.to_string()))? + "\n";
    emit(args, table, csv_text, json)?;
    if rows.iter().all(|r| r.passed) && !control.passed {
        Ok(())
    } else {
        Err(CliError::Failed("parametrisation suite failed".into()))
    }
}

fn verify_distributive_cmd(probes: usize, args: &VerifyArgs) -> CliResult {
    let rows = verify_catalog(probes, args.seed)?;
    let mut table = format!(
        "{:<20} {:<14} {:>14} {:>14}  result\n",
        "aggregator", "psi(a,b)", "max residual", "label error"
    );
    let mut csv_text = String::from("aggregator,psi,max_residual,max_label_error,passed\n");
    for r in &rows {
        table.push_str(&format!(
            "{:<20} {:<14} {:>14.3e} {:>14.3e}  {}\n",
            r.aggregator.name(),
            r.label,
            r.max_residual,
            r.max_label_error,
            pass(r.passed)
        ));
        csv_text.push_str(&format!(
            "{},\"{}\",{:e},{:e},{}\n",
            r.aggregator.name(),
            r.label,
            r.max_residual,
            r.max_label_error,
            r.passed
        ));
    }
    let json = serde_json::to_string_pretty(&rows).map_err(|e| CliError::Failed(e.to_string()))? + "\n";
    emit(args, table, csv_text, json)?;
    if rows.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Failed("distributive suite failed".into()))
    }
}

fn grad_check_cmd(points: usize, seed: u64, quiet: bool) -> CliResult {
    let rows = verify_gradients(points, seed)?;
    if !quiet {
        println!(
            "{:<28} {:>7} {:>12} {:>10}  result",
            "check", "points", "max error", "tolerance"
        );
        for r in &rows {
            println!(
                "{:<28} {:>7} {:>12.3e} {:>10.0e}  {}",
                r.name,
                r.points,
                r.max_error,
                r.tolerance,
                pass(r.passed)
            );
        }
    }
    if rows.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

fn catalog_cmd() {
    println!("Parametrisations ⟨f, α, β⟩");
    println!(
        "{:<20} {:<28} {:<22} {:>5} {:>5}",
        "aggregator", "formula", "f", "alpha", "beta"
    );
    for a in StandardAggregator::ALL {
        let p = symbolic_params_for(a);
        println!(
            "{:<20} {:<28} {:<22} {:>5} {:>5}",
            a.name(),
            a.formula(),
            p.f.to_string(),
            p.alpha(),
            p.beta()
        );
    }
    println!();
    println!("Distributive operators ψ(a, b)");
    println!("{:<20} {:<14} construction", "aggregator", "psi(a,b)");
    for e in distributive_catalog() {
        println!(
            "{:<20} {:<14} {}",
            e.aggregator.name(),
            e.label,
            entry_function_label(&e)
        );
    }
}

fn parse_list<T>(spec: &str, all: &[T], parse: impl Fn(&str) -> Result<T, Error>) -> Result<Vec<T>, CliError>
where
    T: Copy,
{
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(s).map_err(CliError::from))
        .collect()
}

fn base_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if cfg.experiment != kind {
                return Err(CliError::Usage(format!(
                    "{} is a {} config, not {}",
                    path.display(),
                    cfg.experiment,
                    kind
                )));
            }
            cfg
        }
        None => ExperimentConfig {
            experiment: kind,
            ..ExperimentConfig::default()
        },
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_graphs {
        cfg.batch_graphs = v;
    }
    if let Some(v) = args.eval_graphs {
        cfg.eval_graphs = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.lambda_inv {
        cfg.lambda_inv = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs) -> Option<PathBuf> {
    args.out
        .clone()
        .or_else(|| std::env::var_os("GENAGG_OUT_DIR").map(PathBuf::from))
}

fn write_results(dir: &Path, format: OutFormat, records: &[ResultRecord]) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    if format != OutFormat::Json {
        write_csv_file(&dir.join("results.csv"), records)?;
    }
    if format != OutFormat::Csv {
        write_json_file(&dir.join("results.json"), records)?;
    }
    Ok(())
}

fn run_cmd(kind: ExperimentKind, args: &RunArgs) -> CliResult {
    let cfg = base_config(kind, args)?;
    let targets = match &args.target {
        Some(spec) => parse_list(spec, &StandardAggregator::ALL, str::parse)?,
        None if args.config.is_some() => vec![cfg.target],
        None => StandardAggregator::ALL.to_vec(),
    };
    let methods = match &args.method {
        Some(spec) => parse_list(spec, &Method::ALL, str::parse)?,
        None => vec![cfg.method],
    };
    if targets.is_empty() || methods.is_empty() {
        return Err(CliError::Usage("no target or method selected".into()));
    }

    let cells = expand_cells(&cfg, &targets, &methods);
    let opts = RunOptions {
        checkpoint_dir: args.checkpoint_dir.clone(),
        log_every: args.log_every,
    };
    let results = run_cells(&cells, args.jobs, &opts);

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((cell, trial), res) in cells.iter().zip(results) {
        match res {
            Ok(r) => records.push(r),
            Err(e) => failures.push(format!("{} {} trial {trial}: {e}", cell.target, cell.method)),
        }
    }

    if !args.quiet {
        print!("{}", format_summary(&summarize(&records)));
        if args.time {
            println!();
            println!(
                "{:<20} {:<12} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "target", "method", "trial", "data", "forward", "backward", "eval", "total"
            );
            for r in &records {
                println!(
                    "{:<20} {:<12} {:>5} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>9.2}",
                    r.target.name(),
                    r.method.name(),
                    r.trial,
                    r.timings.data,
                    r.timings.forward,
                    r.timings.backward,
                    r.timings.eval,
                    r.seconds
                );
            }
        }
    }
    match out_dir(args) {
        Some(dir) => write_results(&dir, args.format, &records)?,
        None if args.quiet => {}
        None if args.format == OutFormat::Csv => {
            println!();
            write_csv(std::io::stdout(), &records)?;
        }
        None => {}
    }
    for f in &failures {
        eprintln!("failed: {f}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} of {} cells failed",
            failures.len(),
            cells.len()
        )))
    }
}
