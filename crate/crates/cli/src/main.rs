use std::error::Error as StdError;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use asdplanner::dataset::{gen_dataset, DatasetConfig, DatasetError, DatasetKind};
use asdplanner::eval::{
    build_suite, emit_report, run_suite, write_report, EvalError, HeuristicSpec, ReportFormat, SuiteConfig,
};
use asdplanner::heuristics::{table_source, HeuristicTable};
use asdplanner::inference::InferenceError;
use asdplanner::riskmap::{downscale, generate_random_map, load_map, save_map};
use asdplanner::rng::{derive_seed, Stream};
use asdplanner::{asd_astar, Cell, HeuristicError, HeuristicSource, MapError, SearchError, Task, DEFAULT_EPSILON};
use clap::{Args, Parser, Subcommand};
use log::info;

const EXIT_USAGE: u8 = 1;
const EXIT_NO_PATH: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_FORMAT: u8 = 4;

/// Risk-constrained grid path planning.
#[derive(Debug, Parser)]
#[command(name = "asdplanner", version)]
struct Cli {
    /// Worker threads (defaults to the number of cores). Outputs do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// `key = value` file supplying defaults for the subcommand's long flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More logging (repeatable); the resolved configuration is logged at info level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write random risk maps as `<out-dir>/map_<i>.riskmap`.
    GenMaps(GenMaps),
    /// Solve one task and print the path.
    Solve(Solve),
    /// Generate a training dataset (JSONL).
    GenDataset(GenDataset),
    /// Run a task suite under several heuristics and write a report.
    Benchmark(Benchmark),
    /// Mean-pool a map by an integer factor.
    Downscale(Downscale),
}

#[derive(Debug, Args)]
struct GenMaps {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    size: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct Solve {
    #[arg(long)]
    map: PathBuf,
    /// `x,y`, origin top-left.
    #[arg(long, value_parser = parse_cell)]
    start: Cell,
    #[arg(long, value_parser = parse_cell)]
    dest: Cell,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// manhattan | zero | oracle | expert[:P] | table:<path> | riskmap2:<weights> | state:<weights>
    #[arg(long, default_value = "manhattan")]
    heuristic: String,
}

#[derive(Debug, Args)]
struct GenDataset {
    #[arg(long)]
    kind: DatasetKind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    size: u64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = asdplanner::dataset::DEFAULT_PENALTY)]
    penalty: u32,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Consecutive entries that share one map and destination.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    entries_per_map: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Benchmark {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    size: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    maps: u64,
    #[arg(long, default_value_t = 1000)]
    tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// manhattan | zero | oracle | expert[:P] | riskmap2:<weights> | state:<weights>
    #[arg(long, num_args = 1.., value_delimiter = ',', default_value = "manhattan")]
    heuristics: Vec<String>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct Downscale {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    factor: usize,
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("`{s}` is not an x,y pair"))?;
    let coord = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok(Cell::new(coord(x)?, coord(y)?))
}

/// Marks errors that should exit with a specific code.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no feasible path")]
    NoPath,
}

/// Splices `--key value` pairs from the config file in right after the
/// subcommand, skipping keys the command line already sets.
fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config") else {
        if let Some(a) = args
            .iter()
            .find_map(|a| a.to_str()?.strip_prefix("--config=").map(str::to_owned))
        {
            return splice_config(args, Path::new(&a));
        }
        return Ok(args);
    };
    let path = args
        .get(pos + 1)
        .ok_or_else(|| CliError::Usage("--config needs a path".into()))?
        .clone();
    splice_config(args, Path::new(&path))
}

fn splice_config(args: Vec<OsString>, path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let subcommands = ["gen-maps", "solve", "gen-dataset", "benchmark", "downscale"];
    let Some(sub) = args
        .iter()
        .position(|a| a.to_str().is_some_and(|a| subcommands.contains(&a)))
    else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        let present = args.iter().any(|a| {
            a.to_str()
                .is_some_and(|a| a == flag || a.starts_with(&format!("{flag}=")))
        });
        if present {
            continue;
        }
        match value.trim() {
            "true" => extra.push(OsString::from(flag)),
            "false" => {}
            v => {
                extra.push(OsString::from(flag));
                extra.push(OsString::from(v));
            }
        }
    }
    let mut out = args;
    out.splice(sub + 1..sub + 1, extra);
    Ok(out)
}

fn resolve_heuristic(spec: &str) -> Result<Box<dyn HeuristicSource + Send>> {
    if let Some(path) = spec.strip_prefix("table:") {
        let table = HeuristicTable::load(path)?;
        return Ok(Box::new(table_source(table)));
    }
    Ok(HeuristicSpec::parse(spec)?.instantiate()?)
}

fn gen_maps(cmd: &GenMaps) -> Result<()> {
    fs::create_dir_all(&cmd.out_dir).with_context(|| format!("creating {}", cmd.out_dir.display()))?;
    let size = cmd.size as usize;
    for i in 0..cmd.count {
        let map = generate_random_map(size, size, derive_seed(cmd.seed, Stream::Map, i as u64))?;
        let path = cmd.out_dir.join(format!("map_{i}.riskmap"));
        save_map(&map, &path)?;
        info!("wrote {}", path.display());
    }
    println!("wrote {} {size}x{size} maps to {}", cmd.count, cmd.out_dir.display());
    Ok(())
}

fn solve(cmd: &Solve) -> Result<()> {
    let map = load_map(&cmd.map).with_context(|| format!("loading {}", cmd.map.display()))?;
    let task = Task::with_epsilon(&map, cmd.start, cmd.dest, cmd.epsilon);
    let mut source = resolve_heuristic(&cmd.heuristic)?;
    let result = asd_astar(&task, &mut source)?;
    println!("heuristic: {}", source.name());
    println!("nodes_explored: {}", result.nodes_explored);
    println!("search_time_ms: {:.3}", result.wall_time.as_secs_f64() * 1e3);
    println!("heuristic_time_ms: {:.3}", result.heuristic_time.as_secs_f64() * 1e3);
    let Some(path) = &result.path else {
        println!("path: none");
        return Err(CliError::NoPath.into());
    };
    let cells: Vec<String> = path.iter().map(|c| format!("{},{}", c.x, c.y)).collect();
    println!("path: {}", cells.join(" "));
    println!("length: {}", result.path_length);
    println!("safety: {}", result.path_safety);
    Ok(())
}

fn gen_dataset_cmd(cmd: &GenDataset) -> Result<()> {
    let mut config = DatasetConfig::new(cmd.kind, cmd.size as usize, cmd.count, cmd.seed);
    config.penalty = cmd.penalty;
    config.epsilon = cmd.epsilon;
    config.entries_per_map = cmd.entries_per_map as usize;
    let summary = gen_dataset(&config, &cmd.out)?;
    if !summary.reference_size {
        log::warn!(
            "{}x{} is not one of the reference sizes for this dataset kind",
            cmd.size,
            cmd.size
        );
    }
    println!(
        "wrote {} entries to {} ({} skipped, {:.2?})",
        summary.written,
        cmd.out.display(),
        summary.skipped,
        summary.wall_time
    );
    Ok(())
}

fn benchmark(cmd: &Benchmark) -> Result<()> {
    let specs = cmd
        .heuristics
        .iter()
        .map(|h| HeuristicSpec::parse(h))
        .collect::<Result<Vec<_>, _>>()?;
    let config = SuiteConfig {
        map_size: cmd.size as usize,
        maps: cmd.maps as usize,
        tasks: cmd.tasks,
        seed: cmd.seed,
        epsilon: cmd.epsilon,
    };
    let suite = build_suite(&config)?;
    let (summary, records) = run_suite(&suite, &specs)?;
    match &cmd.report {
        Some(path) => {
            emit_report(&summary, &records, path, cmd.format)?;
            for h in &summary.heuristics {
                println!(
                    "{}: nodes {:.2}, search {:.3} ms, heuristic {:.3} ms, SPL {:.2}%, success {:.2}%",
                    h.heuristic,
                    h.mean_nodes_explored,
                    h.mean_search_time_ms,
                    h.mean_heuristic_time_ms,
                    h.spl * 100.0,
                    h.success_rate * 100.0
                );
            }
            println!("report: {}", path.display());
        }
        None => write_report(&summary, &records, std::io::stdout().lock(), cmd.format)?,
    }
    Ok(())
}

fn downscale_cmd(cmd: &Downscale) -> Result<()> {
    let map = load_map(&cmd.input).with_context(|| format!("loading {}", cmd.input.display()))?;
    let small = downscale(&map, cmd.factor)?;
    save_map(&small, &cmd.out)?;
    println!(
        "{}x{} -> {}x{}: {}",
        map.width(),
        map.height(),
        small.width(),
        small.height(),
        cmd.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    info!("resolved configuration: {cli:?}");
    match &cli.command {
        Command::GenMaps(c) => gen_maps(c),
        Command::Solve(c) => solve(c),
        Command::GenDataset(c) => gen_dataset_cmd(c),
        Command::Benchmark(c) => benchmark(c),
        Command::Downscale(c) => downscale_cmd(c),
    }
}

fn code_for(err: &(dyn StdError + 'static)) -> Option<u8> {
    if let Some(e) = err.downcast_ref::<CliError>() {
        return Some(match e {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NoPath => EXIT_NO_PATH,
        });
    }
    if err.is::<std::io::Error>() {
        return Some(EXIT_IO);
    }
    if let Some(e) = err.downcast_ref::<MapError>() {
        return Some(map_code(e));
    }
    if let Some(e) = err.downcast_ref::<InferenceError>() {
        return Some(inference_code(e));
    }
    if let Some(e) = err.downcast_ref::<HeuristicError>() {
        return Some(heuristic_code(e));
    }
    if let Some(e) = err.downcast_ref::<DatasetError>() {
        return Some(match e {
            DatasetError::Io(_) => EXIT_IO,
            DatasetError::Format { .. } => EXIT_FORMAT,
            DatasetError::Map(e) => map_code(e),
            DatasetError::Heuristic(e) => heuristic_code(e),
            DatasetError::Oracle(_) => EXIT_USAGE,
        });
    }
    if let Some(e) = err.downcast_ref::<SearchError>() {
        return Some(match e {
            SearchError::Heuristic(e) => heuristic_code(e),
            _ => EXIT_USAGE,
        });
    }
    if let Some(e) = err.downcast_ref::<EvalError>() {
        return Some(match e {
            EvalError::Io(_) => EXIT_IO,
            EvalError::Report(_) => EXIT_FORMAT,
            EvalError::Map(e) => map_code(e),
            EvalError::Inference(e) => inference_code(e),
            EvalError::Heuristic(e) => heuristic_code(e),
            EvalError::Search(SearchError::Heuristic(e)) => heuristic_code(e),
            _ => EXIT_USAGE,
        });
    }
    None
}

fn map_code(e: &MapError) -> u8 {
    match e {
        MapError::Io(_) => EXIT_IO,
        MapError::Parse { .. } | MapError::RiskOutOfRange { .. } => EXIT_FORMAT,
        MapError::Dimension { .. } | MapError::NoDestination => EXIT_USAGE,
    }
}

fn inference_code(e: &InferenceError) -> u8 {
    match e {
        InferenceError::Io(_) => EXIT_IO,
        InferenceError::OutOfBounds(_)
        | InferenceError::SizeMismatch { .. }
        | InferenceError::MapTooLarge { .. }
        | InferenceError::NonSquare { .. }
        | InferenceError::WrongKind { .. } => EXIT_USAGE,
        _ => EXIT_FORMAT,
    }
}

fn heuristic_code(e: &HeuristicError) -> u8 {
    match e {
        HeuristicError::Io(_) => EXIT_IO,
        HeuristicError::Parse { .. } | HeuristicError::BadEntry { .. } => EXIT_FORMAT,
        HeuristicError::Inference(e) => inference_code(e),
        _ => EXIT_USAGE,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(code_for).unwrap_or(EXIT_USAGE)
}

fn main() -> ExitCode {
    let args = match apply_config(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(e.downcast_ref::<CliError>(), Some(CliError::NoPath)) {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
