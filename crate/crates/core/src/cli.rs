//! `goatbli` command line: `match`, `iter`, `combine` and `iso`.
//!
//! Every subcommand reads `--config FILE` (`key = value` lines named after
//! the flags) and lets command-line flags override it.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::embeddings::{load_vec, preprocess};
use crate::error::Error;
use crate::graphmatch::{GradientBackend, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::isometry::{
    isometry_report, IsometryParams, Laplacian, DEFAULT_GH_SAMPLE, DEFAULT_KNN, MIN_GH_SAMPLE,
};
use crate::pipelines::{
    render_table, run_directions, table_csv, BaseMethod, BliTask, DataPaths, Direction, Ending,
    ExperimentConfig, InitKind, Method, RetrievalScope, RunReport, DEFAULT_H, DEFAULT_I,
};
use crate::procrustes::DEFAULT_CSLS_K;
use crate::sinkhorn::LotParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const DEFAULT_SUBSET: usize = 2000;

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("invalid value `{s}`"))
}

#[derive(Parser, Debug)]
#[command(name = "goatbli", version, about = "Seeded graph matching and bilingual lexicon induction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One Procrustes, SGM or GOAT run
    #[command(args_override_self = true)]
    Match(MatchArgs),
    /// Iterative Procrustes/SGM/GOAT with stochastic-add
    #[command(args_override_self = true)]
    Iter(IterArgs),
    /// GOAT and IterProc combined over several cycles
    #[command(args_override_self = true)]
    Combine(CombineArgs),
    /// Eigenvector similarity and Gromov-Hausdorff distance of two spaces
    #[command(args_override_self = true)]
    Iso(IsoArgs),
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Control {
    /// Key-value config file; flags override it
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Print the resolved config and exit
    #[arg(long)]
    #[serde(skip)]
    pub dry_run: bool,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// Source embeddings (.vec)
    #[arg(long, value_name = "PATH")]
    pub src_emb: PathBuf,
    /// Target embeddings (.vec)
    #[arg(long, value_name = "PATH")]
    pub tgt_emb: PathBuf,
    /// Source-to-target dictionary
    #[arg(long, value_name = "PATH")]
    pub dict: PathBuf,
    /// Target-to-source dictionary for the reverse direction
    #[arg(long, value_name = "PATH")]
    pub rev_dict: Option<PathBuf>,
    /// Rows to read from each embedding file
    #[arg(long)]
    pub limit: Option<usize>,
    /// Pair label, e.g. en-de (default: the two file stems)
    #[arg(long)]
    pub pair: Option<String>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SolverArgs {
    /// Gold seed pairs, most frequent first
    #[arg(long, default_value_t = 0)]
    pub seeds: usize,
    /// LOT regularization
    #[arg(long, default_value_t = 500.0)]
    pub reg: f64,
    /// LOT marginal tolerance
    #[arg(long, default_value_t = 1e-6)]
    pub lot_tol: f64,
    /// LOT iteration cap
    #[arg(long, default_value_t = 1000)]
    pub lot_max_iter: usize,
    /// barycenter | random
    #[arg(long, default_value = "barycenter", value_parser = parse_enum::<InitKind>)]
    pub init: InitKind,
    /// Frank-Wolfe iteration cap
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Frank-Wolfe stopping tolerance
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// clamped | block-partitioned
    #[arg(long, default_value = "clamped", value_parser = parse_enum::<GradientBackend>)]
    pub backend: GradientBackend,
    /// CSLS neighbourhood size
    #[arg(long, default_value_t = DEFAULT_CSLS_K)]
    pub csls_k: usize,
    /// Procrustes retrieval over dictionary targets or every target word: dictionary | full
    #[arg(long, default_value = "dictionary", value_parser = parse_enum::<RetrievalScope>)]
    pub retrieval: RetrievalScope,
    /// forward | reverse | both
    #[arg(long, default_value = "forward", value_parser = parse_enum::<Direction>)]
    pub direction: Direction,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct OutputArgs {
    /// Seed for every random choice; generated and printed when absent
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Report records (JSON lines); predictions go to `<out>.<pair>.<method>.tsv`
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// CSV table of P@1 per method
    #[arg(long, value_name = "PATH")]
    pub table_csv: Option<PathBuf>,
    /// Exit with status 4 if any LOT solve hits its iteration cap
    #[arg(long)]
    pub strict: bool,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Leave wall-clock times out of reports
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct MatchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub control: Control,
    /// procrustes | sgm | goat
    #[arg(long, default_value = "goat", value_parser = parse_enum::<BaseMethod>)]
    pub method: BaseMethod,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct StochasticArgs {
    /// Hypotheses added per iteration
    #[arg(long = "H", default_value_t = DEFAULT_H)]
    #[serde(rename = "H")]
    pub h: usize,
    /// Iterations
    #[arg(long = "I", default_value_t = DEFAULT_I)]
    #[serde(rename = "I")]
    pub i: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct IterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub control: Control,
    /// procrustes | sgm | goat
    #[arg(long, default_value = "goat", value_parser = parse_enum::<BaseMethod>)]
    pub method: BaseMethod,
    #[command(flatten)]
    #[serde(flatten)]
    pub stochastic: StochasticArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CombineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub control: Control,
    /// Cycles of the two stages
    #[arg(long, default_value_t = 1)]
    pub cycles: usize,
    /// System producing the final translations: proc | goat
    #[arg(long, default_value = "proc", value_parser = parse_enum::<Ending>)]
    pub ending: Ending,
    /// Pass every intersected hypothesis between stages, not at most I·H
    #[arg(long)]
    pub pass_all_hypotheses: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub stochastic: StochasticArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct IsoArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub control: Control,
    /// Source embeddings (.vec)
    #[arg(long, value_name = "PATH")]
    pub src_emb: PathBuf,
    /// Target embeddings (.vec)
    #[arg(long, value_name = "PATH")]
    pub tgt_emb: PathBuf,
    /// Rows to read from each embedding file
    #[arg(long)]
    pub limit: Option<usize>,
    /// Most frequent words compared on each side
    #[arg(long, default_value_t = DEFAULT_SUBSET)]
    pub subset_size: usize,
    /// Nearest neighbours per vertex in the EVS graphs
    #[arg(long, default_value_t = DEFAULT_KNN)]
    pub knn: usize,
    /// unnormalized | normalized
    #[arg(long, default_value = "unnormalized", value_parser = parse_enum::<Laplacian>)]
    pub laplacian: Laplacian,
    /// Points sampled for the Gromov-Hausdorff estimate
    #[arg(long, default_value_t = DEFAULT_GH_SAMPLE)]
    pub gh_sample: usize,
    /// Seed for the Gromov-Hausdorff sample
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report record (JSON); stdout when absent
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

/// Failure of one invocation, carrying its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Validation(_) => EXIT_USAGE,
            Error::Numerical(_) => EXIT_NUMERICAL,
            Error::Shape(_) | Error::Domain(_) | Error::Parse { .. } | Error::Lookup(_) | Error::Io { .. } => {
                EXIT_DATA
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Reads a `key = value` config file into flag tokens. `true`/`false`
/// switch boolean flags; `#` starts a comment.
pub fn config_tokens(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| CliError::usage(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
        if key.is_empty() || key.starts_with('-') || key == "config" {
            return Err(CliError::usage(format!("{}:{}: invalid key `{key}`", path.display(), n + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

/// Inserts the tokens of any `--config FILE` right after the subcommand so
/// that later command-line flags override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    let mut iter = args.iter().skip(2);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            path = iter.next().map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let mut out: Vec<OsString> = args[..2].to_vec();
    out.extend(config_tokens(&path)?);
    out.extend(args[2..].iter().cloned());
    Ok(out)
}

/// Serialized arguments as config-file text that reproduces them.
pub fn resolved_config_text(args: &impl Serialize) -> String {
    let value = serde_json::to_value(args).expect("arguments serialize");
    let mut out = String::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            match v {
                serde_json::Value::Null => {}
                serde_json::Value::String(s) => out.push_str(&format!("{k} = {s}\n")),
                other => out.push_str(&format!("{k} = {other}\n")),
            }
        }
    }
    out
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn resolve_seed(seed: &mut Option<u64>) -> u64 {
    *seed.get_or_insert_with(|| {
        let s = rand::random::<u64>();
        eprintln!("rng seed: {s}");
        s
    })
}

fn pair_label(data: &DataArgs) -> String {
    data.pair.clone().unwrap_or_else(|| {
        let stem = |p: &Path| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "?".into())
        };
        format!("{}-{}", stem(&data.src_emb), stem(&data.tgt_emb))
    })
}

fn experiment(
    method: Method,
    data: &DataArgs,
    solver: &SolverArgs,
    output: &OutputArgs,
    rng_seed: u64,
) -> Result<ExperimentConfig, CliError> {
    if output.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let lot = LotParams {
        reg: solver.reg,
        tol: solver.lot_tol,
        max_iter: solver.lot_max_iter,
        ..LotParams::default()
    };
    Ok(ExperimentConfig {
        pair: pair_label(data),
        data: Some(DataPaths {
            src_emb: data.src_emb.clone(),
            tgt_emb: data.tgt_emb.clone(),
            dict: data.dict.clone(),
            rev_dict: data.rev_dict.clone(),
            limit: data.limit,
        }),
        seeds: solver.seeds,
        method,
        direction: solver.direction,
        lot,
        init: solver.init,
        max_iter: solver.max_iter,
        tol: solver.tol,
        backend: solver.backend,
        csls_k: solver.csls_k,
        retrieval: solver.retrieval,
        rng_seed,
        ..ExperimentConfig::default()
    })
}

fn run_pipeline(config: &ExperimentConfig, output: &OutputArgs) -> Result<i32, CliError> {
    config.validate()?;
    if output.jobs > 1 {
        info!("--jobs {}: stages run sequentially in this build", output.jobs);
    }
    let paths = config.data.as_ref().expect("data paths set");
    let task = BliTask::from_files(&config.pair, paths, config.seeds)?;
    let reverse_task = match (&paths.rev_dict, config.direction) {
        (Some(rev), Direction::Reverse | Direction::Both) => {
            let swapped = DataPaths {
                src_emb: paths.tgt_emb.clone(),
                tgt_emb: paths.src_emb.clone(),
                dict: rev.clone(),
                rev_dict: Some(paths.dict.clone()),
                limit: paths.limit,
            };
            Some(BliTask::from_files(&task.reversed().pair, &swapped, config.seeds)?)
        }
        _ => None,
    };
    let mut reports = run_directions(&task, reverse_task.as_ref(), config)?;
    if output.omit_timing {
        reports = reports.into_iter().map(RunReport::without_timing).collect();
    }
    emit_reports(&reports, output)?;
    let unconverged: usize = reports.iter().map(|r| r.lot_unconverged).sum();
    if unconverged > 0 {
        warn!("{unconverged} LOT solves stopped at their iteration cap");
        if output.strict {
            eprintln!("error: {unconverged} LOT solves did not converge (--strict)");
            return Ok(EXIT_NUMERICAL);
        }
    }
    Ok(EXIT_OK)
}

fn emit_reports(reports: &[RunReport], output: &OutputArgs) -> Result<(), CliError> {
    let records: String = reports.iter().map(|r| r.to_json_line() + "\n").collect();
    let table = render_table(reports);
    match &output.out {
        Some(out) => {
            write_file(out, &records)?;
            for r in reports {
                let mut name = out.as_os_str().to_owned();
                name.push(format!(".{}.{}.tsv", r.pair, r.method));
                write_file(Path::new(&name), &r.predictions.to_tsv())?;
            }
            print!("{table}");
        }
        None => {
            print!("{records}");
            eprint!("{table}");
        }
    }
    if let Some(csv) = &output.table_csv {
        write_file(csv, &table_csv(reports))?;
    }
    let _ = std::io::stdout().flush();
    Ok(())
}

fn dry_run(args: &impl Serialize, config: Option<&ExperimentConfig>) -> i32 {
    print!("{}", resolved_config_text(args));
    if let Some(c) = config {
        println!("# config hash {}", c.hash());
    }
    EXIT_OK
}

fn cmd_match(mut a: MatchArgs) -> Result<i32, CliError> {
    let seed = resolve_seed(&mut a.output.rng_seed);
    let cfg = experiment(Method::single(a.method), &a.data, &a.solver, &a.output, seed)?;
    if a.control.dry_run {
        return Ok(dry_run(&a, Some(&cfg)));
    }
    run_pipeline(&cfg, &a.output)
}

fn cmd_iter(mut a: IterArgs) -> Result<i32, CliError> {
    let seed = resolve_seed(&mut a.output.rng_seed);
    let mut cfg = experiment(Method::iterative(a.method), &a.data, &a.solver, &a.output, seed)?;
    cfg.h = a.stochastic.h;
    cfg.i = a.stochastic.i;
    if a.control.dry_run {
        return Ok(dry_run(&a, Some(&cfg)));
    }
    run_pipeline(&cfg, &a.output)
}

fn cmd_combine(mut a: CombineArgs) -> Result<i32, CliError> {
    let seed = resolve_seed(&mut a.output.rng_seed);
    let mut cfg = experiment(Method::Combine, &a.data, &a.solver, &a.output, seed)?;
    cfg.h = a.stochastic.h;
    cfg.i = a.stochastic.i;
    cfg.cycles = a.cycles;
    cfg.ending = a.ending;
    cfg.pass_all_hypotheses = a.pass_all_hypotheses;
    if a.control.dry_run {
        return Ok(dry_run(&a, Some(&cfg)));
    }
    run_pipeline(&cfg, &a.output)
}

#[derive(Serialize)]
struct IsoRecord<'a> {
    src: &'a Path,
    tgt: &'a Path,
    #[serde(flatten)]
    report: crate::isometry::IsometryReport,
}

fn cmd_iso(a: IsoArgs) -> Result<i32, CliError> {
    if a.control.dry_run {
        return Ok(dry_run(&a, None));
    }
    if a.knn == 0 {
        return Err(CliError::usage("--knn must be at least 1"));
    }
    if a.gh_sample < MIN_GH_SAMPLE {
        return Err(CliError::usage(format!("--gh-sample must be at least {MIN_GH_SAMPLE}")));
    }
    let src = preprocess(&load_vec(&a.src_emb, a.limit)?)?;
    let tgt = preprocess(&load_vec(&a.tgt_emb, a.limit)?)?;
    let n = a.subset_size.min(src.len()).min(tgt.len());
    let sample = a.gh_sample.min(n);
    if sample < a.gh_sample {
        info!("GH sample clamped to {sample} words");
    }
    let params = IsometryParams {
        knn: a.knn,
        laplacian: a.laplacian,
        gh_sample: sample,
        seed: a.seed,
    };
    let report = isometry_report(&src, &tgt, &src.words()[..n], &tgt.words()[..n], &params)?;
    let record = serde_json::to_string(&IsoRecord {
        src: &a.src_emb,
        tgt: &a.tgt_emb,
        report,
    })
    .expect("report serializes");
    match &a.out {
        Some(out) => write_file(out, &(record + "\n"))?,
        None => println!("{record}"),
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = if args.len() > 2 {
        match expand_config(args) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: {}", e.message);
                return e.code;
            }
        }
    } else {
        args
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let verbose = match &cli.command {
        Command::Match(a) => a.control.verbose,
        Command::Iter(a) => a.control.verbose,
        Command::Combine(a) => a.control.verbose,
        Command::Iso(a) => a.control.verbose,
    };
    init_logging(verbose);
    let result = match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Iter(a) => cmd_iter(a),
        Command::Combine(a) => cmd_combine(a),
        Command::Iso(a) => cmd_iso(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
