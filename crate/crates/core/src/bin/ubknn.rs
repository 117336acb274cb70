use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use ubknn::checks::{self, CheckSizes};
use ubknn::dataset::{load_csv_with, Dataset, LabelColumn, PreprocessSpec};
use ubknn::experiment::{self, BenchConfig, CvConfig, TuneConfig};
use ubknn::generators::{CubePreset, CubeSpec, SynthSpec};
use ubknn::methods::{AutoParams, MethodParams, Registry, SubsampleSize};
use ubknn::metrics::{mean_sd, EvalReport};
use ubknn::params::Multipliers;
use ubknn::rng;

#[derive(Parser, Debug)]
#[command(name = "ubknn", version, about = "Under-bagging k-NN for imbalanced classification")]
struct Cli {
    /// Worker threads for the global pool (default: all cores).
    #[arg(long, global = true, env = "UBKNN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repeated stratified cross-validation of one method.
    FitEval(FitEvalArgs),
    /// AM over a grid of subsample fractions, rounds and k.
    Sweep(SweepArgs),
    /// Build and query timings of standard k-NN against under-bagging.
    Bench(BenchArgs),
    /// Implementation-versus-oracle suites; exits with 4 on failure.
    OracleCheck(OracleArgs),
    /// AM regret of auto-parameter under-bagging on cube data.
    Regret(RegretArgs),
    /// Writes a synthetic dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// CSV file with one label column.
    #[arg(long, env = "UBKNN_DATA", conflicts_with = "synth", required_unless_present = "synth")]
    data: Option<PathBuf>,

    /// Synthetic source, e.g. `moons:n_major=2000,n_minor=50,noise=0.2`.
    #[arg(long, env = "UBKNN_SYNTH")]
    synth: Option<String>,

    /// Label column: header name or zero-based index.
    #[arg(long, env = "UBKNN_LABEL_COLUMN", default_value = "label")]
    label_column: String,

    /// Treat the first CSV row as data.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug, Serialize)]
struct OutputArgs {
    /// Output file (default: stdout).
    #[arg(long, env = "UBKNN_OUT")]
    out: Option<PathBuf>,

    #[arg(long, value_enum, env = "UBKNN_FORMAT", default_value = "json")]
    format: Format,
}

#[derive(Args, Debug, Serialize)]
struct FitEvalArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, env = "UBKNN_METHOD", default_value = "underbag-knn")]
    method: String,

    #[arg(long, env = "UBKNN_K", default_value_t = 10)]
    k: usize,

    #[arg(long, env = "UBKNN_ROUNDS", default_value_t = 10)]
    rounds: usize,

    /// Expected subsample size as a fraction of `M * n_(1)`.
    #[arg(long, env = "UBKNN_S_FRAC", conflicts_with = "s")]
    s_frac: Option<f64>,

    /// Absolute expected subsample size.
    #[arg(long, env = "UBKNN_S")]
    s: Option<f64>,

    /// Choose k, rounds and s from the sample size and smoothness.
    #[arg(long, env = "UBKNN_AUTO_PARAMS")]
    auto_params: bool,

    /// Smoothness exponent used by --auto-params.
    #[arg(long, env = "UBKNN_ALPHA", default_value_t = 1.0)]
    alpha: f64,

    /// Tune k over 1..=K by inner cross-validation on each training fold.
    #[arg(long, env = "UBKNN_TUNE_K", conflicts_with = "auto_params")]
    tune_k: Option<usize>,

    #[arg(long, env = "UBKNN_INNER_FOLDS", default_value_t = 5)]
    inner_folds: usize,

    #[arg(long, env = "UBKNN_FOLDS", default_value_t = 5)]
    folds: usize,

    #[arg(long, env = "UBKNN_REPEATS", default_value_t = 1)]
    repeats: usize,

    #[arg(long, env = "UBKNN_SEED", default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, env = "UBKNN_ROUNDS_GRID", value_delimiter = ',', default_value = "1,2,5,10,20,50")]
    rounds_grid: Vec<usize>,

    #[arg(long, env = "UBKNN_K_MAX", default_value_t = 30)]
    k_max: usize,

    #[arg(long, env = "UBKNN_S_FRACS", value_delimiter = ',', default_value = "1.0")]
    s_fracs: Vec<f64>,

    #[arg(long, env = "UBKNN_FOLDS", default_value_t = 5)]
    folds: usize,

    #[arg(long, env = "UBKNN_REPEATS", default_value_t = 1)]
    repeats: usize,

    #[arg(long, env = "UBKNN_SEED", default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[arg(long, env = "UBKNN_N_GRID", value_delimiter = ',', default_value = "10000,20000,40000,80000")]
    n_grid: Vec<usize>,

    /// Imbalance ratio of the two-moons data.
    #[arg(long, env = "UBKNN_RHO", default_value_t = 0.03)]
    rho: f64,

    #[arg(long, env = "UBKNN_K", default_value_t = 10)]
    k: usize,

    #[arg(long, env = "UBKNN_ROUNDS", default_value_t = 1)]
    rounds: usize,

    #[arg(long, env = "UBKNN_QUERIES", default_value_t = 2000)]
    queries: usize,

    #[arg(long, env = "UBKNN_REPEATS", default_value_t = 3)]
    repeats: usize,

    #[arg(long, env = "UBKNN_SEED", default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct OracleArgs {
    #[arg(long, env = "UBKNN_SEED", default_value_t = 0)]
    seed: u64,

    /// Fewer random instances per suite.
    #[arg(long)]
    quick: bool,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct RegretArgs {
    #[arg(long, env = "UBKNN_N_GRID", value_delimiter = ',', default_value = "2000,4000,8000,16000,32000")]
    n_grid: Vec<usize>,

    #[arg(long, env = "UBKNN_D", default_value_t = 2)]
    d: usize,

    /// Class priors separated by `/`.
    #[arg(long, env = "UBKNN_PI", default_value = "0.95/0.05")]
    pi: String,

    #[arg(long, env = "UBKNN_ALPHA", default_value_t = 1.0)]
    alpha: f64,

    #[arg(long, env = "UBKNN_SEEDS", default_value_t = 10)]
    seeds: u64,

    #[arg(long, env = "UBKNN_EVAL_POINTS", default_value_t = 100_000)]
    eval_points: usize,

    #[arg(long, env = "UBKNN_SEED", default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    #[arg(long, env = "UBKNN_SYNTH")]
    synth: String,

    #[arg(long, env = "UBKNN_SEED", default_value_t = 0)]
    seed: u64,

    /// Output CSV file (default: stdout).
    #[arg(long, env = "UBKNN_OUT")]
    out: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CHECK: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ubknn::Error>() {
            return if e.is_data_error() { EXIT_DATA } else { EXIT_CONFIG };
        }
        if cause.downcast_ref::<io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_CONFIG
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match &cli.command {
        Command::FitEval(a) => fit_eval(a, cli.threads),
        Command::Sweep(a) => sweep(a, cli.threads),
        Command::Bench(a) => bench(a, cli.threads),
        Command::OracleCheck(a) => oracle_check(a, cli.threads),
        Command::Regret(a) => regret(a, cli.threads),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load(args: &DataArgs, seed: u64) -> anyhow::Result<(Dataset, Value)> {
    match (&args.data, &args.synth) {
        (Some(path), None) => {
            let label: LabelColumn = args.label_column.parse().expect("infallible");
            let header = args.no_header.then_some(false);
            let ds = load_csv_with(path, &label, &PreprocessSpec::unscaled(), header)?;
            Ok((ds, json!({ "csv": path })))
        }
        (None, Some(spec)) => {
            let synth = SynthSpec::parse(spec, seed)?;
            let ds = synth.generate()?;
            Ok((ds, serde_json::to_value(&synth)?))
        }
        _ => Err(ubknn::Error::Config("give exactly one of --data and --synth".into()).into()),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn dataset_info(ds: &Dataset, source: Value) -> Value {
    json!({
        "source": source,
        "n": ds.n(),
        "d": ds.dim(),
        "classes": ds.n_classes(),
        "class_names": ds.class_names(),
        "class_counts": ds.class_counts(),
        "imbalance_ratio": ds.imbalance_ratio().value(),
        "fingerprint": hex(&ds.fingerprint()),
    })
}

fn envelope(command: &str, config: &impl Serialize, threads: Option<usize>) -> anyhow::Result<Value> {
    Ok(json!({
        "tool": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "command": command,
        "config": serde_json::to_value(config)?,
        "threads": threads,
        "rng": { "generator": rng::RNG_NAME, "seed_mix": rng::SEED_MIX_NAME },
    }))
}

fn sink(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(out: &Option<PathBuf>, report: &Value) -> anyhow::Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv(out: &Option<PathBuf>, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(sink(out)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn fit_eval(a: &FitEvalArgs, threads: Option<usize>) -> anyhow::Result<bool> {
    let registry = Registry::builtin();
    let method = registry.get(&a.method)?;
    let (ds, source) = load(&a.data, a.seed)?;
    let s = match (a.s_frac, a.s) {
        (_, Some(s)) => SubsampleSize::Absolute(s),
        (Some(f), None) => SubsampleSize::Fraction(f),
        (None, None) => SubsampleSize::Fraction(1.0),
    };
    let params = MethodParams {
        k: a.k,
        rounds: a.rounds,
        s,
        seed: a.seed,
        auto: a.auto_params.then_some(AutoParams {
            alpha: a.alpha,
            mult: Multipliers::default(),
        }),
        ..MethodParams::default()
    };
    let cfg = CvConfig {
        folds: a.folds,
        repeats: a.repeats,
        seed: a.seed,
        tune: a.tune_k.map(|k_max| TuneConfig {
            k_max,
            inner_folds: a.inner_folds,
        }),
    };
    let cv = experiment::cross_validate(method, &ds, &params, &cfg)?;
    match a.output.format {
        Format::Json => {
            let mut report = envelope("fit-eval", a, threads)?;
            report["dataset"] = dataset_info(&ds, source);
            report["method"] = json!(method.name());
            report["folds"] = serde_json::to_value(&cv.folds)?;
            report["summary"] = serde_json::to_value(&cv.summary)?;
            write_json(&a.output.out, &report)?;
        }
        Format::Csv => {
            let m = ds.n_classes();
            let mut header = strings(&["row", "repeat", "fold", "k", "rounds", "s"]);
            header.extend(EvalReport::csv_header(m));
            let mut rows: Vec<Vec<String>> = cv
                .folds
                .iter()
                .map(|f| {
                    let mut r = vec![
                        "fold".into(),
                        f.repeat.to_string(),
                        f.fold.to_string(),
                        f.k.to_string(),
                        f.rounds.to_string(),
                        f.s.to_string(),
                    ];
                    r.extend(f.report.csv_row());
                    r
                })
                .collect();
            let col = |g: fn(&EvalReport) -> f64| -> Vec<f64> { cv.folds.iter().map(|f| g(&f.report)).collect() };
            let mut stats: Vec<(f64, f64)> = vec![
                mean_sd(&col(|r| r.am)),
                mean_sd(&col(|r| r.balanced_risk)),
                mean_sd(&col(|r| r.accuracy)),
                mean_sd(&col(|r| r.fit_seconds)),
                mean_sd(&col(|r| r.predict_seconds)),
            ]
            .into_iter()
            .map(|s| (s.mean, s.sd))
            .collect();
            for c in 0..m {
                let v: Vec<f64> = cv.folds.iter().map(|f| f.report.recalls[c]).collect();
                let s = mean_sd(&v);
                stats.push((s.mean, s.sd));
            }
            for (label, pick) in [("mean", 0usize), ("sd", 1)] {
                let mut r = vec![label.to_string(), String::new(), String::new(), String::new(), String::new(), String::new()];
                r.extend(stats.iter().map(|p| if pick == 0 { p.0 } else { p.1 }.to_string()));
                rows.push(r);
            }
            write_csv(&a.output.out, &header, &rows)?;
        }
    }
    Ok(true)
}

fn sweep(a: &SweepArgs, threads: Option<usize>) -> anyhow::Result<bool> {
    let (ds, source) = load(&a.data, a.seed)?;
    let cells = experiment::sweep_cv(&ds, &a.s_fracs, &a.rounds_grid, a.k_max, a.folds, a.repeats, a.seed)?;
    match a.output.format {
        Format::Json => {
            let mut report = envelope("sweep", a, threads)?;
            report["dataset"] = dataset_info(&ds, source);
            report["cells"] = serde_json::to_value(&cells)?;
            write_json(&a.output.out, &report)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = cells
                .iter()
                .map(|c| vec![c.s_frac.to_string(), c.rounds.to_string(), c.k.to_string(), c.am.to_string()])
                .collect();
            write_csv(&a.output.out, &strings(&["s_frac", "rounds", "k", "am"]), &rows)?;
        }
    }
    Ok(true)
}

fn bench(a: &BenchArgs, threads: Option<usize>) -> anyhow::Result<bool> {
    let cfg = BenchConfig {
        n_grid: a.n_grid.clone(),
        rho: a.rho,
        k: a.k,
        rounds: a.rounds,
        queries: a.queries,
        repeats: a.repeats,
        seed: a.seed,
        parallel: true,
    };
    let report = experiment::bench(&cfg, &Registry::builtin())?;
    match a.output.format {
        Format::Json => {
            let mut out = envelope("bench", a, threads)?;
            out["results"] = serde_json::to_value(&report)?;
            write_json(&a.output.out, &out)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        r.method.clone(),
                        r.build_seconds.to_string(),
                        r.query_seconds.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &a.output.out,
                &strings(&["n", "method", "build_seconds", "query_seconds"]),
                &rows,
            )?;
        }
    }
    Ok(true)
}

fn oracle_check(a: &OracleArgs, threads: Option<usize>) -> anyhow::Result<bool> {
    let sizes = if a.quick { CheckSizes::quick() } else { CheckSizes::full() };
    let outcomes = checks::self_check(a.seed, &sizes)?;
    for o in &outcomes {
        eprintln!(
            "{} {} ({} cases, worst {:.3e})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.cases,
            o.worst
        );
    }
    let passed = outcomes.iter().all(|o| o.passed);
    match a.output.format {
        Format::Json => {
            let mut out = envelope("oracle-check", a, threads)?;
            out["passed"] = json!(passed);
            out["suites"] = serde_json::to_value(&outcomes)?;
            write_json(&a.output.out, &out)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = outcomes
                .iter()
                .map(|o| {
                    vec![
                        o.name.clone(),
                        o.passed.to_string(),
                        o.cases.to_string(),
                        o.failures.to_string(),
                        o.worst.to_string(),
                        o.tolerance.to_string(),
                        o.seconds.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &a.output.out,
                &strings(&["suite", "passed", "cases", "failures", "worst", "tolerance", "seconds"]),
                &rows,
            )?;
        }
    }
    Ok(passed)
}

fn regret(a: &RegretArgs, threads: Option<usize>) -> anyhow::Result<bool> {
    let pi = a
        .pi
        .split('/')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| ubknn::Error::Config(format!("bad priors {:?}", a.pi)))?;
    let registry = Registry::builtin();
    let method = registry.get("underbag-knn")?;
    let mut points = Vec::new();
    for &n in &a.n_grid {
        for s in 0..a.seeds {
            let spec = CubeSpec {
                d: a.d,
                n,
                preset: CubePreset::default(),
                pi: pi.clone(),
                seed: rng::derive_seed(a.seed, (n as u64) << 16 | s),
            };
            points.push(experiment::regret_point(&spec, method, a.alpha, a.eval_points)?);
        }
    }
    match a.output.format {
        Format::Json => {
            let mut out = envelope("regret", a, threads)?;
            out["points"] = serde_json::to_value(&points)?;
            write_json(&a.output.out, &out)?;
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|p| {
                    vec![
                        p.n.to_string(),
                        p.seed.to_string(),
                        p.k.to_string(),
                        p.rounds.to_string(),
                        p.s.to_string(),
                        p.estimate.regret.to_string(),
                        p.estimate.std_error.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &a.output.out,
                &strings(&["n", "seed", "k", "rounds", "s", "regret", "std_error"]),
                &rows,
            )?;
        }
    }
    Ok(true)
}

fn generate(a: &GenerateArgs) -> anyhow::Result<bool> {
    let ds = SynthSpec::parse(&a.synth, a.seed)?.generate()?;
    match &a.out {
        Some(p) => ds.write_csv(Path::new(p))?,
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            ds.write_csv_to(&mut w)?;
            w.flush()?;
        }
    }
    Ok(true)
}
