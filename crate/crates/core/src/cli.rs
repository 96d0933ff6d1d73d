//! Command-line surface: `simulate`, `priors` and `diagnostics`.
//!
//! Invalid input exits with status 2. Files are written to a temporary path
//! and renamed into place so a rerun always replaces the previous output.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{BvsError, Result};
use crate::prior::{
    bernoulli_ratio_closed_form, build_prior_table, limiting_size_pmf, size_ratio_from_table,
    PriorSpec, SizeRatioLimit, DEFAULT_THETA,
};
use crate::sim::{
    builtin_scenario, run_scenario_with_progress, FailureCounts, MetricsRecord, ScenarioConfig,
};
use crate::stream::MethodKind;

pub const METRICS_HEADER: [&str; 7] = [
    "replicate",
    "batch",
    "method",
    "prior",
    "rmse_beta",
    "rmse_gamma",
    "nonconverged",
];

/// Significant digits for floats in `metrics.csv`.
pub const METRICS_DIGITS: usize = 10;

#[derive(Debug, Parser)]
#[command(
    name = "bvs",
    version,
    about = "Streaming Bayesian variable selection for logistic regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation scenario and write metrics.csv and manifest.json.
    Simulate(SimulateArgs),
    /// Tabulate a model-space prior by model size.
    Priors(PriorsArgs),
    /// Convergence of the model-size distribution to its Poisson limit.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in scenario: sparse10, nonsparse10, sparse15, nonsparse15.
    #[arg(long, conflicts_with = "config")]
    pub scenario: Option<String>,
    /// JSON scenario configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "BVS_THREADS")]
    pub threads: Option<usize>,
    /// Comma-separated 1-based batch indices, or `all`.
    #[arg(long)]
    pub eval_batches: Option<String>,
    /// Overrides theta of the MD prior and both approximations.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriorName {
    /// Discrete uniform.
    Du,
    /// Beta-Binomial with --a and --b.
    Bb,
    B11,
    B1p,
    B1psq,
    /// Matryoshka doll.
    Md,
    /// Truncated Poisson approximation.
    Pa,
    /// Bernoulli(theta/p) approximation.
    Ba,
}

#[derive(Debug, Args)]
pub struct PriorsArgs {
    #[arg(long, value_enum)]
    pub prior: PriorName,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Comma-separated predictor counts.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100usize, 1000, 10000])]
    pub p: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    pub max_k: usize,
    /// Prior whose size distribution is compared (ba, md or pa).
    #[arg(long, value_enum, default_value = "ba")]
    pub prior: PriorName,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &BvsError) -> i32 {
    match e {
        BvsError::Io(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Priors(a) => cmd_priors(&a),
        Command::Diagnostics(a) => cmd_diagnostics(&a),
    }
}

/// `%.{digits}g`-style formatting.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp-{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| BvsError::Io(std::io::Error::other(e.to_string())))
}

fn csv_err(e: csv::Error) -> BvsError {
    BvsError::Io(std::io::Error::other(e.to_string()))
}

pub fn metrics_csv(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.batch.to_string(),
            r.method.label().to_string(),
            r.prior.clone(),
            format_sig(r.rmse_beta, METRICS_DIGITS),
            format_sig(r.rmse_gamma, METRICS_DIGITS),
            u8::from(r.any_nonconverged).to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Reads `metrics.csv` content back into records.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(BvsError::Config(format!(
            "unexpected metrics header: {header:?}"
        )));
    }
    let bad = |what: &str, v: &str| BvsError::Config(format!("bad {what} field '{v}'"));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let method = match f(2) {
            "Offline" => MethodKind::Offline,
            "Online" => MethodKind::Online,
            v => return Err(bad("method", v)),
        };
        out.push(MetricsRecord {
            replicate: f(0).parse().map_err(|_| bad("replicate", f(0)))?,
            batch: f(1).parse().map_err(|_| bad("batch", f(1)))?,
            method,
            prior: f(3).to_string(),
            rmse_beta: f(4).parse().map_err(|_| bad("rmse_beta", f(4)))?,
            rmse_gamma: f(5).parse().map_err(|_| bad("rmse_gamma", f(5)))?,
            any_nonconverged: match f(6) {
                "0" => false,
                "1" => true,
                v => return Err(bad("nonconverged", v)),
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    artifact: &'static str,
    version: &'static str,
    seed: u64,
    threads: usize,
    started_at: String,
    finished_at: String,
    records: usize,
    failures: &'a FailureCounts,
    config: &'a ScenarioConfig,
}

fn parse_eval_batches(spec: &str, n_batches: usize) -> Result<Vec<usize>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok((1..=n_batches).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| BvsError::Config(format!("bad eval batch '{s}'")))
        })
        .collect()
}

/// Scenario from `--scenario` / `--config` with flag overrides applied.
pub fn resolve_config(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut config = match (&args.scenario, &args.config) {
        (Some(name), None) => builtin_scenario(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| BvsError::Config(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| BvsError::Config(format!("parsing {}: {e}", path.display())))?
        }
        (None, None) => {
            return Err(BvsError::Config(
                "one of --scenario or --config is required".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(BvsError::Config(
                "--scenario and --config are exclusive".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if let Some(spec) = &args.eval_batches {
        config.eval_batches = parse_eval_batches(spec, config.batch_sizes.len())?;
    }
    if let Some(theta) = args.theta {
        use crate::prior::NamedPrior;
        for prior in &mut config.priors {
            match prior {
                NamedPrior::MD { theta: t }
                | NamedPrior::PA { theta: t }
                | NamedPrior::BA { theta: t } => *t = theta,
                _ => {}
            }
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = resolve_config(args)?;
    let threads = match args.threads {
        Some(0) => return Err(BvsError::Config("--threads must be >= 1".into())),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BvsError::Config(format!("thread pool: {e}")))?;

    let started = chrono::Utc::now();
    let quiet = args.quiet;
    let total = config.replicates;
    let run = pool.install(|| {
        run_scenario_with_progress(&config, |rep| {
            if !quiet {
                eprintln!("[{}] replicate {}/{} done", config.name, rep + 1, total);
            }
        })
    })?;
    let finished = chrono::Utc::now();

    write_atomic(&args.out.join("metrics.csv"), &metrics_csv(&run.records)?)?;
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        threads,
        started_at: started.to_rfc3339(),
        finished_at: finished.to_rfc3339(),
        records: run.records.len(),
        failures: &run.failures,
        config: &config,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&args.out.join("manifest.json"), &json)?;
    if !quiet {
        eprintln!(
            "wrote {} records to {}",
            run.records.len(),
            args.out.join("metrics.csv").display()
        );
    }
    Ok(())
}

fn prior_spec(
    name: PriorName,
    p: usize,
    theta: f64,
    a: Option<f64>,
    b: Option<f64>,
) -> Result<PriorSpec> {
    let pf = p as f64;
    let spec = match name {
        PriorName::Du => PriorSpec::DiscreteUniform,
        PriorName::Bb => PriorSpec::BetaBinomial {
            a: a.ok_or_else(|| BvsError::InvalidParameter("--a is required for bb".into()))?,
            b: b.ok_or_else(|| BvsError::InvalidParameter("--b is required for bb".into()))?,
        },
        PriorName::B11 => PriorSpec::BetaBinomial { a: 1.0, b: 1.0 },
        PriorName::B1p => PriorSpec::BetaBinomial { a: 1.0, b: pf },
        PriorName::B1psq => PriorSpec::BetaBinomial { a: 1.0, b: pf * pf },
        PriorName::Md => PriorSpec::MatryoshkaDoll { theta },
        PriorName::Pa => PriorSpec::TruncatedPoissonMd { theta },
        PriorName::Ba => PriorSpec::BernoulliMd { theta },
    };
    spec.validate()?;
    Ok(spec)
}

pub fn priors_table_csv(args: &PriorsArgs) -> Result<Vec<u8>> {
    let spec = prior_spec(args.prior, args.p, args.theta, args.a, args.b)?;
    let table = build_prior_table(&spec, args.p)?;
    let mut w = csv_writer();
    w.write_record(["k", "log_q", "size_pmf"])
        .map_err(csv_err)?;
    for (k, (lq, ls)) in table.log_q().iter().zip(table.log_size_pmf()).enumerate() {
        w.write_record([k.to_string(), lq.to_string(), ls.exp().to_string()])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn cmd_priors(args: &PriorsArgs) -> Result<()> {
    let bytes = priors_table_csv(args)?;
    emit(args.out.as_deref(), &bytes)
}

pub fn diagnostics_csv(args: &DiagnosticsArgs) -> Result<Vec<u8>> {
    if !matches!(args.prior, PriorName::Ba | PriorName::Md | PriorName::Pa) {
        return Err(BvsError::InvalidParameter(
            "diagnostics compare ba, md or pa against the Poisson limit".into(),
        ));
    }
    if args.p.is_empty() {
        return Err(BvsError::InvalidParameter(
            "at least one --p value is required".into(),
        ));
    }
    let theta = args.theta;
    let limit = SizeRatioLimit::Poisson { theta };
    let mut w = csv_writer();
    w.write_record([
        "p",
        "k",
        "size_pmf",
        "poisson_pmf",
        "pmf_abs_dev",
        "size_ratio",
        "ratio_limit",
        "ratio_abs_dev",
        "ratio_closed_form",
    ])
    .map_err(csv_err)?;
    for &p in &args.p {
        let spec = prior_spec(args.prior, p, theta, None, None)?;
        let table = build_prior_table(&spec, p)?;
        for k in 0..=args.max_k.min(p) {
            let pmf = table.log_size_pmf()[k].exp();
            let pois = limiting_size_pmf(theta, k)?;
            let mut row = vec![
                p.to_string(),
                k.to_string(),
                pmf.to_string(),
                pois.to_string(),
                (pmf - pois).abs().to_string(),
            ];
            if k < p {
                let ratio = size_ratio_from_table(&table, k)?;
                let lim = limit.value(p, k);
                row.push(ratio.to_string());
                row.push(lim.to_string());
                row.push((ratio - lim).abs().to_string());
                row.push(match args.prior {
                    PriorName::Ba => bernoulli_ratio_closed_form(theta, p, k).to_string(),
                    _ => String::new(),
                });
            } else {
                row.extend(std::iter::repeat_n(String::new(), 4));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    finish_csv(w)
}

pub fn cmd_diagnostics(args: &DiagnosticsArgs) -> Result<()> {
    let bytes = diagnostics_csv(args)?;
    emit(args.out.as_deref(), &bytes)
}
