//! `dpvar` command line. Every subcommand prints JSON (keys sorted) unless
//! `--format csv` is given. Exit status: 0 success, 1 usage error,
//! 2 computation error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dpvar::accountant::{MechanismSpec, PldOptions, PrivacyParams};
use dpvar::auditing::{epsilon_hat, guesses_from_losses, AuditOutcome};
use dpvar::calibration::{
    calibrate_sigma_with, default_delta, AccountantKind, AccountantSettings, CalibrationRequest,
};
use dpvar::configs::{heuristic_accuracy, Config, HeuristicKind, Pool};
use dpvar::pool::{ingest_pool, to_jsonl, ScoreAgg};
use dpvar::profiles::{closed_form_profile, crossing_report, log_spaced, PrivacyProfile, Profiler};
use dpvar::risk::{monte_carlo_sweep, select_by_method, threshold_sweep, Method, RiskKind};
use dpvar::sim::{run_pipeline, trace_csv, Optimizer, PipelineSpec, SamplerKind, WorldSpec};
use dpvar::stats::{ols_log_regression, significance_stars, Covariate};
use dpvar::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_COMPUTATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dpvar",
    version,
    about = "DP-SGD accounting, calibration and empirical-privacy analysis"
)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Root seed for every random number generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smallest noise multiplier meeting a target (ε, δ).
    Calibrate(CalibrateArgs),
    /// ε(δ) over a log-spaced δ grid.
    Profile(ProfileArgs),
    /// Where two privacy profiles swap order.
    Crossings(CrossingsArgs),
    /// Accuracy of the pairwise heuristics on a pool file.
    HeuristicAccuracy(HeuristicArgs),
    /// Pick a configuration from a pool file.
    Select(SelectArgs),
    /// Privacy risk of a selection method under a sliding utility threshold.
    Risk(RiskArgs),
    /// Log-space OLS of the privacy score on hyperparameters.
    Regress(RegressArgs),
    /// Audited lower bound on ε from membership guesses.
    Audit(AuditArgs),
    /// Calibrate, train a grid of logistic models and emit a pool file.
    Sim(SimArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    batch: u64,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    epsilon: f64,
    /// Defaults to n^-1.1.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value = "pld")]
    accountant: AccountantKind,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 1e-10)]
    delta_min: f64,
    #[arg(long, default_value_t = 1e-2)]
    delta_max: f64,
    #[arg(long, default_value_t = 200)]
    points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<Vec<f64>, Error> {
        if !(self.delta_min > 0.0 && self.delta_max > self.delta_min && self.delta_max < 1.0)
            || self.points < 2
        {
            return Err(Error::InvalidArgument(
                "need 0 < delta-min < delta-max < 1 and at least 2 points".into(),
            ));
        }
        Ok(log_spaced(self.delta_min, self.delta_max, self.points))
    }
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Sampling rate; alternatively give --n and --batch.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    batch: Option<u64>,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    steps: u64,
    /// Unsubsampled Gaussian reference curve instead of the PLD accountant.
    #[arg(long)]
    closed_form: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct CrossingsArgs {
    /// First mechanism as q,sigma,steps.
    #[arg(long)]
    a: String,
    /// Second mechanism as q,sigma,steps.
    #[arg(long)]
    b: String,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Debug, Args)]
struct PoolArgs {
    /// JSON-lines pool file.
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, default_value = "mean")]
    score_agg: ScoreAgg,
    /// Population instead of sample standard deviation across seeds.
    #[arg(long)]
    population_std: bool,
}

impl PoolArgs {
    fn load(&self) -> Result<Pool, Error> {
        ingest_pool(&self.pool, self.score_agg, self.population_std)
    }
}

#[derive(Debug, Args)]
struct HeuristicArgs {
    #[command(flatten)]
    pool: PoolArgs,
    /// individual, compute or updates; all three when omitted.
    #[arg(long)]
    heuristic: Option<HeuristicKind>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long, default_value = "ours")]
    method: Method,
}

#[derive(Debug, Args)]
struct RiskArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long, default_value = "ours")]
    method: Method,
    #[arg(long, default_value = "relative")]
    risk: RiskKind,
    /// Monte-Carlo resampling trials; the mean layout alone when omitted.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Args)]
struct RegressArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long, value_delimiter = ',', default_value = "b,T,eta")]
    covariates: Vec<Covariate>,
    #[arg(long)]
    no_intercept: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Guesses made.
    #[arg(long, conflicts_with = "losses")]
    r: Option<u64>,
    /// Correct guesses.
    #[arg(long, requires = "r")]
    v: Option<u64>,
    /// Total canaries; defaults to r.
    #[arg(long)]
    m: Option<u64>,
    #[arg(long, default_value_t = dpvar::auditing::DEFAULT_CONFIDENCE)]
    confidence: f64,
    /// Member and non-member loss files, one loss per line.
    #[arg(long, num_args = 2, value_names = ["MEMBER", "NONMEMBER"])]
    losses: Option<Vec<PathBuf>>,
    /// Guesses per side; defaults to a quarter of all canaries.
    #[arg(long, requires = "losses")]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Configurations as b:T:eta.
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_SIM_GRID)]
    grid: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 4.0)]
    epsilon: f64,
    /// Defaults to n^-1.1 with n the training-set size.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value = "pld")]
    accountant: AccountantKind,
    /// Number of training seeds per configuration.
    #[arg(long, default_value_t = 3)]
    runs: u64,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    canaries: usize,
    #[arg(long, default_value = "poisson")]
    sampler: SamplerKind,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    optimizer: OptimizerArg,
    /// Write the pool here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-run `step,loss,batch_size` traces.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

const DEFAULT_SIM_GRID: &str =
    "64:50:0.5,64:100:0.5,64:200:0.5,128:50:0.5,128:100:0.5,128:200:0.5,\
256:50:0.5,256:100:0.5,256:200:0.5,128:100:0.25,128:100:1.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

/// Parses `argv` (program name first), writes the report to `out` and
/// diagnostics to `err`, and returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    match execute(&cli) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_COMPUTATION
            }
        }
    }
}

/// Applies `DPVAR_THREADS` to the global worker pool. Only the first call
/// in a process has an effect.
fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("DPVAR_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|t| *t > 0).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "DPVAR_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn execute(cli: &Cli) -> Result<String, Error> {
    let csv = cli.format == Format::Csv;
    match &cli.command {
        Command::Calibrate(a) => calibrate(a, csv),
        Command::Profile(a) => profile(a, csv),
        Command::Crossings(a) => crossings(a, csv),
        Command::HeuristicAccuracy(a) => heuristics(a, csv),
        Command::Select(a) => select(a, csv),
        Command::Risk(a) => risk(a, cli.seed, csv),
        Command::Regress(a) => regress(a, csv),
        Command::Audit(a) => audit(a, csv),
        Command::Sim(a) => sim(a, cli.seed, csv),
    }
}

fn to_json(v: &impl serde::Serialize) -> String {
    // serde_json maps are ordered by key, so round-tripping through Value
    // sorts every object.
    let value = serde_json::to_value(v).expect("reports serialize");
    let mut s = serde_json::to_string_pretty(&value).expect("values serialize");
    s.push('\n');
    s
}

fn calibrate(a: &CalibrateArgs, csv: bool) -> Result<String, Error> {
    let delta = match a.delta {
        Some(d) => d,
        None => default_delta(a.n)?,
    };
    let target = PrivacyParams::new(a.epsilon, delta)?;
    let mut req = CalibrationRequest::new(a.n, a.batch, a.steps, target, a.accountant);
    req.tolerance = a.tolerance;
    let settings = AccountantSettings::default();
    let sigma = calibrate_sigma_with(&req, &settings)?;
    let spec = MechanismSpec::new(req.q(), sigma, a.steps)?;
    let achieved = settings.epsilon(a.accountant, &spec, delta)?;
    if csv {
        return Ok(format!(
            "n,batch,steps,q,epsilon,delta,accountant,sigma,epsilon_achieved\n{},{},{},{},{},{:e},{},{},{}\n",
            a.n,
            a.batch,
            a.steps,
            req.q(),
            a.epsilon,
            delta,
            accountant_name(a.accountant),
            sigma,
            achieved
        ));
    }
    Ok(to_json(&json!({
        "n": a.n,
        "batch": a.batch,
        "steps": a.steps,
        "q": req.q(),
        "epsilon": a.epsilon,
        "delta": delta,
        "accountant": a.accountant,
        "sigma": sigma,
        "epsilon_achieved": achieved,
    })))
}

fn accountant_name(k: AccountantKind) -> &'static str {
    match k {
        AccountantKind::Pld => "pld",
        AccountantKind::Rdp => "rdp",
    }
}

fn sampling_rate(q: Option<f64>, n: Option<u64>, b: Option<u64>) -> Result<f64, Error> {
    match (q, n, b) {
        (Some(q), None, None) => Ok(q),
        (None, Some(n), Some(b)) if n > 0 => Ok(b as f64 / n as f64),
        _ => Err(Error::InvalidArgument(
            "give either --q or both --n and --batch".into(),
        )),
    }
}

fn profile(a: &ProfileArgs, csv: bool) -> Result<String, Error> {
    let grid = a.grid.grid()?;
    let profile = if a.closed_form {
        if a.q.is_some() || a.n.is_some() || a.batch.is_some() {
            return Err(Error::InvalidArgument(
                "--closed-form takes no sampling rate".into(),
            ));
        }
        closed_form_profile(a.sigma, a.steps, &grid)?
    } else {
        let q = sampling_rate(a.q, a.n, a.batch)?;
        Profiler::new(
            MechanismSpec::new(q, a.sigma, a.steps)?,
            &PldOptions::default(),
        )?
        .profile(&grid)?
    };
    Ok(if csv {
        profile.to_csv()
    } else {
        to_json(&profile)
    })
}

fn parse_mechanism(s: &str) -> Result<MechanismSpec, Error> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::InvalidArgument(format!("mechanism '{s}' must be q,sigma,steps"));
    let [q, sigma, steps] = parts.as_slice() else {
        return Err(bad());
    };
    MechanismSpec::new(
        q.parse().map_err(|_| bad())?,
        sigma.parse().map_err(|_| bad())?,
        steps.parse().map_err(|_| bad())?,
    )
}

fn crossings(a: &CrossingsArgs, csv: bool) -> Result<String, Error> {
    let grid = a.grid.grid()?;
    let opts = PldOptions::default();
    let pa: PrivacyProfile = Profiler::new(parse_mechanism(&a.a)?, &opts)?.profile(&grid)?;
    let pb: PrivacyProfile = Profiler::new(parse_mechanism(&a.b)?, &opts)?.profile(&grid)?;
    if pa.dropped != pb.dropped {
        return Err(Error::InvalidArgument(
            "the two profiles certify different parts of the grid; raise --delta-min".into(),
        ));
    }
    let report = crossing_report(&pa, &pb)?;
    if csv {
        let mut s = String::from("delta,epsilon_a,epsilon_b,sign\n");
        for ((p, q), sign) in pa.points.iter().zip(&pb.points).zip(&report.signs) {
            let _ = writeln!(s, "{:e},{},{},{}", p.delta, p.epsilon, q.epsilon, sign);
        }
        return Ok(s);
    }
    Ok(to_json(&json!({
        "a": pa,
        "b": pb,
        "report": report,
    })))
}

fn heuristics(a: &HeuristicArgs, csv: bool) -> Result<String, Error> {
    let pool = a.pool.load()?;
    let kinds: Vec<HeuristicKind> = match a.heuristic {
        Some(h) => vec![h],
        None => HeuristicKind::ALL.to_vec(),
    };
    let records = kinds
        .into_iter()
        .map(|h| heuristic_accuracy(&pool, h))
        .collect::<Result<Vec<_>, _>>()?;
    if csv {
        let mut s = String::from("heuristic,applicable,correct,accuracy\n");
        for r in &records {
            let acc = r.accuracy.map_or(String::new(), |v| v.to_string());
            let name = serde_json::to_value(r.heuristic).expect("enum serializes");
            let _ = writeln!(
                s,
                "{},{},{},{}",
                name.as_str().unwrap_or_default(),
                r.applicable,
                r.correct,
                acc
            );
        }
        return Ok(s);
    }
    Ok(to_json(&records))
}

fn entry_csv(header_extra: &str, rows: &[(String, &dpvar::configs::ScoredConfig)]) -> String {
    let mut s =
        format!("{header_extra}b,T,eta,c,utility_mean,utility_std,score_mean,score_std,seeds\n");
    for (prefix, e) in rows {
        let _ = writeln!(
            s,
            "{prefix}{},{},{},{},{},{},{},{},{}",
            e.config.b,
            e.config.steps,
            e.config.eta,
            e.config.clip,
            e.utility_mean,
            e.utility_std,
            e.score_mean,
            e.score_std,
            e.seeds
        );
    }
    s
}

fn select(a: &SelectArgs, csv: bool) -> Result<String, Error> {
    let pool = a.pool.load()?;
    let chosen = select_by_method(&pool, a.method)?;
    if csv {
        return Ok(entry_csv("", &[(String::new(), &chosen)]));
    }
    Ok(to_json(&json!({ "method": a.method, "selected": chosen })))
}

fn risk(a: &RiskArgs, seed: u64, csv: bool) -> Result<String, Error> {
    let pool = a.pool.load()?;
    let report = match a.trials {
        Some(trials) => monte_carlo_sweep(&pool, a.method, a.risk, trials, seed)?,
        None => threshold_sweep(&pool, a.method, a.risk)?,
    };
    if csv {
        let mut s = String::from("threshold,selected_score,oracle_score,risk\n");
        for r in &report.per_threshold {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.threshold, r.selected_score, r.oracle_score, r.risk
            );
        }
        return Ok(s);
    }
    Ok(to_json(&report))
}

fn regress(a: &RegressArgs, csv: bool) -> Result<String, Error> {
    let pool = a.pool.load()?;
    let records: Vec<(Config, f64)> = pool
        .entries
        .iter()
        .map(|e| (e.config, e.score_mean))
        .collect();
    let fit = ols_log_regression(&records, &a.covariates, !a.no_intercept)?;
    let mut rows = Vec::new();
    if let Some(c) = fit.intercept {
        rows.push(("intercept".to_string(), c));
    }
    for (i, name) in fit.covariate_names.iter().enumerate() {
        rows.push((name.clone(), fit.coefficient(i)));
    }
    if csv {
        let mut s = String::from("term,coefficient,std_error,t_statistic,p_value,significance\n");
        for (name, c) in &rows {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{}",
                c.estimate,
                c.std_error,
                c.t_statistic,
                c.p_value,
                significance_stars(c.p_value)
            );
        }
        return Ok(s);
    }
    let table: Vec<Value> = rows
        .iter()
        .map(|(name, c)| {
            json!({
                "term": name,
                "coefficient": c.estimate,
                "std_error": c.std_error,
                "t_statistic": c.t_statistic,
                "p_value": c.p_value,
                "significance": c.stars(),
            })
        })
        .collect();
    Ok(to_json(&json!({ "fit": fit, "table": table })))
}

fn read_losses(path: &Path) -> Result<Vec<f64>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            // A non-numeric first line is a header.
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{}: {e}", path.display()),
                });
            }
        }
    }
    Ok(out)
}

fn audit(a: &AuditArgs, csv: bool) -> Result<String, Error> {
    let (outcome, ties) = match (&a.losses, a.r, a.v) {
        (Some(files), None, None) => {
            let members = read_losses(&files[0])?;
            let nonmembers = read_losses(&files[1])?;
            let g = guesses_from_losses(&members, &nonmembers, a.k, a.confidence)?;
            (g.outcome, Some(g.boundary_ties))
        }
        (None, Some(r), Some(v)) => (
            AuditOutcome::new(r, v, a.m.unwrap_or(r), a.confidence)?,
            None,
        ),
        _ => {
            return Err(Error::InvalidArgument(
                "give either --r and --v, or --losses MEMBER NONMEMBER".into(),
            ))
        }
    };
    let eps = epsilon_hat(&outcome)?;
    if csv {
        return Ok(format!(
            "guesses_made,guesses_correct,total_canaries,confidence,epsilon_hat\n{},{},{},{},{}\n",
            outcome.guesses_made,
            outcome.guesses_correct,
            outcome.total_canaries,
            outcome.confidence,
            eps
        ));
    }
    let mut v = json!({ "outcome": outcome, "epsilon_hat": eps });
    if let Some(t) = ties {
        v["boundary_ties"] = json!(t);
    }
    Ok(to_json(&v))
}

fn parse_config(s: &str, clip: f64) -> Result<Config, Error> {
    let bad = || Error::InvalidArgument(format!("grid entry '{s}' must be b:T:eta"));
    let parts: Vec<&str> = s.trim().split(':').collect();
    let [b, t, eta] = parts.as_slice() else {
        return Err(bad());
    };
    Config::new(
        b.parse().map_err(|_| bad())?,
        t.parse().map_err(|_| bad())?,
        eta.parse().map_err(|_| bad())?,
        clip,
    )
}

fn sim(a: &SimArgs, seed: u64, csv: bool) -> Result<String, Error> {
    let grid = a
        .grid
        .iter()
        .map(|g| parse_config(g, a.clip))
        .collect::<Result<Vec<_>, _>>()?;
    if a.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()));
    }
    let world = WorldSpec {
        n_train: a.n_train,
        n_test: a.n_test,
        dim: a.dim,
        canaries: a.canaries,
        seed,
        ..WorldSpec::default()
    };
    let n = (a.n_train + a.canaries) as u64;
    let delta = match a.delta {
        Some(d) => d,
        None => default_delta(n)?,
    };
    let spec = PipelineSpec {
        world,
        grid,
        target: PrivacyParams::new(a.epsilon, delta)?,
        accountant: a.accountant,
        // Run seeds are derived from the root so different roots never
        // share training randomness.
        seeds: (0..a.runs)
            .map(|i| seed.wrapping_mul(1_000_003).wrapping_add(i))
            .collect(),
        sampler: a.sampler,
        optimizer: match a.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::adam(),
        },
    };
    let output = run_pipeline(&spec)?;

    if let Some(dir) = &a.trace_dir {
        std::fs::create_dir_all(dir)?;
        for (rec, trace) in output.records.iter().zip(&output.traces) {
            let name = format!(
                "trace_b{}_T{}_eta{}_seed{}.csv",
                rec.b, rec.steps, rec.eta, rec.seed
            );
            std::fs::write(dir.join(name), trace_csv(trace))?;
        }
    }
    let pool_text = to_jsonl(&output.records);
    match &a.out {
        Some(path) => {
            std::fs::write(path, &pool_text)?;
            if csv {
                let mut s = String::from("b,T,eta,c,sigma\n");
                for c in &output.calibrated {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        c.config.b, c.config.steps, c.config.eta, c.config.clip, c.sigma
                    );
                }
                return Ok(s);
            }
            Ok(to_json(&json!({
                "pool": path.display().to_string(),
                "records": output.records.len(),
                "delta": delta,
                "calibrated": output.calibrated,
            })))
        }
        // Without --out the pool itself is the output.
        None => Ok(pool_text),
    }
}
