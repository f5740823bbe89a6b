//! Flag surface, flat key=value config files, and the resolved `RunConfig`
//! that is echoed verbatim into every JSON output. Command-line flags take
//! precedence over config-file entries; defaults fill the rest.

use std::collections::HashMap;
use std::fmt;
use std::fs;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "gptrain", version, about = "Gaussian-process training, evidence, and prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Draw a synthetic series from a covariance model; write CSV plus a truth record.
    Generate(CommonArgs),
    /// Maximize the hyperlikelihood; report the peak with standard errors.
    Fit(CommonArgs),
    /// Estimate the log evidence by Laplace expansion or direct Monte Carlo.
    Evidence(CommonArgs),
    /// Evidence for two or more models on the same data, with log Bayes factors.
    Compare(CommonArgs),
    /// Predictive mean and variance on a query grid.
    Predict(CommonArgs),
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::Generate(_) => "generate",
            Cmd::Fit(_) => "fit",
            Cmd::Evidence(_) => "evidence",
            Cmd::Compare(_) => "compare",
            Cmd::Predict(_) => "predict",
        }
    }
}

/// One flag set shared by all subcommands: which fields matter per command
/// is enforced at resolution time, so a config file can carry any subset.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Covariance model: k1, k2, or periodic:N. Repeat the flag for `compare`.
    #[arg(long = "model")]
    pub model: Vec<String>,
    /// Relative noise level sigma_n.
    #[arg(long = "sigma-n")]
    pub sigma_n: Option<f64>,
    /// RNG seed: sampling (generate), multistart placement and MC draws otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input series CSV with t,y rows; `#` comments and a header are allowed.
    #[arg(long)]
    pub input: Option<String>,
    /// Output path (CSV for generate/predict, JSON otherwise); stdout when omitted.
    #[arg(long)]
    pub output: Option<String>,
    /// Multistart count for fits.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Convergence threshold on the gradient sup-norm relative to max(1, |log p|).
    #[arg(long)]
    pub gtol: Option<f64>,
    /// Objective-evaluation cap per start (unlimited when omitted).
    #[arg(long = "max-evals")]
    pub max_evals: Option<usize>,
    /// Monte-Carlo likelihood-evaluation budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Evidence method: laplace or mc.
    #[arg(long)]
    pub method: Option<String>,
    /// Prior box override key=lo,hi; key in {window-phi, periodic-phi, xi, psi}. Repeatable.
    #[arg(long = "prior-override")]
    pub prior_override: Vec<String>,
    /// Flat key=value config file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<String>,
    /// Number of points in the generated series (generate).
    #[arg(long)]
    pub n: Option<usize>,
    /// Truth log-timescale coordinates phi, comma-separated (generate).
    #[arg(long)]
    pub phi: Option<String>,
    /// Truth smoothness coordinates xi in (-1/2, 1/2), comma-separated (generate).
    #[arg(long)]
    pub xi: Option<String>,
    /// Truth-record JSON path (generate; default: output with a .truth.json extension).
    #[arg(long = "truth-output")]
    pub truth_output: Option<String>,
    /// Query grid start time (predict; default: first training time).
    #[arg(long = "query-start")]
    pub query_start: Option<f64>,
    /// Query grid end time (predict; default: last training time).
    #[arg(long = "query-end")]
    pub query_end: Option<f64>,
    /// Query grid point count (predict).
    #[arg(long = "query-count")]
    pub query_count: Option<usize>,
    /// Predictive-curve CSV path (compare, optional).
    #[arg(long)]
    pub curves: Option<String>,
    /// Number of grid points in the curves CSV (compare).
    #[arg(long = "curve-points")]
    pub curve_points: Option<usize>,
}

/// Errors carrying their process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys, or value syntax.
    Usage(String),
    /// Numeric, optimization, or I/O failure.
    Failure(String),
    /// Evidence refused by trust diagnostics; output was still written.
    Soft(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 3,
            CliError::Soft(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
            CliError::Soft(m) => write!(f, "{m}"),
        }
    }
}

impl From<gptrain::Error> for CliError {
    fn from(e: gptrain::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(format!("json: {e}"))
    }
}

/// A parsed model flag value.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub n_periodic: usize,
    pub has_window: bool,
    pub sigma_n: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct PriorOverride {
    pub key: String,
    pub lo: f64,
    pub hi: f64,
}

/// The effective configuration of a run after merging flags, config file,
/// and defaults. Serialized verbatim into every JSON output.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub models: Vec<ModelConfig>,
    pub prior_overrides: Vec<PriorOverride>,
    pub seed: u64,
    pub starts: usize,
    pub gtol: f64,
    pub max_evals_per_start: Option<usize>,
    pub budget: usize,
    pub method: String,
    pub input: Option<String>,
    pub output: Option<String>,
    pub n: Option<usize>,
    pub truth_phi: Option<Vec<f64>>,
    pub truth_xi: Option<Vec<f64>>,
    pub truth_output: Option<String>,
    pub query_start: Option<f64>,
    pub query_end: Option<f64>,
    pub query_count: usize,
    pub curves: Option<String>,
    pub curve_points: usize,
}

/// Flat key=value file: one pair per line, `#` comments and blank lines
/// ignored. Repeated keys accumulate; scalar consumers take the last.
struct FileConfig {
    entries: HashMap<String, Vec<String>>,
}

impl FileConfig {
    fn empty() -> Self {
        FileConfig { entries: HashMap::new() }
    }

    fn load(path: &str) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config file {path}: {e}")))?;
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config file {path} line {}: expected key = value",
                    i + 1
                )));
            };
            entries.entry(k.trim().to_string()).or_default().push(v.trim().to_string());
        }
        Ok(FileConfig { entries })
    }

    fn last(&self, key: &str) -> Option<&str> {
        self.entries.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    fn all(&self, key: &str) -> &[String] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse value `{raw}`")))
}

/// Flag wins, then config file, then the default.
fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => match file.last(key) {
            Some(raw) => parse_as(key, raw),
            None => Ok(default),
        },
    }
}

fn pick_opt<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.last(key).map(|raw| parse_as(key, raw)).transpose(),
    }
}

fn parse_model(raw: &str, sigma_n: f64) -> Result<ModelConfig, CliError> {
    let (n_periodic, name) = match raw {
        "k1" => (1, "k1".to_string()),
        "k2" => (2, "k2".to_string()),
        _ => match raw.strip_prefix("periodic:") {
            Some(num) => {
                let n: usize = parse_as("model", num)?;
                if n == 0 {
                    return Err(CliError::Usage("model periodic:N needs N >= 1".into()));
                }
                (n, format!("periodic:{n}"))
            }
            None => {
                return Err(CliError::Usage(format!(
                    "model: expected k1, k2, or periodic:N, got `{raw}`"
                )))
            }
        },
    };
    Ok(ModelConfig { name, n_periodic, has_window: true, sigma_n })
}

fn parse_override(raw: &str) -> Result<PriorOverride, CliError> {
    let bad = || CliError::Usage(format!("prior-override: expected key=lo,hi, got `{raw}`"));
    let (key, range) = raw.split_once('=').ok_or_else(bad)?;
    let (lo, hi) = range.split_once(',').ok_or_else(bad)?;
    let key = key.trim().replace('_', "-");
    if !matches!(key.as_str(), "window-phi" | "periodic-phi" | "xi" | "psi") {
        return Err(CliError::Usage(format!(
            "prior-override: key must be window-phi, periodic-phi, xi, or psi, got `{key}`"
        )));
    }
    let lo: f64 = parse_as("prior-override lo", lo.trim())?;
    let hi: f64 = parse_as("prior-override hi", hi.trim())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::Usage(format!(
            "prior-override {key}: need finite lo < hi, got {lo},{hi}"
        )));
    }
    Ok(PriorOverride { key, lo, hi })
}

fn parse_f64_list(key: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| parse_as(key, s.trim()))
        .collect()
}

/// Merge flags, config file, and defaults into the run configuration.
pub fn resolve(command: &str, args: &CommonArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };

    let sigma_n = pick(args.sigma_n, &file, "sigma-n", 0.01)?;
    if !(sigma_n.is_finite() && sigma_n > 0.0) {
        return Err(CliError::Usage(format!("sigma-n: need a positive value, got {sigma_n}")));
    }

    let model_raws: Vec<String> = if args.model.is_empty() {
        file.all("model").to_vec()
    } else {
        args.model.clone()
    };
    let models = model_raws
        .iter()
        .map(|raw| parse_model(raw, sigma_n))
        .collect::<Result<Vec<_>, _>>()?;

    let override_raws: Vec<String> = if args.prior_override.is_empty() {
        file.all("prior-override").to_vec()
    } else {
        args.prior_override.clone()
    };
    let prior_overrides = override_raws
        .iter()
        .map(|raw| parse_override(raw))
        .collect::<Result<Vec<_>, _>>()?;

    let method = pick(args.method.clone(), &file, "method", "laplace".to_string())?;
    if !matches!(method.as_str(), "laplace" | "mc") {
        return Err(CliError::Usage(format!("method: expected laplace or mc, got `{method}`")));
    }

    let truth_phi = match &args.phi {
        Some(raw) => Some(parse_f64_list("phi", raw)?),
        None => file.last("phi").map(|raw| parse_f64_list("phi", raw)).transpose()?,
    };
    let truth_xi = match &args.xi {
        Some(raw) => Some(parse_f64_list("xi", raw)?),
        None => file.last("xi").map(|raw| parse_f64_list("xi", raw)).transpose()?,
    };

    Ok(RunConfig {
        command: command.to_string(),
        models,
        prior_overrides,
        seed: pick(args.seed, &file, "seed", 0)?,
        starts: pick(args.starts, &file, "starts", 10)?,
        gtol: pick(args.gtol, &file, "gtol", 1e-6)?,
        max_evals_per_start: pick_opt(args.max_evals, &file, "max-evals")?,
        budget: pick(args.budget, &file, "budget", 20_000)?,
        method,
        input: pick_opt(args.input.clone(), &file, "input")?,
        output: pick_opt(args.output.clone(), &file, "output")?,
        n: pick_opt(args.n, &file, "n")?,
        truth_phi,
        truth_xi,
        truth_output: pick_opt(args.truth_output.clone(), &file, "truth-output")?,
        query_start: pick_opt(args.query_start, &file, "query-start")?,
        query_end: pick_opt(args.query_end, &file, "query-end")?,
        query_count: pick(args.query_count, &file, "query-count", 200)?,
        curves: pick_opt(args.curves.clone(), &file, "curves")?,
        curve_points: pick(args.curve_points, &file, "curve-points", 200)?,
    })
}
