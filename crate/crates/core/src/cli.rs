//! Command-line front end.
//!
//! Single-point reports are JSON on stdout (or `--output`), sweeps are CSV.
//! Failures print a JSON error object on stderr and map to the exit codes
//! below.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::disciplines::{self, build_model, Discipline, DisciplineError, MultiSourceParams};
use crate::model::{ModelError, ShsModel};
use crate::simulator::{self, Budget, Estimate, SimConfig, SimError, SimQuery, Warmup};
use crate::solver::{MgfQuery, MomentQuery, Solver, SolverConfig, SolverError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REGION: i32 = 3;
pub const EXIT_UNSTABLE: i32 = 4;
pub const EXIT_GUARD: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "jointage",
    version,
    about = "Joint AoI moments, MGFs and correlations of multi-source LCFS queues and general SHS models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the closed forms of a multi-source discipline.
    Analyze(AnalyzeArgs),
    /// Run the generic solver on an SHS model file.
    Solve(SolveArgs),
    /// Estimate moments, correlation or the MGF by simulation.
    Simulate(SimulateArgs),
    /// Sweep a parameter and write correlation curves as CSV.
    Sweep(SweepArgs),
    /// Write the SHS model file of a discipline.
    BuildModel(BuildModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DisciplineArg {
    #[value(alias = "lcfs-np")]
    Np,
    #[value(alias = "lcfs-ps")]
    Ps,
    #[value(alias = "lcfs-sa")]
    Sa,
}

impl From<DisciplineArg> for Discipline {
    fn from(d: DisciplineArg) -> Self {
        match d {
            DisciplineArg::Np => Discipline::Np,
            DisciplineArg::Ps => Discipline::Ps,
            DisciplineArg::Sa => Discipline::Sa,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct QueueArgs {
    #[arg(long, value_enum)]
    pub discipline: DisciplineArg,
    /// Arrival rate of each source (1/time), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Service rate (1/time).
    #[arg(long)]
    pub mu: f64,
}

impl QueueArgs {
    fn params(&self) -> Result<MultiSourceParams, CliError> {
        MultiSourceParams::new(self.lambdas.clone(), self.mu)
            .map_err(|e| CliError::config_field(e.to_string(), "lambdas"))
    }
}

/// MGF argument, raw or normalized by `mu`.
#[derive(Debug, Clone, Args)]
pub struct SArgs {
    /// Raw MGF argument, one entry per element of K.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "s_bar")]
    pub s: Option<Vec<f64>>,
    /// Normalized MGF argument s/mu, one entry per element of K.
    #[arg(long = "s-bar", value_delimiter = ',', allow_negative_numbers = true)]
    pub s_bar: Option<Vec<f64>>,
}

impl SArgs {
    fn raw(&self, mu: f64) -> Option<Vec<f64>> {
        match (&self.s, &self.s_bar) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(sb)) => Some(sb.iter().map(|v| v * mu).collect()),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub queue: QueueArgs,
    /// Sources of the MGF set K (1-based). Defaults to 1..=|s|.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[command(flatten)]
    pub s: SArgs,
    /// Source pair for the cross moment and correlation.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub corr: Option<Vec<usize>>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// SHS model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Age indices (0-based), one per entry of m or s.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Moment exponents.
    #[arg(long, value_delimiter = ',', conflicts_with = "s")]
    pub m: Option<Vec<u32>>,
    /// Raw MGF argument.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub s: Option<Vec<f64>>,
    /// Age pair for the correlation coefficient.
    #[arg(long, value_delimiter = ',')]
    pub corr: Option<Vec<usize>>,
    /// Cap on the unknowns of one fixed-point system.
    #[arg(long, default_value_t = SolverConfig::default().max_unknowns)]
    pub max_unknowns: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, conflicts_with = "model")]
    pub discipline: Option<DisciplineArg>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// SHS model file instead of a discipline.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ages (equal to source indices for disciplines) to estimate.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[command(flatten)]
    pub s: SArgs,
    #[arg(long, value_delimiter = ',')]
    pub corr: Option<Vec<usize>>,
    /// Transitions per replication.
    #[arg(long, conflicts_with = "time")]
    pub events: Option<u64>,
    /// Simulated time per replication.
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Fraction of the budget discarded as warmup.
    #[arg(long, default_value_t = 0.05)]
    pub warmup: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepVar {
    /// Total load, split evenly over the N sources.
    Rho,
    /// Rate of source 1 with lambda_2 fixed (N = 2).
    #[value(name = "lambda_1", alias = "lambda1")]
    Lambda1,
    /// Share of the total load carried by sources other than 1 and 2.
    #[value(name = "rho_minus", alias = "rho-minus")]
    RhoMinus,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long = "var", value_enum)]
    pub var: SweepVar,
    #[arg(long)]
    pub min: f64,
    #[arg(long)]
    pub max: f64,
    /// Number of grid points, endpoints included.
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Number of sources (rho: at least 2, rho_minus: at least 3).
    #[arg(long)]
    pub n: Option<usize>,
    /// Fixed lambda_2 for the lambda_1 sweep.
    #[arg(long = "lambda-2", default_value_t = 0.5)]
    pub lambda_2: f64,
    /// Fixed total load for the rho_minus sweep.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Columns to emit.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![DisciplineArg::Np, DisciplineArg::Ps, DisciplineArg::Sa])]
    pub disciplines: Vec<DisciplineArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildModelArgs {
    #[command(flatten)]
    pub queue: QueueArgs,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// A failure with its exit code and a JSON description.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub field: Option<String>,
    pub details: Option<Value>,
}

impl CliError {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
            field: None,
            details: None,
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, "config", message)
    }

    fn config_field(message: impl Into<String>, field: &str) -> Self {
        let mut e = Self::config(message);
        e.field = Some(field.to_string());
        e
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("code".into(), json!(self.code));
        obj.insert("kind".into(), json!(self.kind));
        obj.insert("message".into(), json!(self.message));
        if let Some(f) = &self.field {
            obj.insert("field".into(), json!(f));
        }
        if let Some(d) = &self.details {
            obj.insert("details".into(), d.clone());
        }
        json!({ "error": obj })
    }
}

impl From<DisciplineError> for CliError {
    fn from(e: DisciplineError) -> Self {
        match &e {
            DisciplineError::OutsideRegion { factor, value } => {
                let mut c = CliError::new(EXIT_REGION, "outside_region", e.to_string());
                c.details = Some(json!({ "factor": factor, "value": value }));
                c
            }
            DisciplineError::InvalidIndex(_) => CliError::config_field(e.to_string(), "k"),
            DisciplineError::InvalidParams(_) => CliError::config(e.to_string()),
            DisciplineError::DegenerateVariance(_) => CliError::new(EXIT_UNSTABLE, "degenerate", e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match &e {
            SolverError::Model(_)
            | SolverError::Tensor(_)
            | SolverError::InvalidQuery(_)
            | SolverError::TooLarge { .. } => CliError::config(e.to_string()),
            SolverError::OutsideStabilityRegion {
                max_real_eigenvalue, ..
            } => {
                let mut c = CliError::new(EXIT_REGION, "outside_region", e.to_string());
                c.details = Some(json!({ "max_eig_real": max_real_eigenvalue }));
                c
            }
            SolverError::NotErgodic => CliError::new(EXIT_UNSTABLE, "not_ergodic", e.to_string()),
            _ => CliError::new(EXIT_UNSTABLE, "unstable", e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Unstable(inner) => inner.into(),
            SimError::MgfDiverged { .. } => CliError::new(EXIT_GUARD, "guard", e.to_string()),
            SimError::AbsorbingState(_) => CliError::new(EXIT_UNSTABLE, "not_ergodic", e.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::config_field(e.to_string(), "model")
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let failure = parse_failure(&e);
            let _ = writeln!(err, "{}", failure.to_json());
            return failure.code;
        }
    };
    match execute(&cli.command) {
        Ok(Output { text, path }) => match path {
            Some(p) => match fs::write(&p, text) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let failure = CliError::config_field(format!("cannot write {}: {e}", p.display()), "output");
                    let _ = writeln!(err, "{}", failure.to_json());
                    failure.code
                }
            },
            None => {
                let _ = out.write_all(text.as_bytes());
                EXIT_OK
            }
        },
        Err(failure) => {
            let _ = writeln!(err, "{}", failure.to_json());
            failure.code
        }
    }
}

fn parse_failure(e: &clap::Error) -> CliError {
    let field = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        Some(ContextValue::Strings(v)) => v.first().cloned(),
        _ => None,
    };
    let rendered = e.render().to_string();
    let message = rendered
        .lines()
        .take_while(|l| !l.trim().is_empty() && !l.starts_with("Usage"))
        .map(|l| l.trim().trim_start_matches("error: "))
        .collect::<Vec<_>>()
        .join(" ");
    let mut c = CliError::config(message);
    c.field = field.map(|f| {
        f.split_whitespace()
            .next()
            .unwrap_or("")
            .trim_start_matches('-')
            .to_string()
    });
    c
}

struct Output {
    text: String,
    path: Option<PathBuf>,
}

fn json_output<T: Serialize>(report: &T, path: &Option<PathBuf>) -> Result<Output, CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    Ok(Output {
        text,
        path: path.clone(),
    })
}

fn execute(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Analyze(a) => json_output(&analyze(a)?, &a.output),
        Command::Solve(a) => json_output(&solve(a)?, &a.output),
        Command::Simulate(a) => json_output(&simulate(a)?, &a.output),
        Command::Sweep(a) => Ok(Output {
            text: sweep(a)?,
            path: a.output.clone(),
        }),
        Command::BuildModel(a) => {
            let model = build_model(&a.queue.params()?, a.queue.discipline.into());
            let mut text = model.to_json();
            text.push('\n');
            Ok(Output {
                text,
                path: a.output.clone(),
            })
        }
    }
}

fn pair(v: &Option<Vec<usize>>) -> Result<Option<(usize, usize)>, CliError> {
    match v.as_deref() {
        None => Ok(None),
        Some([a, b]) if a != b => Ok(Some((*a, *b))),
        Some(_) => Err(CliError::config_field("--corr needs two distinct indices", "corr")),
    }
}

/// Ages paired with their MGF arguments.
type SetAndS = (Vec<usize>, Vec<f64>);

fn set_and_s(k: &Option<Vec<usize>>, s: Option<Vec<f64>>, first: usize) -> Result<Option<SetAndS>, CliError> {
    let Some(s) = s else {
        return Ok(None);
    };
    let k = k.clone().unwrap_or_else(|| (first..first + s.len()).collect());
    if k.len() != s.len() {
        return Err(CliError::config_field(
            format!("K has {} entries but s has {}", k.len(), s.len()),
            "s",
        ));
    }
    for (i, a) in k.iter().enumerate() {
        if k[..i].contains(a) {
            return Err(CliError::config_field(format!("index {a} repeated in K"), "k"));
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(CliError::config_field("s must be finite", "s"));
    }
    Ok(Some((k, s)))
}

/// Report of `analyze`.
#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub discipline: &'static str,
    pub lambdas: Vec<f64>,
    pub mu: f64,
    pub rho: f64,
    pub sources: Vec<usize>,
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<AnalyzeReport, CliError> {
    let params = a.queue.params()?;
    let d: Discipline = a.queue.discipline.into();
    let corr = pair(&a.corr)?;
    let query = set_and_s(&a.k, a.s.raw(params.mu()), 1)?;

    let sources = match (corr, &query, &a.k) {
        (Some((i, j)), _, _) => vec![i, j],
        (None, Some((k, _)), _) => k.clone(),
        (None, None, Some(k)) => k.clone(),
        (None, None, None) => (1..=params.sources()).collect(),
    };
    let mean = sources
        .iter()
        .map(|&i| disciplines::mean(&params, d, i))
        .collect::<Result<Vec<_>, _>>()?;
    let second_moment = sources
        .iter()
        .map(|&i| disciplines::second_moment(&params, d, i))
        .collect::<Result<Vec<_>, _>>()?;
    let (cross_moment, correlation) = match corr {
        Some((i, j)) => (
            Some(disciplines::cross_moment(&params, d, i, j)?),
            Some(disciplines::correlation(&params, d, i, j)?),
        ),
        None => (None, None),
    };
    let (mgf, region) = match &query {
        Some((k, s)) => {
            disciplines::check_validity(&params, k, s)?;
            (
                Some(disciplines::joint_mgf(&params, d, k, s)?),
                Some(json!({ "valid": true })),
            )
        }
        None => (None, None),
    };
    Ok(AnalyzeReport {
        discipline: d.name(),
        lambdas: params.lambdas().to_vec(),
        mu: params.mu(),
        rho: params.rho(),
        sources,
        mean,
        second_moment,
        k: query.as_ref().map(|(k, _)| k.clone()),
        s: query.map(|(_, s)| s),
        mgf,
        region,
        cross_moment,
        correlation,
    })
}

fn load_model(path: &Path) -> Result<ShsModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config_field(format!("cannot read {}: {e}", path.display()), "model"))?;
    Ok(ShsModel::from_json(&text)?)
}

/// Report of `solve`.
#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub stationary_distribution: Vec<f64>,
    pub max_eig_real: f64,
    pub stable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgf: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}

pub fn solve(a: &SolveArgs) -> Result<SolveReport, CliError> {
    let model = load_model(&a.model)?;
    let config = SolverConfig {
        max_unknowns: a.max_unknowns,
        ..SolverConfig::default()
    };
    let solver = Solver::new(&model, config)?;
    let corr = pair(&a.corr)?;
    let mut report = SolveReport {
        stationary_distribution: solver.distribution().to_vec(),
        max_eig_real: 0.0,
        stable: true,
        k: None,
        m: None,
        s: None,
        moment: None,
        mean: None,
        second_moment: None,
        cross_moment: None,
        mgf: None,
        correlation: None,
    };
    let mut order = 1;
    let mut mgf_eig = None;
    if let Some(m) = &a.m {
        let k =
            a.k.clone()
                .ok_or_else(|| CliError::config_field("--m needs --k", "k"))?;
        if k.len() != m.len() {
            return Err(CliError::config_field(
                format!("K has {} entries but m has {}", k.len(), m.len()),
                "m",
            ));
        }
        let sol = solver.joint_moments(&MomentQuery { m: m.clone() })?;
        let value = sol.value(&k)?;
        match m.as_slice() {
            [1] => report.mean = Some(value),
            [2] => report.second_moment = Some(value),
            [1, 1] if k[0] != k[1] => report.cross_moment = Some(value),
            _ => {}
        }
        report.moment = Some(value);
        report.k = Some(k);
        report.m = Some(m.clone());
        order = m.len();
    } else if let Some((k, s)) = set_and_s(&a.k, a.s.clone(), 0)? {
        let sol = solver.joint_mgf(&MgfQuery {
            ages: k.clone(),
            s: s.clone(),
        })?;
        report.mgf = Some(sol.value);
        order = k.len();
        mgf_eig = Some(sol.max_real_eigenvalue);
        report.k = Some(k);
        report.s = Some(s);
    } else if a.k.is_some() {
        return Err(CliError::config_field("--k needs --m or --s", "k"));
    }
    if let Some((i, j)) = corr {
        let first = solver.joint_moments(&MomentQuery { m: vec![1] })?;
        let second = solver.joint_moments(&MomentQuery { m: vec![2] })?;
        let cross = solver.joint_moments(&MomentQuery { m: vec![1, 1] })?;
        let r = disciplines::pearson(
            first.value(&[i])?,
            second.value(&[i])?,
            first.value(&[j])?,
            second.value(&[j])?,
            cross.value(&[i, j])?,
        )?;
        report.correlation = Some(r);
        order = order.max(2);
    }
    let stability = solver.stability(order, None)?;
    report.max_eig_real = stability.max_real_eigenvalue;
    report.stable = stability.stable;
    // an MGF query is judged on the systems its entry actually depends on
    if let Some(eig) = mgf_eig {
        report.max_eig_real = eig;
        report.stable &= eig < -SolverConfig::default().stability_tol;
    }
    Ok(report)
}

/// Per-quantity entry of a simulation report.
#[derive(Debug, Serialize)]
pub struct SimEntry {
    pub quantity: String,
    pub estimate: f64,
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_3se: Option<bool>,
}

/// Report of `simulate`.
#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub replications: usize,
    pub budget: Budget,
    pub estimates: Vec<SimEntry>,
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_moment: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mgf: Option<f64>,
    /// Standard errors keyed like the estimate fields.
    pub stderr: Value,
    /// "pass" when every analytic reference is within 3 standard errors,
    /// "fail" otherwise, absent without references.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<&'static str>,
}

pub fn simulate(a: &SimulateArgs) -> Result<SimulateReport, CliError> {
    let (model, params, discipline) = match (&a.model, a.discipline) {
        (Some(path), None) => (load_model(path)?, None, None),
        (None, Some(d)) => {
            let lambdas = a
                .lambdas
                .clone()
                .ok_or_else(|| CliError::config_field("--discipline needs --lambdas", "lambdas"))?;
            let mu =
                a.mu.ok_or_else(|| CliError::config_field("--discipline needs --mu", "mu"))?;
            let params =
                MultiSourceParams::new(lambdas, mu).map_err(|e| CliError::config_field(e.to_string(), "lambdas"))?;
            let d: Discipline = d.into();
            (build_model(&params, d), Some(params), Some(d))
        }
        _ => {
            return Err(CliError::config_field(
                "give either --discipline or --model",
                "discipline",
            ))
        }
    };
    let mu = params.as_ref().map(MultiSourceParams::mu).unwrap_or(1.0);
    if a.s.s_bar.is_some() && params.is_none() {
        return Err(CliError::config_field("--s-bar needs --discipline", "s-bar"));
    }
    let corr = pair(&a.corr)?;
    let first = if params.is_some() { 1 } else { 0 };
    let mgf = set_and_s(&a.k, a.s.raw(mu), first)?;
    if let (Some(p), Some((k, s))) = (&params, &mgf) {
        // refuse before simulating
        disciplines::check_validity(p, k, s)?;
    }
    let ages = match (corr, &mgf, &a.k) {
        (Some((i, j)), _, _) => vec![i, j],
        (None, Some(_), _) => Vec::new(),
        (None, None, Some(k)) => k.clone(),
        (None, None, None) => (first..model.age_dim()).collect(),
    };

    let mut queries = Vec::new();
    for &i in &ages {
        queries.push(SimQuery::Mean(i));
        queries.push(SimQuery::SecondMoment(i));
    }
    if let Some((i, j)) = corr {
        queries.push(SimQuery::CrossMoment(i, j));
        queries.push(SimQuery::Correlation(i, j));
    }
    if let Some((k, s)) = &mgf {
        queries.push(SimQuery::Mgf {
            ages: k.clone(),
            s: s.clone(),
        });
    }

    let budget = match (a.events, a.time) {
        (_, Some(t)) => Budget::Time(t),
        (Some(e), None) => Budget::Events(e),
        (None, None) => Budget::Events(1_000_000),
    };
    let config = SimConfig {
        seed: a.seed,
        budget,
        warmup: Warmup::Fraction(a.warmup),
        replications: a.reps,
    };
    let est = simulator::simulate(&model, &config, &queries)?;

    let analytic = |q: &SimQuery| -> Result<Option<f64>, CliError> {
        let (Some(p), Some(d)) = (&params, discipline) else {
            return Ok(None);
        };
        Ok(Some(match q {
            SimQuery::Mean(i) => disciplines::mean(p, d, *i)?,
            SimQuery::SecondMoment(i) => disciplines::second_moment(p, d, *i)?,
            SimQuery::CrossMoment(i, j) => disciplines::cross_moment(p, d, *i, *j)?,
            SimQuery::Correlation(i, j) => disciplines::correlation(p, d, *i, *j)?,
            SimQuery::Mgf { ages, s } => disciplines::joint_mgf(p, d, ages, s)?,
        }))
    };

    let mut entries = Vec::new();
    let mut report = SimulateReport {
        seed: a.seed,
        replications: a.reps,
        budget,
        estimates: Vec::new(),
        mean: Vec::new(),
        second_moment: Vec::new(),
        cross_moment: None,
        correlation: None,
        mgf: None,
        stderr: Value::Null,
        verdict: None,
    };
    let mut se = Map::new();
    let mut se_mean = Vec::new();
    let mut se_sq = Vec::new();
    for (q, e) in est.queries.iter().zip(&est.values) {
        let Estimate { estimate, std_error } = *e;
        let reference = analytic(q)?;
        let name = match q {
            SimQuery::Mean(i) => {
                report.mean.push(estimate);
                se_mean.push(std_error);
                format!("mean[{i}]")
            }
            SimQuery::SecondMoment(i) => {
                report.second_moment.push(estimate);
                se_sq.push(std_error);
                format!("second_moment[{i}]")
            }
            SimQuery::CrossMoment(i, j) => {
                report.cross_moment = Some(estimate);
                se.insert("cross_moment".into(), json!(std_error));
                format!("cross_moment[{i},{j}]")
            }
            SimQuery::Correlation(i, j) => {
                report.correlation = Some(estimate);
                se.insert("correlation".into(), json!(std_error));
                format!("correlation[{i},{j}]")
            }
            SimQuery::Mgf { ages, .. } => {
                report.mgf = Some(estimate);
                se.insert("mgf".into(), json!(std_error));
                let k: Vec<String> = ages.iter().map(usize::to_string).collect();
                format!("mgf[{}]", k.join(","))
            }
        };
        let within = reference.map(|r| e.covers(r, 3.0));
        entries.push(SimEntry {
            quantity: name,
            estimate,
            stderr: std_error,
            analytic: reference,
            within_3se: within,
        });
    }
    if !se_mean.is_empty() {
        se.insert("mean".into(), json!(se_mean));
        se.insert("second_moment".into(), json!(se_sq));
    }
    report.stderr = Value::Object(se);
    if params.is_some() {
        let pass = entries.iter().all(|e| e.within_3se.unwrap_or(true));
        report.verdict = Some(if pass { "pass" } else { "fail" });
    }
    report.estimates = entries;
    Ok(report)
}

/// Formats `v` with 12 significant digits, `%.12g` style.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed)
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Parameters of one sweep grid point.
fn sweep_params(a: &SweepArgs, x: f64) -> Result<MultiSourceParams, CliError> {
    let bad = |m: String| CliError::config_field(m, "min");
    match a.var {
        SweepVar::Rho => {
            let n = a.n.unwrap_or(2);
            if n < 2 {
                return Err(CliError::config_field("the rho sweep needs at least 2 sources", "n"));
            }
            MultiSourceParams::from_loads(&vec![x / n as f64; n], a.mu).map_err(|e| bad(format!("rho = {x}: {e}")))
        }
        SweepVar::Lambda1 => {
            if a.n.is_some_and(|n| n != 2) {
                return Err(CliError::config_field("the lambda_1 sweep uses 2 sources", "n"));
            }
            MultiSourceParams::new(vec![x, a.lambda_2], a.mu).map_err(|e| bad(format!("lambda_1 = {x}: {e}")))
        }
        SweepVar::RhoMinus => {
            let n = a.n.unwrap_or(3);
            if n < 3 {
                return Err(CliError::config_field(
                    "the rho_minus sweep needs at least 3 sources",
                    "n",
                ));
            }
            // a zero share would leave the other sources without arrivals
            if !(x > 0.0 && x < 1.0) {
                return Err(bad(format!("rho_minus share {x} must lie in (0, 1)")));
            }
            let pair = (1.0 - x) * a.rho / 2.0;
            let other = x * a.rho / (n - 2) as f64;
            let mut loads = vec![pair, pair];
            loads.extend(std::iter::repeat_n(other, n - 2));
            MultiSourceParams::from_loads(&loads, a.mu).map_err(|e| bad(format!("rho_minus share {x}: {e}")))
        }
    }
}

/// CSV of the correlation of sources 1 and 2 over the sweep grid.
pub fn sweep(a: &SweepArgs) -> Result<String, CliError> {
    if !(a.min.is_finite() && a.max.is_finite()) || a.min >= a.max {
        return Err(CliError::config_field(
            format!("grid [{}, {}] is empty or not finite", a.min, a.max),
            "min",
        ));
    }
    if a.steps < 2 {
        return Err(CliError::config_field("a grid needs at least 2 points", "steps"));
    }
    if a.disciplines.is_empty() {
        return Err(CliError::config_field("no disciplines selected", "disciplines"));
    }
    let columns: Vec<Discipline> = a.disciplines.iter().map(|&d| d.into()).collect();
    let grid: Vec<f64> = (0..a.steps)
        .map(|i| {
            if i + 1 == a.steps {
                a.max
            } else {
                a.min + (a.max - a.min) * i as f64 / (a.steps - 1) as f64
            }
        })
        .collect();
    let rows: Vec<Result<String, CliError>> = grid
        .par_iter()
        .map(|&x| {
            let params = sweep_params(a, x)?;
            let mut row = format_sig12(x);
            for &d in &columns {
                let r = disciplines::correlation(&params, d, 1, 2)?;
                row.push(',');
                row.push_str(&format_sig12(r));
            }
            row.push('\n');
            Ok(row)
        })
        .collect();
    let mut csv = String::from("x");
    for d in &columns {
        csv.push_str(",corr_");
        csv.push_str(d.name());
    }
    csv.push('\n');
    for row in rows {
        csv.push_str(&row?);
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig12_formatting() {
        assert_eq!(format_sig12(0.1), "0.1");
        assert_eq!(format_sig12(-1.0 / 6.0), "-0.166666666667");
        assert_eq!(format_sig12(2.5), "2.5");
        assert_eq!(format_sig12(1e-7), "1e-7");
        assert_eq!(format_sig12(123456789012345.0), "1.23456789012e14");
        assert_eq!(format_sig12(0.0), "0");
        let v = 0.123456789012345;
        assert_eq!(format_sig12(v).parse::<f64>().unwrap(), 0.123456789012);
    }

    #[test]
    fn missing_mu_names_the_field() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            ["jointage", "analyze", "--discipline", "ps", "--lambdas", "0.5,0.5"],
            &mut out,
            &mut err,
        );
        assert_eq!(code, EXIT_CONFIG);
        let v: Value = serde_json::from_slice(&err).unwrap();
        assert_eq!(v["error"]["field"], "mu");
    }
}
