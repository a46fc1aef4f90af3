//! Configuration, presets and report writers behind the `biot-th` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use biot_core::analysis::{AnalysisError, ConvergenceReport, Refinement, StudyRow};
use biot_core::mms::CaseError;
use biot_core::schemes::{monolithic_matrix, run, SchemeError};
use biot_core::{
    compute_errors, example1, example2, spatial_study, temporal_study, Discretization, ErrorRecord,
    ManufacturedCase, Method, SchemeConfig,
};
use serde::Deserialize;
use thiserror::Error;

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "BIOT_TH_WORKERS";

pub const PRESETS: [&str; 10] =
    ["table1", "table2", "table3", "table4", "table5", "table6", "table7", "table8", "table9", "table10"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("dt required")]
    DtRequired,
    #[error("{0} required")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("unknown preset `{0}` (expected table1 .. table10)")]
    UnknownPreset(String),
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Case(#[from] CaseError),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot format csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Example1,
    Example2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Study {
    None,
    Temporal(Vec<f64>),
    Spatial(Vec<(usize, f64)>),
}

/// A number or a fraction such as `"1/64"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Number(f64),
    Text(String),
}

impl Real {
    fn value(&self, key: &'static str) -> Result<f64, ConfigError> {
        match self {
            Real::Number(v) => Ok(*v),
            Real::Text(s) => parse_real(s).map_err(|reason| ConfigError::Invalid { key, reason }),
        }
    }
}

/// Parses `0.25`, `1/4` or `1e-2`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if v.is_finite() { Ok(v) } else { Err(format!("`{s}` is not finite")) }
}

/// Raw settings from a config file or flags; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub preset: Option<String>,
    pub case: Option<String>,
    pub nu: Option<Real>,
    #[serde(rename = "K")]
    pub conductivity: Option<Real>,
    pub method: Option<u8>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub dt: Option<Real>,
    pub study: Option<String>,
    pub dts: Option<Vec<Real>>,
    /// `[n, dt]` rows of a spatial study.
    pub pairs: Option<Vec<(usize, Real)>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Values set in `over` replace those in `self`.
    pub fn merged(self, over: Settings) -> Settings {
        Settings {
            preset: over.preset.or(self.preset),
            case: over.case.or(self.case),
            nu: over.nu.or(self.nu),
            conductivity: over.conductivity.or(self.conductivity),
            method: over.method.or(self.method),
            n: over.n.or(self.n),
            k: over.k.or(self.k),
            l: over.l.or(self.l),
            dt: over.dt.or(self.dt),
            study: over.study.or(self.study),
            dts: over.dts.or(self.dts),
            pairs: over.pairs.or(self.pairs),
            out: over.out.or(self.out),
            workers: over.workers.or(self.workers),
        }
    }
}

fn real(v: f64) -> Option<Real> {
    Some(Real::Number(v))
}

/// Settings reproducing one of the published tables.
pub fn preset(name: &str) -> Result<Settings, ConfigError> {
    let index: usize = name
        .strip_prefix("table")
        .and_then(|s| s.parse().ok())
        .filter(|i| (1..=10).contains(i))
        .ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
    let mut s = Settings { preset: Some(name.into()), ..Default::default() };
    if index <= 2 {
        s.case = Some("example1".into());
        s.method = Some(index as u8);
        s.n = Some(64);
        s.k = Some(3);
        s.l = Some(2);
        s.study = Some("temporal".into());
        s.dts = Some([4.0, 8.0, 16.0, 32.0].map(|d| Real::Number(1.0 / d)).to_vec());
        return Ok(s);
    }
    let (nu, k_cond) = if index <= 6 { (0.3, 1.0) } else { (0.49999, 1e-6) };
    let (method, k, dt_den): (u8, usize, fn(usize) -> usize) = match (index - 3) % 4 {
        0 => (1, 2, |n| n * n),
        1 => (1, 3, |n| n * n * n),
        2 => (2, 2, |n| n),
        _ => (2, 3, |n| n * n),
    };
    s.case = Some("example2".into());
    s.nu = real(nu);
    s.conductivity = real(k_cond);
    s.method = Some(method);
    s.k = Some(k);
    s.l = Some(k - 1);
    s.study = Some("spatial".into());
    s.pairs = Some([2, 4, 8, 16].iter().map(|&n| (n, Real::Number(1.0 / dt_den(n) as f64))).collect());
    Ok(s)
}

/// A validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub case: CaseKind,
    pub nu: f64,
    pub conductivity: f64,
    pub method: Method,
    pub n: Option<usize>,
    pub k: usize,
    pub l: usize,
    pub dt: Option<f64>,
    pub study: Study,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub warnings: Vec<String>,
}

/// Resolves `settings` on top of its preset (if any) and validates the result.
pub fn resolve(settings: Settings) -> Result<RunConfig, ConfigError> {
    let s = match &settings.preset {
        Some(name) => preset(name)?.merged(settings),
        None => settings,
    };
    let mut warnings = Vec::new();
    let case = match s.case.as_deref().unwrap_or("example1") {
        "example1" => CaseKind::Example1,
        "example2" => CaseKind::Example2,
        other => return Err(ConfigError::Invalid { key: "case", reason: format!("`{other}` (expected example1 or example2)") }),
    };
    let nu = s.nu.as_ref().map(|v| v.value("nu")).transpose()?;
    let conductivity = s.conductivity.as_ref().map(|v| v.value("K")).transpose()?;
    if case == CaseKind::Example1 && (nu.is_some() || conductivity.is_some()) {
        warnings.push("nu and K are ignored for example1".into());
    }
    let method = match s.method.unwrap_or(1) {
        1 => Method::Method1,
        2 => Method::Method2,
        m => return Err(ConfigError::Invalid { key: "method", reason: format!("{m} (expected 1 or 2)") }),
    };
    let k = s.k.unwrap_or(2);
    if !(2..=3).contains(&k) {
        return Err(ConfigError::Invalid { key: "k", reason: format!("{k} (expected 2 or 3)") });
    }
    let l = s.l.unwrap_or(k - 1);
    if !(1..=2).contains(&l) {
        return Err(ConfigError::Invalid { key: "l", reason: format!("{l} (expected 1 or 2)") });
    }
    if l != k - 1 {
        warnings.push(format!("k={k}, l={l} is a nonstandard pairing (usually l = k - 1)"));
    }
    if s.n == Some(0) {
        return Err(ConfigError::Invalid { key: "n", reason: "must be positive".into() });
    }
    if s.workers == Some(0) {
        return Err(ConfigError::Invalid { key: "workers", reason: "must be positive".into() });
    }
    let dt = s.dt.as_ref().map(|v| v.value("dt")).transpose()?;
    let study = match s.study.as_deref().unwrap_or("none") {
        "none" => {
            if dt.is_none() {
                return Err(ConfigError::DtRequired);
            }
            if s.n.is_none() {
                return Err(ConfigError::Missing("n"));
            }
            Study::None
        }
        "temporal" => {
            if s.n.is_none() {
                return Err(ConfigError::Missing("n"));
            }
            let dts = s.dts.as_ref().ok_or(ConfigError::Missing("dts"))?;
            Study::Temporal(dts.iter().map(|v| v.value("dts")).collect::<Result<_, _>>()?)
        }
        "spatial" => {
            let pairs = s.pairs.as_ref().ok_or(ConfigError::Missing("pairs"))?;
            Study::Spatial(pairs.iter().map(|(n, v)| Ok((*n, v.value("pairs")?))).collect::<Result<_, ConfigError>>()?)
        }
        other => {
            return Err(ConfigError::Invalid { key: "study", reason: format!("`{other}` (expected none, temporal or spatial)") })
        }
    };
    let config = RunConfig {
        name: s.preset.clone().unwrap_or_else(|| "run".into()),
        case,
        nu: nu.unwrap_or(0.3),
        conductivity: conductivity.unwrap_or(1.0),
        method,
        n: s.n,
        k,
        l,
        dt,
        study,
        out: s.out.unwrap_or_else(|| PathBuf::from(".")),
        workers: s.workers,
        warnings,
    };
    config.case()?;
    Ok(config)
}

impl RunConfig {
    pub fn case(&self) -> Result<ManufacturedCase, ConfigError> {
        Ok(match self.case {
            CaseKind::Example1 => example1(),
            CaseKind::Example2 => example2(self.nu, self.conductivity)?,
        })
    }

    /// Requested workers, defaulting to the available cores and capped by [`WORKERS_ENV`].
    pub fn effective_workers(&self) -> usize {
        let wanted = self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let cap = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&c| c > 0);
        cap.map_or(wanted, |c| wanted.min(c)).max(1)
    }

    /// Mesh size and step of the first run, used for dumps.
    pub fn first_run(&self) -> Option<(usize, f64)> {
        match &self.study {
            Study::None => self.n.zip(self.dt),
            Study::Temporal(dts) => self.n.zip(dts.first().copied()),
            Study::Spatial(pairs) => pairs.first().copied(),
        }
    }
}

/// Runs the configured study and returns its rows in input order.
pub fn execute(config: &RunConfig) -> Result<ConvergenceReport, RunError> {
    let case = config.case()?;
    let workers = config.effective_workers();
    let (k, l) = (config.k, config.l);
    Ok(match &config.study {
        Study::None => {
            let (n, dt) = config.first_run().expect("validated");
            let disc = Discretization::for_case(&case, n, k, l)?;
            let scheme = SchemeConfig::new(config.method, dt, case.final_time, k, l)?;
            let state = run(&disc, &case, scheme)?;
            let errors = compute_errors(&disc, &state, &case);
            ConvergenceReport { refinement: Refinement::Temporal, rows: vec![StudyRow { n, h: 1.0 / n as f64, dt, errors }] }
        }
        Study::Temporal(dts) => temporal_study(&case, config.method, config.n.expect("validated"), k, l, dts, workers)?,
        Study::Spatial(pairs) => spatial_study(&case, config.method, pairs, k, l, workers)?,
    })
}

/// CSV with full-precision values; orders are empty on the first row.
pub fn to_csv(report: &ConvergenceReport) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["h".to_string(), "dt".to_string()];
    for name in ErrorRecord::NAMES {
        header.push(name.into());
        header.push(format!("{name}_order"));
    }
    w.write_record(&header)?;
    for (row, orders) in report.rows.iter().zip(report.orders()) {
        let mut rec = vec![row.h.to_string(), row.dt.to_string()];
        for (e, o) in row.errors.as_array().iter().zip(orders) {
            rec.push(e.to_string());
            rec.push(o.map_or(String::new(), |o| o.to_string()));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `7.076e-03` style: four significant digits, signed two-digit exponent.
pub fn sci4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.3e}");
    }
    let s = format!("{v:.3e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

/// `1/64` when `v` is the reciprocal of an integer.
pub fn fraction(v: f64) -> String {
    let inv = 1.0 / v;
    if v == 1.0 {
        "1".into()
    } else if v > 0.0 && (inv - inv.round()).abs() < 1e-9 * inv {
        format!("1/{}", inv.round() as u64)
    } else {
        format!("{v}")
    }
}

/// Markdown table with one column per norm and its order.
pub fn to_markdown(report: &ConvergenceReport) -> String {
    let temporal = report.refinement == Refinement::Temporal;
    let mut out = String::new();
    let lead = if temporal { "| dt " } else { "| h | dt " };
    let _ = writeln!(out, "{lead}| H1 errors of u | Orders | L2 errors of xi | Orders | L2 & H1 errors of p | Orders |");
    let _ = writeln!(out, "{}|---|---|---|---|---|---|", if temporal { "|---" } else { "|---|---" });
    for (row, o) in report.rows.iter().zip(report.orders()) {
        let ord = |i: usize| o[i].map_or(String::new(), |v| format!("{v:.2}"));
        let e = row.errors.as_array();
        if !temporal {
            let _ = write!(out, "| {} ", fraction(row.h));
        }
        let p_orders = if o[2].is_some() { format!("{} & {}", ord(2), ord(3)) } else { String::new() };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} & {} | {} |",
            fraction(row.dt),
            sci4(e[0]),
            ord(0),
            sci4(e[1]),
            ord(1),
            sci4(e[2]),
            sci4(e[3]),
            p_orders
        );
    }
    out
}

/// Writes `<out>/<name>.csv` and `<out>/<name>.md`, returning both paths.
pub fn write_reports(config: &RunConfig, report: &ConvergenceReport) -> Result<[PathBuf; 2], RunError> {
    fs::create_dir_all(&config.out).map_err(|source| RunError::Write { path: config.out.clone(), source })?;
    let csv_path = config.out.join(format!("{}.csv", config.name));
    let md_path = config.out.join(format!("{}.md", config.name));
    for (path, text) in [(&csv_path, to_csv(report)?), (&md_path, to_markdown(report))] {
        fs::write(path, text).map_err(|source| RunError::Write { path: path.clone(), source })?;
    }
    Ok([csv_path, md_path])
}

/// Mesh of the first run in plain text.
pub fn dump_mesh(config: &RunConfig, path: &Path) -> Result<(), RunError> {
    let (n, _) = config.first_run().ok_or(ConfigError::Missing("n"))?;
    let mesh = biot_core::unit_square_mesh(n).map_err(SchemeError::from)?;
    let file = fs::File::create(path).map_err(|source| RunError::Write { path: path.into(), source })?;
    mesh.write_text(std::io::BufWriter::new(file)).map_err(|source| RunError::Write { path: path.into(), source })
}

/// Time-stepping matrix of the first run in Matrix Market format.
pub fn dump_matrix(config: &RunConfig, path: &Path) -> Result<(), RunError> {
    let (n, dt) = config.first_run().ok_or(ConfigError::DtRequired)?;
    let disc = Discretization::for_case(&config.case()?, n, config.k, config.l)?;
    let a = monolithic_matrix(&disc, config.method, dt);
    let file = fs::File::create(path).map_err(|source| RunError::Write { path: path.into(), source })?;
    a.write_matrix_market(std::io::BufWriter::new(file)).map_err(|source| RunError::Write { path: path.into(), source })
}
