//! Command-line frontend: observable expressions, config files, subcommands.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::arith::{kie_weights, PrimeBasis};
use crate::error::{Error, Result};
use crate::gibbs::{self, check_mult_invariance, free_energy, ks_entropy, smb_estimate, KsMode};
use crate::ising1d::{BcCoupling, Boundary, ModelParams};
use crate::ldp::{self, fmt_f64, legendre_curve, scgf_via_free_energy, ScgfCurve, ScgfModel};
use crate::multiprime::kie_pressure;
use crate::observable::Observable;
use crate::verify;

struct Parser_<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser_<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", c as char))
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn coeff(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        let int = self.digits();
        let mut frac = 0;
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            frac = self.digits();
        }
        if int + frac == 0 {
            self.pos = start;
            return self.err("expected a number");
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                return self.err("expected exponent digits");
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse().or_else(|_| self.err("invalid number"))
    }

    fn spin(&mut self) -> Result<u64> {
        if self.peek() != Some(b's') {
            return self.err("expected 's[index]'");
        }
        self.pos += 1;
        self.expect(b'[')?;
        self.skip_ws();
        let start = self.pos;
        if self.digits() == 0 {
            return self.err("expected an index");
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let index: u64 = text.parse().map_err(|_| Error::Parse { pos: start, msg: "index too large".into() })?;
        if index == 0 {
            return Err(Error::Parse { pos: start, msg: "spin indices start at 1".into() });
        }
        self.expect(b']')?;
        Ok(index)
    }

    fn term(&mut self, sign: f64) -> Result<(Vec<u64>, f64)> {
        let mut coeff = sign;
        let mut indices = Vec::new();
        if matches!(self.peek(), Some(b'0'..=b'9' | b'.')) {
            coeff *= self.coeff()?;
            if self.peek() == Some(b'*') {
                self.pos += 1;
            }
        }
        indices.push(self.spin()?);
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    indices.push(self.spin()?);
                }
                Some(b's') => indices.push(self.spin()?),
                _ => break,
            }
        }
        Ok((indices, coeff))
    }
}

/// Parses `expr := term (('+'|'-') term)*`, `term := coeff? ('*'? 's[' int ']')+`.
///
/// A leading sign is accepted so that printed observables parse back.
pub fn parse_observable(text: &str) -> Result<Observable> {
    let mut p = Parser_ { src: text.as_bytes(), pos: 0 };
    let mut terms = Vec::new();
    let mut sign = match p.peek() {
        Some(b'-') => {
            p.pos += 1;
            -1.0
        }
        Some(b'+') => {
            p.pos += 1;
            1.0
        }
        None => return p.err("empty observable"),
        _ => 1.0,
    };
    loop {
        terms.push(p.term(sign)?);
        sign = match p.peek() {
            Some(b'+') => 1.0,
            Some(b'-') => -1.0,
            None => break,
            Some(_) => return p.err("expected '+', '-' or end of input"),
        };
        p.pos += 1;
    }
    Observable::new(terms)
}

/// Reads `key = value` lines. Blank lines, `#`/`;` comments and `[section]` headers are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("config line {}: expected key = value", n + 1)))?;
        let value = value.trim().trim_matches('"');
        map.insert(normalize_key(key.trim()), value.to_string());
    }
    Ok(map)
}

fn normalize_key(key: &str) -> String {
    key.to_ascii_lowercase().replace('-', "_")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BcCouplingArg {
    J,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BcArg {
    Free,
    Plus,
    Minus,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EntropyMode {
    Series,
    Formula,
    FormulaEntrywise,
    ClosedH0,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Route {
    Series,
    FreeEnergy,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` config file; flags take precedence over its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long = "J", allow_hyphen_values = true)]
    j: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    /// Boundary spins couple with strength J or 1
    #[arg(long, value_enum)]
    bc_coupling: Option<BcCouplingArg>,
    #[arg(long)]
    tol: Option<f64>,
    /// Output file (a `.meta.json` sidecar is written next to it); stdout if absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads (defaults to RAYON_NUM_THREADS or the core count)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pressure F(t) and F'(t) of a first-layer observable on a t grid
    Scgf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
        /// `start:stop:step`, a comma list, or a single value
        #[arg(long, allow_hyphen_values = true)]
        t: Option<String>,
        #[arg(long, value_enum)]
        route: Option<Route>,
    },
    /// Rate function I(x) by Legendre transform
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
    },
    /// Free energies with free and fixed boundary conditions
    FreeEnergy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        bc: Option<BcArg>,
    },
    /// Kolmogorov-Sinai entropy
    Entropy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<EntropyMode>,
    },
    /// Exact samples of the configuration on [1, N]
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo estimate of -(1/N) log mu(sigma_[1,N])
    Smb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the laws of (s[p]) and (s[m p])
    Invariance {
        #[command(flatten)]
        common: Common,
        /// Comma-separated indices
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        m: Option<u64>,
    },
    /// Weight series over smooth numbers
    KieWeights {
        #[command(flatten)]
        common: Common,
        /// Comma-separated primes
        #[arg(long)]
        primes: Option<String>,
    },
    /// Pressure of a general local observable through the weight series
    KiePressure {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        primes: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        t: Option<f64>,
    },
    /// Asymptotic variance F''(0)
    Clt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
    },
    /// Empirical tail rates of sampled ergodic averages next to I(x)
    LdpCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        f: Option<String>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
    },
    /// Run the acceptance checks
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion numbers (default: all)
        #[arg(long)]
        criteria: Option<String>,
    },
}

#[derive(Parser, Debug)]
#[command(name = "multising", version, about = "Thermodynamics of the multiplicative Ising model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Scgf { common, .. }
            | Command::Rate { common, .. }
            | Command::FreeEnergy { common, .. }
            | Command::Entropy { common, .. }
            | Command::Sample { common, .. }
            | Command::Smb { common, .. }
            | Command::Invariance { common, .. }
            | Command::KieWeights { common, .. }
            | Command::KiePressure { common, .. }
            | Command::Clt { common, .. }
            | Command::LdpCheck { common, .. }
            | Command::Verify { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Scgf { .. } => "scgf",
            Command::Rate { .. } => "rate",
            Command::FreeEnergy { .. } => "free-energy",
            Command::Entropy { .. } => "entropy",
            Command::Sample { .. } => "sample",
            Command::Smb { .. } => "smb",
            Command::Invariance { .. } => "invariance",
            Command::KieWeights { .. } => "kie-weights",
            Command::KiePressure { .. } => "kie-pressure",
            Command::Clt { .. } => "clt",
            Command::LdpCheck { .. } => "ldp-check",
            Command::Verify { .. } => "verify",
        }
    }
}

/// Flag values with config-file fallback; every resolved value is echoed into the metadata.
struct Settings {
    file: BTreeMap<String, String>,
    echo: RefCell<Map<String, Value>>,
}

const KNOWN_KEYS: &[&str] = &[
    "beta", "j", "h", "bc_coupling", "tol", "out", "format", "threads", "f", "t", "x", "route", "bc", "mode",
    "n", "count", "seed", "indices", "m", "primes", "criteria",
];

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::InvalidInput(format!("unknown config key '{k}'")));
        }
        Ok(Self { file, echo: RefCell::new(Map::new()) })
    }

    fn get<T: FromStr + Serialize>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(
                    text.parse()
                        .map_err(|e| Error::InvalidInput(format!("config key '{key}': {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.echo.borrow_mut().insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
        }
        Ok(value)
    }

    fn req<T: FromStr + Serialize>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let flag_name = if key == "j" { "J".to_string() } else { key.replace('_', "-") };
        self.get(flag, key)?.ok_or_else(|| Error::InvalidInput(format!("missing required option --{flag_name}")))
    }

    fn or<T: FromStr + Serialize + Clone>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.get(flag, key)?;
        Ok(match v {
            Some(v) => v,
            None => {
                self.echo.borrow_mut().insert(key.to_string(), serde_json::to_value(&default).unwrap_or(Value::Null));
                default
            }
        })
    }

    fn choice<T: ValueEnum + Copy>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(text) => T::from_str(text, true)
                    .map_err(|e| Error::InvalidInput(format!("config key '{key}': {e}")))?,
                None => default,
            },
        };
        let name = v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default();
        self.echo.borrow_mut().insert(key.to_string(), Value::String(name));
        Ok(v)
    }

    fn params(&self, c: &Common) -> Result<ModelParams> {
        let mut p = ModelParams::new(self.req(c.beta, "beta")?, self.req(c.j, "j")?, self.or(c.h, "h", 0.0)?);
        p.bc_coupling = match self.choice(c.bc_coupling, "bc_coupling", BcCouplingArg::J)? {
            BcCouplingArg::J => BcCoupling::J,
            BcCouplingArg::Unit => BcCoupling::Unit,
        };
        p.validate()?;
        Ok(p)
    }

    fn tol(&self, c: &Common, default: f64) -> Result<f64> {
        let tol = self.or(c.tol, "tol", default)?;
        if !(tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(tol)
    }

    fn observable(&self, flag: &Option<String>) -> Result<Observable> {
        parse_observable(&self.req(flag.clone(), "f")?)
    }
}

/// `start:stop:step`, `a,b,c` or a single number.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim().parse().map_err(|_| Error::InvalidInput(format!("invalid number '{}' in grid", s.trim())))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => ldp::grid(num(start)?, num(stop)?, num(step)?),
        [single] => single.split(',').map(num).collect(),
        _ => Err(Error::InvalidInput(format!("grid '{text}' is not start:stop:step"))),
    }
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::InvalidInput(format!("invalid {what} '{}'", s.trim()))))
        .collect()
}

struct Artifact {
    body: Vec<u8>,
    results: Value,
    exit_code: i32,
}

fn to_json(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut body = serde_json::to_vec_pretty(v).map_err(|e| Error::Io(e.into()))?;
    body.push(b'\n');
    Ok(body)
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(gibbs::csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(gibbs::csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn ok(body: Vec<u8>, results: Value) -> Result<Artifact> {
    Ok(Artifact { body, results, exit_code: 0 })
}

fn execute(cmd: &Command, s: &Settings) -> Result<Artifact> {
    let c = cmd.common();
    match cmd {
        Command::Scgf { f, t, route, .. } => {
            let params = s.params(c)?;
            let tol = s.tol(c, 1e-10)?;
            let obs = s.observable(f)?;
            let grid = parse_grid(&s.or(t.clone(), "t", "-3:3:0.1".to_string())?)?;
            let format = s.choice(c.format, "format", Format::Csv)?;
            let curve = match s.choice(*route, "route", Route::Series)? {
                Route::Series => {
                    let fstar = obs.to_first_layer()?;
                    ScgfCurve::compute(&ScgfModel::new(fstar, &params, tol)?, &grid)?
                }
                Route::FreeEnergy => {
                    if obs != Observable::new(vec![(vec![1, 2], 1.0)])? {
                        return Err(Error::InvalidInput("the free-energy route only supports f = s[1]*s[2]".into()));
                    }
                    let values = grid
                        .iter()
                        .map(|&t| scgf_via_free_energy(t, &params, tol))
                        .collect::<Result<Vec<_>>>()?;
                    let fe = |t: f64| scgf_via_free_energy(t, &params, tol).map(|v| v.value);
                    let fprime = grid
                        .iter()
                        .map(|&t| Ok((fe(t + 1e-3)? - fe(t - 1e-3)?) / 2e-3))
                        .collect::<Result<Vec<_>>>()?;
                    ScgfCurve {
                        grid: grid.clone(),
                        f: values.iter().map(|v| v.value).collect(),
                        fprime,
                        trunc_err: values.iter().map(|v| v.trunc_err).collect(),
                        deriv_step: 1e-3,
                    }
                }
            };
            curve.check_convex(1e-9)?;
            let max_trunc = curve.trunc_err.iter().copied().fold(0.0, f64::max);
            let body = match format {
                Format::Json => to_json(&curve)?,
                _ => {
                    let mut buf = Vec::new();
                    curve.write_csv(&mut buf)?;
                    buf
                }
            };
            ok(body, json!({ "observable": obs.to_string(), "max_trunc_err": max_trunc, "deriv_step": curve.deriv_step }))
        }
        Command::Rate { f, x, .. } => {
            let params = s.params(c)?;
            let tol = s.tol(c, 1e-12)?;
            let obs = s.observable(f)?;
            let xs = parse_grid(&s.or(x.clone(), "x", "-0.9:0.9:0.1".to_string())?)?;
            let format = s.choice(c.format, "format", Format::Csv)?;
            let model = ScgfModel::new(obs.to_first_layer()?, &params, tol)?;
            let curve = legendre_curve(&model, &xs)?;
            let body = match format {
                Format::Json => to_json(&curve)?,
                _ => {
                    let mut buf = Vec::new();
                    curve.write_csv(&mut buf)?;
                    buf
                }
            };
            ok(body, json!({ "observable": obs.to_string(), "domain": [curve.domain.0, curve.domain.1], "pressure_tol": tol }))
        }
        Command::FreeEnergy { bc, .. } => {
            let params = s.params(c)?;
            let tol = s.tol(c, 1e-12)?;
            let format = s.choice(c.format, "format", Format::Json)?;
            let bcs = match s.choice(*bc, "bc", BcArg::All)? {
                BcArg::Free => vec![("free", Boundary::Free)],
                BcArg::Plus => vec![("plus", Boundary::Plus)],
                BcArg::Minus => vec![("minus", Boundary::Minus)],
                BcArg::All => vec![("free", Boundary::Free), ("plus", Boundary::Plus), ("minus", Boundary::Minus)],
            };
            let values = bcs
                .iter()
                .map(|&(name, b)| Ok((name, free_energy(b, &params, tol)?)))
                .collect::<Result<Vec<_>>>()?;
            let body = match format {
                Format::Csv => csv_rows(
                    &["bc", "f", "trunc_err", "terms"],
                    values.iter().map(|(n, v)| vec![n.to_string(), fmt_f64(v.value), fmt_f64(v.trunc_err), v.terms.to_string()]),
                )?,
                _ => to_json(&values.iter().map(|(n, v)| (n.to_string(), v)).collect::<BTreeMap<_, _>>())?,
            };
            let errs: Map<String, Value> = values.iter().map(|(n, v)| (n.to_string(), json!(v.trunc_err))).collect();
            ok(body, json!({ "normalization": "log Z on [1, 2N] divided by N", "trunc_err": errs }))
        }
        Command::Entropy { mode, .. } => {
            let params = s.params(c)?;
            let tol = s.tol(c, 1e-13)?;
            let format = s.choice(c.format, "format", Format::Json)?;
            let modes: Vec<(&str, KsMode)> = match s.choice(*mode, "mode", EntropyMode::All)? {
                EntropyMode::Series => vec![("series", KsMode::Series)],
                EntropyMode::Formula => vec![("formula", KsMode::Formula)],
                EntropyMode::FormulaEntrywise => vec![("formula_entrywise", KsMode::FormulaEntrywise)],
                EntropyMode::ClosedH0 => vec![("closed_h0", KsMode::ClosedH0)],
                EntropyMode::All => vec![("series", KsMode::Series), ("formula", KsMode::Formula), ("closed_h0", KsMode::ClosedH0)],
            };
            let all = modes.len() > 1;
            let mut values: BTreeMap<String, Option<f64>> = BTreeMap::new();
            for (name, m) in modes {
                match ks_entropy(&params, m, tol) {
                    Ok(v) => values.insert(name.to_string(), Some(v)),
                    // with `all`, the h = 0 closed form is reported as unavailable instead of failing
                    Err(Error::Precondition(_)) if all => values.insert(name.to_string(), None),
                    Err(e) => return Err(e),
                };
            }
            let body = match format {
                Format::Csv => csv_rows(
                    &["mode", "entropy"],
                    values.iter().map(|(k, v)| vec![k.clone(), v.map(fmt_f64).unwrap_or_default()]),
                )?,
                _ => to_json(&values)?,
            };
            ok(body, json!({ "unit": "nats", "series_tol": tol }))
        }
        Command::Sample { n, count, seed, .. } => {
            let params = s.params(c)?;
            let n = s.req(*n, "n")?;
            let count = s.or(*count, "count", 1)?;
            let seed = s.or(*seed, "seed", 0)?;
            if n.saturating_mul(count as u64) > 1 << 31 {
                return Err(Error::Infeasible("N x count exceeds 2^31 spins".into()));
            }
            let batch = gibbs::sample(n, &params, count, seed)?;
            let mut body = Vec::new();
            match s.choice(c.format, "format", Format::Csv)? {
                Format::Bin => batch.write_binary(&mut body)?,
                Format::Json => return Err(Error::InvalidInput("samples are written as csv or bin".into())),
                Format::Csv => batch.write_csv(&mut body)?,
            }
            ok(body, json!({ "spins": n * count as u64 }))
        }
        Command::Smb { n, count, seed, .. } => {
            let params = s.params(c)?;
            let n = s.req(*n, "n")?;
            let count = s.or(*count, "count", 1000)?;
            let seed = s.or(*seed, "seed", 0)?;
            let est = smb_estimate(n, &params, count, seed)?;
            let exact = ks_entropy(&params, KsMode::Formula, 1e-13)?;
            let body = match s.choice(c.format, "format", Format::Json)? {
                Format::Csv => csv_rows(
                    &["mean", "stderr", "variance", "count", "ks_entropy"],
                    [vec![fmt_f64(est.mean), fmt_f64(est.stderr), fmt_f64(est.variance), est.count.to_string(), fmt_f64(exact)]],
                )?,
                _ => to_json(&json!({ "estimate": est, "ks_entropy": exact }))?,
            };
            ok(body, json!({ "ks_entropy": exact }))
        }
        Command::Invariance { indices, m, .. } => {
            let params = s.params(c)?;
            let indices: Vec<u64> = parse_list(&s.req(indices.clone(), "indices")?, "index")?;
            let m = s.req(*m, "m")?;
            let rep = check_mult_invariance(&indices, m, &params)?;
            ok(to_json(&rep)?, json!({ "tolerance": gibbs::INVARIANCE_TOL }))
        }
        Command::KieWeights { primes, .. } => {
            let primes: Vec<u64> = parse_list(&s.or(primes.clone(), "primes", "2".to_string())?, "prime")?;
            let tol = s.tol(c, 1e-8)?;
            let series = kie_weights(&PrimeBasis::new(primes)?, tol)?;
            let rows = (1..=series.len()).map(|j| {
                vec![
                    j.to_string(),
                    series.smooth(j).to_string(),
                    fmt_f64(series.weight(j)),
                    fmt_f64(series.rho_minus(j)),
                    fmt_f64(series.rho_plus(j)),
                ]
            });
            let body = match s.choice(c.format, "format", Format::Csv)? {
                Format::Json => to_json(&json!({
                    "kappa": series.kappa(),
                    "weights": series.weights(),
                    "smooth": (1..=series.len()).map(|j| series.smooth(j)).collect::<Vec<_>>(),
                }))?,
                _ => csv_rows(&["j", "n_j", "w_j", "rho_minus", "rho_plus"], rows)?,
            };
            ok(body, json!({ "kappa": series.kappa(), "first_moment_tail": series.tail_bound(), "mass_tail": series.tail_mass() }))
        }
        Command::KiePressure { f, primes, t, .. } => {
            let params = s.params(c)?;
            let obs = s.observable(f)?;
            let primes: Vec<u64> = parse_list(&s.or(primes.clone(), "primes", "2".to_string())?, "prime")?;
            let t = s.req(*t, "t")?;
            let tol = s.tol(c, 1e-4)?;
            let kie = kie_pressure(&obs, &params, &PrimeBasis::new(primes)?, t, tol)?;
            let body = match s.choice(c.format, "format", Format::Csv)? {
                Format::Json => to_json(&kie)?,
                _ => {
                    let mut buf = Vec::new();
                    kie.write_csv(&mut buf)?;
                    buf
                }
            };
            ok(body, json!({ "observable": obs.to_string(), "value": kie.value, "trunc_err": kie.trunc_err }))
        }
        Command::Clt { f, .. } => {
            let params = s.params(c)?;
            let tol = s.tol(c, 1e-12)?;
            let obs = s.observable(f)?;
            let model = ScgfModel::new(obs.to_first_layer()?, &params, tol)?;
            let variance = model.curvature(0.0)?;
            let mean = ldp::Pressure::slope(&model, 0.0)?;
            let body = to_json(&json!({ "mean": mean, "variance": variance }))?;
            ok(body, json!({ "curvature_step": ldp::CURVATURE_STEP, "slope_step": ldp::SLOPE_STEP }))
        }
        Command::LdpCheck { f, n, count, seed, x, .. } => {
            let params = s.params(c)?;
            let tol = s.tol(c, 1e-10)?;
            let obs = s.observable(f)?;
            let n = s.req(*n, "n")?;
            let count = s.or(*count, "count", 10_000)?;
            let seed = s.or(*seed, "seed", 0)?;
            let xs = parse_grid(&s.req(x.clone(), "x")?)?;
            let model = ScgfModel::new(obs.to_first_layer()?, &params, tol)?;
            let samples = ldp::ergodic_average_samples(&obs, &params, n, count, seed)?;
            let (est, rows) = ldp::empirical_ldp_check(&samples, n, &model, &xs)?;
            let body = match s.choice(c.format, "format", Format::Csv)? {
                Format::Json => to_json(&json!({ "estimate": est, "rows": rows }))?,
                _ => {
                    let mut buf = Vec::new();
                    ldp::write_empirical_csv(&rows, &mut buf)?;
                    buf
                }
            };
            ok(body, json!({ "sample_mean": est.mean, "sample_stderr": est.stderr, "diagnostic_only": true }))
        }
        Command::Verify { criteria, .. } => {
            let ids: Vec<u32> = match s.get(criteria.clone(), "criteria")? {
                Some(list) => parse_list(&list, "criterion")?,
                None => verify::CRITERIA.iter().map(|c| c.0).collect(),
            };
            let reports = ids
                .iter()
                .map(|&id| verify::run_criterion(id).ok_or_else(|| Error::InvalidInput(format!("no criterion {id}"))))
                .collect::<Result<Vec<_>>>()?;
            let failed = reports.iter().filter(|r| !r.passed).count();
            let body = match s.choice(c.format, "format", Format::Csv)? {
                Format::Json => to_json(&reports)?,
                _ => reports.iter().map(|r| format!("{r}\n")).collect::<String>().into_bytes(),
            };
            Ok(Artifact {
                body,
                results: json!({ "passed": reports.len() - failed, "failed": failed }),
                exit_code: if failed == 0 { 0 } else { 3 },
            })
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<i32> {
    let common = cli.command.common();
    let settings = Settings::load(common.config.as_deref())?;
    if let Some(threads) = settings.get(common.threads, "threads")? {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out: Option<PathBuf> = settings.get(common.out.as_ref().map(|p| p.display().to_string()), "out")?.map(PathBuf::from);
    let artifact = execute(&cli.command, &settings)?;
    match out {
        Some(path) => {
            std::fs::write(&path, &artifact.body)?;
            let meta = json!({
                "command": cli.command.name(),
                "version": env!("CARGO_PKG_VERSION"),
                "config": Value::Object(settings.echo.borrow().clone()),
                "results": artifact.results,
            });
            std::fs::write(sidecar_path(&path), to_json(&meta)?)?;
        }
        None => stdout.write_all(&artifact.body)?,
    }
    Ok(artifact.exit_code)
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    json!({ "error": { "kind": kind, "message": message, "exit_code": code } }).to_string()
}

/// Runs the CLI; errors go to `stderr` as one JSON object and select the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let _ = writeln!(stderr, "{}", error_json("usage", e.to_string().trim(), 2));
            return 2;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(stderr, "{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_observable("s[1]*s[2]").unwrap().terms(), &[(vec![1, 2], 1.0)]);
        let g = parse_observable("s[1]*s[2] + s[1]*s[3]").unwrap();
        assert_eq!(g.terms(), &[(vec![1, 2], 1.0), (vec![1, 3], 1.0)]);
        assert_eq!(parse_observable("2.5 s[4] - s[4]").unwrap().terms(), &[(vec![4], 1.5)]);
        assert_eq!(parse_observable(" -0.5 * s[ 2 ]s[3]").unwrap().terms(), &[(vec![2, 3], -0.5)]);
        assert_eq!(parse_observable("1e-3*s[7]").unwrap().terms(), &[(vec![7], 1e-3)]);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let pos = |s: &str| match parse_observable(s) {
            Err(Error::Parse { pos, .. }) => pos,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(pos("s[0]"), 2);
        assert_eq!(pos("s[1] + "), 7);
        assert_eq!(pos("s[1] x"), 5);
        assert_eq!(pos("s(1)"), 1);
        assert_eq!(pos(""), 0);
        assert!(matches!(parse_observable("s[1]*s[1]"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn config_parsing() {
        let m = parse_config("# comment\n[model]\nbeta = 1.5\nJ=2\n\nbc-coupling = unit\n").unwrap();
        assert_eq!(m["beta"], "1.5");
        assert_eq!(m["j"], "2");
        assert_eq!(m["bc_coupling"], "unit");
        assert!(parse_config("beta 1").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("-3:3:0.1").unwrap().len(), 61);
        assert_eq!(parse_grid("0.25").unwrap(), vec![0.25]);
        assert_eq!(parse_grid("1,2").unwrap(), vec![1.0, 2.0]);
        assert!(parse_grid("1:2").is_err());
    }
}
