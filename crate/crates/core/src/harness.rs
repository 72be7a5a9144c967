//! Run configuration, scenario presets, parameter sweeps and file output.
//!
//! A configuration is a flat `key = value` text file (`#` starts a comment);
//! command-line `--set key=value` pairs are applied on top. Every key has a
//! scenario-dependent default, so `scenario = fisher` alone is a valid file.
//!
//! | key | meaning |
//! |-----|---------|
//! | `scenario` | `theorem11`, `ode-oracle`, `mms`, `fisher`, `sweep` or `custom` |
//! | `dim`, `lengths`, `cells` | grid; a single length or cell count is broadcast to every axis |
//! | `mu`, `beta`, `dz` | model parameters |
//! | `profile` | `constant`, `bump` or `file` |
//! | `u0`, `v0`, `w0`, `z0` | constant values, or bump bases |
//! | `u0_amp`, `v0_amp`, `w0_amp`, `z0_amp` | bump amplitudes |
//! | `u0_file`, `v0_file`, `w0_file`, `z0_file` | field dumps for `profile = file` |
//! | `certificate` | `auto` or `explicit` (then `eps`, `delta` and optionally `k`) |
//! | `safety`, `dt_max`, `scheme` | step control; `scheme` is `transformed` or `primitive` |
//! | `t_end` | a number, or `c/delta` for `c` divided by the certificate's delta |
//! | `observe_every` | observation interval |
//! | `output_dir` | all files are written here |
//! | `norm_p` | exponent of the `u - 1` norm in the series |
//! | `envelope_tol`, `rate_factor` | envelope tolerance and required fraction of predicted rates |
//! | `fit_window`, `fit_floor`, `fit_floor_u` | rate fits: trailing span fraction and the value below which samples are dropped (`fit_floor_u` for `u - 1`) |
//! | `final_u_tol`, `final_w14_tol` | end-of-run bounds on `sup |u - 1|` and the `W^{1,4}` norm of `v` |
//! | `oracle_dt`, `oracle_tol` | RK4 step and allowed discrepancy for `ode-oracle` |
//! | `mms_cells`, `mms_order_min` | coarsest grid and required order for `mms` |
//! | `fisher_target`, `fisher_rate_tol` | final `sup |u - 1|` bound and relative rate tolerance for `fisher` |
//! | `checkpoint` | write the final state as a checkpoint (`true`/`false`) |
//! | `sweep_beta`, `sweep_eps_scale`, `sweep_t_end`, `workers` | sweep grid, horizon and thread count (`0` = all cores) |
//! | `decay_factor`, `growth_rate`, `r2_min` | sweep classification thresholds |
//! | `fallback_eps`, `fallback_delta` | eps unit and reference delta for sweep cells without a certificate |
//!
//! Amounts for `v0`, `w0`, `z0` and their amplitudes may carry an `eps`
//! suffix (`0.5eps`), meaning a multiple of the certificate's `eps`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{envelope_report, fit_decay, series_csv, DecayFit, EnvelopeReport, NormRecord};
use crate::envelopes::{rk4_at, EnvelopeSet};
use crate::grid::{make_grid, GridSpec, ScalarField};
use crate::model::{
    eval_f, eval_g, find_certificate, make_initial, predicted_rates, threshold_holds, InitialData, ModelError,
    ModelParams, Profile, SmallnessCertificate, U0Bounds,
};
use crate::stepper::{rhs_transformed, run, Observer, Scheme, SimState, StepControl, StepError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver aborted: {0}")]
    Solver(#[from] StepError),
    #[error("output error: {0}")]
    Output(String),
}

impl HarnessError {
    /// 2 for configuration and output errors, 3 for solver aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Output(_) => 2,
            HarnessError::Solver(_) => 3,
        }
    }
}

impl From<ModelError> for HarnessError {
    fn from(e: ModelError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn output_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Output(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Theorem11,
    OdeOracle,
    Mms,
    Fisher,
    Sweep,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Theorem11 => "theorem11",
            Scenario::OdeOracle => "ode-oracle",
            Scenario::Mms => "mms",
            Scenario::Fisher => "fisher",
            Scenario::Sweep => "sweep",
            Scenario::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Result<Self, HarnessError> {
        Ok(match s {
            "theorem11" => Scenario::Theorem11,
            "ode-oracle" => Scenario::OdeOracle,
            "mms" => Scenario::Mms,
            "fisher" => Scenario::Fisher,
            "sweep" => Scenario::Sweep,
            "custom" => Scenario::Custom,
            other => return Err(config_err(format!("unknown scenario `{other}`"))),
        })
    }
}

/// An absolute value or a multiple of the certificate's `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amount {
    Abs(f64),
    Eps(f64),
}

impl Amount {
    fn parse(s: &str) -> Option<Self> {
        match s.strip_suffix("eps") {
            Some("") => Some(Amount::Eps(1.0)),
            Some(c) => c.trim().parse().ok().map(Amount::Eps),
            None => s.parse().ok().map(Amount::Abs),
        }
    }

    pub fn resolve(self, eps: f64) -> f64 {
        match self {
            Amount::Abs(x) => x,
            Amount::Eps(c) => c * eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    Constant([Amount; 4]),
    Bump { base: [Amount; 4], amp: [Amount; 4] },
    File([PathBuf; 4]),
}

impl ProfileSpec {
    /// Concrete profile with `eps`-relative amounts scaled by `eps`.
    pub fn resolve(&self, eps: f64) -> Profile {
        let r = |a: &[Amount; 4]| a.map(|x| x.resolve(eps));
        match self {
            ProfileSpec::Constant(c) => {
                let [u, v, w, z] = r(c);
                Profile::Constant { u, v, w, z }
            }
            ProfileSpec::Bump { base, amp } => Profile::Bump { base: r(base), amp: r(amp) },
            ProfileSpec::File([u, v, w, z]) => {
                Profile::File { u: u.clone(), v: v.clone(), w: w.clone(), z: z.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CertMode {
    Auto,
    /// `k = None` selects the default `K`.
    Explicit { eps: f64, delta: f64, k: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Fixed(f64),
    /// `c / delta`.
    PerDelta(f64),
}

impl Horizon {
    fn parse(s: &str) -> Option<Self> {
        match s.strip_suffix("/delta") {
            Some(c) => c.trim().parse().ok().map(Horizon::PerDelta),
            None => s.parse().ok().map(Horizon::Fixed),
        }
    }

    pub fn resolve(self, delta: Option<f64>) -> Result<f64, HarnessError> {
        let t = match (self, delta) {
            (Horizon::Fixed(t), _) => t,
            (Horizon::PerDelta(c), Some(d)) => c / d,
            (Horizon::PerDelta(_), None) => return Err(config_err("t_end of the form c/delta needs a certificate")),
        };
        if !(t > 0.0 && t.is_finite()) {
            return Err(config_err(format!("t_end must be positive, got {t}")));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    pub eps_scales: Vec<f64>,
    pub t_end: Horizon,
    pub workers: usize,
    pub decay_factor: f64,
    pub growth_rate: f64,
    pub r2_min: f64,
    pub fallback_eps: f64,
    pub fallback_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub window: f64,
    pub floor: f64,
    pub floor_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub grid: Arc<GridSpec>,
    pub params: ModelParams,
    pub profile: ProfileSpec,
    pub certificate: CertMode,
    pub control: StepControl,
    pub t_end: Horizon,
    pub observe_every: f64,
    pub output_dir: PathBuf,
    pub norm_p: f64,
    pub envelope_tol: f64,
    pub rate_factor: f64,
    pub fit: FitSettings,
    pub final_u_tol: f64,
    pub final_w14_tol: f64,
    pub oracle_dt: f64,
    pub oracle_tol: f64,
    pub mms_cells: usize,
    pub mms_order_min: f64,
    pub fisher_target: f64,
    pub fisher_rate_tol: f64,
    pub checkpoint: bool,
    pub sweep: SweepSpec,
    /// Every key with its effective value.
    pub resolved: BTreeMap<String, String>,
}

const COMMON_DEFAULTS: &[(&str, &str)] = &[
    ("dim", "1"),
    ("lengths", "16"),
    ("cells", "128"),
    ("mu", "1"),
    ("beta", "1.2"),
    ("dz", "1"),
    ("profile", "bump"),
    ("u0", "1"),
    ("v0", "0"),
    ("w0", "0"),
    ("z0", "0"),
    ("u0_amp", "0"),
    ("v0_amp", "0"),
    ("w0_amp", "0"),
    ("z0_amp", "0"),
    ("u0_file", ""),
    ("v0_file", ""),
    ("w0_file", ""),
    ("z0_file", ""),
    ("certificate", "auto"),
    ("eps", ""),
    ("delta", ""),
    ("k", ""),
    ("safety", "0.4"),
    ("dt_max", "0.05"),
    ("scheme", "transformed"),
    ("t_end", "10"),
    ("observe_every", "0.5"),
    ("output_dir", "out"),
    ("norm_p", "2"),
    ("envelope_tol", "0.02"),
    ("rate_factor", "0.9"),
    ("fit_window", "0.5"),
    ("fit_floor", "1e-200"),
    ("fit_floor_u", "1e-10"),
    ("final_u_tol", "1e-2"),
    ("final_w14_tol", "1e-3"),
    ("oracle_dt", "1e-5"),
    ("oracle_tol", "5e-3"),
    ("mms_cells", "16"),
    ("mms_order_min", "1.9"),
    ("fisher_target", "1e-6"),
    ("fisher_rate_tol", "0.25"),
    ("checkpoint", "true"),
    ("sweep_beta", "0.8,1.0,1.2,1.4,1.6,2.0"),
    ("sweep_eps_scale", "0.5,1,2"),
    ("sweep_t_end", "10/delta"),
    ("workers", "0"),
    ("decay_factor", "0.05"),
    ("growth_rate", "-0.01"),
    ("r2_min", "0.9"),
    ("fallback_eps", "0.01"),
    ("fallback_delta", "0.05"),
];

fn scenario_defaults(s: Scenario) -> &'static [(&'static str, &'static str)] {
    match s {
        Scenario::Theorem11 => &[
            ("t_end", "20/delta"),
            ("u0_amp", "0.02"),
            ("v0_amp", "0.5eps"),
            ("w0_amp", "0.5eps"),
            ("z0_amp", "0.5eps"),
        ],
        Scenario::Sweep => &[("cells", "64"), ("v0_amp", "0.5eps"), ("w0_amp", "0.5eps"), ("z0_amp", "0.5eps")],
        Scenario::Fisher => &[("t_end", "25"), ("u0_amp", "0.3"), ("observe_every", "0.25")],
        Scenario::OdeOracle => &[
            ("cells", "16"),
            ("profile", "constant"),
            ("u0", "0.5"),
            ("v0", "0.01"),
            ("w0", "0.01"),
            ("z0", "0.01"),
            ("observe_every", "0.1"),
        ],
        Scenario::Mms | Scenario::Custom => &[],
    }
}

/// Splits `key = value` lines, dropping blank lines and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn str(&self, key: &str) -> &str {
        &self.0[key]
    }

    fn num(&self, key: &str) -> Result<f64, HarnessError> {
        let s = self.str(key);
        s.parse::<f64>()
            .ok()
            .filter(|x| !x.is_nan())
            .ok_or_else(|| config_err(format!("{key}: expected a number, got `{s}`")))
    }

    fn positive(&self, key: &str) -> Result<f64, HarnessError> {
        let x = self.num(key)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(config_err(format!("{key} must be positive, got {x}")));
        }
        Ok(x)
    }

    fn count(&self, key: &str) -> Result<usize, HarnessError> {
        let s = self.str(key);
        s.parse().map_err(|_| config_err(format!("{key}: expected a non-negative integer, got `{s}`")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, HarnessError> {
        let s = self.str(key);
        let items: Result<Vec<T>, _> = s.split(',').map(|x| x.trim().parse::<T>()).collect();
        match items {
            Ok(v) if !v.is_empty() => Ok(v),
            _ => Err(config_err(format!("{key}: expected a comma-separated list, got `{s}`"))),
        }
    }

    fn amount(&self, key: &str, allow_eps: bool) -> Result<Amount, HarnessError> {
        let s = self.str(key);
        match Amount::parse(s) {
            Some(Amount::Eps(_)) if !allow_eps => Err(config_err(format!("{key} cannot be relative to eps"))),
            Some(a) => Ok(a),
            None => Err(config_err(format!("{key}: expected a number or `<c>eps`, got `{s}`"))),
        }
    }

    fn flag(&self, key: &str) -> Result<bool, HarnessError> {
        match self.str(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            s => Err(config_err(format!("{key}: expected true or false, got `{s}`"))),
        }
    }

    fn broadcast<T: std::str::FromStr + Clone>(&self, key: &str, dim: usize) -> Result<Vec<T>, HarnessError> {
        let v = self.list::<T>(key)?;
        Ok(if v.len() == 1 { vec![v[0].clone(); dim] } else { v })
    }
}

impl RunConfig {
    /// Builds a configuration from file text plus `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut pairs = parse_pairs(text)?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{o}` is not of the form key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Later pairs override earlier ones.
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self, HarnessError> {
        let scenario_name = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "scenario")
            .map(|(_, v)| v.as_str())
            .unwrap_or("custom");
        let scenario = Scenario::parse(scenario_name)?;
        let mut map: BTreeMap<String, String> =
            COMMON_DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in scenario_defaults(scenario) {
            map.insert(k.to_string(), v.to_string());
        }
        map.insert("scenario".into(), scenario.name().into());
        for (k, v) in pairs {
            if !map.contains_key(&k) {
                return Err(config_err(format!("unknown key `{k}`")));
            }
            map.insert(k, v);
        }
        let vals = Values(map);

        let dim = vals.count("dim")?;
        let lengths = vals.broadcast::<f64>("lengths", dim)?;
        let cells = vals.broadcast::<usize>("cells", dim)?;
        let grid = Arc::new(make_grid(dim, &lengths, &cells).map_err(|e| config_err(e.to_string()))?);
        let params = ModelParams::new(vals.num("mu")?, vals.num("beta")?, vals.num("dz")?)?;

        let base = [
            vals.amount("u0", false)?,
            vals.amount("v0", true)?,
            vals.amount("w0", true)?,
            vals.amount("z0", true)?,
        ];
        let amp = [
            vals.amount("u0_amp", false)?,
            vals.amount("v0_amp", true)?,
            vals.amount("w0_amp", true)?,
            vals.amount("z0_amp", true)?,
        ];
        let profile = match vals.str("profile") {
            "constant" => {
                if amp.iter().any(|a| *a != Amount::Abs(0.0) && *a != Amount::Eps(0.0)) {
                    return Err(config_err("profile = constant takes no amplitudes; use profile = bump"));
                }
                ProfileSpec::Constant(base)
            }
            "bump" => ProfileSpec::Bump { base, amp },
            "file" => {
                let path = |k: &str| -> Result<PathBuf, HarnessError> {
                    match vals.str(k) {
                        "" => Err(config_err(format!("profile = file needs {k}"))),
                        p => Ok(PathBuf::from(p)),
                    }
                };
                ProfileSpec::File([path("u0_file")?, path("v0_file")?, path("w0_file")?, path("z0_file")?])
            }
            other => return Err(config_err(format!("unknown profile `{other}`"))),
        };

        let certificate = match vals.str("certificate") {
            "auto" => CertMode::Auto,
            "explicit" => CertMode::Explicit {
                eps: vals.num("eps")?,
                delta: vals.num("delta")?,
                k: if vals.str("k").is_empty() { None } else { Some(vals.num("k")?) },
            },
            other => return Err(config_err(format!("certificate must be auto or explicit, got `{other}`"))),
        };

        let scheme = match vals.str("scheme") {
            "transformed" => Scheme::Transformed,
            "primitive" => Scheme::Primitive,
            other => return Err(config_err(format!("unknown scheme `{other}`"))),
        };
        let control = StepControl {
            safety: vals.positive("safety")?,
            dt_max: vals.positive("dt_max")?,
            scheme,
            positivity_floor: 0.0,
        };

        let horizon = |key: &str| {
            let s = vals.str(key);
            Horizon::parse(s).ok_or_else(|| config_err(format!("{key}: expected a number or `<c>/delta`, got `{s}`")))
        };
        let t_end = horizon("t_end")?;
        let window = vals.positive("fit_window")?;
        if window > 1.0 {
            return Err(config_err(format!("fit_window must lie in (0, 1], got {window}")));
        }
        let norm_p = vals.num("norm_p")?;
        if !(norm_p >= 1.0) {
            return Err(config_err(format!("norm_p must be >= 1, got {norm_p}")));
        }

        let sweep = SweepSpec {
            betas: vals.list("sweep_beta")?,
            eps_scales: vals.list("sweep_eps_scale")?,
            t_end: horizon("sweep_t_end")?,
            workers: vals.count("workers")?,
            decay_factor: vals.num("decay_factor")?,
            growth_rate: vals.num("growth_rate")?,
            r2_min: vals.num("r2_min")?,
            fallback_eps: vals.positive("fallback_eps")?,
            fallback_delta: vals.positive("fallback_delta")?,
        };

        Ok(Self {
            scenario,
            grid,
            params,
            profile,
            certificate,
            control,
            t_end,
            observe_every: vals.positive("observe_every")?,
            output_dir: PathBuf::from(vals.str("output_dir")),
            norm_p,
            envelope_tol: vals.num("envelope_tol")?,
            rate_factor: vals.num("rate_factor")?,
            fit: FitSettings { window, floor: vals.num("fit_floor")?, floor_u: vals.num("fit_floor_u")? },
            final_u_tol: vals.positive("final_u_tol")?,
            final_w14_tol: vals.positive("final_w14_tol")?,
            oracle_dt: vals.positive("oracle_dt")?,
            oracle_tol: vals.positive("oracle_tol")?,
            mms_cells: vals.count("mms_cells")?,
            mms_order_min: vals.num("mms_order_min")?,
            fisher_target: vals.positive("fisher_target")?,
            fisher_rate_tol: vals.positive("fisher_rate_tol")?,
            checkpoint: vals.flag("checkpoint")?,
            sweep,
            resolved: vals.0,
        })
    }

    /// The effective configuration in the input format.
    pub fn to_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn certificate_for(&self, params: &ModelParams, u0: U0Bounds) -> SmallnessCertificate {
        match self.certificate {
            CertMode::Auto => find_certificate(params, u0, &Default::default()),
            CertMode::Explicit { eps, delta, k } => {
                let k = k.unwrap_or_else(|| crate::model::default_k(params.beta, u0).unwrap_or(f64::NAN));
                SmallnessCertificate::evaluate(eps, delta, k, params, u0)
            }
        }
    }

    /// Bounds of `u0`, which never depends on `eps`.
    fn u0_bounds(&self) -> Result<U0Bounds, HarnessError> {
        let data = make_initial(self.grid.clone(), &self.profile.resolve(0.0), None)?;
        Ok(data.u0_bounds()?)
    }
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: &'static str,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: "<=", bound, pass: value <= bound }
    }

    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: "<", bound, pass: value < bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: ">=", bound, pass: value >= bound }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.6e} {} {:.6e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.relation,
            self.bound
        )
    }
}

/// Step-level audit plus the observation records of one run.
#[derive(Debug, Clone)]
pub struct Audit {
    pub records: Vec<NormRecord>,
    pub norm_p: f64,
    pub measure_error: Option<String>,
    /// Number of cell updates in which `v` increased.
    pub v_increases: u64,
    /// Number of steps after which `v`, `b` or `z` held a nonzero value.
    pub aux_nonzero_steps: u64,
    /// Minimum of `a`, `v`, `b`, `z` over every step.
    pub min_seen: [f64; 4],
    pub steps: u64,
}

impl Audit {
    pub fn new(norm_p: f64) -> Self {
        Self {
            records: Vec::new(),
            norm_p,
            measure_error: None,
            v_increases: 0,
            aux_nonzero_steps: 0,
            min_seen: [f64::INFINITY; 4],
            steps: 0,
        }
    }

    /// `(t, value)` pairs of one record column.
    pub fn series(&self, f: impl Fn(&NormRecord) -> f64) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, f(r))).collect()
    }
}

impl Observer for Audit {
    fn observe(&mut self, state: &SimState) {
        match NormRecord::measure(state, self.norm_p) {
            Ok(r) => self.records.push(r),
            Err(e) => {
                self.measure_error.get_or_insert_with(|| format!("t = {}: {e}", state.t));
            }
        }
    }

    fn after_step(&mut self, prev: &SimState, next: &SimState, _dt: f64) {
        self.steps += 1;
        self.v_increases +=
            prev.v.values().iter().zip(next.v.values()).filter(|(p, n)| n > p).count() as u64;
        for (m, (_, f)) in self.min_seen.iter_mut().zip(next.fields()) {
            *m = m.min(f.min());
        }
        if [&next.v, &next.b, &next.z].iter().any(|f| f.values().iter().any(|&x| x != 0.0)) {
            self.aux_nonzero_steps += 1;
        }
    }

    fn wants_steps(&self) -> bool {
        true
    }
}

/// Fitted versus predicted rate of one monitored quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub quantity: &'static str,
    pub fit: Option<DecayFit>,
    pub predicted: f64,
    pub factor: f64,
}

impl RateCheck {
    pub fn rate(&self) -> f64 {
        self.fit.map_or(f64::NAN, |f| f.rate)
    }

    pub fn pass(&self) -> bool {
        self.rate() >= self.factor * self.predicted
    }
}

fn fits_csv(fits: &[RateCheck]) -> String {
    let mut s = String::from("quantity,fitted_rate,predicted_rate,required_rate,r_squared,t_lo,t_hi,pass\n");
    for f in fits {
        let (r2, lo, hi) = f.fit.map_or((f64::NAN, f64::NAN, f64::NAN), |d| (d.r_squared, d.window.0, d.window.1));
        writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            f.quantity,
            f.rate(),
            f.predicted,
            f.factor * f.predicted,
            r2,
            lo,
            hi,
            f.pass()
        )
        .unwrap();
    }
    s
}

/// Fit after dropping samples at or below `floor`, so that float resolution
/// and underflow do not bend the tail.
pub fn fit_above(series: &[(f64, f64)], floor: f64, window: f64) -> Option<DecayFit> {
    let kept: Vec<(f64, f64)> = series.iter().copied().filter(|&(_, y)| y > floor).collect();
    fit_decay(&kept, window).ok()
}

/// Classification of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Decay,
    Growth,
    Indeterminate,
    Error,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Decay => "decay",
            Classification::Growth => "growth",
            Classification::Indeterminate => "indeterminate",
            Classification::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub eps_scale: f64,
    pub threshold_ok: bool,
    pub cert_valid: bool,
    pub z_fitted_rate: f64,
    pub classification: Classification,
    /// Failure message for `Classification::Error`.
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "beta,eps_scale,threshold_ok,cert_valid,z_fitted_rate,classification";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{:.16e},{}",
            r.beta, r.eps_scale, r.threshold_ok, r.cert_valid, r.z_fitted_rate, r.classification
        )
        .unwrap();
    }
    s
}

/// Everything a scenario produced.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub checks: Vec<Check>,
    pub certificate: Option<SmallnessCertificate>,
    pub envelope: Option<EnvelopeReport>,
    pub fits: Vec<RateCheck>,
    pub audit: Option<Audit>,
    pub sweep: Vec<SweepRow>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

impl ScenarioReport {
    fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            checks: Vec::new(),
            certificate: None,
            envelope: None,
            fits: Vec::new(),
            audit: None,
            sweep: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 if every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("scenario={}\n", self.scenario.name());
        for c in &self.checks {
            writeln!(s, "{c}").unwrap();
        }
        writeln!(s, "result={}", if self.passed() { "pass" } else { "fail" }).unwrap();
        s
    }
}

struct Output<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| output_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Runs the configured scenario and writes its files under `output_dir`.
/// `Ok` carries the checks (exit 0 or 1); `Err` maps to exit 2 or 3.
pub fn run_scenario(cfg: &RunConfig) -> Result<ScenarioReport, HarnessError> {
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("config.txt", &cfg.to_text())?;
    let mut report = match cfg.scenario {
        Scenario::Theorem11 => theorem11(cfg, &mut out)?,
        Scenario::OdeOracle => ode_oracle(cfg, &mut out)?,
        Scenario::Mms => mms(cfg, &mut out)?,
        Scenario::Fisher => fisher(cfg, &mut out)?,
        Scenario::Sweep => {
            let mut r = ScenarioReport::new(Scenario::Sweep);
            r.sweep = run_sweep(cfg)?;
            out.write("sweep.csv", &sweep_csv(&r.sweep))?;
            r
        }
        Scenario::Custom => custom(cfg, &mut out)?,
    };
    out.write("summary.txt", &report.summary())?;
    report.files = out.files;
    Ok(report)
}

fn simulate(
    cfg: &RunConfig,
    params: &ModelParams,
    data: &InitialData,
    t_end: f64,
) -> Result<(Audit, SimState), StepError> {
    let mut audit = Audit::new(cfg.norm_p);
    let summary = run(SimState::from_initial(data), params, &cfg.control, t_end, cfg.observe_every, &mut audit)?;
    Ok((audit, summary.final_state))
}

fn write_series(out: &mut Output, cfg: &RunConfig, audit: &Audit, last: &SimState) -> Result<(), HarnessError> {
    out.write("series.csv", &series_csv(&audit.records))?;
    if cfg.checkpoint {
        let dir = out.dir.join("checkpoint");
        last.write_checkpoint(&dir).map_err(|e| HarnessError::Output(e.to_string()))?;
        out.files.push("checkpoint".into());
    }
    Ok(())
}

/// Checks shared by every time-dependent scenario.
fn audit_checks(audit: &Audit) -> Vec<Check> {
    let mut checks = vec![
        Check::at_least("min_field_over_steps", audit.min_seen.iter().copied().fold(0.0, f64::min), -crate::stepper::NEGATIVITY_TOL),
        Check::at_most("v_increases", audit.v_increases as f64, 0.0),
    ];
    if let Some(e) = &audit.measure_error {
        checks.push(Check { name: format!("measure ({e})"), value: f64::NAN, relation: "ok", bound: f64::NAN, pass: false });
    }
    checks
}

/// Allowed growth of the `L^5` gradient norm of `v` after `t = 1`.
pub const L5_GROWTH_MAX: f64 = 1.05;

/// `max_{t > 1} |grad v|_5 / |grad v(1)|_5`, with `t = 1` taken as the first
/// record at or after 1. `None` when the run is too short or the reference is 0.
pub fn l5_growth(records: &[NormRecord]) -> Option<f64> {
    let i = records.iter().position(|r| r.t >= 1.0)?;
    let reference = records[i].grad_v_l5;
    if reference == 0.0 || i + 1 == records.len() {
        return None;
    }
    Some(records[i + 1..].iter().map(|r| r.grad_v_l5).fold(0.0, f64::max) / reference)
}

fn theorem11(cfg: &RunConfig, out: &mut Output) -> Result<ScenarioReport, HarnessError> {
    let params = cfg.params;
    let u0 = cfg.u0_bounds()?;
    if !threshold_holds(params.beta, u0) {
        return Err(ModelError::ThresholdFails { lhs: params.beta * u0.max_or_one(), rhs: u0.threshold_rhs() }.into());
    }
    let cert = cfg.certificate_for(&params, u0);
    out.write("certificate.txt", &cert.report())?;
    if !cert.valid {
        let why = cert.violation.as_ref().map_or(String::new(), |v| v.to_string());
        return Err(config_err(format!("no valid smallness certificate: {why}")));
    }
    let data = make_initial(cfg.grid.clone(), &cfg.profile.resolve(cert.eps), Some(&cert))?;
    let env = EnvelopeSet::new(&cert, &params, &data).map_err(|e| config_err(e.to_string()))?;
    let t_end = cfg.t_end.resolve(Some(cert.delta))?;

    let (audit, last) = simulate(cfg, &params, &data, t_end)?;
    write_series(out, cfg, &audit, &last)?;
    let times: Vec<f64> = audit.records.iter().map(|r| r.t).collect();
    out.write("envelopes.csv", &env.to_csv(&times))?;
    let env_report = envelope_report(&audit.records, &env, cfg.envelope_tol);
    out.write("compliance.csv", &env_report.to_csv())?;

    let rates = predicted_rates(&cert, &params);
    let f = &cfg.fit;
    let fit = |quantity, series: Vec<(f64, f64)>, floor, predicted| RateCheck {
        quantity,
        fit: fit_above(&series, floor, f.window),
        predicted,
        factor: cfg.rate_factor,
    };
    let fits = vec![
        fit("sup_v", audit.series(|r| r.sup_v), f.floor, rates.v),
        fit("sup_z", audit.series(|r| r.sup_z), f.floor, rates.z),
        fit("max_b", audit.series(|r| r.max_b), f.floor, rates.b),
        fit("sup_u_minus_1", audit.series(|r| r.sup_u_minus_1), f.floor_u, rates.u_minus_1),
        fit("grad_v_l2_sq", audit.series(|r| r.grad_v_l2 * r.grad_v_l2), f.floor, rates.grad_v_sq),
    ];
    out.write("fits.csv", &fits_csv(&fits))?;

    let mut report = ScenarioReport::new(Scenario::Theorem11);
    for (name, r) in env_report.entries() {
        report.checks.push(Check::at_most(format!("envelope_{name}"), r.ratio, 1.0 + cfg.envelope_tol));
    }
    for f in &fits {
        report.checks.push(Check::at_least(format!("rate_{}", f.quantity), f.rate(), f.factor * f.predicted));
    }
    let end = audit.records.last().expect("run observes its final state");
    report.checks.push(Check::below("final_sup_u_minus_1", end.sup_u_minus_1, cfg.final_u_tol));
    report.checks.push(Check::below("final_w14_v", end.w14_v, cfg.final_w14_tol));
    if let Some(g) = l5_growth(&audit.records) {
        report.checks.push(Check::at_most("grad_v_l5_growth", g, L5_GROWTH_MAX));
    }
    report.checks.extend(audit_checks(&audit));
    report.certificate = Some(cert);
    report.envelope = Some(env_report);
    report.fits = fits;
    report.audit = Some(audit);
    Ok(report)
}

/// Right-hand side of the spatially homogeneous `(u, v, w, z)` system.
pub fn ode_rhs(params: &ModelParams) -> impl Fn(f64, &[f64], &mut [f64]) + '_ {
    move |_, y, dy| {
        let (u, v, w, z) = (y[0], y[1], y[2], y[3]);
        dy[0] = params.mu * u * (1.0 - u) - u * z;
        dy[1] = -(u + w) * v;
        dy[2] = -w + u * z;
        dy[3] = -z - u * z + params.beta * w;
    }
}

fn is_homogeneous(s: &SimState) -> bool {
    s.fields().iter().all(|(_, f)| f.values().iter().all(|&x| x == f.values()[0]))
}

fn ode_oracle(cfg: &RunConfig, out: &mut Output) -> Result<ScenarioReport, HarnessError> {
    let params = cfg.params;
    let data = make_initial(cfg.grid.clone(), &cfg.profile.resolve(0.0), None)?;
    let t_end = cfg.t_end.resolve(None)?;
    let mut states = Vec::new();
    let mut homogeneous = true;
    let mut observe = |s: &SimState| {
        homogeneous &= is_homogeneous(s);
        let (u, w) = (s.u(), s.w());
        states.push((s.t, [u.values()[0], s.v.values()[0], w.values()[0], s.z.values()[0]]));
    };
    run(SimState::from_initial(&data), &params, &cfg.control, t_end, cfg.observe_every, &mut observe)?;

    let y0 = [data.u0.values()[0], data.v0.values()[0], data.w0.values()[0], data.z0.values()[0]];
    let times: Vec<f64> = states.iter().map(|s| s.0).collect();
    let oracle = rk4_at(ode_rhs(&params), &y0, 0.0, &times, cfg.oracle_dt).map_err(|e| config_err(e.to_string()))?;

    let mut csv = String::from("t,err_u,err_v,err_w,err_z\n");
    let mut worst = 0.0f64;
    for ((t, pde), ode) in states.iter().zip(&oracle) {
        let err: Vec<f64> = pde.iter().zip(ode).map(|(p, o)| (p - o).abs()).collect();
        worst = err.iter().copied().fold(worst, f64::max);
        writeln!(csv, "{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", err[0], err[1], err[2], err[3]).unwrap();
    }
    out.write("oracle.csv", &csv)?;
    let mut report = ScenarioReport::new(Scenario::OdeOracle);
    report.checks.push(Check::at_most("max_discrepancy", worst, cfg.oracle_tol));
    report.checks.push(Check::at_least("homogeneous", homogeneous as u8 as f64, 1.0));
    Ok(report)
}

/// Truncation error of one `rhs_transformed` evaluation against the exact
/// operator on smooth Neumann-compatible fields, per component `(a, b, z)`.
pub fn mms_error(grid: Arc<GridSpec>, params: &ModelParams) -> [f64; 3] {
    let pi = std::f64::consts::PI;
    let dim = grid.dim();
    let k: Vec<f64> = grid.lengths().iter().map(|l| pi / l).collect();
    let k2: f64 = k.iter().map(|x| x * x).sum();
    let c = |x: [f64; 3]| (0..dim).map(|d| (k[d] * x[d]).cos()).product::<f64>();
    let grad_c_sq = |x: [f64; 3]| {
        (0..dim)
            .map(|d| {
                let others: f64 = (0..dim).filter(|&e| e != d).map(|e| (k[e] * x[e]).cos()).product();
                (k[d] * (k[d] * x[d]).sin() * others).powi(2)
            })
            .sum::<f64>()
    };
    let (ca, cv, cb, cz) = (0.3, 0.2, 0.05, 0.04);
    let state = SimState {
        t: 0.0,
        a: ScalarField::from_fn(grid.clone(), |x| 1.0 + ca * c(x)),
        v: ScalarField::from_fn(grid.clone(), |x| cv * (1.0 + c(x))),
        b: ScalarField::from_fn(grid.clone(), |x| cb * (1.0 + c(x))),
        z: ScalarField::from_fn(grid.clone(), |x| cz * (1.0 - c(x))),
    };
    let d = rhs_transformed(&state, params);
    let mut err = [0.0f64; 3];
    for i in 0..grid.n_cells() {
        let x = grid.cell_center(i);
        let (cx, g2) = (c(x), grad_c_sq(x));
        let (a, v, b, z) = (1.0 + ca * cx, cv * (1.0 + cx), cb * (1.0 + cx), cz * (1.0 - cx));
        let ev = v.exp();
        let exact = [
            -ca * k2 * cx + ca * cv * g2 + eval_f(a, b, v, z, params.mu),
            -cb * k2 * cx + cb * cv * g2 + eval_g(a, b, v, z),
            params.dz * cz * k2 * cx - z - a * ev * z + params.beta * b * ev,
        ];
        let got = [d.da.values()[i], d.db.values()[i], d.dz.values()[i]];
        for j in 0..3 {
            err[j] = err[j].max((got[j] - exact[j]).abs());
        }
    }
    err
}

fn mms(cfg: &RunConfig, out: &mut Output) -> Result<ScenarioReport, HarnessError> {
    let g = &cfg.grid;
    let mut rows = Vec::new();
    for level in 0..4 {
        let n = cfg.mms_cells << level;
        let grid = make_grid(g.dim(), g.lengths(), &vec![n; g.dim()]).map_err(|e| config_err(e.to_string()))?;
        let h = grid.min_spacing();
        let e = mms_error(Arc::new(grid), &cfg.params);
        rows.push((n, h, e, e.iter().copied().fold(0.0, f64::max)));
    }
    let mut csv = String::from("cells,h,err_a,err_b,err_z,order\n");
    let mut min_order = f64::INFINITY;
    for (i, (n, h, e, m)) in rows.iter().enumerate() {
        let order = if i == 0 { f64::NAN } else { (rows[i - 1].3 / m).log2() };
        if i > 0 {
            min_order = min_order.min(order);
        }
        writeln!(csv, "{n},{h:.16e},{:.16e},{:.16e},{:.16e},{order:.6}", e[0], e[1], e[2]).unwrap();
    }
    out.write("mms.csv", &csv)?;
    let mut report = ScenarioReport::new(Scenario::Mms);
    report.checks.push(Check::at_least("min_order", min_order, cfg.mms_order_min));
    Ok(report)
}

fn fisher(cfg: &RunConfig, out: &mut Output) -> Result<ScenarioReport, HarnessError> {
    let data = make_initial(cfg.grid.clone(), &cfg.profile.resolve(0.0), None)?;
    if data.v0_max != 0.0 || data.w0_max != 0.0 || data.z0_max != 0.0 {
        return Err(config_err("fisher needs v0 = w0 = z0 = 0"));
    }
    let t_end = cfg.t_end.resolve(None)?;
    let (audit, last) = simulate(cfg, &cfg.params, &data, t_end)?;
    write_series(out, cfg, &audit, &last)?;
    let fit = fit_above(&audit.series(|r| r.sup_u_minus_1), cfg.fit.floor_u, cfg.fit.window);
    let rate = fit.map_or(f64::NAN, |f| f.rate);
    let fits = vec![RateCheck { quantity: "sup_u_minus_1", fit, predicted: cfg.params.mu, factor: 1.0 - cfg.fisher_rate_tol }];
    out.write("fits.csv", &fits_csv(&fits))?;

    let mut report = ScenarioReport::new(Scenario::Fisher);
    report.checks.push(Check::at_most("aux_nonzero_steps", audit.aux_nonzero_steps as f64, 0.0));
    let end = audit.records.last().expect("run observes its final state");
    report.checks.push(Check::below("final_sup_u_minus_1", end.sup_u_minus_1, cfg.fisher_target));
    // Without an initial perturbation there is no decay to measure.
    if audit.records[0].sup_u_minus_1 > cfg.fit.floor_u {
        report.checks.push(Check::at_most(
            "rate_relative_error",
            ((rate - cfg.params.mu) / cfg.params.mu).abs(),
            cfg.fisher_rate_tol,
        ));
    }
    report.checks.extend(audit_checks(&audit));
    report.fits = fits;
    report.audit = Some(audit);
    Ok(report)
}

fn custom(cfg: &RunConfig, out: &mut Output) -> Result<ScenarioReport, HarnessError> {
    let params = cfg.params;
    let u0 = cfg.u0_bounds()?;
    let cert = threshold_holds(params.beta, u0).then(|| cfg.certificate_for(&params, u0)).filter(|c| c.valid);
    if let Some(c) = &cert {
        out.write("certificate.txt", &c.report())?;
    }
    let eps = cert.as_ref().map(|c| c.eps);
    if eps.is_none() && uses_eps(&cfg.profile) {
        return Err(config_err("eps-relative amounts need a valid certificate"));
    }
    let data = make_initial(cfg.grid.clone(), &cfg.profile.resolve(eps.unwrap_or(0.0)), None)?;
    let t_end = cfg.t_end.resolve(cert.as_ref().map(|c| c.delta))?;
    let (audit, last) = simulate(cfg, &params, &data, t_end)?;
    write_series(out, cfg, &audit, &last)?;
    let mut report = ScenarioReport::new(Scenario::Custom);
    if let Some(c) = &cert {
        // Envelopes are informational here; the data need not be small.
        if let Ok(env) = EnvelopeSet::new(c, &params, &data) {
            let times: Vec<f64> = audit.records.iter().map(|r| r.t).collect();
            out.write("envelopes.csv", &env.to_csv(&times))?;
            let rep = envelope_report(&audit.records, &env, cfg.envelope_tol);
            out.write("compliance.csv", &rep.to_csv())?;
            report.envelope = Some(rep);
        }
    }
    report.checks.extend(audit_checks(&audit));
    report.certificate = cert;
    report.audit = Some(audit);
    Ok(report)
}

fn uses_eps(p: &ProfileSpec) -> bool {
    let any = |a: &[Amount; 4]| a.iter().any(|x| matches!(x, Amount::Eps(c) if *c != 0.0));
    match p {
        ProfileSpec::Constant(c) => any(c),
        ProfileSpec::Bump { base, amp } => any(base) || any(amp),
        ProfileSpec::File(_) => false,
    }
}

/// Classifies a fitted `sup z` rate against a reference `delta`.
pub fn classify(fit: Option<DecayFit>, delta_ref: f64, spec: &SweepSpec) -> Classification {
    match fit {
        None => Classification::Error,
        Some(f) if f.rate > spec.decay_factor * delta_ref && f.r_squared > spec.r2_min => Classification::Decay,
        Some(f) if f.rate < spec.growth_rate => Classification::Growth,
        Some(_) => Classification::Indeterminate,
    }
}

fn sweep_cell(cfg: &RunConfig, u0: U0Bounds, beta: f64, eps_scale: f64) -> SweepRow {
    let mut row = SweepRow {
        beta,
        eps_scale,
        threshold_ok: threshold_holds(beta, u0),
        cert_valid: false,
        z_fitted_rate: f64::NAN,
        classification: Classification::Error,
        error: None,
    };
    let params = match ModelParams::new(cfg.params.mu, beta, cfg.params.dz) {
        Ok(p) => p,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let cert = cfg.certificate_for(&params, u0);
    row.cert_valid = cert.valid;
    let (eps_unit, delta_ref) =
        if cert.valid { (cert.eps, cert.delta) } else { (cfg.sweep.fallback_eps, cfg.sweep.fallback_delta) };
    let result = (|| -> Result<Option<DecayFit>, HarnessError> {
        let data = make_initial(cfg.grid.clone(), &cfg.profile.resolve(eps_scale * eps_unit), None)?;
        let t_end = cfg.sweep.t_end.resolve(Some(delta_ref))?;
        let (audit, _) = simulate(cfg, &params, &data, t_end)?;
        Ok(fit_above(&audit.series(|r| r.sup_z), cfg.fit.floor, cfg.fit.window))
    })();
    match result {
        Ok(fit) => {
            row.z_fitted_rate = fit.map_or(f64::NAN, |f| f.rate);
            row.classification = classify(fit, delta_ref, &cfg.sweep);
            if fit.is_none() {
                row.error = Some("too few positive sup_z samples to fit".into());
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every `(beta, eps_scale)` cell, ordered by `beta` then `eps_scale`.
/// Cell failures become `Classification::Error` rows.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let u0 = cfg.u0_bounds()?;
    let mut betas = cfg.sweep.betas.clone();
    let mut scales = cfg.sweep.eps_scales.clone();
    betas.sort_by(f64::total_cmp);
    scales.sort_by(f64::total_cmp);
    let cells: Vec<(f64, f64)> = betas.iter().flat_map(|&b| scales.iter().map(move |&s| (b, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.workers)
        .build()
        .map_err(|e| config_err(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|&(b, s)| sweep_cell(cfg, u0, b, s)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_for_every_scenario() {
        for s in ["theorem11", "ode-oracle", "mms", "fisher", "sweep", "custom"] {
            let cfg = RunConfig::parse(&format!("scenario = {s}\n"), &[]).unwrap();
            assert_eq!(cfg.scenario.name(), s);
        }
    }

    #[test]
    fn overrides_win_and_lists_broadcast() {
        let text = "scenario = custom  # comment\ndim = 2\ncells = 8\nlengths = 1, 2\nbeta = 1.1\n";
        let cfg = RunConfig::parse(text, &["beta=0.9".into(), "v0_amp = 0.25eps".into()]).unwrap();
        assert_eq!(cfg.grid.cells(), &[8, 8]);
        assert_eq!(cfg.grid.lengths(), &[1.0, 2.0]);
        assert_eq!(cfg.params.beta, 0.9);
        match cfg.profile {
            ProfileSpec::Bump { amp, .. } => assert_eq!(amp[1], Amount::Eps(0.25)),
            _ => panic!("expected bump"),
        }
        assert_eq!(cfg.resolved["beta"], "0.9");
    }

    #[test]
    fn config_errors() {
        let bad = [
            "scenario = nope",
            "colour = red",
            "beta = -1",
            "u0_amp = 0.1eps",
            "t_end = soon",
            "dim = 4",
            "just a line",
            "profile = file",
            "profile = constant\nv0_amp = 0.1",
            "certificate = explicit",
        ];
        for text in bad {
            assert!(matches!(RunConfig::parse(text, &[]), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn horizons_and_amounts() {
        assert_eq!(Horizon::parse("20/delta"), Some(Horizon::PerDelta(20.0)));
        assert_eq!(Horizon::parse("12.5"), Some(Horizon::Fixed(12.5)));
        assert_eq!(Horizon::PerDelta(2.0).resolve(Some(0.5)).unwrap(), 4.0);
        assert!(Horizon::PerDelta(2.0).resolve(None).is_err());
        assert_eq!(Amount::parse("eps"), Some(Amount::Eps(1.0)));
        assert_eq!(Amount::parse("0.3eps").unwrap().resolve(2.0), 0.6);
        assert_eq!(Amount::parse("x"), None);
    }

    #[test]
    fn classification_rules() {
        let spec = RunConfig::parse("scenario = sweep", &[]).unwrap().sweep;
        let fit = |rate, r_squared| Some(DecayFit { rate, log_amplitude: 0.0, r_squared, window: (0.0, 1.0), samples: 10 });
        assert_eq!(classify(fit(0.01, 0.99), 0.1, &spec), Classification::Decay);
        assert_eq!(classify(fit(0.01, 0.5), 0.1, &spec), Classification::Indeterminate);
        assert_eq!(classify(fit(0.001, 0.99), 0.1, &spec), Classification::Indeterminate);
        assert_eq!(classify(fit(-0.02, 0.99), 0.1, &spec), Classification::Growth);
        assert_eq!(classify(None, 0.1, &spec), Classification::Error);
    }

    #[test]
    fn ode_rhs_equilibrium() {
        let p = ModelParams::new(1.0, 1.2, 1.0).unwrap();
        let mut dy = [1.0; 4];
        ode_rhs(&p)(0.0, &[1.0, 0.0, 0.0, 0.0], &mut dy);
        assert_eq!(dy, [0.0; 4]);
    }

    #[test]
    fn mms_error_shrinks_quadratically() {
        let p = ModelParams::new(1.0, 1.2, 1.0).unwrap();
        let e = |n| mms_error(Arc::new(make_grid(1, &[1.0], &[n]).unwrap()), &p);
        let (e1, e2) = (e(32), e(64));
        for j in 0..3 {
            assert!(e1[j] / e2[j] > 3.5, "{e1:?} {e2:?}");
        }
    }
}
