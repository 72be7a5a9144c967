//! Model parameters, the small-data threshold test, construction of a
//! smallness certificate `(eps, delta, K)`, the transformed reaction terms and
//! initial data.

use std::f64::consts::E;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{GridError, GridSpec, ScalarField};

/// Strict-inequality margin used when searching for certificates.
pub const CERT_MARGIN: f64 = 1e-12;

/// Smallest `a*` the search accepts. Below it the `v` envelope and the lower
/// `a` envelope stop decaying at any rate visible in double precision.
pub const A_STAR_MIN: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("min u0 must be positive, got {0}")]
    NonPositiveU0Min(f64),
    #[error("min u0 {min} exceeds max u0 {max}")]
    U0Order { min: f64, max: f64 },
    #[error(
        "threshold condition fails: beta*max(1,max u0) = {lhs} is not below 1 + (1 + 1/min u0)^-1 = {rhs}"
    )]
    ThresholdFails { lhs: f64, rhs: f64 },
    #[error("initial {field} must be {requirement}, found {value}")]
    InitialData { field: &'static str, requirement: String, value: f64 },
    #[error("fields of the initial profile live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Logistic growth rate of uninfected cells.
    pub mu: f64,
    /// Virus release rate.
    pub beta: f64,
    /// Virus diffusivity.
    pub dz: f64,
}

impl ModelParams {
    pub fn new(mu: f64, beta: f64, dz: f64) -> Result<Self, ModelError> {
        for (name, value) in [("mu", mu), ("beta", beta), ("dz", dz)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositive { name, value });
            }
        }
        Ok(Self { mu, beta, dz })
    }
}

/// The extrema of `u0` that enter every threshold and certificate formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct U0Bounds {
    pub min: f64,
    pub max: f64,
}

impl U0Bounds {
    pub fn new(min: f64, max: f64) -> Result<Self, ModelError> {
        if !(min > 0.0 && min.is_finite()) {
            return Err(ModelError::NonPositiveU0Min(min));
        }
        if !(max >= min && max.is_finite()) {
            return Err(ModelError::U0Order { min, max });
        }
        Ok(Self { min, max })
    }

    /// `1 + (1 + 1/min u0)^{-1}`, the right side of the threshold.
    pub fn threshold_rhs(&self) -> f64 {
        1.0 + 1.0 / (1.0 + 1.0 / self.min)
    }

    pub fn max_or_one(&self) -> f64 {
        self.max.max(1.0)
    }
}

/// `beta * max(1, max u0) < 1 + (1 + 1/min u0)^{-1}`.
pub fn threshold_holds(beta: f64, u0: U0Bounds) -> bool {
    beta * u0.max_or_one() < u0.threshold_rhs()
}

/// Threshold test on concrete initial data.
pub fn check_threshold(beta: f64, u0: &InitialData) -> Result<bool, ModelError> {
    Ok(threshold_holds(beta, u0.u0_bounds()?))
}

/// Midpoint of `(max(1, max u0), (1 + (1 + 1/min u0)^{-1}) / beta)`.
pub fn default_k(beta: f64, u0: U0Bounds) -> Result<f64, ModelError> {
    if !threshold_holds(beta, u0) {
        return Err(ModelError::ThresholdFails {
            lhs: beta * u0.max_or_one(),
            rhs: u0.threshold_rhs(),
        });
    }
    Ok(0.5 * (u0.max_or_one() + u0.threshold_rhs() / beta))
}

/// Floor of the transformed cell density:
/// `a* = [e^{sqrt(eps)/delta + eps} / min u0 + mu e^eps / (mu - sqrt(eps))]^{-1}`.
pub fn a_star(eps: f64, delta: f64, mu: f64, u0_min: f64) -> f64 {
    let se = eps.sqrt();
    let growth = if eps == 0.0 { 0.0 } else { se / delta };
    1.0 / ((growth + eps).exp() / u0_min + mu * eps.exp() / (mu - se))
}

/// Cap on `eps`: `min(beta^2/4, mu/(3e))`.
pub fn eps_cap(params: &ModelParams) -> f64 {
    (params.beta * params.beta / 4.0).min(params.mu / (3.0 * E))
}

/// Both sides of the two-sided certificate inequality at `(eps, delta)`.
pub fn certificate_sides(eps: f64, delta: f64, params: &ModelParams, u0: U0Bounds) -> (f64, f64) {
    let ModelParams { mu, beta, .. } = *params;
    let se = eps.sqrt();
    let ee = eps * E;
    let lhs = ((mu + ee) / (mu - ee)).max(u0.max) + se * E * 3.0f64.max(u0.max + 1.0);
    let lhs = lhs / (1.0 - delta);
    let rhs = (1.0 + a_star(eps, delta, mu, u0.min) - delta) * (1.0 - 1.5 * se) / (beta * eps.exp());
    (lhs, rhs)
}

/// Which certificate condition failed.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// The threshold on `beta` and `u0` itself fails.
    Threshold { lhs: f64, rhs: f64 },
    /// The left side of the certificate inequality is not below `K`.
    LowerSide { lhs: f64, k: f64 },
    /// The right side of the certificate inequality is not above `K`.
    UpperSide { rhs: f64, k: f64 },
    /// `eps` is outside `(0, min(1, beta^2/4, mu/(3e)))`, or `delta` outside `(0, 1)`.
    Range { what: &'static str, value: f64, bound: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Threshold { lhs, rhs } => {
                write!(f, "threshold: beta*max(1,max u0) = {lhs} >= 1 + (1 + 1/min u0)^-1 = {rhs}")
            }
            Violation::LowerSide { lhs, k } => write!(f, "lower side: lhs = {lhs} >= K = {k}"),
            Violation::UpperSide { rhs, k } => write!(f, "upper side: K = {k} >= rhs = {rhs}"),
            Violation::Range { what, value, bound } => {
                write!(f, "range: {what} = {value} violates bound {bound}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallnessCertificate {
    pub eps: f64,
    pub delta: f64,
    pub k: f64,
    pub a_star: f64,
    /// Predicted decay rate of `u - 1`: `min(mu a*, a*, delta/2)`.
    pub eta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub valid: bool,
    pub violation: Option<Violation>,
}

impl SmallnessCertificate {
    /// Evaluates a given `(eps, delta, K)` triple.
    pub fn evaluate(eps: f64, delta: f64, k: f64, params: &ModelParams, u0: U0Bounds) -> Self {
        let (lhs, rhs) = certificate_sides(eps, delta, params, u0);
        let a_star = a_star(eps, delta, params.mu, u0.min);
        let eta = (params.mu * a_star).min(a_star).min(delta / 2.0);
        let cap = eps_cap(params).min(1.0);
        let violation = if !threshold_holds(params.beta, u0) {
            Some(Violation::Threshold { lhs: params.beta * u0.max_or_one(), rhs: u0.threshold_rhs() })
        } else if !(eps > 0.0 && eps < cap) {
            Some(Violation::Range { what: "eps", value: eps, bound: cap })
        } else if !(eps.sqrt() < params.mu) {
            Some(Violation::Range { what: "sqrt(eps)", value: eps.sqrt(), bound: params.mu })
        } else if !(delta > 0.0 && delta < 1.0) {
            Some(Violation::Range { what: "delta", value: delta, bound: 1.0 })
        } else if !(lhs < k) {
            Some(Violation::LowerSide { lhs, k })
        } else if !(k < rhs) {
            Some(Violation::UpperSide { rhs, k })
        } else {
            None
        };
        Self { eps, delta, k, a_star, eta, lhs, rhs, valid: violation.is_none(), violation }
    }

    fn invalid(violation: Violation, k: f64) -> Self {
        Self {
            eps: 0.0,
            delta: 0.0,
            k,
            a_star: 0.0,
            eta: 0.0,
            lhs: f64::NAN,
            rhs: f64::NAN,
            valid: false,
            violation: Some(violation),
        }
    }

    /// `key=value` report with keys eps, delta, K, a_star, eta, lhs_31, rhs_31, valid.
    pub fn report(&self) -> String {
        let mut s = format!(
            "eps={:.16e}\ndelta={:.16e}\nK={:.16e}\na_star={:.16e}\neta={:.16e}\nlhs_31={:.16e}\nrhs_31={:.16e}\nvalid={}\n",
            self.eps, self.delta, self.k, self.a_star, self.eta, self.lhs, self.rhs, self.valid
        );
        if let Some(v) = &self.violation {
            s.push_str(&format!("violation={v}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_points: usize,
    pub bisection_steps: usize,
    /// Smallest eps tried; below this the pair is declared infeasible.
    pub eps_floor: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { delta_min: 1e-6, delta_max: 0.5, delta_points: 400, bisection_steps: 120, eps_floor: 1e-30 }
    }
}

/// Searches for `(eps, delta)` with `K` fixed at [`default_k`]: a geometric
/// grid over `delta` and, per `delta`, a log-scale bisection for the largest
/// admissible `eps` with `a* >= A_STAR_MIN`. The pair with the largest `eps` wins, ties going to the
/// smaller `delta`.
pub fn find_certificate(params: &ModelParams, u0: U0Bounds, opts: &SearchOptions) -> SmallnessCertificate {
    let k = match default_k(params.beta, u0) {
        Ok(k) => k,
        Err(_) => {
            return SmallnessCertificate::invalid(
                Violation::Threshold { lhs: params.beta * u0.max_or_one(), rhs: u0.threshold_rhs() },
                f64::NAN,
            )
        }
    };
    let cap = eps_cap(params).min(params.mu * params.mu * 0.25).min(1.0);
    let feasible = |eps: f64, delta: f64| {
        let (lhs, rhs) = certificate_sides(eps, delta, params, u0);
        lhs + CERT_MARGIN < k && k + CERT_MARGIN < rhs && a_star(eps, delta, params.mu, u0.min) >= A_STAR_MIN
    };
    // eps must stay strictly below the cap.
    let eps_hi = cap * (1.0 - 1e-9);

    let mut best: Option<(f64, f64)> = None;
    let mut tightest: Option<Violation> = None;
    let n = opts.delta_points.max(2);
    let ratio = (opts.delta_max / opts.delta_min).ln() / (n - 1) as f64;
    for i in 0..n {
        let delta = if i + 1 == n { opts.delta_max } else { opts.delta_min * (ratio * i as f64).exp() };
        let eps = if feasible(eps_hi, delta) {
            eps_hi
        } else if !feasible(opts.eps_floor, delta) {
            let (lhs, rhs) = certificate_sides(opts.eps_floor, delta, params, u0);
            let v = if lhs + CERT_MARGIN >= k {
                Violation::LowerSide { lhs, k }
            } else {
                Violation::UpperSide { rhs, k }
            };
            let gap = |v: &Violation| match v {
                Violation::LowerSide { lhs, k } => lhs - k,
                Violation::UpperSide { rhs, k } => k - rhs,
                _ => f64::INFINITY,
            };
            if tightest.as_ref().is_none_or(|t| gap(&v) < gap(t)) {
                tightest = Some(v);
            }
            continue;
        } else {
            let (mut lo, mut hi) = (opts.eps_floor.ln(), eps_hi.ln());
            for _ in 0..opts.bisection_steps {
                let mid = 0.5 * (lo + hi);
                if feasible(mid.exp(), delta) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo.exp()
        };
        if best.is_none_or(|(e, _)| eps > e) {
            best = Some((eps, delta));
        }
    }
    match best {
        Some((eps, delta)) => SmallnessCertificate::evaluate(eps, delta, k, params, u0),
        None => SmallnessCertificate::invalid(
            tightest.unwrap_or(Violation::Range { what: "eps", value: 0.0, bound: cap }),
            k,
        ),
    }
}

/// Reaction term of the transformed `a` equation.
#[inline]
pub fn eval_f(a: f64, b: f64, v: f64, z: f64, mu: f64) -> f64 {
    let ev = v.exp();
    -a * z + a * (a + b) * ev * v + mu * a * (1.0 - ev * a)
}

/// Reaction term of the transformed `b` equation.
#[inline]
pub fn eval_g(a: f64, b: f64, v: f64, z: f64) -> f64 {
    -b + a * z + b * (a + b) * v.exp() * v
}

/// Predicted exponential rates for each monitored quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTable {
    pub v: f64,
    pub z: f64,
    pub b: f64,
    pub u_minus_1: f64,
    /// Rate of the squared gradient norm of `v`, up to a polynomial factor.
    pub grad_v_sq: f64,
}

pub fn predicted_rates(cert: &SmallnessCertificate, params: &ModelParams) -> RateTable {
    let eta = (params.mu * cert.a_star).min(cert.a_star).min(cert.delta / 2.0);
    RateTable { v: cert.a_star, z: cert.delta, b: cert.delta, u_minus_1: eta, grad_v_sq: 2.0 * cert.a_star }
}

/// How to build the four initial fields.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant { u: f64, v: f64, w: f64, z: f64 },
    /// `base + amp * bump(x)` per field, where `bump = prod_i (1 + cos(pi x_i / L_i)) / 2`
    /// lies in `[0, 1]` and has zero normal derivative on every wall.
    Bump { base: [f64; 4], amp: [f64; 4] },
    File { u: PathBuf, v: PathBuf, w: PathBuf, z: PathBuf },
}

pub fn cosine_bump(grid: &GridSpec, x: [f64; 3]) -> f64 {
    (0..grid.dim())
        .map(|d| 0.5 * (1.0 + (std::f64::consts::PI * x[d] / grid.lengths()[d]).cos()))
        .product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u0: ScalarField,
    pub v0: ScalarField,
    pub w0: ScalarField,
    pub z0: ScalarField,
    pub u0_min: f64,
    pub u0_max: f64,
    pub v0_max: f64,
    pub w0_max: f64,
    pub z0_max: f64,
}

impl InitialData {
    /// Validates positivity and caches extrema.
    pub fn from_fields(
        u0: ScalarField,
        v0: ScalarField,
        w0: ScalarField,
        z0: ScalarField,
    ) -> Result<Self, ModelError> {
        if !(u0.same_grid(&v0) && u0.same_grid(&w0) && u0.same_grid(&z0)) {
            return Err(ModelError::GridMismatch);
        }
        let u0_min = u0.min();
        if !(u0_min > 0.0) || !u0.is_finite() {
            return Err(ModelError::InitialData { field: "u0", requirement: "positive".into(), value: u0_min });
        }
        for (field, f) in [("v0", &v0), ("w0", &w0), ("z0", &z0)] {
            let m = f.min();
            if !(m >= 0.0) || !f.is_finite() {
                return Err(ModelError::InitialData { field, requirement: "nonnegative".into(), value: m });
            }
        }
        Ok(Self {
            u0_max: u0.max(),
            v0_max: v0.max(),
            w0_max: w0.max(),
            z0_max: z0.max(),
            u0_min,
            u0,
            v0,
            w0,
            z0,
        })
    }

    pub fn u0_bounds(&self) -> Result<U0Bounds, ModelError> {
        U0Bounds::new(self.u0_min, self.u0_max)
    }

    /// Checks `max v0, max w0, max z0 < eps`.
    pub fn check_small(&self, eps: f64) -> Result<(), ModelError> {
        for (field, m) in [("v0", self.v0_max), ("w0", self.w0_max), ("z0", self.z0_max)] {
            if !(m < eps) {
                return Err(ModelError::InitialData {
                    field,
                    requirement: format!("strictly below eps = {eps}"),
                    value: m,
                });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.u0.grid()
    }
}

/// Builds initial data from a profile; with a certificate, also enforces the
/// smallness of `v0`, `w0`, `z0` against its `eps`.
pub fn make_initial(
    grid: Arc<GridSpec>,
    profile: &Profile,
    cert: Option<&SmallnessCertificate>,
) -> Result<InitialData, ModelError> {
    let data = match profile {
        Profile::Constant { u, v, w, z } => InitialData::from_fields(
            ScalarField::constant(grid.clone(), *u),
            ScalarField::constant(grid.clone(), *v),
            ScalarField::constant(grid.clone(), *w),
            ScalarField::constant(grid.clone(), *z),
        )?,
        Profile::Bump { base, amp } => {
            if let Some(i) = amp.iter().position(|&a| !(a >= 0.0)) {
                return Err(ModelError::InitialData {
                    field: ["u0", "v0", "w0", "z0"][i],
                    requirement: "a nonnegative bump amplitude".into(),
                    value: amp[i],
                });
            }
            let bump = ScalarField::from_fn(grid.clone(), |x| cosine_bump(&grid, x));
            let field = |i: usize| bump.map(|p| base[i] + amp[i] * p);
            InitialData::from_fields(field(0), field(1), field(2), field(3))?
        }
        Profile::File { u, v, w, z } => {
            let read = |p: &PathBuf| -> Result<ScalarField, ModelError> {
                let f = std::fs::File::open(p).map_err(GridError::from)?;
                let field = ScalarField::read_dump(f)?;
                if **field.grid() != *grid {
                    return Err(ModelError::GridMismatch);
                }
                Ok(ScalarField::new(grid.clone(), field.into_values())?)
            };
            InitialData::from_fields(read(u)?, read(v)?, read(w)?, read(z)?)?
        }
    };
    if let Some(cert) = cert {
        data.check_small(cert.eps)?;
    }
    Ok(data)
}
