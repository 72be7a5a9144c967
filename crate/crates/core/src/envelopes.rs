//! Closed-form sub- and super-solution envelopes for the small-data regime,
//! and a classical RK4 integrator used as an independent oracle for them.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{InitialData, ModelParams, SmallnessCertificate};

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("need mu > sqrt(eps), got mu = {mu}, sqrt(eps) = {sqrt_eps}")]
    GrowthNotPositive { mu: f64, sqrt_eps: f64 },
    #[error("need mu > eps*e, got mu = {mu}, eps*e = {eps_e}")]
    CapacityNotPositive { mu: f64, eps_e: f64 },
    #[error("initial value must be positive, got {0}")]
    NonPositiveInitial(f64),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("oracle state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("certificate is not valid")]
    InvalidCertificate,
}

/// Relative tolerance of the adaptive quadrature inside [`underline_a`].
pub const QUAD_TOL: f64 = 1e-10;
/// Maximum bisection depth of the adaptive quadrature.
pub const QUAD_MAX_DEPTH: u32 = 20;

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    // A crude magnitude estimate turns the relative tolerance into an absolute one.
    let scale = whole.abs().max((b - a) * fa.abs().max(fb.abs()).max(fm.abs())).max(f64::MIN_POSITIVE);
    recurse(f, a, b, fa, fm, fb, whole, tol * scale, max_depth)
}

/// Solution of `y' = (mu - sqrt(eps) e^{-delta t}) y - mu e^eps y^2`, `y(0) = y0`,
/// through its integrating-factor form. Written with `P(s) - P(t)` in the
/// exponent so that long horizons do not overflow.
pub fn underline_a(t: f64, mu: f64, eps: f64, delta: f64, y0: f64) -> Result<f64, EnvelopeError> {
    let se = eps.sqrt();
    if !(mu > se) {
        return Err(EnvelopeError::GrowthNotPositive { mu, sqrt_eps: se });
    }
    if !(y0 > 0.0) {
        return Err(EnvelopeError::NonPositiveInitial(y0));
    }
    if t <= 0.0 {
        return Ok(y0);
    }
    let decay_term = |s: f64| if eps == 0.0 { 0.0 } else { se / delta * ((-delta * s).exp() - 1.0) };
    let p = |s: f64| mu * s + decay_term(s);
    let pt = p(t);
    let integrand = |s: f64| (p(s) - pt).exp();
    // Split the horizon so the integrand's boundary layer near s = t is resolved
    // within the depth limit.
    let pieces = ((t * mu).ceil() as usize).clamp(1, 100_000);
    let width = t / pieces as f64;
    let integral: f64 = (0..pieces)
        .map(|i| {
            let lo = i as f64 * width;
            let hi = if i + 1 == pieces { t } else { lo + width };
            adaptive_simpson(&integrand, lo, hi, QUAD_TOL, QUAD_MAX_DEPTH)
        })
        .sum();
    Ok(1.0 / ((-pt).exp() / y0 + mu * eps.exp() * integral))
}

/// `eps e^{-a* t}`, the upper envelope of `v`.
pub fn v_envelope(t: f64, eps: f64, a_star: f64) -> f64 {
    eps * (-a_star * t).exp()
}

/// Logistic solution of `phi' = (eps e + mu) phi - (mu - eps e) phi^2`, `phi(0) = u0_max`.
pub fn phi(t: f64, mu: f64, eps: f64, u0_max: f64) -> Result<f64, EnvelopeError> {
    let ee = eps * std::f64::consts::E;
    if !(mu > ee) {
        return Err(EnvelopeError::CapacityNotPositive { mu, eps_e: ee });
    }
    if !(u0_max > 0.0) {
        return Err(EnvelopeError::NonPositiveInitial(u0_max));
    }
    let (r, q) = (ee + mu, mu - ee);
    Ok(r * u0_max / (q * u0_max + (r - q * u0_max) * (-r * t).exp()))
}

/// `max(u0_max, 2)`, the upper bound of `a`.
pub fn a_upper(u0_max: f64) -> f64 {
    u0_max.max(2.0)
}

/// `K sqrt(eps) e^{-delta t}`, the upper envelope of `b`.
pub fn b_envelope(t: f64, k: f64, eps: f64, delta: f64) -> f64 {
    k * eps.sqrt() * (-delta * t).exp()
}

/// Duhamel solution of `y' = -(a* + 1) y + beta K sqrt(eps) e^eps e^{-delta t}`,
/// `y(0) = z0_max`.
pub fn z_hat(t: f64, z0_max: f64, a_star: f64, beta: f64, k: f64, eps: f64, delta: f64) -> f64 {
    let lam = a_star + 1.0;
    let forcing = beta * k * eps.sqrt() * eps.exp();
    z0_max * (-lam * t).exp() + forcing / (lam - delta) * ((-delta * t).exp() - (-lam * t).exp())
}

/// `(sqrt(eps) - eps/2) e^{-delta t}`, the envelope that `z_hat` must stay under.
pub fn z_envelope(t: f64, eps: f64, delta: f64) -> f64 {
    (eps.sqrt() - 0.5 * eps) * (-delta * t).exp()
}

/// All envelopes for one certified run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSet {
    pub cert: SmallnessCertificate,
    pub mu: f64,
    pub beta: f64,
    pub u0_min: f64,
    pub u0_max: f64,
    pub z0_max: f64,
    /// `min a0 = min u0 e^{-v0}`, the start of the lower `a` envelope.
    pub a0_min: f64,
}

impl EnvelopeSet {
    pub fn new(cert: &SmallnessCertificate, params: &ModelParams, data: &InitialData) -> Result<Self, EnvelopeError> {
        if !cert.valid {
            return Err(EnvelopeError::InvalidCertificate);
        }
        let a0_min = data
            .u0
            .values()
            .iter()
            .zip(data.v0.values())
            .map(|(u, v)| u * (-v).exp())
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            cert: cert.clone(),
            mu: params.mu,
            beta: params.beta,
            u0_min: data.u0_min,
            u0_max: data.u0_max,
            z0_max: data.z0_max,
            a0_min,
        })
    }

    pub fn underline_a(&self, t: f64) -> f64 {
        underline_a(t, self.mu, self.cert.eps, self.cert.delta, self.a0_min).unwrap_or(f64::NAN)
    }

    pub fn v_env(&self, t: f64) -> f64 {
        v_envelope(t, self.cert.eps, self.cert.a_star)
    }

    pub fn a_upper(&self) -> f64 {
        a_upper(self.u0_max)
    }

    pub fn b_env(&self, t: f64) -> f64 {
        b_envelope(t, self.cert.k, self.cert.eps, self.cert.delta)
    }

    pub fn z_hat(&self, t: f64) -> f64 {
        let c = &self.cert;
        z_hat(t, self.z0_max, c.a_star, self.beta, c.k, c.eps, c.delta)
    }

    /// `(sqrt(eps) - eps/2) e^{-delta t}`; sits below the `sqrt(eps) e^{-delta t}`
    /// bound that defines the small-data regime.
    pub fn z_env(&self, t: f64) -> f64 {
        z_envelope(t, self.cert.eps, self.cert.delta)
    }

    /// `C (t + 1) e^{-2 a* t}`.
    pub fn grad_v_env(&self, t: f64, c: f64) -> f64 {
        c * (t + 1.0) * (-2.0 * self.cert.a_star * t).exp()
    }

    /// CSV with columns `t,underline_a,v_env,a_upper,b_env,z_hat,z_env`.
    pub fn to_csv(&self, times: &[f64]) -> String {
        let mut s = String::from("t,underline_a,v_env,a_upper,b_env,z_hat,z_env\n");
        for &t in times {
            writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t,
                self.underline_a(t),
                self.v_env(t),
                self.a_upper(),
                self.b_env(t),
                self.z_hat(t),
                self.z_env(t)
            )
            .unwrap();
        }
        s
    }
}

/// Samples from an RK4 run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> (f64, &[f64]) {
        (*self.times.last().unwrap(), self.states.last().unwrap())
    }
}

fn rk4_step(rhs: &impl Fn(f64, &[f64], &mut [f64]), t: f64, y: &mut [f64], h: f64, work: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = work;
    let n = y.len();
    rhs(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    rhs(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    rhs(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    rhs(t + h, tmp, k4);
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates `y' = rhs(t, y)` from `t0`, returning the state at each of the
/// (ascending) `times`. Steps of `dt` are shortened to land on every requested
/// time exactly.
pub fn rk4_at(
    rhs: impl Fn(f64, &[f64], &mut [f64]),
    y0: &[f64],
    t0: f64,
    times: &[f64],
    dt: f64,
) -> Result<Vec<Vec<f64>>, EnvelopeError> {
    if !(dt > 0.0) {
        return Err(EnvelopeError::BadStep(dt));
    }
    let n = y0.len();
    let mut work = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(times.len());
    let mut step = 0u64;
    let mut t = t0;
    for &target in times {
        loop {
            // Step boundaries sit at t0 + k dt to avoid drift.
            let next_grid = t0 + (step + 1) as f64 * dt;
            if t >= target {
                break;
            }
            let (t_next, on_grid) = if next_grid < target { (next_grid, true) } else { (target, next_grid == target) };
            rk4_step(&rhs, t, &mut y, t_next - t, &mut work);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(EnvelopeError::NonFinite(t_next));
            }
            t = t_next;
            if on_grid {
                step += 1;
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Classical RK4 from `t = 0` to `t_end`, sampled at every multiple of `dt`
/// (and at `t_end`).
pub fn rk4_oracle(
    rhs: impl Fn(f64, &[f64], &mut [f64]),
    y0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, EnvelopeError> {
    if !(dt > 0.0) {
        return Err(EnvelopeError::BadStep(dt));
    }
    let steps = (t_end / dt).floor() as usize;
    let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    if *times.last().unwrap() < t_end {
        times.push(t_end);
    }
    let states = rk4_at(rhs, y0, 0.0, &times, dt)?;
    Ok(Trajectory { times, states })
}
