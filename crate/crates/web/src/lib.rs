//! Browser bindings: a certificate and envelope explorer, an `eps` map over
//! `(beta, u0)` and a live 1D run. Every export is a plain Rust function so the
//! native test suite exercises the same code the page calls.

// `!(x > 0.0)` rejects NaN inputs from the page as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use virodyn_core::envelopes::{b_envelope, underline_a, v_envelope, z_envelope, z_hat};
use virodyn_core::grid::make_grid;
use virodyn_core::model::{
    find_certificate, make_initial, ModelParams, Profile, SearchOptions, SmallnessCertificate, U0Bounds,
};
use virodyn_core::stepper::{run, SimState, StepControl};

/// Columns of one row returned by [`Certificate::envelopes`].
pub const ENVELOPE_COLUMNS: usize = 6;

#[wasm_bindgen]
pub struct Certificate {
    inner: SmallnessCertificate,
    mu: f64,
    beta: f64,
    u0_min: f64,
}

#[wasm_bindgen]
impl Certificate {
    pub fn valid(&self) -> bool {
        self.inner.valid
    }

    pub fn eps(&self) -> f64 {
        self.inner.eps
    }

    pub fn delta(&self) -> f64 {
        self.inner.delta
    }

    pub fn k(&self) -> f64 {
        self.inner.k
    }

    pub fn a_star(&self) -> f64 {
        self.inner.a_star
    }

    pub fn eta(&self) -> f64 {
        self.inner.eta
    }

    /// Empty when valid.
    pub fn violation(&self) -> String {
        self.inner.violation.as_ref().map_or(String::new(), |v| v.to_string())
    }

    /// Rows `t, underline_a, v_env, b_env, z_hat, z_env` on `samples` uniform
    /// times in `[0, t_end]`, for data with `min a0 = min u0` and `max z0 = eps/2`.
    /// Empty for an invalid certificate.
    pub fn envelopes(&self, t_end: f64, samples: usize) -> Vec<f64> {
        let c = &self.inner;
        if !c.valid || samples < 2 || !(t_end > 0.0) {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(samples * ENVELOPE_COLUMNS);
        for i in 0..samples {
            let t = t_end * i as f64 / (samples - 1) as f64;
            out.extend([
                t,
                underline_a(t, self.mu, c.eps, c.delta, self.u0_min).unwrap_or(f64::NAN),
                v_envelope(t, c.eps, c.a_star),
                b_envelope(t, c.k, c.eps, c.delta),
                z_hat(t, 0.5 * c.eps, c.a_star, self.beta, c.k, c.eps, c.delta),
                z_envelope(t, c.eps, c.delta),
            ]);
        }
        out
    }
}

/// Searches a smallness certificate for the given parameters and `u0` range.
#[wasm_bindgen]
pub fn certify(beta: f64, mu: f64, u0_min: f64, u0_max: f64) -> Result<Certificate, String> {
    let params = ModelParams::new(mu, beta, 1.0).map_err(|e| e.to_string())?;
    let u0 = U0Bounds::new(u0_min, u0_max).map_err(|e| e.to_string())?;
    Ok(Certificate { inner: find_certificate(&params, u0, &SearchOptions::default()), mu, beta, u0_min })
}

/// `log10 eps` of the certificate for constant `u0 = m`, row-major over
/// `m` (rows) and `beta` (columns); NaN where no certificate exists.
#[wasm_bindgen]
pub fn eps_map(mu: f64, beta_lo: f64, beta_hi: f64, n_beta: usize, m_lo: f64, m_hi: f64, n_m: usize) -> Vec<f64> {
    // A coarser search keeps a full map interactive.
    let opts = SearchOptions { delta_points: 60, bisection_steps: 60, ..SearchOptions::default() };
    let axis = |lo: f64, hi: f64, n: usize, i: usize| if n < 2 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let mut out = Vec::with_capacity(n_beta * n_m);
    for j in 0..n_m {
        let m = axis(m_lo, m_hi, n_m, j);
        for i in 0..n_beta {
            let beta = axis(beta_lo, beta_hi, n_beta, i);
            let cell = match (ModelParams::new(mu, beta, 1.0), U0Bounds::new(m, m)) {
                (Ok(p), Ok(u0)) => {
                    let c = find_certificate(&p, u0, &opts);
                    if c.valid {
                        c.eps.log10()
                    } else {
                        f64::NAN
                    }
                }
                _ => f64::NAN,
            };
            out.push(cell);
        }
    }
    out
}

/// A 1D run on `[0, 16]` from `u0 = 1 + amp bump` and `v0 = w0 = z0 = eps/2 bump`.
#[wasm_bindgen]
pub struct Simulation {
    state: SimState,
    params: ModelParams,
    ctl: StepControl,
    eps: f64,
    delta: f64,
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(cells: usize, beta: f64, mu: f64, u0_amp: f64) -> Result<Simulation, String> {
        let params = ModelParams::new(mu, beta, 1.0).map_err(|e| e.to_string())?;
        if !(u0_amp >= 0.0) {
            return Err(format!("u0 amplitude must be nonnegative, got {u0_amp}"));
        }
        let u0 = U0Bounds::new(1.0, 1.0 + u0_amp).map_err(|e| e.to_string())?;
        let cert = find_certificate(&params, u0, &SearchOptions::default());
        if !cert.valid {
            let why = cert.violation.as_ref().map_or(String::new(), |v| v.to_string());
            return Err(format!("no smallness certificate: {why}"));
        }
        let grid = Arc::new(make_grid(1, &[16.0], &[cells]).map_err(|e| e.to_string())?);
        let half = 0.5 * cert.eps;
        let profile = Profile::Bump { base: [1.0, 0.0, 0.0, 0.0], amp: [u0_amp, half, half, half] };
        let data = make_initial(grid, &profile, Some(&cert)).map_err(|e| e.to_string())?;
        Ok(Simulation {
            state: SimState::from_initial(&data),
            params,
            ctl: StepControl::default(),
            eps: cert.eps,
            delta: cert.delta,
        })
    }

    /// Integrates for `dt` more time units.
    pub fn advance(&mut self, dt: f64) -> Result<(), String> {
        if !(dt > 0.0) {
            return Err(format!("advance needs a positive interval, got {dt}"));
        }
        let t_end = self.state.t + dt;
        let mut none = |_: &SimState| {};
        let summary = run(self.state.clone(), &self.params, &self.ctl, t_end, dt, &mut none).map_err(|e| e.to_string())?;
        self.state = summary.final_state;
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Cell centres.
    pub fn x(&self) -> Vec<f64> {
        let g = self.state.grid();
        (0..g.n_cells()).map(|i| g.cell_center(i)[0]).collect()
    }

    pub fn u(&self) -> Vec<f64> {
        self.state.u().into_values()
    }

    pub fn v(&self) -> Vec<f64> {
        self.state.v.values().to_vec()
    }

    pub fn w(&self) -> Vec<f64> {
        self.state.w().into_values()
    }

    pub fn z(&self) -> Vec<f64> {
        self.state.z.values().to_vec()
    }

    pub fn sup_u_minus_1(&self) -> f64 {
        self.state.u().values().iter().fold(0.0, |m, u| m.max((u - 1.0).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certificate_rows_and_bounds() {
        let c = certify(1.2, 1.0, 1.0, 1.0).unwrap();
        assert!(c.valid() && c.violation().is_empty());
        let rows = c.envelopes(100.0, 11);
        assert_eq!(rows.len(), 11 * ENVELOPE_COLUMNS);
        for r in rows.chunks(ENVELOPE_COLUMNS) {
            assert!(r[1] >= c.a_star() - 1e-9, "{r:?}");
            assert!(r[4] <= r[5], "{r:?}");
        }
        let bad = certify(2.0, 1.0, 1.0, 1.0).unwrap();
        assert!(!bad.valid() && bad.envelopes(10.0, 5).is_empty());
        assert!(bad.violation().starts_with("threshold"));
        assert!(certify(1.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn map_marks_failing_cells() {
        let m = eps_map(1.0, 0.5, 2.0, 4, 1.0, 1.0, 1);
        assert_eq!(m.len(), 4);
        assert!(m[0].is_finite() && m[0] < 0.0);
        assert!(m[3].is_nan());
    }

    #[test]
    fn simulation_relaxes_toward_one() {
        let mut s = Simulation::new(64, 1.0, 1.0, 0.3).unwrap();
        let start = s.sup_u_minus_1();
        assert_eq!(s.u().len(), 64);
        for _ in 0..20 {
            s.advance(1.0).unwrap();
        }
        assert!((s.time() - 20.0).abs() < 1e-9);
        assert!(s.sup_u_minus_1() < 0.1 * start);
        assert!(s.v().iter().chain(&s.w()).chain(&s.z()).all(|&x| x >= 0.0));
        assert!(s.advance(-1.0).is_err());
        assert!(Simulation::new(64, 2.0, 1.0, 0.0).is_err());
    }
}
