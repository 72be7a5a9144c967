//! Norms, Lyapunov-type functionals, exponential-rate fitting and envelope
//! compliance over recorded trajectories.

use std::fmt::Write as _;

use thiserror::Error;

use crate::envelopes::EnvelopeSet;
use crate::grid::{cell_gradient, ScalarField};
use crate::stepper::SimState;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("exponent p must be >= 1, got {0}")]
    BadExponent(f64),
    #[error("energy needs a > 0 everywhere, found {0}")]
    NonPositiveDensity(f64),
    #[error("need at least {need} positive samples in the fit window, found {found}")]
    TooFewSamples { need: usize, found: usize },
    #[error("window fraction must lie in (0, 1], got {0}")]
    BadWindow(f64),
}

/// Minimum number of positive samples [`fit_decay`] accepts.
pub const MIN_FIT_SAMPLES: usize = 8;

pub fn sup_norm(f: &ScalarField) -> f64 {
    f.max_abs()
}

/// `(sum |f_i|^p * cell volume)^{1/p}`.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64, DiagnosticsError> {
    if !(p >= 1.0) {
        return Err(DiagnosticsError::BadExponent(p));
    }
    if p.is_infinite() {
        return Ok(sup_norm(f));
    }
    // Scaled by the maximum so that |f|^p cannot underflow or overflow.
    let scale = f.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return Ok(scale);
    }
    let sum: f64 = if p == 2.0 {
        f.values().iter().map(|x| (x / scale).powi(2)).sum()
    } else {
        f.values().iter().map(|x| (x.abs() / scale).powf(p)).sum()
    };
    Ok(scale * (sum * f.grid().cell_volume()).powf(1.0 / p))
}

/// `(x^p + y^p)^{1/p}` for `x, y >= 0` without underflow.
fn lp_pair(x: f64, y: f64, p: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if hi == 0.0 {
        return 0.0;
    }
    hi * (1.0 + (lo / hi).powf(p)).powf(1.0 / p)
}

/// Magnitude of the cell-averaged face gradient.
pub fn gradient_magnitude(f: &ScalarField) -> ScalarField {
    let comps = cell_gradient(f);
    let mag = (0..f.len()).map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).collect();
    ScalarField::new(f.grid().clone(), mag).expect("length matches grid")
}

pub fn grad_lp_norm(f: &ScalarField, p: f64) -> Result<f64, DiagnosticsError> {
    lp_norm(&gradient_magnitude(f), p)
}

/// `(||f||_p^p + ||grad f||_p^p)^{1/p}`.
pub fn w1p_norm(f: &ScalarField, p: f64) -> Result<f64, DiagnosticsError> {
    Ok(lp_pair(lp_norm(f, p)?, grad_lp_norm(f, p)?, p))
}

/// `integral of |grad v|^2`.
pub fn dirichlet_energy(v: &ScalarField) -> f64 {
    grad_lp_norm(v, 2.0).expect("p = 2 is admissible").powi(2)
}

/// `integral of e^v (a - 1 - ln a)`.
pub fn energy_log(state: &SimState) -> Result<f64, DiagnosticsError> {
    let min_a = state.a.min();
    if !(min_a > 0.0) {
        return Err(DiagnosticsError::NonPositiveDensity(min_a));
    }
    let sum: f64 = state
        .a
        .values()
        .iter()
        .zip(state.v.values())
        .map(|(&a, &v)| {
            let d = a - 1.0;
            v.exp() * (d - d.ln_1p())
        })
        .sum();
    Ok(sum * state.a.grid().cell_volume())
}

/// Norm diagnostics at one observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRecord {
    pub t: f64,
    pub sup_u_minus_1: f64,
    pub lp_u_minus_1: f64,
    pub sup_v: f64,
    pub grad_v_l2: f64,
    pub grad_v_l4: f64,
    pub grad_v_l5: f64,
    pub w14_v: f64,
    pub sup_w: f64,
    pub sup_z: f64,
    pub energy_log: f64,
    pub min_a: f64,
    pub max_a: f64,
    pub max_b: f64,
}

pub const SERIES_HEADER: &str = "t,sup_u_minus_1,l2_u_minus_1,sup_v,grad_v_l2,grad_v_l4,grad_v_l5,sup_w,sup_z,energy_log,min_a,max_a,max_b";

impl NormRecord {
    /// Measures `state`; `p` selects the `L^p` norm of `u - 1`.
    pub fn measure(state: &SimState, p: f64) -> Result<Self, DiagnosticsError> {
        let u_minus_1 = state.u().map(|u| u - 1.0);
        let grad = gradient_magnitude(&state.v);
        let grad_v_l4 = lp_norm(&grad, 4.0)?;
        let v_l4 = lp_norm(&state.v, 4.0)?;
        Ok(Self {
            t: state.t,
            sup_u_minus_1: sup_norm(&u_minus_1),
            lp_u_minus_1: lp_norm(&u_minus_1, p)?,
            sup_v: sup_norm(&state.v),
            grad_v_l2: lp_norm(&grad, 2.0)?,
            grad_v_l4,
            grad_v_l5: lp_norm(&grad, 5.0)?,
            w14_v: lp_pair(v_l4, grad_v_l4, 4.0),
            sup_w: sup_norm(&state.w()),
            sup_z: sup_norm(&state.z),
            energy_log: energy_log(state)?,
            min_a: state.a.min(),
            max_a: state.a.max(),
            max_b: state.b.max(),
        })
    }

    pub fn csv_row(&self) -> String {
        let cols = [
            self.t,
            self.sup_u_minus_1,
            self.lp_u_minus_1,
            self.sup_v,
            self.grad_v_l2,
            self.grad_v_l4,
            self.grad_v_l5,
            self.sup_w,
            self.sup_z,
            self.energy_log,
            self.min_a,
            self.max_a,
            self.max_b,
        ];
        let mut s = String::with_capacity(cols.len() * 24);
        for (i, c) in cols.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{c:.16e}").unwrap();
        }
        s
    }
}

pub fn series_csv(records: &[NormRecord]) -> String {
    let mut s = String::from(SERIES_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Least-squares fit of `log value = log_amplitude - rate * t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub log_amplitude: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Fits an exponential to the trailing `window_fraction` of the series'
/// time span, using only strictly positive samples.
pub fn fit_decay(series: &[(f64, f64)], window_fraction: f64) -> Result<DecayFit, DiagnosticsError> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(DiagnosticsError::BadWindow(window_fraction));
    }
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return Err(DiagnosticsError::TooFewSamples { need: MIN_FIT_SAMPLES, found: 0 });
    };
    let t_lo = first.0 + (last.0 - first.0) * (1.0 - window_fraction);
    let pts: Vec<(f64, f64)> =
        series.iter().filter(|(t, y)| *t >= t_lo && *y > 0.0 && y.is_finite()).map(|&(t, y)| (t, y.ln())).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(DiagnosticsError::TooFewSamples { need: MIN_FIT_SAMPLES, found: pts.len() });
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &pts {
        let (dt, dy) = (t - tm, y - ym);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let ss_res: f64 = pts.iter().map(|&(t, y)| (y - intercept - slope * t).powi(2)).sum();
    // A flat series is fitted exactly.
    let r_squared = if syy <= f64::EPSILON * ym.abs().max(1.0) * n { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(DecayFit {
        rate: -slope,
        log_amplitude: intercept,
        r_squared,
        window: (pts[0].0, pts[pts.len() - 1].0),
        samples: pts.len(),
    })
}

/// Worst-case ratio of one monitored quantity to its envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRatio {
    pub ratio: f64,
    pub at: f64,
}

impl EnvelopeRatio {
    fn new() -> Self {
        Self { ratio: 0.0, at: f64::NAN }
    }

    fn update(&mut self, ratio: f64, t: f64) {
        if ratio > self.ratio || ratio.is_nan() {
            self.ratio = ratio;
            self.at = t;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    /// `max_t a* / min a(t)`.
    pub r_a: EnvelopeRatio,
    /// `max_t sup v(t) / v_env(t)`.
    pub r_v: EnvelopeRatio,
    /// `max_t max a(t) / a_upper`.
    pub r_amax: EnvelopeRatio,
    /// `max_t max b(t) / b_env(t)`.
    pub r_b: EnvelopeRatio,
    /// `max_t sup z(t) / z_env(t)`.
    pub r_z: EnvelopeRatio,
    pub tol: f64,
    pub pass: bool,
}

impl EnvelopeReport {
    pub fn entries(&self) -> [(&'static str, EnvelopeRatio); 5] {
        [("r_a", self.r_a), ("r_v", self.r_v), ("r_amax", self.r_amax), ("r_b", self.r_b), ("r_z", self.r_z)]
    }

    /// Names and times of the envelopes that fail.
    pub fn violations(&self) -> Vec<(&'static str, EnvelopeRatio)> {
        self.entries().into_iter().filter(|(_, r)| !(r.ratio <= 1.0 + self.tol)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("envelope,worst_ratio,at_t,pass\n");
        for (name, r) in self.entries() {
            writeln!(s, "{name},{:.16e},{:.16e},{}", r.ratio, r.at, r.ratio <= 1.0 + self.tol).unwrap();
        }
        s
    }
}

pub fn envelope_report(records: &[NormRecord], env: &EnvelopeSet, tol: f64) -> EnvelopeReport {
    let mut r = EnvelopeReport {
        r_a: EnvelopeRatio::new(),
        r_v: EnvelopeRatio::new(),
        r_amax: EnvelopeRatio::new(),
        r_b: EnvelopeRatio::new(),
        r_z: EnvelopeRatio::new(),
        tol,
        pass: false,
    };
    let a_upper = env.a_upper();
    for rec in records {
        let t = rec.t;
        r.r_a.update(env.cert.a_star / rec.min_a, t);
        r.r_v.update(rec.sup_v / env.v_env(t), t);
        r.r_amax.update(rec.max_a / a_upper, t);
        r.r_b.update(rec.max_b / env.b_env(t), t);
        r.r_z.update(rec.sup_z / env.z_env(t), t);
    }
    r.pass = r.violations().is_empty();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::{ModelParams, SmallnessCertificate};
    use std::sync::Arc;

    fn grid1(n: usize, l: f64) -> Arc<crate::grid::GridSpec> {
        Arc::new(make_grid(1, &[l], &[n]).unwrap())
    }

    #[test]
    fn lp_norm_examples() {
        let f = ScalarField::constant(Arc::new(make_grid(2, &[1.0, 1.0], &[4, 4]).unwrap()), -3.0);
        for p in [1.0, 2.0, 3.5, 5.0] {
            assert!((lp_norm(&f, p).unwrap() - 3.0).abs() < 1e-14);
        }
        let mut g = ScalarField::constant(grid1(8, 2.0), 0.0);
        g.values_mut()[3] = 1.0;
        for p in [1.0, 2.0, 4.0] {
            assert!((lp_norm(&g, p).unwrap() - 0.25f64.powf(1.0 / p)).abs() < 1e-15);
        }
        assert!(lp_norm(&g, 0.5).is_err());
        assert_eq!(lp_norm(&g, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn gradient_norms() {
        let g = grid1(10, 1.0);
        assert_eq!(grad_lp_norm(&ScalarField::constant(g.clone(), 4.0), 2.0).unwrap(), 0.0);
        let lin = ScalarField::from_fn(g.clone(), |x| 3.0 * x[0]);
        let mag = gradient_magnitude(&lin);
        assert!((mag.values()[4] - 3.0).abs() < 1e-12);
        assert!((mag.values()[0] - 1.5).abs() < 1e-12);
        // interior slope 3 on 8 of 10 cells, 1.5 on the two wall cells
        let want = (9.0 * 0.8 + 2.25 * 0.2f64).sqrt();
        assert!((grad_lp_norm(&lin, 2.0).unwrap() - want).abs() < 1e-12);
        let w = w1p_norm(&lin, 4.0).unwrap();
        let manual = (lp_norm(&lin, 4.0).unwrap().powi(4) + grad_lp_norm(&lin, 4.0).unwrap().powi(4)).powf(0.25);
        assert!((w - manual).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_energy_of_linear_field() {
        let mut prev_err = f64::INFINITY;
        for n in [16, 32, 64] {
            let v = ScalarField::from_fn(grid1(n, 1.0), |x| x[0]);
            let e = dirichlet_energy(&v);
            let h = 1.0 / n as f64;
            assert!((e - (1.0 - 1.5 * h)).abs() < 1e-12);
            assert!((e - 1.0).abs() < prev_err);
            prev_err = (e - 1.0).abs();
            assert!((e - grad_lp_norm(&v, 2.0).unwrap().powi(2)).abs() < 1e-12);
        }
        assert_eq!(dirichlet_energy(&ScalarField::constant(grid1(4, 1.0), 2.0)), 0.0);
    }

    fn state(a: f64, v: f64) -> SimState {
        let g = grid1(4, 1.0);
        SimState {
            t: 0.0,
            a: ScalarField::constant(g.clone(), a),
            v: ScalarField::constant(g.clone(), v),
            b: ScalarField::constant(g.clone(), 0.0),
            z: ScalarField::constant(g, 0.0),
        }
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_log(&state(1.0, 0.0)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((energy_log(&state(e, 0.0)).unwrap() - (e - 2.0)).abs() < 1e-14);
        assert!(energy_log(&state(0.3, 0.2)).unwrap() > 0.0);
        assert!(energy_log(&state(0.0, 0.0)).is_err());
    }

    #[test]
    fn fit_examples() {
        let exact: Vec<(f64, f64)> = (0..100).map(|i| {
            let t = i as f64 * 0.1;
            (t, (-2.0 * t).exp())
        }).collect();
        let fit = fit_decay(&exact, 0.5).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let poly: Vec<(f64, f64)> = (0..=100).map(|i| {
            let t = i as f64 * 0.1;
            (t, (1.0 + t) * (-2.0 * t).exp())
        }).collect();
        let fit = fit_decay(&poly, 0.5).unwrap();
        assert_eq!(fit.window, (5.0, 10.0));
        assert!(fit.rate > 1.8 && fit.rate < 2.0, "{}", fit.rate);

        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.3)).collect();
        let fit = fit_decay(&flat, 0.5).unwrap();
        assert!(fit.rate.abs() < 1e-12);

        let zeros: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, if i < 15 { 1.0 } else { 0.0 })).collect();
        assert!(matches!(fit_decay(&zeros, 0.5), Err(DiagnosticsError::TooFewSamples { .. })));
    }

    fn cert() -> SmallnessCertificate {
        let p = ModelParams::new(1.0, 1.2, 1.0).unwrap();
        crate::model::find_certificate(&p, crate::model::U0Bounds::new(1.0, 1.0).unwrap(), &Default::default())
    }

    #[test]
    fn equilibrium_envelope_report() {
        let p = ModelParams::new(1.0, 1.2, 1.0).unwrap();
        let g = grid1(4, 1.0);
        let data = crate::model::make_initial(
            g,
            &crate::model::Profile::Constant { u: 1.0, v: 0.0, w: 0.0, z: 0.0 },
            None,
        )
        .unwrap();
        let c = cert();
        let env = EnvelopeSet::new(&c, &p, &data).unwrap();
        let records: Vec<NormRecord> = (0..5)
            .map(|i| {
                let mut s = state(1.0, 0.0);
                s.t = i as f64;
                NormRecord::measure(&s, 2.0).unwrap()
            })
            .collect();
        let rep = envelope_report(&records, &env, 0.02);
        assert!(rep.pass);
        assert_eq!((rep.r_v.ratio, rep.r_b.ratio, rep.r_z.ratio), (0.0, 0.0, 0.0));
        assert_eq!(rep.r_a.ratio, c.a_star);

        let mut bad = records.clone();
        bad[3].sup_z = 2.0 * env.z_env(3.0);
        let rep = envelope_report(&bad, &env, 0.02);
        assert!(!rep.pass);
        let v = rep.violations();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].0, v[0].1.at), ("r_z", 3.0));
    }

    #[test]
    fn series_csv_layout() {
        let rec = NormRecord::measure(&state(1.0, 0.0), 2.0).unwrap();
        let csv = series_csv(&[rec]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SERIES_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 13);
    }
}
