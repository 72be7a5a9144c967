//! Explicit time integration of the transformed system
//!
//! ```text
//! a_t = e^{-v} div(e^v grad a) + f(a, b, v, z)
//! b_t = e^{-v} div(e^v grad b) + g(a, b, v, z)
//! v_t = -(a + b) e^v v
//! z_t = D_z lap z - z - a e^v z + beta b e^v
//! ```
//!
//! and, as a cross-check, of the primitive `(u, v, w, z)` form. `a`, `b`, `z`
//! advance by forward Euler under a CFL bound; `v` is integrated exactly in
//! time with `a + b` frozen over the step.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{div_flux, laplacian, weighted_laplacian_exp, GridError, GridSpec, ScalarField};
use crate::model::{eval_f, eval_g, InitialData, ModelParams};

/// Values below `-NEGATIVITY_TOL` abort a step.
pub const NEGATIVITY_TOL: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("field {field} became negative ({value:e}) at t = {t}")]
    Negative { field: &'static str, value: f64, t: f64 },
    #[error("field {field} became non-finite at t = {t}")]
    NonFinite { field: &'static str, t: f64 },
    #[error("t_end {t_end} is before the current time {t}")]
    BadHorizon { t: f64, t_end: f64 },
    #[error("observation interval must be positive, got {0}")]
    BadObserveEvery(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl StepError {
    /// Time at which the solver aborted, when known.
    pub fn time(&self) -> Option<f64> {
        match self {
            StepError::Negative { t, .. } | StepError::NonFinite { t, .. } => Some(*t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub a: ScalarField,
    pub v: ScalarField,
    pub b: ScalarField,
    pub z: ScalarField,
}

impl SimState {
    pub fn from_initial(data: &InitialData) -> Self {
        let a = data.u0.zip_map(&data.v0, |u, v| u * (-v).exp());
        let b = data.w0.zip_map(&data.v0, |w, v| w * (-v).exp());
        Self { t: 0.0, a, v: data.v0.clone(), b, z: data.z0.clone() }
    }

    /// Builds a state from primitive fields.
    pub fn from_primitive(t: f64, u: &ScalarField, v: ScalarField, w: &ScalarField, z: ScalarField) -> Self {
        let a = u.zip_map(&v, |u, v| u * (-v).exp());
        let b = w.zip_map(&v, |w, v| w * (-v).exp());
        Self { t, a, v, b, z }
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        self.a.grid()
    }

    /// `u = a e^v`.
    pub fn u(&self) -> ScalarField {
        self.a.zip_map(&self.v, |a, v| a * v.exp())
    }

    /// `w = b e^v`.
    pub fn w(&self) -> ScalarField {
        self.b.zip_map(&self.v, |b, v| b * v.exp())
    }

    pub fn fields(&self) -> [(&'static str, &ScalarField); 4] {
        [("a", &self.a), ("v", &self.v), ("b", &self.b), ("z", &self.z)]
    }

    /// Fails on any non-finite value or any value below `floor - NEGATIVITY_TOL`.
    pub fn check(&self, floor: f64) -> Result<(), StepError> {
        for (field, f) in self.fields() {
            for &x in f.values() {
                if !x.is_finite() {
                    return Err(StepError::NonFinite { field, t: self.t });
                }
                if x < floor - NEGATIVITY_TOL {
                    return Err(StepError::Negative { field, value: x, t: self.t });
                }
            }
        }
        Ok(())
    }

    /// Writes `a.dat`, `v.dat`, `b.dat`, `z.dat` and a `manifest.txt` holding `t=<time>`.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<(), StepError> {
        let io = |e: std::io::Error| StepError::Checkpoint(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        for (name, f) in self.fields() {
            fs::write(dir.join(format!("{name}.dat")), f.to_dump()).map_err(io)?;
        }
        fs::write(dir.join("manifest.txt"), format!("t={:.16e}\nfields=a.dat v.dat b.dat z.dat\n", self.t))
            .map_err(io)
    }

    pub fn read_checkpoint(dir: &Path) -> Result<Self, StepError> {
        let manifest =
            fs::read_to_string(dir.join("manifest.txt")).map_err(|e| StepError::Checkpoint(e.to_string()))?;
        let t = manifest
            .lines()
            .find_map(|l| l.strip_prefix("t="))
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| StepError::Checkpoint("manifest lacks a `t=` line".into()))?;
        let read = |name: &str| -> Result<ScalarField, StepError> {
            let f = fs::File::open(dir.join(format!("{name}.dat")))
                .map_err(|e| StepError::Checkpoint(e.to_string()))?;
            Ok(ScalarField::read_dump(f)?)
        };
        let a = read("a")?;
        let grid = a.grid().clone();
        let rebind = |name: &str| -> Result<ScalarField, StepError> {
            let f = read(name)?;
            if **f.grid() != *grid {
                return Err(GridError::GridMismatch.into());
            }
            Ok(ScalarField::new(grid.clone(), f.into_values())?)
        };
        let (v, b, z) = (rebind("v")?, rebind("b")?, rebind("z")?);
        Ok(Self { t, a, v, b, z })
    }
}

/// Time derivatives of the four fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub da: ScalarField,
    pub dv: ScalarField,
    pub db: ScalarField,
    pub dz: ScalarField,
}

fn z_rhs(z: &ScalarField, u: &[f64], w: &[f64], params: &ModelParams) -> ScalarField {
    let lz = laplacian(z);
    let vals = lz
        .values()
        .iter()
        .zip(z.values())
        .zip(u.iter().zip(w))
        .map(|((&l, &z), (&u, &w))| params.dz * l - z - u * z + params.beta * w)
        .collect();
    ScalarField::new(z.grid().clone(), vals).expect("same grid")
}

pub fn rhs_transformed(state: &SimState, params: &ModelParams) -> Derivatives {
    let ev: Vec<f64> = state.v.values().iter().map(|v| v.exp()).collect();
    let mut da = weighted_laplacian_exp(&state.a, &ev);
    let mut db = weighted_laplacian_exp(&state.b, &ev);
    let (av, bv, vv, zv) = (state.a.values(), state.b.values(), state.v.values(), state.z.values());
    for i in 0..av.len() {
        da.values_mut()[i] += eval_f(av[i], bv[i], vv[i], zv[i], params.mu);
        db.values_mut()[i] += eval_g(av[i], bv[i], vv[i], zv[i]);
    }
    let u: Vec<f64> = av.iter().zip(&ev).map(|(a, e)| a * e).collect();
    let w: Vec<f64> = bv.iter().zip(&ev).map(|(b, e)| b * e).collect();
    let dv = ScalarField::new(
        state.v.grid().clone(),
        vv.iter().zip(u.iter().zip(&w)).map(|(v, (u, w))| -(u + w) * v).collect(),
    )
    .expect("same grid");
    let dz = z_rhs(&state.z, &u, &w, params);
    Derivatives { da, dv, db, dz }
}

/// Primitive-variable derivatives `(du, dv, dw, dz)`.
pub fn rhs_primitive(
    u: &ScalarField,
    v: &ScalarField,
    w: &ScalarField,
    z: &ScalarField,
    params: &ModelParams,
) -> [ScalarField; 4] {
    let lu = laplacian(u);
    let lw = laplacian(w);
    let cu = div_flux(u, v);
    let cw = div_flux(w, v);
    let (uv, vv, wv, zv) = (u.values(), v.values(), w.values(), z.values());
    let n = uv.len();
    let mut du = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let mut dw = Vec::with_capacity(n);
    for i in 0..n {
        du.push(lu.values()[i] - cu.values()[i] + params.mu * uv[i] * (1.0 - uv[i]) - uv[i] * zv[i]);
        dv.push(-(uv[i] + wv[i]) * vv[i]);
        dw.push(lw.values()[i] - cw.values()[i] - wv[i] + uv[i] * zv[i]);
    }
    let g = u.grid().clone();
    let dz = z_rhs(z, uv, wv, params);
    [
        ScalarField::new(g.clone(), du).expect("same grid"),
        ScalarField::new(g.clone(), dv).expect("same grid"),
        ScalarField::new(g, dw).expect("same grid"),
        dz,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Transformed,
    Primitive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub safety: f64,
    pub dt_max: f64,
    pub scheme: Scheme,
    /// Lower bound each field must respect (minus [`NEGATIVITY_TOL`]).
    pub positivity_floor: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { safety: 0.4, dt_max: 0.05, scheme: Scheme::Transformed, positivity_floor: 0.0 }
    }
}

/// `safety * min(diffusive limit, reaction limit, dt_max)`.
pub fn stable_dt(state: &SimState, params: &ModelParams, ctl: &StepControl) -> f64 {
    let g = state.grid();
    let h = g.min_spacing();
    let max_ev = state.v.max().exp();
    let diffusive = h * h / (2.0 * g.dim() as f64 * max_ev.max(params.dz));
    let max_u = state
        .a
        .values()
        .iter()
        .zip(state.v.values())
        .fold(0.0f64, |m, (a, v)| m.max(a * v.exp()));
    let reaction = 1.0 / (params.mu * (1.0 + 2.0 * max_u) + state.z.max() + 1.0 + params.beta);
    ctl.safety * diffusive.min(reaction).min(ctl.dt_max)
}

/// One explicit step. `v` is advanced as `v exp(-(a + b) e^v dt)`.
pub fn step_euler(state: &SimState, dt: f64, params: &ModelParams, scheme: Scheme) -> Result<SimState, StepError> {
    let next = match scheme {
        Scheme::Transformed => {
            let d = rhs_transformed(state, params);
            let euler = |f: &ScalarField, df: &ScalarField| f.zip_map(df, |x, dx| x + dt * dx);
            let v = state.v.zip_map(&state.a.zip_map(&state.b, |a, b| a + b), |v, s| v * (-s * v.exp() * dt).exp());
            SimState { t: state.t + dt, a: euler(&state.a, &d.da), v, b: euler(&state.b, &d.db), z: euler(&state.z, &d.dz) }
        }
        Scheme::Primitive => {
            let (u, w) = (state.u(), state.w());
            let [du, _, dw, dz] = rhs_primitive(&u, &state.v, &w, &state.z, params);
            let u1 = u.zip_map(&du, |x, dx| x + dt * dx);
            let w1 = w.zip_map(&dw, |x, dx| x + dt * dx);
            let z1 = state.z.zip_map(&dz, |x, dx| x + dt * dx);
            let v1 = state.v.zip_map(&u.zip_map(&w, |u, w| u + w), |v, s| v * (-s * dt).exp());
            SimState::from_primitive(state.t + dt, &u1, v1, &w1, z1)
        }
    };
    next.check(0.0)?;
    Ok(next)
}

/// Hooks invoked by [`run`].
pub trait Observer {
    /// Called at every observation time.
    fn observe(&mut self, state: &SimState);

    /// Called after every step when [`Observer::wants_steps`] is true.
    fn after_step(&mut self, _prev: &SimState, _next: &SimState, _dt: f64) {}

    fn wants_steps(&self) -> bool {
        false
    }
}

impl<F: FnMut(&SimState)> Observer for F {
    fn observe(&mut self, state: &SimState) {
        self(state)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_state: SimState,
    pub steps: u64,
    pub observations: usize,
}

/// Integrates to `t_end`, calling the observer at `t0 + k * observe_every` and
/// at `t_end`. Steps are truncated so those times are hit exactly.
pub fn run(
    state0: SimState,
    params: &ModelParams,
    ctl: &StepControl,
    t_end: f64,
    observe_every: f64,
    observer: &mut impl Observer,
) -> Result<RunSummary, StepError> {
    if t_end < state0.t {
        return Err(StepError::BadHorizon { t: state0.t, t_end });
    }
    if !(observe_every > 0.0) {
        return Err(StepError::BadObserveEvery(observe_every));
    }
    state0.check(ctl.positivity_floor)?;
    let t0 = state0.t;
    let mut state = state0;
    let mut steps = 0u64;
    let mut observations = 1;
    observer.observe(&state);
    let mut k = 1u64;
    while state.t < t_end {
        let target = (t0 + k as f64 * observe_every).min(t_end);
        while state.t < target {
            let dt = stable_dt(&state, params, ctl).min(target - state.t);
            let mut next = step_euler(&state, dt, params, ctl.scheme)?;
            // Land exactly on the observation time.
            if target - next.t < 1e-12 * target.abs().max(1.0) {
                next.t = target;
            }
            if ctl.positivity_floor != 0.0 {
                next.check(ctl.positivity_floor)?;
            }
            if observer.wants_steps() {
                observer.after_step(&state, &next, dt);
            }
            state = next;
            steps += 1;
        }
        observer.observe(&state);
        observations += 1;
        k += 1;
    }
    Ok(RunSummary { final_state: state, steps, observations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, make_grid};

    fn grid1(n: usize, l: f64) -> Arc<GridSpec> {
        Arc::new(make_grid(1, &[l], &[n]).unwrap())
    }

    fn constant_state(g: &Arc<GridSpec>, a: f64, v: f64, b: f64, z: f64) -> SimState {
        SimState {
            t: 0.0,
            a: ScalarField::constant(g.clone(), a),
            v: ScalarField::constant(g.clone(), v),
            b: ScalarField::constant(g.clone(), b),
            z: ScalarField::constant(g.clone(), z),
        }
    }

    fn params() -> ModelParams {
        ModelParams::new(1.0, 1.2, 1.0).unwrap()
    }

    fn smooth_state(g: &Arc<GridSpec>) -> SimState {
        let pi = std::f64::consts::PI;
        let l = g.lengths()[0];
        let c = |x: [f64; 3]| (pi * x[0] / l).cos();
        SimState {
            t: 0.0,
            a: ScalarField::from_fn(g.clone(), |x| 1.0 + 0.2 * c(x)),
            v: ScalarField::from_fn(g.clone(), |x| 0.05 * (1.0 + c(x))),
            b: ScalarField::from_fn(g.clone(), |x| 0.02 * (1.0 - c(x))),
            z: ScalarField::from_fn(g.clone(), |x| 0.03 * (1.0 + c(x) * c(x))),
        }
    }

    #[test]
    fn equilibrium_has_zero_rhs() {
        let g = grid1(8, 1.0);
        let d = rhs_transformed(&constant_state(&g, 1.0, 0.0, 0.0, 0.0), &params());
        for f in [&d.da, &d.dv, &d.db, &d.dz] {
            assert!(f.values().iter().all(|&x| x == 0.0));
        }
        let one = ScalarField::constant(g.clone(), 1.0);
        let zero = ScalarField::constant(g, 0.0);
        for f in rhs_primitive(&one, &zero, &zero, &zero, &params()) {
            assert!(f.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn constant_state_reduces_to_ode() {
        let g = Arc::new(make_grid(2, &[1.0, 2.0], &[4, 5]).unwrap());
        let (a, v, b, z) = (0.7, 0.03, 0.1, 0.05);
        let p = params();
        let d = rhs_transformed(&constant_state(&g, a, v, b, z), &p);
        let ev = v.exp();
        let want = [
            eval_f(a, b, v, z, p.mu),
            -(a + b) * ev * v,
            eval_g(a, b, v, z),
            -z - a * ev * z + p.beta * b * ev,
        ];
        for (f, w) in [&d.da, &d.dv, &d.db, &d.dz].iter().zip(want) {
            assert!(f.values().iter().all(|&x| x == f.values()[0]));
            assert!((f.values()[0] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn z_rhs_integral_identity() {
        let g = grid1(32, 3.0);
        let s = smooth_state(&g);
        let p = params();
        let d = rhs_transformed(&s, &p);
        let uz = s.u().zip_map(&s.z, |u, z| u * z);
        let want = -integrate(&s.z) - integrate(&uz) + p.beta * integrate(&s.w());
        assert!((integrate(&d.dz) - want).abs() < 1e-13 * integrate(&s.z));
    }

    #[test]
    fn primitive_without_drive_is_reaction_diffusion() {
        let g = grid1(16, 2.0);
        let s = smooth_state(&g);
        let zero = ScalarField::constant(g.clone(), 0.0);
        let u = s.u();
        let p = params();
        let [du, ..] = rhs_primitive(&u, &zero, &s.b, &s.z, &p);
        let lu = laplacian(&u);
        for i in 0..16 {
            let (x, zz) = (u.values()[i], s.z.values()[i]);
            let want = lu.values()[i] + p.mu * x * (1.0 - x) - x * zz;
            assert!((du.values()[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn stable_dt_examples() {
        let g = grid1(10, 1.0);
        let s = constant_state(&g, 1e-3, 0.0, 0.0, 0.0);
        let ctl = StepControl::default();
        assert!((stable_dt(&s, &params(), &ctl) - 0.002).abs() < 1e-15);
        let g2 = grid1(20, 1.0);
        let s2 = constant_state(&g2, 1e-3, 0.0, 0.0, 0.0);
        assert!((stable_dt(&s2, &params(), &ctl) - 0.0005).abs() < 1e-15);
        let coarse = constant_state(&grid1(2, 100.0), 1.0, 0.0, 0.0, 0.0);
        assert_eq!(stable_dt(&coarse, &params(), &ctl), 0.4 * 0.05);
    }

    #[test]
    fn equilibrium_step_is_bitwise_fixed() {
        let g = grid1(8, 1.0);
        let s = constant_state(&g, 1.0, 0.0, 0.0, 0.0);
        let n = step_euler(&s, 0.01, &params(), Scheme::Transformed).unwrap();
        assert_eq!((n.a, n.v, n.b, n.z), (s.a, s.v, s.b, s.z));
    }

    #[test]
    fn homogeneous_step_matches_ode_step() {
        let g = grid1(6, 1.0);
        let (a, v, b, z) = (0.5, 0.01, 0.01, 0.01);
        let p = params();
        let dt = 0.01;
        let n = step_euler(&constant_state(&g, a, v, b, z), dt, &p, Scheme::Transformed).unwrap();
        let ev = v.exp();
        assert_eq!(n.a.values()[3], a + dt * eval_f(a, b, v, z, p.mu));
        assert_eq!(n.b.values()[3], b + dt * eval_g(a, b, v, z));
        assert_eq!(n.v.values()[3], v * (-(a + b) * ev * dt).exp());
        assert!(n.a.values().iter().all(|&x| x == n.a.values()[0]));
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let g = grid1(20, 1.0);
        let p = ModelParams { mu: 0.0, beta: 1.0, dz: 1.0 };
        let mut s = constant_state(&g, 0.0, 0.0, 0.0, 0.0);
        s.a = ScalarField::from_fn(g.clone(), |x| 1.0 + (3.0 * x[0]).sin());
        let m0 = integrate(&s.a);
        for _ in 0..50 {
            s = step_euler(&s, 1e-4, &p, Scheme::Transformed).unwrap();
            assert!((integrate(&s.a) - m0).abs() < 1e-13);
        }
    }

    #[test]
    fn run_observation_counts() {
        let g = grid1(8, 1.0);
        let s = constant_state(&g, 1.0, 0.0, 0.0, 0.0);
        let mut seen = Vec::new();
        let r = run(s.clone(), &params(), &StepControl::default(), 0.0, 0.1, &mut |st: &SimState| seen.push(st.t))
            .unwrap();
        assert_eq!((r.steps, seen.len()), (0, 1));

        let mut seen = Vec::new();
        run(s.clone(), &params(), &StepControl::default(), 0.5, 0.5, &mut |st: &SimState| seen.push(st.t)).unwrap();
        assert_eq!(seen, vec![0.0, 0.5]);

        let mut seen = Vec::new();
        run(s.clone(), &params(), &StepControl::default(), 0.35, 0.1, &mut |st: &SimState| seen.push(st.t)).unwrap();
        assert_eq!(seen.len(), 5);
        assert!((seen[3] - 0.3).abs() < 1e-15 && seen[4] == 0.35);

        assert!(run(s, &params(), &StepControl::default(), -1.0, 0.1, &mut |_: &SimState| {}).is_err());
    }

    #[test]
    fn safety_refinement_changes_final_state_at_first_order() {
        let g = grid1(16, 1.0);
        let p = params();
        let finals: Vec<SimState> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&safety| {
                let ctl = StepControl { safety, ..Default::default() };
                run(smooth_state(&g), &p, &ctl, 0.2, 0.2, &mut |_: &SimState| {}).unwrap().final_state
            })
            .collect();
        let diff = |x: &SimState, y: &SimState| {
            x.a.values().iter().zip(y.a.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        };
        let (d1, d2) = (diff(&finals[0], &finals[1]), diff(&finals[1], &finals[2]));
        assert!(d1 > 0.0 && d1 / d2 > 1.7 && d1 / d2 < 2.3, "{d1} {d2}");
    }

    #[test]
    fn negative_values_abort() {
        let g = grid1(8, 1.0);
        let s = constant_state(&g, 1.0, 0.0, 0.0, 0.0);
        let mut bad = s.clone();
        bad.z.values_mut()[2] = -1e-10;
        assert!(matches!(bad.check(0.0), Err(StepError::Negative { field: "z", .. })));
        bad.z.values_mut()[2] = -1e-14;
        assert!(bad.check(0.0).is_ok());
        bad.a.values_mut()[0] = f64::NAN;
        assert!(matches!(bad.check(0.0), Err(StepError::NonFinite { field: "a", .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = Arc::new(make_grid(2, &[1.0, 2.0], &[3, 4]).unwrap());
        let mut s = constant_state(&g, 1.0, 0.01, 0.002, 0.003);
        s.t = 1.25;
        s.a = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[1]);
        let dir = tempfile::tempdir().unwrap();
        s.write_checkpoint(dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.starts_with("t="));
        let back = SimState::read_checkpoint(dir.path()).unwrap();
        assert_eq!(back.t, 1.25);
        assert_eq!(back.a.values(), s.a.values());
        assert_eq!(back.z.values(), s.z.values());
    }
}
