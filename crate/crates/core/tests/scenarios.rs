use std::path::Path;
use std::sync::Arc;

use virodyn_core::grid::{make_grid, ScalarField};
use virodyn_core::harness::{run_scenario, run_sweep, HarnessError, RunConfig};
use virodyn_core::model::ModelParams;
use virodyn_core::stepper::{run, Scheme, SimState, StepControl};

fn config(text: &str, out: &Path) -> RunConfig {
    RunConfig::parse(text, &[format!("output_dir={}", out.display())]).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn every_scenario_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "scenario = theorem11\ncells = 32\nt_end = 2/delta",
        "scenario = ode-oracle\nt_end = 2",
        "scenario = mms",
        "scenario = fisher\ncells = 32\nt_end = 5",
        "scenario = sweep\ncells = 16\nsweep_beta = 1.2, 2\nsweep_eps_scale = 1, 2\nsweep_t_end = 20\nworkers = 1",
        "scenario = custom\ncells = 32\nz0_amp = 0.01",
    ];
    for (i, text) in cases.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b")));
        let ra = run_scenario(&config(text, &a)).unwrap();
        run_scenario(&config(text, &b)).unwrap();
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty(), "{text}");
        assert_eq!(fa, fb, "{}", ra.scenario.name());
    }
}

#[test]
fn sweep_order_is_independent_of_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "scenario = sweep\ncells = 16\nsweep_beta = 2, 0.8, 1.2\nsweep_eps_scale = 2, 0.5\nsweep_t_end = 20";
    let one = run_sweep(&config(&format!("{text}\nworkers = 1"), tmp.path())).unwrap();
    let many = run_sweep(&config(&format!("{text}\nworkers = 4"), tmp.path())).unwrap();
    assert_eq!(one, many);
    assert_eq!(one.len(), 6);
    let keys: Vec<(f64, f64)> = one.iter().map(|r| (r.beta, r.eps_scale)).collect();
    assert_eq!(keys, [(0.8, 0.5), (0.8, 2.0), (1.2, 0.5), (1.2, 2.0), (2.0, 0.5), (2.0, 2.0)]);
    for r in &one {
        if r.threshold_ok && r.cert_valid {
            assert_eq!(r.classification.to_string(), "decay", "{r:?}");
        }
    }
}

#[test]
fn single_cell_sweep_matches_theorem11_run() {
    let tmp = tempfile::tempdir().unwrap();
    let common = "cells = 32\nv0_amp = 0.5eps\nw0_amp = 0.5eps\nz0_amp = 0.5eps\nu0_amp = 0.02";
    let sweep = run_sweep(&config(
        &format!("scenario = sweep\n{common}\nsweep_beta = 1.2\nsweep_eps_scale = 1\nsweep_t_end = 6/delta"),
        tmp.path(),
    ))
    .unwrap();
    let single =
        run_scenario(&config(&format!("scenario = theorem11\n{common}\nt_end = 6/delta"), &tmp.path().join("t"))).unwrap();
    let z = single.fits.iter().find(|f| f.quantity == "sup_z").unwrap();
    assert_eq!(sweep.len(), 1);
    assert_eq!(sweep[0].z_fitted_rate, z.rate());
}

#[test]
fn theorem11_never_passes_after_a_blow_up() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("scenario = theorem11\ncells = 64\nsafety = 4\ndt_max = 1", tmp.path());
    match run_scenario(&cfg) {
        Err(e @ HarnessError::Solver(_)) => assert_eq!(e.exit_code(), 3),
        Ok(r) => assert!(!r.passed(), "{}", r.summary()),
        Err(e) => panic!("unexpected {e}"),
    }
}

#[test]
fn theorem11_reports_l5_non_growth_and_finite_dirichlet_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run_scenario(&config("scenario = theorem11\ncells = 64\nt_end = 8/delta", tmp.path())).unwrap();
    assert!(r.passed(), "{}", r.summary());
    assert!(r.check("grad_v_l5_growth").unwrap().pass);

    // Trapezoidal time integral of |grad v|^2 over successive quarters.
    let recs = &r.audit.as_ref().unwrap().records;
    let q = recs.len() / 4;
    let quarter = |k: usize| -> f64 {
        recs[k * q..=(k + 1) * q - 1]
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].grad_v_l2.powi(2) + w[1].grad_v_l2.powi(2)))
            .sum()
    };
    let parts: Vec<f64> = (0..4).map(quarter).collect();
    for k in 1..4 {
        assert!(parts[k] < 0.5 * parts[k - 1] || parts[k] == 0.0, "{parts:?}");
    }
}

fn smooth_state(n: usize) -> SimState {
    let g = Arc::new(make_grid(1, &[1.0], &[n]).unwrap());
    let c = |x: [f64; 3]| (std::f64::consts::PI * x[0]).cos();
    SimState {
        t: 0.0,
        a: ScalarField::from_fn(g.clone(), |x| 1.0 + 0.3 * c(x)),
        v: ScalarField::from_fn(g.clone(), |x| 0.2 * (1.0 + c(x))),
        b: ScalarField::from_fn(g.clone(), |x| 0.05 * (1.0 - c(x))),
        z: ScalarField::from_fn(g, |x| 0.1 * (1.0 + c(x))),
    }
}

fn scheme_gap(n: usize, safety: f64, t_end: f64) -> (Vec<f64>, f64) {
    let params = ModelParams::new(1.0, 1.2, 1.0).unwrap();
    let ctl = |scheme| StepControl { safety, scheme, ..Default::default() };
    let mut none = |_: &SimState| {};
    let tr = run(smooth_state(n), &params, &ctl(Scheme::Transformed), t_end, t_end, &mut none).unwrap().final_state;
    let pr = run(smooth_state(n), &params, &ctl(Scheme::Primitive), t_end, t_end, &mut none).unwrap().final_state;
    let diff: Vec<f64> = tr
        .fields()
        .iter()
        .zip(pr.fields())
        .flat_map(|((_, a), (_, b))| a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect::<Vec<_>>())
        .collect();
    let max = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    (diff, max)
}

#[test]
fn schemes_converge_to_each_other() {
    // dt tracks h^2 under the diffusive bound, so the gap is O(h^2).
    let gaps: Vec<f64> = [16, 32, 64].iter().map(|&n| scheme_gap(n, 0.4, 0.1).1).collect();
    for w in gaps.windows(2) {
        let order = (w[0] / w[1]).log2();
        println!("h-order {order}");
        assert!(order >= 1.9, "h-order {order} from {gaps:?}");
    }
    // At fixed h the gap tends to its dt = 0 limit at first order; successive
    // differences remove that limit.
    let runs: Vec<Vec<f64>> = [0.4, 0.2, 0.1].iter().map(|&s| scheme_gap(32, s, 0.1).0).collect();
    let delta = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let order = (delta(&runs[0], &runs[1]) / delta(&runs[1], &runs[2])).log2();
    println!("dt-order {order}");
    assert!(order >= 1.0, "dt-order {order}");
}
