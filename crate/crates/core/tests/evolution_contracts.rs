//! Integration contracts of the nonlinear steppers: linear-regime
//! consistency, convergence order, the change of variables, and the
//! rotational/advective equivalence.

use vorlab_core::basis::{self, BasisLabel};
use vorlab_core::evolution::{
    self, from_scaling_variables, step_sv3, to_scaling_variables, InitialData, RunConfig,
    RunStatus, Scheme, V3Stepper,
};
use vorlab_core::field::{weighted_norm, VectorFieldR, WeightExponent};
use vorlab_core::semigroup;
use vorlab_core::{Grid3, Result};

fn max_diff(a: &VectorFieldR, b: &VectorFieldR) -> f64 {
    let mut err = 0.0f64;
    for c in 0..3 {
        for (x, y) in a.comps[c].iter().zip(&b.comps[c]) {
            err = err.max((x - y).abs());
        }
    }
    err
}

fn scaled_f1(grid: Grid3, eps: f64) -> VectorFieldR {
    let mut f = basis::sample(BasisLabel::parse("f1").unwrap(), grid);
    let m4 = WeightExponent::new(4.0).unwrap();
    let n = weighted_norm(&f, m4);
    f.scale(eps / n);
    f
}

#[test]
fn zero_field_steps_to_zero() {
    let grid = Grid3::new(32, 12.0).unwrap();
    let w = VectorFieldR::zeros(grid);
    let out = step_sv3(&w, 1e-2).unwrap();
    assert_eq!(out.max_abs(), 0.0);
    let n = evolution::nonlinear_term(&w);
    assert_eq!(n.max_abs(), 0.0);
}

#[test]
fn linear_regime_step_matches_semigroup() {
    // with ||w0|| = 1e-8 the nonlinearity is O(1e-16); a step must agree
    // with the exact semigroup to 1e-12 absolute
    let grid = Grid3::new(48, 12.0).unwrap();
    let w = scaled_f1(grid, 1e-8);
    let dt = 1e-2;
    let stepped = step_sv3(&w, dt).unwrap();
    let flowed = semigroup::apply_lambda_semigroup(&w, dt).unwrap().field;
    let err = max_diff(&stepped, &flowed);
    assert!(err < 1e-12, "linear-regime step error {err:.3e}");
}

#[test]
fn rotational_and_advective_forms_agree() {
    let grid = Grid3::new(48, 12.0).unwrap();
    let w = vorlab_core::rand_fields::random_solenoidal(grid, 12, 1.5);
    let rot = evolution::nonlinear_term(&w);
    let adv = evolution::nonlinear_term_advective(&w);
    let scale = rot.max_abs();
    let err = max_diff(&rot, &adv);
    assert!(err < 1e-8 * scale.max(1.0), "form mismatch {err:.3e}");
    // output of the rotational form is solenoidal by construction
    let div = vorlab_core::operators::divergence_max(&rot.to_spectral());
    assert!(div < 1e-12 * scale.max(1.0), "div {div:.3e}");
}

#[test]
fn self_convergence_is_second_order() {
    // fixed problem, three step sizes against a dt/8 reference
    let grid = Grid3::new(32, 12.0).unwrap();
    let mut w0 = vorlab_core::rand_fields::random_solenoidal(grid, 5, 1.5);
    let m4 = WeightExponent::new(4.0).unwrap();
    let n0 = weighted_norm(&w0, m4);
    w0.scale(0.04 / n0);
    let t_end = 0.32;
    let run = |dt: f64| -> VectorFieldR {
        let mut stepper = evolution::Sv3Stepper::new(&w0, true);
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            stepper.step(dt).unwrap();
        }
        stepper.state()
    };
    let reference = run(0.005);
    let errs: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| max_diff(&run(dt), &reference))
        .collect();
    let slope1 = (errs[0] / errs[1]).log2();
    let slope2 = (errs[1] / errs[2]).log2();
    assert!(
        slope1 > 1.9 && slope2 > 1.9,
        "convergence slopes {slope1:.2}, {slope2:.2} (errors {errs:?})"
    );
}

#[test]
fn change_of_variables_round_trip_and_identity() {
    let grid = Grid3::new(48, 12.0).unwrap();
    let w = vorlab_core::rand_fields::random_solenoidal(grid, 3, 1.2);

    // t = 0 reduces to the identity
    let id = to_scaling_variables(&w, 0.0).unwrap();
    assert!(max_diff(&id.field, &w) < 1e-12 * w.max_abs());

    // analytic forward map of a self-similar profile: omega built so that
    // the change of variables returns exactly f1 (finer grid: the compressed
    // profile must stay spectrally resolved)
    let grid = Grid3::new(64, 12.0).unwrap();
    let t0: f64 = 0.8;
    let f1 = basis::sample(BasisLabel::parse("f1").unwrap(), grid);
    let omega = VectorFieldR::sample(grid, |x, y, z| {
        let s = (1.0 + t0).sqrt();
        let v = basis::eval_basis(BasisLabel::parse("f1").unwrap(), x / s, y / s, z / s);
        [v[0] / (1.0 + t0), v[1] / (1.0 + t0), v[2] / (1.0 + t0)]
    });
    // compare inside the valid region of the map: coordinates beyond
    // L / sqrt(1+t) request samples outside the physical box and are
    // masked to zero (the documented truncation behavior)
    let back = to_scaling_variables(&omega, t0).unwrap();
    let valid = grid.half_width() / (1.0 + t0).sqrt() - 0.5;
    let n = grid.n();
    let mut err = 0.0f64;
    for iz in 0..n {
        for iy in 0..n {
            for ix in 0..n {
                let (x, y, z) = (grid.coord(ix), grid.coord(iy), grid.coord(iz));
                if x.abs() <= valid && y.abs() <= valid && z.abs() <= valid {
                    let i = grid.idx(iz, iy, ix);
                    for c in 0..3 {
                        err = err.max((back.field.comps[c][i] - f1.comps[c][i]).abs());
                    }
                }
            }
        }
    }
    assert!(err < 1e-8 * f1.max_abs(), "self-similar map error {err:.3e}");

    // round trip forward-inverse on a core-supported field
    let grid = Grid3::new(48, 12.0).unwrap();
    let w = vorlab_core::rand_fields::random_solenoidal(grid, 3, 1.2);
    let t = 0.7;
    let fwd = to_scaling_variables(&w, t).unwrap();
    let back = from_scaling_variables(&fwd.field, t).unwrap();
    let mut err = 0.0f64;
    let n = grid.n();
    for iz in 0..n {
        for iy in 0..n {
            for ix in 0..n {
                let (x, y, z) = (grid.coord(ix), grid.coord(iy), grid.coord(iz));
                if x.abs() <= 6.0 && y.abs() <= 6.0 && z.abs() <= 6.0 {
                    let i = grid.idx(iz, iy, ix);
                    for c in 0..3 {
                        err = err.max((back.field.comps[c][i] - w.comps[c][i]).abs());
                    }
                }
            }
        }
    }
    assert!(err < 1e-8 * w.max_abs(), "round trip error {err:.3e}");
}

#[test]
fn v3_linear_regime_matches_heat_flow() {
    let grid = Grid3::new(48, 12.0).unwrap();
    let w = scaled_f1(grid, 1e-8);
    let mut stepper = V3Stepper::new(&w, true);
    let dt = 1e-2;
    for _ in 0..20 {
        stepper.step(dt).unwrap();
    }
    let got = stepper.state();
    let want = semigroup::apply_heat(&w, 0.2).unwrap();
    let err = max_diff(&got, &want);
    assert!(err < 1e-12, "v3 linear regime error {err:.3e}");
}

#[test]
fn empty_run_yields_single_snapshot() {
    let grid = Grid3::new(32, 12.0).unwrap();
    let cfg = RunConfig {
        grid,
        initial: InitialData::Zero,
        dt: 1e-3,
        t_end: 0.0,
        weight_m: 4.0,
        scheme: Scheme::StrangExactLinear,
        dealias: true,
        diagnostics_stride: 1,
        snapshot_every_strides: Some(1),
        seed: 0,
        amplitude: None,
        smallness_threshold: 0.05,
    };
    let traj = evolution::run_sv3(&cfg).unwrap();
    assert_eq!(traj.times.len(), 1);
    assert_eq!(traj.snapshots.len(), 1);
    assert_eq!(traj.status, RunStatus::Completed);
}

#[test]
fn run_rejects_oversized_data_and_bad_config() {
    let grid = Grid3::new(32, 12.0).unwrap();
    let mut cfg = RunConfig {
        grid,
        initial: InitialData::Eigenfield("f1".into()),
        dt: 1e-3,
        t_end: 0.1,
        weight_m: 4.0,
        scheme: Scheme::StrangExactLinear,
        dealias: true,
        diagnostics_stride: 10,
        snapshot_every_strides: None,
        seed: 0,
        amplitude: Some(1.0), // way above the smallness threshold
        smallness_threshold: 0.05,
    };
    assert!(evolution::run_sv3(&cfg).is_err());
    cfg.amplitude = Some(0.04);
    cfg.t_end = 0.1005; // not a multiple of dt
    assert!(cfg.validate().is_err());
}

#[test]
fn mini_two_solver_equivalence() -> Result<()> {
    // reduced-size version of the solver cross-validation: same datum run
    // through the rescaled and the physical integrators, compared in the
    // m = 4 norm after the change of variables
    let grid = Grid3::new(48, 12.0).unwrap();
    let mut w0 = vorlab_core::rand_fields::random_solenoidal(grid, 21, 1.3);
    let m4 = WeightExponent::new(4.0)?;
    let n0 = weighted_norm(&w0, m4);
    w0.scale(0.04 / n0);

    let dt = 1e-3;
    let taus = [0.25f64, 0.5];
    let mut sv3 = evolution::Sv3Stepper::new(&w0, true);
    let mut v3 = V3Stepper::new(&w0, true);
    let mut worst: f64 = 0.0;
    let mut tau_prev = 0.0;
    for &tau in &taus {
        let steps = ((tau - tau_prev) / dt).round() as usize;
        for _ in 0..steps {
            sv3.step(dt)?;
        }
        tau_prev = tau;
        let t_phys = tau.exp_m1();
        v3.advance_to(t_phys, dt)?;
        let omega = v3.state();
        let w_from_v3 = to_scaling_variables(&omega, t_phys)?.field;
        let w_sv3 = sv3.state();
        let mut diff = w_sv3.clone();
        diff.axpy(-1.0, &w_from_v3);
        let rel = weighted_norm(&diff, m4) / weighted_norm(&w0, m4);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "two-solver disagreement {worst:.3e}");
    Ok(())
}

#[test]
fn eigenmode_runs_decay_at_their_rates() {
    // gamma-mode datum: fitted ||w||_4 exponent -1.5 over a short window
    let grid = Grid3::new(48, 12.0).unwrap();
    let cfg = RunConfig {
        grid,
        initial: InitialData::Eigenfield("g1".into()),
        dt: 2e-3,
        t_end: 1.5,
        weight_m: 4.0,
        scheme: Scheme::StrangExactLinear,
        dealias: true,
        diagnostics_stride: 25,
        snapshot_every_strides: None,
        seed: 0,
        amplitude: Some(0.04),
        smallness_threshold: 0.05,
    };
    let traj = evolution::run_sv3(&cfg).unwrap();
    assert_eq!(traj.status, RunStatus::Completed);
    let norms = traj.series("norm_m4").unwrap();
    let (slope, _) =
        vorlab_core::diagnostics::fit_decay_rate(&traj.times, norms, (0.2, 1.5)).unwrap();
    assert!(
        (slope + 1.5).abs() < 0.03,
        "gamma-mode decay slope {slope:.4}"
    );
    // gamma series itself decays like e^{-1.5 tau} pointwise
    let g1 = traj.series("gamma1").unwrap();
    let expected = g1[0] * (-1.5 * traj.times.last().unwrap()).exp();
    let got = *g1.last().unwrap();
    assert!(
        (got - expected).abs() < 1e-6 * g1[0].abs(),
        "gamma evolution {got:.6e} vs {expected:.6e}"
    );
    // solenoidality of the emitted diagnostics
    let div = traj.series("div_l2").unwrap();
    let n0 = traj.series("norm_m0").unwrap()[0];
    assert!(div.iter().all(|d| *d < 1e-10 * n0));
}

#[test]
fn beta_mode_run_decays_at_rate_one() {
    let grid = Grid3::new(48, 12.0).unwrap();
    let cfg = RunConfig {
        grid,
        initial: InitialData::Eigenfield("f1".into()),
        dt: 2e-3,
        t_end: 1.5,
        weight_m: 4.0,
        scheme: Scheme::StrangExactLinear,
        dealias: true,
        diagnostics_stride: 25,
        snapshot_every_strides: None,
        seed: 0,
        amplitude: Some(0.04),
        smallness_threshold: 0.05,
    };
    let traj = evolution::run_sv3(&cfg).unwrap();
    let norms = traj.series("norm_m4").unwrap();
    let (slope, _) =
        vorlab_core::diagnostics::fit_decay_rate(&traj.times, norms, (0.2, 1.5)).unwrap();
    assert!((slope + 1.0).abs() < 0.02, "beta-mode decay slope {slope:.4}");
}
