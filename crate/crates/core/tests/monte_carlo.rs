//! Monte Carlo checks of the estimators against closed-form moments.

use aniso_surf::regularity::{gamma_hat, stencil_points, theta_hat, v_hat};
use aniso_surf::smoothing::adaptive_predict;
use aniso_surf::{
    estimate_batch, generate_dataset, ApproxPolicy, DesignKind, DesignLaw, Domain, Exec, FieldSpec, KernelSpec,
    NoiseLaw, RegParams, ScalarField, SimConfig,
};

fn sim(f: FieldSpec, n: usize, seed: u64) -> SimConfig {
    SimConfig { field: f, domain: Domain::unit_square_at_one(), n_sheets: n, seed, jitter: 1e-10 }
}

#[test]
fn increment_moments_match_closed_form() {
    let t = [1.5, 1.5];
    let mut pts = stencil_points(&[t], 0.1);
    pts.push([1.0, 1.0]);
    let f = FieldSpec::isotropic(0.5, DesignLaw::points(pts));
    // 8000 sheets keep the 5% tolerance near three standard errors
    let ds = generate_dataset(&sim(f, 8000, 5)).unwrap();
    let nn = ApproxPolicy::nearest();
    // theta along axis i at H = 1/2 is t_j * delta
    let th = theta_hat(&ds, t, 0.1, 0, &nn).unwrap();
    assert!((th / 0.15 - 1.0).abs() < 0.05, "{th}");
    let g = gamma_hat(&ds, t, 0.1, &nn).unwrap();
    assert!((g / 0.30 - 1.0).abs() < 0.05, "{g}");
    let v = v_hat(&ds, [1.0, 1.0], &nn, 1e-6).unwrap();
    assert!((v - 1.0).abs() < 0.1, "{v}");
}

#[test]
fn isotropic_exponent_on_a_common_grid() {
    let f = FieldSpec::isotropic(0.5, DesignLaw::grid(41, 41));
    let ds = generate_dataset(&sim(f, 300, 8)).unwrap();
    let params = RegParams::new(0.05).with_tau(0.1);
    let targets = Domain::unit_square_at_one().interior_lattice(3, 0.15);
    let est = estimate_batch(&ds, &targets, &params, Exec::default()).unwrap();
    let mean = est.iter().map(|e| e.h_low).sum::<f64>() / est.len() as f64;
    assert!((mean - 0.5).abs() < 0.08, "{mean}");
    assert!(est.iter().all(|e| e.h_high >= e.h_low && e.h_low <= 1.0));
}

#[test]
fn independent_design_with_pilot_average_runs_end_to_end() {
    let mut f = FieldSpec::isotropic(0.4, DesignLaw::independent(DesignKind::IndependentPoisson));
    f.eta2 = ScalarField::constant(0.6);
    f.mean_points_m = 150.0;
    f.noise = NoiseLaw::Constant { sigma: 0.05 };
    let ds = generate_dataset(&sim(f.clone(), 60, 1)).unwrap();
    let mut params = RegParams::new(0.1);
    params.policy = ApproxPolicy::pilot(0.08);
    let est = estimate_batch(&ds, &[[1.5, 1.5]], &params, Exec::Sequential).unwrap();
    assert!(est[0].h_low > 0.0 && est[0].h_low <= 1.0);

    let new = generate_dataset(&sim(f, 1, 77)).unwrap();
    let (y, plan) = adaptive_predict(&ds, &new.sheets[0], [1.5, 1.5], &params, &KernelSpec::boxcar(), 1.0).unwrap();
    assert!(y.is_finite());
    assert!(plan.h1 > 0.0 && plan.h1 <= 1.0 && plan.h2 > 0.0 && plan.h2 <= 1.0);
    assert_eq!(plan.sigma2, 0.05 * 0.05);
}
