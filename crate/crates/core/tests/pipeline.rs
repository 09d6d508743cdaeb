use std::sync::Arc;

use nonlocal_core::attractor::{decay_envelope_check, default_seed, pullback_omega_limit, Ensemble};
use nonlocal_core::comparison::{invariant_interval_check, verify_comparison, OrderedTriple};
use nonlocal_core::evolution::{evolve, integrate, picard_solve, Method, ProcessConfig};
use nonlocal_core::lyapunov::{build_energy_spec, dissipation_i, energy_decay_check, find_equilibria, EnergySpec};
use nonlocal_core::nonlinearity::TimeNonlinearity;
use nonlocal_core::spatial::{build_grid, DiscreteKernel, Field, KernelShape, QuadratureRule, SpatialGrid};
use proptest::prelude::*;

fn setup(n: usize, shape: KernelShape) -> (Arc<SpatialGrid>, DiscreteKernel) {
    let grid = build_grid(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap();
    let kernel = DiscreteKernel::from_shape(&grid, &shape).unwrap();
    (grid, kernel)
}

fn energy_spec() -> EnergySpec {
    build_energy_spec(TimeNonlinearity::saturating(2.0, 1.0).limit().unwrap(), 4096).unwrap()
}

fn trig_field(grid: &Arc<SpatialGrid>, coeffs: &[f64], sup: f64) -> Field {
    let raw: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(m, c)| c * ((m + 1) as f64 * std::f64::consts::PI * x).cos())
                .sum::<f64>()
                + 0.1
        })
        .collect();
    let peak = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Field::new(grid.clone(), raw.iter().map(|v| v * sup / peak).collect()).unwrap()
}

#[test]
fn attractor_members_are_computed_equilibria() {
    let (grid, kernel) = setup(41, KernelShape::Uniform);
    let g = TimeNonlinearity::saturating(2.0, 1.0);
    let cfg = ProcessConfig::new(1e-2, Method::ExpEuler).unwrap();
    let seed = default_seed(&grid, 2.0, 5).unwrap();
    let est = pullback_omega_limit(0.0, &seed, &[10.0, 20.0, 40.0, 60.0], &cfg, &kernel, &g, 1e-6, 2.0).unwrap();
    assert!(est.converged);

    let spec = energy_spec();
    let eq = find_equilibria(&spec, &kernel, &est.ensemble, 1e-12).unwrap();
    assert_eq!(eq.len(), 3);
    for m in est.ensemble.members() {
        assert!(dissipation_i(m, &spec, &kernel).unwrap().abs() < 1e-8);
        let nearest = eq
            .members
            .iter()
            .map(|e| m.distance(e, f64::INFINITY).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < 1e-6, "member {nearest} away from every equilibrium");
    }
}

#[test]
fn outer_equilibria_bracket_the_attractor() {
    let (grid, kernel) = setup(41, KernelShape::Uniform);
    let g = TimeNonlinearity::saturating(2.0, 1.0);
    let cfg = ProcessConfig::new(1e-2, Method::ExpEuler).unwrap();
    let spec = energy_spec();
    let seeds = Ensemble::constants(&grid, &[-3.0, 3.0], "outer").unwrap();
    let eq = find_equilibria(&spec, &kernel, &seeds, 1e-13).unwrap();
    let (lo, hi) = (&eq.members[0], &eq.members[1]);
    assert!(lo.values()[0] < hi.values()[0]);

    let c = hi.values()[0];
    let samples = Ensemble::new(
        (0..6)
            .map(|k| trig_field(&grid, &[1.0, -0.5, 0.25][..=k % 3], 0.2 + 0.3 * k as f64))
            .map(|u| Field::new(grid.clone(), u.values().iter().map(|v| v.clamp(-c, c)).collect()).unwrap())
            .collect(),
        "inside",
    )
    .unwrap();
    let report = invariant_interval_check(lo, hi, &samples, 0.0, 5.0, &cfg, &kernel, &g, &g, &g).unwrap();
    assert!(report.ok, "{:?}", report.escape);
    assert!(report.min_margin >= -report.tol);
}

#[test]
fn picard_matches_fine_stepping_for_modulated_forcing() {
    let (grid, kernel) = setup(41, KernelShape::Gaussian { sigma: 0.2 });
    let g = TimeNonlinearity::modulated(2.0, 1.0, 1.0, 1.0);
    let u = trig_field(&grid, &[1.0, 0.3], 1.2);
    let picard = picard_solve(&u, 1.0, 1.5, &kernel, &g, 200, 1e-13).unwrap();
    let fine = evolve(
        &u,
        1.0,
        1.5,
        &ProcessConfig::new(1e-3, Method::ExpMidpoint).unwrap(),
        &kernel,
        &g,
    )
    .unwrap();
    assert!(picard.state.distance(&fine, f64::INFINITY).unwrap() < 1e-5);
}

#[test]
fn gaussian_kernel_energy_matches_dissipation() {
    let (grid, kernel) = setup(41, KernelShape::Gaussian { sigma: 0.2 });
    let g = TimeNonlinearity::saturating(2.0, 1.0);
    let u = trig_field(&grid, &[1.0, -0.4, 0.2], 1.5);
    let traj = integrate(
        &u,
        0.0,
        5.0,
        &ProcessConfig::new(1e-3, Method::ExpMidpoint).unwrap(),
        &kernel,
        &g,
    )
    .unwrap();
    let report = energy_decay_check(&traj, &g, &energy_spec(), &kernel).unwrap();
    assert!(
        report.fd_ok,
        "mismatch {} > {}",
        report.max_fd_mismatch, report.tolerance
    );
    assert_eq!(report.monotone_violations, 0);
    assert!(report.min_dissipation >= -1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn energy_never_increases_along_autonomous_flows(
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..4),
        sup in 0.05f64..1.9,
    ) {
        let (grid, kernel) = setup(21, KernelShape::Gaussian { sigma: 0.3 });
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let u = trig_field(&grid, &coeffs, sup);
        let traj = integrate(&u, 0.0, 3.0, &ProcessConfig::new(1e-2, Method::ExpMidpoint).unwrap(), &kernel, &g).unwrap();
        let report = energy_decay_check(&traj, &g, &energy_spec(), &kernel).unwrap();
        prop_assert_eq!(report.monotone_violations, 0);
    }

    #[test]
    fn ordered_data_stay_ordered(
        mid in -2.5f64..2.5,
        below in 0.0f64..0.5,
        above in 0.0f64..0.5,
        shift in 0.0f64..0.3,
    ) {
        let (grid, kernel) = setup(21, KernelShape::Gaussian { sigma: 0.2 });
        let triple = OrderedTriple::new(
            TimeNonlinearity::shifted(2.0, 1.0, -shift),
            TimeNonlinearity::saturating(2.0, 1.0),
            TimeNonlinearity::shifted(2.0, 1.0, shift),
            Field::constant(grid.clone(), mid - below).unwrap(),
            Field::constant(grid.clone(), mid).unwrap(),
            Field::constant(grid.clone(), mid + above).unwrap(),
        ).unwrap();
        let cfg = ProcessConfig::new(1e-2, Method::ExpEuler).unwrap();
        let report = verify_comparison(&triple, 0.0, 3.0, &cfg, &kernel).unwrap();
        prop_assert!(report.ordered);
        prop_assert!(report.min_gap_lower >= 0.0 && report.min_gap_upper >= 0.0);
    }

    #[test]
    fn periodic_forcing_respects_decay_envelope(
        start in 3.0f64..20.0,
        c in 0.0f64..0.8,
        omega in 0.5f64..4.0,
    ) {
        let (grid, kernel) = setup(21, KernelShape::Tent { radius: 0.3 });
        let g = TimeNonlinearity::periodic(1.5, 1.0, c, omega);
        let u = Field::constant(grid.clone(), start).unwrap();
        let traj = integrate(&u, 0.0, 8.0, &ProcessConfig::new(1e-2, Method::ExpEuler).unwrap(), &kernel, &g).unwrap();
        let report = decay_envelope_check(&traj, g.k1(), g.k2(), 2.0, 0.1).unwrap();
        prop_assert!(report.ok(), "{:?}", report.violations.first());
    }
}
