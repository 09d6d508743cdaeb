//! Built-in suite of closed-form checks on a small fixed problem.

use std::path::Path;
use std::sync::Arc;

use nonlocal_core::attractor::{absorbing_radius, default_seed, pullback_omega_limit, Ensemble};
use nonlocal_core::comparison::{verify_comparison, OrderedTriple};
use nonlocal_core::evolution::{evolve, integrate, Method, ProcessConfig};
use nonlocal_core::lyapunov::{build_energy_spec, dissipation_i, find_equilibria, lyapunov_value, remainder_r};
use nonlocal_core::nonlinearity::TimeNonlinearity;
use nonlocal_core::spatial::{
    build_grid, hausdorff_semidist, DiscreteKernel, Field, KernelShape, QuadratureRule, SpatialGrid,
};
use serde::Serialize;

use crate::emit::Emitter;
use crate::error::CliError;
use crate::run::{write_members, RunReport};

const NODES: usize = 21;
const RNG_SEED: u64 = 42;
const DEPTHS: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    /// Measured quantity.
    value: f64,
    /// Threshold it is compared against.
    bound: f64,
}

fn below(name: &'static str, value: f64, bound: f64) -> Check {
    Check {
        name,
        passed: value <= bound,
        value,
        bound,
    }
}

#[derive(Serialize)]
struct SelftestSummary {
    nodes: usize,
    rng_seed: u64,
    passed: bool,
    checks: Vec<Check>,
    pullback_depths: Vec<f64>,
    pullback_residuals: Vec<f64>,
}

struct Problem {
    grid: Arc<SpatialGrid>,
    kernel: DiscreteKernel,
    g: TimeNonlinearity,
    cfg: ProcessConfig,
}

fn problem() -> Result<Problem, CliError> {
    let grid = build_grid(0.0, 1.0, NODES, QuadratureRule::Trapezoid)?;
    let kernel = DiscreteKernel::from_shape(&grid, &KernelShape::Uniform)?;
    Ok(Problem {
        grid,
        kernel,
        g: TimeNonlinearity::saturating(2.0, 1.0),
        cfg: ProcessConfig::new(1e-2, Method::ExpEuler)?,
    })
}

fn max_abs_diff(u: &Field, c: f64) -> f64 {
    u.values().iter().fold(0.0_f64, |m, v| m.max((v - c).abs()))
}

pub(crate) fn run_selftest(out: &Path) -> Result<RunReport, CliError> {
    let Problem { grid, kernel, g, cfg } = problem()?;
    let mut checks = Vec::new();
    let one = Field::constant(grid.clone(), 1.0)?;

    let zero = TimeNonlinearity::zero();
    let decayed = evolve(&one, 0.0, 2.0, &cfg, &kernel, &zero)?;
    checks.push(below(
        "linear_part_exact",
        max_abs_diff(&decayed, (-2.0f64).exp()),
        1e-14,
    ));

    let sine = Field::from_fn(grid.clone(), |x| (2.0 * std::f64::consts::PI * x).sin())?;
    let same = evolve(&sine, 1.0, 1.0, &cfg, &kernel, &g)?;
    checks.push(below("identity_at_equal_times", same.distance(&sine, 2.0)?, 0.0));

    checks.push(below(
        "mean_kernel_fixes_constants",
        max_abs_diff(&kernel.apply(&one)?, 1.0),
        1e-15,
    ));

    let set = vec![one.clone(), sine.clone()];
    checks.push(below(
        "hausdorff_self_distance",
        hausdorff_semidist(&set, &set, 2.0)?,
        0.0,
    ));

    let g0 = g.limit().expect("saturating nonlinearity has a limit").clone();
    let spec = build_energy_spec(&g0, nonlocal_core::lyapunov::DEFAULT_RESOLUTION)?;
    checks.push(below("antiderivative_at_zero", spec.i(0.0)?.abs(), 0.0));
    let minimizer = Field::constant(grid.clone(), spec.u_bar())?;
    checks.push(below(
        "energy_at_minimizer",
        lyapunov_value(&minimizer, &spec, &kernel)?.total.abs(),
        1e-12,
    ));
    let origin = Field::zeros(grid.clone());
    checks.push(below(
        "dissipation_at_origin",
        dissipation_i(&origin, &spec, &kernel)?.abs(),
        1e-15,
    ));
    checks.push(below(
        "remainder_of_autonomous_limit",
        remainder_r(3.0, &one, &g, &spec, &kernel)?.abs(),
        1e-15,
    ));

    let seeds = Ensemble::constants(&grid, &[-3.0, 0.0, 3.0], "three constants")?;
    let eq = find_equilibria(&spec, &kernel, &seeds, 1e-10)?;
    checks.push(Check {
        name: "three_constant_equilibria",
        passed: eq.len() == 3,
        value: eq.len() as f64,
        bound: 3.0,
    });

    let triple = OrderedTriple::new(g.clone(), g.clone(), g.clone(), one.clone(), one.clone(), one.clone())?;
    let cmp = verify_comparison(&triple, 0.0, 2.0, &cfg, &kernel)?;
    checks.push(Check {
        name: "identical_triple_stays_ordered",
        passed: cmp.ordered,
        value: cmp.min_gap_lower.min(cmp.min_gap_upper),
        bound: -cmp.tol,
    });

    let traj = integrate(&one, 0.0, 1.0, &cfg, &kernel, &zero)?;
    let final_row = traj.final_state();
    checks.push(below(
        "zero_forcing_final_row",
        max_abs_diff(final_row, (-1.0f64).exp()),
        1e-14,
    ));

    let radius = absorbing_radius(g.k1(), g.k2(), grid.measure(), 2.0, 0.0)?;
    let seed = default_seed(&grid, radius, RNG_SEED)?;
    let est = pullback_omega_limit(0.0, &seed, &DEPTHS, &cfg, &kernel, &g, 1e-4, 2.0)?;
    checks.push(Check {
        name: "pullback_images_contained",
        passed: est.containment_ok,
        value: est.max_norm,
        bound: est.radius,
    });

    let passed = checks.iter().all(|c| c.passed);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let total = checks.len();
    let summary = SelftestSummary {
        nodes: NODES,
        rng_seed: RNG_SEED,
        passed,
        checks,
        pullback_depths: DEPTHS.to_vec(),
        pullback_residuals: est.residuals.clone(),
    };

    let mut em = Emitter::new(out)?;
    em.json("selftest.json", &summary)?;
    write_members(&mut em, &est)?;
    Ok(RunReport {
        passed,
        summary: if passed {
            format!("selftest: all {total} checks passed")
        } else {
            format!("selftest: failed {}", failed.join(", "))
        },
        artifacts: em.into_written(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_selftest(dir.path()).unwrap();
        assert!(report.passed, "{}", report.summary);
        assert_eq!(report.artifacts.len(), 2);
        assert!(dir.path().join("selftest.json").exists());
    }
}
