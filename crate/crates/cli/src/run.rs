//! Subcommand orchestration. Each run computes first and then hands every
//! artifact to a single [`Emitter`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nonlocal_core::attractor::{
    absorbing_radius, default_seed, pullback_omega_limit, semicontinuity_experiment, AttractorEstimate, Ensemble,
    SemicontinuitySetup,
};
use nonlocal_core::comparison::{verify_comparison, OrderedTriple};
use nonlocal_core::evolution::integrate;
use nonlocal_core::lyapunov::{
    build_energy_spec, convergence_verdict, energy_decay_check, find_equilibria, nearest_equilibrium,
};
use nonlocal_core::nonlinearity::TimeNonlinearity;
use serde::Serialize;

use crate::config::RunConfig;
use crate::emit::Emitter;
use crate::error::CliError;
use crate::selftest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Attractor,
    Compare,
    Lyapunov,
    Sweep,
    Selftest,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Self::Simulate,
        Self::Attractor,
        Self::Compare,
        Self::Lyapunov,
        Self::Sweep,
        Self::Selftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Attractor => "attractor",
            Self::Compare => "compare",
            Self::Lyapunov => "lyapunov",
            Self::Sweep => "sweep",
            Self::Selftest => "selftest",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown subcommand `{s}`")))
    }
}

/// Outcome of a run that completed its computation.
#[derive(Clone, Debug)]
pub struct RunReport {
    /// False when a check the run performs did not hold.
    pub passed: bool,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Exit status of a finished or failed run.
pub fn exit_code(result: &Result<RunReport, CliError>) -> i32 {
    match result {
        Ok(r) => r.exit_code(),
        Err(e) => e.exit_code(),
    }
}

/// Runs `cmd`. Every subcommand except `selftest` needs a configuration.
pub fn run(cmd: Command, cfg: Option<&RunConfig>, output_dir: &Path) -> Result<RunReport, CliError> {
    if cmd == Command::Selftest {
        return selftest::run_selftest(output_dir);
    }
    let cfg = cfg.ok_or_else(|| CliError::Config(format!("`{cmd}` needs a configuration file")))?;
    cfg.validate()?;
    match cmd {
        Command::Simulate => simulate(cfg, output_dir),
        Command::Attractor => attractor(cfg, output_dir),
        Command::Compare => compare(cfg, output_dir),
        Command::Lyapunov => lyapunov(cfg, output_dir),
        Command::Sweep => sweep(cfg, output_dir),
        Command::Selftest => unreachable!(),
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section"))
}

fn node_header(first: &str, prefix: &str, n: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .collect()
}

#[derive(Serialize)]
struct SimulateSummary {
    tau: f64,
    t_end: f64,
    steps: usize,
    method: String,
    dt: f64,
    p: f64,
    final_sup_norm: f64,
    final_lp_norm: f64,
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let spec = cfg.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
    let grid = cfg.build_grid()?;
    let kernel = cfg.build_kernel(&grid)?;
    let process = cfg.build_process()?;
    let g = cfg.nonlinearity.build();
    let u_tau = spec.initial.build(&grid)?;
    let traj = integrate(&u_tau, spec.tau, spec.t_end, &process, &kernel, &g)?;
    let last = traj.final_state();
    let summary = SimulateSummary {
        tau: spec.tau,
        t_end: spec.t_end,
        steps: traj.len() - 1,
        method: process.method.to_string(),
        dt: process.dt,
        p: cfg.p,
        final_sup_norm: last.sup_norm(),
        final_lp_norm: last.lp_norm(cfg.p)?,
    };

    let mut em = Emitter::new(out)?;
    em.csv(
        "trajectory.csv",
        &node_header("t", "u", grid.len()),
        traj.times()
            .iter()
            .zip(traj.states())
            .map(|(&t, u)| std::iter::once(t).chain(u.values().iter().copied()).collect()),
    )?;
    em.json("summary.json", &summary)?;
    Ok(RunReport {
        passed: true,
        summary: format!(
            "simulated {} steps to t = {}, final sup norm {:.6e}",
            summary.steps, spec.t_end, summary.final_sup_norm
        ),
        artifacts: em.into_written(),
    })
}

#[derive(Serialize)]
struct AttractorSummary<'a> {
    t: f64,
    seed: &'a str,
    seed_members: usize,
    depths: &'a [f64],
    residuals: &'a [f64],
    converged: bool,
    tol: f64,
    radius: f64,
    max_norm: f64,
    containment_ok: bool,
    p: f64,
    members_csv_path: &'a str,
}

pub(crate) fn write_members(em: &mut Emitter, est: &AttractorEstimate) -> Result<(), CliError> {
    let grid = est.ensemble.grid();
    let members = est.ensemble.members();
    em.csv(
        "members.csv",
        &node_header("x", "m", members.len()),
        grid.nodes().iter().enumerate().map(|(i, &x)| {
            std::iter::once(x)
                .chain(members.iter().map(|m| m.values()[i]))
                .collect()
        }),
    )
}

fn seed_radius(gs: &[&TimeNonlinearity], measure: f64, p: f64) -> Result<f64, CliError> {
    let mut r = 0.0_f64;
    for g in gs {
        r = r.max(absorbing_radius(g.k1(), g.k2(), measure, p, 0.0)?);
    }
    Ok(r)
}

fn attractor(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let spec = cfg.attractor.as_ref().ok_or_else(|| missing("attractor"))?;
    let grid = cfg.build_grid()?;
    let kernel = cfg.build_kernel(&grid)?;
    let process = cfg.build_process()?;
    let g = cfg.nonlinearity.build();
    let seed = match &spec.seed_levels {
        Some(levels) => Ensemble::constants(&grid, levels, "configured levels")?,
        None => {
            let r = match spec.seed_radius {
                Some(r) => r,
                None => seed_radius(&[&g], grid.measure(), cfg.p)?,
            };
            default_seed(&grid, r, cfg.rng_seed)?
        }
    };
    let est = pullback_omega_limit(spec.t, &seed, &spec.depths, &process, &kernel, &g, spec.tol, cfg.p)?;
    let summary = AttractorSummary {
        t: est.t,
        seed: seed.label(),
        seed_members: seed.len(),
        depths: &est.pullback_depths,
        residuals: &est.residuals,
        converged: est.converged,
        tol: est.tol,
        radius: est.radius,
        max_norm: est.max_norm,
        containment_ok: est.containment_ok,
        p: est.p,
        members_csv_path: "members.csv",
    };

    let mut em = Emitter::new(out)?;
    em.json("attractor.json", &summary)?;
    write_members(&mut em, &est)?;
    let last = est.residuals.last().copied().unwrap_or(0.0);
    Ok(RunReport {
        passed: est.converged && est.containment_ok,
        summary: format!(
            "attractor at t = {}: last residual {last:.3e} (tol {}), max norm {:.6} vs radius {:.6}",
            est.t, est.tol, est.max_norm, est.radius
        ),
        artifacts: em.into_written(),
    })
}

fn compare(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let spec = cfg.compare.as_ref().ok_or_else(|| missing("compare"))?;
    let grid = cfg.build_grid()?;
    let kernel = cfg.build_kernel(&grid)?;
    let process = cfg.build_process()?;
    let triple = OrderedTriple::new(
        spec.f.build(),
        cfg.nonlinearity.build(),
        spec.h.build(),
        spec.lower.build(&grid)?,
        spec.initial.build(&grid)?,
        spec.upper.build(&grid)?,
    )?;
    let report = verify_comparison(&triple, spec.tau, spec.t_end, &process, &kernel)?;

    let mut em = Emitter::new(out)?;
    em.json("compare.json", &report)?;
    Ok(RunReport {
        passed: report.ordered,
        summary: format!(
            "ordering {} on [{}, {}]: min gaps {:.3e} (lower), {:.3e} (upper)",
            if report.ordered { "preserved" } else { "violated" },
            spec.tau,
            spec.t_end,
            report.min_gap_lower,
            report.min_gap_upper
        ),
        artifacts: em.into_written(),
    })
}

#[derive(Serialize)]
struct EnergySummary {
    autonomous: bool,
    max_fd_mismatch: f64,
    relative_mismatch: f64,
    tolerance: f64,
    fd_ok: bool,
    monotone_violations: usize,
    min_dissipation: f64,
    max_abs_remainder: f64,
}

#[derive(Serialize)]
struct EquilibriumSummary<'a> {
    count: usize,
    levels: &'a [f64],
    energies: &'a [f64],
    residuals: &'a [f64],
    member_levels: &'a [usize],
    skipped_seeds: &'a [usize],
}

#[derive(Serialize)]
struct LyapunovSummary<'a> {
    u_bar: f64,
    f_min: f64,
    verdict: &'a nonlocal_core::lyapunov::Verdict,
    energy: EnergySummary,
    equilibria: EquilibriumSummary<'a>,
}

fn lyapunov(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let spec = cfg.lyapunov.as_ref().ok_or_else(|| missing("lyapunov"))?;
    let grid = cfg.build_grid()?;
    let kernel = cfg.build_kernel(&grid)?;
    let process = cfg.build_process()?;
    let g = cfg.nonlinearity.build();
    let g0 = g.limit().ok_or_else(|| {
        CliError::Config("nonlinearity: the lyapunov run needs a kind with an increasing autonomous limit".into())
    })?;
    let energy = build_energy_spec(g0, spec.resolution)?;
    let levels = match &spec.seeds {
        Some(s) => s.clone(),
        None => {
            let a = 1.5 * g0.bound();
            (0..7).map(|k| -a + 2.0 * a * k as f64 / 6.0).collect()
        }
    };
    let seeds = Ensemble::constants(&grid, &levels, "equilibrium seeds")?;
    let eq = find_equilibria(&energy, &kernel, &seeds, spec.eq_tol)?;
    let traj = integrate(&spec.initial.build(&grid)?, spec.tau, spec.t_end, &process, &kernel, &g)?;
    let report = energy_decay_check(&traj, &g, &energy, &kernel)?;
    let verdict = convergence_verdict(&traj, &eq, cfg.p, spec.verdict_tol)?;
    let dists = traj
        .states()
        .iter()
        .map(|u| Ok(nearest_equilibrium(u, &eq, cfg.p)?.map_or(f64::INFINITY, |(_, d)| d)))
        .collect::<Result<Vec<f64>, CliError>>()?;

    let passed = if report.autonomous {
        report.fd_ok && report.monotone_violations == 0
    } else {
        true
    };
    let summary = LyapunovSummary {
        u_bar: energy.u_bar(),
        f_min: energy.f_min(),
        verdict: &verdict,
        energy: EnergySummary {
            autonomous: report.autonomous,
            max_fd_mismatch: report.max_fd_mismatch,
            relative_mismatch: report.relative_mismatch(),
            tolerance: report.tolerance,
            fd_ok: report.fd_ok,
            monotone_violations: report.monotone_violations,
            min_dissipation: report.min_dissipation,
            max_abs_remainder: report.max_abs_remainder,
        },
        equilibria: EquilibriumSummary {
            count: eq.len(),
            levels: &eq.levels,
            energies: &eq.energies,
            residuals: &eq.residuals,
            member_levels: &eq.member_levels,
            skipped_seeds: &eq.skipped,
        },
    };

    let mut em = Emitter::new(out)?;
    let header: Vec<String> = ["t", "L", "L1", "L2", "I", "R", "dist"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    em.csv(
        "lyapunov.csv",
        &header,
        report.samples.iter().zip(&dists).map(|(s, &d)| {
            vec![
                s.t,
                s.energy.total,
                s.energy.l1,
                s.energy.l2,
                s.dissipation,
                s.remainder,
                d,
            ]
        }),
    )?;
    em.json("verdict.json", &summary)?;
    Ok(RunReport {
        passed,
        summary: format!(
            "{} equilibria; verdict {:?} with final distance {:.3e}; energy mismatch {:.3e} (tol {:.3e})",
            eq.len(),
            verdict.outcome,
            verdict.final_dist,
            report.max_fd_mismatch,
            report.tolerance
        ),
        artifacts: em.into_written(),
    })
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let spec = cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let grid = cfg.build_grid()?;
    let kernel = cfg.build_kernel(&grid)?;
    let process = cfg.build_process()?;
    let g = cfg.nonlinearity.build();
    let reference = (spec.beta0, g.plus_constant(spec.beta0));
    let family: Vec<(f64, TimeNonlinearity)> = spec.betas.iter().map(|&b| (b, g.plus_constant(b))).collect();
    let all: Vec<&TimeNonlinearity> = family.iter().map(|(_, g)| g).chain([&reference.1]).collect();
    let radius = seed_radius(&all, grid.measure(), cfg.p)?;
    let setup = SemicontinuitySetup {
        t: spec.t,
        tau: spec.tau,
        t_end: spec.t_end,
        initial: spec.initial.build(&grid)?,
        seed: default_seed(&grid, radius, cfg.rng_seed)?,
        depths: spec.depths.clone(),
        tol: spec.tol,
        p: cfg.p,
    };
    let report = semicontinuity_experiment(&family, &reference, &setup, &process, &kernel)?;

    let mut em = Emitter::new(out)?;
    let header: Vec<String> = ["beta", "traj_dist", "gronwall_bound", "attractor_dist"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    em.csv(
        "sweep.csv",
        &header,
        report
            .rows
            .iter()
            .map(|r| vec![r.beta, r.traj_dist, r.gronwall_bound, r.attractor_dist]),
    )?;
    em.json("sweep.json", &report)?;
    let last = report.rows.last().map_or(f64::NAN, |r| r.attractor_dist);
    Ok(RunReport {
        passed: report.monotone && report.final_below_tol,
        summary: format!(
            "Gronwall bound holds; attractor distances {} with last {last:.3e} (tol {})",
            if report.monotone { "decrease" } else { "do not decrease" },
            spec.tol
        ),
        artifacts: em.into_written(),
    })
}
