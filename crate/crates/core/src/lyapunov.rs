//! The energy functional of the autonomous limit, its dissipation, the
//! nonautonomous remainder, equilibria and convergence verdicts.

use std::cmp::Ordering;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::attractor::Ensemble;
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::nonlinearity::{AutonomousNonlinearity, TimeNonlinearity};
use crate::spatial::{check_exponent, DiscreteKernel, Field};

pub const DEFAULT_RESOLUTION: usize = 4096;
pub const MIN_RESOLUTION: usize = 1000;
/// Relative margin kept away from `±a` when tabulating `i`.
pub const EDGE_MARGIN: f64 = 1e-6;
pub const LEVEL_TOL: f64 = 1e-6;
pub const DEDUP_TOL: f64 = 1e-4;

const DAMPING: f64 = 0.5;
const PICARD_MAX_ITER: usize = 20_000;
const NEWTON_MAX_ITER: usize = 30;
const EDGE_POINTS: usize = 32;
const CELL_TOL: f64 = 1e-12;
const CELL_MAX_DEPTH: usize = 24;

/// `i(s) = −∫_0^s g0^{-1}`, `f(s) = −s²/2 − i(s)` and the minimum of `f`.
#[derive(Clone, Debug)]
pub struct EnergySpec {
    g0: AutonomousNonlinearity,
    a: f64,
    /// Table half-width `a − ε`.
    edge: f64,
    step: f64,
    half: usize,
    i_table: Vec<f64>,
    inv_table: Vec<f64>,
    u_bar: f64,
    f_min: f64,
}

/// Tabulates `i` cumulatively from `0` on `resolution` cells of
/// `[−a+ε, a−ε]`, each integrated by adaptive Simpson so the logarithmic
/// growth of `g0^{-1}` near `±a` is resolved, and locates the minimizer of `f`. Ties between
/// minimizers are broken towards the nonnegative one.
pub fn build_energy_spec(g0: &AutonomousNonlinearity, resolution: usize) -> Result<EnergySpec> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::Config(format!(
            "energy table resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    if !g0.strictly_increasing() {
        return Err(Error::Spec("g0 must be strictly increasing".into()));
    }
    let a = g0.bound();
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Spec(format!("g0 needs a finite positive bound, got {a}")));
    }
    let edge = a * (1.0 - EDGE_MARGIN);
    let half = resolution.div_ceil(2);
    let step = edge / half as f64;
    let node = |k: usize| -> f64 {
        let j = k as f64 - half as f64;
        edge * j / half as f64
    };
    let inv_table = (0..=2 * half).map(|k| g0.invert(node(k))).collect::<Result<Vec<_>>>()?;
    if inv_table.iter().any(|v| !v.is_finite()) {
        return Err(Error::Spec(
            "g0^{-1} is not finite on the table; use a larger margin or another g0".into(),
        ));
    }
    let cell = |k: usize| -> Result<f64> {
        let inv = |s: f64| g0.invert(s).unwrap_or(f64::NAN);
        let v = adaptive_simpson(
            &inv,
            node(k),
            node(k + 1),
            inv_table[k],
            inv_table[k + 1],
            CELL_TOL * step,
            0,
        );
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Spec(format!("g0^{{-1}} is not integrable on cell {k}")))
        }
    };
    let mut i_table = vec![0.0; 2 * half + 1];
    for k in half + 1..=2 * half {
        i_table[k] = i_table[k - 1] - cell(k - 1)?;
    }
    for k in (0..half).rev() {
        i_table[k] = i_table[k + 1] + cell(k)?;
    }
    let mut spec = EnergySpec {
        g0: g0.clone(),
        a,
        edge,
        step,
        half,
        i_table,
        inv_table,
        u_bar: 0.0,
        f_min: 0.0,
    };
    let f_nodes: Vec<f64> = (0..=2 * half)
        .map(|k| -0.5 * node(k).powi(2) - spec.i_table[k])
        .collect();
    let best = f_nodes.iter().copied().fold(f64::INFINITY, f64::min);
    let near = 1e-12 * best.abs().max(1.0);
    let candidates: Vec<usize> = (0..f_nodes.len()).filter(|&k| f_nodes[k] <= best + near).collect();
    let k = candidates
        .iter()
        .copied()
        .find(|&k| k >= half)
        .unwrap_or(*candidates.last().unwrap());
    let last = 2 * half;
    let edge_band = (2 * half) / 100;
    if (k <= edge_band && f_nodes[0] < f_nodes[1]) || (k >= last - edge_band && f_nodes[last] < f_nodes[last - 1]) {
        return Err(Error::Spec(format!(
            "f keeps decreasing towards ±a (minimum at s = {}); reduce the margin or reject g0",
            node(k)
        )));
    }
    let lo = node(k.saturating_sub(1));
    let hi = node((k + 1).min(last));
    let (u_bar, f_min) = golden_min(|s| spec.f(s).unwrap_or(f64::INFINITY), lo, hi);
    let (u_bar, f_min) = if f_min <= f_nodes[k] {
        (u_bar, f_min)
    } else {
        (node(k), f_nodes[k])
    };
    spec.u_bar = u_bar;
    spec.f_min = f_min;
    Ok(spec)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if depth >= CELL_MAX_DEPTH || err.abs() <= 15.0 * tol {
        return left + right + err / 15.0;
    }
    adaptive_simpson_split(f, a, m, b, fa, fm, fb, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_split(
    f: &impl Fn(f64) -> f64,
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    adaptive_simpson(f, a, m, fa, fm, 0.5 * tol, depth + 1) + adaptive_simpson(f, m, b, fm, fb, 0.5 * tol, depth + 1)
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

impl EnergySpec {
    pub fn g0(&self) -> &AutonomousNonlinearity {
        &self.g0
    }

    /// The bound `a` of `g0`; `Y` is the set `|u| < a`.
    pub fn bound(&self) -> f64 {
        self.a
    }

    pub fn resolution(&self) -> usize {
        2 * self.half
    }

    pub fn u_bar(&self) -> f64 {
        self.u_bar
    }

    pub fn f_min(&self) -> f64 {
        self.f_min
    }

    fn check_y(&self, s: f64) -> Result<()> {
        if s.abs() < self.a {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "|u| = {} is outside Y (a = {})",
                s.abs(),
                self.a
            )))
        }
    }

    /// `i(s)`, Hermite-cubic between table nodes; beyond the table a
    /// midpoint rule integrates `g0^{-1}` directly.
    pub fn i(&self, s: f64) -> Result<f64> {
        self.check_y(s)?;
        if s.abs() > self.edge {
            let sign = s.signum();
            let start = sign * self.edge;
            let base = if sign > 0.0 {
                self.i_table[2 * self.half]
            } else {
                self.i_table[0]
            };
            let h = (s - start) / EDGE_POINTS as f64;
            let mut acc = 0.0;
            for m in 0..EDGE_POINTS {
                acc += self.g0.invert(start + (m as f64 + 0.5) * h)?;
            }
            return Ok(base - h * acc);
        }
        let pos = (s + self.edge) / self.step;
        let k = (pos.floor() as usize).min(2 * self.half - 1);
        let half = self.half as f64;
        let x0 = self.edge * (k as f64 - half) / half;
        let x1 = self.edge * ((k + 1) as f64 - half) / half;
        let h = x1 - x0;
        let tau = (s - x0) / h;
        let (y0, y1) = (self.i_table[k], self.i_table[k + 1]);
        let (d0, d1) = (-self.inv_table[k], -self.inv_table[k + 1]);
        let t2 = tau * tau;
        let t3 = t2 * tau;
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + tau) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1)
    }

    /// `f(s) = −s²/2 − i(s)`.
    pub fn f(&self, s: f64) -> Result<f64> {
        Ok(-0.5 * s * s - self.i(s)?)
    }
}

/// Parts of `L(u)`. `exterior = ½ Σ w_i (1 − m_i) u_i²`, with `m_i` the row
/// mass of the kernel, accounts for interactions with the zero extension of
/// `u` outside the interval; it vanishes when every row has unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyDecomposition {
    pub l1: f64,
    pub l2: f64,
    pub exterior: f64,
    pub total: f64,
}

fn check_field_in_y(u: &Field, spec: &EnergySpec) -> Result<()> {
    let sup = u.sup_norm();
    if sup < spec.a {
        Ok(())
    } else {
        Err(Error::Domain(format!("‖u‖_∞ = {sup} is outside Y (a = {})", spec.a)))
    }
}

/// `L(u) = Σ w_i (f(u_i) − f_min) + ¼ ΣΣ w_i w_j J_ij (u_i − u_j)² + exterior`.
pub fn lyapunov_value(u: &Field, spec: &EnergySpec, kernel: &DiscreteKernel) -> Result<EnergyDecomposition> {
    u.check_grid(kernel.grid())?;
    check_field_in_y(u, spec)?;
    let w = kernel.grid().weights();
    let v = u.values();
    let n = v.len();
    let mut l1 = 0.0;
    for (wi, ui) in w.iter().zip(v) {
        l1 += wi * (spec.f(*ui)? - spec.f_min);
    }
    let m = kernel.matrix();
    let mut l2 = 0.0;
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let s: f64 = row.iter().zip(v).map(|(mij, uj)| mij * (v[i] - uj).powi(2)).sum();
        l2 += w[i] * s;
    }
    l2 *= 0.25;
    let exterior = 0.5
        * w.iter()
            .zip(kernel.row_mass())
            .zip(v)
            .map(|((wi, mi), ui)| wi * (1.0 - mi).max(0.0) * ui * ui)
            .sum::<f64>();
    Ok(EnergyDecomposition {
        l1,
        l2,
        exterior,
        total: l1 + l2 + exterior,
    })
}

/// `I(u) = Σ w_i (Ku_i − g0^{-1}(u_i))(−u_i + g0(Ku_i))`.
pub fn dissipation_i(u: &Field, spec: &EnergySpec, kernel: &DiscreteKernel) -> Result<f64> {
    let ku = kernel.apply(u)?;
    let mut acc = 0.0;
    for ((wi, ui), ki) in kernel.grid().weights().iter().zip(u.values()).zip(ku.values()) {
        acc += wi * (ki - spec.g0.invert(*ui)?) * (-ui + spec.g0.eval(*ki));
    }
    Ok(acc)
}

/// `R(t, u) = Σ w_i (g^{-1}(t, u_i) − g0^{-1}(u_i))(−u_i + g0(Ku_i))`.
pub fn remainder_r(t: f64, u: &Field, g: &TimeNonlinearity, spec: &EnergySpec, kernel: &DiscreteKernel) -> Result<f64> {
    if !g.has_inverse() {
        return Err(Error::Capability(format!("{} has no inverse in x", g.label())));
    }
    let ku = kernel.apply(u)?;
    let mut acc = 0.0;
    for ((wi, ui), ki) in kernel.grid().weights().iter().zip(u.values()).zip(ku.values()) {
        let second = -ui + spec.g0.eval(*ki);
        if second == 0.0 {
            continue;
        }
        acc += wi * (g.invert(t, *ui)? - spec.g0.invert(*ui)?) * second;
    }
    Ok(acc)
}

fn scalar_derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut d = Vec::with_capacity(n);
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    d.push(-(2.0 * h1 + h2) / (h1 * (h1 + h2)) * y[0] + (h1 + h2) / (h1 * h2) * y[1] - h1 / (h2 * (h1 + h2)) * y[2]);
    for i in 1..n - 1 {
        let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        d.push(-h2 / (h1 * (h1 + h2)) * y[i - 1] + (h2 - h1) / (h1 * h2) * y[i] + h1 / (h2 * (h1 + h2)) * y[i + 1]);
    }
    let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
    d.push(
        h2 / (h1 * (h1 + h2)) * y[n - 3] - (h1 + h2) / (h1 * h2) * y[n - 2]
            + (2.0 * h2 + h1) / (h2 * (h1 + h2)) * y[n - 1],
    );
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: EnergyDecomposition,
    pub dissipation: f64,
    pub remainder: f64,
    /// Finite-difference `dL/dt`.
    pub fd_derivative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub samples: Vec<EnergySample>,
    /// `max |dL/dt − (−I + R)|` over the samples.
    pub max_fd_mismatch: f64,
    /// `max |−I + R|` over the samples.
    pub scale: f64,
    /// `max(1e−3·scale, 10·dt²)`.
    pub tolerance: f64,
    pub fd_ok: bool,
    /// Steps where `L` grew by more than `10·dt²`; autonomous runs only.
    pub monotone_violations: usize,
    pub min_dissipation: f64,
    pub max_abs_remainder: f64,
    pub autonomous: bool,
}

impl EnergyReport {
    pub fn relative_mismatch(&self) -> f64 {
        if self.scale > 0.0 {
            self.max_fd_mismatch / self.scale
        } else {
            self.max_fd_mismatch
        }
    }
}

/// Compares the finite-difference derivative of `L` along `traj` with
/// `−I + R`, and in the autonomous case counts increases of `L`.
pub fn energy_decay_check(
    traj: &Trajectory,
    g: &TimeNonlinearity,
    spec: &EnergySpec,
    kernel: &DiscreteKernel,
) -> Result<EnergyReport> {
    if traj.len() < 3 {
        return Err(Error::Domain(format!(
            "energy check needs at least 3 samples, got {}",
            traj.len()
        )));
    }
    let autonomous = g.is_autonomous();
    let rows = traj
        .times()
        .par_iter()
        .zip(traj.states())
        .map(|(&t, u)| -> Result<(EnergyDecomposition, f64, f64)> {
            let e = lyapunov_value(u, spec, kernel)?;
            let i = dissipation_i(u, spec, kernel)?;
            let r = if autonomous {
                0.0
            } else {
                remainder_r(t, u, g, spec, kernel)?
            };
            Ok((e, i, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let totals: Vec<f64> = rows.iter().map(|r| r.0.total).collect();
    let fd = scalar_derivative(traj.times(), &totals);
    let dt = traj.max_step();
    let mut max_fd_mismatch = 0.0_f64;
    let mut scale = 0.0_f64;
    let mut samples = Vec::with_capacity(rows.len());
    for ((&t, (e, i, r)), d) in traj.times().iter().zip(&rows).zip(&fd) {
        let predicted = -i + r;
        scale = scale.max(predicted.abs());
        max_fd_mismatch = max_fd_mismatch.max((d - predicted).abs());
        samples.push(EnergySample {
            t,
            energy: *e,
            dissipation: *i,
            remainder: *r,
            fd_derivative: *d,
        });
    }
    let tolerance = (1e-3 * scale).max(10.0 * dt * dt);
    let monotone_violations = if autonomous {
        totals.windows(2).filter(|w| w[1] > w[0] + 10.0 * dt * dt).count()
    } else {
        0
    };
    Ok(EnergyReport {
        max_fd_mismatch,
        scale,
        tolerance,
        fd_ok: max_fd_mismatch <= tolerance,
        monotone_violations,
        min_dissipation: rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        max_abs_remainder: rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max),
        autonomous,
        samples,
    })
}

#[derive(Clone, Debug)]
pub struct EquilibriumSet {
    pub members: Vec<Field>,
    pub residuals: Vec<f64>,
    pub energies: Vec<f64>,
    /// Distinct energy values, increasing, separated by more than `LEVEL_TOL`.
    pub levels: Vec<f64>,
    /// Index into `levels` for each member.
    pub member_levels: Vec<usize>,
    /// Seeds from which no equilibrium was found.
    pub skipped: Vec<usize>,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn fixed_point_residual(u: &[f64], kernel: &DiscreteKernel, g0: &AutonomousNonlinearity, ku: &mut [f64]) -> f64 {
    kernel.apply_slice(u, ku);
    u.iter()
        .zip(ku.iter())
        .map(|(ui, ki)| (ui - g0.eval(*ki)).abs())
        .fold(0.0, f64::max)
}

fn solve_from_seed(
    seed: &Field,
    kernel: &DiscreteKernel,
    g0: &AutonomousNonlinearity,
    tol: f64,
) -> Option<(Vec<f64>, f64)> {
    let n = seed.len();
    let mut ku = vec![0.0; n];
    let mut u = seed.values().to_vec();
    let mut res = fixed_point_residual(&u, kernel, g0, &mut ku);
    if res < tol {
        return Some((u, res));
    }
    let picard_tol = tol.max(1e-8);
    for _ in 0..PICARD_MAX_ITER {
        for (ui, ki) in u.iter_mut().zip(&ku) {
            *ui = (1.0 - DAMPING) * *ui + DAMPING * g0.eval(*ki);
        }
        res = fixed_point_residual(&u, kernel, g0, &mut ku);
        if !res.is_finite() {
            return None;
        }
        if res < picard_tol {
            break;
        }
    }
    let m = kernel.matrix();
    for _ in 0..NEWTON_MAX_ITER {
        if res < 1e-14 {
            break;
        }
        let jac = DMatrix::from_fn(n, n, |i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            d - g0.derivative(ku[i]) * m[i * n + j]
        });
        let rhs = DVector::from_iterator(n, u.iter().zip(&ku).map(|(ui, ki)| -(ui - g0.eval(*ki))));
        let delta = jac.lu().solve(&rhs)?;
        let trial: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        let mut trial_ku = vec![0.0; n];
        let trial_res = fixed_point_residual(&trial, kernel, g0, &mut trial_ku);
        if !(trial_res < res) {
            break;
        }
        u = trial;
        ku = trial_ku;
        res = trial_res;
    }
    (res < tol).then_some((u, res))
}

/// Solves `u = g0(Ku)` from each seed by damped Picard iteration with a
/// Newton polish, then merges solutions closer than `DEDUP_TOL` in `L^∞`.
/// Seeds that do not converge are skipped with a warning.
pub fn find_equilibria(
    spec: &EnergySpec,
    kernel: &DiscreteKernel,
    seeds: &Ensemble,
    tol: f64,
) -> Result<EquilibriumSet> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "equilibrium tolerance must be positive, got {tol}"
        )));
    }
    for s in seeds.members() {
        s.check_grid(kernel.grid())?;
    }
    let solved: Vec<Option<(Vec<f64>, f64)>> = seeds
        .members()
        .par_iter()
        .map(|s| solve_from_seed(s, kernel, &spec.g0, tol))
        .collect();
    let mut members: Vec<Field> = Vec::new();
    let mut residuals = Vec::new();
    let mut skipped = Vec::new();
    for (idx, (seed, outcome)) in seeds.members().iter().zip(solved).enumerate() {
        let Some((values, res)) = outcome else {
            warn!("equilibrium search from seed {idx} did not converge");
            skipped.push(idx);
            continue;
        };
        let field = Field::new(seed.grid().clone(), values)?;
        let duplicate = members.iter().any(|m| {
            m.distance(&field, f64::INFINITY)
                .map(|d| d < DEDUP_TOL)
                .unwrap_or(false)
        });
        if !duplicate {
            members.push(field);
            residuals.push(res);
        }
    }
    let energies = members
        .iter()
        .map(|m| lyapunov_value(m, spec, kernel).map(|e| e.total))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = energies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut levels: Vec<f64> = Vec::new();
    for e in sorted {
        if levels.last().is_none_or(|l| e - l > LEVEL_TOL) {
            levels.push(e);
        }
    }
    let member_levels = energies
        .iter()
        .map(|e| levels.iter().rposition(|l| *l <= e + 1e-15).unwrap_or(0))
        .collect();
    Ok(EquilibriumSet {
        members,
        residuals,
        energies,
        levels,
        member_levels,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    /// The final state is within tolerance of more than one level.
    Unresolved,
    NotConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub level_index: Option<usize>,
    pub level: Option<f64>,
    pub nearest_member: Option<usize>,
    /// Distance from the final state to the nearest equilibrium.
    pub final_dist: f64,
    /// Largest nearest-equilibrium distance over the trajectory tail.
    pub tail_dist: f64,
    pub single_equilibrium: bool,
    pub tol: f64,
}

/// Nearest-equilibrium distances of each sample, with the index of the
/// nearest member.
pub fn nearest_equilibrium(u: &Field, eq: &EquilibriumSet, p: f64) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (k, m) in eq.members.iter().enumerate() {
        let d = u.distance(m, p)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((k, d));
        }
    }
    Ok(best)
}

/// LaSalle-type verdict from the last tenth of the trajectory.
pub fn convergence_verdict(traj: &Trajectory, eq: &EquilibriumSet, p: f64, tol: f64) -> Result<Verdict> {
    check_exponent(p)?;
    let final_state = traj.final_state();
    let Some((nearest, final_dist)) = nearest_equilibrium(final_state, eq, p)? else {
        return Ok(Verdict {
            outcome: Outcome::NotConverged,
            level_index: None,
            level: None,
            nearest_member: None,
            final_dist: f64::INFINITY,
            tail_dist: f64::INFINITY,
            single_equilibrium: false,
            tol,
        });
    };
    let tail_start = traj.len() - (traj.len() / 10).max(1);
    let mut tail_dist = 0.0_f64;
    let mut single_dist = 0.0_f64;
    for u in &traj.states()[tail_start..] {
        let (_, d) = nearest_equilibrium(u, eq, p)?.expect("set is non-empty");
        tail_dist = tail_dist.max(d);
        single_dist = single_dist.max(u.distance(&eq.members[nearest], p)?);
    }
    let mut close_levels: Vec<usize> = Vec::new();
    for (k, m) in eq.members.iter().enumerate() {
        if final_state.distance(m, p)? < tol && !close_levels.contains(&eq.member_levels[k]) {
            close_levels.push(eq.member_levels[k]);
        }
    }
    let (outcome, level_index) = match close_levels.as_slice() {
        [] => (Outcome::NotConverged, None),
        [one] => (Outcome::Converged, Some(*one)),
        _ => (Outcome::Unresolved, None),
    };
    Ok(Verdict {
        outcome,
        level_index,
        level: level_index.map(|k| eq.levels[k]),
        nearest_member: Some(nearest),
        final_dist,
        tail_dist,
        single_equilibrium: single_dist < tol,
        tol,
    })
}
