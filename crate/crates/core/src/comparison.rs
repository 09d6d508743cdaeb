//! Sub- and supersolutions, the ordering they enforce, monotone Picard
//! iteration and invariant intervals.
//!
//! Pointwise ("almost everywhere") hypotheses are checked nodewise on the
//! quadrature grid.

use rayon::prelude::*;
use serde::Serialize;

use crate::attractor::Ensemble;
use crate::error::{Error, Result};
use crate::evolution::{integrate, plan_window, sup_diff, PicardWindow, ProcessConfig, Trajectory};
use crate::nonlinearity::{linspace, TimeNonlinearity};
use crate::spatial::{DiscreteKernel, Field};

const ORDER_SAMPLES: usize = 100;
const MONOTONE_TOL: f64 = 1e-10;
const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Nonlinearities `f ≤ g ≤ h` with increasing `f`, `h`, and ordered data
/// `v_τ ≤ u_τ ≤ V_τ`.
#[derive(Clone, Debug)]
pub struct OrderedTriple {
    pub f: TimeNonlinearity,
    pub g: TimeNonlinearity,
    pub h: TimeNonlinearity,
    pub v_tau: Field,
    pub u_tau: Field,
    pub big_v_tau: Field,
}

fn first_disorder(lower: &Field, upper: &Field) -> Option<usize> {
    lower.values().iter().zip(upper.values()).position(|(a, b)| a > b)
}

impl OrderedTriple {
    /// Checks the monotonicity claims and the nodewise order of the data.
    pub fn new(
        f: TimeNonlinearity,
        g: TimeNonlinearity,
        h: TimeNonlinearity,
        v_tau: Field,
        u_tau: Field,
        big_v_tau: Field,
    ) -> Result<Self> {
        if !f.monotone_in_x() || !h.monotone_in_x() {
            return Err(Error::Precondition("f and h must be increasing in x".into()));
        }
        if !v_tau.same_grid(&u_tau) || !u_tau.same_grid(&big_v_tau) {
            return Err(Error::Dimension("initial data live on different grids".into()));
        }
        for (name, lower, upper) in [("v_τ ≤ u_τ", &v_tau, &u_tau), ("u_τ ≤ V_τ", &u_tau, &big_v_tau)] {
            if let Some(i) = first_disorder(lower, upper) {
                return Err(Error::Precondition(format!(
                    "{name} fails at node {i} (x = {})",
                    lower.grid().nodes()[i]
                )));
            }
        }
        Ok(Self {
            f,
            g,
            h,
            v_tau,
            u_tau,
            big_v_tau,
        })
    }

    /// Samples `f ≤ g ≤ h` on `samples × samples` points of the box.
    pub fn certify(&self, t_range: (f64, f64), x_range: (f64, f64), samples: usize) -> Result<()> {
        if samples < ORDER_SAMPLES {
            return Err(Error::Config(format!(
                "order certification needs at least {ORDER_SAMPLES} samples, got {samples}"
            )));
        }
        for t in linspace(t_range.0, t_range.1, samples) {
            for x in linspace(x_range.0, x_range.1, samples) {
                let (f, g, h) = (self.f.eval(t, x), self.g.eval(t, x), self.h.eval(t, x));
                if !(f <= g + 1e-12 && g <= h + 1e-12) {
                    return Err(Error::Precondition(format!(
                        "f <= g <= h fails at t = {t}, x = {x}: {f}, {g}, {h}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn x_radius(&self) -> f64 {
        [&self.f, &self.g, &self.h]
            .iter()
            .map(|g| g.default_x_radius())
            .fold(0.0, f64::max)
            .max(self.v_tau.sup_norm())
            .max(self.big_v_tau.sup_norm())
    }
}

/// Second-order time derivative of the samples at every output time:
/// three-point centered differences inside, one-sided at both ends.
pub fn time_derivative(traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    let t = traj.times();
    let s = traj.states();
    let n = t.len();
    if n < 3 {
        return Err(Error::Domain(format!(
            "time derivative needs at least 3 samples, got {n}"
        )));
    }
    let combo = |i: [usize; 3], c: [f64; 3]| -> Vec<f64> {
        let (a, b, d) = (s[i[0]].values(), s[i[1]].values(), s[i[2]].values());
        (0..a.len()).map(|k| c[0] * a[k] + c[1] * b[k] + c[2] * d[k]).collect()
    };
    let mut out = Vec::with_capacity(n);
    let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
    out.push(combo(
        [0, 1, 2],
        [
            -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
            (h1 + h2) / (h1 * h2),
            -h1 / (h2 * (h1 + h2)),
        ],
    ));
    for i in 1..n - 1 {
        let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        out.push(combo(
            [i - 1, i, i + 1],
            [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))],
        ));
    }
    let (h1, h2) = (t[n - 2] - t[n - 3], t[n - 1] - t[n - 2]);
    out.push(combo(
        [n - 3, n - 2, n - 1],
        [
            h2 / (h1 * (h1 + h2)),
            -(h1 + h2) / (h1 * h2),
            (2.0 * h2 + h1) / (h2 * (h1 + h2)),
        ],
    ));
    Ok(out)
}

fn defect(traj: &Trajectory, kernel: &DiscreteKernel, g: &TimeNonlinearity, sign: f64) -> Result<Vec<f64>> {
    let dvdt = time_derivative(traj)?;
    traj.times()
        .iter()
        .zip(traj.states())
        .zip(&dvdt)
        .map(|((&t, v), d)| {
            let kv = kernel.apply(v)?;
            Ok(v.values()
                .iter()
                .zip(kv.values())
                .zip(d)
                .map(|((vi, ki), di)| sign * (di + vi - g.eval(t, *ki)))
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect()
}

/// Per-sample `max_x (∂t v + v − f(t, Kv))`; `v` is a subsolution when every
/// entry is at most the tolerance.
pub fn subsolution_residual(v: &Trajectory, kernel: &DiscreteKernel, f: &TimeNonlinearity) -> Result<Vec<f64>> {
    defect(v, kernel, f, 1.0)
}

/// Per-sample `max_x (−V + h(t, KV) − ∂t V)`; `V` is a supersolution when
/// every entry is at most the tolerance.
pub fn supersolution_residual(big_v: &Trajectory, kernel: &DiscreteKernel, h: &TimeNonlinearity) -> Result<Vec<f64>> {
    defect(big_v, kernel, h, -1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `v ≤ u` failed.
    Lower,
    /// `u ≤ V` failed.
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderViolation {
    pub side: Side,
    pub t: f64,
    pub node: usize,
    pub x: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub ordered: bool,
    /// `min (u − v)` over output times and nodes.
    pub min_gap_lower: f64,
    /// `min (V − u)` over output times and nodes.
    pub min_gap_upper: f64,
    pub tol: f64,
    pub first_violation: Option<OrderViolation>,
}

/// Integrates the `f`, `g` and `h` problems on `[τ, t]` and checks
/// `v ≤ u ≤ V` nodewise at every output time within `1e−8 + 10·dt²`.
pub fn verify_comparison(
    triple: &OrderedTriple,
    tau: f64,
    t: f64,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
) -> Result<ComparisonReport> {
    let r = triple.x_radius();
    triple.certify((tau, t), (-r, r), ORDER_SAMPLES)?;
    let (lower, (middle, upper)) = rayon::join(
        || integrate(&triple.v_tau, tau, t, cfg, kernel, &triple.f),
        || {
            rayon::join(
                || integrate(&triple.u_tau, tau, t, cfg, kernel, &triple.g),
                || integrate(&triple.big_v_tau, tau, t, cfg, kernel, &triple.h),
            )
        },
    );
    let (lower, middle, upper) = (lower?, middle?, upper?);
    let tol = 1e-8 + 10.0 * cfg.dt * cfg.dt;
    let nodes = kernel.grid().nodes();
    let mut min_gap_lower = f64::INFINITY;
    let mut min_gap_upper = f64::INFINITY;
    let mut first_violation = None;
    for (k, &s) in middle.times().iter().enumerate() {
        let (v, u, big_v) = (
            lower.states()[k].values(),
            middle.states()[k].values(),
            upper.states()[k].values(),
        );
        for i in 0..u.len() {
            let gaps = [(Side::Lower, u[i] - v[i]), (Side::Upper, big_v[i] - u[i])];
            min_gap_lower = min_gap_lower.min(gaps[0].1);
            min_gap_upper = min_gap_upper.min(gaps[1].1);
            for (side, gap) in gaps {
                if gap < -tol && first_violation.is_none() {
                    first_violation = Some(OrderViolation {
                        side,
                        t: s,
                        node: i,
                        x: nodes[i],
                        gap,
                    });
                }
            }
        }
    }
    Ok(ComparisonReport {
        ordered: first_violation.is_none(),
        min_gap_lower,
        min_gap_upper,
        tol,
        first_violation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

#[derive(Clone, Debug)]
pub struct MonotoneSequence {
    /// `G^n(u_τ)` at time `T` for `n = 1..=iterates`.
    pub iterates: Vec<Field>,
    /// Set when the start is a sub- or supersolution path.
    pub direction: Option<Direction>,
}

/// Iterates `G` from the constant path `φ ≡ u_τ` on `[τ, T]`. A start that
/// is a subsolution (supersolution) gives a non-decreasing (non-increasing)
/// sequence; the direction set by the first step is enforced on every later
/// one to `1e−10`.
pub fn monotone_picard(
    u_tau: &Field,
    tau: f64,
    t_end: f64,
    kernel: &DiscreteKernel,
    f: &TimeNonlinearity,
    iterates: usize,
) -> Result<MonotoneSequence> {
    if !f.monotone_in_x() {
        return Err(Error::Precondition(
            "monotone Picard iteration needs an increasing f".into(),
        ));
    }
    if !(t_end > tau) || iterates == 0 {
        return Err(Error::Config(
            "monotone Picard needs T > τ and at least one iterate".into(),
        ));
    }
    u_tau.check_grid(kernel.grid())?;
    let plan = plan_window(f, tau, t_end, u_tau.values())?;
    if plan.width < t_end - tau {
        return Err(Error::Precondition(format!(
            "[{tau}, {t_end}] is wider than the contraction window {} (k_M = {})",
            plan.width, plan.lipschitz
        )));
    }
    let window = PicardWindow::new(kernel, f, tau, t_end);
    let mut phi = window.constant_path(u_tau.values());
    let mut direction = None;
    let mut out = Vec::with_capacity(iterates);
    for n in 1..=iterates {
        let next = window.apply(&phi);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (a, b) in next.iter().zip(&phi) {
            for (x, y) in a.iter().zip(b) {
                lo = lo.min(x - y);
                hi = hi.max(x - y);
            }
        }
        if n == 1 {
            direction = if lo >= -MONOTONE_TOL {
                Some(Direction::NonDecreasing)
            } else if hi <= MONOTONE_TOL {
                Some(Direction::NonIncreasing)
            } else {
                None
            };
        } else {
            let broken = match direction {
                Some(Direction::NonDecreasing) => lo < -MONOTONE_TOL,
                Some(Direction::NonIncreasing) => hi > MONOTONE_TOL,
                None => false,
            };
            if broken {
                return Err(Error::Bound(format!(
                    "Picard iterate {n} breaks the {:?} order (change range [{lo}, {hi}], total change {})",
                    direction.unwrap(),
                    sup_diff(&next, &phi)
                )));
            }
        }
        out.push(Field::from_raw(u_tau.grid().clone(), next.last().unwrap().clone()));
        phi = next;
    }
    Ok(MonotoneSequence {
        iterates: out,
        direction,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Escape {
    pub member: usize,
    pub t: f64,
    pub node: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub ok: bool,
    pub tol: f64,
    /// Smallest distance to the interval ends over all samples; negative on escape.
    pub min_margin: f64,
    pub escape: Option<Escape>,
}

fn equilibrium_residual(u: &Field, t: f64, kernel: &DiscreteKernel, g: &TimeNonlinearity) -> Result<f64> {
    let ku = kernel.apply(u)?;
    Ok(u.values()
        .iter()
        .zip(ku.values())
        .map(|(ui, ki)| (g.eval(t, *ki) - ui).abs())
        .fold(0.0, f64::max))
}

/// Evolves every sample on `[τ, τ + horizon]` under `g` and checks that it
/// stays in `[v_eq, V_eq]` up to `1e−8 + 10·dt²`. `v_eq` must be an
/// equilibrium of the `f` problem and `V_eq` of the `h` problem.
#[allow(clippy::too_many_arguments)]
pub fn invariant_interval_check(
    v_eq: &Field,
    big_v_eq: &Field,
    samples: &Ensemble,
    tau: f64,
    horizon: f64,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
    f: &TimeNonlinearity,
    h: &TimeNonlinearity,
) -> Result<InvarianceReport> {
    if !(horizon >= 0.0) {
        return Err(Error::Domain(format!("horizon must be non-negative, got {horizon}")));
    }
    if let Some(i) = first_disorder(v_eq, big_v_eq) {
        return Err(Error::Precondition(format!("v_eq <= V_eq fails at node {i}")));
    }
    for t in linspace(tau, tau + horizon, 11) {
        for (name, u, map) in [("v_eq", v_eq, f), ("V_eq", big_v_eq, h)] {
            let r = equilibrium_residual(u, t, kernel, map)?;
            if !(r < EQUILIBRIUM_TOL) {
                return Err(Error::Precondition(format!(
                    "{name} is not an equilibrium at t = {t} (residual {r})"
                )));
            }
        }
    }
    for (m, u) in samples.members().iter().enumerate() {
        if first_disorder(v_eq, u)
            .or_else(|| first_disorder(u, big_v_eq))
            .is_some()
        {
            return Err(Error::Precondition(format!("sample {m} is outside [v_eq, V_eq]")));
        }
    }
    let tol = 1e-8 + 10.0 * cfg.dt * cfg.dt;
    let trajectories = samples
        .members()
        .par_iter()
        .map(|u| integrate(u, tau, tau + horizon, cfg, kernel, g))
        .collect::<Result<Vec<_>>>()?;
    let mut min_margin = f64::INFINITY;
    let mut escape = None;
    for (m, traj) in trajectories.iter().enumerate() {
        for (&t, s) in traj.times().iter().zip(traj.states()) {
            for (i, ((u, lo), hi)) in s.values().iter().zip(v_eq.values()).zip(big_v_eq.values()).enumerate() {
                let margin = (u - lo).min(hi - u);
                min_margin = min_margin.min(margin);
                if margin < -tol && escape.is_none() {
                    escape = Some(Escape {
                        member: m,
                        t,
                        node: i,
                        value: *u,
                    });
                }
            }
        }
    }
    Ok(InvarianceReport {
        ok: escape.is_none(),
        tol,
        min_margin,
        escape,
    })
}
