//! The evolution process `S(t, τ)` of `∂t u = −u + g(t, Ku)`.
//!
//! Time stepping uses exponential integrators built on the mild form
//! `u(t) = e^{−(t−τ)} u_τ + ∫_τ^t e^{−(t−s)} g(s, Ku(s)) ds`, so the linear
//! part is integrated exactly. [`picard_solve`] iterates the same integral
//! operator directly as an independent route to the solution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{lipschitz_estimate, sup_abs, TimeNonlinearity};
use crate::spatial::{DiscreteKernel, Field};

/// Solutions with `‖u‖_∞` above this are treated as blown up.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// Inner sub-intervals per Picard contraction window.
pub const PICARD_SUBINTERVALS: usize = 32;

const MAX_WINDOW_HALVINGS: usize = 60;
const MAX_RICHARDSON_DEPTH: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExpEuler,
    ExpMidpoint,
}

impl Method {
    pub fn order(self) -> i32 {
        match self {
            Self::ExpEuler => 1,
            Self::ExpMidpoint => 2,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_euler" => Ok(Self::ExpEuler),
            "exp_midpoint" => Ok(Self::ExpMidpoint),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ExpEuler => "exp_euler",
            Self::ExpMidpoint => "exp_midpoint",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessConfig {
    pub dt: f64,
    pub method: Method,
    /// Step-doubling error control on every base step.
    pub richardson: bool,
    /// Local error target when `richardson` is on.
    pub tol: f64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            method: Method::ExpEuler,
            richardson: false,
            tol: 1e-6,
        }
    }
}

impl ProcessConfig {
    pub fn new(dt: f64, method: Method) -> Result<Self> {
        let cfg = Self {
            dt,
            method,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_richardson(mut self, tol: f64) -> Result<Self> {
        self.richardson = true;
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Sampled solution; `states[0]` is the initial condition as supplied.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Field>,
}

impl Trajectory {
    /// Assembles a trajectory from samples. Times must increase strictly.
    pub fn new(times: Vec<f64>, states: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::Dimension(format!(
                "trajectory has {} times and {} states",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("trajectory times must increase strictly".into()));
        }
        if states.iter().any(|s| !s.same_grid(&states[0])) {
            return Err(Error::Dimension("trajectory states live on different grids".into()));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Field] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &Field {
        &self.states[0]
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Largest spacing between consecutive samples.
    pub fn max_step(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn into_final_state(mut self) -> Field {
        self.states.pop().expect("trajectory is never empty")
    }
}

/// `F(t,u) − u = −u + g(t, Ku)` nodewise.
pub fn rhs(t: f64, u: &Field, kernel: &DiscreteKernel, g: &TimeNonlinearity) -> Result<Field> {
    let ku = kernel.apply(u)?;
    let values = u
        .values()
        .iter()
        .zip(ku.values())
        .map(|(ui, ki)| -ui + g.eval(t, *ki))
        .collect();
    Field::new(u.grid().clone(), values)
}

fn nonlinear_term(t: f64, u: &[f64], kernel: &DiscreteKernel, g: &TimeNonlinearity, out: &mut [f64]) {
    kernel.apply_slice(u, out);
    for v in out.iter_mut() {
        *v = g.eval(t, *v);
    }
}

fn exp_euler_values(t: f64, u: &[f64], h: f64, kernel: &DiscreteKernel, g: &TimeNonlinearity) -> Vec<f64> {
    let decay = (-h).exp();
    let gain = -(-h).exp_m1();
    let mut n = vec![0.0; u.len()];
    nonlinear_term(t, u, kernel, g, &mut n);
    u.iter().zip(&n).map(|(ui, ni)| decay * ui + gain * ni).collect()
}

fn step_values(
    t: f64,
    u: &[f64],
    h: f64,
    method: Method,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
) -> Result<Vec<f64>> {
    let out = match method {
        Method::ExpEuler => exp_euler_values(t, u, h, kernel, g),
        Method::ExpMidpoint => {
            let half = exp_euler_values(t, u, 0.5 * h, kernel, g);
            let decay = (-h).exp();
            let gain = -(-h).exp_m1();
            let mut n = vec![0.0; u.len()];
            nonlinear_term(t + 0.5 * h, &half, kernel, g, &mut n);
            u.iter().zip(&n).map(|(ui, ni)| decay * ui + gain * ni).collect()
        }
    };
    check_blow_up(&out, t + h)?;
    Ok(out)
}

fn check_blow_up(values: &[f64], t: f64) -> Result<()> {
    if values.iter().any(|v| !(v.abs() <= BLOW_UP_THRESHOLD)) {
        Err(Error::BlowUp { t })
    } else {
        Ok(())
    }
}

/// One step of size `h` from `(t, u)`.
///
/// `exp_euler`: `e^{−h} u + (1 − e^{−h}) g(t, Ku)`.
/// `exp_midpoint`: the nonlinear term is frozen at `(t + h/2, K u_half)` with
/// `u_half` an `exp_euler` half-step.
pub fn step(
    t: f64,
    u: &Field,
    h: f64,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
) -> Result<Field> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    u.check_grid(kernel.grid())?;
    let values = step_values(t, u.values(), h, cfg.method, kernel, g)?;
    Ok(Field::from_raw(u.grid().clone(), values))
}

fn advance(
    t: f64,
    u: &[f64],
    h: f64,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
    depth: usize,
) -> Result<Vec<f64>> {
    if !cfg.richardson {
        return step_values(t, u, h, cfg.method, kernel, g);
    }
    let full = step_values(t, u, h, cfg.method, kernel, g)?;
    let mid = step_values(t, u, 0.5 * h, cfg.method, kernel, g)?;
    let halves = step_values(t + 0.5 * h, &mid, 0.5 * h, cfg.method, kernel, g)?;
    let err = full.iter().zip(&halves).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    if err <= cfg.tol {
        let denom = 2f64.powi(cfg.method.order()) - 1.0;
        return Ok(halves
            .iter()
            .zip(&full)
            .map(|(fine, coarse)| fine + (fine - coarse) / denom)
            .collect());
    }
    if depth >= MAX_RICHARDSON_DEPTH {
        return Err(Error::Convergence(format!(
            "step-doubling could not reach tol {} at t = {t} (error {err})",
            cfg.tol
        )));
    }
    let first = advance(t, u, 0.5 * h, cfg, kernel, g, depth + 1)?;
    advance(t + 0.5 * h, &first, 0.5 * h, cfg, kernel, g, depth + 1)
}

/// Sample times `τ, τ+dt, …` ending exactly at `t`.
pub(crate) fn time_grid(tau: f64, t: f64, dt: f64) -> Vec<f64> {
    let span = t - tau;
    let full = (span / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=full).map(|k| tau + k as f64 * dt).collect();
    let last = *times.last().unwrap();
    let slack = 1e-9 * dt;
    if t - last > slack {
        times.push(t);
    } else if times.len() > 1 {
        *times.last_mut().unwrap() = t;
    }
    times
}

/// `S(t, τ) u_τ` sampled on the base step grid; the last sample is at `t`.
pub fn integrate(
    u_tau: &Field,
    tau: f64,
    t: f64,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !(t >= tau) || !tau.is_finite() || !t.is_finite() {
        return Err(Error::Domain(format!(
            "integration needs finite t >= τ, got τ = {tau}, t = {t}"
        )));
    }
    u_tau.check_grid(kernel.grid())?;
    let times = time_grid(tau, t, cfg.dt);
    let mut states = Vec::with_capacity(times.len());
    states.push(u_tau.clone());
    let mut current = u_tau.values().to_vec();
    for w in times.windows(2) {
        current = advance(w[0], &current, w[1] - w[0], cfg, kernel, g, 0)?;
        states.push(Field::from_raw(u_tau.grid().clone(), current.clone()));
    }
    Ok(Trajectory { times, states })
}

/// Final state of [`integrate`] without keeping the samples.
pub fn evolve(
    u_tau: &Field,
    tau: f64,
    t: f64,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
) -> Result<Field> {
    cfg.validate()?;
    if !(t >= tau) {
        return Err(Error::Domain(format!(
            "integration needs t >= τ, got τ = {tau}, t = {t}"
        )));
    }
    u_tau.check_grid(kernel.grid())?;
    let times = time_grid(tau, t, cfg.dt);
    let mut current = u_tau.values().to_vec();
    for w in times.windows(2) {
        current = advance(w[0], &current, w[1] - w[0], cfg, kernel, g, 0)?;
    }
    Ok(Field::from_raw(u_tau.grid().clone(), current))
}

/// The integral operator `G` on one contraction window, discretized on a
/// uniform inner time grid. The convolution integrates `e^{−(t−s)}` exactly
/// against the piecewise-linear interpolant of `g(s, Kφ(s))`; both weights
/// are positive, so `G` stays monotone when `g` is increasing.
pub(crate) struct PicardWindow<'a> {
    kernel: &'a DiscreteKernel,
    g: &'a TimeNonlinearity,
    t0: f64,
    h: f64,
    times: Vec<f64>,
}

impl<'a> PicardWindow<'a> {
    pub(crate) fn new(kernel: &'a DiscreteKernel, g: &'a TimeNonlinearity, t0: f64, t1: f64) -> Self {
        let h = (t1 - t0) / PICARD_SUBINTERVALS as f64;
        let mut times: Vec<f64> = (0..=PICARD_SUBINTERVALS).map(|m| t0 + m as f64 * h).collect();
        times[PICARD_SUBINTERVALS] = t1;
        Self {
            kernel,
            g,
            t0,
            h,
            times,
        }
    }

    /// The constant-in-time path `φ(t) ≡ u`.
    pub(crate) fn constant_path(&self, u: &[f64]) -> Vec<Vec<f64>> {
        vec![u.to_vec(); self.times.len()]
    }

    /// `(Gφ)(t_m) = e^{−(t_m−t0)} φ(t0) + ∫_{t0}^{t_m} e^{−(t_m−s)} g(s, Kφ(s)) ds`.
    pub(crate) fn apply(&self, phi: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = phi[0].len();
        let h = self.h;
        let decay = (-h).exp();
        let gain = -(-h).exp_m1();
        // ∫_0^h e^{−(h−s)} (s/h) ds and its complement.
        let w1 = 1.0 - gain / h;
        let w0 = gain / h - decay;
        let nonlinear: Vec<Vec<f64>> = phi
            .iter()
            .zip(&self.times)
            .map(|(p, &t)| {
                let mut out = vec![0.0; n];
                nonlinear_term(t, p, self.kernel, self.g, &mut out);
                out
            })
            .collect();
        let initial = &phi[0];
        let mut conv = vec![0.0; n];
        let mut out = Vec::with_capacity(phi.len());
        out.push(initial.clone());
        for m in 1..phi.len() {
            let e = (-(self.times[m] - self.t0)).exp();
            let (prev, cur) = (&nonlinear[m - 1], &nonlinear[m]);
            for i in 0..n {
                conv[i] = decay * conv[i] + w0 * prev[i] + w1 * cur[i];
            }
            out.push(initial.iter().zip(&conv).map(|(u, c)| e * u + c).collect());
        }
        out
    }
}

pub(crate) fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Contraction data for a Picard window starting at `(s, u_s)` with the
/// paper-style ball `|φ − u_s| ≤ L`, `L = 1 + ‖u_s‖_∞`.
pub(crate) struct WindowPlan {
    pub(crate) width: f64,
    pub(crate) ball: f64,
    pub(crate) lipschitz: f64,
}

pub(crate) fn plan_window(g: &TimeNonlinearity, start: f64, end: f64, u_start: &[f64]) -> Result<WindowPlan> {
    let sup_u = u_start.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let ball = 1.0 + sup_u;
    let radius = ball + sup_u;
    let k_m = lipschitz_estimate(g, (start, end), (-radius, radius), 201)?;
    let bound = sup_abs(g, (start, end), (-radius, radius), 201);
    let mut width = end - start;
    for _ in 0..MAX_WINDOW_HALVINGS {
        let contracts = k_m * width < 0.5;
        let invariant = -(-width).exp_m1() * sup_u + bound * width <= ball;
        if contracts && invariant {
            return Ok(WindowPlan {
                width,
                ball,
                lipschitz: k_m,
            });
        }
        width *= 0.5;
    }
    Err(Error::Convergence(format!(
        "no contraction window found at t = {start} (Lipschitz estimate {k_m})"
    )))
}

#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub state: Field,
    /// Number of contraction windows `[τ, T]` was split into.
    pub windows: usize,
    /// Largest number of `G` applications used in any window.
    pub iterations: usize,
    /// Last sup-norm change between iterates, maximized over windows.
    pub residual: f64,
}

/// Solves the mild equation on `[τ, T]` as a fixed point of `G`, splitting
/// the interval into windows where `G` contracts.
pub fn picard_solve(
    u_tau: &Field,
    tau: f64,
    t_end: f64,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
    max_iter: usize,
    tol: f64,
) -> Result<PicardSolution> {
    if !(t_end >= tau) {
        return Err(Error::Domain(format!(
            "Picard needs T >= τ, got τ = {tau}, T = {t_end}"
        )));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Config("Picard needs tol > 0 and max_iter >= 1".into()));
    }
    u_tau.check_grid(kernel.grid())?;
    let mut s = tau;
    let mut current = u_tau.values().to_vec();
    let mut windows = 0;
    let mut iterations = 0;
    let mut residual = 0.0_f64;
    while t_end - s > 1e-12 * (1.0 + t_end.abs()) {
        let plan = plan_window(g, s, t_end, &current)?;
        let s1 = if plan.width >= t_end - s { t_end } else { s + plan.width };
        let window = PicardWindow::new(kernel, g, s, s1);
        let mut phi = window.constant_path(&current);
        let mut converged = false;
        let mut change = f64::INFINITY;
        for it in 1..=max_iter {
            let next = window.apply(&phi);
            change = sup_diff(&next, &phi);
            let outside = next
                .iter()
                .flat_map(|p| p.iter().zip(&current).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if outside > plan.ball {
                return Err(Error::Convergence(format!(
                    "Picard iterate left the ball of radius {} on [{s}, {s1}] (k_M = {})",
                    plan.ball, plan.lipschitz
                )));
            }
            phi = next;
            iterations = iterations.max(it);
            if change <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Iteration {
                iterations: max_iter,
                residual: change,
            });
        }
        residual = residual.max(change);
        current = phi.pop().expect("window has samples");
        check_blow_up(&current, s1)?;
        s = s1;
        windows += 1;
    }
    Ok(PicardSolution {
        state: Field::from_raw(u_tau.grid().clone(), current),
        windows,
        iterations,
        residual,
    })
}
