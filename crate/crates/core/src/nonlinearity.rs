//! Time-dependent nonlinearities `g(t, x)`, their autonomous limits `g0(x)`,
//! and sampling-based certificates for the growth and Lipschitz constants.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

type ScalarFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type InverseFn2 = Arc<dyn Fn(f64, f64) -> Result<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const INVERSE_TOL: f64 = 1e-12;
const INVERSE_MAX_ITER: usize = 200;

/// `n` evenly spaced points with exact endpoints; a single point when
/// the interval is degenerate.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || lo == hi {
        return vec![lo];
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    v[n - 1] = hi;
    v
}

fn artanh_checked(y: f64, amp: f64, slope: f64) -> Result<f64> {
    let r = y / amp;
    if !(r.abs() < 1.0) {
        return Err(Error::Range {
            value: y,
            bound: amp.abs(),
        });
    }
    Ok(r.atanh() / slope)
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

/// Autonomous limit `g0` with a uniform bound `|g0| ≤ a`.
#[derive(Clone)]
pub struct AutonomousNonlinearity {
    label: String,
    eval: ScalarFn,
    derivative: ScalarFn,
    inverse: Option<ScalarFn>,
    bound: f64,
    strictly_increasing: bool,
}

impl fmt::Debug for AutonomousNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AutonomousNonlinearity")
            .field("label", &self.label)
            .field("bound", &self.bound)
            .field("closed_form_inverse", &self.inverse.is_some())
            .finish()
    }
}

impl AutonomousNonlinearity {
    /// `amp·tanh(slope·x)` with closed-form inverse.
    pub fn saturating(amp: f64, slope: f64) -> Self {
        Self {
            label: format!("{amp}*tanh({slope}*x)"),
            eval: Arc::new(move |x| amp * (slope * x).tanh()),
            derivative: Arc::new(move |x| amp * slope * sech2(slope * x)),
            inverse: Some(Arc::new(move |y| (y / amp).atanh() / slope)),
            bound: amp.abs(),
            strictly_increasing: amp * slope > 0.0,
        }
    }

    /// A user-supplied `g0`. The inverse is computed numerically unless
    /// attached with [`with_inverse`](Self::with_inverse).
    pub fn custom(
        label: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bound: f64,
        strictly_increasing: bool,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            derivative: Arc::new(derivative),
            inverse: None,
            bound,
            strictly_increasing,
        }
    }

    pub fn with_inverse(mut self, inverse: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    /// Drops any closed-form inverse, forcing the numerical fallback.
    pub fn without_inverse(mut self) -> Self {
        self.inverse = None;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }

    /// The uniform bound `a`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn strictly_increasing(&self) -> bool {
        self.strictly_increasing
    }

    pub fn has_closed_form_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    /// `g0^{-1}(θ)` for `|θ| < a`.
    pub fn invert(&self, theta: f64) -> Result<f64> {
        invert_autonomous(self, theta)
    }

    /// Checks the bound, strict monotonicity and the inverse round trip on
    /// `samples` points.
    pub fn validate(&self, samples: usize) -> Result<()> {
        if !(self.bound > 0.0) {
            return Err(Error::Spec(format!("bound a must be positive, got {}", self.bound)));
        }
        let r = 10.0 * self.bound.max(1.0);
        let xs = linspace(-r, r, samples.max(100));
        let mut prev = f64::NEG_INFINITY;
        for &x in &xs {
            let y = self.eval(x);
            if !(y.abs() <= self.bound) {
                return Err(Error::Spec(format!(
                    "|g0({x})| = {} exceeds a = {}",
                    y.abs(),
                    self.bound
                )));
            }
            // Saturation can flatten the sampled values in floating point far
            // from the origin; strictness is required where the derivative is
            // resolvable.
            if self.strictly_increasing && y <= prev && self.derivative(x) > 1e-12 {
                return Err(Error::Spec(format!("g0 not strictly increasing near x = {x}")));
            }
            prev = y;
        }
        if !self.strictly_increasing {
            return Err(Error::Spec("g0 must be strictly increasing".into()));
        }
        let eps = self.bound * 1e-3;
        for theta in linspace(-self.bound + eps, self.bound - eps, 101) {
            let x = self.invert(theta)?;
            if (self.eval(x) - theta).abs() > 1e-10 {
                return Err(Error::Spec(format!("inverse round trip fails at θ = {theta}")));
            }
        }
        Ok(())
    }
}

/// `g0^{-1}(θ)`: closed form when available, otherwise bracketed bisection
/// safeguarding Newton steps.
pub fn invert_autonomous(g0: &AutonomousNonlinearity, theta: f64) -> Result<f64> {
    if !(theta.abs() < g0.bound) {
        return Err(Error::Range {
            value: theta,
            bound: g0.bound,
        });
    }
    if let Some(inv) = &g0.inverse {
        return Ok(inv(theta));
    }
    let f = |x: f64| g0.eval(x) - theta;
    let mut lo = -1.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    while f(lo) > 0.0 {
        lo *= 2.0;
        expansions += 1;
        if expansions > 1100 {
            return Err(Error::Convergence(format!("no lower bracket for θ = {theta}")));
        }
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        expansions += 1;
        if expansions > 1100 {
            return Err(Error::Convergence(format!("no upper bracket for θ = {theta}")));
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..INVERSE_MAX_ITER {
        let fx = f(x);
        if fx.abs() <= INVERSE_TOL {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
        let d = g0.derivative(x);
        let newton = x - fx / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Convergence(format!(
        "inverse of {} at θ = {theta} did not converge",
        g0.label
    )))
}

/// `g(t, x)` with its partial derivative in `x` and claimed growth constants
/// `|g(t,x)| ≤ k2 + k1|x|`.
#[derive(Clone)]
pub struct TimeNonlinearity {
    label: String,
    eval: ScalarFn2,
    d2: ScalarFn2,
    inverse: Option<InverseFn2>,
    k1: f64,
    k2: f64,
    monotone_in_x: bool,
    autonomous: bool,
    limit: Option<AutonomousNonlinearity>,
}

impl fmt::Debug for TimeNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeNonlinearity")
            .field("label", &self.label)
            .field("k1", &self.k1)
            .field("k2", &self.k2)
            .field("monotone_in_x", &self.monotone_in_x)
            .field("autonomous", &self.autonomous)
            .field("limit", &self.limit)
            .finish()
    }
}

impl TimeNonlinearity {
    /// An arbitrary `g` with its `x`-derivative. Growth constants default to
    /// `(0, 0)` and should be set with [`with_constants`](Self::with_constants).
    pub fn custom(
        label: impl Into<String>,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            d2: Arc::new(d2),
            inverse: None,
            k1: 0.0,
            k2: 0.0,
            monotone_in_x: false,
            autonomous: false,
            limit: None,
        }
    }

    pub fn zero() -> Self {
        Self::custom("0", |_, _| 0.0, |_, _| 0.0)
            .with_monotone(true)
            .with_autonomous(true)
    }

    pub fn linear(slope: f64) -> Self {
        Self::custom(format!("{slope}*x"), move |_, x| slope * x, move |_, _| slope)
            .with_inverse(move |_, y| {
                if slope == 0.0 {
                    Err(Error::Capability("constant map has no inverse".into()))
                } else {
                    Ok(y / slope)
                }
            })
            .with_constants(slope.abs(), 0.0)
            .with_monotone(slope >= 0.0)
            .with_autonomous(true)
    }

    /// `amp·tanh(slope·x)`.
    pub fn saturating(amp: f64, slope: f64) -> Self {
        let mut g = Self::custom(
            format!("{amp}*tanh({slope}*x)"),
            move |_, x| amp * (slope * x).tanh(),
            move |_, x| amp * slope * sech2(slope * x),
        )
        .with_inverse(move |_, y| artanh_checked(y, amp, slope))
        .with_constants(0.0, amp.abs())
        .with_monotone(amp * slope >= 0.0)
        .with_autonomous(true);
        if amp * slope > 0.0 {
            g.limit = Some(AutonomousNonlinearity::saturating(amp, slope));
        }
        g
    }

    /// `(1 + c·e^{−λt})·amp·tanh(slope·x)`; tends to `amp·tanh(slope·x)` as
    /// `t → ∞` when `λ > 0`. The default `k2` is valid for `t ≥ 0`.
    pub fn modulated(amp: f64, slope: f64, c: f64, lambda: f64) -> Self {
        let m = move |t: f64| 1.0 + c * (-lambda * t).exp();
        let mut g = Self::custom(
            format!("(1+{c}*exp(-{lambda}*t))*{amp}*tanh({slope}*x)"),
            move |t, x| m(t) * amp * (slope * x).tanh(),
            move |t, x| m(t) * amp * slope * sech2(slope * x),
        )
        .with_inverse(move |t, y| artanh_checked(y, m(t) * amp, slope))
        .with_constants(0.0, amp.abs() * (1.0 + c.abs()))
        .with_monotone(amp * slope >= 0.0 && c >= 0.0);
        if amp * slope > 0.0 && lambda > 0.0 {
            g.limit = Some(AutonomousNonlinearity::saturating(amp, slope));
        }
        g
    }

    /// `(1 + c·sin(ωt))·amp·tanh(slope·x)`.
    pub fn periodic(amp: f64, slope: f64, c: f64, omega: f64) -> Self {
        let m = move |t: f64| 1.0 + c * (omega * t).sin();
        Self::custom(
            format!("(1+{c}*sin({omega}*t))*{amp}*tanh({slope}*x)"),
            move |t, x| m(t) * amp * (slope * x).tanh(),
            move |t, x| m(t) * amp * slope * sech2(slope * x),
        )
        .with_inverse(move |t, y| artanh_checked(y, m(t) * amp, slope))
        .with_constants(0.0, amp.abs() * (1.0 + c.abs()))
        .with_monotone(amp * slope >= 0.0 && c.abs() <= 1.0)
    }

    /// `amp·tanh(slope·x) + beta`.
    pub fn shifted(amp: f64, slope: f64, beta: f64) -> Self {
        Self::saturating(amp, slope).plus_constant(beta)
    }

    /// `g + beta`. The autonomous limit is dropped unless `beta = 0`.
    pub fn plus_constant(&self, beta: f64) -> Self {
        if beta == 0.0 {
            return self.clone();
        }
        let eval = self.eval.clone();
        let d2 = self.d2.clone();
        let inverse = self.inverse.clone();
        Self {
            label: format!("{}+{beta}", self.label),
            eval: Arc::new(move |t, x| eval(t, x) + beta),
            d2: Arc::new(move |t, x| d2(t, x)),
            inverse: inverse.map(|inv| -> InverseFn2 { Arc::new(move |t, y| inv(t, y - beta)) }),
            k1: self.k1,
            k2: self.k2 + beta.abs(),
            monotone_in_x: self.monotone_in_x,
            autonomous: self.autonomous,
            limit: None,
        }
    }

    pub fn with_inverse(mut self, inverse: impl Fn(f64, f64) -> Result<f64> + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    pub fn with_constants(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    pub fn with_monotone(mut self, monotone: bool) -> Self {
        self.monotone_in_x = monotone;
        self
    }

    pub fn with_autonomous(mut self, autonomous: bool) -> Self {
        self.autonomous = autonomous;
        self
    }

    pub fn with_limit(mut self, limit: Option<AutonomousNonlinearity>) -> Self {
        self.limit = limit;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        (self.eval)(t, x)
    }

    #[inline]
    pub fn d2(&self, t: f64, x: f64) -> f64 {
        (self.d2)(t, x)
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    /// `g^{-1}(t, y)` in the second variable.
    pub fn invert(&self, t: f64, y: f64) -> Result<f64> {
        match &self.inverse {
            Some(inv) => inv(t, y),
            None => Err(Error::Capability(format!("{} has no inverse", self.label))),
        }
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn monotone_in_x(&self) -> bool {
        self.monotone_in_x
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn limit(&self) -> Option<&AutonomousNonlinearity> {
        self.limit.as_ref()
    }

    /// Half-width of the default certification box, `max(10·k2/(1−k1), 10)`.
    pub fn default_x_radius(&self) -> f64 {
        if self.k1 < 1.0 {
            (10.0 * self.k2 / (1.0 - self.k1)).max(10.0)
        } else {
            10.0
        }
    }
}

/// Result of sampling `|g(t,x)| ≤ k2 + k1|x|` on a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DissipativityCertificate {
    pub k1: f64,
    pub k2: f64,
    /// Largest sampled `|g| / (k2 + k1|x|)`; at most 1 on success.
    pub worst_ratio: f64,
}

/// Verifies the claimed growth constants of `g` at `samples × samples`
/// points of `t_range × x_range` (a single `t` when the range is degenerate),
/// and the monotonicity claim when one is made.
pub fn certify_dissipativity(
    g: &TimeNonlinearity,
    t_range: (f64, f64),
    x_range: (f64, f64),
    samples: usize,
) -> Result<DissipativityCertificate> {
    if samples < 100 {
        return Err(Error::Config(format!(
            "certification needs at least 100 samples, got {samples}"
        )));
    }
    if !(g.k1 < 1.0) || g.k1 < 0.0 || g.k2 < 0.0 {
        return Err(Error::Precondition(format!(
            "dissipativity requires 0 <= k1 < 1 and k2 >= 0, got k1 = {}, k2 = {}",
            g.k1, g.k2
        )));
    }
    let ts = linspace(t_range.0, t_range.1, samples);
    let xs = linspace(x_range.0, x_range.1, samples);
    let mut worst = 0.0_f64;
    for &t in &ts {
        for &x in &xs {
            let v = g.eval(t, x).abs();
            let bound = g.k2 + g.k1 * x.abs();
            if !v.is_finite() || v > bound + 1e-12 * bound.max(1.0) {
                return Err(Error::Certification { t, x, value: v, bound });
            }
            let ratio = if bound > 0.0 { v / bound } else { 0.0 };
            worst = worst.max(ratio);
            if g.monotone_in_x {
                let d = g.d2(t, x);
                if !(d >= 0.0) {
                    return Err(Error::Monotonicity { t, x, d2: d });
                }
            }
        }
    }
    Ok(DissipativityCertificate {
        k1: g.k1,
        k2: g.k2,
        worst_ratio: worst,
    })
}

/// Largest sampled `|∂_x g|` on the box.
pub fn lipschitz_estimate(
    g: &TimeNonlinearity,
    t_range: (f64, f64),
    x_range: (f64, f64),
    samples: usize,
) -> Result<f64> {
    if samples < 100 {
        return Err(Error::Config(format!(
            "Lipschitz estimate needs at least 100 samples, got {samples}"
        )));
    }
    let ts = linspace(t_range.0, t_range.1, samples);
    let xs = linspace(x_range.0, x_range.1, samples);
    let mut best = 0.0_f64;
    for &t in &ts {
        for &x in &xs {
            let d = g.d2(t, x);
            if !d.is_finite() {
                return Err(Error::Domain(format!("non-finite derivative at t = {t}, x = {x}")));
            }
            best = best.max(d.abs());
        }
    }
    Ok(best)
}

/// Largest sampled `|g1 − g2|` on the box.
pub fn sup_distance(
    g1: &TimeNonlinearity,
    g2: &TimeNonlinearity,
    t_range: (f64, f64),
    x_range: (f64, f64),
    samples: usize,
) -> f64 {
    let ts = linspace(t_range.0, t_range.1, samples);
    let xs = linspace(x_range.0, x_range.1, samples);
    let mut best = 0.0_f64;
    for &t in &ts {
        for &x in &xs {
            best = best.max((g1.eval(t, x) - g2.eval(t, x)).abs());
        }
    }
    best
}

/// Largest sampled `|g(t, x)|` on the box.
pub(crate) fn sup_abs(g: &TimeNonlinearity, t_range: (f64, f64), x_range: (f64, f64), samples: usize) -> f64 {
    let ts = linspace(t_range.0, t_range.1, samples);
    let xs = linspace(x_range.0, x_range.1, samples);
    let mut best = 0.0_f64;
    for &t in &ts {
        for &x in &xs {
            best = best.max(g.eval(t, x).abs());
        }
    }
    best
}
