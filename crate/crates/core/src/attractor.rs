//! Absorbing balls, pullback attractor estimates and their regularity and
//! semicontinuity checks.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{evolve, integrate, ProcessConfig, Trajectory};
use crate::nonlinearity::{certify_dissipativity, linspace, lipschitz_estimate, sup_distance, TimeNonlinearity};
use crate::spatial::{check_exponent, hausdorff_semidist, DiscreteKernel, Field, SpatialGrid};

/// Default pullback depths.
pub const DEFAULT_DEPTHS: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];

/// Default residual tolerance for attractor estimates.
pub const DEFAULT_TOL: f64 = 1e-4;

const CERTIFY_SAMPLES: usize = 100;
// Odd, so the sampled box contains its center.
const LIPSCHITZ_SAMPLES: usize = 201;
const RANDOM_MEMBERS: usize = 8;
const CONSTANT_MEMBERS: usize = 9;
const FOURIER_MODES: usize = 4;

/// A finite, non-empty set of fields on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    grid: Arc<SpatialGrid>,
    members: Vec<Field>,
    label: String,
}

impl Ensemble {
    pub fn new(members: Vec<Field>, label: impl Into<String>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Domain("an ensemble needs at least one member".into()))?;
        let grid = first.grid().clone();
        if members.iter().any(|m| !m.same_grid(first)) {
            return Err(Error::Dimension("ensemble members live on different grids".into()));
        }
        Ok(Self {
            grid,
            members,
            label: label.into(),
        })
    }

    /// Constant fields at the given levels.
    pub fn constants(grid: &Arc<SpatialGrid>, levels: &[f64], label: impl Into<String>) -> Result<Self> {
        let members = levels
            .iter()
            .map(|&c| Field::constant(grid.clone(), c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, label)
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn members(&self) -> &[Field] {
        &self.members
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.members.iter().map(Field::sup_norm).fold(0.0, f64::max)
    }
}

/// Default seed: 9 constants evenly spanning `[−R, R]` and 8 random smooth
/// fields with sup norm at most `R`, drawn from `ChaCha8Rng(rng_seed)`.
/// `R` is 1.5 times `radius`, or 1 when `radius` is zero.
pub fn default_seed(grid: &Arc<SpatialGrid>, radius: f64, rng_seed: u64) -> Result<Ensemble> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Domain(format!(
            "seed radius must be finite and non-negative, got {radius}"
        )));
    }
    let r = if radius > 0.0 { 1.5 * radius } else { 1.0 };
    let mut members = Vec::with_capacity(CONSTANT_MEMBERS + RANDOM_MEMBERS);
    for c in linspace(-r, r, CONSTANT_MEMBERS) {
        members.push(Field::constant(grid.clone(), c)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (a, len) = (grid.a(), grid.measure());
    for _ in 0..RANDOM_MEMBERS {
        let coeffs: Vec<(f64, f64)> = (0..FOURIER_MODES)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let scale = rng.random_range(0.2..1.0) * r;
        let raw: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| {
                let s = PI * (x - a) / len;
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(m, (c, d))| c * (m as f64 * s).cos() + d * ((m + 1) as f64 * s).sin())
                    .sum::<f64>()
            })
            .collect();
        let peak = raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let factor = if peak > 0.0 { scale / peak } else { 0.0 };
        members.push(Field::new(grid.clone(), raw.iter().map(|v| v * factor).collect())?);
    }
    Ensemble::new(members, format!("default seed (R = {r}, rng_seed = {rng_seed})"))
}

/// `(1+δ)·k2·|Ω|^{1/p}/(1−k1)`, with `|Ω|^{1/p} = 1` for `p = ∞`.
pub fn absorbing_radius(k1: f64, k2: f64, measure: f64, p: f64, delta: f64) -> Result<f64> {
    if !(k1 < 1.0) {
        return Err(Error::Domain(format!("dissipativity needs k1 < 1, got {k1}")));
    }
    if k1 < 0.0 || k2 < 0.0 || delta < 0.0 || !(measure > 0.0) {
        return Err(Error::Domain(format!(
            "absorbing radius needs k1, k2, δ >= 0 and |Ω| > 0, got k1 = {k1}, k2 = {k2}, δ = {delta}, |Ω| = {measure}"
        )));
    }
    check_exponent(p)?;
    let root = if p.is_infinite() { 1.0 } else { measure.powf(1.0 / p) };
    Ok((1.0 + delta) * k2 * root / (1.0 - k1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeViolation {
    pub t: f64,
    pub norm: f64,
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub radius: f64,
    /// Samples outside the `(1+δ)` ball that were checked.
    pub checked: usize,
    pub violations: Vec<EnvelopeViolation>,
}

impl DecayReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `‖u(t)‖_p ≤ e^{−δ(1−k1)(t−t_a)/(1+δ)}·‖u(t_a)‖_p` on every sample
/// outside the `(1+δ)` ball, where `t_a` is the start of the current
/// excursion outside the ball. The tolerance factor is `1 + 10·dt`.
pub fn decay_envelope_check(traj: &Trajectory, k1: f64, k2: f64, p: f64, delta: f64) -> Result<DecayReport> {
    let measure = traj.initial().grid().measure();
    let radius = absorbing_radius(k1, k2, measure, p, delta)?;
    let rate = delta * (1.0 - k1) / (1.0 + delta);
    let slack = 1.0 + 10.0 * traj.max_step();
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut anchor: Option<(f64, f64)> = None;
    for (t, u) in traj.times().iter().zip(traj.states()) {
        let norm = u.lp_norm(p)?;
        if norm < radius {
            anchor = None;
            continue;
        }
        let (ta, na) = *anchor.get_or_insert((*t, norm));
        checked += 1;
        let envelope = (-rate * (t - ta)).exp() * na;
        if norm > envelope * slack {
            violations.push(EnvelopeViolation { t: *t, norm, envelope });
        }
    }
    Ok(DecayReport {
        radius,
        checked,
        violations,
    })
}

#[derive(Clone, Debug)]
pub struct AttractorEstimate {
    /// Section time.
    pub t: f64,
    /// The deepest pullback ensemble `S(t, t − d_max)·seed`.
    pub ensemble: Ensemble,
    pub pullback_depths: Vec<f64>,
    /// `dist(E_k, E_{k+1})` for consecutive depths.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
    /// Containment radius with `δ = 0`.
    pub radius: f64,
    /// Largest member norm in `L^p`.
    pub max_norm: f64,
    pub containment_ok: bool,
    pub p: f64,
}

/// Pullback ensembles `E_k = S(t, t − d_k)·seed` for every depth, computed
/// concurrently and returned in depth-major, member-minor order.
pub fn pullback_images(
    t: f64,
    seed: &Ensemble,
    depths: &[f64],
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
) -> Result<Vec<Vec<Field>>> {
    let m = seed.len();
    let flat: Vec<Field> = (0..depths.len() * m)
        .into_par_iter()
        .map(|idx| {
            let (k, j) = (idx / m, idx % m);
            evolve(&seed.members()[j], t - depths[k], t, cfg, kernel, g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(flat.chunks(m).map(<[Field]>::to_vec).collect())
}

/// Estimates `A(t)` by pulling the seed back over increasing depths until
/// successive images stabilize in the Hausdorff semi-distance.
#[allow(clippy::too_many_arguments)]
pub fn pullback_omega_limit(
    t: f64,
    seed: &Ensemble,
    depths: &[f64],
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
    g: &TimeNonlinearity,
    tol: f64,
    p: f64,
) -> Result<AttractorEstimate> {
    check_exponent(p)?;
    if depths.is_empty() || depths[0] < 0.0 || depths.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "pullback depths must be non-negative and strictly increasing".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if !Arc::ptr_eq(seed.grid(), kernel.grid()) && **seed.grid() != **kernel.grid() {
        return Err(Error::Dimension("seed and kernel live on different grids".into()));
    }
    let deepest = *depths.last().unwrap();
    let x_radius = g.default_x_radius().max(seed.sup_norm());
    certify_dissipativity(g, (t - deepest, t), (-x_radius, x_radius), CERTIFY_SAMPLES)?;

    let images = pullback_images(t, seed, depths, cfg, kernel, g)?;
    let residuals = images
        .windows(2)
        .map(|w| hausdorff_semidist(&w[0], &w[1], p))
        .collect::<Result<Vec<_>>>()?;
    let converged = residuals.last().is_some_and(|r| *r < tol);
    let radius = absorbing_radius(g.k1(), g.k2(), kernel.grid().measure(), p, 0.0)?;
    let members = images.into_iter().last().unwrap();
    let max_norm = members
        .iter()
        .map(|u| u.lp_norm(p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let containment_tol = 1e-6 + 10.0 * cfg.dt;
    Ok(AttractorEstimate {
        t,
        ensemble: Ensemble::new(members, format!("A({t}) from {}", seed.label()))?,
        pullback_depths: depths.to_vec(),
        residuals,
        converged,
        tol,
        radius,
        max_norm,
        containment_ok: max_norm <= radius + containment_tol,
        p,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientReport {
    pub bound: f64,
    /// Largest finite-difference slope of each member.
    pub member_gradients: Vec<f64>,
    pub max_gradient: f64,
    /// `bound − max_gradient`.
    pub slack: f64,
    pub ok: bool,
}

/// Largest slope between neighbouring nodes.
pub fn max_node_gradient(u: &Field) -> f64 {
    let x = u.grid().nodes();
    let v = u.values();
    (1..v.len())
        .map(|i| ((v[i] - v[i - 1]) / (x[i] - x[i - 1])).abs())
        .fold(0.0, f64::max)
}

/// Checks node gradients of every member against `k3·C·M + tol`, where `C`
/// bounds `‖∂_x J(x,·)‖_q` and `M` bounds the members in `L^p`.
pub fn gradient_bound_check(
    estimate: &AttractorEstimate,
    kernel_dx_bound: f64,
    k3: f64,
    m: f64,
    tol: f64,
) -> GradientReport {
    let bound = k3 * kernel_dx_bound * m;
    let member_gradients: Vec<f64> = estimate.ensemble.members().iter().map(max_node_gradient).collect();
    let max_gradient = member_gradients.iter().copied().fold(0.0, f64::max);
    GradientReport {
        bound,
        max_gradient,
        slack: bound - max_gradient,
        ok: max_gradient <= bound + tol,
        member_gradients,
    }
}

/// Shared settings for [`semicontinuity_experiment`].
#[derive(Clone, Debug)]
pub struct SemicontinuitySetup {
    /// Section time of the attractor estimates.
    pub t: f64,
    /// Start of the trajectory comparison.
    pub tau: f64,
    /// End of the trajectory comparison.
    pub t_end: f64,
    /// Initial condition of the trajectory comparison.
    pub initial: Field,
    pub seed: Ensemble,
    pub depths: Vec<f64>,
    pub tol: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemicontinuityRow {
    pub beta: f64,
    /// `‖g_β − g_β0‖_∞` on the sampled box.
    pub g_distance: f64,
    /// `‖u_β − u_β0‖_p` at `t_end`.
    pub traj_dist: f64,
    /// `|Ω|^{1/p}·‖g_β − g_β0‖_∞·e^{k_B(t_end−τ)}`.
    pub gronwall_bound: f64,
    /// Largest ratio of measured distance to bound along the trajectory.
    pub worst_ratio: f64,
    /// `dist(A_β(t), A_β0(t))`.
    pub attractor_dist: f64,
    pub attractor_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemicontinuityReport {
    pub beta0: f64,
    pub lipschitz: f64,
    pub rows: Vec<SemicontinuityRow>,
    /// Attractor distances decrease along the supplied sequence.
    pub monotone: bool,
    /// The last attractor distance is below `tol`.
    pub final_below_tol: bool,
}

/// Compares trajectories and attractor estimates of `g_β` against `g_β0`.
///
/// The trajectory comparison is a hard check: exceeding the Gronwall bound
/// by more than `tol` is an error.
pub fn semicontinuity_experiment(
    family: &[(f64, TimeNonlinearity)],
    reference: &(f64, TimeNonlinearity),
    setup: &SemicontinuitySetup,
    cfg: &ProcessConfig,
    kernel: &DiscreteKernel,
) -> Result<SemicontinuityReport> {
    let (beta0, g0) = reference;
    let p = setup.p;
    check_exponent(p)?;
    if !(setup.t_end >= setup.tau) {
        return Err(Error::Domain("trajectory window must satisfy t_end >= τ".into()));
    }
    let root = kernel.grid().measure_root(p);
    let x_radius = family
        .iter()
        .map(|(_, g)| g.default_x_radius())
        .fold(g0.default_x_radius(), f64::max)
        .max(setup.initial.sup_norm())
        .max(setup.seed.sup_norm());
    let t_range = (setup.tau, setup.t_end);
    let k_b = lipschitz_estimate(g0, t_range, (-x_radius, x_radius), LIPSCHITZ_SAMPLES)?;

    let base = integrate(&setup.initial, setup.tau, setup.t_end, cfg, kernel, g0)?;
    let base_attractor = pullback_omega_limit(setup.t, &setup.seed, &setup.depths, cfg, kernel, g0, setup.tol, p)?;

    let mut rows = Vec::with_capacity(family.len());
    for (beta, g) in family {
        let g_distance = sup_distance(g, g0, t_range, (-x_radius, x_radius), CERTIFY_SAMPLES);
        let traj = integrate(&setup.initial, setup.tau, setup.t_end, cfg, kernel, g)?;
        let mut worst_ratio = 0.0_f64;
        let mut last = (0.0, 0.0);
        for ((s, u), v) in traj.times().iter().zip(traj.states()).zip(base.states()) {
            let dist = u.distance(v, p)?;
            let bound = root * g_distance * (k_b * (s - setup.tau)).exp();
            if dist > bound + setup.tol {
                return Err(Error::Bound(format!(
                    "trajectory distance {dist} exceeds Gronwall bound {bound} at t = {s} for β = {beta}"
                )));
            }
            if bound > 0.0 {
                worst_ratio = worst_ratio.max(dist / bound);
            }
            last = (dist, bound);
        }
        let attractor = pullback_omega_limit(setup.t, &setup.seed, &setup.depths, cfg, kernel, g, setup.tol, p)?;
        let attractor_dist = hausdorff_semidist(attractor.ensemble.members(), base_attractor.ensemble.members(), p)?;
        rows.push(SemicontinuityRow {
            beta: *beta,
            g_distance,
            traj_dist: last.0,
            gronwall_bound: last.1,
            worst_ratio,
            attractor_dist,
            attractor_converged: attractor.converged,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].attractor_dist <= w[0].attractor_dist);
    let final_below_tol = rows.last().is_some_and(|r| r.attractor_dist < setup.tol);
    Ok(SemicontinuityReport {
        beta0: *beta0,
        lipschitz: k_b,
        rows,
        monotone,
        final_below_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Method;
    use crate::spatial::{build_grid, KernelShape, QuadratureRule};

    fn c_star() -> f64 {
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - 2.0 * mid.tanh() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn mean_kernel(n: usize) -> DiscreteKernel {
        let g = build_grid(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap();
        DiscreteKernel::from_shape(&g, &KernelShape::Uniform).unwrap()
    }

    #[test]
    fn absorbing_radius_examples() {
        assert!((absorbing_radius(0.5, 1.0, 1.0, 2.0, 0.1).unwrap() - 2.2).abs() < 1e-14);
        assert_eq!(absorbing_radius(0.3, 0.0, 2.0, 2.0, 0.5).unwrap(), 0.0);
        assert_eq!(absorbing_radius(0.0, 2.0, 3.0, f64::INFINITY, 0.0).unwrap(), 2.0);
        assert!((absorbing_radius(0.0, 1.0, 4.0, 2.0, 0.0).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(
            absorbing_radius(1.0, 1.0, 1.0, 2.0, 0.0),
            Err(Error::Domain(_))
        ));
        assert!(absorbing_radius(0.5, 1.0, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn ensemble_validation() {
        assert!(Ensemble::new(vec![], "empty").is_err());
        let a = build_grid(0.0, 1.0, 5, QuadratureRule::Trapezoid).unwrap();
        let b = build_grid(0.0, 1.0, 6, QuadratureRule::Trapezoid).unwrap();
        let mixed = vec![Field::zeros(a), Field::zeros(b)];
        assert!(matches!(Ensemble::new(mixed, "mixed"), Err(Error::Dimension(_))));
    }

    #[test]
    fn default_seed_is_reproducible_and_bounded() {
        let grid = build_grid(-1.0, 2.0, 41, QuadratureRule::Midpoint).unwrap();
        let s1 = default_seed(&grid, 2.0, 42).unwrap();
        let s2 = default_seed(&grid, 2.0, 42).unwrap();
        let s3 = default_seed(&grid, 2.0, 43).unwrap();
        assert_eq!(s1, s2);
        assert_ne!(s1.members(), s3.members());
        assert_eq!(s1.len(), 17);
        assert!(s1.sup_norm() <= 3.0 + 1e-12);
        assert_eq!(s1.members()[4].sup_norm(), 0.0);
        assert_eq!(s1.members()[0].values()[0], -3.0);
    }

    #[test]
    fn zero_forcing_decays_at_machine_precision() {
        let k = mean_kernel(21);
        let u = Field::constant(k.grid().clone(), 2.0).unwrap();
        let cfg = ProcessConfig::default();
        let traj = integrate(&u, 0.0, 3.0, &cfg, &k, &TimeNonlinearity::zero()).unwrap();
        for (t, s) in traj.times().iter().zip(traj.states()) {
            let exact = 2.0 * (-t).exp();
            assert!((s.lp_norm(2.0).unwrap() - exact).abs() < 1e-14);
        }
        let report = decay_envelope_check(&traj, 0.0, 0.0, 2.0, 1.0).unwrap();
        assert!(report.ok());
        assert_eq!(report.checked, traj.len());
    }

    #[test]
    fn decay_envelope_from_large_data() {
        let grid = build_grid(0.0, 1.0, 41, QuadratureRule::Trapezoid).unwrap();
        let k = DiscreteKernel::from_shape(&grid, &KernelShape::Gaussian { sigma: 0.2 }).unwrap();
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let u = Field::constant(grid, 10.0).unwrap();
        let traj = integrate(&u, 0.0, 5.0, &ProcessConfig::default(), &k, &g).unwrap();
        for p in [1.0, 2.0, f64::INFINITY] {
            let report = decay_envelope_check(&traj, 0.0, 2.0, p, 0.1).unwrap();
            assert!(report.ok(), "{p}: {:?}", report.violations.first());
            assert!(report.checked > 10);
        }
        let norms: Vec<f64> = traj.states().iter().map(|s| s.lp_norm(2.0).unwrap()).collect();
        let entry = norms.iter().position(|n| *n < 2.2).unwrap();
        assert!(norms[..entry].windows(2).all(|w| w[1] < w[0]));
        // Entry time against the envelope's prediction ln(10/2.2)/rate.
        let rate = 0.1 / 1.1;
        assert!(traj.times()[entry] <= (10.0f64 / 2.2).ln() / rate);
    }

    #[test]
    fn decay_envelope_is_vacuous_inside_the_ball() {
        let k = mean_kernel(21);
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let u = Field::constant(k.grid().clone(), 0.5).unwrap();
        let traj = integrate(&u, 0.0, 2.0, &ProcessConfig::default(), &k, &g).unwrap();
        let report = decay_envelope_check(&traj, 0.0, 2.0, 2.0, 0.0).unwrap();
        assert_eq!(report.checked, 0);
        assert!(report.ok());
    }

    #[test]
    fn fabricated_growth_is_reported() {
        let grid = build_grid(0.0, 1.0, 5, QuadratureRule::Trapezoid).unwrap();
        let states = vec![
            Field::constant(grid.clone(), 5.0).unwrap(),
            Field::constant(grid.clone(), 12.0).unwrap(),
        ];
        let traj = Trajectory::new(vec![0.0, 0.1], states).unwrap();
        let report = decay_envelope_check(&traj, 0.0, 1.0, 2.0, 0.5).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].t, 0.1);
    }

    #[test]
    fn zero_forcing_attractor_is_the_origin() {
        let k = mean_kernel(21);
        let seed = Ensemble::constants(k.grid(), &[-3.0, -1.0, 0.5, 3.0], "constants").unwrap();
        let depths = [2.0, 4.0, 8.0, 16.0, 32.0];
        let est = pullback_omega_limit(
            0.0,
            &seed,
            &depths,
            &ProcessConfig::default(),
            &k,
            &TimeNonlinearity::zero(),
            1e-4,
            2.0,
        )
        .unwrap();
        for (r, d) in est.residuals.iter().zip(&depths) {
            assert!(*r <= (-d).exp() * 6.0 + 1e-15);
        }
        assert!(est.converged);
        assert!(est.max_norm < 1e-6);
        assert_eq!(est.radius, 0.0);
        assert!(est.containment_ok);
    }

    #[test]
    fn autonomous_attractor_collapses_to_equilibria() {
        let k = mean_kernel(41);
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let levels: Vec<f64> = (-3..=3).map(f64::from).collect();
        let seed = Ensemble::constants(k.grid(), &levels, "integers").unwrap();
        let cfg = ProcessConfig::default();
        let est = pullback_omega_limit(0.0, &seed, &[5.0, 10.0, 25.0, 40.0], &cfg, &k, &g, 1e-4, 2.0).unwrap();
        assert!(est.converged);
        let c = c_star();
        for m in est.ensemble.members() {
            let near = [-c, 0.0, c]
                .iter()
                .map(|e| m.values().iter().map(|v| (v - e).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(near < 1e-3);
        }
        assert!(est.containment_ok);
        assert_eq!(est.radius, 2.0);
    }

    #[test]
    fn autonomous_estimates_do_not_depend_on_section_time() {
        let grid = build_grid(0.0, 1.0, 31, QuadratureRule::Trapezoid).unwrap();
        let k = DiscreteKernel::from_shape(&grid, &KernelShape::Gaussian { sigma: 0.2 }).unwrap();
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let seed = default_seed(&grid, 2.0, 7).unwrap();
        let cfg = ProcessConfig::default();
        let depths = [10.0, 20.0, 40.0];
        let a = pullback_omega_limit(0.0, &seed, &depths, &cfg, &k, &g, 1e-4, 2.0).unwrap();
        let b = pullback_omega_limit(3.7, &seed, &depths, &cfg, &k, &g, 1e-4, 2.0).unwrap();
        assert!(hausdorff_semidist(a.ensemble.members(), b.ensemble.members(), 2.0).unwrap() < 1e-4);
    }

    #[test]
    fn periodic_forcing_attractor_moves_but_stays_contained() {
        let grid = build_grid(0.0, 1.0, 31, QuadratureRule::Trapezoid).unwrap();
        let k = DiscreteKernel::from_shape(&grid, &KernelShape::Gaussian { sigma: 0.2 }).unwrap();
        let g = TimeNonlinearity::periodic(1.0, 1.0, 0.5, 1.0);
        let seed = default_seed(&grid, 1.5, 42).unwrap();
        let cfg = ProcessConfig::default();
        let depths = [5.0, 10.0, 20.0, 40.0];
        let mut estimates = Vec::new();
        for t in [0.0, 1.5, 3.0] {
            let est = pullback_omega_limit(t, &seed, &depths, &cfg, &k, &g, 1e-4, 2.0).unwrap();
            assert!(est.containment_ok);
            assert!((est.radius - 1.5).abs() < 1e-14);
            estimates.push(est);
        }
        let moved = hausdorff_semidist(estimates[0].ensemble.members(), estimates[1].ensemble.members(), 2.0).unwrap();
        assert!(moved > 1e-3);
    }

    #[test]
    fn invariance_surrogate() {
        let grid = build_grid(0.0, 1.0, 31, QuadratureRule::Trapezoid).unwrap();
        let k = DiscreteKernel::from_shape(&grid, &KernelShape::Gaussian { sigma: 0.2 }).unwrap();
        let g = TimeNonlinearity::periodic(1.0, 1.0, 0.5, 1.0);
        let seed = default_seed(&grid, 1.5, 42).unwrap();
        let cfg = ProcessConfig::default();
        let tol = 1e-4;
        let depths = [10.0, 20.0, 40.0];
        let a = pullback_omega_limit(0.0, &seed, &depths, &cfg, &k, &g, tol, 2.0).unwrap();
        let forward = Ensemble::new(
            a.ensemble
                .members()
                .iter()
                .map(|u| evolve(u, 0.0, 1.0, &cfg, &k, &g).unwrap())
                .collect(),
            "forward",
        )
        .unwrap();
        let shifted: Vec<f64> = depths.iter().map(|d| d + 1.0).collect();
        let b = pullback_omega_limit(1.0, &seed, &shifted, &cfg, &k, &g, tol, 2.0).unwrap();
        assert!(hausdorff_semidist(forward.members(), b.ensemble.members(), 2.0).unwrap() < 2.0 * tol);
    }

    #[test]
    fn nonconvergence_is_flagged() {
        let k = mean_kernel(21);
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let seed = Ensemble::constants(k.grid(), &[0.01, 3.0], "slow").unwrap();
        let est = pullback_omega_limit(0.0, &seed, &[0.5, 1.0], &ProcessConfig::default(), &k, &g, 1e-8, 2.0).unwrap();
        assert!(!est.converged);
    }

    #[test]
    fn bad_depths_and_uncertified_maps_are_rejected() {
        let k = mean_kernel(11);
        let seed = Ensemble::constants(k.grid(), &[1.0], "one").unwrap();
        let cfg = ProcessConfig::default();
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        assert!(pullback_omega_limit(0.0, &seed, &[5.0, 5.0], &cfg, &k, &g, 1e-4, 2.0).is_err());
        assert!(pullback_omega_limit(0.0, &seed, &[], &cfg, &k, &g, 1e-4, 2.0).is_err());
        let growing = TimeNonlinearity::modulated(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            pullback_omega_limit(0.0, &seed, &[5.0, 10.0], &cfg, &k, &growing, 1e-4, 2.0),
            Err(Error::Certification { .. })
        ));
    }

    #[test]
    fn gradient_bound_examples() {
        let k = mean_kernel(21);
        let g = TimeNonlinearity::saturating(2.0, 1.0);
        let seed = Ensemble::constants(k.grid(), &[-1.0, 2.0], "c").unwrap();
        let est = pullback_omega_limit(0.0, &seed, &[5.0, 10.0], &ProcessConfig::default(), &k, &g, 1e-2, 2.0).unwrap();
        let report = gradient_bound_check(&est, k.dx_norm(2.0).unwrap(), 2.0, est.max_norm, 1e-8);
        assert_eq!(report.bound, 0.0);
        assert!(report.ok);
        assert!(report.max_gradient < 1e-8);

        let grid = build_grid(0.0, 1.0, 81, QuadratureRule::Trapezoid).unwrap();
        let gk = DiscreteKernel::from_shape(&grid, &KernelShape::Gaussian { sigma: 0.15 }).unwrap();
        let seed = default_seed(&grid, 2.0, 42).unwrap();
        let est = pullback_omega_limit(
            0.0,
            &seed,
            &[10.0, 20.0, 40.0],
            &ProcessConfig::default(),
            &gk,
            &g,
            1e-4,
            2.0,
        )
        .unwrap();
        let report = gradient_bound_check(&est, gk.dx_norm(2.0).unwrap(), 2.0, est.max_norm, 1e-8);
        assert!(report.ok, "{report:?}");
        assert!(report.max_gradient > 0.0 && report.slack > 0.0);
    }

    #[test]
    fn constant_shift_stays_below_gronwall_bound() {
        let k = mean_kernel(21);
        let g0 = TimeNonlinearity::saturating(2.0, 1.0);
        let beta = 0.1;
        let family = vec![(beta, g0.plus_constant(beta)), (0.0, g0.clone())];
        let setup = SemicontinuitySetup {
            t: 0.0,
            tau: 0.0,
            t_end: 1.0,
            initial: Field::from_fn(k.grid().clone(), |x| x - 0.3).unwrap(),
            seed: Ensemble::constants(k.grid(), &[-2.0, 2.0], "pair").unwrap(),
            depths: vec![10.0, 20.0],
            tol: 1e-4,
            p: 2.0,
        };
        let report = semicontinuity_experiment(&family, &(0.0, g0), &setup, &ProcessConfig::default(), &k).unwrap();
        assert!((report.lipschitz - 2.0).abs() < 1e-12);
        let row = &report.rows[0];
        assert!((row.gronwall_bound - 0.1 * 2f64.exp()).abs() < 1e-9);
        assert!(row.traj_dist < row.gronwall_bound);
        assert_eq!(report.rows[1].traj_dist, 0.0);
        assert_eq!(report.rows[1].attractor_dist, 0.0);
    }

    #[test]
    fn broken_gronwall_bound_is_a_hard_failure() {
        let k = mean_kernel(11);
        let g0 = TimeNonlinearity::saturating(2.0, 1.0);
        // The spike falls between the sampled times, so the bound sees no difference.
        let cfg = ProcessConfig::new(0.05, Method::ExpEuler).unwrap();
        let setup = SemicontinuitySetup {
            t: 0.0,
            tau: 0.0,
            t_end: 0.5,
            initial: Field::constant(k.grid().clone(), 1.0).unwrap(),
            seed: Ensemble::constants(k.grid(), &[1.0], "one").unwrap(),
            depths: vec![1.0, 2.0],
            tol: 1e-12,
            p: 2.0,
        };
        let spiky = TimeNonlinearity::custom(
            "spike",
            |t, x| 2.0 * x.tanh() + if (t - 0.25).abs() < 1e-6 { 0.5 } else { 0.0 },
            |_, x| 2.0 / x.cosh().powi(2),
        )
        .with_constants(0.0, 2.5);
        let result = semicontinuity_experiment(&[(1.0, spiky)], &(0.0, g0), &setup, &cfg, &k);
        assert!(matches!(result, Err(Error::Bound(_))), "{result:?}");
    }
}
