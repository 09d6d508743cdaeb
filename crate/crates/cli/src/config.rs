//! Run configuration: one TOML document per run, parsed strictly.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nonlocal_core::attractor::{DEFAULT_DEPTHS, DEFAULT_TOL};
use nonlocal_core::evolution::{Method, ProcessConfig};
use nonlocal_core::lyapunov::DEFAULT_RESOLUTION;
use nonlocal_core::nonlinearity::TimeNonlinearity;
use nonlocal_core::spatial::{
    build_grid, check_exponent, DiscreteKernel, Field, KernelShape, QuadratureRule, SpatialGrid,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_rng_seed() -> u64 {
    42
}

fn default_p() -> f64 {
    2.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_depths() -> Vec<f64> {
    DEFAULT_DEPTHS.to_vec()
}

fn default_attractor_tol() -> f64 {
    DEFAULT_TOL
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_eq_tol() -> f64 {
    1e-10
}

fn default_verdict_tol() -> f64 {
    1e-3
}

fn default_sweep_t_end() -> f64 {
    2.0
}

fn default_sweep_tol() -> f64 {
    1e-3
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A complete run description. Experiment blocks are optional and only the
/// one matching the subcommand is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_rng_seed")]
    pub rng_seed: u64,
    /// Exponent of the `L^p(Ω)` norm used in reports.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub process: ProcessSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractor: Option<AttractorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Directory that relative paths inside the document resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub rule: QuadratureRule,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            n: 101,
            rule: QuadratureRule::Trapezoid,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Uniform,
    Gaussian,
    Tent,
    Table,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub shape: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// CSV table of kernel values; header row lists the node coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    Zero,
    Linear,
    Saturating,
    Modulated,
    Periodic,
    Shifted,
}

impl NonlinearityKind {
    fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Linear => "linear",
            Self::Saturating => "saturating",
            Self::Modulated => "modulated",
            Self::Periodic => "periodic",
            Self::Shifted => "shifted",
        }
    }

    /// Parameters the kind requires and the ones it accepts with a default.
    fn params(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Self::Zero => (&[], &[]),
            Self::Linear => (&["slope"], &[]),
            Self::Saturating => (&["amp"], &["slope"]),
            Self::Modulated => (&["amp", "c", "lambda"], &["slope"]),
            Self::Periodic => (&["amp", "c", "omega"], &["slope"]),
            Self::Shifted => (&["amp", "beta"], &["slope"]),
        }
    }
}

/// A built-in `g(t, x)`; `k1`, `k2` override the default growth constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Constant,
    Sine,
    Values,
}

/// Initial datum: a constant, `offset + amp·sin(2π·freq·(x−a)/(b−a))`, or
/// explicit node values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessSpec {
    pub dt: f64,
    pub method: Method,
    #[serde(skip_serializing_if = "is_false")]
    pub richardson: bool,
    pub tol: f64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        let d = ProcessConfig::default();
        Self {
            dt: d.dt,
            method: d.method,
            richardson: d.richardson,
            tol: d.tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default)]
    pub tau: f64,
    pub t_end: f64,
    pub initial: InitialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorSpec {
    /// Section time of the pullback attractor.
    #[serde(default)]
    pub t: f64,
    #[serde(default = "default_depths")]
    pub depths: Vec<f64>,
    #[serde(default = "default_attractor_tol")]
    pub tol: f64,
    /// Constant seed fields; the default ensemble is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_levels: Option<Vec<f64>>,
    /// Overrides the absorbing radius used to size the default ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default)]
    pub tau: f64,
    pub t_end: f64,
    /// Nonlinearity of the subsolution.
    pub f: NonlinearitySpec,
    /// Nonlinearity of the supersolution.
    pub h: NonlinearitySpec,
    pub lower: InitialSpec,
    pub initial: InitialSpec,
    pub upper: InitialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSpec {
    #[serde(default)]
    pub tau: f64,
    pub t_end: f64,
    pub initial: InitialSpec,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Constant seeds for the equilibrium search; defaults to seven levels
    /// spanning `±1.5·a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<f64>>,
    #[serde(default = "default_eq_tol")]
    pub eq_tol: f64,
    #[serde(default = "default_verdict_tol")]
    pub verdict_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    #[serde(default)]
    pub beta0: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_sweep_t_end")]
    pub t_end: f64,
    pub initial: InitialSpec,
    /// Section time of the compared attractors.
    #[serde(default)]
    pub t: f64,
    #[serde(default = "default_depths")]
    pub depths: Vec<f64>,
    #[serde(default = "default_sweep_tol")]
    pub tol: f64,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn finite(path: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be finite, got {v}")))
    }
}

fn positive(path: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(path, format!("must be positive, got {v}")))
    }
}

fn ordered_span(path: &str, tau: f64, t_end: f64) -> Result<(), CliError> {
    finite(&format!("{path}.tau"), tau)?;
    finite(&format!("{path}.t_end"), t_end)?;
    if t_end <= tau {
        return Err(invalid(
            &format!("{path}.t_end"),
            format!("must exceed tau = {tau}, got {t_end}"),
        ));
    }
    Ok(())
}

fn increasing_depths(path: &str, depths: &[f64]) -> Result<(), CliError> {
    if depths.is_empty() || depths[0] < 0.0 || depths.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(path, "must be non-empty, non-negative and strictly increasing"));
    }
    depths.iter().try_for_each(|&d| finite(path, d).map(|_| ()))
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a configuration file; relative paths inside it resolve against its
/// directory.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

impl RunConfig {
    /// Serializes back to a TOML document.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_exponent(self.p).map_err(|e| invalid("p", e))?;
        self.grid.validate()?;
        self.kernel.validate()?;
        self.nonlinearity.validate("nonlinearity")?;
        self.process.validate()?;
        let n = self.grid.n;
        if let Some(s) = &self.simulate {
            ordered_span("simulate", s.tau, s.t_end)?;
            s.initial.validate("simulate.initial", n)?;
        }
        if let Some(s) = &self.attractor {
            finite("attractor.t", s.t)?;
            increasing_depths("attractor.depths", &s.depths)?;
            positive("attractor.tol", s.tol)?;
            if let Some(levels) = &s.seed_levels {
                if levels.is_empty() {
                    return Err(invalid("attractor.seed_levels", "must not be empty"));
                }
                levels
                    .iter()
                    .try_for_each(|&v| finite("attractor.seed_levels", v).map(|_| ()))?;
            }
            if let Some(r) = s.seed_radius {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(invalid(
                        "attractor.seed_radius",
                        format!("must be non-negative, got {r}"),
                    ));
                }
            }
        }
        if let Some(s) = &self.compare {
            ordered_span("compare", s.tau, s.t_end)?;
            s.f.validate("compare.f")?;
            s.h.validate("compare.h")?;
            s.lower.validate("compare.lower", n)?;
            s.initial.validate("compare.initial", n)?;
            s.upper.validate("compare.upper", n)?;
        }
        if let Some(s) = &self.lyapunov {
            ordered_span("lyapunov", s.tau, s.t_end)?;
            s.initial.validate("lyapunov.initial", n)?;
            if s.resolution < nonlocal_core::lyapunov::MIN_RESOLUTION {
                return Err(invalid(
                    "lyapunov.resolution",
                    format!("must be at least {}", nonlocal_core::lyapunov::MIN_RESOLUTION),
                ));
            }
            if let Some(seeds) = &s.seeds {
                if seeds.is_empty() {
                    return Err(invalid("lyapunov.seeds", "must not be empty"));
                }
                seeds
                    .iter()
                    .try_for_each(|&v| finite("lyapunov.seeds", v).map(|_| ()))?;
            }
            positive("lyapunov.eq_tol", s.eq_tol)?;
            positive("lyapunov.verdict_tol", s.verdict_tol)?;
        }
        if let Some(s) = &self.sweep {
            ordered_span("sweep", s.tau, s.t_end)?;
            if s.betas.is_empty() {
                return Err(invalid("sweep.betas", "must not be empty"));
            }
            s.betas.iter().try_for_each(|&v| finite("sweep.betas", v).map(|_| ()))?;
            finite("sweep.beta0", s.beta0)?;
            finite("sweep.t", s.t)?;
            increasing_depths("sweep.depths", &s.depths)?;
            positive("sweep.tol", s.tol)?;
            s.initial.validate("sweep.initial", n)?;
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Arc<SpatialGrid>, CliError> {
        build_grid(self.grid.a, self.grid.b, self.grid.n, self.grid.rule).map_err(|e| invalid("grid", e))
    }

    pub fn build_kernel(&self, grid: &Arc<SpatialGrid>) -> Result<DiscreteKernel, CliError> {
        let shape = match self.kernel.shape {
            KernelKind::Uniform => KernelShape::Uniform,
            KernelKind::Gaussian => KernelShape::Gaussian {
                sigma: self.kernel.sigma.unwrap_or_default(),
            },
            KernelKind::Tent => KernelShape::Tent {
                radius: self.kernel.radius.unwrap_or_default(),
            },
            KernelKind::Table => {
                let rel = self.kernel.path.as_deref().unwrap_or(Path::new(""));
                let path = self.base_dir.join(rel);
                let file =
                    fs::File::open(&path).map_err(|e| invalid("kernel.path", format!("{}: {e}", path.display())))?;
                KernelShape::table_from_csv(file).map_err(|e| invalid("kernel.path", e))?
            }
        };
        DiscreteKernel::from_shape(grid, &shape).map_err(|e| invalid("kernel", e))
    }

    pub fn build_process(&self) -> Result<ProcessConfig, CliError> {
        let cfg = ProcessConfig {
            dt: self.process.dt,
            method: self.process.method,
            richardson: self.process.richardson,
            tol: self.process.tol,
        };
        cfg.validate().map_err(|e| invalid("process", e))?;
        Ok(cfg)
    }
}

impl GridSpec {
    fn validate(&self) -> Result<(), CliError> {
        finite("grid.a", self.a)?;
        finite("grid.b", self.b)?;
        if self.b <= self.a {
            return Err(invalid("grid.b", format!("must exceed a = {}, got {}", self.a, self.b)));
        }
        if self.n < 2 {
            return Err(invalid("grid.n", format!("needs at least 2 nodes, got {}", self.n)));
        }
        Ok(())
    }
}

impl KernelSpec {
    fn validate(&self) -> Result<(), CliError> {
        let (needs, name): (&[&str], &str) = match self.shape {
            KernelKind::Uniform => (&[], "uniform"),
            KernelKind::Gaussian => (&["sigma"], "gaussian"),
            KernelKind::Tent => (&["radius"], "tent"),
            KernelKind::Table => (&["path"], "table"),
        };
        let present = [
            ("sigma", self.sigma.is_some()),
            ("radius", self.radius.is_some()),
            ("path", self.path.is_some()),
        ];
        for (key, set) in present {
            let wanted = needs.contains(&key);
            if wanted && !set {
                return Err(invalid(&format!("kernel.{key}"), format!("required by shape `{name}`")));
            }
            if !wanted && set {
                return Err(invalid(&format!("kernel.{key}"), format!("not used by shape `{name}`")));
            }
        }
        if let Some(s) = self.sigma {
            positive("kernel.sigma", s)?;
        }
        if let Some(r) = self.radius {
            positive("kernel.radius", r)?;
        }
        Ok(())
    }
}

impl NonlinearitySpec {
    pub fn new(kind: NonlinearityKind) -> Self {
        Self {
            kind,
            amp: None,
            slope: None,
            c: None,
            lambda: None,
            omega: None,
            beta: None,
            k1: None,
            k2: None,
        }
    }

    fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("amp", self.amp),
            ("slope", self.slope),
            ("c", self.c),
            ("lambda", self.lambda),
            ("omega", self.omega),
            ("beta", self.beta),
        ]
    }

    pub fn validate(&self, path: &str) -> Result<(), CliError> {
        let (required, optional) = self.kind.params();
        for (key, value) in self.entries() {
            let key_path = format!("{path}.{key}");
            match value {
                Some(v) => {
                    if !required.contains(&key) && !optional.contains(&key) {
                        return Err(invalid(&key_path, format!("not used by kind `{}`", self.kind.name())));
                    }
                    finite(&key_path, v)?;
                }
                None if required.contains(&key) => {
                    return Err(invalid(&key_path, format!("required by kind `{}`", self.kind.name())));
                }
                None => {}
            }
        }
        if let Some(k1) = self.k1 {
            if !(0.0..1.0).contains(&k1) {
                return Err(invalid(&format!("{path}.k1"), format!("must lie in [0, 1), got {k1}")));
            }
        }
        if let Some(k2) = self.k2 {
            if !(k2 >= 0.0 && k2.is_finite()) {
                return Err(invalid(
                    &format!("{path}.k2"),
                    format!("must be non-negative, got {k2}"),
                ));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> TimeNonlinearity {
        let amp = self.amp.unwrap_or_default();
        let slope = self.slope.unwrap_or(1.0);
        let c = self.c.unwrap_or_default();
        let g = match self.kind {
            NonlinearityKind::Zero => TimeNonlinearity::zero(),
            NonlinearityKind::Linear => TimeNonlinearity::linear(slope),
            NonlinearityKind::Saturating => TimeNonlinearity::saturating(amp, slope),
            NonlinearityKind::Modulated => TimeNonlinearity::modulated(amp, slope, c, self.lambda.unwrap_or_default()),
            NonlinearityKind::Periodic => TimeNonlinearity::periodic(amp, slope, c, self.omega.unwrap_or_default()),
            NonlinearityKind::Shifted => TimeNonlinearity::shifted(amp, slope, self.beta.unwrap_or_default()),
        };
        if self.k1.is_some() || self.k2.is_some() {
            let (k1, k2) = (self.k1.unwrap_or(g.k1()), self.k2.unwrap_or(g.k2()));
            g.with_constants(k1, k2)
        } else {
            g
        }
    }
}

impl InitialSpec {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: InitialKind::Constant,
            value: Some(value),
            amp: None,
            freq: None,
            offset: None,
            values: None,
        }
    }

    pub fn validate(&self, path: &str, n: usize) -> Result<(), CliError> {
        let (required, optional, name): (&[&str], &[&str], &str) = match self.kind {
            InitialKind::Constant => (&["value"], &[], "constant"),
            InitialKind::Sine => (&["amp"], &["freq", "offset"], "sine"),
            InitialKind::Values => (&["values"], &[], "values"),
        };
        let present = [
            ("value", self.value.is_some()),
            ("amp", self.amp.is_some()),
            ("freq", self.freq.is_some()),
            ("offset", self.offset.is_some()),
            ("values", self.values.is_some()),
        ];
        for (key, set) in present {
            let key_path = format!("{path}.{key}");
            if required.contains(&key) && !set {
                return Err(invalid(&key_path, format!("required by kind `{name}`")));
            }
            if set && !required.contains(&key) && !optional.contains(&key) {
                return Err(invalid(&key_path, format!("not used by kind `{name}`")));
            }
        }
        for (key, v) in [
            ("value", self.value),
            ("amp", self.amp),
            ("freq", self.freq),
            ("offset", self.offset),
        ] {
            if let Some(v) = v {
                finite(&format!("{path}.{key}"), v)?;
            }
        }
        if let Some(values) = &self.values {
            if values.len() != n {
                return Err(invalid(
                    &format!("{path}.values"),
                    format!("expected {n} entries to match the grid, got {}", values.len()),
                ));
            }
            values
                .iter()
                .try_for_each(|&v| finite(&format!("{path}.values"), v).map(|_| ()))?;
        }
        Ok(())
    }

    pub fn build(&self, grid: &Arc<SpatialGrid>) -> Result<Field, CliError> {
        let field = match self.kind {
            InitialKind::Constant => Field::constant(grid.clone(), self.value.unwrap_or_default()),
            InitialKind::Sine => {
                let (amp, freq, offset) = (
                    self.amp.unwrap_or_default(),
                    self.freq.unwrap_or(1.0),
                    self.offset.unwrap_or_default(),
                );
                let (a, len) = (grid.a(), grid.measure());
                Field::from_fn(grid.clone(), |x| {
                    offset + amp * (2.0 * std::f64::consts::PI * freq * (x - a) / len).sin()
                })
            }
            InitialKind::Values => Field::new(grid.clone(), self.values.clone().unwrap_or_default()),
        };
        field.map_err(CliError::from)
    }
}

impl ProcessSpec {
    fn validate(&self) -> Result<(), CliError> {
        positive("process.dt", self.dt)?;
        positive("process.tol", self.tol)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[nonlinearity]
kind = "saturating"
amp = 2.0

[simulate]
t_end = 2.0
initial = { kind = "constant", value = 1.0 }
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.process.dt, 1e-2);
        assert_eq!(cfg.p, 2.0);
        assert_eq!(cfg.grid.rule, QuadratureRule::Trapezoid);
        assert_eq!(cfg.rng_seed, 42);
        assert_eq!(cfg.process.method, Method::ExpEuler);
        assert_eq!(cfg.kernel.shape, KernelKind::Uniform);
        assert_eq!(cfg.grid.n, 101);
        assert_eq!(cfg.simulate.as_ref().unwrap().tau, 0.0);
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        let text = format!("{MINIMAL}\n[kernell]\nshape = \"uniform\"\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("kernell"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_nested_key_is_named() {
        let text = MINIMAL.replace("amp = 2.0", "amp = 2.0\nampl = 1.0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("ampl"), "{err}");
    }

    #[test]
    fn parse_error_reports_position() {
        let err = parse_config("[grid]\nn = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn missing_required_parameter_names_key_path() {
        let text = MINIMAL.replace("amp = 2.0", "");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("nonlinearity.amp"), "{err}");
    }

    #[test]
    fn unused_parameter_is_rejected() {
        let text = MINIMAL.replace("amp = 2.0", "amp = 2.0\nomega = 1.0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("nonlinearity.omega"), "{err}");
    }

    #[test]
    fn kernel_shape_parameters_are_checked() {
        let text = format!("{MINIMAL}\n[kernel]\nshape = \"gaussian\"\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("kernel.sigma"), "{err}");
        let text = format!("{MINIMAL}\n[kernel]\nshape = \"uniform\"\nradius = 0.2\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn values_length_must_match_grid() {
        let text = MINIMAL.replace(
            "initial = { kind = \"constant\", value = 1.0 }",
            "initial = { kind = \"values\", values = [1.0, 2.0] }",
        );
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("simulate.initial.values"), "{err}");
    }

    #[test]
    fn reversed_time_span_is_rejected() {
        let text = MINIMAL.replace("t_end = 2.0", "t_end = -1.0");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn round_trip_preserves_value() {
        let cfg = parse_config(MINIMAL).unwrap();
        let again = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn overrides_replace_growth_constants() {
        let mut spec = NonlinearitySpec::new(NonlinearityKind::Saturating);
        spec.amp = Some(2.0);
        spec.k2 = Some(3.0);
        let g = spec.build();
        assert_eq!((g.k1(), g.k2()), (0.0, 3.0));
    }

    #[test]
    fn sine_initial_matches_formula() {
        let cfg = parse_config(MINIMAL).unwrap();
        let grid = cfg.build_grid().unwrap();
        let spec = InitialSpec {
            kind: InitialKind::Sine,
            value: None,
            amp: Some(0.5),
            freq: None,
            offset: Some(1.0),
            values: None,
        };
        let u = spec.build(&grid).unwrap();
        for (x, v) in grid.nodes().iter().zip(u.values()) {
            assert!((v - (1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin())).abs() < 1e-15);
        }
    }
}
