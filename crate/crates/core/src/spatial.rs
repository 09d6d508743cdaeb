//! Quadrature grids on an interval, nodal fields, and the discrete integral
//! operator `(Ku)(x) = ∫ J(x, y) u(y) dy`.
//!
//! Every reduction runs left to right over node indices so results are
//! bit-reproducible regardless of how callers schedule work.

use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    Trapezoid,
    Midpoint,
}

impl FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trapezoid" => Ok(Self::Trapezoid),
            "midpoint" => Ok(Self::Midpoint),
            other => Err(Error::Config(format!("unknown quadrature rule `{other}`"))),
        }
    }
}

impl fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Trapezoid => f.write_str("trapezoid"),
            Self::Midpoint => f.write_str("midpoint"),
        }
    }
}

/// Quadrature discretization of the interval `(a, b)`.
#[derive(Debug, PartialEq)]
pub struct SpatialGrid {
    a: f64,
    b: f64,
    rule: QuadratureRule,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Builds a grid of `n` nodes on `(a, b)`.
///
/// The trapezoid rule places nodes on both endpoints; the midpoint rule uses
/// cell centers.
pub fn build_grid(a: f64, b: f64, n: usize, rule: QuadratureRule) -> Result<Arc<SpatialGrid>> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Config(format!("grid bounds must be finite, got ({a}, {b})")));
    }
    if b <= a {
        return Err(Error::Config(format!("grid requires b > a, got ({a}, {b})")));
    }
    if n < 2 {
        return Err(Error::Config(format!("grid requires at least 2 nodes, got {n}")));
    }
    let measure = b - a;
    let (nodes, weights) = match rule {
        QuadratureRule::Trapezoid => {
            let h = measure / (n - 1) as f64;
            let mut nodes: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
            nodes[n - 1] = b;
            let mut weights = vec![h; n];
            weights[0] = 0.5 * h;
            weights[n - 1] = 0.5 * h;
            (nodes, weights)
        }
        QuadratureRule::Midpoint => {
            let h = measure / n as f64;
            let nodes = (0..n).map(|i| a + (i as f64 + 0.5) * h).collect();
            (nodes, vec![h; n])
        }
    };
    let total: f64 = weights.iter().sum();
    if (total - measure).abs() > 1e-12 * measure {
        return Err(Error::Config(format!(
            "quadrature weights sum to {total}, expected {measure}"
        )));
    }
    Ok(Arc::new(SpatialGrid {
        a,
        b,
        rule,
        nodes,
        weights,
    }))
}

impl SpatialGrid {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `|Ω| = b - a`.
    pub fn measure(&self) -> f64 {
        self.b - self.a
    }

    /// `|Ω|^{1/p}`, taken as 1 for `p = ∞`.
    pub fn measure_root(&self, p: f64) -> f64 {
        if p.is_infinite() {
            1.0
        } else {
            self.measure().powf(1.0 / p)
        }
    }
}

/// Validates an L^p exponent: `p ≥ 1` or `p = ∞`.
pub fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        Err(Error::Config(format!("L^p exponent must satisfy p >= 1, got {p}")))
    } else {
        Ok(())
    }
}

/// Conjugate exponent `q` with `1/p + 1/q = 1`.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

fn weighted_lp(values: &[f64], weights: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        values.iter().zip(weights).map(|(v, w)| w * v.abs()).sum()
    } else if p == 2.0 {
        values.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
    } else {
        values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// Nodal values of a state on a grid; zero outside the interval.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<SpatialGrid>,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.same_grid(other) && self.values == other.values
    }
}

impl Field {
    pub fn new(grid: Arc<SpatialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("field value at node {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness scan. Length must match.
    pub(crate) fn from_raw(grid: Arc<SpatialGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<SpatialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<SpatialGrid>, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    pub fn zeros(grid: Arc<SpatialGrid>) -> Self {
        let n = grid.len();
        Self::from_raw(grid, vec![0.0; n])
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_grid(&self, grid: &Arc<SpatialGrid>) -> Result<()> {
        if Arc::ptr_eq(&self.grid, grid) || *self.grid == **grid {
            Ok(())
        } else {
            Err(Error::Dimension("field lives on a different grid".into()))
        }
    }

    pub fn sup_norm(&self) -> f64 {
        weighted_lp(&self.values, self.grid.weights(), f64::INFINITY)
    }

    /// Discrete L^p norm: `(Σ w_i |u_i|^p)^{1/p}`, or `max |u_i|` for `p = ∞`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        check_exponent(p)?;
        Ok(weighted_lp(&self.values, self.grid.weights(), p))
    }

    /// L^p distance to another field on the same grid.
    pub fn distance(&self, other: &Field, p: f64) -> Result<f64> {
        check_exponent(p)?;
        if !self.same_grid(other) {
            return Err(Error::Dimension("fields live on different grids".into()));
        }
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(weighted_lp(&diff, self.grid.weights(), p))
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Field, beta: f64) -> Result<Field> {
        if !self.same_grid(other) {
            return Err(Error::Dimension("fields live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Field::new(self.grid.clone(), values)
    }
}

/// `dist(A, B) = max_{a∈A} min_{b∈B} ‖a − b‖_p`. Not symmetric.
pub fn hausdorff_semidist(a: &[Field], b: &[Field], p: f64) -> Result<f64> {
    check_exponent(p)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("Hausdorff semi-distance of an empty set".into()));
    }
    let mut worst = 0.0_f64;
    for u in a {
        let mut nearest = f64::INFINITY;
        for v in b {
            nearest = nearest.min(u.distance(v, p)?);
        }
        worst = worst.max(nearest);
    }
    Ok(worst)
}

/// Kernel families selectable by name.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelShape {
    /// `J ≡ 1/|Ω|`, unit mass over the interval.
    Uniform,
    /// `J(x,y) = exp(−(x−y)²/σ²) / (σ√π)`, unit mass over ℝ.
    Gaussian { sigma: f64 },
    /// `J(x,y) = max(0, r − |x−y|) / r²`, unit mass over ℝ.
    Tent { radius: f64 },
    /// Values tabulated on the grid nodes, row-major.
    Table { nodes: Vec<f64>, values: Vec<f64> },
}

impl KernelShape {
    /// Reads an `n×n` table whose header row lists the node coordinates.
    pub fn table_from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("kernel table {what} `{s}`: {e}")))
        };
        let header = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
        let nodes = header.iter().map(|s| parse(s, "header")).collect::<Result<Vec<_>>>()?;
        let n = nodes.len();
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Io(e.to_string()))?;
            if record.len() != n {
                return Err(Error::Config(format!(
                    "kernel table row {rows} has {} entries, expected {n}",
                    record.len()
                )));
            }
            for s in record.iter() {
                values.push(parse(s, "entry")?);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Config(format!("kernel table has {rows} rows, expected {n}")));
        }
        Ok(Self::Table { nodes, values })
    }
}

/// Quadrature matrix realizing `K` on a grid: `matrix[i][j] = J(x_i, x_j)·w_j`.
#[derive(Clone, Debug)]
pub struct DiscreteKernel {
    grid: Arc<SpatialGrid>,
    raw: Vec<f64>,
    matrix: Vec<f64>,
    row_mass: Vec<f64>,
    symmetric: bool,
}

/// Assembles `K` from an analytic kernel `J(x, y)`.
pub fn assemble_kernel(grid: &Arc<SpatialGrid>, j: impl Fn(f64, f64) -> f64) -> Result<DiscreteKernel> {
    let nodes = grid.nodes();
    DiscreteKernel::assemble_indexed(grid, |i, k| j(nodes[i], nodes[k]))
}

impl DiscreteKernel {
    pub fn from_shape(grid: &Arc<SpatialGrid>, shape: &KernelShape) -> Result<Self> {
        match shape {
            KernelShape::Uniform => {
                let height = 1.0 / grid.measure();
                assemble_kernel(grid, |_, _| height)
            }
            &KernelShape::Gaussian { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")));
                }
                let c = 1.0 / (sigma * std::f64::consts::PI.sqrt());
                assemble_kernel(grid, |x, y| {
                    let d = (x - y) / sigma;
                    c * (-d * d).exp()
                })
            }
            &KernelShape::Tent { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Config(format!("tent radius must be positive, got {radius}")));
                }
                let r2 = radius * radius;
                assemble_kernel(grid, |x, y| (radius - (x - y).abs()).max(0.0) / r2)
            }
            KernelShape::Table { nodes, values } => {
                let n = grid.len();
                if nodes.len() != n || values.len() != n * n {
                    return Err(Error::Dimension(format!(
                        "kernel table is {}x{}, grid has {n} nodes",
                        nodes.len(),
                        nodes.len()
                    )));
                }
                let tol = 1e-9 * grid.measure();
                if let Some(i) = nodes.iter().zip(grid.nodes()).position(|(a, b)| (a - b).abs() > tol) {
                    return Err(Error::Config(format!(
                        "kernel table node {i} = {} does not match grid node {}",
                        nodes[i],
                        grid.nodes()[i]
                    )));
                }
                Self::assemble_indexed(grid, |i, k| values[i * n + k])
            }
        }
    }

    fn assemble_indexed(grid: &Arc<SpatialGrid>, j: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = grid.len();
        let mut raw = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                let v = j(i, k);
                if !v.is_finite() {
                    return Err(Error::Kernel {
                        row: i,
                        col: k,
                        reason: format!("non-finite value {v}"),
                    });
                }
                if v < 0.0 {
                    return Err(Error::Kernel {
                        row: i,
                        col: k,
                        reason: format!("negative value {v}"),
                    });
                }
                raw.push(v);
            }
        }
        for i in 0..n {
            for k in (i + 1)..n {
                let d = (raw[i * n + k] - raw[k * n + i]).abs();
                if d > SYMMETRY_TOL {
                    return Err(Error::Kernel {
                        row: i,
                        col: k,
                        reason: format!("asymmetry {d:e} exceeds {SYMMETRY_TOL:e}"),
                    });
                }
            }
        }
        let w = grid.weights();
        let matrix: Vec<f64> = raw
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(w).map(|(j, w)| j * w))
            .collect();
        let row_mass: Vec<f64> = matrix.chunks_exact(n).map(|row| row.iter().sum()).collect();
        if let Some(i) = row_mass.iter().position(|&m| m > 1.0 + MASS_TOL) {
            return Err(Error::Kernel {
                row: i,
                col: i,
                reason: format!("row mass {} exceeds 1", row_mass[i]),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            raw,
            matrix,
            row_mass,
            symmetric: true,
        })
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Unweighted kernel values `J(x_i, x_j)`, row-major.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Weighted matrix `J(x_i, x_j)·w_j`, row-major.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row_mass(&self) -> &[f64] {
        &self.row_mass
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn max_row_mass(&self) -> f64 {
        self.row_mass.iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// Writes `K u` into `out`. Both slices must have the grid's length.
    pub fn apply_slice(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(u.len(), n);
        debug_assert_eq!(out.len(), n);
        for (row, o) in self.matrix.chunks_exact(n).zip(out.iter_mut()) {
            let mut acc = 0.0;
            for (m, v) in row.iter().zip(u) {
                acc += m * v;
            }
            *o = acc;
        }
    }

    /// `(Ku)(x_i) = Σ_j J(x_i, x_j) w_j u_j`.
    pub fn apply(&self, u: &Field) -> Result<Field> {
        u.check_grid(&self.grid)?;
        let mut out = vec![0.0; self.len()];
        self.apply_slice(u.values(), &mut out);
        Ok(Field::from_raw(self.grid.clone(), out))
    }

    /// `sup_i ‖J(x_i, ·)‖_{L^q(Ω)}` by grid quadrature.
    pub fn j_norm(&self, q: f64) -> Result<f64> {
        check_exponent(q)?;
        let n = self.len();
        Ok(self
            .raw
            .chunks_exact(n)
            .map(|row| weighted_lp(row, self.grid.weights(), q))
            .fold(0.0_f64, f64::max))
    }

    /// `sup_i ‖∂_x J(x_i, ·)‖_{L^q(Ω)}`, with `∂_x` by finite differences
    /// across rows (central inside, one-sided at the ends).
    pub fn dx_norm(&self, q: f64) -> Result<f64> {
        check_exponent(q)?;
        let n = self.len();
        let x = self.grid.nodes();
        let mut best = 0.0_f64;
        let mut deriv = vec![0.0; n];
        for i in 0..n {
            let (lo, hi) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            let h = x[hi] - x[lo];
            for (k, d) in deriv.iter_mut().enumerate() {
                *d = (self.raw[hi * n + k] - self.raw[lo * n + k]) / h;
            }
            best = best.max(weighted_lp(&deriv, self.grid.weights(), q));
        }
        Ok(best)
    }
}
