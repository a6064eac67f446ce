//! Discretization of the orbit interval `(0, π)`.
//!
//! Profiles live on the midpoints `t_j = (j + ½)π/M`. Two families of
//! operators act on them:
//!
//! * strong-form stencils ([`derivative`], [`apply_l`]) with fourth-order
//!   finite differences, used for pointwise residuals and diagnostics;
//! * the energy form ([`Discretization`]), a staggered finite-volume
//!   discretization of the reduced norm. Derivatives are taken at the
//!   vertices `kπ/M`, where the flux weight `h` vanishes at `0` and `π`, and
//!   `𝓛w = (4/h)(h w')'` is assembled in conservation form. The resulting
//!   quadratic form is symmetric and positive definite by construction and
//!   has no odd–even decoupled modes.
//!
//! Cells are contiguous node ranges with their own form; see [`CellForm`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::banded::{BandCholesky, Banded};
use crate::error::{Error, Result};
use crate::fd::derivative_uniform;
use crate::form::CellForm;
use crate::geometry::{
    conformal_coefficients, weight_derivatives, weight_h, OperatorCoefficients, PhiConvention,
    ProblemParams,
};

/// Smallest admissible node count.
pub const MIN_NODES: usize = 16;

/// Midpoints `(j + ½)π/M`, `j = 0 … M−1`.
pub fn midpoint_nodes(count: usize) -> Vec<f64> {
    let dt = PI / count as f64;
    (0..count).map(|j| (j as f64 + 0.5) * dt).collect()
}

/// Midpoint grid with the weights tabulated at nodes and vertices.
#[derive(Debug, Clone)]
pub struct Grid {
    params: ProblemParams,
    convention: PhiConvention,
    dt: f64,
    nodes: Vec<f64>,
    h: Vec<f64>,
    h_vert: Vec<f64>,
    phi: Vec<f64>,
    dh: Vec<f64>,
    d2h: Vec<f64>,
    dphi: Vec<f64>,
    d2phi: Vec<f64>,
}

impl Grid {
    pub fn new(count: usize, params: &ProblemParams) -> Result<Self> {
        Self::with_convention(count, params, PhiConvention::Selfadjoint)
    }

    pub fn with_convention(
        count: usize,
        params: &ProblemParams,
        convention: PhiConvention,
    ) -> Result<Self> {
        if count < MIN_NODES {
            return Err(Error::GridTooSmall { got: count, min: MIN_NODES });
        }
        let nodes = midpoint_nodes(count);
        let dt = PI / count as f64;
        let derivs: Vec<_> = nodes
            .iter()
            .map(|&t| weight_derivatives(t, params, convention).expect("midpoints are interior"))
            .collect();
        let mut h_vert: Vec<f64> = (0..=count).map(|k| weight_h(k as f64 * dt, params)).collect();
        h_vert[0] = 0.0;
        h_vert[count] = 0.0;
        Ok(Self {
            params: *params,
            convention,
            dt,
            h: derivs.iter().map(|d| d.h).collect(),
            phi: derivs.iter().map(|d| d.phi).collect(),
            dh: derivs.iter().map(|d| d.dh).collect(),
            d2h: derivs.iter().map(|d| d.d2h).collect(),
            dphi: derivs.iter().map(|d| d.dphi).collect(),
            d2phi: derivs.iter().map(|d| d.d2phi).collect(),
            nodes,
            h_vert,
        })
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn convention(&self) -> PhiConvention {
        self.convention
    }

    /// Number of nodes M.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// `h` at the vertices `kπ/M`, `k = 0 … M` (zero at both ends).
    pub fn h_vertices(&self) -> &[f64] {
        &self.h_vert
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn dh(&self) -> &[f64] {
        &self.dh
    }

    pub fn d2h(&self) -> &[f64] {
        &self.d2h
    }

    pub fn dphi(&self) -> &[f64] {
        &self.dphi
    }

    pub fn d2phi(&self) -> &[f64] {
        &self.d2phi
    }

    /// Vertex position `kπ/M`.
    pub fn vertex(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Index of the vertex nearest to `t`.
    pub fn nearest_vertex(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.len())
    }

    /// Midpoint quadrature `Σ g(t_j) h(t_j) dt`.
    pub fn quad(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.h.iter().enumerate().map(|(j, h)| g(j) * h).sum::<f64>() * self.dt
    }

    /// Linear interpolation of nodal values, constant beyond the outer midpoints.
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        let s = t / self.dt - 0.5;
        if s <= 0.0 {
            return values[0];
        }
        let last = self.len() - 1;
        if s >= last as f64 {
            return values[last];
        }
        let j = s.floor() as usize;
        let frac = s - j as f64;
        values[j] * (1.0 - frac) + values[j + 1] * frac
    }

    fn check(&self, values: &[f64]) -> Result<()> {
        if values.len() == self.len() {
            Ok(())
        } else {
            Err(Error::GridMismatch { expected: self.len(), got: values.len() })
        }
    }
}

/// Shorthand for [`Grid::new`].
pub fn make_grid(count: usize, params: &ProblemParams) -> Result<Grid> {
    Grid::new(count, params)
}

/// A reduced profile `w` sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub values: Vec<f64>,
    /// Support interval; the full interval when absent.
    pub cell: Option<(f64, f64)>,
}

impl Profile {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, cell: None }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::new(vec![0.0; grid.len()])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::new(grid.nodes().iter().map(|&t| f(t)).collect())
    }

    /// Samples `f` on the nodes inside `(a, b)` and zeroes the rest.
    pub fn on_cell(grid: &Grid, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Self {
        let values = grid
            .nodes()
            .iter()
            .map(|&t| if t > a && t < b { f(t) } else { 0.0 })
            .collect();
        Self { values, cell: Some((a, b)) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * s).collect(), cell: self.cell }
    }
}

/// Boundary behavior at one end of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndCondition {
    /// End of the orbit interval (`0` or `π`); no condition is imposed.
    Natural,
    /// Interior breakpoint; `w = w' = … = w^{(m−1)} = 0`.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellBC {
    pub left: EndCondition,
    pub right: EndCondition,
}

/// Node indices strictly inside `(a, b)` and the induced end conditions.
///
/// An end that cuts off no node is an orbit end and stays natural.
pub fn cell_indices(nodes: &[f64], a: f64, b: f64) -> (Range<usize>, CellBC) {
    let lo = nodes.partition_point(|&t| t <= a);
    let hi = nodes.partition_point(|&t| t < b);
    let end = |natural| if natural { EndCondition::Natural } else { EndCondition::Clamped };
    let bc = CellBC { left: end(lo == 0), right: end(hi == nodes.len()) };
    (lo..hi.max(lo), bc)
}

pub fn cell_mask(grid: &Grid, a: f64, b: f64, order: usize) -> Result<(Range<usize>, CellBC)> {
    if !(a.is_finite() && b.is_finite()) || a < 0.0 || b > PI + 1e-12 || a >= b {
        return Err(Error::InvalidInterval { a, b });
    }
    let min_width = 4.0 * grid.dt() * order as f64;
    let (range, bc) = cell_indices(grid.nodes(), a, b);
    if b - a < min_width || range.is_empty() {
        return Err(Error::IntervalTooThin { a, b, min_width });
    }
    Ok((range, bc))
}

/// First derivative at the nodes, fourth order; zero values outside a cell act
/// as the ghost extension of a clamped end.
pub fn derivative(w: &Profile, grid: &Grid) -> Result<Vec<f64>> {
    grid.check(&w.values)?;
    Ok(derivative_uniform(&w.values, grid.dt(), 1))
}

/// Derivative of order `k` at the nodes, fourth order.
pub fn derivative_k(values: &[f64], grid: &Grid, k: usize) -> Result<Vec<f64>> {
    grid.check(values)?;
    Ok(derivative_uniform(values, grid.dt(), k))
}

/// `𝓛^reps w` with `𝓛 = 4 d²/dt² + φ d/dt` in strong form.
///
/// Every application costs two orders of smoothness; expect the error to
/// grow with `reps` at fixed resolution.
pub fn apply_l(w: &Profile, grid: &Grid, reps: usize) -> Result<Vec<f64>> {
    grid.check(&w.values)?;
    let mut v = w.values.clone();
    for _ in 0..reps {
        let d1 = derivative_uniform(&v, grid.dt(), 1);
        let d2 = derivative_uniform(&v, grid.dt(), 2);
        v = d2.iter().zip(&d1).zip(grid.phi()).map(|((a, b), p)| 4.0 * a + p * b).collect();
    }
    Ok(v)
}

/// `(1/4) Σ |w_j|^p h_j dt`, the reduced form of `∫_{ℝ^N} |u|^p`.
pub fn weighted_lp(w: &Profile, p: f64, grid: &Grid) -> Result<f64> {
    grid.check(&w.values)?;
    Ok(lp_integral(&w.values, p, grid))
}

pub(crate) fn lp_integral(values: &[f64], p: f64, grid: &Grid) -> f64 {
    0.25 * grid.quad(|j| values[j].abs().powf(p))
}

/// Cell forms kept per discretization before the cache is flushed.
const CELL_CACHE: usize = 256;

/// Grid, operator constants and the energy forms on the whole interval and on cells.
#[derive(Debug)]
pub struct Discretization {
    grid: Grid,
    coeffs: OperatorCoefficients,
    full: Arc<CellForm>,
    cells: Mutex<HashMap<(u64, u64), Arc<CellForm>>>,
}

impl Clone for Discretization {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs.clone(),
            full: Arc::clone(&self.full),
            cells: Mutex::new(HashMap::new()),
        }
    }
}

impl Discretization {
    pub fn new(grid: Grid, coeffs: OperatorCoefficients) -> Result<Self> {
        if coeffs.order() != grid.params().order() {
            return Err(Error::InvalidWeights(format!(
                "coefficients of order {} on a grid of order {}",
                coeffs.order(),
                grid.params().order()
            )));
        }
        let full = Arc::new(CellForm::new(&grid, &coeffs.k, 0.0, PI)?);
        Ok(Self { grid, coeffs, full, cells: Mutex::new(HashMap::new()) })
    }

    /// Default grid and conformal coefficients for `params`.
    pub fn from_params(params: &ProblemParams, count: usize) -> Result<Self> {
        Self::new(Grid::new(count, params)?, conformal_coefficients(params))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &ProblemParams {
        self.grid.params()
    }

    pub fn coeffs(&self) -> &OperatorCoefficients {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Form on the whole interval.
    pub fn full_form(&self) -> &Arc<CellForm> {
        &self.full
    }

    /// Form on the cell `(a, b)`, built on first use.
    pub fn cell_form(&self, a: f64, b: f64) -> Result<Arc<CellForm>> {
        let key = (a.to_bits(), b.to_bits());
        if let Some(f) = self.cells.lock().expect("cell cache poisoned").get(&key) {
            return Ok(Arc::clone(f));
        }
        let (_, bc) = cell_mask(&self.grid, a, b, self.coeffs.order())?;
        if bc.left == EndCondition::Natural && bc.right == EndCondition::Natural {
            return Ok(Arc::clone(&self.full));
        }
        let form = Arc::new(CellForm::new(&self.grid, &self.coeffs.k, a, b)?);
        let mut cells = self.cells.lock().expect("cell cache poisoned");
        if cells.len() >= CELL_CACHE {
            cells.clear();
        }
        cells.insert(key, Arc::clone(&form));
        Ok(form)
    }

    /// Form matching the support of `w`.
    pub fn form_of(&self, w: &Profile) -> Result<Arc<CellForm>> {
        match w.cell {
            Some((a, b)) => self.cell_form(a, b),
            None => Ok(Arc::clone(&self.full)),
        }
    }

    /// The symmetric matrix `K` with `B(w, v) = wᵀ K v` on the whole interval.
    pub fn stiffness(&self) -> &Banded {
        self.full.stiffness()
    }

    /// Factorization of `K` on the whole interval.
    pub fn full_factor(&self) -> &BandCholesky {
        self.full.factor()
    }

    /// `B(w, v)` on the whole interval.
    pub fn bilinear(&self, w: &[f64], v: &[f64]) -> f64 {
        self.full.bilinear(w, v)
    }

    /// `‖w‖²` on the whole interval.
    pub fn norm2(&self, w: &[f64]) -> f64 {
        self.full.norm2(w)
    }

    /// `K w` on the whole interval.
    pub fn apply_stiffness(&self, w: &[f64]) -> Vec<f64> {
        self.full.apply_stiffness(w)
    }
}

/// `B(w, v)` for two profiles on the same grid, in the form of their common cell.
pub fn bilinear_form(w: &Profile, v: &Profile, disc: &Discretization) -> Result<f64> {
    disc.grid.check(&w.values)?;
    disc.grid.check(&v.values)?;
    let form = if w.cell == v.cell { disc.form_of(w)? } else { Arc::clone(disc.full_form()) };
    Ok(form.bilinear(&w.values, &v.values))
}
