//! Energies, gradients and the Nehari scalings of the coupled system.
//!
//! Gradients returned by [`single_energy`] and [`system_gradient`] are the
//! coordinate representations `∂J/∂w_j` of the derivative; pairing them with
//! a nodal vector gives the directional derivative. [`psi_value_grad`]
//! returns Riesz representatives with respect to the reduced inner product.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{Discretization, Grid, Profile};
use crate::banded::BandCholesky;
use crate::error::{Error, Result};
use crate::form::CellForm;

/// Coupling data `μ_i`, `λ_ij`, `α_ij`, `β_ij` for `ℓ` species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub mu: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl CouplingMatrix {
    /// Validates the matrices against the critical exponent `two_star`.
    ///
    /// Off-diagonal couplings must be symmetric and nonpositive; `λ_ij = 0`
    /// is accepted for decoupled reference runs.
    pub fn new(
        mu: Vec<f64>,
        lambda: Vec<Vec<f64>>,
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        two_star: f64,
    ) -> Result<Self> {
        let ell = mu.len();
        if ell == 0 {
            return Err(Error::InvalidCoupling("need at least one species".into()));
        }
        for (name, m) in [("lambda", &lambda), ("alpha", &alpha), ("beta", &beta)] {
            if m.len() != ell || m.iter().any(|row| row.len() != ell) {
                return Err(Error::InvalidCoupling(format!("{name} must be {ell}×{ell}")));
            }
        }
        if mu.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidCoupling("μ_i must be positive and finite".into()));
        }
        for i in 0..ell {
            for j in 0..ell {
                if i == j {
                    continue;
                }
                let l = lambda[i][j];
                if !l.is_finite() || l > 0.0 {
                    return Err(Error::InvalidCoupling(format!("λ_{i}{j} = {l} must be ≤ 0")));
                }
                if l != lambda[j][i] {
                    return Err(Error::InvalidCoupling(format!("λ not symmetric at ({i}, {j})")));
                }
                let (a, b) = (alpha[i][j], beta[i][j]);
                if !(a > 1.0 && b > 1.0) {
                    return Err(Error::InvalidCoupling(format!(
                        "α_{i}{j}, β_{i}{j} must exceed 1 (got {a}, {b})"
                    )));
                }
                if a != beta[j][i] {
                    return Err(Error::InvalidCoupling(format!("α_{i}{j} ≠ β_{j}{i}")));
                }
                if ((a + b) - two_star).abs() > 1e-12 * two_star {
                    return Err(Error::InvalidCoupling(format!(
                        "α_{i}{j} + β_{i}{j} = {} but 2* = {two_star}",
                        a + b
                    )));
                }
            }
        }
        Ok(Self { mu, lambda, alpha, beta })
    }

    /// Equal off-diagonal coupling `lambda` and `α = β = 2*/2`.
    pub fn uniform(mu: Vec<f64>, lambda: f64, two_star: f64) -> Result<Self> {
        let ell = mu.len();
        let lam = (0..ell)
            .map(|i| (0..ell).map(|j| if i == j { 0.0 } else { lambda }).collect())
            .collect();
        let half = vec![vec![0.5 * two_star; ell]; ell];
        Self::new(mu, lam, half.clone(), half, two_star)
    }

    pub fn ell(&self) -> usize {
        self.mu.len()
    }

    /// Copy with every off-diagonal `λ_ij` replaced by `lambda`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda > 0.0 {
            return Err(Error::InvalidCoupling(format!("λ = {lambda} must be ≤ 0")));
        }
        let mut out = self.clone();
        for (i, row) in out.lambda.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v = lambda;
                }
            }
        }
        Ok(out)
    }

    fn two_star(&self) -> f64 {
        if self.ell() > 1 {
            self.alpha[0][1] + self.beta[0][1]
        } else {
            f64::NAN
        }
    }
}

/// `ℓ` profiles on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBundle {
    pub components: Vec<Profile>,
}

impl ProfileBundle {
    pub fn new(components: Vec<Profile>) -> Self {
        Self { components }
    }

    pub fn ell(&self) -> usize {
        self.components.len()
    }

    pub fn scaled(&self, s: &[f64]) -> Self {
        Self::new(self.components.iter().zip(s).map(|(w, &si)| w.scaled(si)).collect())
    }

    fn check(&self, grid: &Grid, ell: usize) -> Result<()> {
        if self.ell() != ell {
            return Err(Error::EllMismatch { left: self.ell(), right: ell });
        }
        for w in &self.components {
            if w.len() != grid.len() {
                return Err(Error::GridMismatch { expected: grid.len(), got: w.len() });
            }
            if w.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("profile values"));
            }
        }
        Ok(())
    }
}

/// Energy decomposition of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `𝒥(ū)`.
    pub energy: f64,
    /// `‖u_i‖²`.
    pub norms2: Vec<f64>,
    /// `∫ μ_i |u_i|^{2*}`.
    pub nonlinear: Vec<f64>,
    /// `O_ij = ∫ |u_j|^{α_ij} |u_i|^{β_ij}` (zero diagonal).
    pub overlap: Vec<Vec<f64>>,
    /// `β_ij O_ij`.
    pub overlap_weighted: Vec<Vec<f64>>,
    /// `∂_i𝒥(ū) u_i`.
    pub nehari_residuals: Vec<f64>,
    /// Norm of the Riesz gradient, `(Σ_i ‖∇_i 𝒥‖²)^{1/2}`.
    pub gradient_norm: f64,
}

impl EnergyReport {
    /// `|𝒥 − (m/N) Σ ‖u_i‖²|`.
    pub fn nehari_identity_gap(&self, energy_factor: f64) -> f64 {
        (self.energy - energy_factor * self.norms2.iter().sum::<f64>()).abs()
    }
}

/// Free node indices of a profile: the owned nodes of its cell form.
pub fn free_range(disc: &Discretization, w: &Profile) -> Result<Range<usize>> {
    Ok(disc.form_of(w)?.range())
}

/// `sign(x)|x|^{e}` written to stay finite at zero for `e > 0`.
fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(e)
    }
}

fn abs_pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.abs().powf(e)
    }
}

/// Coordinate derivative of `(μ/p) (1/4) Σ |w_j|^p h_j dt`.
fn self_term(w: &[f64], mu: f64, p: f64, grid: &Grid) -> Vec<f64> {
    let dt = grid.dt();
    w.iter()
        .zip(grid.h())
        .map(|(&x, &h)| 0.25 * mu * h * dt * signed_pow(x, p - 1.0))
        .collect()
}

/// `J(w) = ½B(w,w) − (μ/2*) ∫|w|^{2*}` and its coordinate gradient on the free indices.
pub fn single_energy(w: &Profile, mu: f64, disc: &Discretization) -> Result<(f64, Vec<f64>)> {
    let grid = disc.grid();
    if w.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: w.len() });
    }
    let p = grid.params().two_star();
    let form = disc.form_of(w)?;
    let b = form.norm2(&w.values);
    let lp = crate::assembly::lp_integral(&w.values, p, grid);
    let energy = 0.5 * b - mu / p * lp;
    let kw = form.apply_stiffness(&w.values);
    let n = self_term(&w.values, mu, p, grid);
    let free = form.range();
    let grad = (0..grid.len())
        .map(|j| if free.contains(&j) { kw[j] - n[j] } else { 0.0 })
        .collect();
    Ok((energy, grad))
}

/// Scalar integrals of a bundle that determine `𝒥` along componentwise scalings.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BundleIntegrals {
    pub norms2: Vec<f64>,
    pub nonlinear: Vec<f64>,
    pub overlap: Vec<Vec<f64>>,
}

/// Forms of the components of a bundle.
pub(crate) fn forms_of(wb: &ProfileBundle, disc: &Discretization) -> Result<Vec<Arc<CellForm>>> {
    wb.components.iter().map(|w| disc.form_of(w)).collect()
}

pub(crate) fn bundle_integrals(
    values: &[&[f64]],
    forms: &[Arc<CellForm>],
    cm: &CouplingMatrix,
    grid: &Grid,
) -> BundleIntegrals {
    let p = grid.params().two_star();
    let ell = values.len();
    let norms2 = values.iter().zip(forms).map(|(w, f)| f.norm2(w)).collect();
    let nonlinear = values
        .iter()
        .zip(&cm.mu)
        .map(|(w, mu)| mu * crate::assembly::lp_integral(w, p, grid))
        .collect();
    let mut overlap = vec![vec![0.0; ell]; ell];
    for i in 0..ell {
        for j in 0..ell {
            if i != j {
                let (a, b) = (cm.alpha[i][j], cm.beta[i][j]);
                overlap[i][j] = 0.25
                    * grid.quad(|q| abs_pow(values[j][q], a) * abs_pow(values[i][q], b));
            }
        }
    }
    BundleIntegrals { norms2, nonlinear, overlap }
}

/// Coordinate derivative of the nonlinear and coupling parts for component `i`.
fn nonlinear_term(i: usize, values: &[&[f64]], cm: &CouplingMatrix, grid: &Grid) -> Vec<f64> {
    let p = grid.params().two_star();
    let mut n = self_term(values[i], cm.mu[i], p, grid);
    let dt = grid.dt();
    for (k, wk) in values.iter().enumerate() {
        if k == i || cm.lambda[i][k] == 0.0 {
            continue;
        }
        let (a, b, l) = (cm.alpha[i][k], cm.beta[i][k], cm.lambda[i][k]);
        for (q, nq) in n.iter_mut().enumerate() {
            *nq += 0.25 * l * b * grid.h()[q] * dt * abs_pow(wk[q], a) * signed_pow(values[i][q], b - 1.0);
        }
    }
    n
}

fn coupling_energy(ints: &BundleIntegrals, cm: &CouplingMatrix) -> f64 {
    let ell = cm.ell();
    let mut total = 0.0;
    for i in 0..ell {
        for j in 0..ell {
            if i != j {
                total += cm.lambda[i][j] * ints.overlap[i][j];
            }
        }
    }
    total
}

fn energy_from(ints: &BundleIntegrals, cm: &CouplingMatrix, p: f64) -> f64 {
    0.5 * ints.norms2.iter().sum::<f64>() - ints.nonlinear.iter().sum::<f64>() / p
        - 0.5 * coupling_energy(ints, cm)
}

fn nehari_residuals(ints: &BundleIntegrals, cm: &CouplingMatrix) -> Vec<f64> {
    (0..cm.ell())
        .map(|i| {
            let coupling: f64 = (0..cm.ell())
                .filter(|&j| j != i)
                .map(|j| cm.lambda[i][j] * cm.beta[i][j] * ints.overlap[i][j])
                .sum();
            ints.norms2[i] - ints.nonlinear[i] - coupling
        })
        .collect()
}

fn values_of(wb: &ProfileBundle) -> Vec<&[f64]> {
    wb.components.iter().map(|w| w.values.as_slice()).collect()
}

fn check_system(wb: &ProfileBundle, cm: &CouplingMatrix, disc: &Discretization) -> Result<()> {
    wb.check(disc.grid(), cm.ell())?;
    if cm.ell() > 1 && (cm.two_star() - disc.params().two_star()).abs() > 1e-12 {
        return Err(Error::InvalidCoupling(format!(
            "α + β = {} does not match 2* = {}",
            cm.two_star(),
            disc.params().two_star()
        )));
    }
    Ok(())
}

/// Coordinate gradients `∂𝒥/∂u_i`, zero outside each component's cell.
pub fn system_gradient(
    wb: &ProfileBundle,
    cm: &CouplingMatrix,
    disc: &Discretization,
) -> Result<Vec<Vec<f64>>> {
    check_system(wb, cm, disc)?;
    let values = values_of(wb);
    let grid = disc.grid();
    let forms = forms_of(wb, disc)?;
    Ok((0..wb.ell())
        .map(|i| {
            let kw = forms[i].apply_stiffness(values[i]);
            let n = nonlinear_term(i, &values, cm, grid);
            let free = forms[i].range();
            (0..grid.len()).map(|j| if free.contains(&j) { kw[j] - n[j] } else { 0.0 }).collect()
        })
        .collect())
}

/// Riesz representative `K⁻¹ g` of a coordinate gradient, computed as
/// `u − K⁻¹ n` on the free block to avoid forming `K u`.
fn riesz_from_parts(u: &[f64], n: &[f64], factor: &BandCholesky, free: &Range<usize>) -> Vec<f64> {
    let z = factor.solve(&n[free.clone()]);
    let mut out = vec![0.0; u.len()];
    for (k, j) in free.clone().enumerate() {
        out[j] = u[j] - z[k];
    }
    out
}

/// Full energy report of a bundle.
pub fn system_energy(
    wb: &ProfileBundle,
    cm: &CouplingMatrix,
    disc: &Discretization,
) -> Result<EnergyReport> {
    check_system(wb, cm, disc)?;
    let values = values_of(wb);
    let grid = disc.grid();
    let p = grid.params().two_star();
    let forms = forms_of(wb, disc)?;
    let ints = bundle_integrals(&values, &forms, cm, grid);
    let energy = energy_from(&ints, cm, p);
    let residuals = nehari_residuals(&ints, cm);

    let mut grad2 = 0.0;
    for (i, form) in forms.iter().enumerate() {
        let n = nonlinear_term(i, &values, cm, grid);
        let r = riesz_from_parts(values[i], &n, form.factor(), &form.range());
        grad2 += form.norm2(&r);
    }
    let ell = wb.ell();
    let overlap_weighted = (0..ell)
        .map(|i| (0..ell).map(|j| if i == j { 0.0 } else { cm.beta[i][j] * ints.overlap[i][j] }).collect())
        .collect();
    Ok(EnergyReport {
        energy,
        norms2: ints.norms2,
        nonlinear: ints.nonlinear,
        overlap: ints.overlap,
        overlap_weighted,
        nehari_residuals: residuals,
        gradient_norm: grad2.sqrt(),
    })
}

/// `s` with `s·w` on the Nehari manifold of the single equation.
pub fn nehari_scale_single(w: &Profile, mu: f64, disc: &Discretization) -> Result<f64> {
    let grid = disc.grid();
    if w.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: w.len() });
    }
    if w.values.iter().any(|v| !v.is_finite()) || !mu.is_finite() {
        return Err(Error::NonFinite("profile values"));
    }
    if w.is_zero() {
        return Err(Error::ZeroProfile);
    }
    let p = grid.params().two_star();
    let b = disc.form_of(w)?.norm2(&w.values);
    let d = mu * crate::assembly::lp_integral(&w.values, p, grid);
    Ok((b / d).powf(1.0 / (p - 2.0)))
}

/// Outcome of the multi-species scaling problem.
#[derive(Debug, Clone, PartialEq)]
pub enum NehariScale {
    Found(Vec<f64>),
    /// No interior maximizer: the scalings blow up.
    NotInU,
}

impl NehariScale {
    pub fn found(self) -> Option<Vec<f64>> {
        match self {
            NehariScale::Found(s) => Some(s),
            NehariScale::NotInU => None,
        }
    }
}

const SCALE_LIMIT: f64 = 1e6;
const NEWTON_ITERS: usize = 60;

/// Residuals `F_i = A_i − s_i^{p−2}P_i − Σ_j λ_ij β_ij s_j^{α_ij} s_i^{β_ij−2} O_ij`
/// and their Jacobian in `x = ln s`.
fn scale_system(
    s: &[f64],
    ints: &BundleIntegrals,
    cm: &CouplingMatrix,
    p: f64,
    lam_scale: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let ell = s.len();
    let mut f = vec![0.0; ell];
    let mut jac = vec![vec![0.0; ell]; ell];
    for i in 0..ell {
        let self_part = s[i].powf(p - 2.0) * ints.nonlinear[i];
        f[i] = ints.norms2[i] - self_part;
        jac[i][i] = -(p - 2.0) * self_part;
        for j in 0..ell {
            if j == i || ints.overlap[i][j] == 0.0 {
                continue;
            }
            let (a, b) = (cm.alpha[i][j], cm.beta[i][j]);
            let term = lam_scale * cm.lambda[i][j] * b * s[j].powf(a) * s[i].powf(b - 2.0) * ints.overlap[i][j];
            f[i] -= term;
            jac[i][i] -= (b - 2.0) * term;
            jac[i][j] -= a * term;
        }
    }
    (f, jac)
}

/// Dense solve with partial pivoting; `None` when singular.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

enum NewtonOutcome {
    Converged(Vec<f64>),
    Escaped,
    Stalled,
}

fn residual_norm(f: &[f64], ints: &BundleIntegrals) -> f64 {
    f.iter().zip(&ints.norms2).map(|(fi, a)| (fi / a).powi(2)).sum::<f64>().sqrt()
}

fn newton_scales(
    start: &[f64],
    ints: &BundleIntegrals,
    cm: &CouplingMatrix,
    p: f64,
    lam_scale: f64,
) -> NewtonOutcome {
    let mut x: Vec<f64> = start.iter().map(|s| s.ln()).collect();
    let eval = |x: &[f64]| {
        let s: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        scale_system(&s, ints, cm, p, lam_scale)
    };
    let (mut f, mut jac) = eval(&x);
    let mut res = residual_norm(&f, ints);
    for _ in 0..NEWTON_ITERS {
        if res < 1e-14 {
            return NewtonOutcome::Converged(x.iter().map(|v| v.exp()).collect());
        }
        let Some(dx) = solve_dense(jac.clone(), f.iter().map(|v| -v).collect()) else {
            return NewtonOutcome::Stalled;
        };
        let mut tau = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + tau * d.clamp(-5.0, 5.0)).collect();
            if trial.iter().any(|v| v.exp() > SCALE_LIMIT) {
                return NewtonOutcome::Escaped;
            }
            let (ft, jt) = eval(&trial);
            let rt = residual_norm(&ft, ints);
            if rt.is_finite() && (rt < res * (1.0 - 1e-4 * tau) || rt < 1e-14) {
                x = trial;
                f = ft;
                jac = jt;
                res = rt;
                break;
            }
            tau *= 0.5;
            if tau < 1e-8 {
                return NewtonOutcome::Stalled;
            }
        }
    }
    if res < 1e-11 {
        NewtonOutcome::Converged(x.iter().map(|v| v.exp()).collect())
    } else {
        NewtonOutcome::Stalled
    }
}

/// Maximizer of `s̄ ↦ 𝒥(s̄ū)` from the bundle integrals, starting at `start`.
pub(crate) fn scales_from_integrals(
    ints: &BundleIntegrals,
    cm: &CouplingMatrix,
    p: f64,
    start: Option<&[f64]>,
) -> NehariScale {
    let decoupled: Vec<f64> = ints
        .norms2
        .iter()
        .zip(&ints.nonlinear)
        .map(|(a, q)| (a / q).powf(1.0 / (p - 2.0)))
        .collect();
    let first = start.unwrap_or(&decoupled);
    match newton_scales(first, ints, cm, p, 1.0) {
        NewtonOutcome::Converged(s) => return NehariScale::Found(s),
        NewtonOutcome::Escaped if start.is_none() => return NehariScale::NotInU,
        _ => {}
    }
    // continuation in the coupling strength from the decoupled scalings
    let mut s = decoupled;
    let mut t: f64 = 0.0;
    let mut step: f64 = 0.25;
    while t < 1.0 {
        let next = (t + step).min(1.0);
        match newton_scales(&s, ints, cm, p, next) {
            NewtonOutcome::Converged(sn) => {
                s = sn;
                t = next;
                step = (2.0 * step).min(0.5);
            }
            NewtonOutcome::Escaped => return NehariScale::NotInU,
            NewtonOutcome::Stalled => {
                step *= 0.5;
                if step < 1e-6 {
                    return NehariScale::NotInU;
                }
            }
        }
    }
    NehariScale::Found(s)
}

/// Componentwise scalings placing the bundle on the Nehari set.
pub fn nehari_scale_multi(
    wb: &ProfileBundle,
    cm: &CouplingMatrix,
    disc: &Discretization,
) -> Result<NehariScale> {
    check_system(wb, cm, disc)?;
    if wb.components.iter().any(Profile::is_zero) {
        return Err(Error::ZeroProfile);
    }
    let values = values_of(wb);
    let ints = bundle_integrals(&values, &forms_of(wb, disc)?, cm, disc.grid());
    Ok(scales_from_integrals(&ints, cm, disc.params().two_star(), None))
}

/// As [`nehari_scale_multi`], with Newton started at `start`.
pub fn nehari_scale_from(
    wb: &ProfileBundle,
    cm: &CouplingMatrix,
    disc: &Discretization,
    start: &[f64],
) -> Result<NehariScale> {
    check_system(wb, cm, disc)?;
    if start.len() != wb.ell() {
        return Err(Error::EllMismatch { left: start.len(), right: wb.ell() });
    }
    if start.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("start scalings must be positive".into()));
    }
    if wb.components.iter().any(Profile::is_zero) {
        return Err(Error::ZeroProfile);
    }
    let values = values_of(wb);
    let ints = bundle_integrals(&values, &forms_of(wb, disc)?, cm, disc.grid());
    Ok(scales_from_integrals(&ints, cm, disc.params().two_star(), Some(start)))
}

/// `𝒥(s̄ū)` as a function of the scalings, for diagnostics.
pub fn scaled_energy(
    wb: &ProfileBundle,
    cm: &CouplingMatrix,
    disc: &Discretization,
    s: &[f64],
) -> Result<f64> {
    check_system(wb, cm, disc)?;
    let values = values_of(wb);
    let ints = bundle_integrals(&values, &forms_of(wb, disc)?, cm, disc.grid());
    Ok(energy_at_scales(&ints, cm, disc.params().two_star(), s))
}

pub(crate) fn energy_at_scales(ints: &BundleIntegrals, cm: &CouplingMatrix, p: f64, s: &[f64]) -> f64 {
    let ell = s.len();
    let mut e = 0.0;
    for i in 0..ell {
        e += 0.5 * s[i] * s[i] * ints.norms2[i] - s[i].powf(p) * ints.nonlinear[i] / p;
        for j in 0..ell {
            if i != j {
                e -= 0.5 * cm.lambda[i][j] * s[j].powf(cm.alpha[i][j]) * s[i].powf(cm.beta[i][j]) * ints.overlap[i][j];
            }
        }
    }
    e
}

/// `Ψ(ū) = 𝒥(s̄ū)`, the scalings and the tangential Riesz gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiEval {
    pub value: f64,
    pub scales: Vec<f64>,
    pub gradient: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiResult {
    Value(PsiEval),
    NotInU,
}

/// `Ψ(ū)` for a bundle normalized to `‖w_i‖ = 1`, with the gradient
/// projected onto the tangent space of the product of unit spheres.
pub fn psi_value_grad(
    wb_unit: &ProfileBundle,
    cm: &CouplingMatrix,
    disc: &Discretization,
) -> Result<PsiResult> {
    let scales = match nehari_scale_multi(wb_unit, cm, disc)? {
        NehariScale::Found(s) => s,
        NehariScale::NotInU => return Ok(PsiResult::NotInU),
    };
    let grid = disc.grid();
    let u = wb_unit.scaled(&scales);
    let uvals = values_of(&u);
    let forms = forms_of(&u, disc)?;
    let ints = bundle_integrals(&uvals, &forms, cm, grid);
    let value = energy_from(&ints, cm, grid.params().two_star());
    let mut gradient = Vec::with_capacity(u.ell());
    for (i, form) in forms.iter().enumerate() {
        let n = nonlinear_term(i, &uvals, cm, grid);
        let mut r = riesz_from_parts(uvals[i], &n, form.factor(), &form.range());
        r.iter_mut().for_each(|v| *v *= scales[i]);
        let w = &wb_unit.components[i].values;
        let along = form.bilinear(&r, w) / form.norm2(w);
        r.iter_mut().zip(w).for_each(|(v, wi)| *v -= along * wi);
        gradient.push(r);
    }
    Ok(PsiResult::Value(PsiEval { value, scales, gradient }))
}

/// Pieces used by the solvers: coordinate nonlinear terms at a scaled bundle.
pub(crate) fn nonlinear_terms(values: &[&[f64]], cm: &CouplingMatrix, grid: &Grid) -> Vec<Vec<f64>> {
    (0..values.len()).map(|i| nonlinear_term(i, values, cm, grid)).collect()
}

/// Diagonal `−Σ_k λ_ik β_ik (1/4) h dt |u_k|^{α_ik} |u_i|^{β_ik−2}` of the coupling part,
/// floored where `β < 2` would make it singular.
pub(crate) fn coupling_diagonal(i: usize, values: &[&[f64]], cm: &CouplingMatrix, grid: &Grid) -> Vec<f64> {
    let dt = grid.dt();
    let mut d = vec![0.0; grid.len()];
    let floor = 1e-3 * values[i].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, wk) in values.iter().enumerate() {
        if k == i || cm.lambda[i][k] == 0.0 {
            continue;
        }
        let (a, b, l) = (cm.alpha[i][k], cm.beta[i][k], cm.lambda[i][k]);
        for (q, dq) in d.iter_mut().enumerate() {
            let ui = values[i][q].abs().max(if b < 2.0 { floor } else { 0.0 });
            *dq -= 0.25 * l * b * grid.h()[q] * dt * abs_pow(wk[q], a) * abs_pow(ui, b - 2.0);
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_params, sphere_area};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn disc(n: usize, m: usize, n1: usize, count: usize) -> Discretization {
        let p = make_params(n, m, n1, n + 1 - n1).unwrap();
        Discretization::from_params(&p, count).unwrap()
    }

    fn smooth_random(grid: &Grid, rng: &mut impl Rng) -> Profile {
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        Profile::from_fn(grid, |t| c.iter().enumerate().map(|(k, ck)| ck * (k as f64 * t).cos()).sum())
    }

    #[test]
    fn coupling_validation() {
        assert!(CouplingMatrix::uniform(vec![1.0, 1.0], -1.0, 4.0).is_ok());
        assert!(CouplingMatrix::uniform(vec![1.0, 1.0], 0.5, 4.0).is_err());
        assert!(CouplingMatrix::uniform(vec![1.0, -1.0], -1.0, 4.0).is_err());
        let bad = CouplingMatrix::new(
            vec![1.0, 1.0],
            vec![vec![0.0, -1.0], vec![-1.0, 0.0]],
            vec![vec![0.0, 1.5], vec![2.5, 0.0]],
            vec![vec![0.0, 2.5], vec![1.5, 0.0]],
            4.5,
        );
        assert!(bad.is_err());
        let ok = CouplingMatrix::new(
            vec![1.0, 1.0],
            vec![vec![0.0, -1.0], vec![-1.0, 0.0]],
            vec![vec![0.0, 1.5], vec![2.5, 0.0]],
            vec![vec![0.0, 2.5], vec![1.5, 0.0]],
            4.0,
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn single_energy_examples() {
        let d = disc(4, 1, 2, 2048);
        let (j, g) = single_energy(&Profile::zeros(d.grid()), 1.0, &d).unwrap();
        assert_eq!(j, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let v0 = Profile::from_fn(d.grid(), |_| 2f64.sqrt());
        let (_, g) = single_energy(&v0, 1.0, &d).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn single_gradient_matches_finite_differences() {
        let d = disc(4, 1, 2, 64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let w = smooth_random(d.grid(), &mut rng);
        let (_, g) = single_energy(&w, 1.3, &d).unwrap();
        let eps = 1e-6;
        for j in [0, 7, 31, 63] {
            let mut plus = w.clone();
            plus.values[j] += eps;
            let mut minus = w.clone();
            minus.values[j] -= eps;
            let fd = (single_energy(&plus, 1.3, &d).unwrap().0 - single_energy(&minus, 1.3, &d).unwrap().0)
                / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn constant_system_closed_forms() {
        let d = disc(4, 1, 2, 2048);
        let area = sphere_area(4).unwrap();
        let one = Profile::from_fn(d.grid(), |_| 1.0);
        let wb = ProfileBundle::new(vec![one.clone(), one]);
        let cm = CouplingMatrix::uniform(vec![1.0, 1.0], -1.0, 4.0).unwrap();
        let rep = system_energy(&wb, &cm, &d).unwrap();
        for i in 0..2 {
            assert!((rep.norms2[i] - 2.0 * area).abs() / area < 1e-4);
            assert!((rep.nonlinear[i] - area).abs() / area < 1e-4);
        }
        assert!((rep.overlap[0][1] - area).abs() / area < 1e-4);
        let want = 2.0 * area - 0.5 * area + area;
        assert!((rep.energy - want).abs() / want < 1e-4);
    }

    #[test]
    fn disjoint_supports_decouple() {
        let d = disc(4, 1, 2, 256);
        let w1 = Profile::on_cell(d.grid(), 0.0, 1.5, |t| t * (1.5 - t));
        let w2 = Profile::on_cell(d.grid(), 1.5, PI, |t| (t - 1.5) * (PI - t));
        let wb = ProfileBundle::new(vec![w1.clone(), w2.clone()]);
        let cm = CouplingMatrix::uniform(vec![1.0, 2.0], -50.0, 4.0).unwrap();
        let rep = system_energy(&wb, &cm, &d).unwrap();
        assert_eq!(rep.overlap[0][1], 0.0);
        let e1 = single_energy(&w1, 1.0, &d).unwrap().0;
        let e2 = single_energy(&w2, 2.0, &d).unwrap().0;
        assert!((rep.energy - e1 - e2).abs() < 1e-12 * rep.energy.abs());
        let s = nehari_scale_multi(&wb, &cm, &d).unwrap().found().unwrap();
        assert!((s[0] - nehari_scale_single(&w1, 1.0, &d).unwrap()).abs() < 1e-12);
        assert!((s[1] - nehari_scale_single(&w2, 2.0, &d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_species_system_matches_single_energy() {
        let d = disc(5, 2, 3, 128);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let w = smooth_random(d.grid(), &mut rng);
        let cm = CouplingMatrix::uniform(vec![1.7], 0.0, 10.0).unwrap();
        let rep = system_energy(&ProfileBundle::new(vec![w.clone()]), &cm, &d).unwrap();
        let (j, g) = single_energy(&w, 1.7, &d).unwrap();
        assert_eq!(rep.energy, j);
        let gs = system_gradient(&ProfileBundle::new(vec![w]), &cm, &d).unwrap();
        assert_eq!(gs[0], g);
    }

    #[test]
    fn gradient_pairing_gives_nehari_residual() {
        let d = disc(4, 1, 2, 128);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let wb = ProfileBundle::new(vec![smooth_random(d.grid(), &mut rng), smooth_random(d.grid(), &mut rng)]);
        let cm = CouplingMatrix::uniform(vec![1.0, 1.5], -3.0, 4.0).unwrap();
        let rep = system_energy(&wb, &cm, &d).unwrap();
        let g = system_gradient(&wb, &cm, &d).unwrap();
        for i in 0..2 {
            let pair: f64 = g[i].iter().zip(&wb.components[i].values).map(|(a, b)| a * b).sum();
            let r = rep.nehari_residuals[i];
            assert!((pair - r).abs() < 1e-9 * (1.0 + r.abs()), "{pair} vs {r}");
        }
    }

    #[test]
    fn nehari_single_examples() {
        let d = disc(4, 1, 2, 256);
        let w = Profile::from_fn(d.grid(), |t| 1.0 + 0.3 * t.cos());
        let s = nehari_scale_single(&w, 1.0, &d).unwrap();
        let on = w.scaled(s);
        assert!((nehari_scale_single(&on, 1.0, &d).unwrap() - 1.0).abs() < 1e-12);
        let s2 = nehari_scale_single(&w.scaled(2.0), 1.0, &d).unwrap();
        assert!((2.0 * s2 - s).abs() < 1e-12 * s);
        assert_eq!(nehari_scale_single(&Profile::zeros(d.grid()), 1.0, &d), Err(Error::ZeroProfile));
    }

    #[test]
    fn identical_profiles_with_strong_coupling_leave_u() {
        let d = disc(4, 1, 2, 256);
        let w = Profile::from_fn(d.grid(), |_| 1.0);
        let wb = ProfileBundle::new(vec![w.clone(), w]);
        let cm = CouplingMatrix::uniform(vec![1.0, 1.0], -10.0, 4.0).unwrap();
        assert_eq!(nehari_scale_multi(&wb, &cm, &d).unwrap(), NehariScale::NotInU);
    }

    #[test]
    fn scales_maximize_energy() {
        let d = disc(4, 1, 2, 256);
        let w1 = Profile::from_fn(d.grid(), |t| (-(t - 1.0).powi(2) * 3.0).exp());
        let w2 = Profile::from_fn(d.grid(), |t| (-(t - 2.2).powi(2) * 3.0).exp());
        let wb = ProfileBundle::new(vec![w1, w2]);
        let cm = CouplingMatrix::uniform(vec![1.0, 1.0], -2.0, 4.0).unwrap();
        let s = nehari_scale_multi(&wb, &cm, &d).unwrap().found().unwrap();
        let best = scaled_energy(&wb, &cm, &d, &s).unwrap();
        for (r0, r1) in [(0.9, 1.0), (1.1, 1.0), (1.0, 0.9), (1.0, 1.1), (0.95, 1.05)] {
            let e = scaled_energy(&wb, &cm, &d, &[s[0] * r0, s[1] * r1]).unwrap();
            assert!(e <= best);
        }
        let rep = system_energy(&wb.scaled(&s), &cm, &d).unwrap();
        for r in rep.nehari_residuals {
            assert!(r.abs() < 1e-10 * rep.energy);
        }
    }

    #[test]
    fn psi_is_even_and_tangent() {
        let d = disc(4, 1, 2, 128);
        let w1 = Profile::from_fn(d.grid(), |t| (-(t - 1.0).powi(2) * 3.0).exp());
        let w2 = Profile::from_fn(d.grid(), |t| (-(t - 2.2).powi(2) * 3.0).exp());
        let n1 = d.norm2(&w1.values).sqrt();
        let n2 = d.norm2(&w2.values).sqrt();
        let wb = ProfileBundle::new(vec![w1.scaled(1.0 / n1), w2.scaled(1.0 / n2)]);
        let cm = CouplingMatrix::uniform(vec![1.0, 1.0], -2.0, 4.0).unwrap();
        let PsiResult::Value(a) = psi_value_grad(&wb, &cm, &d).unwrap() else { panic!() };
        let flipped = ProfileBundle::new(vec![wb.components[0].scaled(-1.0), wb.components[1].clone()]);
        let PsiResult::Value(b) = psi_value_grad(&flipped, &cm, &d).unwrap() else { panic!() };
        assert!((a.value - b.value).abs() < 1e-12 * a.value);
        for i in 0..2 {
            let along = d.bilinear(&a.gradient[i], &wb.components[i].values);
            assert!(along.abs() < 1e-10);
        }
    }
}
