//! Least-energy solvers: Dirichlet cells, the coupled system and λ sweeps.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{lp_integral, Discretization, Grid, Profile};
use crate::energy::{
    bundle_integrals, coupling_diagonal, energy_at_scales, forms_of, nonlinear_terms,
    scales_from_integrals, system_energy, BundleIntegrals, CouplingMatrix, EnergyReport,
    NehariScale, ProfileBundle,
};
use crate::error::{Error, Result};
use crate::form::CellForm;

/// Iteration controls shared by all descent loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative gradient tolerance.
    pub tol_grad: f64,
    /// Relative energy change regarded as stagnation.
    pub tol_energy: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub step_cap: f64,
    /// Number of independent starts for system solves.
    pub multistart: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol_grad: 1e-8,
            tol_energy: 1e-10,
            armijo: 1e-4,
            backtrack: 0.5,
            step_cap: 1.0,
            multistart: 1,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_grad, self.tol_energy, self.armijo, self.step_cap];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("tolerances and step parameters must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || self.armijo >= 1.0 {
            return Err(Error::InvalidArgument("need 0 < backtrack < 1 and armijo < 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Number of consecutive small energy changes that count as convergence.
const STALL_WINDOW: usize = 5;

/// Least-energy level and profile of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSolution {
    pub a: f64,
    pub b: f64,
    /// `c = (m/N) ‖w*‖²` with `w*` on the Nehari manifold.
    pub level: f64,
    /// Sobolev quotient `B(w,w) / (μ∫|w|^{2*})^{2/2*}` of the minimizer.
    pub quotient: f64,
    pub profile: Profile,
    pub iterations: usize,
    /// Relative Riesz gradient norm of the quotient at exit.
    pub residual: f64,
}

fn embed(x: &[f64], range: &Range<usize>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    out[range.clone()].copy_from_slice(x);
    out
}

/// Default cell initialization `[(t−a)(b−t)]^m`.
pub fn cell_bump(grid: &Grid, a: f64, b: f64, order: usize) -> Vec<f64> {
    grid.nodes()
        .iter()
        .map(|&t| if t > a && t < b { ((t - a) * (b - t)).powi(order as i32) } else { 0.0 })
        .collect()
}

pub fn solve_cell(a: f64, b: f64, mu: f64, disc: &Discretization, opts: &SolveOptions) -> Result<CellSolution> {
    solve_cell_from(a, b, mu, disc, opts, None)
}

/// [`solve_cell`] from a given initial profile (zero outside the cell is enforced).
pub fn solve_cell_from(
    a: f64,
    b: f64,
    mu: f64,
    disc: &Discretization,
    opts: &SolveOptions,
    init: Option<&[f64]>,
) -> Result<CellSolution> {
    opts.validate()?;
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("μ = {mu} must be positive")));
    }
    let grid = disc.grid();
    let params = grid.params();
    let p = params.two_star();
    let form = disc.cell_form(a, b)?;
    let range = form.range();
    let factor = form.factor();
    let len = grid.len();
    let dt = grid.dt();
    let weights: Vec<f64> = grid.h()[range.clone()].iter().map(|h| 0.25 * h * dt).collect();

    let start = match init {
        Some(v) if v.len() == len && v[range.clone()].iter().any(|x| *x != 0.0) => v.to_vec(),
        _ => cell_bump(grid, a, b, params.order()),
    };
    let mut w = embed(&start[range.clone()], &range, len);
    let nrm = form.norm2(&w).sqrt();
    w.iter_mut().for_each(|v| *v /= nrm);

    // D(w) = μ(1/4)Σ|w|^p h dt and the quotient R = B/D^{2/p} on the unit sphere
    let lp = |w: &[f64]| mu * lp_integral(w, p, grid);
    let mut d = lp(&w);
    let mut quotient = d.powf(-2.0 / p);
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut stalls = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let n: Vec<f64> = w[range.clone()]
            .iter()
            .zip(&weights)
            .map(|(x, q)| mu * q * x.signum() * x.abs().powf(p - 1.0))
            .collect();
        let z = factor.solve(&n);
        let dir: Vec<f64> = {
            let mut v = w.clone();
            for (k, j) in range.clone().enumerate() {
                v[j] -= z[k] / d;
            }
            v
        };
        let dd = form.norm2(&dir);
        residual = dd.sqrt();
        if residual < opts.tol_grad {
            converged = true;
            break;
        }
        // a flat quotient ends the run once the residual has hit its round-off floor
        if residual < best {
            best = residual;
            stalls = 0;
        } else {
            stalls += 1;
        }
        if stalls >= STALL_WINDOW && residual < opts.tol_grad.sqrt() {
            converged = true;
            break;
        }
        let slope = 2.0 * quotient * dd;
        let mut tau = opts.step_cap;
        let mut accepted = None;
        while tau > 1e-12 {
            let mut trial: Vec<f64> = w.iter().zip(&dir).map(|(x, g)| x - tau * g).collect();
            let tn = form.norm2(&trial).sqrt();
            trial.iter_mut().for_each(|v| *v /= tn);
            let td = lp(&trial);
            let tq = td.powf(-2.0 / p);
            if tq <= quotient - opts.armijo * tau * slope + 4.0 * f64::EPSILON * quotient {
                accepted = Some((trial, td, tq));
                break;
            }
            tau *= opts.backtrack;
        }
        let Some((trial, td, tq)) = accepted else {
            // no decrease representable: the quotient is flat to round-off
            converged = residual < opts.tol_grad.sqrt();
            break;
        };
        w = trial;
        d = td;
        quotient = tq;
    }
    if !converged {
        return Err(Error::NotConverged { iterations, residual });
    }
    // Nehari point: s²B = s^p D with B = 1
    let s = d.powf(-1.0 / (p - 2.0));
    let values: Vec<f64> = w.iter().map(|v| v * s).collect();
    let b2 = form.norm2(&values);
    Ok(CellSolution {
        a,
        b,
        level: params.energy_factor() * b2,
        quotient,
        profile: Profile { values, cell: Some((a, b)) },
        iterations,
        residual,
    })
}

/// Per-component sign statistics of a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignStats {
    /// Weighted fraction of `∫|w|^{2*}` carried by negative values.
    pub negative_mass: f64,
    pub sign_changes: usize,
}

pub fn sign_stats(w: &Profile, grid: &Grid) -> SignStats {
    let p = grid.params().two_star();
    let total = lp_integral(&w.values, p, grid);
    let neg: Vec<f64> = w.values.iter().map(|v| v.min(0.0)).collect();
    let scale = w.max_abs();
    let significant: Vec<f64> = w.values.iter().copied().filter(|v| v.abs() > 1e-8 * scale).collect();
    let sign_changes = significant.windows(2).filter(|p| p[0] * p[1] < 0.0).count();
    SignStats {
        negative_mass: if total > 0.0 { lp_integral(&neg, p, grid) / total } else { 0.0 },
        sign_changes,
    }
}

/// Result of a system solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSolution {
    /// The scaled bundle on the Nehari set.
    pub bundle: ProfileBundle,
    pub report: EnergyReport,
    /// `Ψ` at the returned point, equal to `report.energy`.
    pub psi: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative preconditioned gradient norm at exit.
    pub residual: f64,
    /// Final `Ψ` of every start, in start order.
    pub start_levels: Vec<Option<f64>>,
    pub signs: Vec<SignStats>,
}

/// `ℓ` disjoint bumps `[(t−a_{i−1})(a_i−t)]^m` on the cells cut at `points`.
pub fn bump_bundle(grid: &Grid, points: &[f64]) -> ProfileBundle {
    let order = grid.params().order();
    let mut ends = vec![0.0];
    ends.extend_from_slice(points);
    ends.push(PI);
    ProfileBundle::new(
        ends.windows(2)
            .map(|c| Profile::new(cell_bump(grid, c[0], c[1], order)))
            .collect(),
    )
}

fn uniform_points(ell: usize) -> Vec<f64> {
    (1..ell).map(|i| PI * i as f64 / ell as f64).collect()
}

fn random_points(ell: usize, grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gap = 8.0 * grid.dt() * grid.params().order() as f64;
    loop {
        let mut pts: Vec<f64> = (1..ell).map(|_| rng.random_range(gap..PI - gap)).collect();
        pts.sort_by(f64::total_cmp);
        let ok = pts.windows(2).all(|w| w[1] - w[0] > gap);
        if ok {
            return pts;
        }
    }
}

struct DescentState {
    w: Vec<Vec<f64>>,
    s: Vec<f64>,
    psi: f64,
}

fn normalized(forms: &[Arc<CellForm>], wb: &ProfileBundle) -> Result<Vec<Vec<f64>>> {
    wb.components
        .iter()
        .zip(forms)
        .map(|(c, f)| {
            let n = f.norm2(&c.values).sqrt();
            if n > 0.0 && n.is_finite() {
                Ok(c.values.iter().map(|v| v / n).collect())
            } else {
                Err(Error::ZeroProfile)
            }
        })
        .collect()
}

fn integrals(w: &[Vec<f64>], forms: &[Arc<CellForm>], cm: &CouplingMatrix, grid: &Grid) -> BundleIntegrals {
    let refs: Vec<&[f64]> = w.iter().map(Vec::as_slice).collect();
    bundle_integrals(&refs, forms, cm, grid)
}

struct RunOutcome {
    w: Vec<Vec<f64>>,
    s: Vec<f64>,
    psi: f64,
    iterations: usize,
    converged: bool,
    residual: f64,
}

/// Riemannian descent of `Ψ` on the product of unit spheres.
fn descend(
    start: Vec<Vec<f64>>,
    forms: &[Arc<CellForm>],
    cm: &CouplingMatrix,
    disc: &Discretization,
    opts: &SolveOptions,
) -> Result<RunOutcome> {
    let grid = disc.grid();
    let p = grid.params().two_star();
    let ell = start.len();
    let len = grid.len();

    let ints = integrals(&start, forms, cm, grid);
    let s = scales_from_integrals(&ints, cm, p, None).found().ok_or(Error::InitOutsideU)?;
    let psi = energy_at_scales(&ints, cm, p, &s);
    let mut st = DescentState { w: start, s, psi };
    let mut stalls = 0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let u: Vec<Vec<f64>> = st.w.iter().zip(&st.s).map(|(w, s)| w.iter().map(|v| v * s).collect()).collect();
        let urefs: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();
        let n = nonlinear_terms(&urefs, cm, grid);

        // preconditioned gradient q_i = P_i⁻¹ g_i with P_i = K + diag(coupling part)
        let mut dirs = Vec::with_capacity(ell);
        let mut slope = 0.0;
        let mut gnorm2 = 0.0;
        for i in 0..ell {
            let form = &forms[i];
            let free = form.range();
            let diag = coupling_diagonal(i, &urefs, cm, grid);
            let shift: Vec<f64> = diag[free.clone()].to_vec();
            let factor = form
                .factor_shifted(&shift)
                .ok_or_else(|| Error::InvalidWeights("preconditioner not positive definite".into()))?;
            let rhs: Vec<f64> = free.clone().map(|j| diag[j] * u[i][j] + n[i][j]).collect();
            let z = factor.solve(&rhs);
            let mut q = vec![0.0; len];
            for (k, j) in free.clone().enumerate() {
                q[j] = u[i][j] - z[k];
            }
            let qq = form.norm2(&q) + free.clone().map(|j| diag[j] * q[j] * q[j]).sum::<f64>();
            gnorm2 += qq;
            slope += st.s[i] * st.s[i] * qq;
            // direction in w_i, projected onto the tangent space at w_i
            let mut r: Vec<f64> = q.iter().map(|v| v * st.s[i]).collect();
            let along = form.bilinear(&r, &st.w[i]);
            r.iter_mut().zip(&st.w[i]).for_each(|(v, w)| *v -= along * w);
            dirs.push(r);
        }
        let unorm2: f64 = st.s.iter().map(|s| s * s).sum();
        residual = (gnorm2 / unorm2).sqrt();
        if residual < opts.tol_grad {
            converged = true;
            break;
        }

        let mut tau = opts.step_cap;
        let mut accepted = None;
        while tau > 1e-12 {
            let trial: Vec<Vec<f64>> = st
                .w
                .iter()
                .zip(&dirs)
                .zip(forms)
                .map(|((w, r), f)| {
                    let mut v: Vec<f64> = w.iter().zip(r).map(|(a, b)| a - tau * b).collect();
                    let nv = f.norm2(&v).sqrt();
                    v.iter_mut().for_each(|x| *x /= nv);
                    v
                })
                .collect();
            let ti = integrals(&trial, forms, cm, grid);
            if let NehariScale::Found(ts) = scales_from_integrals(&ti, cm, p, Some(&st.s)) {
                let tpsi = energy_at_scales(&ti, cm, p, &ts);
                if tpsi <= st.psi - opts.armijo * tau * slope + 8.0 * f64::EPSILON * st.psi.abs() {
                    accepted = Some(DescentState { w: trial, s: ts, psi: tpsi });
                    break;
                }
            }
            tau *= opts.backtrack;
        }
        let Some(next) = accepted else {
            converged = residual < opts.tol_grad.sqrt();
            break;
        };
        let change = (st.psi - next.psi).abs() / st.psi.abs();
        st = next;
        stalls = if change < opts.tol_energy { stalls + 1 } else { 0 };
        if stalls >= STALL_WINDOW {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome { w: st.w, s: st.s, psi: st.psi, iterations, converged, residual })
}

/// Least-energy solution of the coupled system by minimizing `Ψ`.
///
/// Start 0 is `init` (or disjoint bumps on the uniform partition); further
/// starts use bumps on seeded random partitions. The lowest `Ψ` wins, ties
/// broken by start index.
pub fn solve_system(
    cm: &CouplingMatrix,
    disc: &Discretization,
    init: Option<&ProfileBundle>,
    opts: &SolveOptions,
) -> Result<SystemSolution> {
    opts.validate()?;
    let grid = disc.grid();
    let ell = cm.ell();
    let mut starts = Vec::new();
    match init {
        Some(b) => {
            if b.ell() != ell {
                return Err(Error::EllMismatch { left: b.ell(), right: ell });
            }
            if b.components.iter().any(|c| c.len() != grid.len()) {
                return Err(Error::GridMismatch { expected: grid.len(), got: b.components[0].len() });
            }
            starts.push(b.clone());
        }
        None => starts.push(bump_bundle(grid, &uniform_points(ell))),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 1..opts.multistart.max(1) {
        starts.push(bump_bundle(grid, &random_points(ell, grid, &mut rng)));
    }
    let forms = forms_of(&starts[0], disc)?;

    let first = normalized(&forms, &starts[0])?;
    let ints = integrals(&first, &forms, cm, grid);
    if scales_from_integrals(&ints, cm, grid.params().two_star(), None) == NehariScale::NotInU {
        return Err(Error::InitOutsideU);
    }

    let outcomes: Vec<Result<RunOutcome>> = starts
        .par_iter()
        .map(|b| descend(normalized(&forms, b)?, &forms, cm, disc, opts))
        .collect();
    let start_levels = outcomes.iter().map(|o| o.as_ref().ok().map(|r| r.psi)).collect();
    let mut best: Option<RunOutcome> = None;
    let mut first_err = None;
    for o in outcomes {
        match o {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.psi < b.psi) {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(best) = best else {
        return Err(first_err.unwrap_or(Error::InitOutsideU));
    };
    let components = best
        .w
        .iter()
        .zip(&best.s)
        .zip(&starts[0].components)
        .map(|((w, s), c0)| Profile { values: w.iter().map(|v| v * s).collect(), cell: c0.cell })
        .collect();
    let bundle = ProfileBundle::new(components);
    let report = system_energy(&bundle, cm, disc)?;
    let signs = bundle.components.iter().map(|c| sign_stats(c, grid)).collect();
    Ok(SystemSolution {
        psi: report.energy,
        report,
        bundle,
        iterations: best.iterations,
        converged: best.converged,
        residual: best.residual,
        start_levels,
        signs,
    })
}

/// Couplings `λ_k` for a segregation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSchedule {
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub options: SolveOptions,
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

fn default_true() -> bool {
    true
}

impl SweepSchedule {
    /// `λ_k = −base^k` for `k = 0 … count−1`.
    pub fn geometric(base: f64, count: usize, options: SolveOptions) -> Self {
        Self { lambdas: (0..count).map(|k| -base.powi(k as i32)).collect(), options, warm_start: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::InvalidArgument("empty λ schedule".into()));
        }
        if self.lambdas.iter().any(|l| !(*l < 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("sweep couplings must be negative".into()));
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("sweep couplings must decrease strictly".into()));
        }
        self.options.validate()
    }
}

/// One step of a λ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStep {
    pub lambda: f64,
    pub report: EnergyReport,
    pub bundle: ProfileBundle,
    pub converged: bool,
    pub iterations: usize,
    pub warm_started: bool,
}

/// Solves along the schedule, warm-starting each step from the previous minimizer.
pub fn lambda_sweep(
    schedule: &SweepSchedule,
    cm_template: &CouplingMatrix,
    disc: &Discretization,
) -> Result<Vec<SweepStep>> {
    schedule.validate()?;
    let mut steps: Vec<SweepStep> = Vec::with_capacity(schedule.lambdas.len());
    for &lambda in &schedule.lambdas {
        let cm = cm_template.with_lambda(lambda)?;
        let warm = if schedule.warm_start { steps.last().map(|s| s.bundle.clone()) } else { None };
        let single = SolveOptions { multistart: 1, ..schedule.options.clone() };
        let (solution, warm_started) = match warm.as_ref().map(|b| solve_system(&cm, disc, Some(b), &single)) {
            Some(Ok(sol)) if sol.converged => (sol, true),
            _ => (solve_system(&cm, disc, None, &schedule.options)?, false),
        };
        steps.push(SweepStep {
            lambda,
            report: solution.report,
            bundle: solution.bundle,
            converged: solution.converged,
            iterations: solution.iterations,
            warm_started,
        });
    }
    Ok(steps)
}
