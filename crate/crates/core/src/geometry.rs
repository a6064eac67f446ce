//! Closed-form data of the orbit-space reduction.
//!
//! A Γ-invariant function on 𝕊^N, Γ = O(n1)×O(n2), is a profile `w(t)` of the
//! orbit variable `t = arccos(|x|² − |y|²) ∈ [0, π]`. Everything in this module
//! is an explicit formula in `t` or in the ambient coordinates: the operator
//! constants, the orbit measure density `h`, the drift `φ` of the reduced
//! Laplace–Beltrami operator `𝓛 = 4 d²/dt² + φ d/dt`, and the stereographic
//! transforms between ℝ^N and the profile.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::assembly::{Grid, Profile};
use crate::error::{Error, Result};

/// Dimensions of the problem and the critical exponent `2N/(N−2m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    dim: usize,
    order: usize,
    n1: usize,
    n2: usize,
    two_star: f64,
}

impl ProblemParams {
    pub fn new(dim: usize, order: usize, n1: usize, n2: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::ZeroOrder);
        }
        if dim <= 2 * order {
            return Err(Error::SubcriticalDimension { dim, order });
        }
        if n1 + n2 != dim + 1 {
            return Err(Error::BlockSum { n1, n2, dim });
        }
        if n1 < 2 || n2 < 2 {
            return Err(Error::BlockTooSmall { n1, n2 });
        }
        let two_star = 2.0 * dim as f64 / (dim - 2 * order) as f64;
        Ok(Self { dim, order, n1, n2, two_star })
    }

    /// Spatial dimension N.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Operator order m.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Critical exponent 2*_m.
    pub fn two_star(&self) -> f64 {
        self.two_star
    }

    /// `m/N`, the factor relating energy and squared norm on the Nehari set.
    pub fn energy_factor(&self) -> f64 {
        self.order as f64 / self.dim as f64
    }

    /// `N/(2m)`, the exponent taking Sobolev quotients to energy levels.
    pub fn level_exponent(&self) -> f64 {
        self.dim as f64 / (2 * self.order) as f64
    }
}

/// Shorthand for [`ProblemParams::new`].
pub fn make_params(dim: usize, order: usize, n1: usize, n2: usize) -> Result<ProblemParams> {
    ProblemParams::new(dim, order, n1, n2)
}

/// Constants of the conformal operator `∏(−Δ_g + c_k) = Σ a_i (−Δ_g)^i`
/// and the weights `k` used in the reduced norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorCoefficients {
    /// `c_1 … c_m`.
    pub c: Vec<f64>,
    /// `a_0 … a_m`, with `a_m = 1` and `a_0 = ∏ c_k`.
    pub a: Vec<f64>,
    /// Norm weights `k_0 … k_m`; equal to `a` unless overridden.
    pub k: Vec<f64>,
}

impl OperatorCoefficients {
    /// Replaces the norm weights. All `m + 1` entries must be positive.
    pub fn with_weights(mut self, k: Vec<f64>) -> Result<Self> {
        if k.len() != self.a.len() {
            return Err(Error::InvalidWeights(format!(
                "expected {} weights, got {}",
                self.a.len(),
                k.len()
            )));
        }
        if k.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidWeights("weights must be positive and finite".into()));
        }
        self.k = k;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.c.len()
    }

    /// `Σ a_i λ^i`.
    pub fn eval_expanded(&self, lambda: f64) -> f64 {
        self.a.iter().rev().fold(0.0, |acc, &ai| acc * lambda + ai)
    }

    /// `∏ (λ + c_k)`.
    pub fn eval_product(&self, lambda: f64) -> f64 {
        self.c.iter().map(|ck| lambda + ck).product()
    }
}

pub fn conformal_coefficients(params: &ProblemParams) -> OperatorCoefficients {
    let n = params.dim() as f64;
    let c: Vec<f64> = (1..=params.order())
        .map(|k| {
            let k = k as f64;
            (n - 2.0 * k) * (n + 2.0 * k - 2.0) / 4.0
        })
        .collect();
    // expand ∏ (λ + c_k); poly[i] is the coefficient of λ^i
    let mut poly = vec![1.0];
    for &ck in &c {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, &p) in poly.iter().enumerate() {
            next[i] += ck * p;
            next[i + 1] += p;
        }
        poly = next;
    }
    OperatorCoefficients { c, k: poly.clone(), a: poly }
}

/// `|𝕊^d|`, the d-dimensional measure of the unit sphere in ℝ^{d+1}.
pub fn sphere_area(d: i64) -> Result<f64> {
    if d < 1 {
        return Err(Error::SphereDimension(d));
    }
    // |S^d| = 2π/(d−1) |S^{d−2}|, seeded by |S^0| = 2 and |S^1| = 2π
    let mut area = if d % 2 == 0 { 2.0 } else { 2.0 * PI };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        area *= 2.0 * PI / (k - 1) as f64;
        k += 2;
    }
    Ok(area)
}

/// Sign convention for the drift `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiConvention {
    /// `φ = 4h'/h = (2/sin t)[(n1+n2−2) cos t + (n2−n1)]`; makes `𝓛` symmetric in `L²(h dt)`.
    #[default]
    Selfadjoint,
    /// `(2/sin t)[(n1+n2−2) cos t − (n2−n1)]`, the alternative sign.
    PaperLiteral,
}

impl PhiConvention {
    /// Coefficients `(p, q)` with `φ = p tan(t/2) + q cot(t/2)`.
    pub(crate) fn tan_cot(self, params: &ProblemParams) -> (f64, f64) {
        let a = (params.n1() - 1) as f64;
        let b = (params.n2() - 1) as f64;
        match self {
            PhiConvention::Selfadjoint => (-2.0 * a, 2.0 * b),
            PhiConvention::PaperLiteral => (-2.0 * b, 2.0 * a),
        }
    }
}

fn h_prefactor(params: &ProblemParams) -> f64 {
    // n1, n2 ≥ 2 is validated on construction
    let s1 = sphere_area(params.n1() as i64 - 1).expect("n1 ≥ 2");
    let s2 = sphere_area(params.n2() as i64 - 1).expect("n2 ≥ 2");
    2.0 * s1 * s2
}

/// Orbit measure density `h(t) = 2|𝕊^{n1−1}||𝕊^{n2−1}| cos^{n1−1}(t/2) sin^{n2−1}(t/2)`.
pub fn weight_h(t: f64, params: &ProblemParams) -> f64 {
    let half = 0.5 * t;
    let c = half.cos().max(0.0);
    let s = half.sin().max(0.0);
    h_prefactor(params) * c.powi(params.n1() as i32 - 1) * s.powi(params.n2() as i32 - 1)
}

fn check_open(t: f64) -> Result<()> {
    if t > 0.0 && t < PI {
        Ok(())
    } else {
        Err(Error::SingularEndpoint(t))
    }
}

pub fn weight_phi(t: f64, params: &ProblemParams, convention: PhiConvention) -> Result<f64> {
    check_open(t)?;
    let (p, q) = convention.tan_cot(params);
    let half = 0.5 * t;
    Ok(p * half.tan() + q / half.tan())
}

/// Analytic derivatives of `h` and `φ` at an interior point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDerivatives {
    pub h: f64,
    pub dh: f64,
    pub d2h: f64,
    pub phi: f64,
    pub dphi: f64,
    pub d2phi: f64,
}

pub fn weight_derivatives(
    t: f64,
    params: &ProblemParams,
    convention: PhiConvention,
) -> Result<WeightDerivatives> {
    check_open(t)?;
    let a = (params.n1() - 1) as f64;
    let b = (params.n2() - 1) as f64;
    let half = 0.5 * t;
    let tan = half.tan();
    let cot = 1.0 / tan;
    let sec2 = 1.0 + tan * tan;
    let csc2 = 1.0 + cot * cot;

    // log-derivatives of h
    let g1 = -0.5 * a * tan + 0.5 * b * cot;
    let g2 = -0.25 * a * sec2 - 0.25 * b * csc2;
    let h = weight_h(t, params);

    let (p, q) = convention.tan_cot(params);
    Ok(WeightDerivatives {
        h,
        dh: h * g1,
        d2h: h * (g2 + g1 * g1),
        phi: p * tan + q * cot,
        dphi: 0.5 * p * sec2 - 0.5 * q * csc2,
        d2phi: 0.5 * p * sec2 * tan + 0.5 * q * csc2 * cot,
    })
}

/// Inverse stereographic projection `σ⁻¹(x) = (2x, |x|²−1)/(1+|x|²)`.
pub fn inverse_stereographic(x: &[f64]) -> Vec<f64> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let denom = 1.0 + r2;
    let mut p: Vec<f64> = x.iter().map(|v| 2.0 * v / denom).collect();
    p.push((r2 - 1.0) / denom);
    p
}

/// `f = |x'|² − |y'|²` for a point of ℝ^{N+1} split as ℝ^{n1}×ℝ^{n2}.
pub fn orbit_function(point: &[f64], n1: usize) -> f64 {
    let (x, y) = point.split_at(n1);
    x.iter().map(|v| v * v).sum::<f64>() - y.iter().map(|v| v * v).sum::<f64>()
}

/// Orbit value of an ambient sphere point, `arccos f` with the argument clamped.
pub fn orbit_map_sphere(point: &[f64], n1: usize) -> f64 {
    orbit_function(point, n1).clamp(-1.0, 1.0).acos()
}

/// `q̃(x) = q(σ⁻¹(x))` for `x ∈ ℝ^N`; the first `n1` coordinates form the O(n1) block.
pub fn orbit_map_euclidean(x: &[f64], params: &ProblemParams) -> Result<f64> {
    if x.len() != params.dim() {
        return Err(Error::InvalidArgument(format!(
            "point has {} coordinates, expected {}",
            x.len(),
            params.dim()
        )));
    }
    Ok(orbit_map_sphere(&inverse_stereographic(x), params.n1()))
}

/// Conformal factor `ψ(x) = [2/(1+|x|²)]^{(N−2m)/2}`.
pub fn conformal_factor(x: &[f64], params: &ProblemParams) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let expo = (params.dim() - 2 * params.order()) as f64 / 2.0;
    (2.0 / (1.0 + r2)).powf(expo)
}

/// `u(x) = ψ(x) · w(q̃(x))` with linear interpolation of the profile.
pub fn profile_to_euclidean(w: &Profile, grid: &Grid, x: &[f64]) -> Result<f64> {
    let t = orbit_map_euclidean(x, grid.params())?;
    Ok(conformal_factor(x, grid.params()) * grid.interpolate(&w.values, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn params_examples() {
        assert_eq!(make_params(4, 1, 2, 3).unwrap().two_star(), 4.0);
        assert_eq!(make_params(5, 2, 3, 3).unwrap().two_star(), 10.0);
        assert!(matches!(
            make_params(4, 2, 2, 3),
            Err(Error::SubcriticalDimension { .. })
        ));
        assert!(matches!(make_params(4, 1, 2, 2), Err(Error::BlockSum { .. })));
        assert!(matches!(make_params(4, 1, 1, 4), Err(Error::BlockTooSmall { .. })));
    }

    #[test]
    fn critical_exponent_is_exact() {
        for (n, m) in [(3, 1), (4, 1), (5, 2), (7, 3), (9, 2)] {
            let p = make_params(n, m, 2, n - 1).unwrap();
            assert!(p.two_star() > 2.0);
            assert_eq!(p.two_star() * (n - 2 * m) as f64, 2.0 * n as f64);
        }
    }

    #[test]
    fn coefficient_examples() {
        let c = conformal_coefficients(&make_params(4, 1, 2, 3).unwrap());
        assert_eq!(c.c, vec![2.0]);
        assert_eq!(c.a, vec![2.0, 1.0]);
        let c = conformal_coefficients(&make_params(5, 2, 3, 3).unwrap());
        assert_eq!(c.c, vec![3.75, 1.75]);
        assert_eq!(c.a, vec![6.5625, 5.5, 1.0]);
        assert_eq!(c.k, c.a);
        let c = conformal_coefficients(&make_params(3, 1, 2, 2).unwrap());
        assert_eq!(c.c, vec![0.75]);
        assert_eq!(c.a, vec![0.75, 1.0]);
    }

    #[test]
    fn sphere_areas() {
        assert!(rel(sphere_area(1).unwrap(), 2.0 * PI) < 1e-15);
        assert!(rel(sphere_area(2).unwrap(), 4.0 * PI) < 1e-15);
        assert!(rel(sphere_area(3).unwrap(), 2.0 * PI * PI) < 1e-15);
        assert!(rel(sphere_area(4).unwrap(), 8.0 * PI * PI / 3.0) < 1e-15);
        assert!(rel(sphere_area(5).unwrap(), PI.powi(3)) < 1e-15);
        assert!(sphere_area(0).is_err());
    }

    #[test]
    fn h_examples() {
        let p = make_params(3, 1, 2, 2).unwrap();
        assert!(rel(weight_h(PI / 2.0, &p), 4.0 * PI * PI) < 1e-14);
        for (n, n1) in [(3, 2), (4, 2), (4, 3), (5, 3)] {
            let p = make_params(n, 1, n1, n + 1 - n1).unwrap();
            assert_eq!(weight_h(0.0, &p), 0.0);
            assert!(weight_h(PI, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_examples() {
        let p = make_params(3, 1, 2, 2).unwrap();
        for conv in [PhiConvention::Selfadjoint, PhiConvention::PaperLiteral] {
            assert!(weight_phi(PI / 2.0, &p, conv).unwrap().abs() < 1e-14);
            assert!((weight_phi(PI / 4.0, &p, conv).unwrap() - 4.0).abs() < 1e-13);
        }
        let p = make_params(4, 1, 2, 3).unwrap();
        let sa = weight_phi(PI / 2.0, &p, PhiConvention::Selfadjoint).unwrap();
        let pl = weight_phi(PI / 2.0, &p, PhiConvention::PaperLiteral).unwrap();
        assert!((sa - 2.0).abs() < 1e-13);
        assert!((pl + 2.0).abs() < 1e-13);
        assert!(weight_phi(0.0, &p, PhiConvention::Selfadjoint).is_err());
        assert!(weight_phi(PI, &p, PhiConvention::Selfadjoint).is_err());
    }

    #[test]
    fn phi_matches_sine_form() {
        let p = make_params(6, 2, 2, 5).unwrap();
        let (a, b) = (1.0, 4.0);
        for i in 1..50 {
            let t = i as f64 * PI / 50.0;
            let sa = 2.0 / t.sin() * ((a + b) * t.cos() + (b - a));
            let pl = 2.0 / t.sin() * ((a + b) * t.cos() - (b - a));
            assert!(rel(weight_phi(t, &p, PhiConvention::Selfadjoint).unwrap(), sa) < 1e-12 || (sa.abs() < 1e-12));
            assert!(rel(weight_phi(t, &p, PhiConvention::PaperLiteral).unwrap(), pl) < 1e-12 || (pl.abs() < 1e-12));
        }
    }

    #[test]
    fn derivative_examples() {
        let p = make_params(3, 1, 2, 2).unwrap();
        let d = weight_derivatives(PI / 2.0, &p, PhiConvention::Selfadjoint).unwrap();
        assert!(d.dh.abs() < 1e-12);
        assert!(rel(d.d2h, -4.0 * PI * PI) < 1e-13);
        // n1 = n2: φ = 2(n1+n2−2) cot t, φ' = −2(n1+n2−2) csc² t
        assert!(rel(d.dphi, -4.0) < 1e-13);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let step = 1e-4;
        let t = 1.0;
        for (n, m, n1) in [(4, 1, 2), (4, 1, 3), (5, 2, 3), (7, 3, 2), (9, 1, 6)] {
            let p = make_params(n, m, n1, n + 1 - n1).unwrap();
            for conv in [PhiConvention::Selfadjoint, PhiConvention::PaperLiteral] {
                let d = weight_derivatives(t, &p, conv).unwrap();
                let h = |s: f64| weight_h(s, &p);
                let phi = |s: f64| weight_phi(s, &p, conv).unwrap();
                let dh = (h(t + step) - h(t - step)) / (2.0 * step);
                let d2h = (h(t + step) - 2.0 * h(t) + h(t - step)) / (step * step);
                let dphi = (phi(t + step) - phi(t - step)) / (2.0 * step);
                let d2phi = (phi(t + step) - 2.0 * phi(t) + phi(t - step)) / (step * step);
                assert!(rel(d.dh, dh) < 1e-6, "h' {} vs {}", d.dh, dh);
                assert!(rel(d.d2h, d2h) < 1e-6, "h'' {} vs {}", d.d2h, d2h);
                assert!(rel(d.dphi, dphi) < 1e-6);
                assert!(rel(d.d2phi, d2phi) < 1e-6);
            }
        }
    }

    #[test]
    fn selfadjoint_phi_is_log_derivative() {
        for (n, n1) in [(3, 2), (4, 2), (4, 3), (5, 3), (8, 2)] {
            let p = make_params(n, 1, n1, n + 1 - n1).unwrap();
            for i in 1..200 {
                let t = i as f64 * PI / 200.0;
                let d = weight_derivatives(t, &p, PhiConvention::Selfadjoint).unwrap();
                let lhs = d.phi * d.h;
                let rhs = 4.0 * d.dh;
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(d.h));
            }
        }
    }

    #[test]
    fn cos_identity_under_selfadjoint_drift() {
        // 4w'' + φ w' for w = cos t
        for (n, n1) in [(3, 2), (4, 2), (4, 3), (6, 2)] {
            let p = make_params(n, 1, n1, n + 1 - n1).unwrap();
            for i in 1..100 {
                let t = i as f64 * PI / 100.0;
                let phi = weight_phi(t, &p, PhiConvention::Selfadjoint).unwrap();
                let lw = -4.0 * t.cos() - phi * t.sin();
                let exact = -2.0 * (n as f64 + 1.0) * t.cos() + 2.0 * (n1 as f64 - (n + 1 - n1) as f64);
                assert!((lw - exact).abs() < 1e-12 * (1.0 + exact.abs()));
            }
        }
    }

    #[test]
    fn product_and_expansion_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (n, m) in [(3, 1), (5, 2), (7, 3), (11, 5)] {
            let c = conformal_coefficients(&make_params(n, m, 2, n - 1).unwrap());
            assert_eq!(*c.a.last().unwrap(), 1.0);
            assert!(rel(c.a[0], c.c.iter().product()) < 1e-14);
            for _ in 0..20 {
                let lam: f64 = rng.random_range(-3.0..40.0);
                let (x, y) = (c.eval_product(lam), c.eval_expanded(lam));
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn orbit_map_examples() {
        let p = make_params(4, 1, 2, 3).unwrap();
        assert!((orbit_map_euclidean(&[0.0; 4], &p).unwrap() - PI).abs() < 1e-15);
        assert!(orbit_map_euclidean(&[1.0, 0.0, 0.0, 0.0], &p).unwrap().abs() < 1e-7);
        // rounding past 1 must clamp, not produce NaN
        assert_eq!(orbit_map_sphere(&[1.0 + 1e-16, 0.0, 0.0], 2), 0.0);
        assert!(!orbit_map_sphere(&[(1.0f64 + 1e-17).sqrt(), 1e-9, 0.0], 2).is_nan());
    }

    #[test]
    fn orbit_map_is_block_rotation_invariant() {
        use rand::{Rng, SeedableRng};
        let p = make_params(5, 1, 3, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = orbit_map_euclidean(&x, &p).unwrap();
            // rotate the first n1 ambient coordinates, then project back
            let mut s = inverse_stereographic(&x);
            let th: f64 = rng.random_range(0.0..2.0 * PI);
            let (a, b) = (s[0], s[2]);
            s[0] = th.cos() * a - th.sin() * b;
            s[2] = th.sin() * a + th.cos() * b;
            let last = s[5];
            let y: Vec<f64> = s[..5].iter().map(|v| v / (1.0 - last)).collect();
            let t2 = orbit_map_euclidean(&y, &p).unwrap();
            assert!((t - t2).abs() < 1e-10);
        }
    }
}
