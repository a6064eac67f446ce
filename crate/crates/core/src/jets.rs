//! Truncated Taylor series and the coefficient expansion of powers of `𝓛`.

use crate::geometry::{PhiConvention, ProblemParams};

/// `Σ_k c[k] x^k` about a base point, truncated at `c.len() − 1`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Jet {
    c: Vec<f64>,
}

impl Jet {
    pub fn constant(v: f64, degree: usize) -> Self {
        let mut c = vec![0.0; degree + 1];
        c[0] = v;
        Self { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn degree(&self) -> usize {
        self.c.len() - 1
    }

    fn truncated(&self, degree: usize) -> Self {
        Self { c: self.c[..=degree.min(self.degree())].to_vec() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let d = self.degree().min(other.degree());
        Self { c: (0..=d).map(|k| self.c[k] + other.c[k]).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let d = self.degree().min(other.degree());
        Self { c: (0..=d).map(|k| (0..=k).map(|j| self.c[j] * other.c[k - j]).sum()).collect() }
    }

    pub fn div(&self, other: &Self) -> Self {
        let d = self.degree().min(other.degree());
        let mut q = vec![0.0; d + 1];
        for k in 0..=d {
            let s: f64 = (1..=k).map(|j| other.c[j] * q[k - j]).sum();
            q[k] = (self.c[k] - s) / other.c[0];
        }
        Self { c: q }
    }

    /// Derivative; loses one degree.
    pub fn derivative(&self) -> Self {
        if self.degree() == 0 {
            return Self { c: vec![0.0] };
        }
        Self { c: (1..self.c.len()).map(|k| k as f64 * self.c[k]).collect() }
    }
}

/// Jets of `sin(u0 + r x)` and `cos(u0 + r x)`.
fn sin_cos(u0: f64, r: f64, degree: usize) -> (Jet, Jet) {
    let (s0, c0) = u0.sin_cos();
    let derivs = [s0, c0, -s0, -c0];
    let mut fact = 1.0;
    let mut rk = 1.0;
    let mut s = Vec::with_capacity(degree + 1);
    let mut c = Vec::with_capacity(degree + 1);
    for k in 0..=degree {
        if k > 0 {
            fact *= k as f64;
            rk *= r;
        }
        s.push(derivs[k % 4] * rk / fact);
        c.push(derivs[(k + 1) % 4] * rk / fact);
    }
    (Jet { c: s }, Jet { c })
}

/// Jet of `φ` at `t`.
pub(crate) fn phi_jet(t: f64, params: &ProblemParams, convention: PhiConvention, degree: usize) -> Jet {
    let (p, q) = convention.tan_cot(params);
    let (s, c) = sin_cos(0.5 * t, 0.5, degree);
    s.div(&c).scale(p).add(&c.div(&s).scale(q))
}

/// Coefficients `r_k` of an operator `Σ r_k d^k/dt^k`, as jets.
pub(crate) type OperatorJets = Vec<Jet>;

fn compose_l(op: &OperatorJets, phi: &Jet) -> OperatorJets {
    // 𝓛∘(r D^k) = 4(r'' D^k + 2r' D^{k+1} + r D^{k+2}) + φ(r' D^k + r D^{k+1})
    let deg = op.iter().map(Jet::degree).min().unwrap_or(0).saturating_sub(2);
    let mut out = vec![Jet::constant(0.0, deg); op.len() + 2];
    let phi = phi.truncated(deg);
    for (k, r) in op.iter().enumerate() {
        let r1 = r.derivative();
        let r2 = r1.derivative().truncated(deg);
        let r1 = r1.truncated(deg);
        let r0 = r.truncated(deg);
        out[k] = out[k].add(&r2.scale(4.0)).add(&phi.mul(&r1));
        out[k + 1] = out[k + 1].add(&r1.scale(8.0)).add(&phi.mul(&r0));
        out[k + 2] = out[k + 2].add(&r0.scale(4.0));
    }
    out
}

fn compose_d(op: &OperatorJets) -> OperatorJets {
    let deg = op.iter().map(Jet::degree).min().unwrap_or(0).saturating_sub(1);
    let mut out = vec![Jet::constant(0.0, deg); op.len() + 1];
    for (k, r) in op.iter().enumerate() {
        out[k] = out[k].add(&r.derivative());
        out[k + 1] = out[k + 1].add(&r.truncated(deg));
    }
    out
}

/// Values at `t` of the coefficients of `𝓛^{i/2}` (i even) or `(𝓛^{(i−1)/2})'` (i odd);
/// entry `k` multiplies `w^{(k)}`.
pub(crate) fn term_coefficients(t: f64, i: usize, params: &ProblemParams, convention: PhiConvention) -> Vec<f64> {
    let degree = 2 * i + 2;
    let phi = phi_jet(t, params, convention, degree);
    let mut op: OperatorJets = vec![Jet::constant(1.0, degree)];
    for _ in 0..i / 2 {
        op = compose_l(&op, &phi);
    }
    if i % 2 == 1 {
        op = compose_d(&op);
    }
    op.iter().map(Jet::value).collect()
}
