//! The energy form restricted to a cell.
//!
//! A cell `(a, b)` owns the nodes at least one cell width inside a clamped
//! end. Near a clamped end the profile is the polynomial `Σ_{q=m}^{m+1} c_q s^q`,
//! `s` the distance to the breakpoint, fitted to the two nearest owned nodes.
//! Its energy between the breakpoint and a split point next to the first owned
//! node is integrated exactly in the polynomial; past the split point the
//! staggered scheme applies, reading ghost values of the same polynomial.
//! The split is a node for odd `m` and a vertex for even `m`, so the leading
//! term never sees a cut control volume.

use std::ops::Range;

use crate::assembly::{cell_mask, CellBC, EndCondition, Grid};
use crate::banded::{BandCholesky, Banded};
use crate::error::{Error, Result};
use crate::geometry::weight_h;
use crate::jets::term_coefficients;

/// Owned nodes used to fit the ghost polynomial.
const GHOST_FIT: usize = 2;

/// Minimal distance (in units of `dt`) from a clamped end to the first owned node.
const LAYER: f64 = 1.0;

/// Six-point Gauss–Legendre rule on `[-1, 1]`.
const GAUSS: [(f64, f64); 6] = [
    (-0.932_469_514_203_152_1, 0.171_324_492_379_170_4),
    (-0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
    (-0.238_619_186_083_196_9, 0.467_913_934_572_691_0),
    (0.238_619_186_083_196_9, 0.467_913_934_572_691_0),
    (0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
    (0.932_469_514_203_152_1, 0.171_324_492_379_170_4),
];

/// Relative distance (in units of `dt`) below which a point counts as a vertex or an end.
pub(crate) const SNAP: f64 = 1e-9;

/// Quadratic form `B` on the profiles supported in one cell.
#[derive(Debug, Clone)]
pub struct CellForm {
    range: Range<usize>,
    bc: CellBC,
    dt: f64,
    /// First global index of the extended range (ghosts included).
    start: usize,
    /// Per extended node: owned nodes and weights that produce its value.
    rows: Vec<Vec<(usize, f64)>>,
    h: Vec<f64>,
    /// `h` at the vertex left of each extended node.
    h_vert: Vec<f64>,
    node_w: Vec<f64>,
    /// Weight of the face left of each extended node; entry 0 is unused.
    face_w: Vec<f64>,
    k: Vec<f64>,
    /// Exact energy of the boundary polynomials, as forms on their fit nodes.
    layers: Vec<Layer>,
    stiffness: Banded,
    factor: BandCholesky,
}

#[derive(Debug, Clone)]
struct Layer {
    fit: Vec<usize>,
    q: Vec<Vec<f64>>,
}

impl Layer {
    fn pairing(&self, w: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, &i) in self.q.iter().zip(&self.fit) {
            for (c, &j) in r.iter().zip(&self.fit) {
                total += w[i] * c * v[j];
            }
        }
        total
    }
}

impl CellForm {
    /// Form on `(a, b)` with norm weights `k`.
    pub fn new(grid: &Grid, k: &[f64], a: f64, b: f64) -> Result<Self> {
        let order = k.len() - 1;
        let (_, bc) = cell_mask(grid, a, b, order)?;
        let n = grid.len();
        let dt = grid.dt();
        let nodes = grid.nodes();
        let left = bc.left == EndCondition::Clamped;
        let right = bc.right == EndCondition::Clamped;
        let from_left = |j: usize| (nodes[j] - a) / dt;
        let from_right = |j: usize| (b - nodes[j]) / dt;

        let lo = if left { nodes.partition_point(|&t| (t - a) / dt < LAYER - SNAP) } else { 0 };
        let hi = if right { nodes.partition_point(|&t| (b - t) / dt >= LAYER - SNAP) } else { n };
        if hi < lo + GHOST_FIT {
            return Err(Error::IntervalTooThin { a, b, min_width: 4.0 * dt * order as f64 });
        }
        let range = lo..hi;

        // split points between the exact layer and the staggered scheme
        let shift = if order % 2 == 0 { 0.5 * dt } else { 0.0 };
        let xa = if left { nodes[lo] - shift } else { 0.0 };
        let xb = if right { nodes[hi - 1] + shift } else { n as f64 * dt };
        let overlap = |x: f64, y: f64| (y.min(xb) - x.max(xa)).max(0.0);
        let first = nodes.partition_point(|&t| overlap(t - 0.5 * dt, t + 0.5 * dt) <= SNAP * dt && t < xa);
        let last = nodes.partition_point(|&t| t - 0.5 * dt < xb - SNAP * dt);
        let depth = order / 2 + 1;
        let min = depth as f64 * dt;
        let start = match (left, first.checked_sub(depth)) {
            (false, _) => 0,
            (true, Some(s)) => s,
            (true, None) => return Err(Error::EndTooClose { t: a, min }),
        };
        let end = match (right, last + depth <= n) {
            (false, _) => n,
            (true, true) => last + depth,
            (true, false) => return Err(Error::EndTooClose { t: b, min }),
        };

        let mut rows: Vec<Vec<(usize, f64)>> = (start..end).map(|j| vec![(j, 1.0)]).collect();
        let mut layers = Vec::new();
        if left {
            let fit: Vec<usize> = (lo..lo + GHOST_FIT).collect();
            let sig: Vec<f64> = fit.iter().map(|&j| from_left(j)).collect();
            let inv = fit_inverse(&sig, order);
            for j in start..lo {
                let coef = ghost_weights(&inv, from_left(j), order);
                rows[j - start] = fit.iter().copied().zip(coef).collect();
            }
            let q = layer_form(grid, k, &inv, a, xa, 1.0);
            layers.push(Layer { fit, q });
        }
        if right {
            let fit: Vec<usize> = (hi - GHOST_FIT..hi).rev().collect();
            let sig: Vec<f64> = fit.iter().map(|&j| from_right(j)).collect();
            let inv = fit_inverse(&sig, order);
            for j in hi..end {
                let coef = ghost_weights(&inv, from_right(j), order);
                rows[j - start] = fit.iter().copied().zip(coef).collect();
            }
            let q = layer_form(grid, k, &inv, b, xb, -1.0);
            layers.push(Layer { fit, q });
        }

        let hv = grid.h_vertices();
        let node_w: Vec<f64> = (start..end)
            .map(|j| grid.h()[j] * overlap(nodes[j] - 0.5 * dt, nodes[j] + 0.5 * dt))
            .collect();
        // face q sits at vertex start + q, between extended nodes q − 1 and q
        let face_w: Vec<f64> = (start..end)
            .map(|v| if v == start { 0.0 } else { hv[v] * overlap(nodes[v - 1], nodes[v]) })
            .collect();

        let h = grid.h()[start..end].to_vec();
        let h_vert = hv[start..end].to_vec();
        let mut form = Self {
            range,
            bc,
            dt,
            start,
            rows,
            h,
            h_vert,
            node_w,
            face_w,
            k: k.to_vec(),
            layers,
            stiffness: Banded::zeros(0, 0, 0),
            factor: BandCholesky::factor(&Banded::zeros(0, 0, 0), 0..0, &[]).expect("empty factor"),
        };
        form.stiffness = form.assemble();
        form.factor = BandCholesky::factor(&form.stiffness, 0..form.range.len(), &[])
            .ok_or_else(|| Error::InvalidWeights("energy form is not positive definite".into()))?;
        Ok(form)
    }

    /// Owned node indices.
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn bc(&self) -> CellBC {
        self.bc
    }

    /// Matrix of `B` on the owned nodes, indexed from `range().start`.
    pub fn stiffness(&self) -> &Banded {
        &self.stiffness
    }

    /// Cholesky factor of [`Self::stiffness`].
    pub fn factor(&self) -> &BandCholesky {
        &self.factor
    }

    /// Factor of the stiffness plus a diagonal shift on the owned nodes.
    pub fn factor_shifted(&self, shift: &[f64]) -> Option<BandCholesky> {
        BandCholesky::factor(&self.stiffness, 0..self.range.len(), shift)
    }

    /// Values on the extended range from a global nodal vector.
    fn extend(&self, w: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(j, c)| c * w[j]).sum()).collect()
    }

    fn laplacian(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let dt = self.dt;
        let flux = |q: usize| if q == 0 || q == n { 0.0 } else { self.h_vert[q] * (x[q] - x[q - 1]) / dt };
        (0..n).map(|q| 4.0 * (flux(q + 1) - flux(q)) / (self.h[q] * dt)).collect()
    }

    fn face_pairing(&self, x: &[f64], y: &[f64]) -> f64 {
        let dt2 = self.dt * self.dt;
        (1..x.len()).map(|q| self.face_w[q] * (x[q] - x[q - 1]) * (y[q] - y[q - 1])).sum::<f64>() / dt2
    }

    /// `B(w, v)` term by term; values outside the owned nodes are ignored.
    pub fn bilinear(&self, w: &[f64], v: &[f64]) -> f64 {
        let order = self.k.len() - 1;
        let mut x = self.extend(w);
        let mut y = self.extend(v);
        let mut total = 0.0;
        let mut i = 0;
        loop {
            let mass: f64 = x.iter().zip(&y).zip(&self.node_w).map(|((a, b), c)| a * b * c).sum();
            total += 0.25 * self.k[i] * mass;
            if i + 1 > order {
                break;
            }
            total += self.k[i + 1] * self.face_pairing(&x, &y);
            if i + 2 > order {
                break;
            }
            x = self.laplacian(&x);
            y = self.laplacian(&y);
            i += 2;
        }
        total + self.layers.iter().map(|l| l.pairing(w, v)).sum::<f64>()
    }

    pub fn norm2(&self, w: &[f64]) -> f64 {
        self.bilinear(w, w)
    }

    /// `K w` as a global vector, zero off the owned nodes.
    pub fn apply_stiffness(&self, w: &[f64]) -> Vec<f64> {
        let local = self.stiffness.matvec(&w[self.range.clone()]);
        let mut out = vec![0.0; w.len()];
        out[self.range.clone()].copy_from_slice(&local);
        out
    }

    fn assemble(&self) -> Banded {
        let n = self.rows.len();
        let dt2 = self.dt * self.dt;
        let mut lap = Banded::zeros(n, 1, 1);
        let mut grad = Banded::zeros(n, 1, 1);
        for q in 0..n {
            let left = if q > 0 { 4.0 * self.h_vert[q] / (self.h[q] * dt2) } else { 0.0 };
            let right = if q + 1 < n { 4.0 * self.h_vert[q + 1] / (self.h[q] * dt2) } else { 0.0 };
            if q > 0 {
                lap.set(q, q - 1, left);
                let f = self.face_w[q] / dt2;
                grad.add_to(q, q, f);
                grad.add_to(q - 1, q - 1, f);
                grad.add_to(q, q - 1, -f);
                grad.add_to(q - 1, q, -f);
            }
            if q + 1 < n {
                lap.set(q, q + 1, right);
            }
            lap.set(q, q, -(left + right));
        }
        let mass = Banded::diagonal(&self.node_w);

        let order = self.k.len() - 1;
        let mut power = Banded::identity(n);
        let mut ext = Banded::zeros(n, 0, 0);
        let mut i = 0;
        loop {
            let pt = power.transpose();
            ext = ext.add(&pt.mul(&mass.mul(&power)).scaled(0.25 * self.k[i]));
            if i + 1 > order {
                break;
            }
            ext = ext.add(&pt.mul(&grad.mul(&power)).scaled(self.k[i + 1]));
            if i + 2 > order {
                break;
            }
            power = lap.mul(&power);
            i += 2;
        }
        let mut out = self.reduce(&ext);
        let lo = self.range.start;
        for layer in &self.layers {
            for (r, &i) in layer.q.iter().zip(&layer.fit) {
                for (c, &j) in r.iter().zip(&layer.fit) {
                    out.add_to(i - lo, j - lo, *c);
                }
            }
        }
        out
    }

    /// `Eᵀ A E` with `E` the extension from owned nodes to the extended range.
    fn reduce(&self, ext: &Banded) -> Banded {
        let n = self.rows.len();
        let (kl, ku) = ext.bandwidths();
        let lo = self.range.start;
        let cols = |p: usize| p.saturating_sub(kl)..(p + ku + 1).min(n);
        let mut bw = 0;
        for p in 0..n {
            for q in cols(p) {
                for &(i, _) in &self.rows[p] {
                    for &(j, _) in &self.rows[q] {
                        bw = bw.max(i.abs_diff(j));
                    }
                }
            }
        }
        let mut out = Banded::zeros(self.range.len(), bw, bw);
        for p in 0..n {
            for q in cols(p) {
                let a = ext.get(p, q);
                if a == 0.0 {
                    continue;
                }
                for &(i, ci) in &self.rows[p] {
                    for &(j, cj) in &self.rows[q] {
                        out.add_to(i - lo, j - lo, ci * a * cj);
                    }
                }
            }
        }
        out
    }

    /// Global index of the first extended node.
    pub fn extended_start(&self) -> usize {
        self.start
    }
}

/// Inverse of `V[k][q] = sig_k^{m+q}`: row `q` maps fit values to `c_q`.
fn fit_inverse(sig: &[f64], order: usize) -> Vec<Vec<f64>> {
    let r = sig.len();
    let m = order as i32;
    let mut a: Vec<Vec<f64>> = sig
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut row: Vec<f64> = (0..r).map(|q| s.powi(m + q as i32)).collect();
            row.extend((0..r).map(|c| if c == k { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..r {
        let p = (c..r).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).expect("nonempty");
        a.swap(c, p);
        let d = a[c][c];
        a[c].iter_mut().for_each(|x| *x /= d);
        for i in 0..r {
            if i != c {
                let f = a[i][c];
                for k in 0..2 * r {
                    a[i][k] -= f * a[c][k];
                }
            }
        }
    }
    a.into_iter().map(|row| row[r..].to_vec()).collect()
}

/// Weights on the fit nodes that evaluate the clamped polynomial at distance `x`.
fn ghost_weights(inv: &[Vec<f64>], x: f64, order: usize) -> Vec<f64> {
    let m = order as i32;
    let r = inv.len();
    (0..r).map(|k| (0..r).map(|q| x.powi(m + q as i32) * inv[q][k]).sum()).collect()
}

/// `d^d/ds^d s^p` at `s`.
fn power_derivative(p: i32, d: usize, s: f64) -> f64 {
    let mut c = 1.0;
    for k in 0..d as i32 {
        if p - k == 0 {
            return 0.0;
        }
        c *= (p - k) as f64;
    }
    c * s.powi(p - d as i32)
}

/// Energy between the breakpoint `end` and the split point `split` of the
/// polynomial fitted through `inv`, as a form on the fit values. `dir` is `+1`
/// when the distance grows with `t` and `−1` otherwise.
fn layer_form(grid: &Grid, k: &[f64], inv: &[Vec<f64>], end: f64, split: f64, dir: f64) -> Vec<Vec<f64>> {
    let r = inv.len();
    let m = (k.len() - 1) as i32;
    let dt = grid.dt();
    let (lo, hi) = if end < split { (end, split) } else { (split, end) };
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let mut q = vec![vec![0.0; r]; r];
    for &(x, gw) in &GAUSS {
        let t = mid + half * x;
        let s = dir * (t - end) / dt;
        let weight = gw * half * weight_h(t, grid.params());
        for (i, &ki) in k.iter().enumerate() {
            let coeffs = term_coefficients(t, i, grid.params(), grid.convention());
            // value of the term on each fit basis polynomial
            let e: Vec<f64> = (0..r)
                .map(|f| {
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(d, rd)| {
                            let scale = (dir / dt).powi(d as i32);
                            let basis: f64 = (0..r).map(|p| inv[p][f] * power_derivative(m + p as i32, d, s)).sum();
                            rd * scale * basis
                        })
                        .sum()
                })
                .collect();
            let c = if i % 2 == 0 { 0.25 * ki } else { ki } * weight;
            for a in 0..r {
                for b in 0..r {
                    q[a][b] += c * e[a] * e[b];
                }
            }
        }
    }
    q
}
