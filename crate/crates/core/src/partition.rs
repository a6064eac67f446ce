//! Optimal partitions of `(0, π)` into `ℓ` consecutive cells.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{Discretization, Grid, Profile};
use crate::energy::ProfileBundle;
use crate::error::{Error, Result};
use crate::geometry::ProblemParams;
use crate::solvers::{solve_cell, CellSolution, SolveOptions, SweepStep};

/// Sorted interior breakpoints `0 < a_1 < … < a_{ℓ−1} < π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub points: Vec<f64>,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.iter().any(|p| !(*p > 0.0 && *p < PI)) {
            return Err(Error::InvalidPartition("breakpoints must lie in (0, π)".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPartition("breakpoints must increase strictly".into()));
        }
        Ok(Self { points })
    }

    /// The single cell `(0, π)`.
    pub fn whole() -> Self {
        Self { points: Vec::new() }
    }

    /// Uniform partition into `ell` cells.
    pub fn uniform(ell: usize) -> Self {
        Self { points: (1..ell).map(|i| PI * i as f64 / ell as f64).collect() }
    }

    pub fn ell(&self) -> usize {
        self.points.len() + 1
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut ends = vec![0.0];
        ends.extend_from_slice(&self.points);
        ends.push(PI);
        ends.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Checks the minimum cell width `4·dt·m`.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let min = 4.0 * grid.dt() * grid.params().order() as f64;
        for (a, b) in self.cells() {
            if b - a < min {
                return Err(Error::InvalidPartition(format!(
                    "cell ({a}, {b}) narrower than {min}"
                )));
            }
        }
        Ok(())
    }
}

/// Topology of cell `index` among `ell` nested annular cells.
pub fn topology_label(index: usize, ell: usize, params: &ProblemParams) -> String {
    let (n1, n2) = (params.n1(), params.n2());
    if ell == 1 {
        format!("S^{}", params.dim())
    } else if index == 0 {
        format!("S^{}×B^{}", n1 - 1, n2)
    } else if index + 1 == ell {
        format!("B^{}×R^{}", n1, n2 - 1)
    } else {
        format!("S^{}×S^{}×(0,1)", n1 - 1, n2 - 1)
    }
}

/// Per-cell levels of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub points: Vec<f64>,
    pub energies: Vec<f64>,
    pub total: f64,
    pub profiles: Vec<Profile>,
    pub labels: Vec<String>,
}

impl PartitionReport {
    pub fn bundle(&self) -> ProfileBundle {
        ProfileBundle::new(self.profiles.clone())
    }
}

fn report_from(cells: Vec<CellSolution>, points: Vec<f64>, params: &ProblemParams) -> PartitionReport {
    let ell = cells.len();
    let energies: Vec<f64> = cells.iter().map(|c| c.level).collect();
    PartitionReport {
        total: energies.iter().sum(),
        energies,
        labels: (0..ell).map(|i| topology_label(i, ell, params)).collect(),
        profiles: cells.into_iter().map(|c| c.profile).collect(),
        points,
    }
}

/// Solves every cell of `p` (in parallel) and sums the levels.
pub fn partition_energy(
    p: &Partition,
    mu: &[f64],
    disc: &Discretization,
    opts: &SolveOptions,
) -> Result<PartitionReport> {
    p.validate(disc.grid())?;
    let cells = p.cells();
    if mu.len() != cells.len() {
        return Err(Error::EllMismatch { left: mu.len(), right: cells.len() });
    }
    let solved: Vec<Result<CellSolution>> = cells
        .par_iter()
        .zip(mu)
        .map(|(&(a, b), &m)| solve_cell(a, b, m, disc, opts))
        .collect();
    let mut out = Vec::with_capacity(solved.len());
    for (i, s) in solved.into_iter().enumerate() {
        out.push(s.map_err(|e| Error::Cell { cell: i, source: Box::new(e) })?);
    }
    Ok(report_from(out, p.points.clone(), disc.params()))
}

/// Memoized cell levels keyed by vertex indices `(k_lo, k_hi)` and species.
struct CellCache<'a> {
    disc: &'a Discretization,
    opts: &'a SolveOptions,
    mu: &'a [f64],
    levels: Mutex<HashMap<(usize, usize, usize), f64>>,
}

impl<'a> CellCache<'a> {
    fn level(&self, lo: usize, hi: usize, species: usize) -> Result<f64> {
        if let Some(v) = self.levels.lock().expect("cache lock").get(&(lo, hi, species)) {
            return Ok(*v);
        }
        let g = self.disc.grid();
        let c = solve_cell(g.vertex(lo), g.vertex(hi), self.mu[species], self.disc, self.opts)?.level;
        self.levels.lock().expect("cache lock").insert((lo, hi, species), c);
        Ok(c)
    }

    /// Total level of the partition given by interior vertex indices.
    fn total(&self, idx: &[usize]) -> Result<f64> {
        let n = self.disc.len();
        let mut ends = vec![0];
        ends.extend_from_slice(idx);
        ends.push(n);
        let levels: Vec<Result<f64>> = ends
            .par_windows(2)
            .enumerate()
            .map(|(i, w)| self.level(w[0], w[1], i))
            .collect();
        levels.into_iter().sum()
    }
}

/// Outcome of [`optimize_partition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedPartition {
    pub partition: Partition,
    pub report: PartitionReport,
    /// Locally optimal partitions from every start, as `(points, total)`.
    pub starts: Vec<(Vec<f64>, f64)>,
    pub sweeps: usize,
    pub converged: bool,
}

fn min_cell_vertices(grid: &Grid) -> usize {
    4 * grid.params().order() + 1
}

/// Golden-section search over integer vertex indices, then a local polish.
fn golden_integer(lo: usize, hi: usize, f: &mut impl FnMut(usize) -> Result<f64>) -> Result<(usize, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo as f64, hi as f64);
    while b - a > 3.0 {
        let x1 = (b - INV_PHI * (b - a)).round() as usize;
        let x2 = (a + INV_PHI * (b - a)).round() as usize;
        if x1 >= x2 {
            break;
        }
        if f(x1)? <= f(x2)? {
            b = x2 as f64;
        } else {
            a = x1 as f64;
        }
    }
    let mut best = (a.round() as usize, f(a.round() as usize)?);
    for k in (a.round() as usize)..=(b.round() as usize).min(hi) {
        let v = f(k)?;
        if v < best.1 {
            best = (k, v);
        }
    }
    // polish: walk downhill with ±2 probes
    loop {
        let mut moved = false;
        for step in [-2i64, -1, 1, 2] {
            let k = best.0 as i64 + step;
            if k < lo as i64 || k > hi as i64 {
                continue;
            }
            let v = f(k as usize)?;
            if v < best.1 {
                best = (k as usize, v);
                moved = true;
            }
        }
        if !moved {
            return Ok(best);
        }
    }
}

fn coordinate_descent(cache: &CellCache, mut idx: Vec<usize>, max_sweeps: usize) -> Result<(Vec<usize>, f64, usize, bool)> {
    let n = cache.disc.len();
    let gap = min_cell_vertices(cache.disc.grid());
    let mut value = cache.total(&idx)?;
    for sweep in 1..=max_sweeps {
        let mut moved = false;
        for i in 0..idx.len() {
            let left = if i == 0 { 0 } else { idx[i - 1] };
            let right = if i + 1 == idx.len() { n } else { idx[i + 1] };
            let (lo, hi) = (left + gap, right - gap);
            if lo > hi {
                continue;
            }
            let mut f = |k: usize| -> Result<f64> {
                Ok(cache.level(left, k, i)? + cache.level(k, right, i + 1)?)
            };
            let (k, _) = golden_integer(lo, hi, &mut f)?;
            if k != idx[i] {
                idx[i] = k;
                moved = true;
            }
        }
        value = cache.total(&idx)?;
        if !moved {
            return Ok((idx, value, sweep, true));
        }
    }
    Ok((idx, value, max_sweeps, false))
}

fn random_indices(ell: usize, grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = grid.len();
    let gap = min_cell_vertices(grid);
    loop {
        let mut idx: Vec<usize> = (1..ell).map(|_| rng.random_range(gap..=n - gap)).collect();
        idx.sort_unstable();
        let mut ends = vec![0];
        ends.extend_from_slice(&idx);
        ends.push(n);
        if ends.windows(2).all(|w| w[1] >= w[0] + gap) {
            return idx;
        }
    }
}

/// Minimizes `Σ c_i` over breakpoints on the grid vertices.
///
/// Cyclic coordinate descent with a golden-section line search per
/// breakpoint; starts from the uniform partition and two seeded random ones.
/// `mu` holds one weight per cell.
pub fn optimize_partition(
    ell: usize,
    mu: &[f64],
    disc: &Discretization,
    opts: &SolveOptions,
) -> Result<OptimizedPartition> {
    check_optimizer(ell, mu, disc)?;
    let grid = disc.grid();
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![(1..ell).map(|i| (i * n + ell / 2) / ell).collect::<Vec<usize>>()];
    for _ in 0..2 {
        starts.push(random_indices(ell, grid, &mut rng));
    }
    optimize_from_indices(starts, mu, disc, opts)
}

/// Coordinate descent from a single initial partition.
pub fn optimize_partition_from(
    init: &Partition,
    mu: &[f64],
    disc: &Discretization,
    opts: &SolveOptions,
) -> Result<OptimizedPartition> {
    let ell = init.ell();
    check_optimizer(ell, mu, disc)?;
    init.validate(disc.grid())?;
    let grid = disc.grid();
    let gap = min_cell_vertices(grid);
    let mut idx: Vec<usize> = init.points.iter().map(|&a| grid.nearest_vertex(a)).collect();
    // keep the snapped start admissible
    for i in 0..idx.len() {
        let lo = if i == 0 { gap } else { idx[i - 1] + gap };
        idx[i] = idx[i].max(lo);
    }
    if idx.last().is_some_and(|&k| k + gap > grid.len()) {
        return Err(Error::InvalidPartition("initial partition too close to π".into()));
    }
    optimize_from_indices(vec![idx], mu, disc, opts)
}

fn check_optimizer(ell: usize, mu: &[f64], disc: &Discretization) -> Result<()> {
    if ell < 2 {
        return Err(Error::InvalidArgument("optimal partitions need ℓ ≥ 2".into()));
    }
    if mu.len() != ell {
        return Err(Error::EllMismatch { left: mu.len(), right: ell });
    }
    if disc.len() < ell * min_cell_vertices(disc.grid()) {
        return Err(Error::InvalidArgument(format!("grid too coarse for {ell} cells")));
    }
    Ok(())
}

fn optimize_from_indices(
    starts: Vec<Vec<usize>>,
    mu: &[f64],
    disc: &Discretization,
    opts: &SolveOptions,
) -> Result<OptimizedPartition> {
    let grid = disc.grid();
    let cache = CellCache { disc, opts, mu, levels: Mutex::new(HashMap::new()) };
    let mut results = Vec::new();
    for s in starts {
        results.push(coordinate_descent(&cache, s, 50)?);
    }
    let best = results
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(i.cmp(j)))
        .map(|(_, r)| r.clone())
        .expect("at least one start");
    let partition = Partition::new(best.0.iter().map(|&k| grid.vertex(k)).collect())?;
    let report = partition_energy(&partition, mu, disc, opts)?;
    Ok(OptimizedPartition {
        starts: results
            .iter()
            .map(|r| (r.0.iter().map(|&k| grid.vertex(k)).collect(), r.1))
            .collect(),
        sweeps: best.2,
        converged: best.3,
        partition,
        report,
    })
}

/// `(a_1, c(0,a_1) + c(a_1,π))` at `samples` evenly spaced admissible vertices.
pub fn brute_force_scan(
    mu: &[f64],
    disc: &Discretization,
    opts: &SolveOptions,
    samples: usize,
) -> Result<Vec<(f64, f64)>> {
    if mu.len() != 2 {
        return Err(Error::EllMismatch { left: mu.len(), right: 2 });
    }
    let grid = disc.grid();
    let gap = min_cell_vertices(grid);
    let (lo, hi) = (gap, grid.len() - gap);
    let samples = samples.max(2);
    let idx: Vec<usize> = (0..samples)
        .map(|s| lo + ((hi - lo) as f64 * s as f64 / (samples - 1) as f64).round() as usize)
        .collect();
    idx.par_iter()
        .map(|&k| {
            let a = grid.vertex(k);
            Ok((a, solve_cell(0.0, a, mu[0], disc, opts)?.level + solve_cell(a, PI, mu[1], disc, opts)?.level))
        })
        .collect()
}

/// Default support threshold of [`extract_supports`].
pub const DEFAULT_THETA: f64 = 1e-2;

/// Breakpoints between the supports `{|w_i| > θ·max}` of a segregated bundle.
pub fn extract_supports(bundle: &ProfileBundle, grid: &Grid, theta: f64) -> Result<Partition> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("θ = {theta} must lie in (0, 1)")));
    }
    let global = bundle.components.iter().map(Profile::max_abs).fold(0.0, f64::max);
    if !(global > 0.0) {
        return Err(Error::EmptySupport);
    }
    let cut = theta * global;
    let mut spans = Vec::with_capacity(bundle.ell());
    for (i, c) in bundle.components.iter().enumerate() {
        let above: Vec<usize> = (0..c.len()).filter(|&j| c.values[j].abs() > cut).collect();
        let (Some(&first), Some(&last)) = (above.first(), above.last()) else {
            return Err(Error::EmptySupport);
        };
        if last - first + 1 != above.len() {
            return Err(Error::SupportNotInterval(i));
        }
        spans.push((first, last));
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 <= w[0].1) {
        return Err(Error::SupportsOverlap);
    }
    let nodes = grid.nodes();
    Partition::new(spans.windows(2).map(|w| 0.5 * (nodes[w[0].1] + nodes[w[1].0])).collect())
}

/// Discrepancy between a sweep's segregated limit and an optimal partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionComparison {
    /// Breakpoints extracted from the last sweep step, if its supports separate.
    pub extracted: Option<Vec<f64>>,
    pub extraction_error: Option<String>,
    /// `|a_i(extracted) − a_i(optimal)|`.
    pub distances: Vec<f64>,
    pub max_distance: Option<f64>,
    /// `Σ c_i(extracted) − Σ c_i(optimal)`.
    pub energy_gap: Option<f64>,
    /// `Σ c_i(optimal) − 𝒥` at the last sweep step.
    pub sweep_gap: f64,
    /// `(λ, 𝒥)` along the sweep.
    pub energy_table: Vec<(f64, f64)>,
}

/// `mu` holds the cell weights used to evaluate the extracted partition.
pub fn compare_partition(
    sweep: &[SweepStep],
    optimal: &PartitionReport,
    mu: &[f64],
    disc: &Discretization,
    opts: &SolveOptions,
    theta: f64,
) -> Result<PartitionComparison> {
    let last = sweep.last().ok_or_else(|| Error::InvalidArgument("empty sweep".into()))?;
    let ell = optimal.energies.len();
    if last.bundle.ell() != ell {
        return Err(Error::EllMismatch { left: last.bundle.ell(), right: ell });
    }
    let energy_table = sweep.iter().map(|s| (s.lambda, s.report.energy)).collect();
    let sweep_gap = optimal.total - last.report.energy;
    let (extracted, extraction_error) = match extract_supports(&last.bundle, disc.grid(), theta) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let distances: Vec<f64> = extracted
        .as_ref()
        .map(|p| p.points.iter().zip(&optimal.points).map(|(a, b)| (a - b).abs()).collect())
        .unwrap_or_default();
    let energy_gap = match &extracted {
        Some(p) => partition_energy(p, mu, disc, opts).ok().map(|r| r.total - optimal.total),
        None => None,
    };
    Ok(PartitionComparison {
        max_distance: distances.iter().copied().reduce(f64::max),
        extracted: extracted.map(|p| p.points),
        extraction_error,
        distances,
        energy_gap,
        sweep_gap,
        energy_table,
    })
}
