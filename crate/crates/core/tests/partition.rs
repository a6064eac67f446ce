use std::f64::consts::PI;

use polyseg::partition::{brute_force_scan, topology_label};
use polyseg::*;

fn disc(n: usize, m: usize, n1: usize, count: usize) -> Discretization {
    Discretization::from_params(&make_params(n, m, n1, n + 1 - n1).unwrap(), count).unwrap()
}

fn level(a: f64, b: f64, d: &Discretization) -> f64 {
    solve_cell(a, b, 1.0, d, &SolveOptions::default()).unwrap().level
}

#[test]
fn levels_are_monotone_in_the_domain() {
    let d = disc(4, 1, 2, 256);
    let g = d.grid();
    let ks: Vec<usize> = (0..16).map(|i| 24 + i * 13).collect();
    let left: Vec<f64> = ks.iter().map(|&k| level(0.0, g.vertex(k), &d)).collect();
    let right: Vec<f64> = ks.iter().map(|&k| level(g.vertex(k), PI, &d)).collect();
    for w in left.windows(2) {
        assert!(w[1] < w[0] - 1e-8, "{w:?}");
    }
    for w in right.windows(2) {
        assert!(w[1] > w[0] + 1e-8, "{w:?}");
    }
}

#[test]
fn union_of_adjacent_cells_has_lower_level() {
    let d = disc(4, 1, 2, 256);
    let g = d.grid();
    let triples = [
        (0, 40, 120),
        (0, 128, 256),
        (10, 60, 200),
        (20, 100, 180),
        (30, 45, 90),
        (50, 130, 256),
        (64, 128, 192),
        (0, 200, 256),
        (90, 150, 240),
        (16, 200, 236),
    ];
    for (a, b, c) in triples {
        let (a, b, c) = (g.vertex(a), g.vertex(b), g.vertex(c));
        let whole = level(a, c, &d);
        let parts = level(a, b, &d).min(level(b, c, &d));
        assert!(whole < parts - 1e-8, "({a}, {b}, {c}): {whole} vs {parts}");
    }
}

#[test]
fn splitting_raises_the_total() {
    let d = disc(4, 1, 2, 256);
    let whole = level(0.0, PI, &d);
    for a in [0.3, 1.0, PI / 2.0, 2.5] {
        let p = Partition::new(vec![a]).unwrap();
        let rep = partition_energy(&p, &[1.0, 1.0], &d, &SolveOptions::default()).unwrap();
        assert!(rep.total > whole);
        assert!((rep.total - rep.energies.iter().sum::<f64>()).abs() <= 1e-12 * rep.total);
    }
}

#[test]
fn single_cell_partition_is_the_full_level() {
    let d = disc(4, 1, 2, 256);
    let rep = partition_energy(&Partition::whole(), &[1.0], &d, &SolveOptions::default()).unwrap();
    assert_eq!(rep.total, level(0.0, PI, &d));
    assert_eq!(rep.labels, vec!["S^4".to_string()]);
}

#[test]
fn symmetric_cells_have_equal_levels() {
    let d = disc(3, 1, 2, 256);
    let rep = partition_energy(&Partition::uniform(2), &[1.0, 1.0], &d, &SolveOptions::default()).unwrap();
    let (x, y) = (rep.energies[0], rep.energies[1]);
    assert!((x - y).abs() < 1e-6 * x, "{x} vs {y}");
}

#[test]
fn symmetric_two_cell_optimum_is_centred() {
    let d = disc(3, 1, 2, 256);
    let opt = optimize_partition(2, &[1.0, 1.0], &d, &SolveOptions::default()).unwrap();
    assert!(opt.converged);
    let a = opt.partition.points[0];
    assert!((a - PI / 2.0).abs() <= 2.0 * d.grid().dt() + 1e-12, "a₁ = {a}");
    let (x, y) = (opt.report.energies[0], opt.report.energies[1]);
    assert!((x - y).abs() < 1e-6 * x, "{x} vs {y}");
}

#[test]
fn mirrored_starts_give_mirrored_optima() {
    let d = disc(3, 1, 2, 256);
    let opts = SolveOptions::default();
    let a = optimize_partition_from(&Partition::new(vec![0.9]).unwrap(), &[1.0, 1.0], &d, &opts).unwrap();
    let b = optimize_partition_from(&Partition::new(vec![PI - 0.9]).unwrap(), &[1.0, 1.0], &d, &opts).unwrap();
    let (x, y) = (a.partition.points[0], b.partition.points[0]);
    assert!((x + y - PI).abs() < 4.0 * d.grid().dt(), "{x} + {y}");
}

#[test]
fn symmetric_three_cell_optimum_is_symmetric() {
    let d = disc(3, 1, 2, 128);
    let opt = optimize_partition(3, &[1.0, 1.0, 1.0], &d, &SolveOptions::default()).unwrap();
    let p = &opt.partition.points;
    assert!((p[0] + p[1] - PI).abs() <= 4.0 * d.grid().dt() + 1e-12, "{p:?}");
    assert_eq!(opt.report.labels[1], "S^1×S^1×(0,1)");
}

#[test]
fn asymmetric_optimum_beats_uniform_and_scan() {
    let d = disc(4, 1, 2, 256);
    let opts = SolveOptions::default();
    let mu = [1.0, 1.0];
    let opt = optimize_partition(2, &mu, &d, &opts).unwrap();
    let uniform = partition_energy(&Partition::uniform(2), &mu, &d, &opts).unwrap();
    assert!(opt.report.total <= uniform.total);
    let scan = brute_force_scan(&mu, &d, &opts, 64).unwrap();
    for &(_, v) in &scan {
        assert!(opt.report.total <= v + 1e-9 * v);
    }
    let (best, _) = scan.iter().copied().min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    let spacing = scan[1].0 - scan[0].0;
    let a = opt.partition.points[0];
    assert!((a - best).abs() <= spacing + 1e-12, "{a} vs {best}");
    assert!((a - PI / 2.0).abs() > d.grid().dt());
}

#[test]
fn labels_follow_the_orbit_ends() {
    let d = disc(4, 1, 2, 256);
    let rep = partition_energy(&Partition::uniform(3), &[1.0; 3], &d, &SolveOptions::default()).unwrap();
    assert_eq!(rep.labels, vec!["S^1×B^3", "S^1×S^2×(0,1)", "B^2×R^2"]);
    // the first profile lives near t = 0, the last near t = π
    let nodes = d.grid().nodes();
    let first = &rep.profiles[0].values;
    let last = &rep.profiles[2].values;
    assert!(first[0] != 0.0 && first[nodes.len() - 1] == 0.0);
    assert!(last[0] == 0.0 && last[nodes.len() - 1] != 0.0);
    assert_eq!(topology_label(0, 1, d.params()), "S^4");
}

#[test]
fn supports_of_zero_bundle_are_rejected() {
    let d = disc(4, 1, 2, 128);
    let zero = Profile::new(vec![0.0; 128]);
    let b = ProfileBundle::new(vec![zero.clone(), zero]);
    assert!(matches!(extract_supports(&b, d.grid(), 1e-2), Err(Error::EmptySupport)));
    assert!(extract_supports(&b, d.grid(), 1.5).is_err());
}

#[test]
fn overlapping_supports_are_rejected() {
    let d = disc(4, 1, 2, 128);
    let g = d.grid();
    let b = ProfileBundle::new(vec![Profile::from_fn(g, |t| t.sin()), Profile::from_fn(g, |t| t.sin())]);
    assert!(matches!(extract_supports(&b, g, 1e-2), Err(Error::SupportsOverlap)));
}

#[test]
fn invalid_partitions_are_rejected() {
    assert!(Partition::new(vec![1.0, 0.5]).is_err());
    assert!(Partition::new(vec![0.0]).is_err());
    assert!(Partition::new(vec![PI]).is_err());
    let d = disc(4, 1, 2, 128);
    let p = Partition::new(vec![1.0, 1.0 + d.grid().dt()]).unwrap();
    assert!(partition_energy(&p, &[1.0; 3], &d, &SolveOptions::default()).is_err());
    assert!(optimize_partition(1, &[1.0], &d, &SolveOptions::default()).is_err());
}
