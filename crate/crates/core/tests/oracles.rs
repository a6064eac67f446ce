use std::f64::consts::PI;

use polyseg::oracles::{battery_passes, coercivity_probe, fd_gradient_check, mc_sphere_integral, ode_residual};
use polyseg::*;

fn disc(n: usize, m: usize, n1: usize, count: usize) -> Discretization {
    Discretization::from_params(&make_params(n, m, n1, n + 1 - n1).unwrap(), count).unwrap()
}

#[test]
fn battery_passes_on_default_configurations() {
    for (n, m, n1, count) in [(4, 1, 2, 512), (3, 1, 2, 512), (5, 2, 3, 256)] {
        let d = disc(n, m, n1, count);
        let reps = run_suite(Suite::All, &d, 7).unwrap();
        let failed: Vec<_> = reps.iter().filter(|r| r.counts() && !r.pass).collect();
        assert!(battery_passes(&reps), "N={n} m={m} n1={n1}: {failed:#?}");
        assert!(reps.iter().any(|r| r.name.starts_with("coercivity")));
    }
}

#[test]
fn battery_is_deterministic() {
    let d = disc(4, 1, 2, 256);
    let a = serde_json::to_string(&run_suite(Suite::All, &d, 3).unwrap()).unwrap();
    let b = serde_json::to_string(&run_suite(Suite::All, &d, 3).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn suites_parse_by_name() {
    for s in Suite::EACH.into_iter().chain([Suite::All]) {
        assert_eq!(s.name().parse::<Suite>().unwrap(), s);
    }
    assert!("everything".parse::<Suite>().is_err());
}

#[test]
fn literal_sign_is_flagged_only_for_unequal_blocks() {
    let unequal = run_suite(Suite::Orbit, &disc(4, 1, 2, 256), 1).unwrap();
    let equal = run_suite(Suite::Orbit, &disc(3, 1, 2, 256), 1).unwrap();
    let literal = |reps: &[OracleReport]| reps.iter().find(|r| r.name == "laplacian_cos[paper_literal]").unwrap().pass;
    assert!(!literal(&unequal));
    assert!(literal(&equal));
}

#[test]
fn squared_cosine_integrates_over_the_sphere() {
    let d = disc(4, 1, 2, 1024);
    let w = Profile::from_fn(d.grid(), |t| t.cos().powi(2));
    let r = mc_sphere_integral(&w, d.grid(), 1_000_000, 11).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn second_order_constant_has_zero_strong_residual() {
    let d = disc(5, 2, 3, 512);
    let s = solve_cell(0.0, PI, 1.0, &d, &SolveOptions::default()).unwrap();
    let r = ode_residual(&s.profile, 1.0, &d).unwrap();
    assert!(r.pass && r.discrepancy < 1e-3, "{r:?}");
}

#[test]
fn gradient_checks_on_a_segregating_bundle() {
    let d = disc(4, 1, 2, 256);
    let cm = CouplingMatrix::uniform(vec![1.0, 1.0], -8.0, d.params().two_star()).unwrap();
    let rep = partition_energy(&Partition::uniform(2), &[1.0, 1.0], &d, &SolveOptions::default()).unwrap();
    // perturbed off the critical points, where the gradients vanish
    let nodes = d.grid().nodes();
    let wb = ProfileBundle::new(
        rep.profiles
            .iter()
            .map(|c| Profile {
                values: c.values.iter().zip(nodes).map(|(v, t)| 1.3 * v * (1.0 + 0.2 * (3.0 * t).cos())).collect(),
                cell: c.cell,
            })
            .collect(),
    );
    for t in [GradientTarget::Single, GradientTarget::System, GradientTarget::Psi] {
        let r = fd_gradient_check(t, &wb, &cm, &d, 1e-5, 2).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn coercivity_holds_on_both_windows() {
    let p = make_params(5, 2, 3, 3).unwrap();
    for eps in [0.3, 0.7] {
        for i in 1..=2 {
            let r = coercivity_probe(eps, i, &p, 100, 4).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }
}
