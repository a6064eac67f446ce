//! Shared fixtures for the benchmarks.

use polyseg::{make_params, Discretization};

/// Discretization with `n2 = N + 1 − n1`.
pub fn discretization(n: usize, m: usize, n1: usize, count: usize) -> Discretization {
    let params = make_params(n, m, n1, n + 1 - n1).expect("valid parameters");
    Discretization::from_params(&params, count).expect("valid grid")
}
