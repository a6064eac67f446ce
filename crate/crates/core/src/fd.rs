//! Finite-difference weights on uniform grids.

/// Fornberg's recursion: weights `c[j]` such that
/// `f^{(order)}(z) ≈ Σ c[j] f(x[j])`.
pub fn fornberg_weights(z: f64, x: &[f64], order: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > order, "stencil of {n} points cannot resolve derivative {order}");
    // c[j][k]: weight of x[j] for derivative k
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Fourth-order accurate derivative of sampled values on a uniform grid.
///
/// Centered stencils in the interior, shifted one-sided stencils of
/// `order + 4` points near the two ends.
pub fn derivative_uniform(values: &[f64], spacing: f64, order: usize) -> Vec<f64> {
    let n = values.len();
    let central = 2 * order.div_ceil(2) + 3;
    let sided = order + 4;
    assert!(n >= sided, "need at least {sided} samples");
    let half = central / 2;
    let scale = spacing.powi(order as i32);

    let central_w = {
        let offs: Vec<f64> = (0..central).map(|i| i as f64 - half as f64).collect();
        fornberg_weights(0.0, &offs, order)
    };
    // one-sided windows keyed by the evaluation point's offset into the window
    let sided_w: Vec<Vec<f64>> = (0..sided)
        .map(|p| {
            let offs: Vec<f64> = (0..sided).map(|i| i as f64).collect();
            fornberg_weights(p as f64, &offs, order)
        })
        .collect();

    (0..n)
        .map(|j| {
            if j >= half && j + half < n {
                let base = j - half;
                central_w.iter().enumerate().map(|(i, c)| c * values[base + i]).sum::<f64>() / scale
            } else {
                let base = if j < half { 0 } else { n - sided };
                let w = &sided_w[j - base];
                w.iter().enumerate().map(|(i, c)| c * values[base + i]).sum::<f64>() / scale
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_five_point_weights() {
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let want = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let want = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn exact_on_quartics() {
        let h = 0.1;
        let xs: Vec<f64> = (0..30).map(|i| 0.3 + i as f64 * h).collect();
        let f: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x.powi(3) + 0.1 * x.powi(4)).collect();
        let d1 = derivative_uniform(&f, h, 1);
        let d2 = derivative_uniform(&f, h, 2);
        for (i, x) in xs.iter().enumerate() {
            assert!((d1[i] - (-2.0 + 1.5 * x * x + 0.4 * x.powi(3))).abs() < 1e-10);
            assert!((d2[i] - (3.0 * x + 1.2 * x * x)).abs() < 1e-9);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
            let f: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
            let d3 = derivative_uniform(&f, h, 3);
            xs.iter()
                .zip(&d3)
                .map(|(x, d)| (d + 27.0 * (3.0 * x).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(64) / err(128);
        assert!(ratio > 12.0, "ratio {ratio}");
    }
}
