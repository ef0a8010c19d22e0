//! Finite-difference weights on arbitrary nodes.

/// Weights `w[m][k]` such that `f^{(m)}(x0) ≈ Σ_k w[m][k] f(xs[k])` for
/// every `m ≤ max_order` (Fornberg's recursion).
pub fn fornberg_weights(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Number of equispaced points of a centered stencil for the `order`-th
/// derivative with accuracy order at least 4.
pub fn centered_width(order: usize) -> usize {
    if order == 0 {
        1
    } else {
        2 * order.div_ceil(2) + 3
    }
}

/// Weights of the `order`-th derivative on `width` equispaced unit-spaced
/// nodes with offsets `first, first + 1, …` relative to the evaluation point.
pub fn unit_weights(order: usize, first: isize, width: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..width).map(|k| (first + k as isize) as f64).collect();
    fornberg_weights(0.0, &xs, order).swap_remove(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_centered_weights() {
        let w = unit_weights(2, -2, 5);
        let expect = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = unit_weights(1, -2, 5);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn one_sided_weights_are_exact_on_quartics() {
        let w = unit_weights(2, 0, 6);
        let f = |x: f64| x.powi(4) - 2.0 * x.powi(3) + x;
        let approx: f64 = w.iter().enumerate().map(|(k, wk)| wk * f(k as f64)).sum();
        assert!((approx - 0.0).abs() < 1e-11);
    }

    #[test]
    fn widths() {
        assert_eq!(centered_width(1), 5);
        assert_eq!(centered_width(2), 5);
        assert_eq!(centered_width(3), 7);
        assert_eq!(centered_width(4), 7);
    }
}
