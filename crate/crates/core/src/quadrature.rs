//! Gauss–Legendre quadrature on [-1, 1].

use crate::error::{Error, Result};

/// Nodes and weights of the `count`-point Gauss–Legendre rule, nodes ascending.
///
/// Exact for polynomials of degree ≤ 2·count − 1. Nodes are found by Newton
/// iteration on P_count from the usual cosine initial guess.
pub fn gauss_legendre(count: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if count == 0 {
        return Err(Error::invalid(
            "count",
            "quadrature needs at least one node",
        ));
    }
    let n = count;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, z);
            deriv = dp;
            let dz = p / dp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                let (_, dp) = legendre_and_derivative(n, z);
                deriv = dp;
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * deriv * deriv);
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

fn legendre_and_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * z * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (z * p - p_prev) / (z * z - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_rule() {
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn integrates_monomials_exactly() {
        for count in [1usize, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(count).unwrap();
            for degree in 0..(2 * count) {
                let approx: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| w * x.powi(degree as i32))
                    .sum();
                let exact = if degree % 2 == 1 {
                    0.0
                } else {
                    2.0 / (degree as f64 + 1.0)
                };
                assert!(
                    (approx - exact).abs() < 1e-13,
                    "count={count} degree={degree}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn weights_sum_to_two_at_high_order() {
        let (x, w) = gauss_legendre(513).unwrap();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }
}
