//! Gauss rules from the Golub–Welsch eigenvalue formulation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{param, Result};

/// Nodes and weights for `int_{-1}^{1} (1-x)^a (1+x)^b g(x) dx`.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(param("n", "at least one node is required"));
    }
    if !(a > -1.0 && b > -1.0) {
        return Err(param("a, b", "Jacobi exponents must exceed -1"));
    }
    let ab = a + b;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let den = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        j[(k, k)] = if k == 0 || den == 0.0 {
            (b - a) / (ab + 2.0)
        } else {
            (b * b - a * a) / den
        };
        if k + 1 < n {
            let m = kf + 1.0;
            let t = 2.0 * m + ab;
            let off =
                (4.0 * m * (m + a) * (m + b) * (m + ab) / (t * t * (t + 1.0) * (t - 1.0))).sqrt();
            j[(k, k + 1)] = off;
            j[(k + 1, k)] = off;
        }
    }
    let mu0 =
        (ab + 1.0).exp2() * libm::tgamma(a + 1.0) * libm::tgamma(b + 1.0) / libm::tgamma(ab + 2.0);
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(pairs.into_iter().unzip())
}

pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    gauss_jacobi(n, 0.0, 0.0)
}

/// Composite Gauss–Legendre rule on `[0,1]` with equal panels.
pub fn composite_unit(panels: usize, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if panels == 0 {
        return Err(param("panels", "must be positive"));
    }
    let (x, w) = gauss_legendre(order)?;
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(a + 0.5 * h * (xi + 1.0));
            weights.push(0.5 * h * wi);
        }
    }
    Ok((nodes, weights))
}
