use super::csr::SparseOperator;
use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgConfig {
    pub rel_tol: f64,
    /// Iteration cap; `None` means ten times the system dimension.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for PcgConfig {
    fn default() -> Self {
        PcgConfig {
            rel_tol: 1e-10,
            max_iter: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl PcgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(param(
                "rel_tol",
                format!("must lie in (0,1), got {}", self.rel_tol),
            ));
        }
        if self.max_iter == Some(0) {
            return Err(param("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PcgOutput {
    pub x: Vec<f64>,
    pub iters: usize,
    /// `||b - A x|| / ||b||`, recomputed from the returned `x`.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn pcg_solve(op: &SparseOperator, b: &[f64], cfg: &PcgConfig) -> Result<PcgOutput> {
    pcg_solve_from(op, b, vec![0.0; b.len()], cfg)
}

/// Preconditioned conjugate gradients started from `x0`.
pub fn pcg_solve_from(
    op: &SparseOperator,
    b: &[f64],
    x0: Vec<f64>,
    cfg: &PcgConfig,
) -> Result<PcgOutput> {
    cfg.validate()?;
    let n = op.dim();
    if b.len() != n || x0.len() != n {
        return Err(Error::Mismatch {
            expected: n,
            found: if b.len() != n { b.len() } else { x0.len() },
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(PcgOutput {
            x: vec![0.0; n],
            iters: 0,
            residual: 0.0,
        });
    }
    let max_iter = cfg.max_iter.unwrap_or(10 * n.max(1));
    let inv_diag: Vec<f64> = match cfg.preconditioner {
        Preconditioner::Jacobi => op
            .diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
        Preconditioner::None => vec![1.0; n],
    };

    let mut x = x0;
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut history = Vec::new();
    let mut iters = 0;

    // outer loop restarts from the true residual if the recursive one drifted
    loop {
        op.mul_vec_into(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let rel = norm(&r) / bnorm;
        history.push(rel);
        if rel <= cfg.rel_tol {
            return Ok(PcgOutput {
                x,
                iters,
                residual: rel,
            });
        }
        if iters >= max_iter {
            return Err(Error::Solver {
                iters,
                residual: rel,
                history,
            });
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iters < max_iter {
            op.mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::Numerical(format!(
                    "operator is not positive definite (p^T A p = {pq:e})"
                )));
            }
            let step = rz / pq;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * q[i];
            }
            iters += 1;
            let rel = norm(&r) / bnorm;
            history.push(rel);
            if !rel.is_finite() {
                return Err(Error::Numerical("PCG residual is not finite".into()));
            }
            if rel <= cfg.rel_tol {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn residual(op: &SparseOperator, x: &[f64], b: &[f64]) -> f64 {
        let ax = op.mul_vec(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        norm(&r) / norm(b)
    }

    #[test]
    fn diagonal_system() {
        let op = SparseOperator::from_dense(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
        let out = pcg_solve(&op, &[2.0, 4.0], &PcgConfig::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-14 && (out.x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two() {
        let op = SparseOperator::from_dense(&[vec![2.0, -1.0], vec![-1.0, 2.0]]);
        for pre in [Preconditioner::None, Preconditioner::Jacobi] {
            let cfg = PcgConfig {
                preconditioner: pre,
                ..Default::default()
            };
            let out = pcg_solve(&op, &[1.0, 0.0], &cfg).unwrap();
            assert!((out.x[0] - 2.0 / 3.0).abs() < 1e-12);
            assert!((out.x[1] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    fn random_spd(n: usize, seed: u64) -> SparseOperator {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>();
            }
            m[i][i] += 1.0;
        }
        SparseOperator::from_dense(&m)
    }

    #[test]
    fn random_spd_residual() {
        let op = random_spd(50, 7);
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        let x_true: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = op.mul_vec(&x_true);
        let out = pcg_solve(&op, &b, &PcgConfig::default()).unwrap();
        let r = residual(&op, &out.x, &b);
        assert!(r <= 1e-10);
        assert!(
            (r - out.residual).abs() <= 1e-13 * r.max(1e-300) || (r - out.residual).abs() < 1e-20
        );
        let err = x_true
            .iter()
            .zip(&out.x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let op = random_spd(5, 1);
        let out = pcg_solve(&op, &[0.0; 5], &PcgConfig::default()).unwrap();
        assert_eq!(out.x, vec![0.0; 5]);
    }

    #[test]
    fn reports_non_convergence() {
        let op = random_spd(30, 3);
        let b = vec![1.0; 30];
        let cfg = PcgConfig {
            max_iter: Some(2),
            rel_tol: 1e-14,
            ..Default::default()
        };
        match pcg_solve(&op, &b, &cfg) {
            Err(Error::Solver { history, iters, .. }) => {
                assert_eq!(iters, 2);
                assert!(!history.is_empty());
            }
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let op = random_spd(3, 1);
        let cfg = PcgConfig {
            rel_tol: 1.5,
            ..Default::default()
        };
        assert!(pcg_solve(&op, &[1.0; 3], &cfg).is_err());
    }
}
