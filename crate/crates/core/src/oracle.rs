//! Independent reference solutions: sine-series solves of `L^s u = f` on the
//! unit cube, and a projected SOR solver for the obstacle problem posed with
//! the spectral power of the finite-difference Laplacian.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::assembly::{assemble_base_operators, MassTreatment, ProblemData};
use crate::error::{param, Error, Result};
use crate::mesh::BaseMesh;
use crate::quadrature::composite_unit;

/// Load specification for the spectral solve.
#[derive(Clone, Copy)]
pub enum SpectralSource<'a> {
    /// Normalized eigenfunction with indices `(k, l)`; `l` is ignored in 1D.
    Eigenfunction(usize, usize),
    /// `prod x_i (1 - x_i)`, with closed-form coefficients.
    Bump,
    /// `f = 1`, with closed-form coefficients.
    One,
    Function(&'a dyn Fn([f64; 2]) -> f64),
}

/// Truncated Dirichlet sine basis of `(0,1)^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub dim: usize,
    pub k_max: usize,
    /// `(k, l, lambda)` sorted by eigenvalue; `l = 0` in 1D.
    pub modes: Vec<(usize, usize, f64)>,
}

fn sine(k: usize, x: f64) -> f64 {
    std::f64::consts::SQRT_2 * (k as f64 * PI * x).sin()
}

fn sine_coeff_bump(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        0.0
    } else {
        4.0 * std::f64::consts::SQRT_2 / (k as f64 * PI).powi(3)
    }
}

fn sine_coeff_one(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        0.0
    } else {
        2.0 * std::f64::consts::SQRT_2 / (k as f64 * PI)
    }
}

impl SpectralBasis {
    pub fn new(dim: usize, k_max: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(param("n", "dimension must be 1 or 2"));
        }
        if k_max == 0 {
            return Err(param("K_max", "must be at least 1"));
        }
        let mut modes = Vec::new();
        for k in 1..=k_max {
            if dim == 1 {
                modes.push((k, 0, PI * PI * (k * k) as f64));
            } else {
                for l in 1..=k_max {
                    modes.push((k, l, PI * PI * (k * k + l * l) as f64));
                }
            }
        }
        modes.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        Ok(SpectralBasis { dim, k_max, modes })
    }

    /// Normalized eigenfunction, `2 sin(k pi x1) sin(l pi x2)` in 2D.
    pub fn eval(&self, k: usize, l: usize, x: [f64; 2]) -> f64 {
        if self.dim == 1 {
            sine(k, x[0])
        } else {
            sine(k, x[0]) * sine(l, x[1])
        }
    }

    /// Expansion coefficients of `source`, one per entry of `modes`.
    pub fn coefficients(&self, source: SpectralSource) -> Result<Vec<f64>> {
        let two_d = self.dim == 2;
        let analytic = |c: fn(usize) -> f64| -> Vec<f64> {
            self.modes
                .iter()
                .map(|&(k, l, _)| if two_d { c(k) * c(l) } else { c(k) })
                .collect()
        };
        Ok(match source {
            SpectralSource::Eigenfunction(k0, l0) => {
                if k0 == 0 || (two_d && l0 == 0) {
                    return Err(param("eigenfunction", "indices start at 1"));
                }
                self.modes
                    .iter()
                    .map(|&(k, l, _)| {
                        if k == k0 && (!two_d || l == l0) {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            SpectralSource::Bump => analytic(sine_coeff_bump),
            SpectralSource::One => analytic(sine_coeff_one),
            SpectralSource::Function(f) => {
                let (x, w) = composite_unit(2 * self.k_max, 8)?;
                // s[k-1][q] = w_q phi_k(x_q)
                let s: Vec<Vec<f64>> = (1..=self.k_max)
                    .map(|k| x.iter().zip(&w).map(|(x, w)| w * sine(k, *x)).collect())
                    .collect();
                if two_d {
                    let nq = x.len();
                    let vals = DMatrix::from_fn(nq, nq, |i, j| f([x[i], x[j]]));
                    let sm = DMatrix::from_fn(self.k_max, nq, |k, q| s[k][q]);
                    let c = &sm * vals * sm.transpose();
                    self.modes
                        .iter()
                        .map(|&(k, l, _)| c[(k - 1, l - 1)])
                        .collect()
                } else {
                    let vals: Vec<f64> = x.iter().map(|&xi| f([xi, 0.0])).collect();
                    self.modes
                        .iter()
                        .map(|&(k, _, _)| s[k - 1].iter().zip(&vals).map(|(a, b)| a * b).sum())
                        .collect()
                }
            }
        })
    }

    pub fn evaluate(&self, coeffs: &[f64], points: &[[f64; 2]]) -> Vec<f64> {
        points
            .iter()
            .map(|&p| {
                self.modes
                    .iter()
                    .zip(coeffs)
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(&(k, l, _), c)| c * self.eval(k, l, p))
                    .sum()
            })
            .collect()
    }
}

/// `u = sum lambda^{-s} f_k phi_k` evaluated at `points`.
pub fn spectral_linear_solve(
    source: SpectralSource,
    s: f64,
    dim: usize,
    k_max: usize,
    points: &[[f64; 2]],
) -> Result<Vec<f64>> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(param("s", "must lie in (0,1]"));
    }
    let basis = SpectralBasis::new(dim, k_max)?;
    let coeffs: Vec<f64> = basis
        .coefficients(source)?
        .iter()
        .zip(&basis.modes)
        .map(|(c, m)| c * m.2.powf(-s))
        .collect();
    Ok(basis.evaluate(&coeffs, points))
}

/// Spectral power of the finite-difference Dirichlet Laplacian on the
/// interior nodes of a uniform lattice with `m` cells per axis.
#[derive(Debug, Clone)]
pub struct DenseFractionalOperator {
    pub dim: usize,
    pub m: usize,
    pub h: f64,
    pub s: f64,
    pub matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl DenseFractionalOperator {
    pub fn new(dim: usize, m: usize, s: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(param("n", "dimension must be 1 or 2"));
        }
        if m < 2 {
            return Err(param("m", "at least two cells per axis are required"));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(param("s", "must be positive"));
        }
        let h = 1.0 / m as f64;
        let p = m - 1;
        let lam1: Vec<f64> = (1..=p)
            .map(|k| 4.0 / (h * h) * (k as f64 * PI * h / 2.0).sin().powi(2))
            .collect();
        let v1 = DMatrix::from_fn(p, p, |i, k| {
            (2.0 * h).sqrt() * ((k + 1) as f64 * PI * (i + 1) as f64 * h).sin()
        });
        let (eigenvalues, vectors) = if dim == 1 {
            (lam1, v1)
        } else {
            let n = p * p;
            let lam = (0..n).map(|q| lam1[q % p] + lam1[q / p]).collect();
            let v = DMatrix::from_fn(n, n, |i, q| v1[(i % p, q % p)] * v1[(i / p, q / p)]);
            (lam, v)
        };
        let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, q| {
            vectors[(i, q)] * eigenvalues[q].powf(s)
        });
        let matrix = &scaled * vectors.transpose();
        Ok(DenseFractionalOperator {
            dim,
            m,
            h,
            s,
            matrix,
            eigenvalues,
            vectors,
        })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues of the finite-difference Laplacian (unpowered).
    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `V diag(lambda^t) V^T` for another power `t`.
    pub fn power(&self, t: f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, q| {
            self.vectors[(i, q)] * self.eigenvalues[q].powf(t)
        });
        &scaled * self.vectors.transpose()
    }

    /// Lattice index of each interior unknown.
    pub fn interior_lattice(&self) -> Vec<usize> {
        let p = self.m - 1;
        let stride = self.m + 1;
        if self.dim == 1 {
            (1..=p).collect()
        } else {
            (0..p * p)
                .map(|q| (q / p + 1) * stride + q % p + 1)
                .collect()
        }
    }

    pub fn to_interior(&self, lattice: &[f64]) -> Vec<f64> {
        self.interior_lattice()
            .iter()
            .map(|&i| lattice[i])
            .collect()
    }

    /// Pads interior values with zero boundary values.
    pub fn from_interior(&self, interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; (self.m + 1).pow(self.dim as u32)];
        for (&i, v) in self.interior_lattice().iter().zip(interior) {
            out[i] = *v;
        }
        out
    }

    /// Direct solve `L^s_h u = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let vb = self.vectors.transpose() * DVector::from_column_slice(b);
        let scaled = DVector::from_fn(vb.len(), |q, _| vb[q] / self.eigenvalues[q].powf(self.s));
        (&self.vectors * scaled).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsorOutput {
    pub u: Vec<f64>,
    /// `b - A u`.
    pub mu: Vec<f64>,
    pub sweeps: usize,
    /// `max(0, max_i u_i - psi_i)`.
    pub feasibility: f64,
    /// `max(0, -min_i mu_i)`.
    pub sign: f64,
    /// `max_i |mu_i (psi_i - u_i)|`, or `|mu_i|` where `psi_i` is infinite.
    pub complementarity: f64,
}

/// Projected SOR with `omega = 1.5` for `A u <= b`, `u <= psi`,
/// complementarity, starting from `min(0, psi)`.
pub fn psor_vi_solve(
    a: &DMatrix<f64>,
    b: &[f64],
    psi: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<PsorOutput> {
    const OMEGA: f64 = 1.5;
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || psi.len() != n {
        return Err(Error::Mismatch {
            expected: n,
            found: b.len().min(psi.len()),
        });
    }
    if !(tol > 0.0) {
        return Err(param("tol", "must be positive"));
    }
    if psi.iter().any(|p| p.is_nan()) {
        return Err(param("psi", "must not contain NaN"));
    }
    if (0..n).any(|i| !(a[(i, i)] > 0.0)) {
        return Err(Error::Oracle("operator has a nonpositive diagonal".into()));
    }
    let mut u: Vec<f64> = psi.iter().map(|p| p.min(0.0)).collect();
    let mut sweeps = 0;
    loop {
        if sweeps >= max_sweeps {
            return Err(Error::Oracle(format!(
                "projected SOR did not converge in {max_sweeps} sweeps"
            )));
        }
        sweeps += 1;
        let mut change = 0.0f64;
        for i in 0..n {
            let row = a.row(i);
            let mut r = b[i];
            for j in 0..n {
                r -= row[j] * u[j];
            }
            let gs = u[i] + r / a[(i, i)];
            let next = (u[i] + OMEGA * (gs - u[i])).min(psi[i]);
            change = change.max((next - u[i]).abs());
            u[i] = next;
        }
        if change < tol {
            break;
        }
    }
    let au = a * DVector::from_column_slice(&u);
    let mu: Vec<f64> = b.iter().zip(au.iter()).map(|(b, x)| b - x).collect();
    let mut out = PsorOutput {
        feasibility: 0.0,
        sign: 0.0,
        complementarity: 0.0,
        u,
        mu,
        sweeps,
    };
    for i in 0..n {
        out.feasibility = out.feasibility.max(out.u[i] - psi[i]);
        out.sign = out.sign.max(-out.mu[i]);
        let gap = if psi[i].is_finite() {
            (out.mu[i] * (psi[i] - out.u[i])).abs()
        } else {
            out.mu[i].abs()
        };
        out.complementarity = out.complementarity.max(gap);
    }
    Ok(out)
}

impl PsorOutput {
    pub fn kkt_ok(&self, tol: f64) -> bool {
        self.feasibility <= tol && self.sign <= tol && self.complementarity <= tol
    }
}

/// Relative discrepancy `(|e|_M / |o|_M, |e|_inf / |o|_inf)` with the
/// consistent base mass matrix `M`.
pub fn compare_trace(base: &BaseMesh, fem: &[f64], oracle: &[f64]) -> Result<(f64, f64)> {
    let n = base.num_vertices();
    for len in [fem.len(), oracle.len()] {
        if len != n {
            return Err(Error::Mismatch {
                expected: n,
                found: len,
            });
        }
    }
    let mass = assemble_base_operators(
        base,
        &ProblemData::new(base, vec![0.0; n]),
        MassTreatment::Consistent,
    )
    .mass;
    let e: Vec<f64> = fem.iter().zip(oracle).map(|(a, b)| a - b).collect();
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let l2 = ratio(
        mass.quad_form(&e).max(0.0).sqrt(),
        mass.quad_form(oracle).max(0.0).sqrt(),
    );
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok((l2, ratio(inf(&e), inf(oracle))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_base_mesh;

    #[test]
    fn basis_is_orthonormal() {
        let basis = SpectralBasis::new(2, 3).unwrap();
        assert!(basis.modes.windows(2).all(|w| w[0].2 <= w[1].2));
        let (x, w) = composite_unit(6, 8).unwrap();
        for &(k, l, _) in &basis.modes {
            let mut q = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                for (yj, wj) in x.iter().zip(&w) {
                    q += wi * wj * basis.eval(k, l, [*xi, *yj]).powi(2);
                }
            }
            assert!((q - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bump_coefficients() {
        let basis = SpectralBasis::new(2, 4).unwrap();
        let c = basis.coefficients(SpectralSource::Bump).unwrap();
        let q = basis
            .coefficients(SpectralSource::Function(&|x| {
                x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
            }))
            .unwrap();
        assert_eq!(basis.modes[0], (1, 1, 2.0 * PI * PI));
        assert!((c[0] - 0.033_285_167_145_467_275).abs() < 1e-15);
        for ((k, l, _), (a, b)) in basis.modes.iter().zip(c.iter().zip(&q)) {
            assert!((a - b).abs() < 1e-13);
            if k % 2 == 0 || l % 2 == 0 {
                assert_eq!(*a, 0.0);
            }
        }
        let one = basis.coefficients(SpectralSource::One).unwrap();
        let qone = basis
            .coefficients(SpectralSource::Function(&|_| 1.0))
            .unwrap();
        for (a, b) in one.iter().zip(&qone) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn eigenfunction_solution_peak() {
        let u = spectral_linear_solve(
            SpectralSource::Eigenfunction(1, 1),
            0.5,
            2,
            2,
            &[[0.5, 0.5]],
        )
        .unwrap();
        assert!((u[0] - 0.450_158_158_078_553_03).abs() < 1e-15);
        let z = spectral_linear_solve(SpectralSource::Function(&|_| 0.0), 0.3, 2, 4, &[[0.3, 0.7]])
            .unwrap();
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn semigroup_property() {
        let op = DenseFractionalOperator::new(2, 6, 0.3).unwrap();
        let prod = &op.matrix * op.power(0.7);
        let lap = op.power(1.0);
        let scale = lap.amax();
        assert!((prod - &lap).amax() < 1e-8 * scale);
    }

    #[test]
    fn unit_power_is_finite_difference_laplacian() {
        for dim in [1, 2] {
            let op = DenseFractionalOperator::new(dim, 5, 1.0).unwrap();
            let n = op.size();
            let h2 = op.h * op.h;
            let p = op.m - 1;
            let mut fd = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                fd[(i, i)] = 2.0 * dim as f64 / h2;
                if dim == 1 {
                    if i + 1 < n {
                        fd[(i, i + 1)] = -1.0 / h2;
                        fd[(i + 1, i)] = -1.0 / h2;
                    }
                } else {
                    if i % p + 1 < p {
                        fd[(i, i + 1)] = -1.0 / h2;
                        fd[(i + 1, i)] = -1.0 / h2;
                    }
                    if i + p < n {
                        fd[(i, i + p)] = -1.0 / h2;
                        fd[(i + p, i)] = -1.0 / h2;
                    }
                }
            }
            assert!((&op.matrix - fd).amax() < 1e-10 * op.matrix.amax());
        }
    }

    #[test]
    fn spectral_poisson_matches_fd_at_second_order() {
        let err = |m: usize| {
            let op = DenseFractionalOperator::new(2, m, 1.0).unwrap();
            let base = build_base_mesh(2, m).unwrap();
            let f: Vec<f64> = op.to_interior(
                &base
                    .vertices()
                    .iter()
                    .map(|x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]))
                    .collect::<Vec<_>>(),
            );
            let fd = op.from_interior(&op.solve(&f));
            let exact =
                spectral_linear_solve(SpectralSource::Bump, 1.0, 2, 121, base.vertices()).unwrap();
            fd.iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(8), err(16));
        let rate = (e1 / e2).log2();
        assert!(rate > 1.8 && rate < 2.2, "rate {rate}");
    }

    #[test]
    fn psor_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let out = psor_vi_solve(&a, &[3.0, 3.0], &[1.0, 1.0], 1e-14, 1000).unwrap();
        assert_eq!(out.u, vec![1.0, 1.0]);
        assert_eq!(out.mu, vec![2.0, 2.0]);
        assert!(out.kkt_ok(1e-12));
    }

    #[test]
    fn psor_unconstrained_and_zero() {
        let op = DenseFractionalOperator::new(2, 6, 0.6).unwrap();
        let n = op.size();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let out = psor_vi_solve(&op.matrix, &b, &vec![f64::INFINITY; n], 1e-13, 10_000).unwrap();
        let direct = op.solve(&b);
        let d = out
            .u
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d < 1e-10);
        let zero = psor_vi_solve(&op.matrix, &vec![0.0; n], &vec![0.2; n], 1e-13, 10_000).unwrap();
        assert!(zero.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn psor_kkt_on_binding_obstacle() {
        let op = DenseFractionalOperator::new(2, 8, 0.4).unwrap();
        let n = op.size();
        let b = vec![1.0; n];
        let top = op.solve(&b).iter().fold(0.0f64, |m, v| m.max(*v));
        let out = psor_vi_solve(&op.matrix, &b, &vec![0.5 * top; n], 1e-13, 10_000).unwrap();
        assert!(out.kkt_ok(1e-9), "{out:?}");
        assert!(out.mu.iter().any(|m| *m > 1e-3));
        assert!(psor_vi_solve(&op.matrix, &b, &vec![0.5 * top; n], 1e-13, 2).is_err());
    }

    #[test]
    fn compare_trace_examples() {
        let base = build_base_mesh(2, 4).unwrap();
        let f: Vec<f64> = base.vertices().iter().map(|x| 1.0 + x[0]).collect();
        assert_eq!(compare_trace(&base, &f, &f).unwrap(), (0.0, 0.0));
        let g: Vec<f64> = f.iter().map(|v| v + 1e-3).collect();
        let (_, inf) = compare_trace(&base, &g, &f).unwrap();
        assert!((inf - 1e-3 / 2.0).abs() < 1e-15);
        assert!(compare_trace(&base, &f[1..], &f).is_err());
    }
}
