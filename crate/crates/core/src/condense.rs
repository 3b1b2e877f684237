//! Exact static condensation of the extension operator onto the trace.
//!
//! On the free nodes the operator factors as
//! `K = (1/d_s) [ P (x) My + Q (x) Sy ]` with `P = S_x(A) + M_x(c)` and
//! `Q = M_x` on interior base vertices, both masses taken with the chosen
//! [`MassTreatment`], and `My`, `Sy` the weighted layer
//! matrices on layers `0..M`. The generalized eigenvectors `V` of `(P, Q)`
//! (`V^T Q V = I`, `V^T P V = diag(lambda)`) decouple `K` into one tridiagonal
//! system per base mode. Eliminating the layers above the trace gives the
//! discrete Dirichlet-to-Neumann matrix
//! `S = B diag(sigma) B^T` with `B = Q V`, and the discrete harmonic
//! extension of a trace is a per-mode product of layer ratios.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::assembly::{
    assemble_base_operators, assemble_layer_operators, FractionalParams, MassTreatment, ProblemData,
};
use crate::error::{Error, Result};
use crate::mesh::CylinderMesh;

#[derive(Debug, Clone)]
pub struct TraceCondensation {
    /// Base vertex id of each interior vertex, in free-trace order.
    interior: Vec<usize>,
    layers: usize,
    /// Generalized eigenvectors `V` (columns).
    basis: DMatrix<f64>,
    /// `B = Q V`, so that `V^{-1} = B^T`.
    dual: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// Per-mode layer diagonals and couplings of `(lambda My + Sy) / d_s`.
    mode_diag: Vec<Vec<f64>>,
    mode_off: Vec<Vec<f64>>,
    /// Per-mode Schur complements on layer 0.
    sigma: Vec<f64>,
    /// Per-mode extension profiles, `profile[j][0] = 1`.
    profile: Vec<Vec<f64>>,
    /// Dense trace Dirichlet-to-Neumann matrix.
    schur: DMatrix<f64>,
    /// Weighted H1 Gram matrix of harmonic extensions in modal coordinates.
    modal_gram: DMatrix<f64>,
}

impl TraceCondensation {
    pub fn new(
        mesh: &CylinderMesh,
        fp: &FractionalParams,
        data: &ProblemData,
        mass: MassTreatment,
    ) -> Result<Self> {
        data.validate(&mesh.base)?;
        let base = &mesh.base;
        let interior: Vec<usize> = mesh.free_trace_nodes().to_vec();
        let n = interior.len();
        let layers = mesh.layers();
        let ops = assemble_base_operators(base, data, mass);
        let identity = ProblemData::new(base, vec![0.0; base.num_vertices()]);
        let plain = assemble_base_operators(base, &identity, MassTreatment::Consistent);
        let restrict = |op: &crate::linalg::SparseOperator| {
            DMatrix::from_fn(n, n, |i, j| op.get(interior[i], interior[j]))
        };
        let p = restrict(&ops.stiffness);
        let q = restrict(&ops.mass);
        let mx = restrict(&plain.mass);
        let h1_x = restrict(&plain.stiffness) + &mx;

        let chol = q
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("base mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let x = l
            .solve_lower_triangular(&p)
            .ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
        let c = l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        // sort modes by eigenvalue for a deterministic layout
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let w = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
        let basis = l
            .transpose()
            .solve_upper_triangular(&w)
            .ok_or_else(|| Error::Numerical("singular mass factor".into()))?;
        let dual = &l * &w;

        let layer = assemble_layer_operators(&mesh.interval, fp.alpha)?;
        let mut mode_diag = Vec::with_capacity(n);
        let mut mode_off = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        let mut profile = Vec::with_capacity(n);
        for &lam in &eigenvalues {
            let diag: Vec<f64> = (0..layers)
                .map(|l| (lam * layer.mass_diag[l] + layer.stiff_diag[l]) / fp.d_s)
                .collect();
            let off: Vec<f64> = (0..layers.saturating_sub(1))
                .map(|l| (lam * layer.mass_off[l] + layer.stiff_off[l]) / fp.d_s)
                .collect();
            // eliminate from the top layer down to the trace
            let mut schur = vec![0.0; layers];
            schur[layers - 1] = diag[layers - 1];
            for l in (0..layers - 1).rev() {
                schur[l] = diag[l] - off[l] * off[l] / schur[l + 1];
            }
            if !(schur[0] > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive trace Schur complement for mode {lam}"
                )));
            }
            let mut prof = vec![1.0; layers];
            for l in 1..layers {
                prof[l] = -off[l - 1] / schur[l] * prof[l - 1];
            }
            sigma.push(schur[0]);
            profile.push(prof);
            mode_diag.push(diag);
            mode_off.push(off);
        }

        let scaled = DMatrix::from_fn(n, n, |i, j| dual[(i, j)] * sigma[j]);
        let schur = &scaled * dual.transpose();
        let schur = (&schur + schur.transpose()) * 0.5;

        // Gram of extensions: (h1_x (x) My + M_x (x) Sy) in modal coordinates
        // with the consistent M_x, and My, Sy restricted to the free layers.
        let xh = basis.transpose() * &h1_x * &basis;
        let xm = basis.transpose() * &mx * &basis;
        let tri = |d: &[f64], o: &[f64], v: &[f64]| -> Vec<f64> {
            (0..layers)
                .map(|l| {
                    let mut acc = d[l] * v[l];
                    if l > 0 {
                        acc += o[l - 1] * v[l - 1];
                    }
                    if l + 1 < layers {
                        acc += o[l] * v[l + 1];
                    }
                    acc
                })
                .collect()
        };
        let my_prof: Vec<Vec<f64>> = profile
            .iter()
            .map(|p| tri(&layer.mass_diag, &layer.mass_off, p))
            .collect();
        let sy_prof: Vec<Vec<f64>> = profile
            .iter()
            .map(|p| tri(&layer.stiff_diag, &layer.stiff_off, p))
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut modal_gram = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..=j {
                let g = xh[(j, k)] * dot(&profile[k], &my_prof[j])
                    + xm[(j, k)] * dot(&profile[k], &sy_prof[j]);
                modal_gram[(j, k)] = g;
                modal_gram[(k, j)] = g;
            }
        }

        Ok(TraceCondensation {
            interior,
            layers,
            basis,
            dual,
            eigenvalues,
            mode_diag,
            mode_off,
            sigma,
            profile,
            schur,
            modal_gram,
        })
    }

    pub fn num_trace(&self) -> usize {
        self.interior.len()
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn schur(&self) -> &DMatrix<f64> {
        &self.schur
    }

    /// Solves `(S + diag(shift)) u = rhs` on the free trace nodes.
    pub fn solve_trace(&self, shift: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_trace();
        if shift.iter().all(|&d| d == 0.0) {
            let c = self.basis.tr_mul(&DVector::from_column_slice(rhs));
            let scaled = DVector::from_fn(n, |j, _| c[j] / self.sigma[j]);
            return Ok((&self.basis * scaled).as_slice().to_vec());
        }
        let mut a = self.schur.clone();
        for (i, &d) in shift.iter().enumerate() {
            a[(i, i)] += d;
        }
        let chol = a.cholesky().ok_or_else(|| {
            Error::Numerical("penalized trace system is not positive definite".into())
        })?;
        let x = chol.solve(&DVector::from_column_slice(rhs));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite trace solution".into()));
        }
        Ok(x.as_slice().to_vec())
    }

    /// Modal coordinates `V^{-1} u` of a free-trace vector.
    fn modal(&self, trace: &[f64]) -> DVector<f64> {
        self.dual.tr_mul(&DVector::from_column_slice(trace))
    }

    /// Weighted H1 norm of the discrete harmonic extension of `trace`.
    pub fn extension_norm(&self, trace: &[f64]) -> f64 {
        let c = self.modal(trace);
        let gc = &self.modal_gram * &c;
        c.dot(&gc).max(0.0).sqrt()
    }

    /// Discrete harmonic extension of a free-trace vector, as free-node values.
    pub fn extend(&self, trace: &[f64]) -> Vec<f64> {
        let n = self.num_trace();
        let c = self.modal(trace);
        let mut out = vec![0.0; n * self.layers];
        out[..n].copy_from_slice(trace);
        for l in 1..self.layers {
            let coeffs = DVector::from_fn(n, |j, _| c[j] * self.profile[j][l]);
            let values = &self.basis * coeffs;
            out[l * n..(l + 1) * n].copy_from_slice(values.as_slice());
        }
        out
    }

    /// Exact solve of `K u = r` on the free nodes (layer-major order).
    pub fn solve_full(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.num_trace();
        let m = self.layers;
        // modal right-hand sides, one row per layer
        let mut modal = vec![vec![0.0; n]; m];
        for l in 0..m {
            let c = self
                .basis
                .tr_mul(&DVector::from_column_slice(&rhs[l * n..(l + 1) * n]));
            modal[l].copy_from_slice(c.as_slice());
        }
        let mut out = vec![0.0; n * m];
        let mut col = vec![0.0; m];
        for j in 0..n {
            for l in 0..m {
                col[l] = modal[l][j];
            }
            thomas(&self.mode_diag[j], &self.mode_off[j], &mut col);
            for l in 0..m {
                modal[l][j] = col[l];
            }
        }
        for l in 0..m {
            let v = &self.basis * DVector::from_column_slice(&modal[l]);
            out[l * n..(l + 1) * n].copy_from_slice(v.as_slice());
        }
        out
    }
}

/// In-place solve of a symmetric tridiagonal system.
fn thomas(diag: &[f64], off: &[f64], rhs: &mut [f64]) {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = diag[0];
    rhs[0] /= d;
    for l in 1..m {
        c[l - 1] = off[l - 1] / d;
        d = diag[l] - off[l - 1] * c[l - 1];
        rhs[l] = (rhs[l] - off[l - 1] * rhs[l - 1]) / d;
    }
    for l in (0..m - 1).rev() {
        rhs[l] -= c[l] * rhs[l + 1];
    }
}
