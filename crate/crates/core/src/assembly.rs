//! Finite element assembly on the truncated cylinder.
//!
//! The bilinear form is
//! `a(w, v) = (1/d_s) * int_C y^alpha (A grad_x w . grad_x v + w_y v_y + c w v)`.
//! Every cylinder cell is a tensor product `E x I_k`, so each local matrix is
//! `(1/d_s) [ (S_x(E;A) + c_E M_x(E)) (x) My_k + M_x(E) (x) Sy_k ]` where the
//! y factors carry the weight and are integrated in closed form. With
//! [`MassTreatment::Lumped`] the x mass factors are replaced by their row-sum
//! diagonals, which makes the trace Dirichlet-to-Neumann matrix an M-matrix
//! on meshes whose stiffness has nonpositive couplings.

use crate::error::{param, Error, Result};
use crate::linalg::SparseOperator;
use crate::mesh::{BaseMesh, CylinderMesh, GradedInterval};

/// Fractional order `s`, weight exponent `alpha = 1 - 2s` and the
/// normalization `d_s = 2^alpha Gamma(1-s) / Gamma(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalParams {
    pub s: f64,
    pub alpha: f64,
    pub d_s: f64,
}

impl FractionalParams {
    pub fn new(s: f64) -> Result<Self> {
        Ok(FractionalParams {
            s,
            alpha: 1.0 - 2.0 * s,
            d_s: normalization_ds(s)?,
        })
    }
}

pub fn normalization_ds(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(param(
            "s",
            format!("fractional order must lie in (0,1), got {s}"),
        ));
    }
    if s == 0.5 {
        return Ok(1.0);
    }
    let alpha = 1.0 - 2.0 * s;
    Ok(alpha.exp2() * libm::tgamma(1.0 - s) / libm::tgamma(s))
}

/// `b^beta - a^beta` for `0 <= a < b`, without cancellation when `a ~ b`.
fn power_difference(a: f64, b: f64, beta: f64) -> f64 {
    if a == 0.0 {
        b.powf(beta)
    } else {
        a.powf(beta) * (beta * ((b - a) / a).ln_1p()).exp_m1()
    }
}

/// `int_a^b y^alpha p(y) dy` for a polynomial with coefficients `p[m]` of
/// `y^m`, evaluated from the exact power moments.
pub fn weighted_y_integral(a: f64, b: f64, alpha: f64, p: &[f64]) -> Result<f64> {
    if a < 0.0 {
        return Err(Error::Domain(a));
    }
    if !(b > a) {
        return Err(param(
            "b",
            format!("upper bound {b} must exceed lower bound {a}"),
        ));
    }
    if !(alpha > -1.0 && alpha < 1.0) {
        return Err(param(
            "alpha",
            format!("weight exponent must lie in (-1,1), got {alpha}"),
        ));
    }
    Ok(p.iter()
        .enumerate()
        .map(|(m, &c)| {
            let beta = alpha + m as f64 + 1.0;
            c * power_difference(a, b, beta) / beta
        })
        .sum())
}

pub type Local2 = [[f64; 2]; 2];

/// Weighted mass and stiffness of the linear element on `[a, b]`, local
/// order (lower node, upper node).
pub fn interval_matrices(a: f64, b: f64, alpha: f64) -> Result<(Local2, Local2)> {
    let h = b - a;
    let h2 = h * h;
    let m0 = weighted_y_integral(a, b, alpha, &[1.0])?;
    // phi_lo = (b - y)/h, phi_hi = (y - a)/h
    let lo_lo = weighted_y_integral(a, b, alpha, &[b * b, -2.0 * b, 1.0])? / h2;
    let lo_hi = weighted_y_integral(a, b, alpha, &[-a * b, a + b, -1.0])? / h2;
    let hi_hi = weighted_y_integral(a, b, alpha, &[a * a, -2.0 * a, 1.0])? / h2;
    let k = m0 / h2;
    Ok(([[lo_lo, lo_hi], [lo_hi, hi_hi]], [[k, -k], [-k, k]]))
}

/// Per-element coefficients and the nodal load of the linear problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    /// Symmetric diffusion tensor per base element (only `[0][0]` is used in 1D).
    pub diffusion: Vec<[[f64; 2]; 2]>,
    /// Reaction coefficient per base element.
    pub reaction: Vec<f64>,
    /// Load `f` at base vertices.
    pub load: Vec<f64>,
}

impl ProblemData {
    /// Identity diffusion, no reaction.
    pub fn new(base: &BaseMesh, load: Vec<f64>) -> Self {
        ProblemData {
            diffusion: vec![[[1.0, 0.0], [0.0, 1.0]]; base.num_elements()],
            reaction: vec![0.0; base.num_elements()],
            load,
        }
    }

    /// Load interpolated from a function of the base coordinates.
    pub fn from_fn(base: &BaseMesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        let load = base.vertices().iter().map(|&x| f(x)).collect();
        Self::new(base, load)
    }

    pub fn validate(&self, base: &BaseMesh) -> Result<()> {
        let ne = base.num_elements();
        if self.diffusion.len() != ne {
            return Err(Error::Mismatch {
                expected: ne,
                found: self.diffusion.len(),
            });
        }
        if self.reaction.len() != ne {
            return Err(Error::Mismatch {
                expected: ne,
                found: self.reaction.len(),
            });
        }
        if self.load.len() != base.num_vertices() {
            return Err(Error::Mismatch {
                expected: base.num_vertices(),
                found: self.load.len(),
            });
        }
        for (e, a) in self.diffusion.iter().enumerate() {
            let ok = if base.dim() == 1 {
                a[0][0] > 0.0
            } else {
                a[0][1] == a[1][0] && a[0][0] > 0.0 && a[0][0] * a[1][1] - a[0][1] * a[1][0] > 0.0
            };
            if !ok {
                return Err(param(
                    "diffusion",
                    format!("element {e} is not symmetric positive definite"),
                ));
            }
        }
        if let Some(e) = self.reaction.iter().position(|&c| !(c >= 0.0)) {
            return Err(param(
                "reaction",
                format!("negative or NaN reaction on element {e}"),
            ));
        }
        if let Some(v) = self
            .load
            .iter()
            .position(|&f| !(f >= 0.0) || !f.is_finite())
        {
            return Err(param(
                "load",
                format!("load must be finite and nonnegative (vertex {v})"),
            ));
        }
        Ok(())
    }
}

/// Local P1 stiffness `int_E A grad phi_i . grad phi_j` and mass
/// `int_E phi_i phi_j`, both row-major `(dim+1) x (dim+1)`.
pub fn simplex_matrices(base: &BaseMesh, e: usize, a: &[[f64; 2]; 2]) -> (Vec<f64>, Vec<f64>) {
    let el = base.element(e);
    let meas = base.measure(e);
    if base.dim() == 1 {
        let k = a[0][0] / meas;
        let m = meas / 6.0;
        (vec![k, -k, -k, k], vec![2.0 * m, m, m, 2.0 * m])
    } else {
        let p: Vec<[f64; 2]> = el.iter().map(|&v| base.vertex(v)).collect();
        // gradients of barycentric coordinates: grad l_i = rot(p_{i+2} - p_{i+1}) / (2|E|)
        let grads: Vec<[f64; 2]> = (0..3)
            .map(|i| {
                let (q, r) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                [(q[1] - r[1]) / (2.0 * meas), (r[0] - q[0]) / (2.0 * meas)]
            })
            .collect();
        let mut stiff = vec![0.0; 9];
        let mut mass = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let ag = [
                    a[0][0] * grads[j][0] + a[0][1] * grads[j][1],
                    a[1][0] * grads[j][0] + a[1][1] * grads[j][1],
                ];
                stiff[i * 3 + j] = meas * (grads[i][0] * ag[0] + grads[i][1] * ag[1]);
                mass[i * 3 + j] = meas / 12.0 * if i == j { 2.0 } else { 1.0 };
            }
        }
        (stiff, mass)
    }
}

/// How the base mass factors of the extension operator are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassTreatment {
    #[default]
    Lumped,
    Consistent,
}

impl MassTreatment {
    pub fn name(&self) -> &'static str {
        match self {
            MassTreatment::Lumped => "lumped",
            MassTreatment::Consistent => "consistent",
        }
    }

    /// Applies the treatment to a row-major local mass matrix.
    pub fn apply(&self, mass: Vec<f64>) -> Vec<f64> {
        match self {
            MassTreatment::Consistent => mass,
            MassTreatment::Lumped => {
                let k = (mass.len() as f64).sqrt().round() as usize;
                let mut out = vec![0.0; mass.len()];
                for i in 0..k {
                    out[i * k + i] = mass[i * k..(i + 1) * k].iter().sum();
                }
                out
            }
        }
    }
}

/// Local `(S_x(A) + c M_x, M_x)` of element `e` under `mass`, unscaled.
fn element_factors(
    base: &BaseMesh,
    data: &ProblemData,
    e: usize,
    mass: MassTreatment,
) -> (Vec<f64>, Vec<f64>) {
    let (sx, mx) = simplex_matrices(base, e, &data.diffusion[e]);
    let mx = mass.apply(mx);
    let c = data.reaction[e];
    let px = sx.iter().zip(&mx).map(|(s, m)| s + c * m).collect();
    (px, mx)
}

/// Base-mesh operators over all vertices: `stiffness = S_x(A) + M_x(c)` and
/// the mass `M_x`, both with the chosen mass treatment.
#[derive(Debug, Clone)]
pub struct BaseOperators {
    pub stiffness: SparseOperator,
    pub mass: SparseOperator,
}

pub fn assemble_base_operators(
    base: &BaseMesh,
    data: &ProblemData,
    mass: MassTreatment,
) -> BaseOperators {
    let mut ts = Vec::new();
    let mut tm = Vec::new();
    for e in 0..base.num_elements() {
        let el = base.element(e);
        let (p, m) = element_factors(base, data, e, mass);
        let k = el.len();
        for i in 0..k {
            for j in 0..k {
                ts.push((el[i], el[j], p[i * k + j]));
                tm.push((el[i], el[j], m[i * k + j]));
            }
        }
    }
    let n = base.num_vertices();
    BaseOperators {
        stiffness: SparseOperator::from_triplets(n, ts),
        mass: SparseOperator::from_triplets(n, tm),
    }
}

/// Tridiagonal weighted mass and stiffness over the interval nodes `0..=M`;
/// `*_off[k]` couples nodes `k` and `k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOperators {
    pub mass_diag: Vec<f64>,
    pub mass_off: Vec<f64>,
    pub stiff_diag: Vec<f64>,
    pub stiff_off: Vec<f64>,
}

pub fn assemble_layer_operators(interval: &GradedInterval, alpha: f64) -> Result<LayerOperators> {
    let y = interval.nodes();
    let m = interval.layers();
    let mut ops = LayerOperators {
        mass_diag: vec![0.0; m + 1],
        mass_off: vec![0.0; m],
        stiff_diag: vec![0.0; m + 1],
        stiff_off: vec![0.0; m],
    };
    for k in 0..m {
        let (mass, stiff) = interval_matrices(y[k], y[k + 1], alpha)?;
        ops.mass_diag[k] += mass[0][0];
        ops.mass_diag[k + 1] += mass[1][1];
        ops.mass_off[k] = mass[0][1];
        ops.stiff_diag[k] += stiff[0][0];
        ops.stiff_diag[k + 1] += stiff[1][1];
        ops.stiff_off[k] = stiff[0][1];
    }
    Ok(ops)
}

/// Node ids and the dense local matrix of cell `E_e x I_k`. Local node
/// `j * (dim+1) + i` is base vertex `i` of the element on layer `k + j`.
pub fn local_matrix(
    mesh: &CylinderMesh,
    e: usize,
    k: usize,
    fp: &FractionalParams,
    data: &ProblemData,
    mass: MassTreatment,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let (px, qx) = element_factors(&mesh.base, data, e, mass);
    let px: Vec<f64> = px.iter().map(|p| p / fp.d_s).collect();
    let qx: Vec<f64> = qx.iter().map(|m| m / fp.d_s).collect();
    tensor_local(mesh, e, k, fp.alpha, &px, &qx)
}

fn tensor_local(
    mesh: &CylinderMesh,
    e: usize,
    k: usize,
    alpha: f64,
    px: &[f64],
    qx: &[f64],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let y = mesh.interval.nodes();
    let (my, sy) = interval_matrices(y[k], y[k + 1], alpha)?;
    let el = mesh.base.element(e);
    let nb = el.len();
    let nl = 2 * nb;
    let mut nodes = Vec::with_capacity(nl);
    for j in 0..2 {
        for &v in el {
            nodes.push(mesh.node(v, k + j));
        }
    }
    let mut local = vec![0.0; nl * nl];
    for ja in 0..2 {
        for ia in 0..nb {
            for jb in 0..2 {
                for ib in 0..nb {
                    local[(ja * nb + ia) * nl + jb * nb + ib] =
                        px[ia * nb + ib] * my[ja][jb] + qx[ia * nb + ib] * sy[ja][jb];
                }
            }
        }
    }
    Ok((nodes, local))
}

fn assemble_tensor(
    mesh: &CylinderMesh,
    alpha: f64,
    factors: impl Fn(usize) -> (Vec<f64>, Vec<f64>),
) -> Result<SparseOperator> {
    let mut triplets = Vec::new();
    let ne = mesh.base.num_elements();
    let per_element: Vec<(Vec<f64>, Vec<f64>)> = (0..ne).map(factors).collect();
    for (e, k) in mesh.cells() {
        let (px, qx) = &per_element[e];
        let (nodes, local) = tensor_local(mesh, e, k, alpha, px, qx)?;
        let nl = nodes.len();
        for a in 0..nl {
            let Some(ra) = mesh.free_index(nodes[a]) else {
                continue;
            };
            for b in 0..nl {
                if let Some(rb) = mesh.free_index(nodes[b]) {
                    triplets.push((ra, rb, local[a * nl + b]));
                }
            }
        }
    }
    Ok(SparseOperator::from_triplets(mesh.num_free(), triplets))
}

/// Matrix of `a(., .)` on the free nodes (Dirichlet rows and columns removed).
pub fn assemble_extension_operator(
    mesh: &CylinderMesh,
    fp: &FractionalParams,
    data: &ProblemData,
    mass: MassTreatment,
) -> Result<SparseOperator> {
    data.validate(&mesh.base)?;
    assemble_tensor(mesh, fp.alpha, |e| {
        let (px, qx) = element_factors(&mesh.base, data, e, mass);
        (
            px.iter().map(|p| p / fp.d_s).collect(),
            qx.iter().map(|m| m / fp.d_s).collect(),
        )
    })
}

/// `int_Omega f phi_i` with `f` interpolated linearly, for every base vertex.
pub fn assemble_trace_load(base: &BaseMesh, f: &[f64]) -> Vec<f64> {
    let data = ProblemData::new(base, vec![0.0; base.num_vertices()]);
    assemble_base_operators(base, &data, MassTreatment::Consistent)
        .mass
        .mul_vec(f)
}

/// Row sums of the base mass matrix.
pub fn assemble_trace_lumped_mass(base: &BaseMesh) -> Vec<f64> {
    let mut lumped = vec![0.0; base.num_vertices()];
    for e in 0..base.num_elements() {
        let share = base.measure(e) / (base.dim() + 1) as f64;
        for &v in base.element(e) {
            lumped[v] += share;
        }
    }
    lumped
}

/// Right-hand side on the free nodes: trace load on free trace nodes, zero
/// elsewhere.
pub fn free_load(mesh: &CylinderMesh, trace_load: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_free()];
    for &node in mesh.free_trace_nodes() {
        b[mesh.free_index(node).unwrap()] = trace_load[node];
    }
    b
}

/// Discrete weighted norm `sqrt(u^T (K + M) u)` with the y^alpha-weighted
/// stiffness and mass, identity diffusion, no reaction and no `1/d_s`.
#[derive(Debug, Clone)]
pub struct WeightedH1 {
    gram: SparseOperator,
}

impl WeightedH1 {
    pub fn new(mesh: &CylinderMesh, alpha: f64) -> Result<Self> {
        let identity = [[1.0, 0.0], [0.0, 1.0]];
        let gram = assemble_tensor(mesh, alpha, |e| {
            let (sx, mx) = simplex_matrices(&mesh.base, e, &identity);
            let px = sx.iter().zip(&mx).map(|(s, m)| s + m).collect();
            (px, mx)
        })?;
        Ok(WeightedH1 { gram })
    }

    pub fn gram(&self) -> &SparseOperator {
        &self.gram
    }

    /// Norm of a field given on the free nodes.
    pub fn norm_free(&self, u: &[f64]) -> f64 {
        self.gram.quad_form(u).max(0.0).sqrt()
    }
}

/// Weighted H1 norm of a full cylinder field (fixed entries are ignored).
pub fn weighted_h1_norm(mesh: &CylinderMesh, fp: &FractionalParams, u: &[f64]) -> Result<f64> {
    if u.len() != mesh.num_nodes() {
        return Err(Error::Mismatch {
            expected: mesh.num_nodes(),
            found: u.len(),
        });
    }
    Ok(WeightedH1::new(mesh, fp.alpha)?.norm_free(&mesh.restrict(u)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pcg_solve, PcgConfig};
    use crate::mesh::{build_base_mesh, build_cylinder, build_graded_interval};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn cylinder(dim: usize, m: usize, layers: usize, s: f64) -> CylinderMesh {
        let gamma = 3.0 / (2.0 * s) + 0.1;
        build_cylinder(
            build_base_mesh(dim, m).unwrap(),
            build_graded_interval(layers, gamma, 1.5, s).unwrap(),
        )
    }

    #[test]
    fn ds_values() {
        assert_eq!(normalization_ds(0.5).unwrap(), 1.0);
        // 50-digit reference values
        assert_relative_eq!(
            normalization_ds(0.25).unwrap(),
            0.477_988_797_486_125,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            normalization_ds(0.75).unwrap(),
            2.092_099_240_106_203,
            max_relative = 1e-12
        );
        assert!(normalization_ds(1.0).is_err());
        let p = FractionalParams::new(0.3).unwrap();
        assert_eq!(p.alpha, 1.0 - 2.0 * 0.3);
    }

    #[test]
    fn weighted_moments() {
        let h: f64 = 0.37;
        let alpha = -0.4;
        assert_relative_eq!(
            weighted_y_integral(0.0, h, alpha, &[1.0]).unwrap(),
            h.powf(alpha + 1.0) / (alpha + 1.0),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            weighted_y_integral(0.0, 1.0, 0.0, &[0.0, 1.0]).unwrap(),
            0.5
        );
        assert_relative_eq!(
            weighted_y_integral(0.25, 1.0, -0.5, &[1.0]).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!(matches!(
            weighted_y_integral(-0.1, 1.0, 0.0, &[1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unit_square_cell_is_q1_laplacian() {
        let mesh = build_cylinder(
            build_base_mesh(1, 1).unwrap(),
            build_graded_interval(1, 3.5, 1.0, 0.5).unwrap(),
        );
        let fp = FractionalParams::new(0.5).unwrap();
        let data = ProblemData::new(&mesh.base, vec![0.0; 2]);
        let (_, local) = local_matrix(&mesh, 0, 0, &fp, &data, MassTreatment::Consistent).unwrap();
        // Q1 stiffness on the unit square: 2/3 diagonal, -1/6 edge, -1/3 opposite
        let expect = [
            [2.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0],
            [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0],
            [-1.0 / 6.0, -1.0 / 3.0, 2.0 / 3.0, -1.0 / 6.0],
            [-1.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, 2.0 / 3.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(local[i * 4 + j], expect[i][j], epsilon = 1e-14);
            }
        }
        // constants are in the kernel
        for i in 0..4 {
            let row: f64 = local[i * 4..i * 4 + 4].iter().sum();
            assert!(row.abs() < 1e-14);
        }
    }

    #[test]
    fn constants_in_kernel_for_2d_cells() {
        let mesh = cylinder(2, 2, 3, 0.3);
        let fp = FractionalParams::new(0.3).unwrap();
        let data = ProblemData::new(&mesh.base, vec![0.0; 9]);
        for ((e, k), mass) in mesh.cells().zip(
            [MassTreatment::Lumped, MassTreatment::Consistent]
                .iter()
                .cycle(),
        ) {
            let (nodes, local) = local_matrix(&mesh, e, k, &fp, &data, *mass).unwrap();
            let nl = nodes.len();
            let q: f64 = local.iter().sum();
            assert!(
                q.abs() < 1e-12 * local[0].abs().max(1.0),
                "cell ({e},{k}) {q}"
            );
            assert_eq!(nl, 6);
        }
    }

    #[test]
    fn operator_is_symmetric_positive_definite() {
        for (dim, s) in [(1, 0.3), (2, 0.5), (2, 0.8)] {
            let mesh = cylinder(dim, 5, 6, s);
            let fp = FractionalParams::new(s).unwrap();
            let data = ProblemData::new(&mesh.base, vec![1.0; mesh.base.num_vertices()]);
            let k =
                assemble_extension_operator(&mesh, &fp, &data, MassTreatment::default()).unwrap();
            assert!(k.symmetry_defect() < 1e-12);
            let mut rng = rand::rngs::StdRng::seed_from_u64(dim as u64);
            for _ in 0..5 {
                let u: Vec<f64> = (0..k.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!(k.quad_form(&u) > 0.0);
            }
            let b: Vec<f64> = (0..k.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(pcg_solve(&k, &b, &PcgConfig::default()).is_ok());
        }
    }

    #[test]
    fn operator_matches_kronecker_structure() {
        let mesh = cylinder(2, 4, 5, 0.4);
        let fp = FractionalParams::new(0.4).unwrap();
        let mut data = ProblemData::new(&mesh.base, vec![0.0; mesh.base.num_vertices()]);
        for (e, c) in data.reaction.iter_mut().enumerate() {
            *c = 0.1 * (e % 3) as f64;
        }
        for mass in [MassTreatment::Lumped, MassTreatment::Consistent] {
            let k = assemble_extension_operator(&mesh, &fp, &data, mass).unwrap();
            let base = assemble_base_operators(&mesh.base, &data, mass);
            if mass == MassTreatment::Lumped {
                assert_eq!(base.mass.get(0, 1), 0.0);
            }
            let layer = assemble_layer_operators(&mesh.interval, fp.alpha).unwrap();
            let tri = |d: &[f64], o: &[f64], a: usize, b: usize| -> f64 {
                if a == b {
                    d[a]
                } else if a + 1 == b {
                    o[a]
                } else if b + 1 == a {
                    o[b]
                } else {
                    0.0
                }
            };
            for (i, &ni) in mesh.free_nodes().iter().enumerate() {
                for (j, &nj) in mesh.free_nodes().iter().enumerate() {
                    let (bi, li) = mesh.split(ni);
                    let (bj, lj) = mesh.split(nj);
                    let expect = (base.stiffness.get(bi, bj)
                        * tri(&layer.mass_diag, &layer.mass_off, li, lj)
                        + base.mass.get(bi, bj) * tri(&layer.stiff_diag, &layer.stiff_off, li, lj))
                        / fp.d_s;
                    let got = k.get(i, j);
                    assert!(
                        (got - expect).abs() <= 1e-12 * expect.abs().max(1e-300) + 1e-300,
                        "({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn trace_load_and_lumped_mass() {
        let b1 = build_base_mesh(1, 4).unwrap();
        let load = assemble_trace_load(&b1, &[1.0; 5]);
        for v in 1..4 {
            assert_relative_eq!(load[v], 0.25, epsilon = 1e-15);
        }
        assert_eq!(assemble_trace_load(&b1, &[0.0; 5]), vec![0.0; 5]);
        let lumped = assemble_trace_lumped_mass(&b1);
        assert_relative_eq!(lumped[2], 0.25, epsilon = 1e-15);

        let b2 = build_base_mesh(2, 2).unwrap();
        let load = assemble_trace_load(&b2, &[1.0; 9]);
        assert_relative_eq!(load[4], 0.25, epsilon = 1e-15);
        let lumped = assemble_trace_lumped_mass(&b2);
        assert_relative_eq!(lumped[4], 0.25, epsilon = 1e-15);
        assert_relative_eq!(lumped.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(lumped.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn weighted_norm_properties() {
        let mesh = cylinder(2, 3, 4, 0.6);
        let fp = FractionalParams::new(0.6).unwrap();
        let zero = vec![0.0; mesh.num_nodes()];
        assert_eq!(weighted_h1_norm(&mesh, &fp, &zero).unwrap(), 0.0);
        let u: Vec<f64> = (0..mesh.num_nodes())
            .map(|n| {
                if mesh.dirichlet_mask()[n] {
                    0.0
                } else {
                    (n as f64).sin()
                }
            })
            .collect();
        let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        assert_relative_eq!(
            weighted_h1_norm(&mesh, &fp, &u2).unwrap(),
            2.0 * weighted_h1_norm(&mesh, &fp, &u).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn weighted_norm_single_free_node() {
        // base (0,1) with m = 2: one interior vertex at x = 1/2; one layer
        let s = 0.3;
        let fp = FractionalParams::new(s).unwrap();
        let mesh = build_cylinder(
            build_base_mesh(1, 2).unwrap(),
            build_graded_interval(1, 5.1, 2.0, s).unwrap(),
        );
        assert_eq!(mesh.num_free(), 1);
        let mut u = vec![0.0; mesh.num_nodes()];
        u[1] = 1.0;
        // x factors for the hat at 1/2: stiffness 2/h = 4, mass 2h/3 = 1/3
        let a = fp.alpha;
        let tau: f64 = 2.0;
        let i0 = tau.powf(a + 1.0) / (a + 1.0);
        let i1 = tau.powf(a + 2.0) / (a + 2.0);
        let i2 = tau.powf(a + 3.0) / (a + 3.0);
        // phi_lo = 1 - y/tau
        let my = i0 - 2.0 * i1 / tau + i2 / (tau * tau);
        let sy = i0 / (tau * tau);
        let expect = ((4.0 + 1.0 / 3.0) * my + (1.0 / 3.0) * sy).sqrt();
        assert_relative_eq!(
            weighted_h1_norm(&mesh, &fp, &u).unwrap(),
            expect,
            max_relative = 1e-13
        );
    }
}
