//! Structured base triangulations of the unit cube, graded meshes of the
//! extended direction and their tensor-product cylinder meshes.
//!
//! Cylinder nodes are numbered layer-major: the node over base vertex `b` in
//! layer `l` has id `l * n_base + b`. Layer 0 is the trace `y = 0`; the last
//! layer is the top lid `y = tau`, which carries a homogeneous Dirichlet value
//! together with the lateral boundary.

use crate::error::{param, Error, Result};

/// Conforming structured simplicial mesh of `(0,1)^n`, `n` in {1, 2}.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMesh {
    dim: usize,
    vertices: Vec<[f64; 2]>,
    /// Flat connectivity, `dim + 1` vertex ids per element.
    connectivity: Vec<usize>,
    boundary: Vec<bool>,
    cells_per_axis: usize,
}

impl BaseMesh {
    /// Uniform lattice with `m` cells per axis. In 2D every lattice cell is
    /// split along its lower-left to upper-right diagonal.
    pub fn structured(dim: usize, m: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(param("n", format!("dimension must be 1 or 2, got {dim}")));
        }
        if m == 0 {
            return Err(param("m", "at least one cell per axis is required"));
        }
        let coord = |i: usize| i as f64 / m as f64;
        let mut vertices = Vec::new();
        let mut boundary = Vec::new();
        let mut connectivity = Vec::new();
        if dim == 1 {
            for i in 0..=m {
                vertices.push([coord(i), 0.0]);
                boundary.push(i == 0 || i == m);
            }
            for i in 0..m {
                connectivity.extend_from_slice(&[i, i + 1]);
            }
        } else {
            let stride = m + 1;
            for j in 0..=m {
                for i in 0..=m {
                    vertices.push([coord(i), coord(j)]);
                    boundary.push(i == 0 || i == m || j == 0 || j == m);
                }
            }
            for j in 0..m {
                for i in 0..m {
                    let v00 = j * stride + i;
                    let v10 = v00 + 1;
                    let v01 = v00 + stride;
                    let v11 = v01 + 1;
                    connectivity.extend_from_slice(&[v00, v10, v11]);
                    connectivity.extend_from_slice(&[v00, v11, v01]);
                }
            }
        }
        Ok(BaseMesh {
            dim,
            vertices,
            connectivity,
            boundary,
            cells_per_axis: m,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.connectivity.len() / (self.dim + 1)
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.connectivity[e * k..(e + 1) * k]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.connectivity.chunks_exact(self.dim + 1)
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn num_interior(&self) -> usize {
        self.boundary.iter().filter(|b| !**b).count()
    }

    /// Cells per axis of the underlying lattice.
    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    /// Lattice nodes per axis, one entry per dimension.
    pub fn structured_shape(&self) -> Vec<usize> {
        vec![self.cells_per_axis + 1; self.dim]
    }

    /// Length (1D) or area (2D) of element `e`; positive for every element
    /// produced by the builders.
    pub fn measure(&self, e: usize) -> f64 {
        let el = self.element(e);
        if self.dim == 1 {
            self.vertices[el[1]][0] - self.vertices[el[0]][0]
        } else {
            let [a, b, c] = [
                self.vertices[el[0]],
                self.vertices[el[1]],
                self.vertices[el[2]],
            ];
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
    }
}

/// `3 / (2s)`, the lower bound on the grading exponent.
pub fn gamma_floor(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(param(
            "s",
            format!("fractional order must lie in (0,1), got {s}"),
        ));
    }
    Ok(3.0 / (2.0 * s))
}

/// Grading exponent used when none is configured: `3/(2s) + 0.1`.
pub fn default_gamma(s: f64) -> Result<f64> {
    Ok(gamma_floor(s)? + 0.1)
}

/// Partition `0 = y_0 < ... < y_M = tau` of the extended direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedInterval {
    pub gamma: f64,
    pub tau: f64,
    nodes: Vec<f64>,
    graded_layers: usize,
}

impl GradedInterval {
    /// Graded nodes `y_k = (k/M)^gamma * tau`.
    pub fn graded(layers: usize, gamma: f64, tau: f64, s: f64) -> Result<Self> {
        if layers == 0 {
            return Err(param("M", "at least one layer is required"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(param(
                "tau",
                format!("truncation height must be positive, got {tau}"),
            ));
        }
        let floor = gamma_floor(s)?;
        if !(gamma > floor) {
            return Err(Error::Grading { gamma, floor });
        }
        let nodes = (0..=layers)
            .map(|k| (k as f64 / layers as f64).powf(gamma) * tau)
            .collect();
        Ok(GradedInterval {
            gamma,
            tau,
            nodes,
            graded_layers: layers,
        })
    }

    /// Appends uniform layers of width `1/layers_per_unit` above `self.tau`
    /// up to `tau`. Node `tau_0 + j/L` is evaluated identically for every
    /// target height, so extensions of one graded interval are nested.
    pub fn with_uniform_tail(&self, tau: f64, layers_per_unit: usize) -> Result<Self> {
        if layers_per_unit == 0 {
            return Err(param("layers_per_unit", "must be positive"));
        }
        if tau < self.tau {
            return Err(param(
                "tau",
                format!("{tau} is below the graded height {}", self.tau),
            ));
        }
        let per = layers_per_unit as f64;
        let extra = ((tau - self.tau) * per).round() as usize;
        if ((self.tau + extra as f64 / per) - tau).abs() > 1e-12 * tau.max(1.0) {
            return Err(param(
                "tau",
                format!("{tau} is not reachable with layers of width 1/{layers_per_unit}"),
            ));
        }
        let mut nodes = self.nodes[..=self.graded_layers].to_vec();
        for j in 1..=extra {
            nodes.push(self.tau + j as f64 / per);
        }
        Ok(GradedInterval {
            gamma: self.gamma,
            tau: *nodes.last().unwrap(),
            nodes,
            graded_layers: self.graded_layers,
        })
    }

    pub fn layers(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// Tensor product of a base mesh with an interval mesh.
#[derive(Debug, Clone)]
pub struct CylinderMesh {
    pub base: BaseMesh,
    pub interval: GradedInterval,
    dirichlet: Vec<bool>,
    /// Position of each node among the free nodes, if free.
    free_index: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
}

impl CylinderMesh {
    pub fn new(base: BaseMesh, interval: GradedInterval) -> Self {
        let nb = base.num_vertices();
        let layers = interval.layers();
        let mut dirichlet = Vec::with_capacity(nb * (layers + 1));
        for l in 0..=layers {
            for b in 0..nb {
                dirichlet.push(base.is_boundary(b) || l == layers);
            }
        }
        let mut free_index = vec![None; dirichlet.len()];
        let mut free_nodes = Vec::new();
        for (node, fixed) in dirichlet.iter().enumerate() {
            if !fixed {
                free_index[node] = Some(free_nodes.len());
                free_nodes.push(node);
            }
        }
        CylinderMesh {
            base,
            interval,
            dirichlet,
            free_index,
            free_nodes,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn num_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn layers(&self) -> usize {
        self.interval.layers()
    }

    pub fn node(&self, base_vertex: usize, layer: usize) -> usize {
        layer * self.base.num_vertices() + base_vertex
    }

    /// `(base vertex, layer)` of a node id.
    pub fn split(&self, node: usize) -> (usize, usize) {
        let nb = self.base.num_vertices();
        (node % nb, node / nb)
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    /// Node ids of layer 0.
    pub fn trace_nodes(&self) -> std::ops::Range<usize> {
        0..self.base.num_vertices()
    }

    /// Free trace nodes in increasing order; with layer-major numbering they
    /// are also the first entries of the free numbering.
    pub fn free_trace_nodes(&self) -> &[usize] {
        &self.free_nodes[..self.base.num_interior()]
    }

    /// Tensor cells `E x I_k` as `(base element, layer)` pairs.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ne = self.base.num_elements();
        (0..self.layers()).flat_map(move |k| (0..ne).map(move |e| (e, k)))
    }

    /// Gather free-node values into a full nodal vector, zero on fixed nodes.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (i, &node) in self.free_nodes.iter().enumerate() {
            full[node] = free[i];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_nodes.iter().map(|&n| full[n]).collect()
    }

    /// Layer-0 values of a cylinder field.
    pub fn trace(&self, field: &[f64]) -> Vec<f64> {
        field[..self.base.num_vertices()].to_vec()
    }
}

pub fn build_base_mesh(dim: usize, m: usize) -> Result<BaseMesh> {
    BaseMesh::structured(dim, m)
}

pub fn build_graded_interval(
    layers: usize,
    gamma: f64,
    tau: f64,
    s: f64,
) -> Result<GradedInterval> {
    GradedInterval::graded(layers, gamma, tau, s)
}

pub fn build_cylinder(base: BaseMesh, interval: GradedInterval) -> CylinderMesh {
    CylinderMesh::new(base, interval)
}
