//! An assembled extension problem: operator, trace load, penalty carrier and
//! norm on one cylinder mesh, plus the linear solver used for Newton steps.

use crate::assembly::{
    assemble_extension_operator, assemble_trace_load, assemble_trace_lumped_mass, free_load,
    FractionalParams, MassTreatment, ProblemData, WeightedH1,
};
use crate::condense::TraceCondensation;
use crate::error::{Error, Result};
use crate::linalg::{pcg_solve_from, PcgConfig, SparseOperator};
use crate::mesh::CylinderMesh;

/// A Newton iterate: values on the free trace nodes and, for the PCG
/// backend, the full field. Condensed iterates are discrete harmonic
/// extensions of their trace and are only expanded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceIterate {
    pub trace: Vec<f64>,
    full: Option<Vec<f64>>,
}

/// How the penalized systems `K + theta D_A` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Backend {
    /// Exact elimination onto the trace (dense Cholesky per Newton step).
    #[default]
    Condensed,
    /// Jacobi-preconditioned CG on the full sparse system.
    Pcg(PcgConfig),
}

#[derive(Debug, Clone)]
pub struct ExtensionSystem {
    pub mesh: CylinderMesh,
    pub fp: FractionalParams,
    pub operator: SparseOperator,
    /// `int f phi_i` per base vertex.
    pub trace_load: Vec<f64>,
    /// Lumped trace mass per base vertex.
    pub lumped_mass: Vec<f64>,
    pub norm: WeightedH1,
    pub mass: MassTreatment,
    backend: Backend,
    condensation: Option<TraceCondensation>,
}

impl ExtensionSystem {
    /// Assembles with the default (lumped) base mass.
    pub fn new(
        mesh: CylinderMesh,
        fp: FractionalParams,
        data: &ProblemData,
        backend: Backend,
    ) -> Result<Self> {
        Self::with_mass(mesh, fp, data, backend, MassTreatment::default())
    }

    pub fn with_mass(
        mesh: CylinderMesh,
        fp: FractionalParams,
        data: &ProblemData,
        backend: Backend,
        mass: MassTreatment,
    ) -> Result<Self> {
        let operator = assemble_extension_operator(&mesh, &fp, data, mass)?;
        let trace_load = assemble_trace_load(&mesh.base, &data.load);
        let lumped_mass = assemble_trace_lumped_mass(&mesh.base);
        let norm = WeightedH1::new(&mesh, fp.alpha)?;
        let condensation = match backend {
            Backend::Condensed => Some(TraceCondensation::new(&mesh, &fp, data, mass)?),
            Backend::Pcg(cfg) => {
                cfg.validate()?;
                None
            }
        };
        Ok(ExtensionSystem {
            mesh,
            fp,
            operator,
            trace_load,
            lumped_mass,
            norm,
            mass,
            backend,
            condensation,
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn condensation(&self) -> Option<&TraceCondensation> {
        self.condensation.as_ref()
    }

    /// Base vertex ids of the free trace nodes.
    pub fn free_trace(&self) -> &[usize] {
        self.mesh.free_trace_nodes()
    }

    /// Weighted H1 norm of a full cylinder field.
    pub fn h_norm(&self, field: &[f64]) -> f64 {
        self.norm.norm_free(&self.mesh.restrict(field))
    }

    /// Weighted H1 distance between two full cylinder fields.
    pub fn h_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = self
            .mesh
            .free_nodes()
            .iter()
            .map(|&n| a[n] - b[n])
            .collect();
        self.norm.norm_free(&d)
    }

    /// Full-field solution of the penalized system
    /// `(K + diag(shift on trace)) u = b + trace_rhs`, where `shift` and
    /// `extra` are indexed like `free_trace()`. `warm` is a full field used
    /// as the PCG starting point.
    pub fn solve_penalized(
        &self,
        shift: &[f64],
        extra: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let trace = self.free_trace();
        let rhs_trace: Vec<f64> = trace
            .iter()
            .zip(extra)
            .map(|(&v, e)| self.trace_load[v] + e)
            .collect();
        match (&self.condensation, self.backend) {
            (Some(c), _) => {
                let t = c.solve_trace(shift, &rhs_trace)?;
                Ok(self.mesh.expand(&c.extend(&t)))
            }
            (None, Backend::Pcg(cfg)) => {
                let mut full_shift = vec![0.0; self.mesh.num_free()];
                let mut b = vec![0.0; self.mesh.num_free()];
                for (i, &v) in trace.iter().enumerate() {
                    let row = self.mesh.free_index(v).unwrap();
                    full_shift[row] = shift[i];
                    b[row] = rhs_trace[i];
                }
                let op = self.operator.with_diagonal_shift(&full_shift);
                let x0 = warm
                    .map(|w| self.mesh.restrict(w))
                    .unwrap_or_else(|| vec![0.0; b.len()]);
                let out = pcg_solve_from(&op, &b, x0, &cfg)?;
                Ok(self.mesh.expand(&out.x))
            }
            (None, Backend::Condensed) => {
                Err(Error::Numerical("missing trace condensation".into()))
            }
        }
    }

    /// Iterate view of a full field.
    pub fn iterate_from_field(&self, field: &[f64]) -> TraceIterate {
        let trace = self.free_trace().iter().map(|&v| field[v]).collect();
        let full = match self.backend {
            Backend::Condensed => None,
            Backend::Pcg(_) => Some(field.to_vec()),
        };
        TraceIterate { trace, full }
    }

    /// One penalized solve producing the next iterate.
    pub fn penalized_iterate(
        &self,
        shift: &[f64],
        extra: &[f64],
        warm: &TraceIterate,
    ) -> Result<TraceIterate> {
        match &self.condensation {
            Some(c) => {
                let rhs: Vec<f64> = self
                    .free_trace()
                    .iter()
                    .zip(extra)
                    .map(|(&v, e)| self.trace_load[v] + e)
                    .collect();
                Ok(TraceIterate {
                    trace: c.solve_trace(shift, &rhs)?,
                    full: None,
                })
            }
            None => {
                let field = self.solve_penalized(shift, extra, warm.full.as_deref())?;
                Ok(self.iterate_from_field(&field))
            }
        }
    }

    pub fn iterate_distance(&self, a: &TraceIterate, b: &TraceIterate) -> f64 {
        match (&self.condensation, &a.full, &b.full) {
            (_, Some(fa), Some(fb)) => self.h_distance(fa, fb),
            (Some(c), _, _) => {
                let d: Vec<f64> = a.trace.iter().zip(&b.trace).map(|(x, y)| x - y).collect();
                c.extension_norm(&d)
            }
            (None, _, _) => {
                let fa = self.iterate_field(a);
                let fb = self.iterate_field(b);
                self.h_distance(&fa, &fb)
            }
        }
    }

    /// Full cylinder field of an iterate.
    pub fn iterate_field(&self, it: &TraceIterate) -> Vec<f64> {
        if let Some(f) = &it.full {
            return f.clone();
        }
        match &self.condensation {
            Some(c) => self.mesh.expand(&c.extend(&it.trace)),
            None => {
                let mut field = vec![0.0; self.mesh.num_nodes()];
                for (&v, &t) in self.free_trace().iter().zip(&it.trace) {
                    field[v] = t;
                }
                field
            }
        }
    }

    /// Solution of the unconstrained problem `K u = b`.
    pub fn unconstrained(&self) -> Result<Vec<f64>> {
        let n = self.free_trace().len();
        match &self.condensation {
            Some(c) => {
                let b = free_load(&self.mesh, &self.trace_load);
                Ok(self.mesh.expand(&c.solve_full(&b)))
            }
            None => self.solve_penalized(&vec![0.0; n], &vec![0.0; n], None),
        }
    }
}
