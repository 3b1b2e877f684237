//! Finite element solvers for fractional obstacle problems and
//! quasi-variational inequalities posed through the extension problem on a
//! truncated cylinder.

pub mod assembly;
pub mod condense;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod obstacle;
pub mod oracle;
pub mod quadrature;
pub mod qvi;
pub mod ssn;
pub mod system;
pub mod vtk;

pub use assembly::{FractionalParams, MassTreatment, ProblemData};
pub use error::{Error, Result};
pub use linalg::{PcgConfig, SparseOperator};
pub use mesh::{BaseMesh, CylinderMesh, GradedInterval};
pub use obstacle::ObstacleMapSpec;
pub use qvi::{OuterStep, QVIConfig, QVIResult, TauRule};
pub use ssn::{SsnConfig, VISolution};
pub use system::{Backend, ExtensionSystem};
