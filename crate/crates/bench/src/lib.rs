//! Fixtures shared by the benchmarks.

use fqvi::mesh::{build_base_mesh, build_cylinder, build_graded_interval, default_gamma};
use fqvi::qvi::default_tau;
use fqvi::{Backend, CylinderMesh, ExtensionSystem, FractionalParams, ProblemData};

pub fn bump_data(mesh: &CylinderMesh) -> ProblemData {
    ProblemData::from_fn(&mesh.base, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]))
}

/// Square base with `m` cells per axis and a graded cylinder of `layers`.
pub fn cylinder(m: usize, layers: usize, s: f64) -> CylinderMesh {
    let base = build_base_mesh(2, m).expect("valid size");
    let tau = default_tau(&base);
    let interval = build_graded_interval(layers, default_gamma(s).expect("valid s"), tau, s)
        .expect("valid interval");
    build_cylinder(base, interval)
}

pub fn system(m: usize, layers: usize, s: f64, backend: Backend) -> ExtensionSystem {
    let mesh = cylinder(m, layers, s);
    let data = bump_data(&mesh);
    ExtensionSystem::new(
        mesh,
        FractionalParams::new(s).expect("valid s"),
        &data,
        backend,
    )
    .expect("assembles")
}
