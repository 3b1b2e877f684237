//! Run orchestration for each subcommand.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fqvi::mesh::{build_base_mesh, build_cylinder, build_graded_interval};
use fqvi::oracle::{
    compare_trace, psor_vi_solve, spectral_linear_solve, DenseFractionalOperator, SpectralBasis,
    SpectralSource,
};
use fqvi::qvi::{solve_qvi_observed, truncation_study};
use fqvi::ssn::{ssn_solve, StopReason};
use fqvi::{
    vtk, BaseMesh, CylinderMesh, ExtensionSystem, FractionalParams, GradedInterval,
    ObstacleMapSpec, ProblemData, QVIResult,
};

use crate::config::{Mode, RunConfig, Source};
use crate::output::{num, write_text, Csv};
use crate::CliError;

/// Headline numbers of a QVI run, used by the s-sweep summary.
#[derive(Debug, Clone, Copy)]
pub struct QviSummary {
    pub outer_iters: usize,
    pub converged: bool,
    pub active_count: usize,
    pub trace_max: f64,
}

/// Runs one configuration. A QVI run that stops at `n_max` still writes
/// all outputs and returns its summary with `converged = false`.
pub fn run(cfg: &RunConfig) -> Result<Option<QviSummary>, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| {
        CliError::Config(format!(
            "cannot create output directory {}: {e}",
            cfg.out.display()
        ))
    })?;
    let hash = cfg.hash();
    write_text(&cfg.out.join("run_metadata"), &hash, &metadata(cfg))?;
    match cfg.mode {
        Mode::Linear => linear(cfg, &hash).map(|_| None),
        Mode::Vi => vi(cfg, &hash).map(|_| None),
        Mode::Qvi => qvi(cfg, &hash).map(Some),
        Mode::Oracle => oracle(cfg, &hash).map(|_| None),
        Mode::Truncation => truncation(cfg, &hash).map(|_| None),
        Mode::PaperExample => unreachable!("the sweep is expanded into qvi runs"),
    }
}

fn metadata(cfg: &RunConfig) -> String {
    let mut out = cfg.render();
    let elements = if cfg.n_dim == 1 {
        cfg.m
    } else {
        2 * cfg.m * cfg.m
    };
    let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "base_elements={elements}");
    let _ = writeln!(out, "base_vertices={}", (cfg.m + 1).pow(cfg.n_dim as u32));
    out.push_str(
        "norm=|u|_H^2 = u^T (S_w + M_w) u, S_w and M_w the y^(1-2s)-weighted stiffness \
         and mass on the cylinder (identity diffusion, no reaction, no 1/d_s)\n",
    );
    out.push_str("rel_change=|u_n - u_(n-1)|_H / |u_n|_H, zero when both vanish\n");
    out.push_str("log_base=natural (default tau = 1 + ln(base_elements)/3)\n");
    let _ = writeln!(
        out,
        "mass_treatment={} ({})",
        cfg.mass.name(),
        match cfg.mass {
            fqvi::MassTreatment::Lumped => "row-sum lumped base mass in the extension operator",
            fqvi::MassTreatment::Consistent => "consistent base mass in the extension operator",
        }
    );
    if cfg.mode == Mode::Truncation {
        out.push_str(
            "truncation_mesh=graded layers on [0,1], then uniform layers of width \
             1/tail_per_unit up to each tau\n",
        );
    }
    out
}

fn nodal_source(cfg: &RunConfig, base: &BaseMesh) -> Vec<f64> {
    let two_d = cfg.n_dim == 2;
    match &cfg.f {
        Source::Bump => base
            .vertices()
            .iter()
            .map(|x| {
                let b = x[0] * (1.0 - x[0]);
                if two_d {
                    b * x[1] * (1.0 - x[1])
                } else {
                    b
                }
            })
            .collect(),
        Source::One => vec![1.0; base.num_vertices()],
        Source::Eigenfunction(k, l) => {
            let basis = SpectralBasis::new(cfg.n_dim, (*k).max(*l)).expect("validated");
            base.vertices()
                .iter()
                .map(|&x| basis.eval(*k, *l, x))
                .collect()
        }
        Source::File { values, .. } => values.clone(),
    }
}

fn spectral_source(f: &Source) -> Option<SpectralSource<'static>> {
    match *f {
        Source::Bump => Some(SpectralSource::Bump),
        Source::One => Some(SpectralSource::One),
        Source::Eigenfunction(k, l) => Some(SpectralSource::Eigenfunction(k, l)),
        Source::File { .. } => None,
    }
}

struct Setup {
    base: BaseMesh,
    data: ProblemData,
    fp: FractionalParams,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let base = build_base_mesh(cfg.n_dim, cfg.m)?;
    let data = ProblemData::new(&base, nodal_source(cfg, &base));
    Ok(Setup {
        base,
        data,
        fp: FractionalParams::new(cfg.s)?,
    })
}

fn system(cfg: &RunConfig, st: &Setup, mesh: CylinderMesh) -> Result<ExtensionSystem, CliError> {
    Ok(ExtensionSystem::with_mass(
        mesh,
        st.fp,
        &st.data,
        cfg.backend,
        cfg.mass,
    )?)
}

fn cylinder(cfg: &RunConfig, st: &Setup) -> Result<ExtensionSystem, CliError> {
    let interval = build_graded_interval(cfg.layers, cfg.gamma, cfg.tau[0], cfg.s)?;
    system(cfg, st, build_cylinder(st.base.clone(), interval))
}

fn coord_columns(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec!["x1"]
    } else {
        vec!["x1", "x2"]
    }
}

fn write_trace(
    out: &Path,
    hash: &str,
    base: &BaseMesh,
    u: &[f64],
    constraint: Option<(&[f64], &[bool])>,
) -> Result<(), CliError> {
    let mut cols = coord_columns(base.dim());
    cols.push("u");
    if constraint.is_some() {
        cols.extend(["psi", "active"]);
    }
    let mut csv = Csv::create(&out.join("trace.csv"), hash, &cols)?;
    for (v, x) in base.vertices().iter().enumerate() {
        let mut row: Vec<String> = x[..base.dim()].iter().map(|c| num(*c)).collect();
        row.push(num(u[v]));
        if let Some((psi, active)) = constraint {
            row.push(num(psi[v]));
            row.push(u8::from(active[v]).to_string());
        }
        csv.row(&row)?;
    }
    Ok(())
}

fn write_field(out: &Path, hash: &str, sys: &ExtensionSystem, u: &[f64]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(out.join("field.vtk"))?);
    vtk::write_cylinder(
        &mut w,
        &format!("fqvi config_hash={hash}"),
        &sys.mesh,
        &[("u", u)],
    )?;
    Ok(())
}

fn write_comparison(out: &Path, hash: &str, l2: f64, linf: f64) -> Result<(), CliError> {
    let mut csv = Csv::create(&out.join("oracle.csv"), hash, &["rel_L2", "rel_Linf"])?;
    csv.row(&[num(l2), num(linf)])?;
    println!("oracle: rel_L2 = {l2:.6e}, rel_Linf = {linf:.6e}");
    Ok(())
}

fn constant_psi(cfg: &RunConfig, base: &BaseMesh) -> Option<Vec<f64>> {
    match cfg.obstacle {
        Some(ObstacleMapSpec::Constant { value }) => Some(vec![value; base.num_vertices()]),
        _ => None,
    }
}

struct Psor {
    u: Vec<f64>,
    active: Vec<bool>,
}

fn psor(cfg: &RunConfig, st: &Setup, psi: &[f64]) -> Result<Psor, CliError> {
    let op = DenseFractionalOperator::new(cfg.n_dim, cfg.m, cfg.s)?;
    let out = psor_vi_solve(
        &op.matrix,
        &op.to_interior(st.data.load.as_slice()),
        &op.to_interior(psi),
        cfg.psor_tol,
        cfg.psor_max_sweeps,
    )?;
    println!(
        "psor: {} sweeps, kkt residuals {:.2e} {:.2e} {:.2e}",
        out.sweeps, out.feasibility, out.sign, out.complementarity
    );
    let mu = op.from_interior(&out.mu);
    Ok(Psor {
        u: op.from_interior(&out.u),
        active: mu.iter().map(|m| *m > 0.0).collect(),
    })
}

fn linear(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let sys = cylinder(cfg, &st)?;
    let u = sys.unconstrained()?;
    let trace = sys.mesh.trace(&u);
    write_trace(&cfg.out, hash, &st.base, &trace, None)?;
    write_field(&cfg.out, hash, &sys, &u)?;
    println!(
        "linear: max trace {:.6e}",
        trace.iter().fold(0.0f64, |m, v| m.max(*v))
    );
    if cfg.oracle {
        let source = spectral_source(&cfg.f).expect("validated");
        let exact = spectral_linear_solve(
            source,
            cfg.s,
            cfg.n_dim,
            cfg.oracle_k_max,
            st.base.vertices(),
        )?;
        let (l2, linf) = compare_trace(&st.base, &trace, &exact)?;
        write_comparison(&cfg.out, hash, l2, linf)?;
    }
    Ok(())
}

fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::ActiveSetRepeated => "active_set_repeated",
        StopReason::Ratio => "ratio",
        StopReason::MaxIter => "max_iter",
    }
}

fn vi(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let psi = constant_psi(cfg, &st.base).expect("validated");
    let sys = cylinder(cfg, &st)?;
    let sol = ssn_solve(&sys, &psi, &vec![0.0; sys.mesh.num_nodes()], &cfg.qvi.ssn)?;
    let mut levels = Csv::create(
        &cfg.out.join("ssn_levels.csv"),
        hash,
        &[
            "level",
            "theta",
            "newton_iters",
            "active_count",
            "step_norm",
            "stop",
        ],
    )?;
    for (i, l) in sol.levels.iter().enumerate() {
        levels.row(&[
            (i + 1).to_string(),
            num(l.theta),
            l.iters.to_string(),
            l.active_count.to_string(),
            num(l.step_norm),
            stop_name(l.stop).into(),
        ])?;
    }
    let trace = sys.mesh.trace(&sol.u);
    write_trace(
        &cfg.out,
        hash,
        &st.base,
        &trace,
        Some((&psi, sol.active.flags())),
    )?;
    write_field(&cfg.out, hash, &sys, &sol.u)?;
    println!(
        "vi: {} Newton steps over {} levels, {} active vertices",
        sol.newton_iters,
        sol.levels.len(),
        sol.active.count()
    );
    if cfg.oracle {
        let reference = psor(cfg, &st, &psi)?;
        let (l2, linf) = compare_trace(&st.base, &trace, &reference.u)?;
        write_comparison(&cfg.out, hash, l2, linf)?;
        let differ = reference
            .active
            .iter()
            .zip(sol.active.flags())
            .filter(|(a, b)| a != b)
            .count();
        println!("oracle: active sets differ on {differ} vertices");
    }
    Ok(())
}

pub fn qvi(cfg: &RunConfig, hash: &str) -> Result<QviSummary, CliError> {
    let st = setup(cfg)?;
    let spec = cfg.obstacle.expect("validated");
    let sys = cylinder(cfg, &st)?;
    let mut log = Csv::create(
        &cfg.out.join("iterations.csv"),
        hash,
        &["n", "rel_change", "ssn_total_iters", "active_count"],
    )?;
    let mut io_error = None;
    let res: QVIResult = solve_qvi_observed(&sys, &spec, &cfg.qvi, |step| {
        if io_error.is_none() {
            io_error = log
                .row(&[
                    step.n.to_string(),
                    num(step.rel_change),
                    step.ssn_iters.to_string(),
                    step.active_count.to_string(),
                ])
                .err();
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    write_trace(
        &cfg.out,
        hash,
        &st.base,
        &res.trace,
        Some((&res.psi_final, res.active.flags())),
    )?;
    write_field(&cfg.out, hash, &sys, &res.u)?;
    let summary = QviSummary {
        outer_iters: res.outer_iters,
        converged: res.converged,
        active_count: res.active.count(),
        trace_max: res.trace.iter().fold(0.0f64, |m, v| m.max(*v)),
    };
    println!(
        "qvi: {} outer iterations, {}, {} active vertices",
        summary.outer_iters,
        if summary.converged {
            "converged"
        } else {
            "not converged"
        },
        summary.active_count
    );
    Ok(summary)
}

fn oracle(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let st = setup(cfg)?;
    match constant_psi(cfg, &st.base) {
        Some(psi) => {
            let reference = psor(cfg, &st, &psi)?;
            write_trace(
                &cfg.out,
                hash,
                &st.base,
                &reference.u,
                Some((&psi, &reference.active)),
            )
        }
        None => {
            let source = spectral_source(&cfg.f).expect("validated");
            let u = spectral_linear_solve(
                source,
                cfg.s,
                cfg.n_dim,
                cfg.oracle_k_max,
                st.base.vertices(),
            )?;
            write_trace(&cfg.out, hash, &st.base, &u, None)
        }
    }
}

/// Vertex closest to `x`, ties broken by the lower index.
fn nearest_vertex(base: &BaseMesh, x: [f64; 2]) -> usize {
    let dist = |v: &[f64; 2]| (0..base.dim()).map(|i| (v[i] - x[i]).powi(2)).sum::<f64>();
    base.vertices()
        .iter()
        .enumerate()
        .min_by(|a, b| dist(a.1).total_cmp(&dist(b.1)))
        .map(|(i, _)| i)
        .expect("mesh has vertices")
}

fn truncation(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let st = setup(cfg)?;
    let spec = cfg.obstacle.expect("validated");
    let graded = GradedInterval::graded(cfg.layers, cfg.gamma, 1.0, cfg.s)?;
    let probes = [
        nearest_vertex(&st.base, [0.5, 0.5]),
        nearest_vertex(&st.base, [0.25, 0.25]),
    ];
    let rows = truncation_study(
        &spec,
        &cfg.tau,
        |tau| {
            let mesh = build_cylinder(
                st.base.clone(),
                graded.with_uniform_tail(tau, cfg.tail_per_unit)?,
            );
            ExtensionSystem::with_mass(mesh, st.fp, &st.data, cfg.backend, cfg.mass)
        },
        &probes,
        &cfg.qvi,
    )?;
    let mut csv = Csv::create(
        &cfg.out.join("truncation.csv"),
        hash,
        &[
            "tau",
            "trace_center",
            "trace_quarter",
            "h_norm",
            "outer_iters",
            "converged",
            "diff_prev",
        ],
    )?;
    for r in &rows {
        csv.row(&[
            num(r.tau),
            num(r.probes[0]),
            num(r.probes[1]),
            num(r.h_norm),
            r.outer_iters.to_string(),
            u8::from(r.converged).to_string(),
            r.diff_prev.map_or(String::new(), num),
        ])?;
    }
    let center: Vec<f64> = rows.iter().map(|r| r.probes[0]).collect();
    let monotone = center.windows(2).all(|w| w[1] >= w[0]);
    println!(
        "truncation: {} rows, center trace {}",
        rows.len(),
        if monotone {
            "nondecreasing in tau"
        } else {
            "not monotone in tau"
        }
    );
    Ok(())
}
