//! Outer fixed-point iteration `u_{n+1} = S(Psi(tr u_n))` for the
//! quasi-variational inequality, and the truncation study in `tau`.

use crate::assembly::{FractionalParams, ProblemData};
use crate::error::{param, Error, Result};
use crate::mesh::{BaseMesh, CylinderMesh};
use crate::obstacle::{eval_obstacle, ObstacleMapSpec};
use crate::ssn::{ssn_solve, ActiveSet, SsnConfig};
use crate::system::{Backend, ExtensionSystem};

/// `1 + ln(#elements) / 3`.
pub fn default_tau(base: &BaseMesh) -> f64 {
    1.0 + (base.num_elements().max(1) as f64).ln() / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    Fixed(f64),
    Log,
}

impl TauRule {
    pub fn resolve(&self, base: &BaseMesh) -> Result<f64> {
        match *self {
            TauRule::Fixed(t) if t.is_finite() && t > 0.0 => Ok(t),
            TauRule::Fixed(_) => Err(param("tau", "must be finite and positive")),
            TauRule::Log => Ok(default_tau(base)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QVIConfig {
    pub eps1: f64,
    pub n_max: usize,
    pub tau_rule: TauRule,
    pub ssn: SsnConfig,
}

impl Default for QVIConfig {
    fn default() -> Self {
        QVIConfig {
            eps1: 5e-4,
            n_max: 150,
            tau_rule: TauRule::Log,
            ssn: SsnConfig::default(),
        }
    }
}

impl QVIConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0 && self.eps1 < 1.0) {
            return Err(param("eps1", "must lie in (0,1)"));
        }
        if self.n_max == 0 {
            return Err(param("n_max", "must be at least 1"));
        }
        if let TauRule::Fixed(t) = self.tau_rule {
            if !(t.is_finite() && t > 0.0) {
                return Err(param("tau", "must be finite and positive"));
            }
        }
        self.ssn.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterStep {
    pub n: usize,
    /// `|u_n - u_{n-1}|_H / |u_n|_H`, zero when both vanish.
    pub rel_change: f64,
    pub ssn_iters: usize,
    pub active_count: usize,
    /// `min_i (u_n - u_{n-1})_i` over all cylinder nodes.
    pub min_increment: f64,
    /// `max_i |u_n|_i`.
    pub u_max: f64,
}

#[derive(Debug, Clone)]
pub struct QVIResult {
    pub u: Vec<f64>,
    pub trace: Vec<f64>,
    /// Obstacle used in the final inner solve.
    pub psi_final: Vec<f64>,
    pub mu: Vec<f64>,
    pub active: ActiveSet,
    pub outer_iters: usize,
    pub history: Vec<OuterStep>,
    pub converged: bool,
}

pub fn solve_qvi(
    data: &ProblemData,
    spec: &ObstacleMapSpec,
    mesh: CylinderMesh,
    fp: FractionalParams,
    cfg: &QVIConfig,
) -> Result<QVIResult> {
    let sys = ExtensionSystem::new(mesh, fp, data, Backend::default())?;
    solve_qvi_on(&sys, spec, cfg)
}

/// Outer iteration on an already assembled system.
pub fn solve_qvi_on(
    sys: &ExtensionSystem,
    spec: &ObstacleMapSpec,
    cfg: &QVIConfig,
) -> Result<QVIResult> {
    solve_qvi_observed(sys, spec, cfg, |_| {})
}

/// As [`solve_qvi_on`], calling `observe` after every outer step so that
/// progress survives a later failure.
pub fn solve_qvi_observed(
    sys: &ExtensionSystem,
    spec: &ObstacleMapSpec,
    cfg: &QVIConfig,
    mut observe: impl FnMut(&OuterStep),
) -> Result<QVIResult> {
    cfg.validate()?;
    spec.validate()?;
    let base = &sys.mesh.base;
    let mut u = vec![0.0; sys.mesh.num_nodes()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut last = None;
    for n in 1..=cfg.n_max {
        let wrap = |e: Error| Error::Outer {
            iteration: n,
            source: Box::new(e),
        };
        let psi = eval_obstacle(spec, &sys.mesh.trace(&u), base).map_err(wrap)?;
        let sol = ssn_solve(sys, &psi, &u, &cfg.ssn).map_err(wrap)?;
        let diff = sys.h_distance(&sol.u, &u);
        let norm = sys.h_norm(&sol.u);
        let rel_change = if diff == 0.0 { 0.0 } else { diff / norm };
        let min_increment = sol
            .u
            .iter()
            .zip(&u)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min);
        history.push(OuterStep {
            n,
            rel_change,
            ssn_iters: sol.newton_iters,
            active_count: sol.active.count(),
            min_increment,
            u_max: sol.u.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        });
        observe(history.last().expect("just pushed"));
        u = sol.u.clone();
        last = Some((psi, sol));
        if rel_change < cfg.eps1 {
            converged = true;
            break;
        }
    }
    let (psi_final, sol) = last.expect("n_max >= 1");
    Ok(QVIResult {
        trace: sys.mesh.trace(&u),
        u,
        psi_final,
        mu: sol.mu,
        active: sol.active,
        outer_iters: history.len(),
        history,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub tau: f64,
    /// Trace values at the probe vertices.
    pub probes: Vec<f64>,
    pub h_norm: f64,
    pub outer_iters: usize,
    pub converged: bool,
    /// `|u_tau - u_prev|_H` with the previous field extended by zero, when
    /// the previous mesh is a prefix of this one.
    pub diff_prev: Option<f64>,
}

/// Solves the QVI once per `tau`, on systems from `build_system`.
pub fn truncation_study(
    spec: &ObstacleMapSpec,
    taus: &[f64],
    mut build_system: impl FnMut(f64) -> Result<ExtensionSystem>,
    probes: &[usize],
    cfg: &QVIConfig,
) -> Result<Vec<TruncationRow>> {
    if taus.is_empty() || taus.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(param(
            "tau_list",
            "must be nonempty and strictly increasing",
        ));
    }
    let mut rows = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for &tau in taus {
        let sys = build_system(tau)?;
        if let Some(&p) = probes.iter().find(|&&p| p >= sys.mesh.base.num_vertices()) {
            return Err(param("probes", format!("vertex {p} out of range")));
        }
        let res = solve_qvi_on(&sys, spec, cfg)?;
        let nodes = sys.mesh.interval.nodes().to_vec();
        let diff_prev = prev.as_ref().and_then(|(pn, pu)| {
            let nested = pn.len() <= nodes.len() && pn.iter().zip(&nodes).all(|(a, b)| a == b);
            nested.then(|| {
                let mut ext = pu.clone();
                ext.resize(sys.mesh.num_nodes(), 0.0);
                sys.h_distance(&res.u, &ext)
            })
        });
        rows.push(TruncationRow {
            tau,
            probes: probes.iter().map(|&p| res.trace[p]).collect(),
            h_norm: sys.h_norm(&res.u),
            outer_iters: res.outer_iters,
            converged: res.converged,
            diff_prev,
        });
        prev = Some((nodes, res.u));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{
        build_base_mesh, build_cylinder, build_graded_interval, default_gamma, GradedInterval,
    };

    fn bump(base: &BaseMesh) -> ProblemData {
        ProblemData::from_fn(base, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]))
    }

    fn system(
        m: usize,
        layers: usize,
        s: f64,
        data: impl Fn(&BaseMesh) -> ProblemData,
    ) -> ExtensionSystem {
        let base = build_base_mesh(2, m).unwrap();
        let tau = default_tau(&base);
        let d = data(&base);
        let mesh = build_cylinder(
            base,
            build_graded_interval(layers, default_gamma(s).unwrap(), tau, s).unwrap(),
        );
        ExtensionSystem::new(
            mesh,
            FractionalParams::new(s).unwrap(),
            &d,
            Backend::default(),
        )
        .unwrap()
    }

    #[test]
    fn default_tau_values() {
        assert_eq!(default_tau(&build_base_mesh(1, 1).unwrap()), 1.0);
        let b = build_base_mesh(2, 32).unwrap();
        assert_eq!(b.num_elements(), 2048);
        assert!((default_tau(&b) - 3.541_539_662_053_133).abs() < 1e-14);
        let b = build_base_mesh(2, 16).unwrap();
        assert!((default_tau(&b) - 3.079_441_541_679_835_7).abs() < 1e-14);
    }

    #[test]
    fn zero_load_single_iteration() {
        let sys = system(4, 6, 0.5, |b| {
            ProblemData::new(b, vec![0.0; b.num_vertices()])
        });
        let res = solve_qvi_on(&sys, &ObstacleMapSpec::example2(), &QVIConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.outer_iters, 1);
        assert!(res.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn observer_sees_every_step() {
        let sys = system(6, 10, 0.5, bump);
        let mut seen = Vec::new();
        let res = solve_qvi_observed(
            &sys,
            &ObstacleMapSpec::example2(),
            &QVIConfig::default(),
            |step| seen.push(*step),
        )
        .unwrap();
        assert_eq!(seen, res.history);
    }

    #[test]
    fn loose_constant_obstacle_is_unconstrained() {
        let sys = system(6, 10, 0.4, bump);
        let ustar = sys.unconstrained().unwrap();
        let top = ustar.iter().fold(0.0f64, |m, v| m.max(*v));
        let res = solve_qvi_on(
            &sys,
            &ObstacleMapSpec::constant(2.0 * top),
            &QVIConfig::default(),
        )
        .unwrap();
        assert!(res.converged && res.outer_iters <= 2);
        let diff = res
            .u
            .iter()
            .zip(&ustar)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12 * top);
    }

    #[test]
    fn example2_monotone_bracketed_fixed_point() {
        let sys = system(8, 12, 0.6, bump);
        let cfg = QVIConfig::default();
        let spec = ObstacleMapSpec::example2();
        let res = solve_qvi_on(&sys, &spec, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.outer_iters > 5);
        assert!(res.active.count() > 0);
        let last = res.history.last().unwrap();
        assert!(last.rel_change < cfg.eps1);
        for h in &res.history {
            assert!(
                h.min_increment >= -1e-8 * h.u_max,
                "step {}: {}",
                h.n,
                h.min_increment
            );
        }
        let ustar = sys.mesh.trace(&sys.unconstrained().unwrap());
        let tol = 1e-6 * ustar.iter().fold(0.0f64, |m, v| m.max(*v));
        for (t, s) in res.trace.iter().zip(&ustar) {
            assert!(*t >= -tol && *t <= s + tol);
        }
        // one more outer step barely moves the solution
        let psi = eval_obstacle(&spec, &res.trace, &sys.mesh.base).unwrap();
        let again = ssn_solve(&sys, &psi, &res.u, &cfg.ssn).unwrap();
        assert!(sys.h_distance(&again.u, &res.u) / sys.h_norm(&again.u) < cfg.eps1);
    }

    #[test]
    fn impulse_map_converges_in_two_steps() {
        let sys = system(8, 12, 0.5, bump);
        let res = solve_qvi_on(&sys, &ObstacleMapSpec::example3(), &QVIConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.outer_iters, 2);
        assert!(res
            .psi_final
            .iter()
            .all(|p| *p == crate::obstacle::DEFAULT_NU));
    }

    #[test]
    fn ssn_failure_reports_outer_iteration() {
        let sys = system(4, 6, 0.5, bump);
        let cfg = QVIConfig {
            n_max: 3,
            ..Default::default()
        };
        let err = solve_qvi_on(&sys, &ObstacleMapSpec::Constant { value: -1.0 }, &cfg).unwrap_err();
        assert!(matches!(err, Error::Parameter { .. }));
        let bad = QVIConfig { eps1: 2.0, ..cfg };
        assert!(solve_qvi_on(&sys, &ObstacleMapSpec::example2(), &bad).is_err());
    }

    #[test]
    fn truncation_rows_are_monotone() {
        let s = 0.5;
        let base = build_base_mesh(2, 6).unwrap();
        let data = bump(&base);
        let graded = GradedInterval::graded(8, default_gamma(s).unwrap(), 1.0, s).unwrap();
        let center = base.num_vertices() / 2;
        let top = {
            let mesh = build_cylinder(base.clone(), graded.clone());
            let sys = ExtensionSystem::new(
                mesh,
                FractionalParams::new(s).unwrap(),
                &data,
                Backend::default(),
            )
            .unwrap();
            sys.unconstrained().unwrap()[center]
        };
        let rows = truncation_study(
            &ObstacleMapSpec::constant(0.7 * top),
            &[1.0, 2.0, 3.0],
            |tau| {
                ExtensionSystem::new(
                    build_cylinder(base.clone(), graded.with_uniform_tail(tau, 4)?),
                    FractionalParams::new(s)?,
                    &data,
                    Backend::default(),
                )
            },
            &[center],
            &QVIConfig::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].diff_prev.is_none());
        assert!(rows[1].diff_prev.unwrap() > rows[2].diff_prev.unwrap());
        for w in rows.windows(2) {
            assert!(w[1].probes[0] >= w[0].probes[0] - 1e-6);
        }
        let single = truncation_study(
            &ObstacleMapSpec::constant(1.0),
            &[2.0],
            |tau| {
                ExtensionSystem::new(
                    build_cylinder(base.clone(), graded.with_uniform_tail(tau, 4)?),
                    FractionalParams::new(s)?,
                    &data,
                    Backend::default(),
                )
            },
            &[center],
            &QVIConfig::default(),
        )
        .unwrap();
        assert_eq!(single.len(), 1);
    }
}
