//! Regularized semismooth Newton (primal-dual active set) solver for the
//! obstacle problem `tr u <= psi` with a fixed obstacle, driven through a
//! continuation in the penalty parameter `theta`.

use crate::error::{param, Error, Result};
use crate::system::{ExtensionSystem, TraceIterate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsnConfig {
    pub mu_bar: f64,
    pub theta0: f64,
    pub theta_ratio: f64,
    pub theta_max: f64,
    pub eps2: f64,
    /// Newton cap per penalty level.
    pub k_max: usize,
}

impl Default for SsnConfig {
    fn default() -> Self {
        SsnConfig {
            mu_bar: 0.0,
            theta0: 10.0,
            theta_ratio: 1.5,
            theta_max: 1e10,
            eps2: 1e-2,
            k_max: 10,
        }
    }
}

impl SsnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 > 0.0) {
            return Err(param("theta0", "must be positive"));
        }
        if !(self.theta_ratio > 1.0) {
            return Err(param("theta_ratio", "must exceed 1"));
        }
        if !(self.theta_max >= self.theta0) || !self.theta_max.is_finite() {
            return Err(param("theta_max", "must be finite and at least theta0"));
        }
        if !(self.eps2 > 0.0 && self.eps2 < 1.0) {
            return Err(param("eps2", "must lie in (0,1)"));
        }
        if self.k_max == 0 {
            return Err(param("k_max", "must be at least 1"));
        }
        if !self.mu_bar.is_finite() {
            return Err(param("mu_bar", "must be finite"));
        }
        Ok(())
    }

    /// `theta0, theta0 r, theta0 r^2, ...` capped by a final `theta_max`.
    pub fn theta_schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut theta = self.theta0;
        while theta < self.theta_max {
            out.push(theta);
            theta *= self.theta_ratio;
        }
        out.push(self.theta_max);
        out
    }
}

/// Active flags over base vertices; boundary vertices are never active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    flags: Vec<bool>,
}

impl ActiveSet {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        ActiveSet { flags }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn contains(&self, v: usize) -> bool {
        self.flags[v]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Node `i` is active iff `mu_bar + theta (trace_i - psi_i) > 0`.
pub fn active_set(trace: &[f64], psi: &[f64], mu_bar: f64, theta: f64) -> ActiveSet {
    ActiveSet {
        flags: trace
            .iter()
            .zip(psi)
            .map(|(u, p)| mu_bar + theta * (u - p) > 0.0)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ActiveSetRepeated,
    Ratio,
    MaxIter,
}

/// Summary of one penalty level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLog {
    pub theta: f64,
    pub iters: usize,
    pub active_count: usize,
    /// Weighted H1 norm of the last Newton update.
    pub step_norm: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub struct VISolution {
    /// Full cylinder field, zero on Dirichlet nodes.
    pub u: Vec<f64>,
    /// Multiplier per base vertex.
    pub mu: Vec<f64>,
    /// Active set used for the final Newton step.
    pub active: ActiveSet,
    pub newton_iters: usize,
    pub theta_final: f64,
    pub levels: Vec<LevelLog>,
}

impl VISolution {
    /// Whether the final penalty level stopped on a repeated active set.
    pub fn stable(&self) -> bool {
        self.levels.last().map(|l| l.stop) == Some(StopReason::ActiveSetRepeated)
    }

    pub fn max_newton_per_level(&self) -> usize {
        self.levels.iter().map(|l| l.iters).max().unwrap_or(0)
    }
}

fn penalty_terms(
    sys: &ExtensionSystem,
    active: &[bool],
    psi: &[f64],
    theta: f64,
    mu_bar: f64,
) -> (Vec<f64>, Vec<f64>) {
    let trace = sys.free_trace();
    let mut shift = vec![0.0; trace.len()];
    let mut extra = vec![0.0; trace.len()];
    for (i, &v) in trace.iter().enumerate() {
        if active[i] {
            let m = sys.lumped_mass[v];
            shift[i] = theta * m;
            extra[i] = theta * m * psi[v] - mu_bar * m;
        }
    }
    (shift, extra)
}

/// Solves `[K + theta D_A] u = b + theta D_A psi - mu_bar d_A` where `D_A` is
/// the lumped trace mass on the active vertices. `psi` and `active` are
/// indexed by base vertex; `warm` seeds iterative backends.
pub fn ssn_newton_step(
    sys: &ExtensionSystem,
    active: &ActiveSet,
    psi: &[f64],
    theta: f64,
    mu_bar: f64,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let flags: Vec<bool> = sys
        .free_trace()
        .iter()
        .map(|&v| active.contains(v))
        .collect();
    let (shift, extra) = penalty_terms(sys, &flags, psi, theta, mu_bar);
    sys.solve_penalized(&shift, &extra, warm)
}

/// Regularized semismooth Newton with penalty continuation.
pub fn ssn_solve(
    sys: &ExtensionSystem,
    psi: &[f64],
    u_init: &[f64],
    cfg: &SsnConfig,
) -> Result<VISolution> {
    cfg.validate()?;
    let nb = sys.mesh.base.num_vertices();
    if psi.len() != nb {
        return Err(Error::Mismatch {
            expected: nb,
            found: psi.len(),
        });
    }
    if u_init.len() != sys.mesh.num_nodes() {
        return Err(Error::Mismatch {
            expected: sys.mesh.num_nodes(),
            found: u_init.len(),
        });
    }
    let trace_ids = sys.free_trace();
    if let Some(&v) = trace_ids
        .iter()
        .find(|&&v| !(psi[v] >= 0.0) || !psi[v].is_finite())
    {
        return Err(param(
            "psi",
            format!("obstacle must be finite and nonnegative (vertex {v})"),
        ));
    }
    let psi_free: Vec<f64> = trace_ids.iter().map(|&v| psi[v]).collect();

    let mut current: TraceIterate = sys.iterate_from_field(u_init);
    let mut used = vec![false; trace_ids.len()];
    let mut levels = Vec::new();
    let mut newton_iters = 0;
    let mut theta_final = cfg.theta0;

    for theta in cfg.theta_schedule() {
        theta_final = theta;
        let mut active = active_set(&current.trace, &psi_free, cfg.mu_bar, theta).flags;
        let mut prev_step: Option<f64> = None;
        let mut k = 0;
        loop {
            let (shift, extra) = penalty_terms(sys, &active, psi, theta, cfg.mu_bar);
            let next = sys.penalized_iterate(&shift, &extra, &current)?;
            if next.trace.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite Newton iterate at theta = {theta:e}"
                )));
            }
            k += 1;
            newton_iters += 1;
            let step = sys.iterate_distance(&next, &current);
            let next_active = active_set(&next.trace, &psi_free, cfg.mu_bar, theta).flags;
            let stop = if next_active == active {
                Some(StopReason::ActiveSetRepeated)
            } else if k >= 2 && prev_step.is_some_and(|p| p == 0.0 || step / p < cfg.eps2) {
                Some(StopReason::Ratio)
            } else if k >= cfg.k_max {
                Some(StopReason::MaxIter)
            } else {
                None
            };
            used = active;
            current = next;
            active = next_active;
            prev_step = Some(step);
            if let Some(stop) = stop {
                levels.push(LevelLog {
                    theta,
                    iters: k,
                    active_count: used.iter().filter(|a| **a).count(),
                    step_norm: step,
                    stop,
                });
                break;
            }
        }
    }

    let u = sys.iterate_field(&current);
    let mut mu = vec![0.0; nb];
    let mut flags = vec![false; nb];
    for (i, &v) in trace_ids.iter().enumerate() {
        if used[i] {
            flags[v] = true;
            mu[v] = cfg.mu_bar + theta_final * (u[v] - psi[v]);
        }
    }
    Ok(VISolution {
        u,
        mu,
        active: ActiveSet { flags },
        newton_iters,
        theta_final,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{FractionalParams, ProblemData};
    use crate::linalg::PcgConfig;
    use crate::mesh::{build_base_mesh, build_cylinder, build_graded_interval};
    use crate::system::Backend;

    fn system(
        dim: usize,
        m: usize,
        layers: usize,
        s: f64,
        f: f64,
        backend: Backend,
    ) -> ExtensionSystem {
        let mesh = build_cylinder(
            build_base_mesh(dim, m).unwrap(),
            build_graded_interval(layers, 3.0 / (2.0 * s) + 0.1, 2.0, s).unwrap(),
        );
        let data = ProblemData::from_fn(&mesh.base, |x| {
            f * if dim == 1 {
                x[0] * (1.0 - x[0])
            } else {
                x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
            }
        });
        ExtensionSystem::new(mesh, FractionalParams::new(s).unwrap(), &data, backend).unwrap()
    }

    #[test]
    fn active_set_predicate() {
        assert!(active_set(&[0.1, 0.2], &[0.1, 0.3], 0.0, 10.0).is_empty());
        assert!(active_set(&[0.6], &[0.5], 0.0, 10.0).contains(0));
        let a = active_set(&[0.0, 0.0], &[0.05, -0.02], 0.4, 10.0);
        assert_eq!(a.flags(), &[false, true]);
        // ties are inactive
        assert!(active_set(&[0.5], &[0.5], 0.0, 1e10).is_empty());
    }

    #[test]
    fn theta_schedule_ends_at_cap() {
        let cfg = SsnConfig::default();
        let t = cfg.theta_schedule();
        assert_eq!(t[0], 10.0);
        assert_eq!(*t.last().unwrap(), 1e10);
        assert!(t
            .windows(2)
            .all(|w| w[1] > w[0] && w[1] <= 1.5 * w[0] * (1.0 + 1e-15)));
        assert_eq!(t.len(), 53);
    }

    #[test]
    fn empty_active_set_is_unconstrained() {
        let sys = system(2, 6, 8, 0.5, 1.0, Backend::Condensed);
        let nb = sys.mesh.base.num_vertices();
        let empty = ActiveSet::from_flags(vec![false; nb]);
        let u = ssn_newton_step(&sys, &empty, &vec![0.0; nb], 10.0, 0.0, None).unwrap();
        let ustar = sys.unconstrained().unwrap();
        let diff = u
            .iter()
            .zip(&ustar)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn full_penalty_pins_trace() {
        let sys = system(2, 6, 8, 0.4, 1.0, Backend::Condensed);
        let nb = sys.mesh.base.num_vertices();
        let all = ActiveSet::from_flags((0..nb).map(|v| !sys.mesh.base.is_boundary(v)).collect());
        let u = ssn_newton_step(&sys, &all, &vec![0.0; nb], 1e10, 0.0, None).unwrap();
        let fmax = 1.0 / 16.0;
        assert!(u[..nb].iter().all(|v| v.abs() <= 1e-6 * fmax));
    }

    #[test]
    fn single_free_node_step() {
        // one interior base vertex and one layer: a scalar equation
        let mesh = build_cylinder(
            build_base_mesh(1, 2).unwrap(),
            build_graded_interval(1, 3.1, 1.0, 0.5).unwrap(),
        );
        let data = ProblemData::new(&mesh.base, vec![1.0; 3]);
        let sys = ExtensionSystem::new(
            mesh,
            FractionalParams::new(0.5).unwrap(),
            &data,
            Backend::Condensed,
        )
        .unwrap();
        let k11 = sys.operator.get(0, 0);
        let b = sys.trace_load[1];
        let d = sys.lumped_mass[1];
        let (theta, psi) = (7.0, 0.01);
        let active = ActiveSet::from_flags(vec![false, true, false]);
        let u = ssn_newton_step(&sys, &active, &[0.0, psi, 0.0], theta, 0.0, None).unwrap();
        let expect = (b + theta * d * psi) / (k11 + theta * d);
        assert!((u[1] - expect).abs() < 1e-14 * expect);
    }

    #[test]
    fn inactive_obstacle_returns_unconstrained() {
        let sys = system(2, 6, 8, 0.6, 1.0, Backend::Condensed);
        let nb = sys.mesh.base.num_vertices();
        let ustar = sys.unconstrained().unwrap();
        let top = ustar[..nb].iter().fold(0.0f64, |m, v| m.max(*v));
        let sol = ssn_solve(
            &sys,
            &vec![2.0 * top; nb],
            &vec![0.0; sys.mesh.num_nodes()],
            &SsnConfig::default(),
        )
        .unwrap();
        assert!(sol.active.is_empty());
        assert!(sol.mu.iter().all(|m| *m == 0.0));
        let diff = sol
            .u
            .iter()
            .zip(&ustar)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12 * top);
    }

    #[test]
    fn zero_load_gives_zero() {
        let sys = system(1, 8, 6, 0.3, 0.0, Backend::Condensed);
        let nb = sys.mesh.base.num_vertices();
        let sol = ssn_solve(
            &sys,
            &vec![0.1; nb],
            &vec![0.0; sys.mesh.num_nodes()],
            &SsnConfig::default(),
        )
        .unwrap();
        assert!(sol.u.iter().all(|v| *v == 0.0));
        assert!(sol.mu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_negative_obstacle() {
        let sys = system(1, 4, 3, 0.5, 1.0, Backend::Condensed);
        let psi = vec![-1.0; 5];
        assert!(ssn_solve(
            &sys,
            &psi,
            &vec![0.0; sys.mesh.num_nodes()],
            &SsnConfig::default()
        )
        .is_err());
    }

    fn binding_obstacle(sys: &ExtensionSystem, frac: f64) -> Vec<f64> {
        let nb = sys.mesh.base.num_vertices();
        let ustar = sys.unconstrained().unwrap();
        let top = ustar[..nb].iter().fold(0.0f64, |m, v| m.max(*v));
        vec![frac * top; nb]
    }

    #[test]
    fn complementarity_and_feasibility() {
        let sys = system(2, 8, 10, 0.5, 1.0, Backend::Condensed);
        let psi = binding_obstacle(&sys, 0.5);
        let sol = ssn_solve(
            &sys,
            &psi,
            &vec![0.0; sys.mesh.num_nodes()],
            &SsnConfig::default(),
        )
        .unwrap();
        assert!(!sol.active.is_empty());
        assert!(sol.stable());
        assert!(sol.max_newton_per_level() <= 10);
        let mut viol = 0.0f64;
        for &v in sys.free_trace() {
            if sol.active.contains(v) {
                let expect = sol.theta_final * (sol.u[v] - psi[v]);
                assert!((sol.mu[v] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            } else {
                assert_eq!(sol.mu[v], 0.0);
            }
            viol = viol.max(sol.u[v] - psi[v]);
        }
        let mu_max = sol.mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(viol <= (mu_max + 1.0) / sol.theta_final);
    }

    #[test]
    fn pcg_and_condensed_backends_agree() {
        let pcg = Backend::Pcg(PcgConfig {
            rel_tol: 1e-12,
            ..Default::default()
        });
        let a = system(2, 6, 8, 0.7, 1.0, Backend::Condensed);
        let b = system(2, 6, 8, 0.7, 1.0, pcg);
        let psi = binding_obstacle(&a, 0.6);
        let cfg = SsnConfig::default();
        let zero = vec![0.0; a.mesh.num_nodes()];
        let sa = ssn_solve(&a, &psi, &zero, &cfg).unwrap();
        let sb = ssn_solve(&b, &psi, &zero, &cfg).unwrap();
        assert_eq!(sa.active, sb.active);
        let scale = sa.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff =
            sa.u.iter()
                .zip(&sb.u)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
        // PCG at theta = 1e10 is limited by the conditioning of the penalized system
        assert!(diff < 1e-5 * scale, "backend mismatch {diff} vs {scale}");
    }

    #[test]
    fn monotone_in_obstacle_and_idempotent() {
        let sys = system(2, 8, 10, 0.3, 1.0, Backend::Condensed);
        let cfg = SsnConfig::default();
        let zero = vec![0.0; sys.mesh.num_nodes()];
        let low = binding_obstacle(&sys, 0.3);
        let high = binding_obstacle(&sys, 0.6);
        let s1 = ssn_solve(&sys, &low, &zero, &cfg).unwrap();
        let s2 = ssn_solve(&sys, &high, &zero, &cfg).unwrap();
        let norm2 = s2.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let nb = sys.mesh.base.num_vertices();
        for v in 0..nb {
            assert!(s1.u[v] <= s2.u[v] + 1e-6 * norm2);
        }
        let again = ssn_solve(&sys, &high, &s2.u, &cfg).unwrap();
        let diff = again
            .u
            .iter()
            .zip(&s2.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-10 * norm2, "idempotence {diff}");
    }
}
