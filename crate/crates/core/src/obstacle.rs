//! Obstacle maps `psi = Psi(tr u)` used by the quasi-variational iteration.

use crate::assembly::assemble_trace_lumped_mass;
use crate::error::{param, Error, Result};
use crate::mesh::BaseMesh;

pub const DEFAULT_DELTA: f64 = 1e-10;
pub const DEFAULT_NU: f64 = 5e-3;

/// Relative slack below zero tolerated on input traces; smaller negative
/// values are treated as zero.
pub const NEGATIVE_TRACE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObstacleMapSpec {
    /// `psi = value`.
    Constant { value: f64 },
    /// `psi = scale * max(0, sin(x1) u) + delta`.
    Example1 { scale: f64, delta: f64 },
    /// `psi = scale * |int u| + delta`.
    Example2 { scale: f64, delta: f64 },
    /// `psi(x) = nu + min of u over lattice nodes in the upper quadrant of x`.
    Example3Impulse { nu: f64 },
    /// `psi = scale * |int u| + delta`, used with `f = 1`.
    Example4 { scale: f64, delta: f64 },
}

impl ObstacleMapSpec {
    pub fn constant(value: f64) -> Self {
        ObstacleMapSpec::Constant { value }
    }

    pub fn example1() -> Self {
        ObstacleMapSpec::Example1 {
            scale: 5.0,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn example2() -> Self {
        ObstacleMapSpec::Example2 {
            scale: 2.0,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn example3() -> Self {
        ObstacleMapSpec::Example3Impulse { nu: DEFAULT_NU }
    }

    pub fn example4() -> Self {
        ObstacleMapSpec::Example4 {
            scale: 1.45,
            delta: DEFAULT_DELTA,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObstacleMapSpec::Constant { .. } => "constant",
            ObstacleMapSpec::Example1 { .. } => "example1",
            ObstacleMapSpec::Example2 { .. } => "example2",
            ObstacleMapSpec::Example3Impulse { .. } => "example3_impulse",
            ObstacleMapSpec::Example4 { .. } => "example4",
        }
    }

    /// Lower bound of the map on nonnegative fields.
    pub fn floor(&self) -> f64 {
        match *self {
            ObstacleMapSpec::Constant { value } => value,
            ObstacleMapSpec::Example1 { delta, .. }
            | ObstacleMapSpec::Example2 { delta, .. }
            | ObstacleMapSpec::Example4 { delta, .. } => delta,
            ObstacleMapSpec::Example3Impulse { nu } => nu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match *self {
            ObstacleMapSpec::Constant { value } if !ok(value) => {
                Err(param("obstacle.value", "must be finite and nonnegative"))
            }
            ObstacleMapSpec::Example1 { scale, delta }
            | ObstacleMapSpec::Example2 { scale, delta }
            | ObstacleMapSpec::Example4 { scale, delta } => {
                if !ok(scale) {
                    Err(param("obstacle.scale", "must be finite and nonnegative"))
                } else if !ok(delta) {
                    Err(param("obstacle.delta", "must be finite and nonnegative"))
                } else {
                    Ok(())
                }
            }
            ObstacleMapSpec::Example3Impulse { nu } if !ok(nu) => {
                Err(param("obstacle.nu", "must be finite and nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

/// `int u` for a P1 field; equals `1^T M u` for the consistent mass.
pub fn integrate(base: &BaseMesh, u: &[f64]) -> f64 {
    assemble_trace_lumped_mass(base)
        .iter()
        .zip(u)
        .map(|(m, v)| m * v)
        .sum()
}

/// Reverse lattice sweep `m(i,j) = min(u(i,j), m(i+1,j), m(i,j+1))`.
pub fn quadrant_min(shape: &[usize], u: &[f64]) -> Vec<f64> {
    let mut m = u.to_vec();
    match shape {
        [n] => {
            for i in (0..n.saturating_sub(1)).rev() {
                m[i] = m[i].min(m[i + 1]);
            }
        }
        [nx, ny] => {
            for j in (0..*ny).rev() {
                for i in (0..*nx).rev() {
                    let k = j * nx + i;
                    if i + 1 < *nx {
                        m[k] = m[k].min(m[k + 1]);
                    }
                    if j + 1 < *ny {
                        m[k] = m[k].min(m[k + nx]);
                    }
                }
            }
        }
        _ => {}
    }
    m
}

pub fn eval_obstacle(spec: &ObstacleMapSpec, trace_u: &[f64], base: &BaseMesh) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = base.num_vertices();
    if trace_u.len() != n {
        return Err(Error::Mismatch {
            expected: n,
            found: trace_u.len(),
        });
    }
    let scale = trace_u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut u = trace_u.to_vec();
    for (i, v) in u.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite trace at vertex {i}")));
        }
        if *v < 0.0 {
            if *v < -NEGATIVE_TRACE_SLACK * scale {
                return Err(Error::NegativeTrace {
                    vertex: i,
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    Ok(match *spec {
        ObstacleMapSpec::Constant { value } => vec![value; n],
        ObstacleMapSpec::Example1 { scale, delta } => base
            .vertices()
            .iter()
            .zip(&u)
            .map(|(x, v)| scale * (x[0].sin() * v).max(0.0) + delta)
            .collect(),
        ObstacleMapSpec::Example2 { scale, delta } | ObstacleMapSpec::Example4 { scale, delta } => {
            vec![scale * integrate(base, &u).abs() + delta; n]
        }
        ObstacleMapSpec::Example3Impulse { nu } => {
            let shape = base.structured_shape();
            if shape.iter().product::<usize>() != n {
                return Err(Error::Unsupported(
                    "impulse map needs a structured lattice".into(),
                ));
            }
            quadrant_min(&shape, &u)
                .into_iter()
                .map(|m| nu + m)
                .collect()
        }
    })
}
