//! Regularizing operators `Π_n v = (φ_n v) * ρ_n`: multiply by a boundary
//! cutoff, then convolve with a symmetric unit-mass kernel of half-width
//! `1/n`, zero-extended outside the domain.
//!
//! Only `L¹`, `L²` and `W^{1,p}`-seminorm statements are checked on the grid;
//! negative-norm bounds are not evaluated.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::grid::{discrete_gradient, edge_norm_lq, norm_lq, GridFunction, Mesh};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegularizerError {
    #[error("regularization level must be at least 2, got {0}")]
    Level(usize),
    #[error("level {n} is unresolvable: 1/n = {} < h = {h}", 1.0 / *n as f64)]
    Unresolvable { n: usize, h: f64 },
    #[error("W^1,p seminorm needs p >= 1, got {0}")]
    Exponent(f64),
}

/// Nodal values of the cutoff `φ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffProfile {
    pub n: usize,
    pub values: GridFunction,
}

impl CutoffProfile {
    /// Largest difference quotient of the profile across an edge, boundary
    /// ghosts included.
    pub fn max_slope(&self) -> f64 {
        discrete_gradient(&self.values)
            .values()
            .iter()
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn check_level(n: usize, mesh: &Mesh) -> Result<(), RegularizerError> {
    if n < 2 {
        return Err(RegularizerError::Level(n));
    }
    if 1.0 / (n as f64) < mesh.spacing() {
        return Err(RegularizerError::Unresolvable { n, h: mesh.spacing() });
    }
    Ok(())
}

/// Cutoff as a function of boundary distance: 0 up to `1/n`, linear ramp,
/// 1 from `2/n`.
pub fn cutoff_value(dist: f64, n: usize) -> f64 {
    let inv = 1.0 / n as f64;
    ((dist - inv) / inv).clamp(0.0, 1.0)
}

pub fn build_cutoff(n: usize, mesh: &Mesh) -> Result<CutoffProfile, RegularizerError> {
    check_level(n, mesh)?;
    let values: Vec<f64> = (0..mesh.n_nodes())
        .map(|i| cutoff_value(mesh.boundary_distance(i), n))
        .collect();
    Ok(CutoffProfile {
        n,
        values: GridFunction::from_values(*mesh, values).expect("finite cutoff"),
    })
}

/// Triangular kernel on grid offsets, tensorized in 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierKernel {
    pub n: usize,
    h: f64,
    /// One-dimensional weights for offsets `-radius..=radius`, scaled so that
    /// `h Σ w = 1`.
    weights: Vec<f64>,
}

impl MollifierKernel {
    pub fn new(n: usize, mesh: &Mesh) -> Result<Self, RegularizerError> {
        check_level(n, mesh)?;
        let h = mesh.spacing();
        let scale = h * n as f64;
        let radius = (1.0 / scale).ceil() as usize;
        let raw: Vec<f64> = (-(radius as i64)..=radius as i64)
            .map(|j| (1.0 - j.unsigned_abs() as f64 * scale).max(0.0))
            .collect();
        let mass: f64 = h * raw.iter().sum::<f64>();
        Ok(Self {
            n,
            h,
            weights: raw.into_iter().map(|w| w / mass).collect(),
        })
    }

    pub fn half_width(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Largest offset distance carrying nonzero weight.
    pub fn effective_half_width(&self) -> f64 {
        let r = self.radius();
        let last = (0..=r).rev().find(|&j| self.weights[r + j] > 0.0).unwrap_or(0);
        last as f64 * self.h
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    /// `h^dim Σ` of the full (tensorized) kernel.
    pub fn mass(&self, dim: usize) -> f64 {
        (self.h * self.weights.iter().sum::<f64>()).powi(dim as i32)
    }

    /// Zero-extended discrete convolution of `f` with the kernel.
    pub fn convolve(&self, f: &GridFunction) -> GridFunction {
        let mesh = *f.mesh();
        let mut data = f.values().to_vec();
        for axis in 0..mesh.dim() {
            data = self.convolve_axis(&mesh, &data, axis);
        }
        GridFunction::from_values(mesh, data).expect("finite convolution")
    }

    fn convolve_axis(&self, mesh: &Mesh, data: &[f64], axis: usize) -> Vec<f64> {
        let n = mesh.n_per_axis() as i64;
        let stride = mesh.stride(axis);
        let r = self.radius() as i64;
        let mut out = vec![0.0; data.len()];
        for (i, slot) in out.iter_mut().enumerate() {
            let pos = if axis == 0 {
                i % mesh.n_per_axis()
            } else {
                i / mesh.n_per_axis()
            } as i64;
            let mut acc = 0.0;
            for j in (-r).max(-pos)..=r.min(n - 1 - pos) {
                let idx = (i as i64 + j * stride as i64) as usize;
                acc += self.weights[(j + r) as usize] * data[idx];
            }
            *slot = self.h * acc;
        }
        out
    }
}

pub fn apply_pi_n(v: &GridFunction, n: usize, mesh: &Mesh) -> Result<GridFunction, RegularizerError> {
    let cutoff = build_cutoff(n, mesh)?;
    let kernel = MollifierKernel::new(n, mesh)?;
    let cut = v
        .zip_with(&cutoff.values, |a, b| a * b)
        .expect("cutoff built on the same mesh");
    Ok(kernel.convolve(&cut))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Discrepancy {
    L1,
    L2,
    /// Discrete `W^{1,p}` seminorm `‖∇_h(·)‖_{L^p}`.
    W1p(f64),
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::L1 => write!(f, "1"),
            Self::L2 => write!(f, "2"),
            Self::W1p(p) => write!(f, "w1p:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub norm: Discrepancy,
    pub discrepancy: f64,
}

/// `‖Π_n v - v‖` per level and norm.
pub fn pi_n_convergence_report(
    v: &GridFunction,
    levels: &[usize],
    norms: &[Discrepancy],
) -> Result<Vec<ConvergenceRow>, RegularizerError> {
    let mesh = *v.mesh();
    let mut rows = Vec::with_capacity(levels.len() * norms.len());
    for &n in levels {
        let diff = apply_pi_n(v, n, &mesh)?.sub(v).expect("same mesh");
        for &norm in norms {
            let discrepancy = match norm {
                Discrepancy::L1 => norm_lq(&diff, 1.0).expect("q = 1"),
                Discrepancy::L2 => norm_lq(&diff, 2.0).expect("q = 2"),
                Discrepancy::W1p(p) => {
                    edge_norm_lq(&discrete_gradient(&diff), p).map_err(|_| RegularizerError::Exponent(p))?
                }
            };
            rows.push(ConvergenceRow { n, norm, discrepancy });
        }
    }
    Ok(rows)
}

/// CSV with columns `n,q,discrepancy`.
pub fn write_report_csv<W: Write>(rows: &[ConvergenceRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "q", "discrepancy"])?;
    for row in rows {
        w.write_record([row.n.to_string(), row.norm.to_string(), row.discrepancy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
