//! Discrete p-Laplace operator `A_h(u) = -div_h(m(∇_h u) ∇_h u)` with the
//! edge weight `m(g) = (g² + ε²)^((p-2)/2)`, and the convex energy whose
//! gradient it is.

use thiserror::Error;

use crate::grid::{discrete_divergence, discrete_gradient, EdgeField, GridFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlapError {
    #[error("exponent p must exceed 1, got {0}")]
    Exponent(f64),
    #[error("smoothing eps must be finite and >= 0, got {0}")]
    Smoothing(f64),
    #[error("p = {p} < 2 with eps = 0 is singular at a vanishing edge gradient")]
    Singular { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlapParams {
    p: f64,
    eps: f64,
}

impl PlapParams {
    pub fn new(p: f64, eps: f64) -> Result<Self, PlapError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(PlapError::Exponent(p));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(PlapError::Smoothing(eps));
        }
        Ok(Self { p, eps })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// The singular range `p < 2` needs `eps > 0` before a solver may run.
    pub fn require_regular(&self) -> Result<(), PlapError> {
        if self.p < 2.0 && self.eps == 0.0 {
            Err(PlapError::Singular { p: self.p })
        } else {
            Ok(())
        }
    }

    /// Edge weight `m(g)`.
    #[inline]
    pub fn weight(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        (g * g + self.eps * self.eps).powf(0.5 * (self.p - 2.0))
    }

    /// Edge flux `m(g) g`, the derivative of the edge energy density.
    #[inline]
    pub fn flux(&self, g: f64) -> f64 {
        if g == 0.0 {
            return 0.0;
        }
        self.weight(g) * g
    }

    /// Derivative of the flux: `(g² + ε²)^((p-4)/2) ((p-1) g² + ε²)`.
    #[inline]
    pub fn flux_slope(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        let s = g * g + self.eps * self.eps;
        if s == 0.0 {
            // p > 2 here (p < 2 with eps = 0 is rejected upstream).
            return 0.0;
        }
        s.powf(0.5 * (self.p - 4.0)) * ((self.p - 1.0) * g * g + self.eps * self.eps)
    }

    /// Edge energy density `(1/p)(g² + ε²)^(p/2)`.
    #[inline]
    pub fn density(&self, g: f64) -> f64 {
        (g * g + self.eps * self.eps).powf(0.5 * self.p) / self.p
    }
}

/// Per-edge flux `m(∇u) ∇u`.
pub fn edge_flux(u: &GridFunction, params: &PlapParams) -> Result<EdgeField, PlapError> {
    let grad = discrete_gradient(u);
    if params.p < 2.0 && params.eps == 0.0 && grad.values().contains(&0.0) {
        return Err(PlapError::Singular { p: params.p });
    }
    Ok(grad.map(|g| params.flux(g)))
}

pub fn apply_plap(u: &GridFunction, params: &PlapParams) -> Result<GridFunction, PlapError> {
    let flux = edge_flux(u, params)?;
    Ok(discrete_divergence(&flux).map(|v| -v))
}

/// `E(u) = h^dim Σ_e (1/p)(g_e² + ε²)^(p/2)`; its gradient is `h^dim A_h(u)`.
pub fn energy(u: &GridFunction, params: &PlapParams) -> f64 {
    let grad = discrete_gradient(u);
    u.mesh().cell_volume() * grad.values().iter().map(|&g| params.density(g)).sum::<f64>()
}
