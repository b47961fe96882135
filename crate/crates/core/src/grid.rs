//! Uniform grids on the unit interval and unit square with homogeneous
//! Dirichlet boundary, plus the discrete gradient/divergence pair and the
//! scaled `L^q` norms.
//!
//! Nodes are interior only; boundary values are implicit ghosts equal to
//! zero. Node order is lexicographic with `x` fastest (row-major in 2D).
//!
//! Edges are ordered axis-major. Along axis `a`, the edge at position
//! `i ∈ 0..=n` of line `j` joins the node at offset `i - 1` to the node at
//! offset `i` (either may be a boundary ghost). Edge values are difference
//! quotients `(hi - lo) / h`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("mesh dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("mesh needs at least one interior node per axis")]
    Empty,
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("norm exponent must be >= 1, got {0}")]
    Exponent(f64),
    #[error("grid functions live on different meshes")]
    MeshMismatch,
}

/// Uniform mesh of the unit interval (`dim = 1`) or unit square (`dim = 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    dim: usize,
    n: usize,
    h: f64,
}

/// One axis-aligned edge. `lo`/`hi` are `None` when the endpoint is a
/// boundary ghost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub axis: usize,
    pub lo: Option<usize>,
    pub hi: Option<usize>,
    pub midpoint: [f64; 2],
}

impl Mesh {
    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::Dimension(dim));
        }
        if n_per_axis == 0 {
            return Err(GridError::Empty);
        }
        Ok(Self {
            dim,
            n: n_per_axis,
            h: 1.0 / (n_per_axis + 1) as f64,
        })
    }

    pub fn line(n_per_axis: usize) -> Result<Self, GridError> {
        Self::new(1, n_per_axis)
    }

    pub fn square(n_per_axis: usize) -> Result<Self, GridError> {
        Self::new(2, n_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// `h^dim`, the weight of one node (or edge) in the scaled sums.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn n_nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn n_edges(&self) -> usize {
        self.dim * (self.n + 1) * self.n.pow(self.dim as u32 - 1)
    }

    /// Index offset between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.n
        }
    }

    /// Coordinates of node `i`; the second entry is 0 in 1D.
    pub fn node_coords(&self, i: usize) -> [f64; 2] {
        let (ix, iy) = (i % self.n, i / self.n);
        let x = (ix + 1) as f64 * self.h;
        if self.dim == 1 {
            [x, 0.0]
        } else {
            [x, (iy + 1) as f64 * self.h]
        }
    }

    /// Distance from node `i` to the boundary of the unit interval/square.
    pub fn boundary_distance(&self, i: usize) -> f64 {
        let c = self.node_coords(i);
        (0..self.dim)
            .map(|a| c[a].min(1.0 - c[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn edge(&self, e: usize) -> Edge {
        let n = self.n;
        let per_axis = (n + 1) * n.pow(self.dim as u32 - 1);
        let axis = e / per_axis;
        let local = e % per_axis;
        let (line, pos) = (local / (n + 1), local % (n + 1));
        // Node index of the point at offset `k` along this edge's line.
        let node_at = |k: usize| -> usize {
            if axis == 0 {
                line * n + k
            } else {
                k * n + line
            }
        };
        let lo = (pos > 0).then(|| node_at(pos - 1));
        let hi = (pos < n).then(|| node_at(pos));
        let along = (pos as f64 + 0.5) * self.h;
        let across = (line + 1) as f64 * self.h;
        let midpoint = match (self.dim, axis) {
            (1, _) => [along, 0.0],
            (_, 0) => [along, across],
            _ => [across, along],
        };
        Edge { axis, lo, hi, midpoint }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.n_edges()).map(move |e| self.edge(e))
    }
}

/// Real value per interior node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    mesh: Mesh,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(mesh: Mesh) -> Self {
        Self {
            mesh,
            values: vec![0.0; mesh.n_nodes()],
        }
    }

    pub fn constant(mesh: Mesh, c: f64) -> Self {
        Self {
            mesh,
            values: vec![c; mesh.n_nodes()],
        }
    }

    pub fn from_values(mesh: Mesh, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != mesh.n_nodes() {
            return Err(GridError::Length {
                expected: mesh.n_nodes(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { mesh, values })
    }

    /// Samples `f` at the node coordinates.
    pub fn from_fn(mesh: Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..mesh.n_nodes()).map(|i| f(mesh.node_coords(i))).collect();
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mesh: self.mesh,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Nodewise combination of two functions on the same mesh.
    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        if self.mesh != other.mesh {
            return Err(GridError::MeshMismatch);
        }
        Ok(Self {
            mesh: self.mesh,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self, GridError> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Scaled inner product `h^dim Σ u_i v_i`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        debug_assert_eq!(self.mesh, other.mesh);
        self.mesh.cell_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Real value per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    mesh: Mesh,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(mesh: Mesh) -> Self {
        Self {
            mesh,
            values: vec![0.0; mesh.n_edges()],
        }
    }

    pub fn from_values(mesh: Mesh, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != mesh.n_edges() {
            return Err(GridError::Length {
                expected: mesh.n_edges(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { mesh, values })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mesh: self.mesh,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scaled inner product `h^dim Σ_e F_e G_e`.
    pub fn dot(&self, other: &EdgeField) -> f64 {
        debug_assert_eq!(self.mesh, other.mesh);
        self.mesh.cell_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Value of `u` at an edge endpoint; boundary ghosts read as zero.
#[inline]
pub(crate) fn endpoint(values: &[f64], node: Option<usize>) -> f64 {
    node.map_or(0.0, |i| values[i])
}

pub fn discrete_gradient(u: &GridFunction) -> EdgeField {
    let mesh = u.mesh;
    let inv_h = 1.0 / mesh.h;
    let values = mesh
        .edges()
        .map(|e| (endpoint(&u.values, e.hi) - endpoint(&u.values, e.lo)) * inv_h)
        .collect();
    EdgeField { mesh, values }
}

/// Negative adjoint of [`discrete_gradient`] under the `h^dim`-scaled inner
/// products: `⟨div F, u⟩ = -⟨F, grad u⟩`.
pub fn discrete_divergence(f: &EdgeField) -> GridFunction {
    let mesh = f.mesh;
    let inv_h = 1.0 / mesh.h;
    let mut out = vec![0.0; mesh.n_nodes()];
    for (e, flux) in mesh.edges().zip(&f.values) {
        if let Some(lo) = e.lo {
            out[lo] += flux * inv_h;
        }
        if let Some(hi) = e.hi {
            out[hi] -= flux * inv_h;
        }
    }
    GridFunction { mesh, values: out }
}

/// `(h^dim Σ |u_i|^q)^(1/q)`.
pub fn norm_lq(u: &GridFunction, q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) {
        return Err(GridError::Exponent(q));
    }
    let vol = u.mesh.cell_volume();
    if q == 1.0 {
        return Ok(vol * u.values.iter().map(|v| v.abs()).sum::<f64>());
    }
    let s: f64 = u.values.iter().map(|v| v.abs().powf(q)).sum();
    Ok((vol * s).powf(1.0 / q))
}

/// Same norm over an edge field.
pub fn edge_norm_lq(f: &EdgeField, q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) {
        return Err(GridError::Exponent(q));
    }
    let vol = f.mesh.cell_volume();
    let s: f64 = f.values.iter().map(|v| v.abs().powf(q)).sum();
    Ok((vol * s).powf(1.0 / q))
}
