//! Fixtures shared by the solver benchmarks.

use renorm_plap::{GridFunction, InitialDatum, Mesh, PlapParams};

pub const EXPONENTS: [f64; 3] = [1.5, 2.0, 3.0];

pub fn params(p: f64) -> PlapParams {
    PlapParams::new(p, if p < 2.0 { 1e-3 } else { 0.0 }).expect("valid exponent")
}

pub fn meshes() -> Vec<(String, Mesh)> {
    vec![
        ("1d-n127".into(), Mesh::line(127).expect("valid mesh")),
        ("2d-n31".into(), Mesh::square(31).expect("valid mesh")),
    ]
}

pub fn datum(mesh: &Mesh) -> GridFunction {
    InitialDatum::Eigenmode(2.0).build(mesh)
}

pub fn forcing(mesh: &Mesh, scale: f64) -> GridFunction {
    let values = (0..mesh.n_nodes())
        .map(|i| scale * ((i * 7919) % 13) as f64 / 13.0 - 0.5 * scale)
        .collect();
    GridFunction::from_values(*mesh, values).expect("matching length")
}
