//! Registry of closed-form initial data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{GridFunction, Mesh};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown initial datum `{0}`")]
pub struct UnknownDatum(pub String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialDatum {
    Zero,
    /// `a Π sin(π x_a)`: the first discrete Dirichlet eigenvector.
    Eigenmode(f64),
    /// Single node of height `mass / h^dim` at a seeded random location, so
    /// the discrete `L¹` norm is `mass`.
    Spike {
        mass: f64,
        seed: u64,
    },
    /// `a` on `[1/4, 3/4]^dim`, zero elsewhere.
    Step(f64),
    /// Smooth bump of height `a` supported in `(0.2, 0.8)^dim`.
    Bump(f64),
    /// Independent uniform values in `[-a, a]`.
    Random {
        amp: f64,
        seed: u64,
    },
}

impl InitialDatum {
    pub fn build(&self, mesh: &Mesh) -> GridFunction {
        let dim = mesh.dim();
        match *self {
            Self::Zero => GridFunction::zeros(*mesh),
            Self::Eigenmode(a) => {
                GridFunction::from_fn(*mesh, |x| a * x[..dim].iter().map(|c| (PI * c).sin()).product::<f64>())
            }
            Self::Spike { mass, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let node = rng.random_range(0..mesh.n_nodes());
                let mut values = vec![0.0; mesh.n_nodes()];
                values[node] = mass / mesh.cell_volume();
                GridFunction::from_values(*mesh, values).expect("finite spike")
            }
            Self::Step(a) => GridFunction::from_fn(*mesh, |x| {
                if x[..dim].iter().all(|c| (0.25..=0.75).contains(c)) {
                    a
                } else {
                    0.0
                }
            }),
            Self::Bump(a) => GridFunction::from_fn(*mesh, |x| {
                a * x[..dim]
                    .iter()
                    .map(|c| {
                        let s = (c - 0.5) / 0.3;
                        if s.abs() < 1.0 {
                            (1.0 - 1.0 / (1.0 - s * s)).exp()
                        } else {
                            0.0
                        }
                    })
                    .product::<f64>()
            }),
            Self::Random { amp, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let values = (0..mesh.n_nodes())
                    .map(|_| amp * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                GridFunction::from_values(*mesh, values).expect("finite samples")
            }
        }
    }
}

/// Eigenvalue of the discrete Dirichlet Laplacian for the mode `Π sin(π x_a)`:
/// `dim · (4/h²) sin²(πh/2)`.
pub fn first_eigenvalue(mesh: &Mesh) -> f64 {
    let h = mesh.spacing();
    mesh.dim() as f64 * 4.0 / (h * h) * (0.5 * PI * h).sin().powi(2)
}

impl fmt::Display for InitialDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Eigenmode(a) => write!(f, "eigenmode:{a}"),
            Self::Spike { mass, seed } => write!(f, "spike:{mass}:{seed}"),
            Self::Step(a) => write!(f, "step:{a}"),
            Self::Bump(a) => write!(f, "bump:{a}"),
            Self::Random { amp, seed } => write!(f, "random:{amp}:{seed}"),
        }
    }
}

impl FromStr for InitialDatum {
    type Err = UnknownDatum;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UnknownDatum(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64, UnknownDatum> {
            parts
                .get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(bad)
        };
        let seed =
            |i: usize| -> Result<u64, UnknownDatum> { parts.get(i).and_then(|v| v.parse().ok()).ok_or_else(bad) };
        let datum = match (parts[0], parts.len()) {
            ("zero", 1) => Self::Zero,
            ("eigenmode", 2) => Self::Eigenmode(num(1)?),
            ("spike", 3) => Self::Spike {
                mass: num(1)?,
                seed: seed(2)?,
            },
            ("step", 2) => Self::Step(num(1)?),
            ("bump", 2) => Self::Bump(num(1)?),
            ("random", 3) => Self::Random {
                amp: num(1)?,
                seed: seed(2)?,
            },
            _ => return Err(bad()),
        };
        Ok(datum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::norm_lq;

    #[test]
    fn registry_round_trip() {
        for name in [
            "zero",
            "eigenmode:1.5",
            "spike:2:7",
            "step:3",
            "bump:1",
            "random:0.5:11",
        ] {
            let d: InitialDatum = name.parse().unwrap();
            assert_eq!(d.to_string(), name);
        }
        for bad in ["", "eigenmode", "spike:1", "step:x", "wave:1"] {
            assert!(bad.parse::<InitialDatum>().is_err(), "{bad}");
        }
    }

    #[test]
    fn spike_has_requested_mass() {
        for mesh in [Mesh::line(31).unwrap(), Mesh::square(9).unwrap()] {
            let u = InitialDatum::Spike { mass: 0.7, seed: 3 }.build(&mesh);
            assert!((norm_lq(&u, 1.0).unwrap() - 0.7).abs() < 1e-14);
            assert_eq!(u.values().iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn bump_support() {
        let mesh = Mesh::line(99).unwrap();
        let u = InitialDatum::Bump(2.0).build(&mesh);
        for (i, v) in u.values().iter().enumerate() {
            let x = mesh.node_coords(i)[0];
            if !(0.2 < x && x < 0.8) {
                assert_eq!(*v, 0.0);
            }
        }
        assert!((u.max_abs() - 2.0).abs() < 1e-12);
    }
}
