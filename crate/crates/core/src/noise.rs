//! Seeded Brownian increments and the deterministic additive noise field.
//!
//! Increments come from a ChaCha8 stream seeded with the 64-bit path seed;
//! Gaussians are drawn with `rand_distr::StandardNormal` (ziggurat). Both are
//! pinned through `Cargo.lock`, so a path is a pure function of
//! `(seed, n_steps, dt)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::grid::{GridFunction, Mesh};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("coarsening factor {factor} does not divide {len} increments")]
    Coarsen { factor: usize, len: usize },
    #[error("unknown noise field `{0}`")]
    UnknownField(String),
}

/// Sequence of Brownian increments `Δβ_0, …, Δβ_{N-1}` on a uniform grid.
///
/// Increment `n` drives the step from `t_n = n dt` to `t_{n+1}`; indices are
/// absolute, so a solve started at `r > 0` reads from `r / dt` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    dt: f64,
    coarsening: usize,
    increments: Arc<[f64]>,
}

impl BrownianPath {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of fine increments merged into each increment (1 when sampled
    /// directly).
    pub fn coarsening(&self) -> usize {
        self.coarsening
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// `β` at grid time `n dt`.
    pub fn value_at(&self, n: usize) -> f64 {
        self.increments[..n].iter().sum()
    }

    /// Sums consecutive blocks of `factor` increments: the same Brownian
    /// realization seen on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self, NoiseError> {
        if factor == 0 || self.len() % factor != 0 {
            return Err(NoiseError::Coarsen {
                factor,
                len: self.len(),
            });
        }
        let increments: Vec<f64> = self.increments.chunks(factor).map(|c| c.iter().sum()).collect();
        Ok(Self {
            seed: self.seed,
            dt: self.dt * factor as f64,
            coarsening: self.coarsening * factor,
            increments: increments.into(),
        })
    }
}

pub fn sample_brownian(seed: u64, n_steps: usize, dt: f64) -> Result<BrownianPath, NoiseError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(NoiseError::TimeStep(dt));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let increments: Vec<f64> = (0..n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    Ok(BrownianPath {
        seed,
        dt,
        coarsening: 1,
        increments: increments.into(),
    })
}

/// Seed of ensemble member `index` in stream `stream` under `master`.
///
/// Rule: `splitmix64(master ^ splitmix64(stream ^ splitmix64(index)))`.
/// Distinct `(stream, index)` pairs give unrelated ChaCha seeds.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream ^ splitmix64(index)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Space-only profiles accepted as `space:<name>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceProfile {
    /// `Π sin(π x_a)`
    Sin,
    /// `Π 4 x_a (1 - x_a)`
    Parabola,
    /// `x_0`
    Ramp,
}

impl SpaceProfile {
    fn eval(self, x: [f64; 2], dim: usize) -> f64 {
        let coords = &x[..dim];
        match self {
            Self::Sin => coords.iter().map(|c| (PI * c).sin()).product(),
            Self::Parabola => coords.iter().map(|c| 4.0 * c * (1.0 - c)).product(),
            Self::Ramp => x[0],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Parabola => "parabola",
            Self::Ramp => "ramp",
        }
    }
}

/// Deterministic bounded space-time field `Φ(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseField {
    Zero,
    Const(f64),
    /// `a cos(π t) Π sin(π x_a)`
    SinProd(f64),
    Space(SpaceProfile),
}

impl NoiseField {
    pub fn eval(&self, t: f64, x: [f64; 2], dim: usize) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Const(c) => c,
            Self::SinProd(a) => a * (PI * t).cos() * SpaceProfile::Sin.eval(x, dim),
            Self::Space(profile) => profile.eval(x, dim),
        }
    }

    /// Sup-norm of the field over `[0, ∞) × D`.
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Const(c) => c.abs(),
            Self::SinProd(a) => a.abs(),
            Self::Space(_) => 1.0,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        !matches!(self, Self::SinProd(a) if *a != 0.0)
    }

    /// `Φ(t, ·)` sampled at the nodes.
    pub fn sample(&self, t: f64, mesh: &Mesh) -> GridFunction {
        let dim = mesh.dim();
        GridFunction::from_fn(*mesh, |x| self.eval(t, x, dim))
    }
}

impl fmt::Display for NoiseField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Const(c) => write!(f, "const:{c}"),
            Self::SinProd(a) => write!(f, "sinprod:{a}"),
            Self::Space(p) => write!(f, "space:{}", p.name()),
        }
    }
}

impl FromStr for NoiseField {
    type Err = NoiseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NoiseError::UnknownField(s.to_string());
        let number = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
        match s.split_once(':') {
            None if s == "zero" => Ok(Self::Zero),
            Some(("const", c)) => Ok(Self::Const(number(c)?)),
            Some(("sinprod", a)) => Ok(Self::SinProd(number(a)?)),
            Some(("space", "sin")) => Ok(Self::Space(SpaceProfile::Sin)),
            Some(("space", "parabola")) => Ok(Self::Space(SpaceProfile::Parabola)),
            Some(("space", "ramp")) => Ok(Self::Space(SpaceProfile::Ramp)),
            _ => Err(bad()),
        }
    }
}

/// Itô forcing `Φ(t_n, ·) Δβ_n`, evaluated at the left endpoint `t_n`.
pub fn ito_forcing(phi: &NoiseField, t_n: f64, dbeta: f64, mesh: &Mesh) -> GridFunction {
    phi.sample(t_n, mesh).map(|v| v * dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_path() {
        let p = sample_brownian(3, 0, 0.1).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn rejects_non_positive_dt() {
        assert_eq!(sample_brownian(1, 4, 0.0), Err(NoiseError::TimeStep(0.0)));
        assert!(sample_brownian(1, 4, -1.0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_brownian(11, 100, 1e-2).unwrap();
        let b = sample_brownian(11, 100, 1e-2).unwrap();
        assert_eq!(a.increments(), b.increments());
        let c = sample_brownian(12, 100, 1e-2).unwrap();
        assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn increment_variance() {
        let dt = 1e-3;
        let p = sample_brownian(1, 10_000, dt).unwrap();
        let n = p.len() as f64;
        let mean = p.increments().iter().sum::<f64>() / n;
        let var = p.increments().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.9e-3..=1.1e-3).contains(&var), "variance {var}");
    }

    #[test]
    fn coarsening_preserves_endpoint_values() {
        let fine = sample_brownian(5, 64, 1.0 / 64.0).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.len(), 16);
        assert_eq!(coarse.coarsening(), 4);
        assert!((coarse.dt() - 1.0 / 16.0).abs() < 1e-15);
        for k in 0..=16 {
            assert!((coarse.value_at(k) - fine.value_at(4 * k)).abs() < 1e-12);
        }
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for stream in 0..4 {
            for i in 0..256 {
                assert!(seen.insert(derive_seed(42, stream, i)));
            }
        }
    }

    #[test]
    fn forcing_examples() {
        let m = Mesh::line(3).unwrap();
        assert!(ito_forcing(&NoiseField::Const(1.0), 0.0, 0.0, &m)
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(
            ito_forcing(&NoiseField::Const(1.0), 0.7, 0.3, &m).values(),
            &[0.3, 0.3, 0.3]
        );
        let sin = NoiseField::Space(SpaceProfile::Sin);
        let f = ito_forcing(&sin, 5.0, 2.0, &m);
        let expect = [
            2.0 * (PI / 4.0).sin(),
            2.0 * (PI / 2.0).sin(),
            2.0 * (3.0 * PI / 4.0).sin(),
        ];
        for (a, b) in f.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn registry_round_trip() {
        for name in [
            "zero",
            "const:0.2",
            "sinprod:1.5",
            "space:sin",
            "space:parabola",
            "space:ramp",
        ] {
            let field: NoiseField = name.parse().unwrap();
            assert_eq!(field.to_string(), name);
        }
        assert!("const:x".parse::<NoiseField>().is_err());
        assert!("space:wave".parse::<NoiseField>().is_err());
        assert!(!"sinprod:1".parse::<NoiseField>().unwrap().is_time_independent());
        assert!("space:sin".parse::<NoiseField>().unwrap().is_time_independent());
    }

    #[test]
    fn fields_respect_bound() {
        let m = Mesh::square(7).unwrap();
        for field in [
            NoiseField::Const(-0.4),
            NoiseField::SinProd(2.0),
            NoiseField::Space(SpaceProfile::Parabola),
            NoiseField::Space(SpaceProfile::Ramp),
        ] {
            for t in [0.0, 0.3, 0.9] {
                assert!(field.sample(t, &m).max_abs() <= field.bound() + 1e-15);
            }
        }
    }
}
