//! Pathwise contraction and flow checks, and Monte Carlo estimates of the
//! transition semigroup `P_{s,t}φ(x) = E[φ(u(t, s, x))]` with
//! Chapman–Kolmogorov, time-homogeneity, e-property and Feller checks.
//!
//! Ensemble members run in parallel; every member's seed is derived up front
//! from `(master_seed, stream, index)` and results are aggregated in index
//! order, so every estimate is a deterministic function of its inputs.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{norm_lq, GridFunction, Mesh};
use crate::noise::{derive_seed, sample_brownian, BrownianPath, NoiseError, NoiseField};
use crate::plap::PlapParams;
use crate::stats::mean_and_se;
use crate::stepper::{solve_path, step_index, SolverOptions, StepError};

const STREAM_DIRECT: u64 = 0;
const STREAM_OUTER: u64 = 1;
const STREAM_INNER: u64 = 2;
const STREAM_SHIFTED: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("at least two samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("time homogeneity needs a time-independent noise field")]
    TimeDependentNoise,
    #[error("observable `{0}` has no Lipschitz constant")]
    NotLipschitz(String),
    #[error("initial data coincide")]
    CoincidentData,
    #[error("initial data live on different meshes")]
    MeshMismatch,
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
}

/// Bounded observables on grid functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    Const(f64),
    /// `min(‖w‖₁, cap)`
    ClippedL1(f64),
    /// `tanh(⟨w, e⟩)` with `e = Π sin(π x_a)`.
    TanhSin,
    /// `cos(⟨w, e⟩)` with `e = Π sin(π x_a)`.
    CosSin,
}

fn sin_moment(w: &GridFunction) -> f64 {
    let mesh = w.mesh();
    let dim = mesh.dim();
    mesh.cell_volume()
        * w.values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v * mesh.node_coords(i)[..dim]
                    .iter()
                    .map(|c| (PI * c).sin())
                    .product::<f64>()
            })
            .sum::<f64>()
}

impl Observable {
    pub fn eval(&self, w: &GridFunction) -> f64 {
        match *self {
            Self::Const(c) => c,
            Self::ClippedL1(cap) => norm_lq(w, 1.0).expect("q = 1 is valid").min(cap),
            Self::TanhSin => sin_moment(w).tanh(),
            Self::CosSin => sin_moment(w).cos(),
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            Self::Const(c) => c.abs(),
            Self::ClippedL1(cap) => cap,
            Self::TanhSin | Self::CosSin => 1.0,
        }
    }

    /// Lipschitz constant with respect to the discrete `L¹` norm.
    pub fn lipschitz_const(&self) -> Option<f64> {
        match self {
            Self::Const(_) => Some(0.0),
            Self::ClippedL1(_) | Self::TanhSin | Self::CosSin => Some(1.0),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Const(c) => write!(f, "const:{c}"),
            Self::ClippedL1(cap) => write!(f, "clipped_l1:{cap}"),
            Self::TanhSin => write!(f, "tanh_sin"),
            Self::CosSin => write!(f, "cos_sin"),
        }
    }
}

impl FromStr for Observable {
    type Err = MarkovError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MarkovError::UnknownObservable(s.to_string());
        let arg = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
        match s.split_once(':') {
            Some(("const", v)) => Ok(Self::Const(arg(v)?)),
            Some(("clipped_l1", v)) => Ok(Self::ClippedL1(arg(v)?).validated().ok_or_else(bad)?),
            None if s == "tanh_sin" => Ok(Self::TanhSin),
            None if s == "cos_sin" => Ok(Self::CosSin),
            _ => Err(bad()),
        }
    }
}

impl Observable {
    fn validated(self) -> Option<Self> {
        match self {
            Self::ClippedL1(cap) if !(cap > 0.0) => None,
            other => Some(other),
        }
    }
}

/// Model and discretization shared by every solve in a campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovSetup {
    pub params: PlapParams,
    pub phi: NoiseField,
    pub opts: SolverOptions,
    pub dt: f64,
}

impl MarkovSetup {
    /// `u(t, s, x)` along the path seeded with `seed`.
    pub fn evolve(&self, x: &GridFunction, s: f64, t: f64, seed: u64) -> Result<GridFunction, MarkovError> {
        let path = sample_brownian(seed, step_index(t, self.dt)?, self.dt)?;
        let traj = solve_path(x, s, t, &path, &self.phi, &self.params, &self.opts)?;
        Ok(traj.last().clone())
    }

    /// `10 · n_nodes · newton_tol`: the slack allowed for solver tolerance.
    pub fn solver_slack(&self, mesh: &Mesh) -> f64 {
        10.0 * mesh.n_nodes() as f64 * self.opts.newton_tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub s: f64,
    pub t: f64,
    pub master_seed: u64,
    pub observable: String,
}

/// Largest `‖u(t) - v(t)‖₁ - ‖u₀ - v₀‖₁` over `n_eval_times` evenly spaced
/// grid times of the path, both solves driven by the same path.
pub fn contraction_check(
    u0: &GridFunction,
    v0: &GridFunction,
    path: &BrownianPath,
    phi: &NoiseField,
    params: &PlapParams,
    opts: &SolverOptions,
    n_eval_times: usize,
) -> Result<f64, MarkovError> {
    if u0.mesh() != v0.mesh() {
        return Err(MarkovError::MeshMismatch);
    }
    let t_final = path.len() as f64 * path.dt();
    let u = solve_path(u0, 0.0, t_final, path, phi, params, opts)?;
    let v = solve_path(v0, 0.0, t_final, path, phi, params, opts)?;
    let l1 = |a: &GridFunction, b: &GridFunction| norm_lq(&a.sub(b).expect("same mesh"), 1.0).expect("q = 1");
    let initial = l1(u0, v0);
    let n = path.len();
    let evals = n_eval_times.clamp(1, n.max(1));
    let worst = (1..=evals)
        .map(|j| (j * n) / evals)
        .map(|i| l1(&u.states()[i], &v.states()[i]) - initial)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(worst)
}

/// `‖u(t, r, u_r) - u(t, s, u(s, r, u_r))‖₁`.
#[allow(clippy::too_many_arguments)]
pub fn flow_check(
    u_r: &GridFunction,
    r: f64,
    s: f64,
    t: f64,
    path: &BrownianPath,
    phi: &NoiseField,
    params: &PlapParams,
    opts: &SolverOptions,
) -> Result<f64, MarkovError> {
    let direct = solve_path(u_r, r, t, path, phi, params, opts)?;
    let mid = solve_path(u_r, r, s, path, phi, params, opts)?;
    let composed = solve_path(mid.last(), s, t, path, phi, params, opts)?;
    Ok(norm_lq(&direct.last().sub(composed.last()).expect("same mesh"), 1.0).expect("q = 1"))
}

#[allow(clippy::too_many_arguments)]
fn estimate_stream(
    obs: &Observable,
    x: &GridFunction,
    s: f64,
    t: f64,
    n_samples: usize,
    master_seed: u64,
    stream: u64,
    setup: &MarkovSetup,
) -> Result<SemigroupEstimate, MarkovError> {
    if n_samples < 2 {
        return Err(MarkovError::TooFewSamples(n_samples));
    }
    let samples: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|j| Ok(obs.eval(&setup.evolve(x, s, t, derive_seed(master_seed, stream, j))?)))
        .collect::<Result<_, MarkovError>>()?;
    let (value, std_error) = mean_and_se(&samples);
    Ok(SemigroupEstimate {
        value,
        std_error,
        n_samples,
        s,
        t,
        master_seed,
        observable: obs.to_string(),
    })
}

/// Monte Carlo estimate of `P_{s,t}φ(x)` over independent paths.
pub fn semigroup_estimate(
    obs: &Observable,
    x: &GridFunction,
    s: f64,
    t: f64,
    n_samples: usize,
    master_seed: u64,
    setup: &MarkovSetup,
) -> Result<SemigroupEstimate, MarkovError> {
    estimate_stream(obs, x, s, t, n_samples, master_seed, STREAM_DIRECT, setup)
}

/// Two estimates of one quantity and their combined standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub first: f64,
    pub second: f64,
    pub gap: f64,
    pub combined_se: f64,
}

impl GapReport {
    fn new(first: f64, se_first: f64, second: f64, se_second: f64) -> Self {
        Self {
            first,
            second,
            gap: (first - second).abs(),
            combined_se: se_first.hypot(se_second),
        }
    }

    /// Gap within `band` combined standard errors.
    pub fn within(&self, band: f64) -> bool {
        self.gap <= band * self.combined_se
    }
}

/// Compares the direct estimate of `P_{r,t}φ(x)` over `n_outer · n_inner`
/// paths with the nested estimate `P_{r,s}(P_{s,t}φ)(x)`: `n_outer` paths on
/// `[r, s]`, then `n_inner` fresh paths on `[s, t]` from each endpoint.
#[allow(clippy::too_many_arguments)]
pub fn chapman_kolmogorov_check(
    obs: &Observable,
    x: &GridFunction,
    r: f64,
    s: f64,
    t: f64,
    n_outer: usize,
    n_inner: usize,
    master_seed: u64,
    setup: &MarkovSetup,
) -> Result<GapReport, MarkovError> {
    if n_outer < 2 || n_inner < 1 {
        return Err(MarkovError::TooFewSamples(n_outer.min(n_inner)));
    }
    if s < r || t < s {
        return Err(StepError::Backwards { start: r, end: t }.into());
    }
    let direct = semigroup_estimate(obs, x, r, t, n_outer * n_inner, master_seed, setup)?;
    let inner_means: Vec<f64> = (0..n_outer as u64)
        .into_par_iter()
        .map(|j| {
            let y = setup.evolve(x, r, s, derive_seed(master_seed, STREAM_OUTER, j))?;
            let mut sum = 0.0;
            for i in 0..n_inner as u64 {
                let seed = derive_seed(master_seed, STREAM_INNER, j * n_inner as u64 + i);
                sum += obs.eval(&setup.evolve(&y, s, t, seed)?);
            }
            Ok(sum / n_inner as f64)
        })
        .collect::<Result<_, MarkovError>>()?;
    let (nested, nested_se) = mean_and_se(&inner_means);
    Ok(GapReport::new(direct.value, direct.std_error, nested, nested_se))
}

/// Compares estimates of `P_{s,t}φ(x)` and `P_{0,t-s}φ(x)`. With
/// `shared_seeds` both estimators draw the same per-sample seeds; otherwise
/// the shifted one uses an independent stream.
#[allow(clippy::too_many_arguments)]
pub fn homogeneity_check(
    obs: &Observable,
    x: &GridFunction,
    s: f64,
    t: f64,
    n_samples: usize,
    master_seed: u64,
    shared_seeds: bool,
    setup: &MarkovSetup,
) -> Result<GapReport, MarkovError> {
    if !setup.phi.is_time_independent() {
        return Err(MarkovError::TimeDependentNoise);
    }
    if t < s {
        return Err(StepError::Backwards { start: s, end: t }.into());
    }
    let shifted_stream = if shared_seeds { STREAM_DIRECT } else { STREAM_SHIFTED };
    let late = estimate_stream(obs, x, s, t, n_samples, master_seed, shifted_stream, setup)?;
    let early = semigroup_estimate(obs, x, 0.0, t - s, n_samples, master_seed, setup)?;
    Ok(GapReport::new(late.value, late.std_error, early.value, early.std_error))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EPropertyReport {
    pub difference: f64,
    pub lipschitz_bound: f64,
    /// `|P̂φ(x) - P̂φ(z)| - L‖x - z‖₁`.
    pub excess: f64,
}

/// Coupled estimates of `P_{s,t}φ` at `x` and `z` (same seeds for both).
#[allow(clippy::too_many_arguments)]
pub fn e_property_check(
    obs: &Observable,
    x: &GridFunction,
    z: &GridFunction,
    s: f64,
    t: f64,
    n_samples: usize,
    master_seed: u64,
    setup: &MarkovSetup,
) -> Result<EPropertyReport, MarkovError> {
    let lip = obs
        .lipschitz_const()
        .ok_or_else(|| MarkovError::NotLipschitz(obs.to_string()))?;
    let dist = norm_lq(&x.sub(z).map_err(|_| MarkovError::MeshMismatch)?, 1.0).expect("q = 1");
    let px = semigroup_estimate(obs, x, s, t, n_samples, master_seed, setup)?;
    let pz = semigroup_estimate(obs, z, s, t, n_samples, master_seed, setup)?;
    let difference = (px.value - pz.value).abs();
    let lipschitz_bound = lip * dist;
    Ok(EPropertyReport {
        difference,
        lipschitz_bound,
        excess: difference - lipschitz_bound,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FellerReport {
    pub scales: Vec<f64>,
    /// `|P̂φ(x + a_j δ) - P̂φ(x)|` per scale `a_j`.
    pub gaps: Vec<f64>,
}

impl FellerReport {
    pub fn nonincreasing(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Coupled estimates along the perturbations `x + a_j δ` for decreasing
/// scales `a_j`.
#[allow(clippy::too_many_arguments)]
pub fn feller_check(
    obs: &Observable,
    x: &GridFunction,
    delta: &GridFunction,
    scales: &[f64],
    s: f64,
    t: f64,
    n_samples: usize,
    master_seed: u64,
    setup: &MarkovSetup,
) -> Result<FellerReport, MarkovError> {
    let base = semigroup_estimate(obs, x, s, t, n_samples, master_seed, setup)?;
    let gaps = scales
        .iter()
        .map(|&a| {
            let xj = x
                .zip_with(delta, |u, d| u + a * d)
                .map_err(|_| MarkovError::MeshMismatch)?;
            let est = semigroup_estimate(obs, &xj, s, t, n_samples, master_seed, setup)?;
            Ok((est.value - base.value).abs())
        })
        .collect::<Result<_, MarkovError>>()?;
    Ok(FellerReport {
        scales: scales.to_vec(),
        gaps,
    })
}

/// One row of a campaign report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub params: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// CSV with header `check,params,value,threshold,passed`.
pub fn write_checks_csv<W: Write>(rows: &[CheckRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["check", "params", "value", "threshold", "passed"])?;
    for r in rows {
        w.write_record([
            r.check.clone(),
            r.params.clone(),
            r.value.to_string(),
            r.threshold.to_string(),
            r.passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
