//! Implicit Euler–Maruyama stepping.
//!
//! One step solves `v + dt A_h(v) = u_prev + forcing` as the minimizer of the
//! strictly convex functional
//! `J(v) = ½‖v - (u_prev + forcing)‖²_{ℓ²,h} + dt E(v)`
//! by damped Newton with Armijo backtracking on `J`.

use std::io::{Read, Write};

use thiserror::Error;

use crate::grid::{discrete_gradient, EdgeField, GridFunction, Mesh};
use crate::linalg::BandedSpd;
use crate::noise::{ito_forcing, BrownianPath, NoiseField};
use crate::plap::{apply_plap, PlapError, PlapParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("Newton did not converge{} after {iterations} iterations (residual {residual:e})",
        step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonConvergence {
        step: Option<usize>,
        iterations: usize,
        residual: f64,
    },
    #[error(transparent)]
    Plap(#[from] PlapError),
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("time {time} is not on the step grid of width {dt}")]
    OffGrid { time: f64, dt: f64 },
    #[error("end time {end} precedes start time {start}")]
    Backwards { start: f64, end: f64 },
    #[error("noise path has {available} increments, {needed} required")]
    PathTooShort { needed: usize, available: usize },
    #[error("state and forcing live on different meshes")]
    MeshMismatch,
    #[error("invalid solver options: {0}")]
    Options(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Sup-norm threshold on the implicit-step residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton_iters: 100,
        }
    }
}

impl SolverOptions {
    pub fn new(newton_tol: f64, max_newton_iters: usize) -> Result<Self, StepError> {
        let opts = Self {
            newton_tol,
            max_newton_iters,
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn validate(&self) -> Result<(), StepError> {
        if !(self.newton_tol > 0.0) {
            return Err(StepError::Options("newton_tol must be positive"));
        }
        if self.max_newton_iters == 0 {
            return Err(StepError::Options("max_newton_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Result of one implicit step with solver diagnostics.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: GridFunction,
    pub residual: f64,
    pub iterations: usize,
}

pub fn implicit_step(
    u_prev: &GridFunction,
    dt: f64,
    forcing: &GridFunction,
    params: &PlapParams,
    opts: &SolverOptions,
) -> Result<GridFunction, StepError> {
    implicit_step_report(u_prev, dt, forcing, params, opts).map(|o| o.state)
}

pub fn implicit_step_report(
    u_prev: &GridFunction,
    dt: f64,
    forcing: &GridFunction,
    params: &PlapParams,
    opts: &SolverOptions,
) -> Result<StepOutcome, StepError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(StepError::TimeStep(dt));
    }
    params.require_regular()?;
    opts.validate()?;
    let target = u_prev.add(forcing).map_err(|_| StepError::MeshMismatch)?;
    let mesh = *u_prev.mesh();
    let b = target.values();
    let inv_h2 = 1.0 / (mesh.spacing() * mesh.spacing());
    let bandwidth = if mesh.dim() == 1 { 1 } else { mesh.n_per_axis() };

    // J / h^dim, whose gradient is the residual v + dt A(v) - b.
    let objective = |v: &GridFunction| -> f64 {
        let fit: f64 = v.values().iter().zip(b).map(|(x, y)| 0.5 * (x - y) * (x - y)).sum();
        let grad = discrete_gradient(v);
        fit + dt * grad.values().iter().map(|&g| params.density(g)).sum::<f64>()
    };
    let residual_of = |v: &GridFunction| -> Result<Vec<f64>, StepError> {
        let a = apply_plap(v, params)?;
        Ok(v.values()
            .iter()
            .zip(a.values())
            .zip(b)
            .map(|((x, ax), y)| x + dt * ax - y)
            .collect())
    };

    let mut v = target.clone();
    let mut r = residual_of(&v)?;
    let mut iterations = 0;
    loop {
        let rnorm = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if rnorm <= opts.newton_tol {
            return Ok(StepOutcome {
                state: v,
                residual: rnorm,
                iterations,
            });
        }
        if iterations == opts.max_newton_iters {
            return Err(StepError::NonConvergence {
                step: None,
                iterations,
                residual: rnorm,
            });
        }
        iterations += 1;

        let grad = discrete_gradient(&v);
        let j0 = objective(&v);
        let descent = |slope: &dyn Fn(f64) -> f64| -> Option<(GridFunction, f64, f64)> {
            let dir = newton_direction(&mesh, &grad, &r, dt * inv_h2, slope, bandwidth)?;
            line_search(&v, &dir, &r, j0, &objective)
        };
        let mut best = descent(&|g| params.flux_slope(g));
        // For p < 2 the lagged-diffusion quadratic with weights m(g) majorizes
        // the energy; near the ε-kink its step makes far more progress than
        // Newton's, so both are tried and the lower objective wins.
        if params.p() < 2.0 {
            if let Some(lagged) = descent(&|g| params.weight(g)) {
                if best.as_ref().map_or(true, |b| lagged.2 < b.2) {
                    best = Some(lagged);
                }
            }
        }
        match best {
            Some((next, _, _)) => {
                v = next;
                r = residual_of(&v)?;
            }
            None => {
                return Err(StepError::NonConvergence {
                    step: None,
                    iterations,
                    residual: rnorm,
                })
            }
        }
    }
}

/// Solves `(I + c Gᵀ diag(slope(∇v)) G) d = -r` by banded Cholesky.
fn newton_direction(
    mesh: &Mesh,
    grad: &EdgeField,
    r: &[f64],
    c: f64,
    slope: &dyn Fn(f64) -> f64,
    bandwidth: usize,
) -> Option<Vec<f64>> {
    let mut jac = BandedSpd::zeros(mesh.n_nodes(), bandwidth);
    for i in 0..mesh.n_nodes() {
        jac.add(i, i, 1.0);
    }
    for (e, &g) in mesh.edges().zip(grad.values()) {
        let w = c * slope(g);
        if w == 0.0 {
            continue;
        }
        if let Some(lo) = e.lo {
            jac.add(lo, lo, w);
        }
        if let Some(hi) = e.hi {
            jac.add(hi, hi, w);
        }
        if let (Some(lo), Some(hi)) = (e.lo, e.hi) {
            jac.add(hi, lo, -w);
        }
    }
    let chol = jac.factor().ok()?;
    let mut dir: Vec<f64> = r.iter().map(|x| -x).collect();
    chol.solve(&mut dir);
    Some(dir)
}

/// Backtracking Armijo search; returns the accepted state, step length and
/// objective value.
fn line_search(
    v: &GridFunction,
    dir: &[f64],
    r: &[f64],
    j0: f64,
    objective: &dyn Fn(&GridFunction) -> f64,
) -> Option<(GridFunction, f64, f64)> {
    let slope: f64 = r.iter().zip(dir).map(|(a, d)| a * d).sum();
    let slack = 8.0 * f64::EPSILON * j0.abs();
    let mut alpha = 1.0;
    while alpha >= 1e-12 {
        let trial: Vec<f64> = v.values().iter().zip(dir).map(|(x, d)| x + alpha * d).collect();
        if let Ok(trial) = GridFunction::from_values(*v.mesh(), trial) {
            let j = objective(&trial);
            if j <= j0 + 1e-4 * alpha * slope + slack {
                return Some((trial, alpha, j));
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Index `k` with `k dt = time`, or `OffGrid`.
pub fn step_index(time: f64, dt: f64) -> Result<usize, StepError> {
    if !(dt > 0.0) {
        return Err(StepError::TimeStep(dt));
    }
    let k = (time / dt).round();
    if k < 0.0 || (k * dt - time).abs() > 1e-9 * time.abs().max(1.0) {
        return Err(StepError::OffGrid { time, dt });
    }
    Ok(k as usize)
}

/// States of one implicit solve on `[r, t]` with absolutely indexed noise.
#[derive(Debug, Clone)]
pub struct Trajectory {
    mesh: Mesh,
    params: PlapParams,
    phi: NoiseField,
    path: BrownianPath,
    start_step: usize,
    states: Vec<GridFunction>,
    residuals: Vec<f64>,
}

impl Trajectory {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn params(&self) -> &PlapParams {
        &self.params
    }

    pub fn phi(&self) -> &NoiseField {
        &self.phi
    }

    pub fn path(&self) -> &BrownianPath {
        &self.path
    }

    pub fn dt(&self) -> f64 {
        self.path.dt()
    }

    /// Absolute step index of `states()[0]`.
    pub fn start_step(&self) -> usize {
        self.start_step
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    pub fn initial(&self) -> &GridFunction {
        &self.states[0]
    }

    pub fn last(&self) -> &GridFunction {
        self.states.last().expect("trajectory holds its initial state")
    }

    /// Final Newton residual of each step.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Absolute time of `states()[i]`.
    pub fn time(&self, i: usize) -> f64 {
        (self.start_step + i) as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| self.time(i)).collect()
    }

    /// Brownian increment driving the step out of `states()[i]`.
    pub fn increment(&self, i: usize) -> f64 {
        self.path.increments()[self.start_step + i]
    }

    /// Local index of absolute time `t`.
    pub fn local_index(&self, t: f64) -> Result<usize, StepError> {
        let k = step_index(t, self.dt())?;
        if k < self.start_step || k - self.start_step >= self.states.len() {
            return Err(StepError::OffGrid { time: t, dt: self.dt() });
        }
        Ok(k - self.start_step)
    }

    pub fn state_at(&self, t: f64) -> Result<&GridFunction, StepError> {
        Ok(&self.states[self.local_index(t)?])
    }

    /// Writes `step,time,node_index,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "time", "node_index", "value"])?;
        for (i, state) in self.states.iter().enumerate() {
            let step = (self.start_step + i).to_string();
            let time = self.time(i).to_string();
            for (node, value) in state.values().iter().enumerate() {
                w.write_record([&step, &time, &node.to_string(), &value.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Sidecar metadata as `key=value` lines.
    pub fn write_metadata<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "seed={}", self.path.seed())?;
        writeln!(w, "p={}", self.params.p())?;
        writeln!(w, "eps={}", self.params.eps())?;
        writeln!(w, "dt={}", self.dt())?;
        writeln!(w, "h={}", self.mesh.spacing())?;
        writeln!(w, "phi={}", self.phi)?;
        writeln!(w, "dim={}", self.mesh.dim())?;
        writeln!(w, "n={}", self.mesh.n_per_axis())?;
        writeln!(w, "start_step={}", self.start_step)?;
        writeln!(w, "path_coarsening={}", self.path.coarsening())
    }
}

type CsvError = Box<dyn std::error::Error + Send + Sync>;

/// Reads back the states written by [`Trajectory::write_csv`] as
/// `(step, time, state)` triples.
pub fn read_trajectory_csv<R: Read>(reader: R, mesh: Mesh) -> Result<Vec<(usize, f64, GridFunction)>, CsvError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let step: usize = rec[0].parse()?;
        let time: f64 = rec[1].parse()?;
        let node: usize = rec[2].parse()?;
        let value: f64 = rec[3].parse()?;
        if out.last().map_or(true, |(s, _, _)| *s != step) {
            out.push((step, time, Vec::with_capacity(mesh.n_nodes())));
        }
        let values = &mut out.last_mut().expect("just pushed").2;
        if node != values.len() {
            return Err(format!("node {node} out of order at step {step}").into());
        }
        values.push(value);
    }
    out.into_iter()
        .map(|(s, t, v)| Ok((s, t, GridFunction::from_values(mesh, v)?)))
        .collect()
}

/// Solves from `u_r` at time `r` to time `t`, reading increments
/// `path[r/dt .. t/dt]`.
pub fn solve_path(
    u_r: &GridFunction,
    r: f64,
    t: f64,
    path: &BrownianPath,
    phi: &NoiseField,
    params: &PlapParams,
    opts: &SolverOptions,
) -> Result<Trajectory, StepError> {
    if t < r {
        return Err(StepError::Backwards { start: r, end: t });
    }
    let dt = path.dt();
    let start = step_index(r, dt)?;
    let end = step_index(t, dt)?;
    if end > path.len() {
        return Err(StepError::PathTooShort {
            needed: end,
            available: path.len(),
        });
    }
    params.require_regular()?;
    let mesh = *u_r.mesh();
    let mut states = Vec::with_capacity(end - start + 1);
    let mut residuals = Vec::with_capacity(end - start);
    states.push(u_r.clone());
    for n in start..end {
        let forcing = ito_forcing(phi, n as f64 * dt, path.increments()[n], &mesh);
        let prev = states.last().expect("nonempty");
        let out = implicit_step_report(prev, dt, &forcing, params, opts).map_err(|e| match e {
            StepError::NonConvergence {
                iterations, residual, ..
            } => StepError::NonConvergence {
                step: Some(n),
                iterations,
                residual,
            },
            other => other,
        })?;
        residuals.push(out.residual);
        states.push(out.state);
    }
    Ok(Trajectory {
        mesh,
        params: *params,
        phi: *phi,
        path: path.clone(),
        start_step: start,
        states,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{first_eigenvalue, InitialDatum};
    use crate::noise::sample_brownian;

    fn linear() -> PlapParams {
        PlapParams::new(2.0, 0.0).unwrap()
    }

    #[test]
    fn single_node_closed_form() {
        let m = Mesh::line(1).unwrap();
        let u = GridFunction::constant(m, 1.0);
        let v = implicit_step(&u, 0.1, &GridFunction::zeros(m), &linear(), &SolverOptions::default()).unwrap();
        assert!((v.values()[0] - 1.0 / 1.8).abs() < 1e-12);
    }

    #[test]
    fn zero_is_fixed_point() {
        let m = Mesh::square(5).unwrap();
        let z = GridFunction::zeros(m);
        for (p, eps) in [(1.5, 1e-3), (2.0, 0.0), (3.0, 0.0)] {
            let params = PlapParams::new(p, eps).unwrap();
            let v = implicit_step(&z, 0.05, &z, &params, &SolverOptions::default()).unwrap();
            assert!(v.values().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn eigenmode_resolvent() {
        for mesh in [Mesh::line(15).unwrap(), Mesh::square(7).unwrap()] {
            let u = InitialDatum::Eigenmode(1.0).build(&mesh);
            let lambda = first_eigenvalue(&mesh);
            let dt = 0.01;
            let v = implicit_step(&u, dt, &GridFunction::zeros(mesh), &linear(), &SolverOptions::default()).unwrap();
            for (a, b) in v.values().iter().zip(u.values()) {
                assert!((a - b / (1.0 + dt * lambda)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_below_tolerance_for_nonlinear_cases() {
        let m = Mesh::line(31).unwrap();
        let u = InitialDatum::Random { amp: 2.0, seed: 9 }.build(&m);
        let f = InitialDatum::Random { amp: 0.1, seed: 10 }.build(&m);
        let opts = SolverOptions::new(1e-11, 100).unwrap();
        for (p, eps) in [(1.5, 1e-3), (1.2, 1e-2), (3.0, 0.0), (5.0, 0.0)] {
            let params = PlapParams::new(p, eps).unwrap();
            let out = implicit_step_report(&u, 1.0 / 64.0, &f, &params, &opts).unwrap();
            assert!(out.residual <= 1e-11);
            let target = u.add(&f).unwrap();
            let a = apply_plap(&out.state, &params).unwrap();
            for i in 0..m.n_nodes() {
                let r = out.state.values()[i] + a.values()[i] / 64.0 - target.values()[i];
                assert!(r.abs() <= 1e-11, "p={p}: residual {r}");
            }
        }
    }

    #[test]
    fn nonconvergence_reported() {
        let m = Mesh::line(15).unwrap();
        let u = InitialDatum::Random { amp: 5.0, seed: 1 }.build(&m);
        let params = PlapParams::new(4.0, 0.0).unwrap();
        let opts = SolverOptions::new(1e-14, 1).unwrap();
        let err = implicit_step(&u, 1.0, &GridFunction::zeros(m), &params, &opts).unwrap_err();
        assert!(matches!(err, StepError::NonConvergence { iterations: 1, .. }));
    }

    #[test]
    fn rejects_singular_and_bad_dt() {
        let m = Mesh::line(3).unwrap();
        let z = GridFunction::zeros(m);
        let sing = PlapParams::new(1.5, 0.0).unwrap();
        assert!(matches!(
            implicit_step(&z, 0.1, &z, &sing, &SolverOptions::default()),
            Err(StepError::Plap(PlapError::Singular { .. }))
        ));
        assert_eq!(
            implicit_step(&z, 0.0, &z, &linear(), &SolverOptions::default()),
            Err(StepError::TimeStep(0.0))
        );
        assert!(SolverOptions::new(0.0, 3).is_err());
        assert!(SolverOptions::new(1e-8, 0).is_err());
    }

    #[test]
    fn trivial_and_eigen_paths() {
        let m = Mesh::line(15).unwrap();
        let u = InitialDatum::Eigenmode(1.0).build(&m);
        let dt = 1.0 / 32.0;
        let path = sample_brownian(3, 32, dt).unwrap();
        let opts = SolverOptions::default();
        let same = solve_path(&u, 0.25, 0.25, &path, &NoiseField::Const(1.0), &linear(), &opts).unwrap();
        assert_eq!(same.states().len(), 1);
        assert_eq!(same.initial(), &u);

        let traj = solve_path(&u, 0.0, 0.5, &path, &NoiseField::Zero, &linear(), &opts).unwrap();
        let lambda = first_eigenvalue(&m);
        for (n, state) in traj.states().iter().enumerate() {
            let decay = (1.0 + dt * lambda).powi(-(n as i32));
            for (a, b) in state.values().iter().zip(u.values()) {
                assert!((a - b * decay).abs() < 1e-12);
            }
        }
        assert_eq!(traj.n_steps(), 16);
        assert!((traj.time(16) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn restart_composes() {
        let m = Mesh::line(15).unwrap();
        let u = InitialDatum::Step(2.0).build(&m);
        let dt = 1.0 / 64.0;
        let path = sample_brownian(17, 64, dt).unwrap();
        let params = PlapParams::new(3.0, 0.0).unwrap();
        let phi = NoiseField::Const(0.3);
        let opts = SolverOptions::default();
        let direct = solve_path(&u, 0.125, 1.0, &path, &phi, &params, &opts).unwrap();
        let first = solve_path(&u, 0.125, 0.5, &path, &phi, &params, &opts).unwrap();
        let second = solve_path(first.last(), 0.5, 1.0, &path, &phi, &params, &opts).unwrap();
        let d = direct.state_at(1.0).unwrap();
        for (a, b) in d.values().iter().zip(second.last().values()) {
            assert!((a - b).abs() <= 10.0 * opts.newton_tol);
        }
        assert_eq!(direct.state_at(0.5).unwrap(), first.last());
    }

    #[test]
    fn solve_path_errors() {
        let m = Mesh::line(3).unwrap();
        let u = GridFunction::zeros(m);
        let path = sample_brownian(1, 8, 0.125).unwrap();
        let opts = SolverOptions::default();
        let phi = NoiseField::Zero;
        assert!(matches!(
            solve_path(&u, 0.5, 0.25, &path, &phi, &linear(), &opts),
            Err(StepError::Backwards { .. })
        ));
        assert!(matches!(
            solve_path(&u, 0.1, 0.5, &path, &phi, &linear(), &opts),
            Err(StepError::OffGrid { .. })
        ));
        assert!(matches!(
            solve_path(&u, 0.0, 2.0, &path, &phi, &linear(), &opts),
            Err(StepError::PathTooShort {
                needed: 16,
                available: 8
            })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let m = Mesh::line(7).unwrap();
        let u = InitialDatum::Random { amp: 1.0, seed: 4 }.build(&m);
        let path = sample_brownian(2, 8, 0.125).unwrap();
        let traj = solve_path(
            &u,
            0.25,
            1.0,
            &path,
            &NoiseField::Const(0.5),
            &linear(),
            &SolverOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,time,node_index,value\n2,0.25,0,"));
        let back = read_trajectory_csv(buf.as_slice(), m).unwrap();
        assert_eq!(back.len(), traj.states().len());
        for (i, (step, time, state)) in back.iter().enumerate() {
            assert_eq!(*step, traj.start_step() + i);
            assert_eq!(*time, traj.time(i));
            assert_eq!(state, &traj.states()[i]);
        }
        let mut meta = Vec::new();
        traj.write_metadata(&mut meta).unwrap();
        let meta = String::from_utf8(meta).unwrap();
        assert!(meta.contains("seed=2\n") && meta.contains("phi=const:0.5\n"));
    }
}
