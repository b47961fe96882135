//! Discrete residuals of the Itô/renormalized identity and the Itô product
//! rule along computed trajectories, plus truncation energies and the
//! energy dissipation profile.
//!
//! Conventions shared by every evaluator:
//! * spatial integrals are `h^dim`-weighted node (or edge) sums;
//! * time integrals are left-endpoint Riemann sums on the trajectory grid;
//! * stochastic integrals are left-endpoint Itô sums `Σ (…)(t_n) Δβ_n`;
//! * nonlinearities needed on an edge are evaluated at the average of the
//!   two endpoint values (boundary ghosts read 0).

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{discrete_gradient, endpoint, EdgeField, GridFunction, Mesh};
use crate::initial::InitialDatum;
use crate::noise::{sample_brownian, NoiseError, NoiseField};
use crate::plap::PlapParams;
use crate::stats::mean_and_se;
use crate::stepper::{solve_path, SolverOptions, StepError, Trajectory};
use crate::truncation::{t_k, tilde_t_k, ScalarFamily};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("family `{family}` has S'(0) != 0, so the test function must vanish on the boundary")]
    InadmissiblePair { family: String },
    #[error("Z(0) = {z0} and Z'(0) = {dz0}; both must vanish")]
    InadmissibleZ { z0: f64, dz0: f64 },
    #[error("trajectories are not coupled: {0}")]
    MismatchedCoupling(&'static str),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("ensemble members do not share a discretization")]
    MismatchedEnsemble,
    #[error("truncation levels must be nonnegative and increasing")]
    Levels,
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),
}

/// Closed-form test functions `ψ(t, x)` with their time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Zero,
    One,
    /// `Π sin(π x_a)`
    Sin,
    /// `(1 + t) Π sin(π x_a)`
    SinTime,
}

impl TestFunction {
    fn sin_product(x: [f64; 2], dim: usize) -> f64 {
        x[..dim].iter().map(|c| (PI * c).sin()).product()
    }

    pub fn value(&self, t: f64, x: [f64; 2], dim: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::One => 1.0,
            Self::Sin => Self::sin_product(x, dim),
            Self::SinTime => (1.0 + t) * Self::sin_product(x, dim),
        }
    }

    pub fn time_derivative(&self, _t: f64, x: [f64; 2], dim: usize) -> f64 {
        match self {
            Self::Zero | Self::One | Self::Sin => 0.0,
            Self::SinTime => Self::sin_product(x, dim),
        }
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        !matches!(self, Self::One)
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Zero => "zero",
            Self::One => "one",
            Self::Sin => "sin",
            Self::SinTime => "sin_t",
        })
    }
}

impl FromStr for TestFunction {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Self::Zero),
            "one" => Ok(Self::One),
            "sin" => Ok(Self::Sin),
            "sin_t" => Ok(Self::SinTime),
            _ => Err(VerifyError::UnknownTestFunction(s.to_string())),
        }
    }
}

/// One named integral of an identity. Its contribution to `LHS - RHS` is
/// `sign * value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub name: &'static str,
    pub value: f64,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub label: String,
    pub t_eval: f64,
    pub dt: f64,
    pub h: f64,
    pub eps: f64,
    pub terms: Vec<Term>,
    /// `|LHS - RHS|`.
    pub residual: f64,
}

impl ResidualReport {
    fn new(label: String, traj: &Trajectory, t_eval: f64, terms: Vec<Term>) -> Self {
        let signed: f64 = terms.iter().map(|t| t.sign * t.value).sum();
        Self {
            label,
            t_eval,
            dt: traj.dt(),
            h: traj.mesh().spacing(),
            eps: traj.params().eps(),
            terms,
            residual: signed.abs(),
        }
    }

    /// Signed `LHS - RHS` recomputed from the breakdown.
    pub fn lhs_minus_rhs(&self) -> f64 {
        self.terms.iter().map(|t| t.sign * t.value).sum()
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// CSV with one row per report: `label,t,h,dt,eps,<terms…>,residual`.
/// All reports must carry the same terms.
pub fn write_reports_csv<W: Write>(reports: &[ResidualReport], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = reports.first() else {
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["label", "t", "h", "dt", "eps"];
    header.extend(first.terms.iter().map(|t| t.name));
    header.push("residual");
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.label.clone(),
            r.t_eval.to_string(),
            r.h.to_string(),
            r.dt.to_string(),
            r.eps.to_string(),
        ];
        row.extend(r.terms.iter().map(|t| t.value.to_string()));
        row.push(r.residual.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Endpoint positions of an edge, boundary points included.
fn edge_ends(mesh: &Mesh, mid: [f64; 2], axis: usize) -> ([f64; 2], [f64; 2]) {
    let half = 0.5 * mesh.spacing();
    let (mut lo, mut hi) = (mid, mid);
    lo[axis] -= half;
    hi[axis] += half;
    (lo, hi)
}

/// Residual of the renormalized identity
///
/// ```text
/// ∫ S(u(t))ψ(t) - S(u₀)ψ(0) + ∫∫ S''(u)|∇u|^p ψ + ∫∫ S'(u)|∇u|^{p-2}∇u·∇ψ
///   = ∫∫ S'(u)ψΦ dβ + ∫∫ S(u)ψ_t + ½ ∫∫ S''(u)ψΦ²
/// ```
///
/// between the trajectory start and `t_eval`.
pub fn renorm_residual(
    traj: &Trajectory,
    family: &ScalarFamily,
    psi: &TestFunction,
    t_eval: f64,
) -> Result<ResidualReport, VerifyError> {
    if family.d1(0.0) != 0.0 && !psi.vanishes_on_boundary() {
        return Err(VerifyError::InadmissiblePair { family: family.label() });
    }
    let last = traj.local_index(t_eval)?;
    let mesh = *traj.mesh();
    let dim = mesh.dim();
    let vol = mesh.cell_volume();
    let h = mesh.spacing();
    let dt = traj.dt();
    let params = traj.params();
    let phi = traj.phi();

    let (mut grad_psi, mut spp_grad) = (0.0, 0.0);
    let (mut ito, mut psi_t, mut spp_phi2) = (0.0, 0.0, 0.0);
    for n in 0..last {
        let u = &traj.states()[n];
        let t = traj.time(n);
        let grad = discrete_gradient(u);
        for (e, &g) in mesh.edges().zip(grad.values()) {
            let avg = 0.5 * (endpoint(u.values(), e.lo) + endpoint(u.values(), e.hi));
            let flux = params.flux(g);
            let (lo, hi) = edge_ends(&mesh, e.midpoint, e.axis);
            let dpsi = (psi.value(t, hi, dim) - psi.value(t, lo, dim)) / h;
            grad_psi += dt * vol * family.d1(avg) * flux * dpsi;
            spp_grad += dt * vol * family.d2(avg) * flux * g * psi.value(t, e.midpoint, dim);
        }
        let db = traj.increment(n);
        for (i, &ui) in u.values().iter().enumerate() {
            let x = mesh.node_coords(i);
            let f = phi.eval(t, x, dim);
            let p = psi.value(t, x, dim);
            ito += vol * family.d1(ui) * f * p * db;
            psi_t += dt * vol * family.value(ui) * psi.time_derivative(t, x, dim);
            spp_phi2 += 0.5 * dt * vol * family.d2(ui) * p * f * f;
        }
    }
    let endpoint_integral = |state: &GridFunction, t: f64| -> f64 {
        vol * state
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| family.value(v) * psi.value(t, mesh.node_coords(i), dim))
            .sum::<f64>()
    };
    let s_endpoints =
        endpoint_integral(&traj.states()[last], traj.time(last)) - endpoint_integral(traj.initial(), traj.time(0));

    let terms = vec![
        Term {
            name: "term_S_endpoints",
            value: s_endpoints,
            sign: 1.0,
        },
        Term {
            name: "term_grad_psi",
            value: grad_psi,
            sign: 1.0,
        },
        Term {
            name: "term_Spp_grad",
            value: spp_grad,
            sign: 1.0,
        },
        Term {
            name: "term_ito",
            value: ito,
            sign: -1.0,
        },
        Term {
            name: "term_psi_t",
            value: psi_t,
            sign: -1.0,
        },
        Term {
            name: "term_Spp_phi2",
            value: spp_phi2,
            sign: -1.0,
        },
    ];
    Ok(ResidualReport::new(
        format!("renorm:{}:{}", family.label(), psi),
        traj,
        t_eval,
        terms,
    ))
}

fn check_coupling(u: &Trajectory, v: &Trajectory) -> Result<(), VerifyError> {
    if u.mesh() != v.mesh() {
        return Err(VerifyError::MismatchedCoupling("meshes differ"));
    }
    if u.dt() != v.dt() || u.start_step() != v.start_step() || u.n_steps() != v.n_steps() {
        return Err(VerifyError::MismatchedCoupling("time grids differ"));
    }
    if u.path().increments() != v.path().increments() {
        return Err(VerifyError::MismatchedCoupling("noise paths differ"));
    }
    if u.phi() != v.phi() {
        return Err(VerifyError::MismatchedCoupling("noise fields differ"));
    }
    if u.params() != v.params() {
        return Err(VerifyError::MismatchedCoupling("operators differ"));
    }
    Ok(())
}

/// `-⟨F, ∇w⟩`: the duality pairing `⟨div F, w⟩` by summation by parts.
fn pair_with_divergence(flux: &[f64], w: &GridFunction) -> f64 {
    let grad = discrete_gradient(w);
    -w.mesh().cell_volume() * flux.iter().zip(grad.values()).map(|(f, g)| f * g).sum::<f64>()
}

/// Residual of the Itô product rule for two strong solutions driven by the
/// same noise:
///
/// ```text
/// (Z(u-v)(t), H(u(t))) = (Z(u₀-v₀), H(u₀))
///   + ∫⟨Δ_p u - Δ_p v, H(u)Z'(u-v)⟩ + ∫⟨Δ_p u, H'(u)Z(u-v)⟩
///   + ∫(ΦH'(u), Z(u-v)) dβ + ½∫∫ Φ²H''(u)Z(u-v)
/// ```
pub fn ito_product_residual(
    u_traj: &Trajectory,
    v_traj: &Trajectory,
    big_h: &ScalarFamily,
    big_z: &ScalarFamily,
    t_eval: f64,
) -> Result<ResidualReport, VerifyError> {
    check_coupling(u_traj, v_traj)?;
    let (z0, dz0) = (big_z.value(0.0), big_z.d1(0.0));
    if z0 != 0.0 || dz0 != 0.0 {
        return Err(VerifyError::InadmissibleZ { z0, dz0 });
    }
    let last = u_traj.local_index(t_eval)?;
    let mesh = *u_traj.mesh();
    let dim = mesh.dim();
    let vol = mesh.cell_volume();
    let dt = u_traj.dt();
    let params = u_traj.params();
    let phi = u_traj.phi();

    let (mut diff_plap, mut plap_hp, mut ito, mut hpp) = (0.0, 0.0, 0.0, 0.0);
    for n in 0..last {
        let u = &u_traj.states()[n];
        let v = &v_traj.states()[n];
        let t = u_traj.time(n);
        let d = u.sub(v).expect("coupled meshes");
        let flux_u: Vec<f64> = discrete_gradient(u).values().iter().map(|&g| params.flux(g)).collect();
        let flux_v: Vec<f64> = discrete_gradient(v).values().iter().map(|&g| params.flux(g)).collect();
        let flux_diff: Vec<f64> = flux_u.iter().zip(&flux_v).map(|(a, b)| a - b).collect();

        let w1 = u.zip_with(&d, |a, b| big_h.value(a) * big_z.d1(b)).expect("same mesh");
        let w2 = u.zip_with(&d, |a, b| big_h.d1(a) * big_z.value(b)).expect("same mesh");
        diff_plap += dt * pair_with_divergence(&flux_diff, &w1);
        plap_hp += dt * pair_with_divergence(&flux_u, &w2);

        let db = u_traj.increment(n);
        for i in 0..mesh.n_nodes() {
            let f = phi.eval(t, mesh.node_coords(i), dim);
            let (ui, di) = (u.values()[i], d.values()[i]);
            ito += vol * f * big_h.d1(ui) * big_z.value(di) * db;
            hpp += 0.5 * dt * vol * f * f * big_h.d2(ui) * big_z.value(di);
        }
    }
    let pairing = |u: &GridFunction, v: &GridFunction| -> f64 {
        vol * u
            .values()
            .iter()
            .zip(v.values())
            .map(|(&a, &b)| big_z.value(a - b) * big_h.value(a))
            .sum::<f64>()
    };
    let endpoints =
        pairing(&u_traj.states()[last], &v_traj.states()[last]) - pairing(u_traj.initial(), v_traj.initial());

    let terms = vec![
        Term {
            name: "term_ZH_endpoints",
            value: endpoints,
            sign: 1.0,
        },
        Term {
            name: "term_diff_plap",
            value: diff_plap,
            sign: -1.0,
        },
        Term {
            name: "term_plap_Hp",
            value: plap_hp,
            sign: -1.0,
        },
        Term {
            name: "term_ito",
            value: ito,
            sign: -1.0,
        },
        Term {
            name: "term_Hpp_phi2",
            value: hpp,
            sign: -1.0,
        },
    ];
    Ok(ResidualReport::new(
        format!("product:{}:{}", big_h.label(), big_z.label()),
        u_traj,
        t_eval,
        terms,
    ))
}

fn check_ensemble(ensemble: &[Trajectory]) -> Result<&Trajectory, VerifyError> {
    let first = ensemble.first().ok_or(VerifyError::EmptyEnsemble)?;
    let same = ensemble.iter().all(|t| {
        t.mesh() == first.mesh()
            && t.dt() == first.dt()
            && t.n_steps() == first.n_steps()
            && t.start_step() == first.start_step()
            && t.params() == first.params()
    });
    if same {
        Ok(first)
    } else {
        Err(VerifyError::MismatchedEnsemble)
    }
}

/// `∇_h T_k(u)`: nodal truncation, then the discrete gradient.
pub fn truncated_gradient(u: &GridFunction, k: f64) -> EdgeField {
    discrete_gradient(&u.map(|v| t_k(v, k)))
}

/// Generalized gradient on the edges lying inside `{|u| < k}` (both
/// endpoints, ghosts included); `None` elsewhere.
pub fn generalized_gradient(u: &GridFunction, k: f64) -> Vec<Option<f64>> {
    let grad = truncated_gradient(u, k);
    u.mesh()
        .edges()
        .zip(grad.values())
        .map(|(e, &g)| {
            let inside = endpoint(u.values(), e.lo).abs() < k && endpoint(u.values(), e.hi).abs() < k;
            inside.then_some(g)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationEnergy {
    pub k: f64,
    /// Monte Carlo mean of `∫∫ |∇T_k(u)|^p`.
    pub energy: f64,
    pub std_error: f64,
    /// Monte Carlo mean of the energy balance prediction
    /// `½∫∫ χ_{|u|<k} Φ² - ∫ (T̃_k(u(T)) - T̃_k(u₀))`.
    pub bound_surrogate: f64,
    pub n_paths: usize,
}

pub fn truncation_energy(ensemble: &[Trajectory], k: f64) -> Result<TruncationEnergy, VerifyError> {
    check_ensemble(ensemble)?;
    let per_path: Vec<(f64, f64)> = ensemble
        .par_iter()
        .map(|traj| {
            let mesh = *traj.mesh();
            let dim = mesh.dim();
            let vol = mesh.cell_volume();
            let dt = traj.dt();
            let p = traj.params().p();
            let mut energy = 0.0;
            let mut noise = 0.0;
            for n in 0..traj.n_steps() {
                let u = &traj.states()[n];
                let t = traj.time(n);
                energy += dt
                    * vol
                    * truncated_gradient(u, k)
                        .values()
                        .iter()
                        .map(|g| g.abs().powf(p))
                        .sum::<f64>();
                for (i, &ui) in u.values().iter().enumerate() {
                    if ui.abs() < k {
                        let f = traj.phi().eval(t, mesh.node_coords(i), dim);
                        noise += 0.5 * dt * vol * f * f;
                    }
                }
            }
            let tilde = |s: &GridFunction| vol * s.values().iter().map(|&v| tilde_t_k(v, k)).sum::<f64>();
            let surrogate = noise - (tilde(traj.last()) - tilde(traj.initial()));
            (energy, surrogate)
        })
        .collect();
    let energies: Vec<f64> = per_path.iter().map(|x| x.0).collect();
    let surrogates: Vec<f64> = per_path.iter().map(|x| x.1).collect();
    let (energy, std_error) = mean_and_se(&energies);
    let (bound_surrogate, _) = mean_and_se(&surrogates);
    Ok(TruncationEnergy {
        k,
        energy,
        std_error,
        bound_surrogate,
        n_paths: ensemble.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationRow {
    pub k: f64,
    pub value: f64,
    pub std_error: f64,
}

/// Mean of `∫∫_{k<|u|<k+1} |∇u|^p` per band. An edge belongs to the band
/// when both endpoint moduli lie in `(k, k+1)`.
pub fn dissipation_profile(ensemble: &[Trajectory], ks: &[f64]) -> Result<Vec<DissipationRow>, VerifyError> {
    check_ensemble(ensemble)?;
    if ks.iter().any(|&k| !(k >= 0.0)) || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(VerifyError::Levels);
    }
    let per_path: Vec<Vec<f64>> = ensemble
        .par_iter()
        .map(|traj| {
            let mesh = *traj.mesh();
            let w = traj.dt() * mesh.cell_volume();
            let p = traj.params().p();
            let mut bands = vec![0.0; ks.len()];
            for u in &traj.states()[..traj.n_steps()] {
                let grad = discrete_gradient(u);
                for (e, &g) in mesh.edges().zip(grad.values()) {
                    let a = endpoint(u.values(), e.lo).abs();
                    let b = endpoint(u.values(), e.hi).abs();
                    for (slot, &k) in bands.iter_mut().zip(ks) {
                        if k < a && a < k + 1.0 && k < b && b < k + 1.0 {
                            *slot += w * g.abs().powf(p);
                        }
                    }
                }
            }
            bands
        })
        .collect();
    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let samples: Vec<f64> = per_path.iter().map(|b| b[j]).collect();
            let (value, std_error) = mean_and_se(&samples);
            DissipationRow { k, value, std_error }
        })
        .collect())
}

/// Simultaneous `(h, dt)` refinement: level `i` uses `h₀/2^i` and `dt₀/4^i`,
/// all levels driven by one Brownian realization sampled on the finest grid
/// and summed onto the coarser ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    pub dim: usize,
    /// Interior nodes per axis on the coarsest level.
    pub n0: usize,
    pub dt0: f64,
    pub t_final: f64,
    pub levels: usize,
    pub params: PlapParams,
    pub phi: NoiseField,
    pub path_seed: u64,
    pub opts: SolverOptions,
}

impl Ladder {
    pub fn mesh(&self, level: usize) -> Result<Mesh, VerifyError> {
        let n = (self.n0 + 1) * (1 << level) - 1;
        Mesh::new(self.dim, n).map_err(|_| VerifyError::Levels)
    }

    pub fn dt(&self, level: usize) -> f64 {
        self.dt0 / 4f64.powi(level as i32)
    }

    /// Solves from `datum` on every level.
    pub fn trajectories(&self, datum: &InitialDatum) -> Result<Vec<Trajectory>, VerifyError> {
        let finest = self.levels.checked_sub(1).ok_or(VerifyError::Levels)?;
        let fine_dt = self.dt(finest);
        let fine_steps = crate::stepper::step_index(self.t_final, fine_dt)?;
        let fine = sample_brownian(self.path_seed, fine_steps, fine_dt)?;
        (0..self.levels)
            .into_par_iter()
            .map(|level| {
                let mesh = self.mesh(level)?;
                let path = fine.coarsen(1 << (2 * (finest - level)))?;
                let u0 = datum.build(&mesh);
                Ok(solve_path(
                    &u0,
                    0.0,
                    self.t_final,
                    &path,
                    &self.phi,
                    &self.params,
                    &self.opts,
                )?)
            })
            .collect()
    }

    pub fn renorm_reports(
        &self,
        datum: &InitialDatum,
        family: &ScalarFamily,
        psi: &TestFunction,
    ) -> Result<Vec<ResidualReport>, VerifyError> {
        self.trajectories(datum)?
            .iter()
            .map(|traj| renorm_residual(traj, family, psi, self.t_final))
            .collect()
    }

    pub fn product_reports(
        &self,
        u0: &InitialDatum,
        v0: &InitialDatum,
        big_h: &ScalarFamily,
        big_z: &ScalarFamily,
    ) -> Result<Vec<ResidualReport>, VerifyError> {
        let us = self.trajectories(u0)?;
        let vs = self.trajectories(v0)?;
        us.iter()
            .zip(&vs)
            .map(|(u, v)| ito_product_residual(u, v, big_h, big_z, self.t_final))
            .collect()
    }
}

/// True when each residual is strictly below the previous one.
pub fn strictly_decreasing(reports: &[ResidualReport]) -> bool {
    reports.windows(2).all(|w| w[1].residual < w[0].residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_brownian;

    fn trajectory(datum: InitialDatum, phi: NoiseField, p: f64, seed: u64) -> Trajectory {
        let mesh = Mesh::line(15).unwrap();
        let path = sample_brownian(seed, 16, 1.0 / 32.0).unwrap();
        let params = PlapParams::new(p, if p < 2.0 { 1e-3 } else { 0.0 }).unwrap();
        solve_path(
            &datum.build(&mesh),
            0.0,
            0.5,
            &path,
            &phi,
            &params,
            &SolverOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn constant_family_has_zero_residual() {
        let traj = trajectory(InitialDatum::Step(3.0), NoiseField::Const(0.5), 2.0, 1);
        for psi in [TestFunction::One, TestFunction::Sin] {
            let r = renorm_residual(&traj, &ScalarFamily::Const(2.5), &psi, 0.5).unwrap();
            assert!(r.residual <= 1e-12, "{psi}: {}", r.residual);
        }
    }

    #[test]
    fn zero_test_function_has_zero_residual() {
        let traj = trajectory(InitialDatum::Step(3.0), NoiseField::Const(0.5), 3.0, 2);
        let r = renorm_residual(&traj, &ScalarFamily::compact_s(1.0, 3.0), &TestFunction::Zero, 0.5).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn breakdown_sums_to_residual() {
        let traj = trajectory(InitialDatum::Eigenmode(3.0), NoiseField::Const(0.2), 2.0, 3);
        let r = renorm_residual(&traj, &ScalarFamily::compact_s(1.0, 3.0), &TestFunction::SinTime, 0.25).unwrap();
        assert!((r.lhs_minus_rhs().abs() - r.residual).abs() <= 1e-12);
        assert_eq!(r.terms.len(), 6);
        assert!(r.term("term_psi_t").unwrap() != 0.0);
    }

    #[test]
    fn admissibility_and_grid_errors() {
        let traj = trajectory(InitialDatum::Step(1.0), NoiseField::Zero, 2.0, 4);
        let s = ScalarFamily::TsSigma { s: 1.0, sigma: 0.5 };
        assert!(matches!(
            renorm_residual(&traj, &s, &TestFunction::One, 0.5),
            Err(VerifyError::InadmissiblePair { .. })
        ));
        assert!(renorm_residual(&traj, &s, &TestFunction::Sin, 0.5).is_ok());
        assert!(matches!(
            renorm_residual(&traj, &ScalarFamily::Const(1.0), &TestFunction::One, 0.3),
            Err(VerifyError::Step(StepError::OffGrid { .. }))
        ));
    }

    #[test]
    fn product_rule_trivial_cases() {
        let u = trajectory(InitialDatum::Step(2.0), NoiseField::Const(0.3), 2.0, 5);
        let v = trajectory(InitialDatum::Eigenmode(1.0), NoiseField::Const(0.3), 2.0, 5);
        let h = ScalarFamily::TsSigma { s: 1.0, sigma: 0.5 };
        let zero = ScalarFamily::Const(0.0);
        assert_eq!(ito_product_residual(&u, &v, &h, &zero, 0.5).unwrap().residual, 0.0);
        let z = ScalarFamily::compact_s(0.1, 1.0);
        let same = ito_product_residual(&u, &u, &h, &z, 0.5).unwrap();
        assert_eq!(same.residual, 0.0);
        assert!(same.terms.iter().all(|t| t.value == 0.0));
    }

    #[test]
    fn product_rule_errors() {
        let u = trajectory(InitialDatum::Step(2.0), NoiseField::Const(0.3), 2.0, 5);
        let other_path = trajectory(InitialDatum::Step(1.0), NoiseField::Const(0.3), 2.0, 6);
        let h = ScalarFamily::TsSigma { s: 1.0, sigma: 0.5 };
        let z = ScalarFamily::compact_s(0.1, 1.0);
        assert!(matches!(
            ito_product_residual(&u, &other_path, &h, &z, 0.5),
            Err(VerifyError::MismatchedCoupling(_))
        ));
        assert!(ito_product_residual(&u, &u, &h, &ScalarFamily::TildeTk(1.0), 0.5).is_ok());
        assert!(matches!(
            ito_product_residual(&u, &u, &h, &ScalarFamily::Const(1.0), 0.5),
            Err(VerifyError::InadmissibleZ { .. })
        ));
        assert!(matches!(
            ito_product_residual(&u, &u, &h, &ScalarFamily::Tk(1.0), 0.5),
            Err(VerifyError::InadmissibleZ { .. })
        ));
    }

    #[test]
    fn truncation_energy_trivial_cases() {
        let zero = trajectory(InitialDatum::Zero, NoiseField::Zero, 3.0, 1);
        let e = truncation_energy(&[zero.clone(), zero], 1.0).unwrap();
        assert_eq!(e.energy, 0.0);
        assert_eq!(e.bound_surrogate, 0.0);

        let ens: Vec<Trajectory> = (0..4)
            .map(|s| trajectory(InitialDatum::Step(2.0), NoiseField::Const(0.4), 2.0, s))
            .collect();
        let sup = ens
            .iter()
            .flat_map(|t| t.states().iter().map(|s| s.max_abs()))
            .fold(0.0, f64::max);
        let big = truncation_energy(&ens, sup + 1.0).unwrap();
        let bigger = truncation_energy(&ens, 10.0 * sup + 1.0).unwrap();
        assert_eq!(big.energy, bigger.energy);
        assert!(truncation_energy(&[], 1.0).is_err());
    }

    #[test]
    fn dissipation_profile_tail_and_sign() {
        let ens: Vec<Trajectory> = (0..4)
            .map(|s| trajectory(InitialDatum::Step(4.0), NoiseField::Const(0.4), 3.0, s))
            .collect();
        let sup = ens
            .iter()
            .flat_map(|t| t.states().iter().map(|s| s.max_abs()))
            .fold(0.0, f64::max);
        let ks: Vec<f64> = (0..8).map(f64::from).collect();
        let rows = dissipation_profile(&ens, &ks).unwrap();
        for r in &rows {
            assert!(r.value >= 0.0);
            if r.k >= sup {
                assert_eq!(r.value, 0.0);
            }
        }
        assert!(dissipation_profile(&ens, &[1.0, 0.5]).is_err());
        assert!(dissipation_profile(&ens, &[-1.0]).is_err());
    }

    #[test]
    fn generalized_gradient_is_level_independent() {
        let mesh = Mesh::square(9).unwrap();
        let u = InitialDatum::Random { amp: 3.0, seed: 8 }.build(&mesh);
        let k = 1.2;
        let base = generalized_gradient(&u, k);
        for kp in [1.3, 2.0, 5.0] {
            let wider = truncated_gradient(&u, kp);
            for (g, w) in base.iter().zip(wider.values()) {
                if let Some(g) = g {
                    assert_eq!(g, w);
                }
            }
        }
    }

    #[test]
    fn csv_header_names_terms() {
        let traj = trajectory(InitialDatum::Eigenmode(3.0), NoiseField::Const(0.2), 2.0, 3);
        let r = renorm_residual(&traj, &ScalarFamily::compact_s(1.0, 3.0), &TestFunction::One, 0.5).unwrap();
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "label,t,h,dt,eps,term_S_endpoints,term_grad_psi,term_Spp_grad,term_ito,term_psi_t,term_Spp_phi2,residual\n"
        ));
    }
}
