//! Campaign execution: every command computes its artifacts in memory, then
//! the orchestrator writes them and the manifest.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use renorm_plap::markov::{
    chapman_kolmogorov_check, contraction_check, e_property_check, feller_check, flow_check, homogeneity_check,
    write_checks_csv, CheckRow, MarkovError, MarkovSetup,
};
use renorm_plap::noise::{derive_seed, NoiseError};
use renorm_plap::regularizer::{
    apply_pi_n, build_cutoff, pi_n_convergence_report, write_report_csv, Discrepancy, RegularizerError,
};
use renorm_plap::stepper::{step_index, StepError};
use renorm_plap::verifier::{
    dissipation_profile, strictly_decreasing, truncation_energy, write_reports_csv, Ladder, ResidualReport, VerifyError,
};
use renorm_plap::{norm_lq, sample_brownian, solve_path, Trajectory};
use thiserror::Error;

use crate::config::{Command, ConfigError, ExperimentConfig};
use crate::manifest::write_manifest;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {0}")]
    Solver(#[from] StepError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Regularizer(#[from] RegularizerError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Checks and named artifacts of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub checks: Vec<CheckRow>,
    pub artifacts: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    pub fn failed(&self) -> Vec<&CheckRow> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn row(check: &str, params: String, value: f64, threshold: f64, passed: bool) -> CheckRow {
    CheckRow {
        check: check.to_string(),
        params,
        value,
        threshold,
        passed,
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, RunError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Runs the campaign and writes its artifacts, `checks.csv` and
/// `manifest.txt` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let outcome = compute(cfg)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(outcome.artifacts.len() + 1);
    for (name, bytes) in &outcome.artifacts {
        fs::write(out.join(name), bytes)?;
        written.push((name.clone(), bytes.clone()));
    }
    let checks = csv_bytes(|b| write_checks_csv(&outcome.checks, b))?;
    fs::write(out.join("checks.csv"), &checks)?;
    written.push(("checks.csv".to_string(), checks));
    write_manifest(cfg, &written, &out.join("manifest.txt"))?;
    Ok(outcome)
}

/// Runs the campaign without touching the file system.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    match cfg.command {
        Command::Simulate => simulate(cfg),
        Command::VerifyRenorm => verify_ladder(cfg, false),
        Command::VerifyProduct => verify_ladder(cfg, true),
        Command::VerifyEnergy => verify_energy(cfg),
        Command::Markov => markov(cfg),
        Command::Regularizer => regularizer(cfg),
    }
}

fn path_seed(cfg: &ExperimentConfig, index: u64) -> u64 {
    derive_seed(cfg.seed, 0, index)
}

fn solve_member(cfg: &ExperimentConfig, index: u64) -> Result<Trajectory, RunError> {
    let mesh = cfg.mesh()?;
    let path = sample_brownian(path_seed(cfg, index), step_index(cfg.t_final, cfg.dt)?, cfg.dt)?;
    let u0 = cfg.initial.build(&mesh);
    Ok(solve_path(
        &u0,
        cfg.r,
        cfg.t_final,
        &path,
        &cfg.noise,
        &cfg.params()?,
        &cfg.opts()?,
    )?)
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let traj = solve_member(cfg, 0)?;
    let worst = traj.residuals().iter().fold(0.0f64, |m, &r| m.max(r));
    let checks = vec![row(
        "newton_residual",
        format!("steps={}", traj.n_steps()),
        worst,
        cfg.newton_tol,
        worst <= cfg.newton_tol,
    )];
    let csv = csv_bytes(|b| traj.write_csv(b))?;
    Ok(Outcome {
        checks,
        artifacts: vec![("trajectory.csv".to_string(), csv)],
    })
}

fn ladder(cfg: &ExperimentConfig) -> Result<Ladder, RunError> {
    Ok(Ladder {
        dim: cfg.dim,
        n0: cfg.n,
        dt0: cfg.dt,
        t_final: cfg.t_final,
        levels: cfg.levels,
        params: cfg.params()?,
        phi: cfg.noise,
        path_seed: path_seed(cfg, 0),
        opts: cfg.opts()?,
    })
}

fn verify_ladder(cfg: &ExperimentConfig, product: bool) -> Result<Outcome, RunError> {
    let ladder = ladder(cfg)?;
    let reports: Vec<ResidualReport> = if product {
        ladder.product_reports(&cfg.initial, &cfg.initial2, &cfg.family, &cfg.family2)?
    } else {
        ladder.renorm_reports(&cfg.initial, &cfg.family, &cfg.test_function)?
    };
    let name = if product {
        "product_residual_decrease"
    } else {
        "renorm_residual_decrease"
    };
    let params = reports
        .iter()
        .map(|r| format!("h={}:dt={}", r.h, r.dt))
        .collect::<Vec<_>>()
        .join(";");
    let finest = reports.last().map_or(f64::NAN, |r| r.residual);
    let coarsest = reports.first().map_or(f64::NAN, |r| r.residual);
    let checks = vec![row(name, params, finest, coarsest, strictly_decreasing(&reports))];
    let csv = csv_bytes(|b| write_reports_csv(&reports, b))?;
    Ok(Outcome {
        checks,
        artifacts: vec![("residuals.csv".to_string(), csv)],
    })
}

fn ensemble(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>, RunError> {
    (0..cfg.ensemble as u64)
        .into_par_iter()
        .map(|j| solve_member(cfg, j))
        .collect()
}

/// Values of the last three bands with a nonzero mean, in order of `k`.
pub fn last_nonzero_bands(values: &[f64]) -> Vec<f64> {
    let nonzero: Vec<f64> = values.iter().copied().filter(|&v| v != 0.0).collect();
    nonzero[nonzero.len().saturating_sub(3)..].to_vec()
}

fn verify_energy(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let members = ensemble(cfg)?;
    let sup = members
        .iter()
        .flat_map(|t| t.states().iter().map(|s| s.max_abs()))
        .fold(0.0f64, f64::max);
    let ks: Vec<f64> = (0..=cfg.k_max).map(|k| k as f64).collect();
    let profile = dissipation_profile(&members, &ks)?;
    let energies = ks[1..]
        .iter()
        .map(|&k| truncation_energy(&members, k))
        .collect::<Result<Vec<_>, _>>()?;

    let min = profile.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let tail = profile
        .iter()
        .filter(|r| r.k > sup)
        .map(|r| r.value.abs())
        .fold(0.0f64, f64::max);
    let bands = last_nonzero_bands(&profile.iter().map(|r| r.value).collect::<Vec<_>>());
    let tail_monotone = bands.windows(2).all(|w| w[1] <= w[0]);
    let energy_monotone = energies.windows(2).all(|w| w[0].energy <= w[1].energy);
    let params = format!("paths={}:sup={sup}", members.len());
    let checks = vec![
        row("dissipation_nonnegative", params.clone(), min, 0.0, min >= 0.0),
        row("dissipation_zero_tail", params.clone(), tail, 0.0, tail == 0.0),
        row(
            "dissipation_tail_nonincreasing",
            format!("bands={}", bands.len()),
            bands.last().copied().unwrap_or(0.0),
            bands.first().copied().unwrap_or(0.0),
            tail_monotone,
        ),
        row(
            "truncation_energy_nondecreasing_in_k",
            params,
            energies.last().map_or(0.0, |e| e.energy),
            f64::INFINITY,
            energy_monotone,
        ),
    ];

    let dissipation = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["k", "value", "std_error"])?;
        for r in &profile {
            w.write_record([r.k.to_string(), r.value.to_string(), r.std_error.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let truncation = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["k", "energy", "std_error", "bound_surrogate", "n_paths"])?;
        for e in &energies {
            w.write_record([
                e.k.to_string(),
                e.energy.to_string(),
                e.std_error.to_string(),
                e.bound_surrogate.to_string(),
                e.n_paths.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(Outcome {
        checks,
        artifacts: vec![
            ("dissipation.csv".to_string(), dissipation),
            ("truncation.csv".to_string(), truncation),
        ],
    })
}

fn markov(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let mesh = cfg.mesh()?;
    let setup = MarkovSetup {
        params: cfg.params()?,
        phi: cfg.noise,
        opts: cfg.opts()?,
        dt: cfg.dt,
    };
    let slack = setup.solver_slack(&mesh);
    let x = cfg.initial.build(&mesh);
    let z = cfg.initial2.build(&mesh);
    let obs = &cfg.observable;
    let (r, s, t) = (cfg.r, cfg.s, cfg.t_final);
    let path = sample_brownian(path_seed(cfg, 0), step_index(t, cfg.dt)?, cfg.dt)?;
    let mut checks = Vec::new();

    let excess = contraction_check(&x, &z, &path, &setup.phi, &setup.params, &setup.opts, path.len())?;
    checks.push(row("contraction", format!("t={t}"), excess, slack, excess <= slack));

    let gap = flow_check(&x, r, s, t, &path, &setup.phi, &setup.params, &setup.opts)?;
    checks.push(row("flow", format!("r={r}:s={s}:t={t}"), gap, slack, gap <= slack));

    let ck = chapman_kolmogorov_check(obs, &x, r, s, t, cfg.ensemble, cfg.n_inner, cfg.seed, &setup)?;
    checks.push(row(
        "chapman_kolmogorov",
        format!("r={r}:s={s}:t={t}:outer={}:inner={}", cfg.ensemble, cfg.n_inner),
        ck.gap,
        4.0 * ck.combined_se,
        ck.within(4.0),
    ));

    if setup.phi.is_time_independent() {
        let h = homogeneity_check(obs, &x, s, t, cfg.ensemble, cfg.seed, false, &setup)?;
        checks.push(row(
            "homogeneity",
            format!("s={s}:t={t}:samples={}", cfg.ensemble),
            h.gap,
            4.0 * h.combined_se,
            h.within(4.0),
        ));
    }

    let e = e_property_check(obs, &x, &z, r, t, cfg.ensemble, cfg.seed, &setup)?;
    checks.push(row(
        "e_property",
        format!("r={r}:t={t}:bound={}", e.lipschitz_bound),
        e.excess,
        slack,
        e.excess <= slack,
    ));

    let scales = [0.5, 0.25, 0.125, 0.0625];
    let f = feller_check(obs, &x, &z, &scales, r, t, cfg.ensemble, cfg.seed, &setup)?;
    checks.push(row(
        "feller",
        format!("scales={}", scales.len()),
        f.gaps.last().copied().unwrap_or(0.0),
        f.gaps.first().copied().unwrap_or(0.0),
        f.nonincreasing(),
    ));

    Ok(Outcome {
        checks,
        artifacts: Vec::new(),
    })
}

/// Relative rounding allowance for norm inequalities that hold with
/// equality for nonnegative data supported away from the boundary.
pub const ROUNDING_ULPS: f64 = 4.0;

fn regularizer(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let mesh = cfg.mesh()?;
    let v = cfg.initial.build(&mesh);
    let norms = [Discrepancy::L1, Discrepancy::L2, Discrepancy::W1p(cfg.p)];
    let rows = pi_n_convergence_report(&v, &cfg.reg_levels, &norms)?;
    let mut checks = Vec::new();
    for &n in &cfg.reg_levels {
        let w = apply_pi_n(&v, n, &mesh)?;
        for q in [1.0, 2.0] {
            let before = norm_lq(&v, q).expect("q >= 1");
            let after = norm_lq(&w, q).expect("q >= 1");
            let bound = before * (1.0 + ROUNDING_ULPS * f64::EPSILON);
            checks.push(row("norm_bound", format!("n={n}:q={q}"), after, bound, after <= bound));
        }
        let slope = build_cutoff(n, &mesh)?.max_slope();
        let bound = 2.0 * n as f64;
        checks.push(row("cutoff_slope", format!("n={n}"), slope, bound, slope <= bound));
    }
    for norm in norms {
        let values: Vec<f64> = rows.iter().filter(|r| r.norm == norm).map(|r| r.discrepancy).collect();
        let decreasing = values.windows(2).all(|w| w[1] < w[0]);
        checks.push(row(
            "discrepancy_decrease",
            format!("norm={norm}"),
            values.last().copied().unwrap_or(0.0),
            values.first().copied().unwrap_or(0.0),
            decreasing,
        ));
    }
    let csv = csv_bytes(|b| write_report_csv(&rows, b))?;
    Ok(Outcome {
        checks,
        artifacts: vec![("regularizer.csv".to_string(), csv)],
    })
}
