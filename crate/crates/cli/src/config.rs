//! Plain-text `key=value` experiment configuration. Blank lines and lines
//! starting with `#` are ignored, so a run manifest is itself a config.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use renorm_plap::markov::Observable;
use renorm_plap::noise::NoiseField;
use renorm_plap::stepper::step_index;
use renorm_plap::truncation::FamilyClass;
use renorm_plap::verifier::TestFunction;
use renorm_plap::{InitialDatum, Mesh, PlapParams, ScalarFamily, SolverOptions};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    DuplicateKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Invalid {
        key: &'static str,
        value: String,
        reason: String,
    },
    #[error("config is for command `{found}`, but `{expected}` was requested")]
    CommandMismatch { expected: Command, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    VerifyRenorm,
    VerifyProduct,
    VerifyEnergy,
    Markov,
    Regularizer,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::VerifyRenorm => "verify-renorm",
            Self::VerifyProduct => "verify-product",
            Self::VerifyEnergy => "verify-energy",
            Self::Markov => "markov",
            Self::Regularizer => "regularizer",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub dim: usize,
    /// Interior nodes per axis (coarsest level for the refinement ladder).
    pub n: usize,
    pub t_final: f64,
    /// Time step (coarsest level for the refinement ladder).
    pub dt: f64,
    pub r: f64,
    pub s: f64,
    pub p: f64,
    pub eps: f64,
    pub noise: NoiseField,
    pub seed: u64,
    pub initial: InitialDatum,
    pub initial2: InitialDatum,
    pub family: ScalarFamily,
    pub family2: ScalarFamily,
    pub test_function: TestFunction,
    pub observable: Observable,
    pub ensemble: usize,
    pub n_inner: usize,
    pub levels: usize,
    pub k_max: usize,
    pub reg_levels: Vec<usize>,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub out: PathBuf,
}

const KEYS: &[&str] = &[
    "command",
    "dim",
    "n",
    "t_final",
    "dt",
    "r",
    "s",
    "p",
    "eps",
    "noise",
    "seed",
    "initial",
    "initial2",
    "family",
    "family2",
    "test_function",
    "observable",
    "ensemble",
    "n_inner",
    "levels",
    "k_max",
    "reg_levels",
    "newton_tol",
    "max_newton_iters",
    "out",
];

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            dim: 1,
            n: 31,
            t_final: 0.5,
            dt: 1.0 / 64.0,
            r: 0.0,
            s: 0.25,
            p: 2.0,
            eps: 0.0,
            noise: NoiseField::Const(0.2),
            seed: 1,
            initial: InitialDatum::Eigenmode(3.0),
            initial2: InitialDatum::Eigenmode(1.0),
            family: ScalarFamily::compact_s(1.0, 3.0),
            family2: ScalarFamily::TildeTk(1.0),
            test_function: TestFunction::Sin,
            observable: Observable::TanhSin,
            ensemble: 16,
            n_inner: 16,
            levels: 3,
            k_max: 8,
            reg_levels: vec![4, 8, 16],
            newton_tol: 1e-10,
            max_newton_iters: 100,
            out: PathBuf::from("out"),
        }
    }

    /// Parses `text` over the defaults for `command` and validates the result.
    pub fn parse(text: &str, command: Command) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(command);
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
            seen.push(key.to_string());
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "command" => {
                if value != self.command.name() {
                    return Err(ConfigError::CommandMismatch {
                        expected: self.command,
                        found: value.to_string(),
                    });
                }
            }
            "dim" => self.dim = parse_int("dim", value)?,
            "n" => self.n = parse_int("n", value)?,
            "t_final" => self.t_final = parse_real("t_final", value)?,
            "dt" => self.dt = parse_real("dt", value)?,
            "r" => self.r = parse_real("r", value)?,
            "s" => self.s = parse_real("s", value)?,
            "p" => self.p = parse_real("p", value)?,
            "eps" => self.eps = parse_real("eps", value)?,
            "noise" => self.noise = parse_with("noise", value)?,
            "seed" => self.seed = parse_int("seed", value)?,
            "initial" => self.initial = parse_with("initial", value)?,
            "initial2" => self.initial2 = parse_with("initial2", value)?,
            "family" => self.family = parse_with("family", value)?,
            "family2" => self.family2 = parse_with("family2", value)?,
            "test_function" => self.test_function = parse_with("test_function", value)?,
            "observable" => self.observable = parse_with("observable", value)?,
            "ensemble" => self.ensemble = parse_int("ensemble", value)?,
            "n_inner" => self.n_inner = parse_int("n_inner", value)?,
            "levels" => self.levels = parse_int("levels", value)?,
            "k_max" => self.k_max = parse_int("k_max", value)?,
            "reg_levels" => {
                self.reg_levels = value
                    .split(',')
                    .map(|v| parse_int("reg_levels", v.trim()))
                    .collect::<Result<_, _>>()?
            }
            "newton_tol" => self.newton_tol = parse_real("newton_tol", value)?,
            "max_newton_iters" => self.max_newton_iters = parse_int("max_newton_iters", value)?,
            "out" => self.out = PathBuf::from(value),
            _ => unreachable!("keys are checked against KEYS"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mesh()?;
        self.params()?;
        self.opts()?;
        if !(self.dt > 0.0) {
            return Err(invalid("dt", self.dt, "must be positive"));
        }
        for (key, t) in [("t_final", self.t_final), ("r", self.r), ("s", self.s)] {
            if !(t >= 0.0) || step_index(t, self.dt).is_err() {
                return Err(invalid(key, t, "must be a nonnegative multiple of dt"));
            }
        }
        if !(self.r <= self.s && self.s <= self.t_final) {
            return Err(invalid("s", self.s, "need r <= s <= t_final"));
        }
        if self.ensemble < 2 {
            return Err(invalid("ensemble", self.ensemble, "need at least 2 members"));
        }
        if self.n_inner < 1 {
            return Err(invalid("n_inner", self.n_inner, "need at least 1 inner sample"));
        }
        if self.levels < 2 {
            return Err(invalid("levels", self.levels, "a ladder needs at least 2 levels"));
        }
        match self.command {
            Command::VerifyRenorm if self.family.class() == FamilyClass::Lipschitz => {
                return Err(invalid("family", self.family, "needs a W^{2,inf} family"));
            }
            Command::VerifyProduct => {
                for (key, fam) in [("family", self.family), ("family2", self.family2)] {
                    if fam.class() == FamilyClass::Lipschitz {
                        return Err(invalid(key, fam, "needs a W^{2,inf} family"));
                    }
                }
                if self.family2.value(0.0) != 0.0 || self.family2.d1(0.0) != 0.0 {
                    return Err(invalid("family2", self.family2, "Z(0) and Z'(0) must vanish"));
                }
            }
            Command::Regularizer if self.reg_levels.is_empty() || self.reg_levels.iter().any(|&l| l < 2) => {
                return Err(invalid(
                    "reg_levels",
                    self.reg_levels.len(),
                    "levels must be at least 2",
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<Mesh, ConfigError> {
        Mesh::new(self.dim, self.n).map_err(|e| ConfigError::Invalid {
            key: "n",
            value: format!("dim={} n={}", self.dim, self.n),
            reason: e.to_string(),
        })
    }

    pub fn params(&self) -> Result<PlapParams, ConfigError> {
        let params = PlapParams::new(self.p, self.eps).map_err(|e| invalid("p", self.p, e))?;
        params.require_regular().map_err(|e| invalid("eps", self.eps, e))?;
        Ok(params)
    }

    pub fn opts(&self) -> Result<SolverOptions, ConfigError> {
        SolverOptions::new(self.newton_tol, self.max_newton_iters)
            .map_err(|e| invalid("newton_tol", self.newton_tol, e))
    }

    /// Every key except `out`, one per line, in a fixed order. Parsing the
    /// echo reproduces the configuration exactly.
    pub fn echo(&self) -> String {
        let levels: Vec<String> = self.reg_levels.iter().map(|l| l.to_string()).collect();
        let pairs: [(&str, String); 24] = [
            ("command", self.command.to_string()),
            ("dim", self.dim.to_string()),
            ("n", self.n.to_string()),
            ("t_final", self.t_final.to_string()),
            ("dt", self.dt.to_string()),
            ("r", self.r.to_string()),
            ("s", self.s.to_string()),
            ("p", self.p.to_string()),
            ("eps", self.eps.to_string()),
            ("noise", self.noise.to_string()),
            ("seed", self.seed.to_string()),
            ("initial", self.initial.to_string()),
            ("initial2", self.initial2.to_string()),
            ("family", self.family.to_string()),
            ("family2", self.family2.to_string()),
            ("test_function", self.test_function.to_string()),
            ("observable", self.observable.to_string()),
            ("ensemble", self.ensemble.to_string()),
            ("n_inner", self.n_inner.to_string()),
            ("levels", self.levels.to_string()),
            ("k_max", self.k_max.to_string()),
            ("reg_levels", levels.join(",")),
            ("newton_tol", self.newton_tol.to_string()),
            ("max_newton_iters", self.max_newton_iters.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn invalid(key: &'static str, value: impl fmt::Display, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        key,
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_int<T: FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| invalid(key, value, e))
}

/// A finite real, written as a decimal or as a fraction `a/b`.
fn parse_real(key: &'static str, value: &str) -> Result<f64, ConfigError> {
    let parsed = match value.split_once('/') {
        Some((a, b)) => match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(a), Ok(b)) => Some(a / b),
            _ => None,
        },
        None => value.parse::<f64>().ok(),
    };
    parsed
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid(key, value, "expected a finite number"))
}

fn parse_with<T: FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| invalid(key, value, e))
}
