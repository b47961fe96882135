//! Scalar nonlinearities used by the renormalized formulation: truncations,
//! their primitives, cutoffs and the smooth renormalization families.
//!
//! Every family exposes value, first and second derivative analytically,
//! plus the list of breakpoints where a derivative may jump, so quadratures
//! can stay off the kinks.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown scalar family `{0}`")]
pub struct UnknownFamily(pub String);

/// `T_k(r)`: identity on `[-k, k]`, clamped to `±k` outside.
pub fn t_k(r: f64, k: f64) -> f64 {
    r.clamp(-k, k)
}

pub fn t_k_d1(r: f64, k: f64) -> f64 {
    if r.abs() < k {
        1.0
    } else {
        0.0
    }
}

/// `∫_0^s T_k(r) dr`.
pub fn tilde_t_k(s: f64, k: f64) -> f64 {
    let a = s.abs();
    if a <= k {
        0.5 * s * s
    } else {
        k * a - 0.5 * k * k
    }
}

/// `T_{k+kp}(r) - T_k(r)`.
pub fn theta(r: f64, k: f64, kp: f64) -> f64 {
    let a = r.abs();
    r.signum() * (a - k).clamp(0.0, kp)
}

fn theta_d1(r: f64, k: f64, kp: f64) -> f64 {
    let a = r.abs();
    if k < a && a < k + kp {
        1.0
    } else {
        0.0
    }
}

/// Plateau cutoff: 1 on `|r| ≤ l`, linear down to 0 at `|r| = l + 1`.
pub fn h_l(r: f64, l: f64) -> f64 {
    let a = r.abs();
    if a <= l {
        1.0
    } else if a < l + 1.0 {
        l + 1.0 - a
    } else {
        0.0
    }
}

fn h_l_d1(r: f64, l: f64) -> f64 {
    let a = r.abs();
    if l < a && a < l + 1.0 {
        -r.signum()
    } else {
        0.0
    }
}

pub fn t_s_sigma(r: f64, s: f64, sigma: f64) -> f64 {
    let a = r.abs();
    let v = if a <= s {
        a
    } else if a < s + sigma {
        let x = a - s;
        s + x - 0.5 * x * x / sigma
    } else {
        s + 0.5 * sigma
    };
    r.signum() * v
}

pub fn t_s_sigma_d1(r: f64, s: f64, sigma: f64) -> f64 {
    let a = r.abs();
    if a <= s {
        1.0
    } else if a < s + sigma {
        (s + sigma - a) / sigma
    } else {
        0.0
    }
}

pub fn t_s_sigma_d2(r: f64, s: f64, sigma: f64) -> f64 {
    let a = r.abs();
    if s < a && a < s + sigma {
        -r.signum() / sigma
    } else {
        0.0
    }
}

/// `(H_k^δ)''`: 1 inside `(-k, k)`, `-kδ` on `k ≤ |r| ≤ k + 1/δ`, 0 beyond.
pub fn hk_delta_d2(r: f64, k: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a < k {
        1.0
    } else if a <= k + 1.0 / delta {
        -k * delta
    } else {
        0.0
    }
}

/// Regularity a family certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyClass {
    /// `W^{1,∞}`: the first derivative jumps, the second is zero a.e.
    Lipschitz,
    /// `W^{2,∞}` with piecewise continuous second derivative.
    W2Inf,
    /// `C^∞`.
    Smooth,
}

/// A scalar nonlinearity with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFamily {
    Const(f64),
    Tk(f64),
    TildeTk(f64),
    Theta {
        k: f64,
        kp: f64,
    },
    Hl(f64),
    TsSigma {
        s: f64,
        sigma: f64,
    },
    /// `S(r) = ∫_0^r h_l(τ) θ(τ, k, 1) dτ`.
    CompactS {
        k: f64,
        l: f64,
    },
}

impl ScalarFamily {
    pub fn compact_s(k: f64, l: f64) -> Self {
        Self::CompactS { k, l }
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Self::Const(c) => c,
            Self::Tk(k) => t_k(r, k),
            Self::TildeTk(k) => tilde_t_k(r, k),
            Self::Theta { k, kp } => theta(r, k, kp),
            Self::Hl(l) => h_l(r, l),
            Self::TsSigma { s, sigma } => t_s_sigma(r, s, sigma),
            Self::CompactS { .. } => self.compact_s_value(r),
        }
    }

    pub fn d1(&self, r: f64) -> f64 {
        match *self {
            Self::Const(_) => 0.0,
            Self::Tk(k) => t_k_d1(r, k),
            Self::TildeTk(k) => t_k(r, k),
            Self::Theta { k, kp } => theta_d1(r, k, kp),
            Self::Hl(l) => h_l_d1(r, l),
            Self::TsSigma { s, sigma } => t_s_sigma_d1(r, s, sigma),
            Self::CompactS { k, l } => h_l(r, l) * theta(r, k, 1.0),
        }
    }

    pub fn d2(&self, r: f64) -> f64 {
        match *self {
            Self::Const(_) | Self::Tk(_) | Self::Theta { .. } | Self::Hl(_) => 0.0,
            Self::TildeTk(k) => t_k_d1(r, k),
            Self::TsSigma { s, sigma } => t_s_sigma_d2(r, s, sigma),
            Self::CompactS { k, l } => h_l_d1(r, l) * theta(r, k, 1.0) + h_l(r, l) * theta_d1(r, k, 1.0),
        }
    }

    /// Points where `d1` or `d2` may be discontinuous, ascending.
    pub fn breakpoints(&self) -> Vec<f64> {
        let half: Vec<f64> = match *self {
            Self::Const(_) => vec![],
            Self::Tk(k) | Self::TildeTk(k) => vec![k],
            Self::Theta { k, kp } => vec![k, k + kp],
            Self::Hl(l) => vec![l, l + 1.0],
            Self::TsSigma { s, sigma } => vec![s, s + sigma],
            Self::CompactS { k, l } => vec![k, k + 1.0, l, l + 1.0],
        };
        let mut pts: Vec<f64> = half.iter().flat_map(|&b| [-b, b]).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Radius beyond which `d1` vanishes, `None` if unbounded.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            Self::Const(_) => Some(0.0),
            Self::Tk(k) => Some(k),
            Self::TildeTk(_) => None,
            Self::Theta { k, kp } => Some(k + kp),
            Self::Hl(l) => Some(l + 1.0),
            Self::TsSigma { s, sigma } => Some(s + sigma),
            Self::CompactS { l, .. } => Some(l + 1.0),
        }
    }

    pub fn class(&self) -> FamilyClass {
        match self {
            Self::Const(_) => FamilyClass::Smooth,
            Self::Tk(_) | Self::Theta { .. } | Self::Hl(_) => FamilyClass::Lipschitz,
            Self::TildeTk(_) | Self::TsSigma { .. } | Self::CompactS { .. } => FamilyClass::W2Inf,
        }
    }

    /// Registry name, e.g. `compact_s:1:3`.
    pub fn label(&self) -> String {
        self.to_string()
    }

    /// `d1` has compact support and vanishes at the origin.
    pub fn is_renormalizing(&self) -> bool {
        self.support_radius().is_some() && self.d1(0.0) == 0.0
    }

    fn compact_s_value(&self, r: f64) -> f64 {
        let Self::CompactS { k, l } = *self else { unreachable!() };
        // d1 is odd and at most quadratic between breakpoints, so Simpson on
        // each piece integrates it exactly; the value is even.
        let a = r.abs();
        let mut cuts: Vec<f64> = [k, k + 1.0, l, l + 1.0]
            .into_iter()
            .filter(|&b| b > 0.0 && b < a)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.insert(0, 0.0);
        cuts.push(a);
        cuts.windows(2)
            .map(|w| {
                let (x0, x1) = (w[0], w[1]);
                let xm = 0.5 * (x0 + x1);
                (x1 - x0) / 6.0 * (self.d1(x0) + 4.0 * self.d1(xm) + self.d1(x1))
            })
            .sum()
    }
}

impl fmt::Display for ScalarFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Const(c) => write!(f, "const:{c}"),
            Self::Tk(k) => write!(f, "tk:{k}"),
            Self::TildeTk(k) => write!(f, "tilde_tk:{k}"),
            Self::Theta { k, kp } => write!(f, "theta:{k}:{kp}"),
            Self::Hl(l) => write!(f, "hl:{l}"),
            Self::TsSigma { s, sigma } => write!(f, "tssigma:{s}:{sigma}"),
            Self::CompactS { k, l } => write!(f, "compact_s:{k}:{l}"),
        }
    }
}

impl FromStr for ScalarFamily {
    type Err = UnknownFamily;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UnknownFamily(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let args: Vec<f64> = parts[1..]
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        let positive = |i: usize| args.get(i).copied().filter(|&x| x > 0.0).ok_or_else(bad);
        let family = match (parts[0], args.len()) {
            ("const", 1) => Self::Const(args[0]),
            ("tk", 1) => Self::Tk(positive(0)?),
            ("tilde_tk", 1) => Self::TildeTk(positive(0)?),
            ("theta", 2) => Self::Theta {
                k: positive(0)?,
                kp: positive(1)?,
            },
            ("hl", 1) => Self::Hl(positive(0)?),
            ("tssigma", 2) => Self::TsSigma {
                s: positive(0)?,
                sigma: positive(1)?,
            },
            ("compact_s", 2) => Self::CompactS {
                k: positive(0)?,
                l: positive(1)?,
            },
            _ => return Err(bad()),
        };
        Ok(family)
    }
}
