//! Basis families for linear-in-the-weights estimators.
//!
//! A family is an ordered list of non-constant units. Feature vectors always
//! start with the constant 1, so a family of `K` units has dimension `K + 1`.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Plateau fractions at or below this count as measure zero.
pub const QUALIFICATION_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;
pub const DEFAULT_GRID_POINTS: usize = 10_001;

pub const DEFAULT_SOFTPLUS_ALPHA: f64 = 2.0;
pub const DEFAULT_SOFTPLUS_QUANTILES: [f64; 4] = [0.1, 0.3, 0.7, 0.9];
pub const DEFAULT_POLYNOMIAL_DEGREE: usize = 5;
pub const DEFAULT_CONTROL_UNITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Rising,
    Falling,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Rising => 1.0,
            Sign::Falling => -1.0,
        }
    }

    pub fn from_int(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Sign::Rising),
            -1 => Ok(Sign::Falling),
            _ => Err(Error::validation(format!("unit sign must be +1 or -1, got {v}"))),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Rising => "+1",
            Sign::Falling => "-1",
        })
    }
}

/// One non-constant basis function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unit {
    /// `(1/alpha) * ln(1 + exp(1 + sign * alpha * (x - beta)))`
    Softplus { alpha: f64, beta: f64, sign: Sign },
    /// `x^degree`
    Monomial { degree: u32 },
    /// `max(0, sign * (x - beta))`
    Relu { beta: f64, sign: Sign },
    /// `1` where `sign * (x - beta) > 0`, else `0`.
    Step { beta: f64, sign: Sign },
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Unit {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Unit::Softplus { alpha, beta, sign } => {
                softplus(1.0 + sign.value() * alpha * (x - beta)) / alpha
            }
            Unit::Monomial { degree } => x.powi(degree as i32),
            Unit::Relu { beta, sign } => (sign.value() * (x - beta)).max(0.0),
            Unit::Step { beta, sign } => {
                if sign.value() * (x - beta) > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact derivative. ReLU kinks use the left derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Unit::Softplus { alpha, beta, sign } => {
                sign.value() * logistic(1.0 + sign.value() * alpha * (x - beta))
            }
            Unit::Monomial { degree } => match degree {
                0 => 0.0,
                1 => 1.0,
                n => n as f64 * x.powi(n as i32 - 1),
            },
            Unit::Relu { beta, sign } => match sign {
                Sign::Rising if x > beta => 1.0,
                Sign::Rising => 0.0,
                Sign::Falling if x <= beta => -1.0,
                Sign::Falling => 0.0,
            },
            Unit::Step { .. } => 0.0,
        }
    }

    fn kind(&self) -> FamilyKind {
        match self {
            Unit::Softplus { .. } => FamilyKind::Softplus,
            Unit::Monomial { .. } => FamilyKind::Polynomial,
            Unit::Relu { .. } => FamilyKind::ReluControl,
            Unit::Step { .. } => FamilyKind::PiecewiseConstantControl,
        }
    }

    /// Single-line `key=value` form used by the weight file.
    pub fn to_record(&self) -> String {
        match *self {
            Unit::Softplus { alpha, beta, sign } => {
                format!("softplus alpha={alpha:?} beta={beta:?} sign={sign}")
            }
            Unit::Monomial { degree } => format!("monomial degree={degree}"),
            Unit::Relu { beta, sign } => format!("relu beta={beta:?} sign={sign}"),
            Unit::Step { beta, sign } => format!("step beta={beta:?} sign={sign}"),
        }
    }

    /// Inverse of [`Unit::to_record`]. Errors carry a message only; callers add the line.
    pub fn from_record(text: &str) -> std::result::Result<Self, String> {
        let mut parts = text.split_whitespace();
        let tag = parts.next().ok_or("empty unit record")?;
        let mut alpha = None;
        let mut beta = None;
        let mut sign = None;
        let mut degree = None;
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("malformed unit field '{kv}'"))?;
            let num = || v.parse::<f64>().map_err(|_| format!("non-numeric {k} '{v}'"));
            match k {
                "alpha" => alpha = Some(num()?),
                "beta" => beta = Some(num()?),
                "sign" => {
                    let s: i64 = v.parse().map_err(|_| format!("invalid sign '{v}'"))?;
                    sign = Some(Sign::from_int(s).map_err(|e| e.to_string())?);
                }
                "degree" => {
                    degree = Some(v.parse::<u32>().map_err(|_| format!("invalid degree '{v}'"))?)
                }
                _ => return Err(format!("unknown unit field '{k}'")),
            }
        }
        let need = |name: &str| format!("{tag} unit is missing '{name}'");
        match tag {
            "softplus" => Ok(Unit::Softplus {
                alpha: alpha.ok_or_else(|| need("alpha"))?,
                beta: beta.ok_or_else(|| need("beta"))?,
                sign: sign.ok_or_else(|| need("sign"))?,
            }),
            "monomial" => Ok(Unit::Monomial {
                degree: degree.ok_or_else(|| need("degree"))?,
            }),
            "relu" => Ok(Unit::Relu {
                beta: beta.ok_or_else(|| need("beta"))?,
                sign: sign.ok_or_else(|| need("sign"))?,
            }),
            "step" => Ok(Unit::Step {
                beta: beta.ok_or_else(|| need("beta"))?,
                sign: sign.ok_or_else(|| need("sign"))?,
            }),
            other => Err(format!("unknown unit kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Softplus,
    Polynomial,
    ReluControl,
    PiecewiseConstantControl,
    /// Units of more than one kind.
    Mixed,
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::Softplus => "softplus",
            FamilyKind::Polynomial => "polynomial",
            FamilyKind::ReluControl => "relu-control",
            FamilyKind::PiecewiseConstantControl => "piecewise-constant-control",
            FamilyKind::Mixed => "mixed",
        })
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(FamilyKind::Softplus),
            "polynomial" => Ok(FamilyKind::Polynomial),
            "relu-control" | "relu" => Ok(FamilyKind::ReluControl),
            "piecewise-constant-control" | "step" => Ok(FamilyKind::PiecewiseConstantControl),
            other => Err(Error::validation(format!("unknown basis family '{other}'"))),
        }
    }
}

/// Constant function plus `K` units; feature dimension `K + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFamily {
    units: Vec<Unit>,
}

impl BasisFamily {
    pub fn from_units(units: Vec<Unit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::validation("a basis family needs at least one non-constant unit"));
        }
        let mut degrees = Vec::new();
        for unit in &units {
            match *unit {
                Unit::Softplus { alpha, beta, .. } => {
                    if !(alpha.is_finite() && alpha > 0.0) {
                        return Err(Error::validation(format!("softplus alpha must be > 0, got {alpha}")));
                    }
                    if !beta.is_finite() {
                        return Err(Error::validation("softplus beta must be finite"));
                    }
                }
                Unit::Monomial { degree } => {
                    if degree == 0 {
                        return Err(Error::validation("monomial degree must be >= 1"));
                    }
                    if degrees.contains(&degree) {
                        return Err(Error::validation(format!("duplicate monomial degree {degree}")));
                    }
                    degrees.push(degree);
                }
                Unit::Relu { beta, .. } | Unit::Step { beta, .. } => {
                    if !beta.is_finite() {
                        return Err(Error::validation("unit location beta must be finite"));
                    }
                }
            }
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    /// Number of non-constant units `K`.
    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    /// `K + 1`.
    pub fn dim(&self) -> usize {
        self.units.len() + 1
    }

    pub fn kind(&self) -> FamilyKind {
        let first = self.units[0].kind();
        if self.units.iter().all(|u| u.kind() == first) {
            first
        } else {
            FamilyKind::Mixed
        }
    }

    /// Index (into the feature vector) of the `x^1` unit, if present.
    pub fn linear_index(&self) -> Option<usize> {
        self.units
            .iter()
            .position(|u| matches!(u, Unit::Monomial { degree: 1 }))
            .map(|i| i + 1)
    }

    pub fn eval_features_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out[0] = 1.0;
        for (slot, unit) in out[1..].iter_mut().zip(&self.units) {
            *slot = unit.value(x);
        }
    }

    pub fn eval_features(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_features_into(x, &mut out);
        out
    }

    pub fn eval_feature_derivatives(&self, x: f64) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.units.iter().map(|u| u.derivative(x)))
            .collect()
    }
}

pub fn make_softplus_family(alphas: &[f64], betas: &[f64], signs: &[Sign]) -> Result<BasisFamily> {
    if alphas.len() != betas.len() || betas.len() != signs.len() {
        return Err(Error::validation(format!(
            "softplus parameter lists differ in length (alphas {}, betas {}, signs {})",
            alphas.len(),
            betas.len(),
            signs.len()
        )));
    }
    BasisFamily::from_units(
        alphas
            .iter()
            .zip(betas)
            .zip(signs)
            .map(|((&alpha, &beta), &sign)| Unit::Softplus { alpha, beta, sign })
            .collect(),
    )
}

pub fn make_polynomial_family(max_degree: usize) -> Result<BasisFamily> {
    if max_degree == 0 {
        return Err(Error::validation(
            "polynomial max_degree must be >= 1; a constant-only family cannot produce continuous estimates",
        ));
    }
    BasisFamily::from_units(
        (1..=max_degree as u32)
            .map(|degree| Unit::Monomial { degree })
            .collect(),
    )
}

fn paired_units(betas: &[f64], signs: &[Sign], f: impl Fn(f64, Sign) -> Unit) -> Result<BasisFamily> {
    if betas.len() != signs.len() {
        return Err(Error::validation(format!(
            "betas ({}) and signs ({}) differ in length",
            betas.len(),
            signs.len()
        )));
    }
    BasisFamily::from_units(betas.iter().zip(signs).map(|(&b, &s)| f(b, s)).collect())
}

pub fn make_relu_control_family(betas: &[f64], signs: &[Sign]) -> Result<BasisFamily> {
    paired_units(betas, signs, |beta, sign| Unit::Relu { beta, sign })
}

pub fn make_piecewise_constant_control_family(betas: &[f64], signs: &[Sign]) -> Result<BasisFamily> {
    paired_units(betas, signs, |beta, sign| Unit::Step { beta, sign })
}

/// Empirical quantile (linear interpolation between order statistics) of sorted data.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Recipe for building a family, possibly from data (unit locations at quantiles).
///
/// Unset fields fall back to the defaults of the chosen kind:
///
/// * `softplus`: `alpha = 2.0`; without explicit `betas`, one rising and one
///   falling unit at each of the quantile levels `0.1, 0.3, 0.7, 0.9`.
/// * `polynomial`: `degree = 5`.
/// * `relu-control` / `piecewise-constant-control`: `units = 8` rising units at
///   equally spaced quantile levels `i / (units + 1)`.
///
/// Quantiles are taken from the pooled coordinates of the training data, or
/// from the standard normal when no data is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signs: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
}

impl FamilySpec {
    pub fn of_kind(kind: FamilyKind) -> Self {
        Self {
            kind,
            degree: None,
            alpha: None,
            alphas: None,
            betas: None,
            signs: None,
            quantiles: None,
            units: None,
        }
    }

    pub fn softplus() -> Self {
        Self::of_kind(FamilyKind::Softplus)
    }

    pub fn polynomial(degree: usize) -> Self {
        Self {
            degree: Some(degree),
            ..Self::of_kind(FamilyKind::Polynomial)
        }
    }

    /// Builds the family. `data` is the pooled sample used for quantile placement.
    pub fn resolve(&self, data: Option<&[f64]>) -> Result<BasisFamily> {
        let locate = |levels: &[f64]| -> Result<Vec<f64>> {
            if let Some(&bad) = levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
                return Err(Error::validation(format!("quantile level {bad} is outside (0, 1)")));
            }
            match data {
                Some(values) if !values.is_empty() => {
                    let mut sorted = values.to_vec();
                    sorted.sort_by(f64::total_cmp);
                    Ok(levels.iter().map(|&l| quantile_sorted(&sorted, l)).collect())
                }
                _ => {
                    let normal = Normal::standard();
                    Ok(levels.iter().map(|&l| normal.inverse_cdf(l)).collect())
                }
            }
        };
        let signs = |n: usize| -> Result<Vec<Sign>> {
            match &self.signs {
                Some(s) if s.len() == n => s.iter().map(|&v| Sign::from_int(v)).collect(),
                Some(s) => Err(Error::validation(format!(
                    "{} signs given for {n} units",
                    s.len()
                ))),
                None => Ok(vec![Sign::Rising; n]),
            }
        };
        match self.kind {
            FamilyKind::Softplus => {
                let alpha = self.alpha.unwrap_or(DEFAULT_SOFTPLUS_ALPHA);
                let (betas, sgn) = match &self.betas {
                    Some(b) => {
                        if self.signs.is_none() {
                            return Err(Error::validation("explicit softplus betas need matching signs"));
                        }
                        (b.clone(), signs(b.len())?)
                    }
                    None => {
                        let levels = self
                            .quantiles
                            .clone()
                            .unwrap_or_else(|| DEFAULT_SOFTPLUS_QUANTILES.to_vec());
                        let q = locate(&levels)?;
                        let mut betas = q.clone();
                        betas.extend_from_slice(&q);
                        let mut sgn = vec![Sign::Rising; q.len()];
                        sgn.extend(std::iter::repeat_n(Sign::Falling, q.len()));
                        (betas, sgn)
                    }
                };
                let alphas = self.alphas.clone().unwrap_or_else(|| vec![alpha; betas.len()]);
                make_softplus_family(&alphas, &betas, &sgn)
            }
            FamilyKind::Polynomial => {
                make_polynomial_family(self.degree.unwrap_or(DEFAULT_POLYNOMIAL_DEGREE))
            }
            FamilyKind::ReluControl | FamilyKind::PiecewiseConstantControl => {
                let betas = match &self.betas {
                    Some(b) => b.clone(),
                    None => {
                        let levels = match &self.quantiles {
                            Some(q) => q.clone(),
                            None => {
                                let n = self.units.unwrap_or(DEFAULT_CONTROL_UNITS);
                                (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
                            }
                        };
                        locate(&levels)?
                    }
                };
                let sgn = signs(betas.len())?;
                if self.kind == FamilyKind::ReluControl {
                    make_relu_control_family(&betas, &sgn)
                } else {
                    make_piecewise_constant_control_family(&betas, &sgn)
                }
            }
            FamilyKind::Mixed => Err(Error::validation(
                "a mixed family cannot be built from a spec; list its units explicitly",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualificationReport {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    pub zero_tol: f64,
    /// Fraction of grid points where every non-constant unit is flat.
    pub plateau_fraction: f64,
    pub qualified: bool,
}

impl QualificationReport {
    pub fn into_result(self) -> Result<Self> {
        if self.qualified {
            Ok(self)
        } else {
            Err(Error::Qualification {
                lo: self.lo,
                hi: self.hi,
                plateau_fraction: self.plateau_fraction,
            })
        }
    }
}

/// Estimates the measure of the common zero set of all unit derivatives on `[lo, hi]`.
pub fn check_qualification(
    family: &BasisFamily,
    lo: f64,
    hi: f64,
    grid_points: usize,
    zero_tol: f64,
) -> Result<QualificationReport> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::validation(format!("degenerate interval [{lo}, {hi}]")));
    }
    if grid_points < 2 {
        return Err(Error::validation("qualification grid needs at least 2 points"));
    }
    if !(zero_tol > 0.0) {
        return Err(Error::validation("zero_tol must be > 0"));
    }
    let step = (hi - lo) / (grid_points - 1) as f64;
    let flat = (0..grid_points)
        .filter(|&i| {
            let x = if i + 1 == grid_points { hi } else { lo + step * i as f64 };
            family
                .units()
                .iter()
                .all(|u| u.derivative(x).abs() < zero_tol)
        })
        .count();
    let plateau_fraction = flat as f64 / grid_points as f64;
    Ok(QualificationReport {
        lo,
        hi,
        grid_points,
        zero_tol,
        plateau_fraction,
        qualified: plateau_fraction <= QUALIFICATION_THRESHOLD,
    })
}
