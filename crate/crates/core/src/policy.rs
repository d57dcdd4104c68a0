//! Estimator pair, max-scheduling, channel message and receiver reconstruction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::basis::{BasisFamily, Unit};
use crate::error::{Error, Result};
use crate::source::GaussianSourceSpec;

/// Inner product accumulated left to right. Every cost path uses this so that
/// the min-formula cost and the reconstruction cost agree bit for bit.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `w1` estimates `x1` from `x2`; `w2` estimates `x2` from `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair {
    family: BasisFamily,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Seed of the dataset the pair was fitted on, if any.
    pub train_seed: Option<u64>,
}

impl WeightPair {
    pub fn new(family: BasisFamily, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self> {
        let dim = family.dim();
        if w1.len() != dim || w2.len() != dim {
            return Err(Error::validation(format!(
                "weight vectors have lengths {} and {}, family dimension is {dim}",
                w1.len(),
                w2.len()
            )));
        }
        if w1.iter().chain(&w2).any(|v| !v.is_finite()) {
            return Err(Error::validation("weights must be finite"));
        }
        Ok(Self {
            family,
            w1,
            w2,
            train_seed: None,
        })
    }

    pub fn zeros(family: BasisFamily) -> Self {
        let dim = family.dim();
        Self {
            family,
            w1: vec![0.0; dim],
            w2: vec![0.0; dim],
            train_seed: None,
        }
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    /// `eta1(x2)`.
    pub fn eta1(&self, x2: f64) -> f64 {
        dot(&self.w1, &self.family.eval_features(x2))
    }

    /// `eta2(x1)`.
    pub fn eta2(&self, x1: f64) -> f64 {
        dot(&self.w2, &self.family.eval_features(x1))
    }

    /// Both weight vectors concatenated, `w1` first.
    pub fn flat(&self) -> Vec<f64> {
        self.w1.iter().chain(&self.w2).copied().collect()
    }

    /// The same estimators with the roles of the two sources exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            family: self.family.clone(),
            w1: self.w2.clone(),
            w2: self.w1.clone(),
            train_seed: self.train_seed,
        }
    }
}

pub fn estimate(weights: &[f64], family: &BasisFamily, x: f64) -> Result<f64> {
    if weights.len() != family.dim() {
        return Err(Error::validation(format!(
            "weight length {} does not match family dimension {}",
            weights.len(),
            family.dim()
        )));
    }
    Ok(dot(weights, &family.eval_features(x)))
}

/// Which source the scheduler reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulingDecision {
    SendX1,
    SendX2,
}

impl SchedulingDecision {
    pub fn index(self) -> u8 {
        match self {
            SchedulingDecision::SendX1 => 1,
            SchedulingDecision::SendX2 => 2,
        }
    }
}

/// Max-scheduling: send `x1` when withholding it would cost at least as much
/// as withholding `x2`. Exact ties send `x1`.
pub fn decide(e1_sq: f64, e2_sq: f64) -> SchedulingDecision {
    if e1_sq >= e2_sq {
        SchedulingDecision::SendX1
    } else {
        SchedulingDecision::SendX2
    }
}

pub fn schedule(pair: &WeightPair, x1: f64, x2: f64) -> SchedulingDecision {
    let e1 = x1 - pair.eta1(x2);
    let e2 = x2 - pair.eta2(x1);
    decide(e1 * e1, e2 * e2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMessage {
    pub source: SchedulingDecision,
    pub value: f64,
}

pub fn transmit(x1: f64, x2: f64, u: SchedulingDecision) -> ChannelMessage {
    let value = match u {
        SchedulingDecision::SendX1 => x1,
        SchedulingDecision::SendX2 => x2,
    };
    ChannelMessage { source: u, value }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub xhat1: f64,
    pub xhat2: f64,
}

pub fn reconstruct(msg: &ChannelMessage, pair: &WeightPair) -> Reconstruction {
    match msg.source {
        SchedulingDecision::SendX1 => Reconstruction {
            xhat1: msg.value,
            xhat2: pair.eta2(msg.value),
        },
        SchedulingDecision::SendX2 => Reconstruction {
            xhat1: pair.eta1(msg.value),
            xhat2: msg.value,
        },
    }
}

/// Slopes and intercepts of the unconditional conditional means
/// `E[X1 | X2]` and `E[X2 | X1]`: `((c1, s1), (c2, s2))`.
pub fn conditional_mean_lines(spec: &GaussianSourceSpec) -> ((f64, f64), (f64, f64)) {
    let s1 = spec.rho * (spec.var1 / spec.var2).sqrt();
    let s2 = spec.rho * (spec.var2 / spec.var1).sqrt();
    ((spec.mean1 - s1 * spec.mean2, s1), (spec.mean2 - s2 * spec.mean1, s2))
}

/// Conditional-mean estimators that ignore what the scheduling decision reveals.
pub fn mmse_baseline(spec: &GaussianSourceSpec, family: &BasisFamily) -> Result<WeightPair> {
    spec.validate()?;
    let lin = family.linear_index().ok_or_else(|| {
        Error::validation(format!(
            "the {} family has no x^1 unit and cannot represent affine estimators",
            family.kind()
        ))
    })?;
    let ((c1, s1), (c2, s2)) = conditional_mean_lines(spec);
    let mut pair = WeightPair::zeros(family.clone());
    pair.w1[0] = c1;
    pair.w1[lin] = s1;
    pair.w2[0] = c2;
    pair.w2[lin] = s2;
    Ok(pair)
}

const MAGIC: &str = "# neurosched weight pair v1";

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn format_weights(pair: &WeightPair) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "kind={}", pair.family.kind());
    for unit in pair.family.units() {
        let _ = writeln!(out, "unit={}", unit.to_record());
    }
    let _ = writeln!(out, "w1={}", join(&pair.w1));
    let _ = writeln!(out, "w2={}", join(&pair.w2));
    if let Some(seed) = pair.train_seed {
        let _ = writeln!(out, "train_seed={seed}");
    }
    out
}

pub fn parse_weights(text: &str) -> Result<WeightPair> {
    let mut units: Vec<Unit> = Vec::new();
    let mut w1 = None;
    let mut w2 = None;
    let mut train_seed = None;
    let mut last_line = 1;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("expected key=value, found '{line}'")))?;
        let floats = |v: &str| -> Result<Vec<f64>> {
            v.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("non-numeric weight '{}'", s.trim())))
                })
                .collect()
        };
        match key.trim() {
            "kind" => {}
            "unit" => units.push(Unit::from_record(value).map_err(|m| Error::parse(line_no, m))?),
            "w1" => w1 = Some(floats(value)?),
            "w2" => w2 = Some(floats(value)?),
            "train_seed" => {
                train_seed = Some(
                    value
                        .trim()
                        .parse::<u64>()
                        .map_err(|_| Error::parse(line_no, format!("invalid train_seed '{value}'")))?,
                )
            }
            other => return Err(Error::parse(line_no, format!("unknown key '{other}'"))),
        }
    }
    let family = BasisFamily::from_units(units).map_err(|e| Error::parse(last_line, e.to_string()))?;
    let w1 = w1.ok_or_else(|| Error::parse(last_line, "missing w1"))?;
    let w2 = w2.ok_or_else(|| Error::parse(last_line, "missing w2"))?;
    let mut pair = WeightPair::new(family, w1, w2).map_err(|e| Error::parse(last_line, e.to_string()))?;
    pair.train_seed = train_seed;
    Ok(pair)
}

pub fn save_weights(pair: &WeightPair, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_weights(pair)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightPair> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_weights(&text)
}
