//! Bivariate Gaussian source, seeded datasets and their on-disk format.
//!
//! Samples are drawn with ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`)
//! and the Ziggurat standard normal from `rand_distr`. Correlated pairs are the
//! lower Cholesky factor of the 2x2 covariance applied to two independent
//! standard normals, so a given `(spec, m, seed)` always yields the same bits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint distribution of `(X1, X2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSourceSpec {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub rho: f64,
}

impl GaussianSourceSpec {
    pub fn new(mean1: f64, mean2: f64, var1: f64, var2: f64, rho: f64) -> Result<Self> {
        let spec = Self {
            mean1,
            mean2,
            var1,
            var2,
            rho,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero means, unit variances, correlation `rho`.
    pub fn standard(rho: f64) -> Result<Self> {
        Self::new(0.0, 0.0, 1.0, 1.0, rho)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mean1, self.mean2, self.var1, self.var2, self.rho];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("source parameters must be finite"));
        }
        if self.var1 <= 0.0 || self.var2 <= 0.0 {
            return Err(Error::validation(format!(
                "variances must be > 0 (var1 = {}, var2 = {})",
                self.var1, self.var2
            )));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::validation(format!(
                "correlation rho = {} is outside [-1, 1]",
                self.rho
            )));
        }
        Ok(())
    }

    pub fn std1(&self) -> f64 {
        self.var1.sqrt()
    }

    pub fn std2(&self) -> f64 {
        self.var2.sqrt()
    }

    fn header_value(&self) -> String {
        format!(
            "mean1:{:?} mean2:{:?} var1:{:?} var2:{:?} rho:{:?}",
            self.mean1, self.mean2, self.var1, self.var2, self.rho
        )
    }

    fn parse_header_value(line: usize, text: &str) -> Result<Self> {
        let mut fields = [None; 5];
        const KEYS: [&str; 5] = ["mean1", "mean2", "var1", "var2", "rho"];
        for item in text.split_whitespace() {
            let (key, value) = item
                .split_once(':')
                .ok_or_else(|| Error::parse(line, format!("malformed spec entry '{item}'")))?;
            let idx = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::parse(line, format!("unknown spec key '{key}'")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| Error::parse(line, format!("non-numeric spec value '{value}'")))?;
            fields[idx] = Some(v);
        }
        let get = |i: usize| {
            fields[i].ok_or_else(|| Error::parse(line, format!("spec is missing '{}'", KEYS[i])))
        };
        let spec = Self {
            mean1: get(0)?,
            mean2: get(1)?,
            var1: get(2)?,
            var2: get(3)?,
            rho: get(4)?,
        };
        spec.validate()
            .map_err(|e| Error::parse(line, format!("invalid spec: {e}")))?;
        Ok(spec)
    }
}

/// `m` i.i.d. draws plus the provenance needed to regenerate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<(f64, f64)>,
    seed: u64,
    spec: GaussianSourceSpec,
}

impl Dataset {
    /// Wraps existing samples. Fails on an empty sample list.
    pub fn from_samples(samples: Vec<(f64, f64)>, seed: u64, spec: GaussianSourceSpec) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("dataset must contain at least one sample"));
        }
        Ok(Self {
            samples,
            seed,
            spec,
        })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &GaussianSourceSpec {
        &self.spec
    }

    pub fn x1(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn x2(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    /// Same provenance, coordinates exchanged.
    pub fn swapped(&self) -> Dataset {
        let spec = GaussianSourceSpec {
            mean1: self.spec.mean2,
            mean2: self.spec.mean1,
            var1: self.spec.var2,
            var2: self.spec.var1,
            rho: self.spec.rho,
        };
        Dataset {
            samples: self.samples.iter().map(|&(a, b)| (b, a)).collect(),
            seed: self.seed,
            spec,
        }
    }
}

pub fn sample_dataset(spec: &GaussianSourceSpec, m: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::validation("sample count m must be >= 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (s1, s2) = (spec.std1(), spec.std2());
    // lower Cholesky factor of [[v1, rho s1 s2], [rho s1 s2, v2]]
    let l21 = spec.rho * s2;
    let l22 = s2 * (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let samples = (0..m)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (spec.mean1 + s1 * z1, spec.mean2 + (l21 * z1 + l22 * z2))
        })
        .collect();
    Ok(Dataset {
        samples,
        seed,
        spec: *spec,
    })
}

/// Empirical support of each coordinate: `[a, b]` for `x2`, `[c, d]` for `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBounds {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SupportBounds {
    /// Interval on which `eta1` (a function of `x2`) is used.
    pub fn x2_interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Interval on which `eta2` (a function of `x1`) is used.
    pub fn x1_interval(&self) -> (f64, f64) {
        (self.c, self.d)
    }
}

pub fn support_bounds(ds: &Dataset) -> Result<SupportBounds> {
    let (first, rest) = ds
        .samples
        .split_first()
        .ok_or_else(|| Error::validation("support bounds of an empty dataset"))?;
    let init = SupportBounds {
        a: first.1,
        b: first.1,
        c: first.0,
        d: first.0,
    };
    Ok(rest.iter().fold(init, |acc, &(x1, x2)| SupportBounds {
        a: acc.a.min(x2),
        b: acc.b.max(x2),
        c: acc.c.min(x1),
        d: acc.d.max(x1),
    }))
}

/// Sample moments used by the CLI summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub corr: f64,
}

pub fn moments(ds: &Dataset) -> Moments {
    let n = ds.len() as f64;
    let mean1 = ds.x1().sum::<f64>() / n;
    let mean2 = ds.x2().sum::<f64>() / n;
    let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
    for &(x1, x2) in ds.samples() {
        let (d1, d2) = (x1 - mean1, x2 - mean2);
        s11 += d1 * d1;
        s22 += d2 * d2;
        s12 += d1 * d2;
    }
    let corr = if s11 > 0.0 && s22 > 0.0 {
        s12 / (s11 * s22).sqrt()
    } else {
        0.0
    };
    Moments {
        mean1,
        mean2,
        var1: s11 / n,
        var2: s22 / n,
        corr,
    }
}

const MAGIC: &str = "# neurosched dataset v1";

pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::with_capacity(48 * ds.len() + 128);
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "# spec={}", ds.spec.header_value());
    let _ = writeln!(out, "# seed={}", ds.seed);
    let _ = writeln!(out, "# m={}", ds.len());
    for &(x1, x2) in &ds.samples {
        let _ = writeln!(out, "{x1:.16e},{x2:.16e}");
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut spec = None;
    let mut seed = None;
    let mut declared_m = None;
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("spec=") {
                spec = Some(GaussianSourceSpec::parse_header_value(line_no, v)?);
            } else if let Some(v) = comment.strip_prefix("seed=") {
                seed = Some(
                    v.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::parse(line_no, format!("invalid seed '{v}'")))?,
                );
            } else if let Some(v) = comment.strip_prefix("m=") {
                declared_m = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::parse(line_no, format!("invalid sample count '{v}'")))?,
                );
            }
            continue;
        }
        if spec.is_none() || seed.is_none() {
            return Err(Error::parse(line_no, "missing provenance header"));
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(line_no, format!("expected 'x1,x2', found '{line}'")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line_no, format!("non-numeric field '{}'", s.trim())))
        };
        samples.push((parse(a)?, parse(b)?));
    }
    let (Some(spec), Some(seed)) = (spec, seed) else {
        return Err(Error::parse(1, "missing provenance header"));
    };
    if samples.is_empty() {
        return Err(Error::parse(text.lines().count().max(1), "dataset has no samples"));
    }
    if let Some(m) = declared_m {
        if m != samples.len() {
            return Err(Error::parse(
                text.lines().count(),
                format!("header declares m={m} but {} samples were read", samples.len()),
            ));
        }
    }
    Ok(Dataset {
        samples,
        seed,
        spec,
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(samples: Vec<(f64, f64)>) -> Dataset {
        Dataset::from_samples(samples, 1, GaussianSourceSpec::standard(0.0).unwrap()).unwrap()
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(GaussianSourceSpec::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(GaussianSourceSpec::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
        let err = GaussianSourceSpec::standard(1.5).unwrap_err();
        assert!(err.to_string().contains("[-1, 1]"));
        assert!(sample_dataset(&GaussianSourceSpec::standard(0.2).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn perfect_correlation_duplicates_coordinates() {
        let spec = GaussianSourceSpec::standard(1.0).unwrap();
        let ds = sample_dataset(&spec, 1000, 42).unwrap();
        assert!(ds.samples().iter().all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = GaussianSourceSpec::new(1.0, -2.0, 2.0, 0.5, 0.3).unwrap();
        let a = sample_dataset(&spec, 500, 9).unwrap();
        let b = sample_dataset(&spec, 500, 9).unwrap();
        assert_eq!(format_dataset(&a), format_dataset(&b));
        let c = sample_dataset(&spec, 500, 10).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn shifted_means_are_recovered() {
        let spec = GaussianSourceSpec::new(5.0, -5.0, 1.0, 1.0, 0.5).unwrap();
        let ds = sample_dataset(&spec, 100_000, 3).unwrap();
        let mo = moments(&ds);
        assert!((mo.mean1 - 5.0).abs() < 0.02, "{mo:?}");
        assert!((mo.mean2 + 5.0).abs() < 0.02, "{mo:?}");
    }

    #[test]
    fn independent_columns_are_uncorrelated() {
        let spec = GaussianSourceSpec::standard(0.0).unwrap();
        let ds = sample_dataset(&spec, 1_000_000, 11).unwrap();
        assert!(moments(&ds).corr.abs() < 0.005);
    }

    #[test]
    fn support_bounds_examples() {
        let sb = support_bounds(&tiny(vec![(1.0, 2.0), (3.0, -1.0)])).unwrap();
        assert_eq!(sb, SupportBounds { a: -1.0, b: 2.0, c: 1.0, d: 3.0 });
        let sb = support_bounds(&tiny(vec![(0.0, 0.0)])).unwrap();
        assert_eq!(sb, SupportBounds { a: 0.0, b: 0.0, c: 0.0, d: 0.0 });
    }

    #[test]
    fn support_width_of_standard_normal_sample() {
        let ds = sample_dataset(&GaussianSourceSpec::standard(0.3).unwrap(), 100_000, 5).unwrap();
        let sb = support_bounds(&ds).unwrap();
        assert!((8.0..=12.0).contains(&(sb.b - sb.a)), "{sb:?}");
        assert!((8.0..=12.0).contains(&(sb.d - sb.c)), "{sb:?}");
    }

    #[test]
    fn file_round_trip_is_exact() {
        let spec = GaussianSourceSpec::new(0.1, -0.2, 3.0, 0.25, -0.7).unwrap();
        let ds = sample_dataset(&spec, 257, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "# spec=mean1:0 mean2:0 var1:1 var2:1 rho:0\n# seed=1\n0.5,0.25\n0.1,abc\n";
        match parse_dataset(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_dataset("0.5,0.25\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert_eq!(message, "missing provenance header");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_dataset("/nonexistent/x.csv"), Err(Error::Io { .. })));
    }
}
