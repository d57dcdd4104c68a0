//! Optional TOML run configuration. Every field is optional; command-line
//! flags win over the file, and the file wins over built-in defaults.

use std::path::Path;

use neurosched::{Batch, Error, FamilyKind, Optimizer};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub qualification: QualificationSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub table: TableSection,
    #[serde(default)]
    pub regions: RegionsSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub mean1: Option<f64>,
    pub mean2: Option<f64>,
    pub var1: Option<f64>,
    pub var2: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub m: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub kind: Option<FamilyKind>,
    pub degree: Option<usize>,
    pub alpha: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub signs: Option<Vec<i64>>,
    pub quantiles: Option<Vec<f64>>,
    pub units: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualificationSection {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub grid_points: Option<usize>,
    pub zero_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: Option<usize>,
    pub step_size_initial: Option<f64>,
    pub step_decay: Option<f64>,
    pub restarts: Option<usize>,
    pub init_noise_scale: Option<f64>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub batch: Option<Batch>,
    pub optimizer: Option<Optimizer>,
    pub allow_unqualified: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSection {
    pub rhos: Option<Vec<f64>>,
    pub m_train: Option<usize>,
    pub m_val: Option<usize>,
    pub seed: Option<u64>,
    pub softplus_alpha: Option<f64>,
    pub polynomial_degree: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsSection {
    pub x1_range: Option<(f64, f64)>,
    pub x2_range: Option<(f64, f64)>,
    pub resolution: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(1);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig {
            source: SourceSection { rho: Some(0.5), var1: Some(2.0), ..Default::default() },
            basis: BasisSection {
                kind: Some(FamilyKind::Softplus),
                betas: Some(vec![-1.0, 1.0]),
                signs: Some(vec![1, -1]),
                ..Default::default()
            },
            train: TrainSection {
                batch: Some(Batch::Minibatch(64)),
                optimizer: Some(Optimizer::Subgradient),
                restarts: Some(3),
                ..Default::default()
            },
            table: TableSection { rhos: Some(vec![0.0, 0.75]), ..Default::default() },
            regions: RegionsSection { x1_range: Some((-2.0, 2.0)), ..Default::default() },
            ..Default::default()
        };
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn reports_line_of_bad_key() {
        let text = "[source]\nrho = 0.5\n\n[train]\nbogus = 1\n";
        match RunConfig::from_toml(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_documented_example() {
        let text = r#"
[source]
rho = 0.75

[basis]
kind = "polynomial"
degree = 3

[train]
optimizer = "subgradient"
batch = { minibatch = 256 }
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.basis.kind, Some(FamilyKind::Polynomial));
        assert_eq!(cfg.train.batch, Some(Batch::Minibatch(256)));
    }
}
