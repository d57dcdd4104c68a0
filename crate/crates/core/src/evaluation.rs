//! Held-out evaluation, the four-estimator validation table and scheduling-region export.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{FamilySpec, DEFAULT_POLYNOMIAL_DEGREE};
use crate::error::{Error, Result};
use crate::policy::{mmse_baseline, reconstruct, schedule, transmit, SchedulingDecision, WeightPair};
use crate::source::{sample_dataset, Dataset, GaussianSourceSpec};
use crate::training::{train, train_linear_baseline, TrainConfig};
use crate::basis::make_polynomial_family;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean total squared reconstruction error after schedule, transmit and reconstruct.
    pub empirical_cost: f64,
    pub transmit_fraction_1: f64,
    pub transmit_fraction_2: f64,
    /// Signed mean of the error on the withheld coordinate.
    pub mean_residual: f64,
    pub residual_second_moment: f64,
    pub m: usize,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!(
            "# neurosched eval report v1\nm={}\nempirical_cost={:?}\ntransmit_fraction_1={:?}\n\
             transmit_fraction_2={:?}\nmean_residual={:?}\nresidual_second_moment={:?}\n",
            self.m,
            self.empirical_cost,
            self.transmit_fraction_1,
            self.transmit_fraction_2,
            self.mean_residual,
            self.residual_second_moment
        )
    }
}

/// Runs every sample through the scheduler, the channel and the receiver.
pub fn evaluate(pair: &WeightPair, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let mut cost = 0.0;
    let mut sent1 = 0usize;
    let mut sum_eps = 0.0;
    let mut sum_eps_sq = 0.0;
    for &(x1, x2) in ds.samples() {
        let u = schedule(pair, x1, x2);
        let rec = reconstruct(&transmit(x1, x2, u), pair);
        let (d1, d2) = (x1 - rec.xhat1, x2 - rec.xhat2);
        cost += d1 * d1 + d2 * d2;
        let eps = match u {
            SchedulingDecision::SendX1 => {
                sent1 += 1;
                d2
            }
            SchedulingDecision::SendX2 => d1,
        };
        sum_eps += eps;
        sum_eps_sq += eps * eps;
    }
    let m = ds.len();
    let n = m as f64;
    Ok(EvalReport {
        empirical_cost: cost / n,
        transmit_fraction_1: sent1 as f64 / n,
        transmit_fraction_2: (m - sent1) as f64 / n,
        mean_residual: sum_eps / n,
        residual_second_moment: sum_eps_sq / n,
        m,
    })
}

/// Held-out evaluation. Refuses the dataset the pair was trained on.
pub fn validate(pair: &WeightPair, ds: &Dataset) -> Result<EvalReport> {
    if pair.train_seed == Some(ds.seed()) {
        return Err(Error::validation(format!(
            "validation dataset seed {} is the training seed; use a disjoint dataset",
            ds.seed()
        )));
    }
    evaluate(pair, ds)
}

/// Validation cost minus training cost.
pub fn overfit_gap(pair: &WeightPair, train_ds: &Dataset, val_ds: &Dataset) -> Result<f64> {
    Ok(evaluate(pair, val_ds)?.empirical_cost - evaluate(pair, train_ds)?.empirical_cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    pub x1_range: (f64, f64),
    pub x2_range: (f64, f64),
    pub resolution: usize,
    /// `decisions[i][j]` is the decision at `(x1_values[i], x2_values[j])`.
    pub decisions: Vec<Vec<SchedulingDecision>>,
}

fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
    let step = (range.1 - range.0) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { range.1 } else { range.0 + step * i as f64 })
        .collect()
}

impl RegionGrid {
    pub fn x1_values(&self) -> Vec<f64> {
        axis(self.x1_range, self.resolution)
    }

    pub fn x2_values(&self) -> Vec<f64> {
        axis(self.x2_range, self.resolution)
    }

    /// Header row holds the `x2` grid, first column the `x1` grid, cells are 1 or 2.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1\\x2");
        for v in self.x2_values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
        for (x1, row) in self.x1_values().iter().zip(&self.decisions) {
            let _ = write!(out, "{x1}");
            for d in row {
                let _ = write!(out, ",{}", d.index());
            }
            out.push('\n');
        }
        out
    }
}

pub fn export_regions(
    pair: &WeightPair,
    x1_range: (f64, f64),
    x2_range: (f64, f64),
    resolution: usize,
) -> Result<RegionGrid> {
    for (name, (lo, hi)) in [("x1", x1_range), ("x2", x2_range)] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::validation(format!("degenerate {name} range [{lo}, {hi}]")));
        }
    }
    if resolution < 2 {
        return Err(Error::validation("region resolution must be >= 2"));
    }
    let xs1 = axis(x1_range, resolution);
    let xs2 = axis(x2_range, resolution);
    let decisions = xs1
        .iter()
        .map(|&x1| xs2.iter().map(|&x2| schedule(pair, x1, x2)).collect())
        .collect();
    Ok(RegionGrid {
        x1_range,
        x2_range,
        resolution,
        decisions,
    })
}

/// Validation costs of the four estimators at one correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub rho: f64,
    pub mmse_cost: f64,
    pub linear_cost: f64,
    pub softplus_cost: f64,
    pub polynomial_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub rhos: Vec<f64>,
    pub train: TrainConfig,
    pub m_train: usize,
    pub m_val: usize,
    pub seed: u64,
    pub softplus: FamilySpec,
    pub polynomial: FamilySpec,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            rhos: vec![0.0, 0.25, 0.5, 0.75],
            train: TrainConfig::default(),
            m_train: 100_000,
            m_val: 100_000,
            seed: 2024,
            softplus: FamilySpec::softplus(),
            polynomial: FamilySpec::polynomial(DEFAULT_POLYNOMIAL_DEGREE),
        }
    }
}

/// SplitMix64 finalizer, used to derive per-row dataset seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training and validation seeds for row `index`.
pub fn row_seeds(seed: u64, index: usize) -> (u64, u64) {
    (derive_seed(seed, 2 * index as u64), derive_seed(seed, 2 * index as u64 + 1))
}

fn table_row(config: &TableConfig, index: usize, rho: f64) -> Result<TableRow> {
    let spec = GaussianSourceSpec::standard(rho)?;
    let (train_seed, val_seed) = row_seeds(config.seed, index);
    let train_ds = sample_dataset(&spec, config.m_train, train_seed)?;
    let val_ds = sample_dataset(&spec, config.m_val, val_seed)?;
    let pooled: Vec<f64> = train_ds.x1().chain(train_ds.x2()).collect();

    let mmse = mmse_baseline(&spec, &make_polynomial_family(1)?)?;
    let (linear, _) = train_linear_baseline(&train_ds, &config.train)?;
    let softplus_family = config.softplus.resolve(Some(&pooled))?;
    let (softplus, _) = train(&train_ds, &softplus_family, &config.train, &spec)?;
    let polynomial_family = config.polynomial.resolve(Some(&pooled))?;
    let (polynomial, _) = train(&train_ds, &polynomial_family, &config.train, &spec)?;

    Ok(TableRow {
        rho,
        mmse_cost: validate(&mmse, &val_ds)?.empirical_cost,
        linear_cost: validate(&linear, &val_ds)?.empirical_cost,
        softplus_cost: validate(&softplus, &val_ds)?.empirical_cost,
        polynomial_cost: validate(&polynomial, &val_ds)?.empirical_cost,
    })
}

pub fn reproduce_table(config: &TableConfig) -> Result<Vec<TableRow>> {
    if config.rhos.is_empty() {
        return Err(Error::validation("at least one correlation value is required"));
    }
    config.train.validate()?;
    config
        .rhos
        .par_iter()
        .enumerate()
        .map(|(i, &rho)| table_row(config, i, rho))
        .collect()
}

pub const TABLE_HEADER: &str = "rho,mmse,linear,softplus,polynomial";

/// Three-decimal table.
pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3},{:.3}",
            r.rho, r.mmse_cost, r.linear_cost, r.softplus_cost, r.polynomial_cost
        );
    }
    out
}

/// Full-precision sidecar of [`table_csv`].
pub fn table_csv_full(rows: &[TableRow]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?}",
            r.rho, r.mmse_cost, r.linear_cost, r.softplus_cost, r.polynomial_cost
        );
    }
    out
}
