//! Empirical min-of-squared-errors risk and its minimization over the weights.
//!
//! The per-sample loss `min{(x1 - w1'phi(x2))^2, (x2 - w2'phi(x1))^2}` is the
//! difference of the convex sum of both squared errors and the convex maximum
//! of the two. Two first-order methods are provided:
//!
//! * [`Optimizer::MajorizeMinimize`] linearizes the concave part at the current
//!   iterate and solves the resulting least-squares problem in closed form. Each
//!   step is a weighted regression of the inactive branch onto itself and the
//!   active branch onto its target, so the cost never increases.
//! * [`Optimizer::Subgradient`] takes plain subgradient steps with a
//!   geometrically decaying step size.
//!
//! Both keep the best iterate seen, run `restarts` independent starts and
//! return the cheapest.

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{self, make_polynomial_family, BasisFamily, QualificationReport};
use crate::error::{Error, Result};
use crate::policy::{conditional_mean_lines, dot, mmse_baseline, WeightPair};
use crate::source::{support_bounds, Dataset, GaussianSourceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    MajorizeMinimize,
    Subgradient,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::MajorizeMinimize => "majorize-minimize",
            Optimizer::Subgradient => "subgradient",
        })
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majorize-minimize" | "mm" | "ccp" => Ok(Optimizer::MajorizeMinimize),
            "subgradient" => Ok(Optimizer::Subgradient),
            other => Err(Error::validation(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Batch {
    Full,
    Minibatch(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub step_size_initial: f64,
    pub step_decay: f64,
    pub restarts: usize,
    pub init_noise_scale: f64,
    pub seed: u64,
    /// Stop a run once the relative change of the cost drops to this level.
    pub tolerance: f64,
    pub batch: Batch,
    pub optimizer: Optimizer,
    /// Refuse families that fail the plateau check on the data support.
    pub require_qualified: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size_initial: 0.05,
            step_decay: 0.999,
            restarts: 5,
            init_noise_scale: 0.1,
            seed: 0,
            tolerance: 1e-8,
            batch: Batch::Full,
            optimizer: Optimizer::MajorizeMinimize,
            require_qualified: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if !(self.step_size_initial > 0.0 && self.step_size_initial.is_finite()) {
            return fail(format!("step_size_initial must be > 0, got {}", self.step_size_initial));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return fail(format!("step_decay must be in (0, 1], got {}", self.step_decay));
        }
        if self.restarts == 0 {
            return fail("restarts must be >= 1".into());
        }
        if !(self.init_noise_scale >= 0.0 && self.init_noise_scale.is_finite()) {
            return fail(format!("init_noise_scale must be >= 0, got {}", self.init_noise_scale));
        }
        if !(self.tolerance > 0.0) {
            return fail(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        match (self.batch, self.optimizer) {
            (Batch::Minibatch(0), _) => fail("minibatch size must be >= 1".into()),
            (Batch::Minibatch(_), Optimizer::MajorizeMinimize) => {
                fail("minibatches are only supported by the subgradient optimizer".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub optimizer: Optimizer,
    pub final_cost: f64,
    /// Training cost after each iteration of the selected restart; entry 0 is the start point.
    pub cost_trajectory: Vec<f64>,
    pub restart_final_costs: Vec<f64>,
    pub iterations_run: usize,
    pub selected_restart: usize,
    pub qualification: Vec<QualificationReport>,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::from("# neurosched train report v1\n");
        let _ = writeln!(out, "optimizer={}", self.optimizer);
        let _ = writeln!(out, "final_cost={:?}", self.final_cost);
        let _ = writeln!(out, "selected_restart={}", self.selected_restart);
        let _ = writeln!(out, "iterations_run={}", self.iterations_run);
        let _ = writeln!(out, "restart_final_costs={}", join(&self.restart_final_costs));
        for q in &self.qualification {
            let _ = writeln!(
                out,
                "qualification=lo:{:?} hi:{:?} plateau_fraction:{:?} qualified:{}",
                q.lo, q.hi, q.plateau_fraction, q.qualified
            );
        }
        let _ = writeln!(out, "cost_trajectory={}", join(&self.cost_trajectory));
        out
    }
}

/// Feature rows for both inputs, computed once per dataset.
struct Design {
    dim: usize,
    m: usize,
    x1: Vec<f64>,
    x2: Vec<f64>,
    /// Row `i` is `phi(x2_i)`, the input of `eta1`.
    phi2: Vec<f64>,
    /// Row `i` is `phi(x1_i)`, the input of `eta2`.
    phi1: Vec<f64>,
}

/// Per-sample branch: `true` when `x1`'s squared error is the smaller one
/// (so `x2` is transmitted and `w1` carries the loss).
#[inline]
fn first_branch_active(e1_sq: f64, e2_sq: f64) -> bool {
    e1_sq < e2_sq
}

impl Design {
    fn new(ds: &Dataset, family: &BasisFamily) -> Self {
        let dim = family.dim();
        let m = ds.len();
        let mut phi1 = vec![0.0; m * dim];
        let mut phi2 = vec![0.0; m * dim];
        for (i, &(x1, x2)) in ds.samples().iter().enumerate() {
            family.eval_features_into(x1, &mut phi1[i * dim..(i + 1) * dim]);
            family.eval_features_into(x2, &mut phi2[i * dim..(i + 1) * dim]);
        }
        Self {
            dim,
            m,
            x1: ds.x1().collect(),
            x2: ds.x2().collect(),
            phi2,
            phi1,
        }
    }

    #[inline]
    fn row2(&self, i: usize) -> &[f64] {
        &self.phi2[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn row1(&self, i: usize) -> &[f64] {
        &self.phi1[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn errors(&self, i: usize, w1: &[f64], w2: &[f64]) -> (f64, f64) {
        (self.x1[i] - dot(w1, self.row2(i)), self.x2[i] - dot(w2, self.row1(i)))
    }

    fn cost(&self, w1: &[f64], w2: &[f64]) -> f64 {
        let total = (0..self.m).fold(0.0, |acc, i| {
            let (e1, e2) = self.errors(i, w1, w2);
            acc + (e1 * e1).min(e2 * e2)
        });
        total / self.m as f64
    }

    /// Subgradient over `rows` (all rows when `None`), normalized by the row count.
    fn subgradient(&self, w1: &[f64], w2: &[f64], rows: Option<&[usize]>) -> Vec<f64> {
        let dim = self.dim;
        let mut g = vec![0.0; 2 * dim];
        let mut visit = |i: usize| {
            let (e1, e2) = self.errors(i, w1, w2);
            if first_branch_active(e1 * e1, e2 * e2) {
                for (gk, phi) in g[..dim].iter_mut().zip(self.row2(i)) {
                    *gk += phi * e1;
                }
            } else {
                for (gk, phi) in g[dim..].iter_mut().zip(self.row1(i)) {
                    *gk += phi * e2;
                }
            }
        };
        let count = match rows {
            Some(rows) => {
                rows.iter().for_each(|&i| visit(i));
                rows.len()
            }
            None => {
                (0..self.m).for_each(&mut visit);
                self.m
            }
        };
        let scale = -2.0 / count as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }

    fn gram(&self, rows: &[f64]) -> DMatrix<f64> {
        let dim = self.dim;
        let mut g = DMatrix::zeros(dim, dim);
        for row in rows.chunks_exact(dim) {
            for a in 0..dim {
                for b in a..dim {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g / self.m as f64
    }
}

/// Pseudo-inverse of a symmetric positive semidefinite Gram matrix.
fn gram_pinv(gram: DMatrix<f64>) -> DMatrix<f64> {
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let svd = gram.svd(true, true);
    svd.pseudo_inverse(scale * 1e-12)
        .expect("SVD was computed with both factors")
}

struct Solver<'a> {
    design: &'a Design,
    pinv2: DMatrix<f64>,
    pinv1: DMatrix<f64>,
}

impl<'a> Solver<'a> {
    fn new(design: &'a Design) -> Self {
        Self {
            pinv2: gram_pinv(design.gram(&design.phi2)),
            pinv1: gram_pinv(design.gram(&design.phi1)),
            design,
        }
    }

    /// Least-squares projection of `target(x)` onto the span, for both inputs.
    fn project(&self, target1: impl Fn(f64) -> f64, target2: impl Fn(f64) -> f64) -> Vec<f64> {
        let d = self.design;
        let mut rhs2 = DVector::zeros(d.dim);
        let mut rhs1 = DVector::zeros(d.dim);
        for i in 0..d.m {
            let t1 = target1(d.x2[i]);
            let t2 = target2(d.x1[i]);
            for k in 0..d.dim {
                rhs2[k] += d.row2(i)[k] * t1;
                rhs1[k] += d.row1(i)[k] * t2;
            }
        }
        let w1 = &self.pinv2 * (rhs2 / d.m as f64);
        let w2 = &self.pinv1 * (rhs1 / d.m as f64);
        w1.iter().chain(w2.iter()).copied().collect()
    }

    /// One majorize-minimize step: regress the active branch onto its data and
    /// the inactive branch onto its own current prediction.
    fn mm_step(&self, w: &[f64]) -> Vec<f64> {
        let d = self.design;
        let (w1, w2) = w.split_at(d.dim);
        let mut rhs2 = DVector::zeros(d.dim);
        let mut rhs1 = DVector::zeros(d.dim);
        for i in 0..d.m {
            let eta1 = dot(w1, d.row2(i));
            let eta2 = dot(w2, d.row1(i));
            let (e1, e2) = (d.x1[i] - eta1, d.x2[i] - eta2);
            let (t1, t2) = if first_branch_active(e1 * e1, e2 * e2) {
                (d.x1[i], eta2)
            } else {
                (eta1, d.x2[i])
            };
            for k in 0..d.dim {
                rhs2[k] += d.row2(i)[k] * t1;
                rhs1[k] += d.row1(i)[k] * t2;
            }
        }
        let n1 = &self.pinv2 * (rhs2 / d.m as f64);
        let n2 = &self.pinv1 * (rhs1 / d.m as f64);
        n1.iter().chain(n2.iter()).copied().collect()
    }
}

pub fn empirical_cost(ds: &Dataset, pair: &WeightPair) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::validation("empirical cost of an empty dataset"));
    }
    let total = ds.samples().iter().fold(0.0, |acc, &(x1, x2)| {
        let e1 = x1 - pair.eta1(x2);
        let e2 = x2 - pair.eta2(x1);
        acc + (e1 * e1).min(e2 * e2)
    });
    Ok(total / ds.len() as f64)
}

/// Subgradient of the empirical cost, `w1` block first. Exact ties charge `w2`.
pub fn subgradient(ds: &Dataset, pair: &WeightPair) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::validation("subgradient on an empty dataset"));
    }
    let design = Design::new(ds, pair.family());
    Ok(design.subgradient(&pair.w1, &pair.w2, None))
}

struct RunResult {
    best: Vec<f64>,
    best_cost: f64,
    trajectory: Vec<f64>,
    iterations: usize,
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn run_restart(solver: &Solver<'_>, start: &[f64], restart: usize, config: &TrainConfig) -> RunResult {
    let design = solver.design;
    let dim = design.dim;
    let mut rng = restart_rng(config.seed, restart);
    let mut w: Vec<f64> = start.to_vec();
    if restart > 0 && config.init_noise_scale > 0.0 {
        for v in w.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += config.init_noise_scale * z;
        }
    }
    let mut cost = design.cost(&w[..dim], &w[dim..]);
    let mut best = w.clone();
    let mut best_cost = cost;
    let mut trajectory = Vec::with_capacity(config.iterations + 1);
    trajectory.push(cost);
    let mut step = config.step_size_initial;
    let mut iterations = 0;
    for _ in 0..config.iterations {
        let next = match config.optimizer {
            Optimizer::MajorizeMinimize => solver.mm_step(&w),
            Optimizer::Subgradient => {
                let rows = match config.batch {
                    Batch::Full => None,
                    Batch::Minibatch(size) => Some(
                        index::sample(&mut rng, design.m, size.min(design.m)).into_vec(),
                    ),
                };
                let g = design.subgradient(&w[..dim], &w[dim..], rows.as_deref());
                let next: Vec<f64> = w.iter().zip(&g).map(|(wk, gk)| wk - step * gk).collect();
                step *= config.step_decay;
                next
            }
        };
        iterations += 1;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let next_cost = design.cost(&next[..dim], &next[dim..]);
        trajectory.push(next_cost);
        if next_cost < best_cost {
            best_cost = next_cost;
            best.clone_from(&next);
        }
        let settled = (cost - next_cost).abs() <= config.tolerance * cost.abs().max(f64::MIN_POSITIVE);
        w = next;
        cost = next_cost;
        if settled {
            break;
        }
    }
    RunResult {
        best,
        best_cost,
        trajectory,
        iterations,
    }
}

fn qualification_reports(ds: &Dataset, family: &BasisFamily) -> Result<Vec<QualificationReport>> {
    let bounds = support_bounds(ds)?;
    [bounds.x2_interval(), bounds.x1_interval()]
        .into_iter()
        .filter(|(lo, hi)| lo < hi)
        .map(|(lo, hi)| {
            basis::check_qualification(family, lo, hi, basis::DEFAULT_GRID_POINTS, basis::DEFAULT_ZERO_TOL)
        })
        .collect()
}

/// Start point of restart 0: the conditional-mean lines, exactly when the
/// family contains `x^1`, otherwise their least-squares projection onto the span.
fn baseline_start(solver: &Solver<'_>, family: &BasisFamily, spec: &GaussianSourceSpec) -> Result<Vec<f64>> {
    if family.linear_index().is_some() {
        return Ok(mmse_baseline(spec, family)?.flat());
    }
    let ((c1, s1), (c2, s2)) = conditional_mean_lines(spec);
    Ok(solver.project(|x2| c1 + s1 * x2, |x1| c2 + s2 * x1))
}

pub fn train(
    ds: &Dataset,
    family: &BasisFamily,
    config: &TrainConfig,
    spec: &GaussianSourceSpec,
) -> Result<(WeightPair, TrainReport)> {
    config.validate()?;
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    let qualification = qualification_reports(ds, family)?;
    if config.require_qualified {
        if let Some(q) = qualification.iter().find(|q| !q.qualified) {
            q.into_result()?;
        }
    }

    let design = Design::new(ds, family);
    let solver = Solver::new(&design);
    let start = baseline_start(&solver, family, spec)?;

    let runs: Vec<RunResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(&solver, &start, r, config))
        .collect();

    let selected = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, r)| if r.best_cost < runs[best].best_cost { i } else { best });
    let restart_final_costs: Vec<f64> = runs.iter().map(|r| r.best_cost).collect();
    let chosen = &runs[selected];
    let dim = family.dim();
    let mut pair = WeightPair::new(
        family.clone(),
        chosen.best[..dim].to_vec(),
        chosen.best[dim..].to_vec(),
    )?;
    pair.train_seed = Some(ds.seed());
    let report = TrainReport {
        optimizer: config.optimizer,
        final_cost: chosen.best_cost,
        cost_trajectory: chosen.trajectory.clone(),
        restart_final_costs,
        iterations_run: chosen.iterations,
        selected_restart: selected,
        qualification,
    };
    Ok((pair, report))
}

/// Best affine pair under the same objective and optimizer.
pub fn train_linear_baseline(ds: &Dataset, config: &TrainConfig) -> Result<(WeightPair, TrainReport)> {
    train(ds, &make_polynomial_family(1)?, config, ds.spec())
}
