//! Remote estimation of a bivariate Gaussian source over a channel that carries
//! one of the two observations per use.
//!
//! A scheduler sees `(x1, x2)` and reveals one coordinate; the receiver rebuilds
//! the other with an estimator `eta_j(x) = w_j' phi(x)` that is linear in a set
//! of basis functions. The scheduler uses max-scheduling, which sends the
//! coordinate that would be estimated worse, so the expected cost reduces to
//! the mean of `min{(x1 - eta1(x2))^2, (x2 - eta2(x1))^2}`. This crate samples
//! the source, builds and vets basis families, fits the weights and evaluates
//! the resulting scheduler on held-out data.

pub mod basis;
pub mod error;
pub mod evaluation;
pub mod policy;
pub mod source;
pub mod training;

pub use basis::{BasisFamily, FamilyKind, FamilySpec, QualificationReport, Sign, Unit};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, RegionGrid, TableConfig, TableRow};
pub use policy::{ChannelMessage, Reconstruction, SchedulingDecision, WeightPair};
pub use source::{Dataset, GaussianSourceSpec, SupportBounds};
pub use training::{Batch, Optimizer, TrainConfig, TrainReport};
