//! Randomized quasi-Monte Carlo point sets from subgaussian discrepancy
//! colorings.
//!
//! [`transference::subg_transference`] draws `n²` uniform samples and
//! halves them `log2 n` times, each time keeping the half picked by a
//! balanced self-balancing-walk coloring of the points' stacked dyadic
//! incidence vectors. Each of the `n` resulting sets of `n` points is an
//! unbiased integration rule whose error tracks the smoothed-out variation
//! of the integrand rather than its Hardy–Krause variation.

pub mod balancing;
mod clock;
pub mod discrepancy;
pub mod dyadic;
pub mod error;
pub mod harness;
pub mod rng;
pub mod transference;
pub mod variation;

pub use error::{Error, Result};
pub use transference::{
    subg_transference, subg_transference_leaf, PartitionTree, PointSet, TransferenceConfig,
};
pub use variation::FourierFunction;
