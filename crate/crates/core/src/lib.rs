//! Limit theory and robust fitting for
//! estimators of linearly structured covariance matrices.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod foundations;
pub mod influence;
pub mod simulate;
pub mod spherical;
pub mod structure;
pub mod weights;

#[cfg(test)]
mod testing;

pub use asymptotics::{AsymptoticScalars, LimitCovariances};
pub use error::{Error, Result};
pub use estimators::{Dataset, FitOptions, FitResult};
pub use foundations::{PdsMatrix, SymMatrix};
pub use influence::{GesIndices, InfluenceWeights};
pub use spherical::SphericalLaw;
pub use structure::{LinearStructure, StructureSpec, ThetaVector};
pub use weights::{Biweight, Family, RhoFunction, WeightTriple};
