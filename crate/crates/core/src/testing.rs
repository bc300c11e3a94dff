//! Random fixtures shared by the unit tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::foundations::{PdsMatrix, SymMatrix};

pub fn random_sym<R: Rng>(k: usize, rng: &mut R) -> SymMatrix {
    let m = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    SymMatrix::new(m).unwrap()
}

/// `A A^T / k + 0.5 I` for a standard Gaussian `A`.
pub fn random_pds<R: Rng>(k: usize, rng: &mut R) -> PdsMatrix {
    let a = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    let m = &a * a.transpose() / k as f64 + DMatrix::identity(k, k) * 0.5;
    PdsMatrix::from_matrix(m).unwrap()
}
