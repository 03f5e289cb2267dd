//! Spectral clustering on the leading left singular vectors.

use nalgebra::{DMatrix, SVD};
use rand::Rng;

use super::kmeans::{kmeans_with, Points, DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::netgen::Membership;

const SVD_EPS: f64 = 1e-12;
const SVD_MAX_ITER: usize = 10_000;

/// Leading left singular vectors of a (possibly imputed) adjacency matrix,
/// computed once and reused for every candidate block count.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    u: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Estimation("spectral basis needs a square, non-empty matrix".into()));
        }
        let svd = SVD::try_new(matrix.clone(), true, false, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::Estimation("singular value decomposition did not converge".into()))?;
        let u = svd
            .u
            .ok_or_else(|| Error::Estimation("singular vectors unavailable".into()))?;
        Ok(Self {
            u,
            singular_values: svd.singular_values.iter().copied().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    /// Singular values, largest first.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Rows of the n×K matrix of leading left singular vectors.
    pub fn embedding(&self, k: usize) -> Points {
        let n = self.n();
        let k = k.min(self.u.ncols());
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            for c in 0..k {
                data.push(self.u[(i, c)]);
            }
        }
        Points::new(data, n, k)
    }

    pub fn cluster<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Membership> {
        self.cluster_with(k, DEFAULT_RESTARTS, DEFAULT_MAX_ITER, rng)
    }

    pub fn cluster_with<R: Rng + ?Sized>(
        &self,
        k: usize,
        restarts: usize,
        max_iter: usize,
        rng: &mut R,
    ) -> Result<Membership> {
        if k == 0 || k > self.n() {
            return Err(Error::InvalidBlockCount { k, n: self.n() });
        }
        let res = kmeans_with(&self.embedding(k), k, restarts, max_iter, rng);
        Membership::new(res.membership.labels().to_vec(), k)
    }
}

pub fn spectral_clustering<R: Rng + ?Sized>(
    imputed: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<Membership> {
    if k == 0 || k > imputed.nrows() {
        return Err(Error::InvalidBlockCount {
            k,
            n: imputed.nrows(),
        });
    }
    SpectralBasis::new(imputed)?.cluster(k, rng)
}
