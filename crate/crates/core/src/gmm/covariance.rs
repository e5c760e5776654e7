//! Covariance storage: either a full matrix or a factor `L` with `Σ = L Lᵀ`.
//!
//! Images of low-dimensional mixtures under expanding maps (farm outputs to
//! thousands of bus states) have rank far below their dimension; keeping the
//! factor avoids materializing `d × d` matrices until something asks for them.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{psd_factor, symmetrize};

#[derive(Debug)]
pub(crate) struct Cov {
    full: OnceLock<DMatrix<f64>>,
    factor: Option<DMatrix<f64>>,
}

impl Cov {
    pub fn full(m: DMatrix<f64>) -> Self {
        Self {
            full: OnceLock::from(m),
            factor: None,
        }
    }

    pub fn factored(l: DMatrix<f64>) -> Self {
        Self {
            full: OnceLock::new(),
            factor: Some(l),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.factor {
            Some(l) => l.nrows(),
            None => self.matrix().nrows(),
        }
    }

    /// The full matrix, formed from the factor on first use.
    pub fn matrix(&self) -> &DMatrix<f64> {
        self.full.get_or_init(|| {
            let l = self.factor.as_ref().expect("covariance has neither form");
            let mut m = l * l.transpose();
            symmetrize(&mut m);
            m
        })
    }

    pub fn factor(&self) -> Option<&DMatrix<f64>> {
        self.factor.as_ref()
    }

    /// A factor of the matrix, computing one for full storage.
    pub fn any_factor(&self) -> DMatrix<f64> {
        match &self.factor {
            Some(l) => l.clone(),
            None => psd_factor(self.matrix()),
        }
    }

    pub fn diag(&self, k: usize) -> f64 {
        match &self.factor {
            Some(l) => l.row(k).norm_squared(),
            None => self.matrix()[(k, k)],
        }
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.dim()).map(|k| self.diag(k)).fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Some(l) => l * (l.transpose() * v),
            None => self.matrix() * v,
        }
    }
}

impl PartialEq for Cov {
    fn eq(&self, other: &Self) -> bool {
        match (&self.factor, &other.factor) {
            (Some(a), Some(b)) => a == b,
            _ => self.matrix() == other.matrix(),
        }
    }
}
