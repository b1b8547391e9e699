//! Joint information assembly for a Gaussian prior plus new linear
//! observations, and extraction of joint/marginal covariances of the new
//! parameters.
//!
//! The model: existing parameters `x_m` carry a Gaussian prior (mean, P);
//! a new observation `z = H_m x_m + H_n x_n + w` with diagonal noise `R`
//! introduces parameters `x_n`. The joint information matrix is
//!
//! ```text
//! Lambda = [ P^-1 + H_m^T R^-1 H_m    H_m^T R^-1 H_n ]   = [ A  B ]
//!          [ H_n^T R^-1 H_m           H_n^T R^-1 H_n ]     [ C  D ]
//! ```
//!
//! and the bottom-right block of its inverse is the marginal covariance of
//! `x_n`. Nonlinear models enter only through already-linearized
//! observations; this module is strictly linear.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::matblocks::{self, block_inverse, schur_complement_of_a, BlockMatrix2x2, MatError};

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("prior covariance is not invertible (Cholesky failed)")]
    SingularPrior,
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error(transparent)]
    Factorization(#[from] MatError),
}

/// Gaussian prior on the existing parameters: mean `x_m` and covariance `P`.
///
/// Acts as a pseudo-observation of `x_m` with noise covariance `P`; its
/// coefficient `[I 0]` is a convention of this type and never materialized.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, InfoError> {
        let m = mean.len();
        if m == 0 || covariance.shape() != (m, m) {
            return Err(InfoError::InvalidObservation(format!(
                "prior covariance must be {m}x{m} with m >= 1, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        matblocks::ensure_finite(&covariance)?;
        if matblocks::relative_error(&covariance, &covariance.transpose()) > 1e-8 {
            return Err(InfoError::InvalidObservation(
                "prior covariance is not symmetric".into(),
            ));
        }
        Ok(Self { mean, covariance })
    }

    /// Prior with zero mean and covariance `P`.
    pub fn zero_mean(covariance: DMatrix<f64>) -> Result<Self, InfoError> {
        let dim = covariance.nrows();
        Self::new(DVector::zeros(dim), covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `P^-1` via Cholesky; failure doubles as the singularity detector.
    pub fn information(&self) -> Result<DMatrix<f64>, InfoError> {
        let chol = self
            .covariance
            .clone()
            .cholesky()
            .ok_or(InfoError::SingularPrior)?;
        Ok(matblocks::symmetrize(&chol.inverse()))
    }
}

/// One linear observation `z = H_m x_m + H_n x_n + w`, `w ~ N(0, R)` with
/// diagonal `R` held as its strictly positive diagonal entries.
#[derive(Debug, Clone)]
pub struct LinearObservation {
    pub residual: DVector<f64>,
    pub h_m: DMatrix<f64>,
    pub h_n: DMatrix<f64>,
    /// Diagonal of the noise covariance `R`.
    pub noise_diag: DVector<f64>,
}

impl LinearObservation {
    pub fn new(
        residual: DVector<f64>,
        h_m: DMatrix<f64>,
        h_n: DMatrix<f64>,
        noise_diag: DVector<f64>,
    ) -> Result<Self, InfoError> {
        let k = residual.len();
        if k == 0 || h_n.ncols() == 0 {
            return Err(InfoError::InvalidObservation(
                "observation needs k >= 1 rows and n >= 1 new parameters".into(),
            ));
        }
        if h_m.nrows() != k || h_n.nrows() != k || noise_diag.len() != k {
            return Err(InfoError::InvalidObservation(format!(
                "row counts must all equal k={k}: H_m {}x{}, H_n {}x{}, noise {}",
                h_m.nrows(),
                h_m.ncols(),
                h_n.nrows(),
                h_n.ncols(),
                noise_diag.len()
            )));
        }
        if !noise_diag.iter().all(|&v| v.is_finite() && v > 0.0) {
            return Err(InfoError::InvalidObservation(
                "noise covariance diagonal must be strictly positive".into(),
            ));
        }
        matblocks::ensure_finite(&h_m)?;
        matblocks::ensure_finite(&h_n)?;
        Ok(Self {
            residual,
            h_m,
            h_n,
            noise_diag,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.residual.len()
    }

    pub fn new_param_dim(&self) -> usize {
        self.h_n.ncols()
    }

    /// Rows scaled by `1/sqrt(r_i)`, so `X^T R^-1 Y = wX^T wY`.
    fn whitened(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut wh_m = self.h_m.clone();
        let mut wh_n = self.h_n.clone();
        for i in 0..self.obs_dim() {
            let s = 1.0 / self.noise_diag[i].sqrt();
            wh_m.row_mut(i).scale_mut(s);
            wh_n.row_mut(i).scale_mut(s);
        }
        (wh_m, wh_n)
    }
}

/// The four blocks of the joint information matrix, with `C = B^T` by
/// construction.
#[derive(Debug, Clone)]
pub struct InformationBlocks {
    pub blocks: BlockMatrix2x2,
}

impl InformationBlocks {
    /// Wrap pre-assembled blocks, forcing `C = B^T` and symmetric diagonals.
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, InfoError> {
        let c = b.transpose();
        let blocks =
            BlockMatrix2x2::new(matblocks::symmetrize(&a), b, c, matblocks::symmetrize(&d))?;
        Ok(Self { blocks })
    }

    pub fn existing_dim(&self) -> usize {
        self.blocks.top_dim()
    }

    pub fn new_dim(&self) -> usize {
        self.blocks.bottom_dim()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        self.blocks.assemble()
    }
}

/// Assemble the joint information matrix from a prior and one observation.
pub fn assemble_information(
    prior: &GaussianPrior,
    obs: &LinearObservation,
) -> Result<InformationBlocks, InfoError> {
    if obs.h_m.ncols() != prior.dim() {
        return Err(InfoError::InvalidObservation(format!(
            "H_m has {} columns but the prior dimension is {}",
            obs.h_m.ncols(),
            prior.dim()
        )));
    }
    let p_inv = prior.information()?;
    let (wh_m, wh_n) = obs.whitened();
    let a = p_inv + wh_m.transpose() * &wh_m;
    let b = wh_m.transpose() * &wh_n;
    let d = wh_n.transpose() * &wh_n;
    InformationBlocks::from_parts(a, b, d)
}

/// Joint covariance of `(x_m, x_n)`: the blockwise inverse of the
/// information matrix, symmetrized.
pub fn joint_covariance(info: &InformationBlocks) -> Result<BlockMatrix2x2, InfoError> {
    let inv = block_inverse(&info.blocks)?;
    let top_right = inv.b.clone();
    Ok(BlockMatrix2x2::new(
        matblocks::symmetrize(&inv.a),
        top_right.clone(),
        top_right.transpose(),
        matblocks::symmetrize(&inv.d),
    )?)
}

/// Marginal covariance of the new parameters: the bottom-right block of
/// [`joint_covariance`].
pub fn marginal_covariance_new(info: &InformationBlocks) -> Result<DMatrix<f64>, InfoError> {
    Ok(joint_covariance(info)?.d)
}

/// Marginal information of the new parameters: the Schur complement
/// `D - C A^-1 B`. May be rank-deficient; that is not an error here.
pub fn marginal_information_new(info: &InformationBlocks) -> Result<DMatrix<f64>, InfoError> {
    let s = schur_complement_of_a(&info.blocks)?;
    Ok(matblocks::symmetrize(&s))
}
