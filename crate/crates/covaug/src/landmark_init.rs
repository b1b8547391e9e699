//! Covariance initialization for newly triangulated landmarks.
//!
//! A stacked, linearized observation system `dz = H_x dx + H_f df + w` with
//! isotropic noise `w ~ N(0, sigma^2 I)` is split by QR of the landmark
//! Jacobian `H_f` into a subsystem that constrains the landmark and one that
//! only constrains the state. From the split, the landmark's marginal
//! covariance and its cross-covariance to the state are available three
//! equivalent ways:
//!
//! - blockwise inversion of the joint information matrix ([`augment_one_step`]),
//! - a closed form that never inverts an m x m information matrix
//!   ([`landmark_marginal_covariance_closed_form`]),
//! - an augment-then-EKF-update two-step procedure ([`augment_two_step`]).
//!
//! Isotropic noise is required by the split: an orthogonal change of basis
//! keeps `sigma^2 I` exactly diagonal, which does not hold for general
//! diagonal noise. Anisotropic-noise systems bypass the split and go through
//! `infoaug` directly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::infoaug::{self, GaussianPrior, InfoError, InformationBlocks};
use crate::matblocks::{self, block_inverse, qr_column_null_split, BlockMatrix2x2, MatError};

/// Landmark position parameters per landmark.
pub const LANDMARK_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum LandmarkInitError {
    #[error("landmark is under-observed: Jacobian rank {rank} < 3")]
    UnderObserved { rank: usize },
    #[error("landmark {index} is under-observed: Jacobian rank {rank} < 3")]
    UnderObservedLandmark { index: usize, rank: usize },
    #[error("prior covariance is not invertible")]
    SingularPrior,
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Numeric(#[from] MatError),
}

impl From<InfoError> for LandmarkInitError {
    fn from(e: InfoError) -> Self {
        match e {
            InfoError::SingularPrior => Self::SingularPrior,
            InfoError::InvalidObservation(msg) => Self::InvalidSystem(msg),
            InfoError::Factorization(m) => Self::Numeric(m),
        }
    }
}

/// Stacked linearized observations of one landmark: residual `dz`, state
/// Jacobian `H_x` (k x m), landmark Jacobian `H_f` (k x 3), isotropic noise
/// standard deviation `sigma`.
#[derive(Debug, Clone)]
pub struct LinearizedLandmarkSystem {
    pub residual: DVector<f64>,
    pub h_x: DMatrix<f64>,
    pub h_f: DMatrix<f64>,
    pub noise_sigma: f64,
}

impl LinearizedLandmarkSystem {
    pub fn new(
        residual: DVector<f64>,
        h_x: DMatrix<f64>,
        h_f: DMatrix<f64>,
        noise_sigma: f64,
    ) -> Result<Self, LandmarkInitError> {
        let k = residual.len();
        if k == 0 {
            return Err(LandmarkInitError::InvalidSystem(
                "system needs at least one observation row".into(),
            ));
        }
        if h_x.nrows() != k || h_f.shape() != (k, LANDMARK_DIM) {
            return Err(LandmarkInitError::InvalidSystem(format!(
                "expected H_x with {k} rows and H_f {k}x{LANDMARK_DIM}, got H_x {}x{}, H_f {}x{}",
                h_x.nrows(),
                h_x.ncols(),
                h_f.nrows(),
                h_f.ncols()
            )));
        }
        if !(noise_sigma.is_finite() && noise_sigma > 0.0) {
            return Err(LandmarkInitError::InvalidSystem(
                "noise sigma must be positive".into(),
            ));
        }
        matblocks::ensure_finite(&h_x)?;
        matblocks::ensure_finite(&h_f)?;
        Ok(Self {
            residual,
            h_x,
            h_f,
            noise_sigma,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.residual.len()
    }

    pub fn state_dim(&self) -> usize {
        self.h_x.ncols()
    }
}

/// The observation system after projection onto the column space and left
/// nullspace of `H_f`.
///
/// The `c` subsystem (`z_c`, `H_cx`, `H_cf`) depends on the landmark, the
/// `o` subsystem (`z_o`, `H_o`) does not. Both keep the isotropic noise
/// `sigma^2 I` of the original system. `q_c`/`q_o` are retained so tests can
/// re-assemble the original system.
#[derive(Debug, Clone)]
pub struct NullspaceSplit {
    pub z_c: DVector<f64>,
    pub z_o: DVector<f64>,
    pub h_cx: DMatrix<f64>,
    /// Upper-trapezoidal landmark factor; square and invertible when `rank == 3`.
    pub h_cf: DMatrix<f64>,
    pub h_o: DMatrix<f64>,
    pub noise_sigma: f64,
    pub rank: usize,
    pub q_c: DMatrix<f64>,
    pub q_o: DMatrix<f64>,
}

impl NullspaceSplit {
    /// True when the landmark Jacobian does not have full column rank.
    pub fn is_under_observed(&self) -> bool {
        self.rank < LANDMARK_DIM
    }

    pub fn state_dim(&self) -> usize {
        self.h_cx.ncols()
    }

    /// Projected noise covariance of the `c` subsystem, `sigma^2 I_r`.
    pub fn sigma_c(&self) -> DMatrix<f64> {
        DMatrix::identity(self.rank, self.rank) * self.noise_sigma.powi(2)
    }

    /// Projected noise covariance of the `o` subsystem, `sigma^2 I_(k-r)`.
    pub fn sigma_o(&self) -> DMatrix<f64> {
        let k_o = self.z_o.len();
        DMatrix::identity(k_o, k_o) * self.noise_sigma.powi(2)
    }
}

/// Covariance blocks of a state augmented with landmark parameters.
///
/// `cross_cov` is `m x d` and `landmark_cov` is `d x d` where `d` is 3 for a
/// single landmark and `3L` after augmenting `L` landmarks at once.
#[derive(Debug, Clone)]
pub struct AugmentedCovariance {
    pub state_cov: DMatrix<f64>,
    pub cross_cov: DMatrix<f64>,
    pub landmark_cov: DMatrix<f64>,
}

impl AugmentedCovariance {
    pub fn state_dim(&self) -> usize {
        self.state_cov.nrows()
    }

    pub fn landmark_dim(&self) -> usize {
        self.landmark_cov.nrows()
    }

    /// Full `(m+d) x (m+d)` covariance matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let (m, d) = (self.state_dim(), self.landmark_dim());
        let mut full = DMatrix::zeros(m + d, m + d);
        full.view_mut((0, 0), (m, m)).copy_from(&self.state_cov);
        full.view_mut((0, m), (m, d)).copy_from(&self.cross_cov);
        full.view_mut((m, 0), (d, m))
            .copy_from(&self.cross_cov.transpose());
        full.view_mut((m, m), (d, d)).copy_from(&self.landmark_cov);
        full
    }

    fn from_blocks(blocks: &BlockMatrix2x2) -> Self {
        Self {
            state_cov: blocks.a.clone(),
            cross_cov: blocks.b.clone(),
            landmark_cov: blocks.d.clone(),
        }
    }
}

/// Project the stacked system onto the column space / left nullspace of its
/// landmark Jacobian.
///
/// Never fails on rank deficiency: an under-observed landmark simply comes
/// back with `rank < 3` and an `o` subsystem of `k - rank` rows.
pub fn nullspace_project(
    sys: &LinearizedLandmarkSystem,
) -> Result<NullspaceSplit, LandmarkInitError> {
    let split = qr_column_null_split(&sys.h_f)?;
    Ok(NullspaceSplit {
        z_c: split.q_c.transpose() * &sys.residual,
        z_o: split.q_o.transpose() * &sys.residual,
        h_cx: split.q_c.transpose() * &sys.h_x,
        h_cf: split.t_c.clone(),
        h_o: split.q_o.transpose() * &sys.h_x,
        noise_sigma: sys.noise_sigma,
        rank: split.rank(),
        q_c: split.q_c,
        q_o: split.q_o,
    })
}

fn check_fully_observed(split: &NullspaceSplit) -> Result<(), LandmarkInitError> {
    if split.is_under_observed() {
        Err(LandmarkInitError::UnderObserved { rank: split.rank })
    } else {
        Ok(())
    }
}

fn prior_information(prior_cov: &DMatrix<f64>) -> Result<DMatrix<f64>, LandmarkInitError> {
    let chol = prior_cov
        .clone()
        .cholesky()
        .ok_or(LandmarkInitError::SingularPrior)?;
    Ok(matblocks::symmetrize(&chol.inverse()))
}

/// Information-matrix blocks of the joint (state, landmark) system built
/// from a projected system and the state prior covariance:
///
/// ```text
/// A = P^-1 + (H_cx^T H_cx + H_o^T H_o) / sigma^2
/// B = H_cx^T H_cf / sigma^2
/// D = H_cf^T H_cf / sigma^2
/// ```
pub fn assemble_landmark_blocks(
    split: &NullspaceSplit,
    prior_cov: &DMatrix<f64>,
) -> Result<InformationBlocks, LandmarkInitError> {
    check_fully_observed(split)?;
    if prior_cov.nrows() != split.state_dim() || !prior_cov.is_square() {
        return Err(LandmarkInitError::InvalidSystem(format!(
            "prior covariance {}x{} does not match state dimension {}",
            prior_cov.nrows(),
            prior_cov.ncols(),
            split.state_dim()
        )));
    }
    let p_inv = prior_information(prior_cov)?;
    let inv_var = 1.0 / split.noise_sigma.powi(2);
    let a = p_inv
        + (split.h_cx.transpose() * &split.h_cx + split.h_o.transpose() * &split.h_o) * inv_var;
    let b = split.h_cx.transpose() * &split.h_cf * inv_var;
    let d = split.h_cf.transpose() * &split.h_cf * inv_var;
    Ok(InformationBlocks::from_parts(a, b, d)?)
}

/// `(P^-1 + H_o^T Sigma_o^-1 H_o)^-1` evaluated through the matrix-inversion
/// identity `P - P H_o^T (H_o P H_o^T + Sigma_o)^-1 H_o P`, so the only
/// inverse taken is of the `(k-3) x (k-3)` innovation matrix.
fn state_marginal_after_nullspace_update(
    split: &NullspaceSplit,
    prior_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LandmarkInitError> {
    let k_o = split.z_o.len();
    if k_o == 0 {
        return Ok(prior_cov.clone());
    }
    let var = split.noise_sigma.powi(2);
    let h_o_p = &split.h_o * prior_cov;
    let innovation = &h_o_p * split.h_o.transpose() + DMatrix::identity(k_o, k_o) * var;
    let chol = innovation
        .cholesky()
        .ok_or(LandmarkInitError::SingularPrior)?;
    let solved = chol.solve(&h_o_p);
    Ok(matblocks::symmetrize(
        &(prior_cov - h_o_p.transpose() * solved),
    ))
}

/// Closed-form marginal covariance of a well-observed landmark:
///
/// ```text
/// cov(df) = H_cf^-1 Sigma_c H_cf^-T
///         + H_cf^-1 H_cx (P^-1 + H_o^T Sigma_o^-1 H_o)^-1 H_cx^T H_cf^-T
/// ```
///
/// with the inner inverse evaluated through
/// [`state_marginal_after_nullspace_update`], so no m x m information matrix
/// is ever inverted.
pub fn landmark_marginal_covariance_closed_form(
    split: &NullspaceSplit,
    prior_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LandmarkInitError> {
    check_fully_observed(split)?;
    let h_cf_inv = split
        .h_cf
        .clone()
        .try_inverse()
        .ok_or(LandmarkInitError::UnderObserved { rank: split.rank })?;
    let inner = state_marginal_after_nullspace_update(split, prior_cov)?;
    let var = split.noise_sigma.powi(2);
    let core = DMatrix::identity(LANDMARK_DIM, LANDMARK_DIM) * var
        + &split.h_cx * inner * split.h_cx.transpose();
    Ok(matblocks::symmetrize(
        &(&h_cf_inv * core * h_cf_inv.transpose()),
    ))
}

/// Augment the state covariance with one landmark by blockwise inversion of
/// the joint information matrix.
pub fn augment_one_step(
    split: &NullspaceSplit,
    prior: &GaussianPrior,
) -> Result<AugmentedCovariance, LandmarkInitError> {
    let info = assemble_landmark_blocks(split, &prior.covariance)?;
    let cov = infoaug::joint_covariance(&info)?;
    Ok(AugmentedCovariance::from_blocks(&cov))
}

/// Augment the state covariance with one landmark in two steps: initialize
/// the landmark blocks from the `c` subsystem, then run a covariance-only
/// EKF update with the `o` subsystem on the extended state.
///
/// The net effect equals [`augment_one_step`]; the update uses the Joseph
/// form so the result stays symmetric PSD under roundoff.
pub fn augment_two_step(
    split: &NullspaceSplit,
    prior: &GaussianPrior,
) -> Result<AugmentedCovariance, LandmarkInitError> {
    check_fully_observed(split)?;
    let m = split.state_dim();
    if prior.dim() != m {
        return Err(LandmarkInitError::InvalidSystem(format!(
            "prior dimension {} does not match state dimension {m}",
            prior.dim()
        )));
    }
    let p = &prior.covariance;
    let var = split.noise_sigma.powi(2);
    let h_cf_inv = split
        .h_cf
        .clone()
        .try_inverse()
        .ok_or(LandmarkInitError::UnderObserved { rank: split.rank })?;

    // Step 1: append the landmark using only the c subsystem. Solving
    // df = H_cf^-1 (z_c - H_cx dx - w_c) gives
    //   cov(dx, df) = -P H_cx^T H_cf^-T
    //   cov(df)     = H_cf^-1 (H_cx P H_cx^T + Sigma_c) H_cf^-T
    let h_cx_p = &split.h_cx * p;
    let cross = -(h_cx_p.transpose() * h_cf_inv.transpose());
    let lm_core =
        &h_cx_p * split.h_cx.transpose() + DMatrix::identity(LANDMARK_DIM, LANDMARK_DIM) * var;
    let lm_cov = matblocks::symmetrize(&(&h_cf_inv * lm_core * h_cf_inv.transpose()));

    let dim = m + LANDMARK_DIM;
    let mut p_aug = DMatrix::zeros(dim, dim);
    p_aug.view_mut((0, 0), (m, m)).copy_from(p);
    p_aug.view_mut((0, m), (m, LANDMARK_DIM)).copy_from(&cross);
    p_aug
        .view_mut((m, 0), (LANDMARK_DIM, m))
        .copy_from(&cross.transpose());
    p_aug
        .view_mut((m, m), (LANDMARK_DIM, LANDMARK_DIM))
        .copy_from(&lm_cov);

    // Step 2: covariance-only EKF update with the landmark-independent
    // subsystem, observation matrix [H_o 0] on the extended state.
    let k_o = split.z_o.len();
    if k_o > 0 {
        let mut h2 = DMatrix::zeros(k_o, dim);
        h2.view_mut((0, 0), (k_o, m)).copy_from(&split.h_o);
        let innovation = &h2 * &p_aug * h2.transpose() + DMatrix::identity(k_o, k_o) * var;
        let chol = innovation
            .cholesky()
            .ok_or(LandmarkInitError::SingularPrior)?;
        let gain = chol.solve(&(&h2 * &p_aug)).transpose();
        let i_kh = DMatrix::identity(dim, dim) - &gain * &h2;
        p_aug = &i_kh * p_aug * i_kh.transpose() + &gain * gain.transpose() * var;
        p_aug = matblocks::symmetrize(&p_aug);
    }

    Ok(AugmentedCovariance {
        state_cov: p_aug.view((0, 0), (m, m)).into_owned(),
        cross_cov: p_aug.view((0, m), (m, LANDMARK_DIM)).into_owned(),
        landmark_cov: p_aug
            .view((m, m), (LANDMARK_DIM, LANDMARK_DIM))
            .into_owned(),
    })
}

/// Augment the state covariance with several landmarks at once.
///
/// Each landmark's projected system contributes independently to the joint
/// information matrix (observation noises are mutually independent), which
/// is then inverted blockwise. The result matches augmenting the landmarks
/// sequentially with [`augment_one_step`]. Output is deterministic for a
/// fixed input ordering.
pub fn augment_multiple(
    splits: &[NullspaceSplit],
    prior: &GaussianPrior,
) -> Result<AugmentedCovariance, LandmarkInitError> {
    if splits.is_empty() {
        return Err(LandmarkInitError::InvalidSystem(
            "need at least one landmark".into(),
        ));
    }
    let m = prior.dim();
    for (index, split) in splits.iter().enumerate() {
        if split.is_under_observed() {
            return Err(LandmarkInitError::UnderObservedLandmark {
                index,
                rank: split.rank,
            });
        }
        if split.state_dim() != m {
            return Err(LandmarkInitError::InvalidSystem(format!(
                "landmark {index} has state dimension {}, expected {m}",
                split.state_dim()
            )));
        }
    }
    let p_inv = prior_information(&prior.covariance)?;
    let total = LANDMARK_DIM * splits.len();
    let mut a = p_inv;
    let mut b = DMatrix::zeros(m, total);
    let mut d = DMatrix::zeros(total, total);
    for (i, split) in splits.iter().enumerate() {
        let inv_var = 1.0 / split.noise_sigma.powi(2);
        a += (split.h_cx.transpose() * &split.h_cx + split.h_o.transpose() * &split.h_o) * inv_var;
        let col = LANDMARK_DIM * i;
        b.view_mut((0, col), (m, LANDMARK_DIM))
            .copy_from(&(split.h_cx.transpose() * &split.h_cf * inv_var));
        d.view_mut((col, col), (LANDMARK_DIM, LANDMARK_DIM))
            .copy_from(&(split.h_cf.transpose() * &split.h_cf * inv_var));
    }
    let c = b.transpose();
    let blocks = BlockMatrix2x2::new(matblocks::symmetrize(&a), b, c, matblocks::symmetrize(&d))?;
    let inv = block_inverse(&blocks)?;
    Ok(AugmentedCovariance {
        state_cov: matblocks::symmetrize(&inv.a),
        cross_cov: inv.b.clone(),
        landmark_cov: matblocks::symmetrize(&inv.d),
    })
}
