//! Dense small-matrix kernels: 2x2 block inversion, Schur complements,
//! QR with column-space/nullspace separation, and rank-revealing pivoted
//! LDL^T factorization.
//!
//! All routines operate on `nalgebra` dynamic matrices and are written for
//! the small, dense systems that arise when augmenting a filter state or
//! weighting a pose constraint (dimensions in the tens, not thousands).
//! Factorizations are deterministic: pivot ties break toward the lowest
//! index, so repeated runs produce identical bytes.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Reciprocal condition estimate below this is treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// A pivot below `-INDEFINITE_REL_TOL * largest_pivot` rejects a matrix as
/// indefinite; negative pivots above it are roundoff and clamp to zero.
pub const INDEFINITE_REL_TOL: f64 = 1e-9;

/// Relative asymmetry above this fails the symmetry check in `pivoted_ldlt`.
pub const SYMMETRY_REL_TOL: f64 = 1e-8;

/// Which block of a [`BlockMatrix2x2`] an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    A,
    D,
}

#[derive(Debug, Error)]
pub enum MatError {
    #[error("block {block:?} is numerically singular (rcond {rcond:.3e})")]
    SingularBlock { block: BlockId, rcond: f64 },
    #[error("Schur complement is numerically singular (rcond {rcond:.3e})")]
    SingularSchur { rcond: f64 },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix is indefinite (pivot {pivot:.3e})")]
    IndefiniteMatrix { pivot: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Error if any entry of `m` is NaN or infinite.
pub fn ensure_finite(m: &DMatrix<f64>) -> Result<(), MatError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MatError::NonFinite)
    }
}

/// Largest absolute entry, 0 for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Relative Frobenius-norm error `|x - y|_F / max(|y|_F, 1)`.
pub fn relative_error(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x - y).norm() / y.norm().max(1.0)
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

/// Explicit inverse plus a 1-norm reciprocal condition estimate.
///
/// Returns `(None, 0.0)` when LU factorization finds the matrix exactly
/// singular. Cheap at these sizes and the inverse is needed anyway.
fn inverse_with_rcond(m: &DMatrix<f64>) -> (Option<DMatrix<f64>>, f64) {
    if m.nrows() == 0 {
        return (Some(m.clone()), 1.0);
    }
    match m.clone().try_inverse() {
        Some(inv) => {
            let rcond = 1.0 / (norm1(m) * norm1(&inv)).max(f64::MIN_POSITIVE);
            (Some(inv), rcond)
        }
        None => (None, 0.0),
    }
}

/// Four conforming blocks `[A B; C D]` of a partitioned square matrix.
///
/// When the matrix is an information (Hessian) matrix, `C = B^T` and the
/// diagonal blocks are symmetric; nothing here requires that, it is checked
/// by the callers that need it.
#[derive(Debug, Clone)]
pub struct BlockMatrix2x2 {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl BlockMatrix2x2 {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, MatError> {
        let (m, n) = (a.nrows(), d.nrows());
        if a.ncols() != m || d.ncols() != n {
            return Err(MatError::DimensionMismatch(format!(
                "diagonal blocks must be square, got A {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        if b.shape() != (m, n) || c.shape() != (n, m) {
            return Err(MatError::DimensionMismatch(format!(
                "off-diagonal blocks must be {m}x{n} and {n}x{m}, got B {}x{}, C {}x{}",
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        for block in [&a, &b, &c, &d] {
            ensure_finite(block)?;
        }
        Ok(Self { a, b, c, d })
    }

    /// Dimension of the top-left block.
    pub fn top_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Dimension of the bottom-right block.
    pub fn bottom_dim(&self) -> usize {
        self.d.nrows()
    }

    /// Split a square matrix into blocks at row/column `split`.
    pub fn from_matrix(m: &DMatrix<f64>, split: usize) -> Result<Self, MatError> {
        let n = m.nrows();
        if m.ncols() != n || split > n {
            return Err(MatError::DimensionMismatch(format!(
                "cannot split {}x{} at {split}",
                m.nrows(),
                m.ncols()
            )));
        }
        Self::new(
            m.view((0, 0), (split, split)).into_owned(),
            m.view((0, split), (split, n - split)).into_owned(),
            m.view((split, 0), (n - split, split)).into_owned(),
            m.view((split, split), (n - split, n - split)).into_owned(),
        )
    }

    /// Assemble the full `(m+n) x (m+n)` matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let (m, n) = (self.top_dim(), self.bottom_dim());
        let mut full = DMatrix::zeros(m + n, m + n);
        full.view_mut((0, 0), (m, m)).copy_from(&self.a);
        full.view_mut((0, m), (m, n)).copy_from(&self.b);
        full.view_mut((m, 0), (n, m)).copy_from(&self.c);
        full.view_mut((m, m), (n, n)).copy_from(&self.d);
        full
    }

    /// True when `C = B^T` and the diagonal blocks are symmetric, to `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        relative_error(&self.c, &self.b.transpose()) <= tol
            && relative_error(&self.a, &self.a.transpose()) <= tol
            && relative_error(&self.d, &self.d.transpose()) <= tol
    }
}

/// Invert `[A B; C D]` blockwise.
///
/// Requires `D` and the Schur complement `A - B D^-1 C` to be invertible;
/// the inverse is
///
/// ```text
/// [ S^-1            -S^-1 B D^-1                 ]
/// [ -D^-1 C S^-1    D^-1 + D^-1 C S^-1 B D^-1    ]     S = A - B D^-1 C
/// ```
///
/// For an information matrix the bottom-right block of the result is the
/// marginal covariance of the second parameter group.
pub fn block_inverse(blocks: &BlockMatrix2x2) -> Result<BlockMatrix2x2, MatError> {
    let (d_inv, rcond_d) = inverse_with_rcond(&blocks.d);
    let d_inv = match d_inv {
        Some(inv) if rcond_d >= RCOND_MIN => inv,
        _ => {
            return Err(MatError::SingularBlock {
                block: BlockId::D,
                rcond: rcond_d,
            })
        }
    };
    let schur = &blocks.a - &blocks.b * &d_inv * &blocks.c;
    let (s_inv, rcond_s) = inverse_with_rcond(&schur);
    let s_inv = match s_inv {
        Some(inv) if rcond_s >= RCOND_MIN => inv,
        _ => return Err(MatError::SingularSchur { rcond: rcond_s }),
    };

    let top_right = -(&s_inv * &blocks.b * &d_inv);
    let bottom_left = -(&d_inv * &blocks.c * &s_inv);
    let bottom_right = &d_inv + &d_inv * &blocks.c * &s_inv * &blocks.b * &d_inv;
    let inv = BlockMatrix2x2::new(s_inv, top_right, bottom_left, bottom_right)?;

    // One Newton refinement step, X <- X (2I - M X). The Schur subtraction
    // cancels badly when the off-diagonal information dominates A; the
    // refinement restores the product-with-input identity to near roundoff.
    let full = blocks.assemble();
    let x0 = inv.assemble();
    let dim = x0.nrows();
    let x1 = &x0 * (DMatrix::identity(dim, dim) * 2.0 - &full * &x0);
    BlockMatrix2x2::from_matrix(&x1, blocks.top_dim())
}

/// Schur complement of the top-left block: `D - C A^-1 B`.
///
/// This is the marginal information of the second parameter group when the
/// input is an information matrix; it may be singular, which is reported by
/// downstream rank-revealing factorizations rather than here.
pub fn schur_complement_of_a(blocks: &BlockMatrix2x2) -> Result<DMatrix<f64>, MatError> {
    let (a_inv, rcond_a) = inverse_with_rcond(&blocks.a);
    let a_inv = match a_inv {
        Some(inv) if rcond_a >= RCOND_MIN => inv,
        _ => {
            return Err(MatError::SingularBlock {
                block: BlockId::A,
                rcond: rcond_a,
            })
        }
    };
    Ok(&blocks.d - &blocks.c * a_inv * &blocks.b)
}

// ---------------------------------------------------------------------------
// Householder QR with column pivoting and nullspace separation
// ---------------------------------------------------------------------------

/// Result of [`qr_column_null_split`]: `M = Q_c T_c`, `Q_o^T M = 0`.
#[derive(Debug, Clone)]
pub struct QrNullSplit {
    /// Orthonormal basis of the column space, `k x r`.
    pub q_c: DMatrix<f64>,
    /// Orthonormal basis of the left nullspace, `k x (k-r)`.
    pub q_o: DMatrix<f64>,
    /// Upper-trapezoidal factor with `Q_c T_c = M`, `r x c`.
    pub t_c: DMatrix<f64>,
}

impl QrNullSplit {
    /// Numerical rank of the factored matrix.
    pub fn rank(&self) -> usize {
        self.q_c.ncols()
    }
}

/// Default relative rank tolerance for an `r x c` factorization.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

struct QrFactorization {
    /// Full orthogonal factor, `k x k`.
    q: DMatrix<f64>,
    /// Triangularized working matrix, `k x c`.
    r: DMatrix<f64>,
}

/// Unit Householder vector mapping `x` onto `-sign(x_0) |x| e_1`, or `None`
/// when `x` is already zero.
fn householder_unit(x: &DVector<f64>) -> Option<DVector<f64>> {
    let norm = x.norm();
    if norm == 0.0 {
        return None;
    }
    let mut v = x.clone();
    let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    Some(v / vn)
}

/// Householder QR of `m`, optionally with greedy column pivoting on the
/// largest trailing column norm (ties break to the lowest index).
fn householder_qr(m: &DMatrix<f64>, pivot: Option<&mut Vec<usize>>) -> QrFactorization {
    let (k, c) = m.shape();
    let mut r = m.clone();
    let mut q = DMatrix::identity(k, k);
    let mut perm = pivot;
    for j in 0..k.min(c) {
        if let Some(perm) = perm.as_deref_mut() {
            let mut best = j;
            let mut best_norm = r.view((j, j), (k - j, 1)).norm_squared();
            for col in j + 1..c {
                let n = r.view((j, col), (k - j, 1)).norm_squared();
                if n > best_norm {
                    best = col;
                    best_norm = n;
                }
            }
            if best != j {
                r.swap_columns(j, best);
                perm.swap(j, best);
            }
        }
        let x = r.view((j, j), (k - j, 1)).into_owned().column(0).into_owned();
        if let Some(v) = householder_unit(&x) {
            // r[j.., j..] -= 2 v (v^T r[j.., j..])
            let vt_r = v.transpose() * r.view((j, j), (k - j, c - j));
            let update = 2.0 * &v * vt_r;
            let mut block = r.view_mut((j, j), (k - j, c - j));
            block -= update;
            // accumulate Q = H_0 H_1 ... from the right
            let q_v = q.view((0, j), (k, k - j)) * &v;
            let update_q = 2.0 * q_v * v.transpose();
            let mut q_block = q.view_mut((0, j), (k, k - j));
            q_block -= update_q;
            for i in j + 1..k {
                r[(i, j)] = 0.0;
            }
        }
    }
    QrFactorization { q, r }
}

/// QR decomposition of `M` (`k x c`) separating column space and left
/// nullspace, with the numerical rank `r` chosen by column-pivoted
/// Householder QR.
///
/// Returns orthonormal `Q_c` (`k x r`), `Q_o` (`k x (k-r)`) and an
/// upper-trapezoidal `T_c` (`r x c`) with `Q_c T_c = M` and `Q_o^T M = 0`.
/// Rank deficiency is reported through `r < c`, never as an error. The
/// pivoted pass only decides the rank and the column-space basis; a second,
/// unpivoted QR of `Q_c^T M` rotates the basis so `T_c` comes out
/// trapezoidal in the original column order.
pub fn qr_column_null_split(m: &DMatrix<f64>) -> Result<QrNullSplit, MatError> {
    qr_column_null_split_with_tol(m, default_rank_tol(m.nrows(), m.ncols()))
}

/// [`qr_column_null_split`] with an explicit relative rank tolerance.
pub fn qr_column_null_split_with_tol(
    m: &DMatrix<f64>,
    rank_rel_tol: f64,
) -> Result<QrNullSplit, MatError> {
    ensure_finite(m)?;
    let (k, c) = m.shape();
    if k == 0 || c == 0 {
        return Err(MatError::DimensionMismatch(format!(
            "qr_column_null_split requires a non-empty matrix, got {k}x{c}"
        )));
    }
    let mut perm: Vec<usize> = (0..c).collect();
    let fact = householder_qr(m, Some(&mut perm));

    let diag_max = (0..k.min(c)).fold(0.0_f64, |acc, j| acc.max(fact.r[(j, j)].abs()));
    let tol = rank_rel_tol * diag_max;
    let rank = (0..k.min(c))
        .take_while(|&j| fact.r[(j, j)].abs() > tol)
        .count();

    let q_c = fact.q.view((0, 0), (k, rank)).into_owned();
    let q_o = fact.q.view((0, rank), (k, k - rank)).into_owned();
    if rank == 0 {
        return Ok(QrNullSplit {
            q_c,
            q_o,
            t_c: DMatrix::zeros(0, c),
        });
    }
    // Rotate the column-space basis so the trapezoidal factor is expressed
    // in the original (unpermuted) column order.
    let s = q_c.transpose() * m;
    let inner = householder_qr(&s, None);
    Ok(QrNullSplit {
        q_c: q_c * inner.q,
        q_o,
        t_c: inner.r,
    })
}

// ---------------------------------------------------------------------------
// Pivoted LDL^T
// ---------------------------------------------------------------------------

/// Rank-revealing `P^T L D L^T P` factorization of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct LdltFactor {
    /// `permutation[i]` is the original index factored at position `i`.
    pub permutation: Vec<usize>,
    /// Unit lower-triangular factor.
    pub l: DMatrix<f64>,
    /// Non-negative diagonal, non-increasing; entries beyond `rank` are zero.
    pub d: DVector<f64>,
    /// Count of diagonal entries above the rank tolerance.
    pub rank: usize,
}

impl LdltFactor {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Permutation matrix `P` with `P[i, permutation[i]] = 1`.
    pub fn permutation_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut p = DMatrix::zeros(n, n);
        for (i, &j) in self.permutation.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    }

    /// `P^T L diag(d) L^T P`, which reproduces the factored matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let p = self.permutation_matrix();
        let ld = &self.l * DMatrix::from_diagonal(&self.d) * self.l.transpose();
        p.transpose() * ld * p
    }
}

/// Pivoted LDL^T of a symmetric positive semidefinite matrix.
///
/// Diagonal pivoting on the largest remaining entry keeps `d` non-increasing,
/// so the numerical rank is the count of leading entries above
/// `rank_rel_tol * d_max`. Pivots in `[-INDEFINITE_REL_TOL * scale, tol]`
/// clamp to zero; anything more negative is rejected as indefinite.
pub fn pivoted_ldlt(s: &DMatrix<f64>) -> Result<LdltFactor, MatError> {
    pivoted_ldlt_with_tol(s, default_rank_tol(s.nrows(), s.ncols()))
}

/// [`pivoted_ldlt`] with an explicit relative rank tolerance.
pub fn pivoted_ldlt_with_tol(s: &DMatrix<f64>, rank_rel_tol: f64) -> Result<LdltFactor, MatError> {
    ensure_finite(s)?;
    let n = s.nrows();
    if s.ncols() != n {
        return Err(MatError::DimensionMismatch(format!(
            "pivoted_ldlt requires a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = max_abs(s);
    let mut max_asym = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            max_asym = max_asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if max_asym > SYMMETRY_REL_TOL * scale.max(1.0) {
        return Err(MatError::NotSymmetric {
            max_asymmetry: max_asym,
        });
    }

    let mut w = symmetrize(s);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::identity(n, n);
    let mut d = DVector::zeros(n);
    let mut largest_pivot = 0.0_f64;
    let mut rank = 0;

    for j in 0..n {
        // largest remaining diagonal entry; strict comparison keeps the
        // lowest index on ties
        let mut p = j;
        for i in j + 1..n {
            if w[(i, i)] > w[(p, p)] {
                p = i;
            }
        }
        if p != j {
            w.swap_rows(j, p);
            w.swap_columns(j, p);
            perm.swap(j, p);
            for col in 0..j {
                let tmp = l[(j, col)];
                l[(j, col)] = l[(p, col)];
                l[(p, col)] = tmp;
            }
        }
        let pivot = w[(j, j)];
        let indef_tol = INDEFINITE_REL_TOL * largest_pivot.max(scale);
        if pivot < -indef_tol {
            return Err(MatError::IndefiniteMatrix { pivot });
        }
        largest_pivot = largest_pivot.max(pivot);
        let zero_tol = rank_rel_tol * largest_pivot;
        if pivot <= zero_tol {
            // PSD with a vanishing pivot implies the whole trailing block
            // vanishes; anything left over means the input was indefinite.
            for i in j..n {
                for k in j..=i {
                    if w[(i, k)].abs() > zero_tol.max(rank_rel_tol * scale) {
                        return Err(MatError::IndefiniteMatrix { pivot: w[(i, k)] });
                    }
                }
            }
            break;
        }
        d[j] = pivot;
        rank += 1;
        for i in j + 1..n {
            l[(i, j)] = w[(i, j)] / pivot;
        }
        for i in j + 1..n {
            for k in j + 1..=i {
                let upd = l[(i, j)] * pivot * l[(k, j)];
                w[(i, k)] -= upd;
                w[(k, i)] = w[(i, k)];
            }
        }
    }

    Ok(LdltFactor {
        permutation: perm,
        l,
        d,
        rank,
    })
}

/// Square-root factor `R = sqrt(D) L^T P` of an LDL^T factorization, with
/// the zero rows beyond the rank dropped: `R^T R` reproduces the factored
/// matrix and `R` has `rank` rows. `R` is generally not triangular.
pub fn square_root_from_ldlt(f: &LdltFactor) -> DMatrix<f64> {
    let n = f.dim();
    let mut inv_perm = vec![0usize; n];
    for (i, &j) in f.permutation.iter().enumerate() {
        inv_perm[j] = i;
    }
    DMatrix::from_fn(f.rank, n, |i, j| f.d[i].max(0.0).sqrt() * f.l[(inv_perm[j], i)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Well-conditioned random SPD matrix.
    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let g = random_matrix(rng, n, n);
        &g * g.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn block_inverse_scalar_blocks() {
        // assembled [[2,1],[1,2]] inverts to [[2/3,-1/3],[-1/3,2/3]]
        let blocks = BlockMatrix2x2::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let inv = block_inverse(&blocks).unwrap();
        assert!((inv.a[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
        assert!((inv.b[(0, 0)] + 1.0 / 3.0).abs() < 1e-14);
        assert!((inv.c[(0, 0)] + 1.0 / 3.0).abs() < 1e-14);
        assert!((inv.d[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn block_inverse_block_diagonal_identity() {
        let blocks = BlockMatrix2x2::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 3),
            DMatrix::zeros(3, 2),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let inv = block_inverse(&blocks).unwrap();
        assert_eq!(inv.a, DMatrix::identity(2, 2));
        assert_eq!(inv.d, DMatrix::identity(3, 3));
        assert!(max_abs(&inv.b) == 0.0 && max_abs(&inv.c) == 0.0);
    }

    #[test]
    fn block_inverse_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let full = random_spd(&mut rng, 5);
        let blocks = BlockMatrix2x2::from_matrix(&full, 3).unwrap();
        let inv = block_inverse(&blocks).unwrap().assemble();
        let dense = full.clone().try_inverse().unwrap();
        assert!(relative_error(&inv, &dense) < 1e-10);
    }

    #[test]
    fn block_inverse_rejects_singular_d() {
        let blocks = BlockMatrix2x2::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        match block_inverse(&blocks) {
            Err(MatError::SingularBlock {
                block: BlockId::D,
                rcond,
            }) => assert!(rcond < RCOND_MIN),
            other => panic!("expected SingularBlock(D), got {other:?}"),
        }
    }

    #[test]
    fn block_inverse_rejects_singular_schur() {
        // A - B D^-1 C = 1 - 1*1*1 = 0
        let one = DMatrix::from_element(1, 1, 1.0);
        let blocks =
            BlockMatrix2x2::new(one.clone(), one.clone(), one.clone(), one.clone()).unwrap();
        match block_inverse(&blocks) {
            Err(MatError::SingularSchur { rcond }) => assert!(rcond < RCOND_MIN),
            other => panic!("expected SingularSchur, got {other:?}"),
        }
    }

    #[test]
    fn schur_complement_decoupled_returns_d() {
        let blocks = BlockMatrix2x2::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]),
        )
        .unwrap();
        let s = schur_complement_of_a(&blocks).unwrap();
        assert_eq!(s, blocks.d);
    }

    #[test]
    fn schur_complement_scalar() {
        let blocks = BlockMatrix2x2::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let s = schur_complement_of_a(&blocks).unwrap();
        assert!((s[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn schur_complement_is_inverse_of_marginal_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let full = random_spd(&mut rng, 7);
            let blocks = BlockMatrix2x2::from_matrix(&full, 4).unwrap();
            let schur = schur_complement_of_a(&blocks).unwrap();
            let dense_inv = full.clone().try_inverse().unwrap();
            let marginal = dense_inv.view((4, 4), (3, 3)).into_owned();
            let schur_inv = schur.try_inverse().unwrap();
            assert!(relative_error(&schur_inv, &marginal) < 1e-9);
        }
    }

    #[test]
    fn bottom_right_of_block_inverse_inverts_schur_of_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.random_range(2..10usize);
            let split = rng.random_range(1..n);
            let full = random_spd(&mut rng, n);
            let blocks = BlockMatrix2x2::from_matrix(&full, split).unwrap();
            let inv = block_inverse(&blocks).unwrap();
            let schur = schur_complement_of_a(&blocks).unwrap();
            let schur_inv = schur.try_inverse().unwrap();
            assert!(relative_error(&inv.d, &schur_inv) < 1e-9);
        }
    }

    #[test]
    fn qr_split_axis_aligned_column() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let split = qr_column_null_split(&m).unwrap();
        assert_eq!(split.rank(), 1);
        assert!((split.q_c[(0, 0)] - 1.0).abs() < 1e-15 && split.q_c[(1, 0)].abs() < 1e-15);
        assert!(split.q_o[(0, 0)].abs() < 1e-15 && (split.q_o[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((split.t_c[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn qr_split_square_nonsingular_has_empty_nullspace() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 2.0]);
        let split = qr_column_null_split(&m).unwrap();
        assert_eq!(split.rank(), 3);
        assert_eq!(split.q_o.ncols(), 0);
        assert!(relative_error(&(&split.q_c * &split.t_c), &m) < 1e-12);
    }

    #[test]
    fn qr_split_reconstructs_tall_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 6, 3);
        let split = qr_column_null_split(&m).unwrap();
        assert_eq!(split.rank(), 3);
        assert_eq!(split.q_o.ncols(), 3);
        assert!((&split.q_c * &split.t_c - &m).norm() < 1e-12);
        assert!((split.q_o.transpose() * &m).norm() < 1e-12 * m.norm().max(1.0));
        // T_c upper-trapezoidal
        for i in 0..split.t_c.nrows() {
            for j in 0..i.min(split.t_c.ncols()) {
                assert!(split.t_c[(i, j)].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn qr_split_detects_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_matrix(&mut rng, 6, 2);
        let coeffs = random_matrix(&mut rng, 2, 4);
        let m = g * coeffs; // rank 2, 6x4
        let split = qr_column_null_split(&m).unwrap();
        assert_eq!(split.rank(), 2);
        assert!((&split.q_c * &split.t_c - &m).norm() < 1e-12 * m.norm());
        assert!((split.q_o.transpose() * &m).norm() < 1e-12 * m.norm());
    }

    #[test]
    fn ldlt_identity() {
        let f = pivoted_ldlt(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.rank, 3);
        assert_eq!(f.l, DMatrix::identity(3, 3));
        assert!(f.d.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn ldlt_explicit_rank_deficiency() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let f = pivoted_ldlt(&s).unwrap();
        assert_eq!(f.rank, 1);
        assert!((f.d[0] - 4.0).abs() < 1e-15 && f.d[1] == 0.0);
        assert!(relative_error(&f.reconstruct(), &s) < 1e-14);
    }

    #[test]
    fn ldlt_gram_matrix_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = random_matrix(&mut rng, 2, 4);
        let s = g.transpose() * &g;
        let f = pivoted_ldlt(&s).unwrap();
        assert_eq!(f.rank, 2);
        assert!((f.reconstruct() - &s).norm() < 1e-12 * s.norm().max(1.0));
    }

    #[test]
    fn ldlt_rejects_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0]);
        assert!(matches!(
            pivoted_ldlt(&s),
            Err(MatError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn ldlt_rejects_indefinite() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            pivoted_ldlt(&s),
            Err(MatError::IndefiniteMatrix { .. })
        ));
        // zero diagonal but nonzero coupling is indefinite too
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            pivoted_ldlt(&s),
            Err(MatError::IndefiniteMatrix { .. })
        ));
    }

    #[test]
    fn sqrt_factor_identity() {
        let f = pivoted_ldlt(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(square_root_from_ldlt(&f), DMatrix::identity(2, 2));
    }

    #[test]
    fn sqrt_factor_rank_deficient_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.0]));
        let f = pivoted_ldlt(&s).unwrap();
        let r = square_root_from_ldlt(&f);
        assert_eq!(r.shape(), (1, 2));
        assert!(relative_error(&(r.transpose() * &r), &s) < 1e-14);
    }

    #[test]
    fn sqrt_factor_reconstructs_rank_deficient_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let g = random_matrix(&mut rng, 4, 6);
        let s = g.transpose() * &g; // 6x6 rank 4
        let f = pivoted_ldlt(&s).unwrap();
        assert_eq!(f.rank, 4);
        let r = square_root_from_ldlt(&f);
        assert_eq!(r.nrows(), 4);
        assert!(relative_error(&(r.transpose() * &r), &s) < 1e-10);
    }

    #[test]
    fn block_inverse_identity_product_over_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..1000 {
            let m = rng.random_range(1..=12usize);
            let n = rng.random_range(1..=12usize);
            let full = random_spd(&mut rng, m + n);
            let blocks = BlockMatrix2x2::from_matrix(&full, m).unwrap();
            let inv = block_inverse(&blocks).unwrap();
            let prod = full * inv.assemble();
            let eye = DMatrix::identity(m + n, m + n);
            assert!(relative_error(&prod, &eye) < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn qr_split_basis_is_orthonormal(seed in 0u64..500, k in 1usize..9, c in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, k, c);
            let split = qr_column_null_split(&m).unwrap();
            let mut q = DMatrix::zeros(k, k);
            q.view_mut((0, 0), (k, split.rank())).copy_from(&split.q_c);
            q.view_mut((0, split.rank()), (k, k - split.rank())).copy_from(&split.q_o);
            let gram = q.transpose() * &q;
            prop_assert!((gram - DMatrix::identity(k, k)).norm() < 1e-12);
            prop_assert!((split.q_o.transpose() * &m).norm() <= 1e-12 * m.norm().max(1.0));
        }

        #[test]
        fn ldlt_sqrt_roundtrip(seed in 0u64..500, n in 1usize..8, rows in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_matrix(&mut rng, rows, n);
            let s = g.transpose() * &g;
            let f = pivoted_ldlt(&s).unwrap();
            prop_assert_eq!(f.rank, rows.min(n));
            let r = square_root_from_ldlt(&f);
            prop_assert!(relative_error(&(r.transpose() * &r), &s) < 1e-9);
        }
    }
}
