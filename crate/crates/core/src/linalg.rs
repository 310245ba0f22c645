//! Small dense linear-algebra helpers shared by the analysis modules.
//!
//! Coordinates are always ordered `(q1..qn, p1..pn)`, so the standard
//! symplectic matrix is `J = [[0, I], [-I, 0]]` and `X_H = J grad H`.

use nalgebra::{DMatrix, DVector, Schur, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

const SVD_EPS: f64 = 1e-15;
const MAX_NITER: usize = 10_000;

/// Standard symplectic matrix on `R^{2n}`.
pub fn symplectic_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// `J v` without forming `J`.
pub fn apply_j(v: &[f64], out: &mut [f64]) {
    let n = v.len() / 2;
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |Mᵀ J M − J|` for a `2n × 2n` matrix.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = symplectic_j(m.nrows() / 2);
    max_abs(&(m.transpose() * &j * m - j))
}

/// `max |Pᵀ Ω_dst P − Ω_src|` for a map between two symplectic vector spaces.
pub fn form_defect(p: &DMatrix<f64>, omega_src: &DMatrix<f64>, omega_dst: &DMatrix<f64>) -> f64 {
    max_abs(&(p.transpose() * omega_dst * p - omega_src))
}

/// Counter-clockwise rotation `[[cos, -sin], [sin, cos]]`.
pub fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

/// Embeds matrices written in `(q1, p1, q2, p2, ...)` pair order into the
/// `(q.., p..)` convention used everywhere else.
pub fn from_pair_order(m: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = m.nrows();
    let n = dim / 2;
    let perm: Vec<usize> = (0..dim).map(|k| if k % 2 == 0 { k / 2 } else { n + k / 2 }).collect();
    let mut out = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            out[(perm[r], perm[c])] = m[(r, c)];
        }
    }
    out
}

pub fn svd(m: &DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(m.clone(), true, true, SVD_EPS, MAX_NITER).ok_or(Error::EigenFailure)
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(svd(m)?.singular_values)
}

/// Largest singular value (operator 2-norm).
pub fn op_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(singular_values(m)?.max())
}

pub fn min_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(singular_values(m)?.min())
}

/// Complex spectrum of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidParameter("eigenvalues of a non-square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, MAX_NITER).ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Thin QR of a tall matrix with the diagonal of `R` made non-negative.
///
/// Returns `(Q, diag(R))`.
pub fn qr_positive(w: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let qr = w.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let k = w.ncols();
    let mut diag = Vec::with_capacity(k);
    for i in 0..k {
        let d = r[(i, i)];
        if d < 0.0 {
            q.column_mut(i).neg_mut();
        }
        diag.push(d.abs());
    }
    (q, diag)
}

/// Orthonormal basis of the column space (modified Gram–Schmidt, applied twice).
pub fn orthonormalize(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = w.clone();
    for c in 0..out.ncols() {
        for _ in 0..2 {
            for prev in 0..c {
                let proj = out.column(prev).dot(&out.column(c));
                let col = out.column(prev).clone_owned();
                out.column_mut(c).axpy(-proj, &col, 1.0);
            }
        }
        let norm = out.column(c).norm();
        if norm < 1e-14 {
            return Err(Error::InvalidParameter("rank-deficient basis".into()));
        }
        out.column_mut(c).scale_mut(1.0 / norm);
    }
    Ok(out)
}

/// Largest principal angle (radians) between two column spaces of equal dimension.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let qa = orthonormalize(a)?;
    let qb = orthonormalize(b)?;
    let cosines = singular_values(&(qa.transpose() * qb))?;
    let c = cosines.min().clamp(-1.0, 1.0);
    Ok(c.acos())
}

pub fn det(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    m.clone().lu().determinant()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_squares_to_minus_identity() {
        for n in 1..4 {
            let j = symplectic_j(n);
            let id = DMatrix::<f64>::identity(2 * n, 2 * n);
            assert_eq!(&j * &j, -id);
        }
    }

    #[test]
    fn apply_j_matches_matrix() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 4];
        apply_j(&v, &mut out);
        let expect = symplectic_j(2) * DVector::from_row_slice(&v);
        assert_eq!(out.to_vec(), expect.as_slice().to_vec());
    }

    #[test]
    fn rotation_is_symplectic() {
        assert!(symplectic_defect(&rotation(0.7)) < 1e-15);
    }

    #[test]
    fn pair_order_embedding() {
        // (q1, p1, q2, p2) -> (q1, q2, p1, p2)
        let m = block_diag(&[DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]), rotation(1.0)]);
        let e = from_pair_order(&m);
        assert_eq!(e[(0, 0)], 2.0);
        assert_eq!(e[(2, 2)], 0.5);
        assert!(symplectic_defect(&e) < 1e-15);
    }

    #[test]
    fn qr_positive_diag() {
        let w = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
        let (q, d) = qr_positive(&w);
        assert_eq!(d, vec![1.0, 2.0]);
        assert!((&q * DMatrix::from_diagonal(&DVector::from_vec(d)) - w).norm() < 1e-14);
    }

    #[test]
    fn principal_angle_of_coordinate_axes() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let angle = principal_angle(&a, &b).unwrap();
        assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }
}
