//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::model::soft_threshold;

/// Relative cutoff below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-12;

/// Elementwise soft-thresholding.
pub fn soft_threshold_matrix(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    m.map(|v| soft_threshold(v, threshold))
}

pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// `lambda * ||m||_1`, with an infinite weight contributing nothing on a
/// zero matrix.
pub fn l1_penalty(lambda: f64, m: &DMatrix<f64>) -> f64 {
    let norm = l1_norm(m);
    if norm == 0.0 {
        0.0
    } else {
        lambda * norm
    }
}

pub fn nnz(m: &DMatrix<f64>) -> usize {
    m.iter().filter(|v| **v != 0.0).count()
}

/// Frobenius inner product.
pub fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Orthonormal `B` maximizing `tr(B' M)`, i.e. `U V'` from the thin SVD
/// `M = U S V'`.
///
/// When `M` is rank deficient the missing left directions are filled with
/// standard basis vectors (lowest index first) orthogonalized against the
/// retained singular vectors, so the result is orthonormal and reproducible.
pub fn procrustes(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, d) = m.shape();
    assert!(d <= rows, "procrustes needs at least as many rows as columns");
    // SVD of the square factor R of M = QR; the direct tall SVD can return
    // inaccurate factors.
    let qr = m.clone().qr();
    let q = qr.q();
    let svd = qr.r().svd(true, true);
    let u = q * svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > RANK_TOL * smax)
        .collect();
    if keep.len() == d {
        return &u * &v_t;
    }

    let mut left: Vec<nalgebra::DVector<f64>> = keep.iter().map(|&k| u.column(k).into_owned()).collect();
    let mut right: Vec<nalgebra::DVector<f64>> = keep.iter().map(|&k| v_t.row(k).transpose()).collect();

    // Complete the right side from the remaining rows of V' (or the identity
    // when M vanishes), then the left side from the canonical basis.
    let right_pool: Vec<nalgebra::DVector<f64>> = if keep.is_empty() {
        (0..d).map(|k| unit(d, k)).collect()
    } else {
        (0..v_t.nrows())
            .filter(|k| !keep.contains(k))
            .map(|k| v_t.row(k).transpose())
            .collect()
    };
    for cand in right_pool {
        if right.len() == d {
            break;
        }
        if let Some(v) = orthogonalize(&cand, &right) {
            right.push(v);
        }
    }
    let mut idx = 0;
    while left.len() < d {
        if let Some(v) = orthogonalize(&unit(rows, idx), &left) {
            left.push(v);
        }
        idx += 1;
    }
    let u_full = DMatrix::from_columns(&left);
    let v_full = DMatrix::from_columns(&right);
    u_full * v_full.transpose()
}

fn unit(len: usize, k: usize) -> nalgebra::DVector<f64> {
    let mut e = nalgebra::DVector::zeros(len);
    e[k] = 1.0;
    e
}

fn orthogonalize(v: &nalgebra::DVector<f64>, basis: &[nalgebra::DVector<f64>]) -> Option<nalgebra::DVector<f64>> {
    let mut w = v.clone();
    // two passes of modified Gram-Schmidt
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&w);
            w.axpy(-c, b, 1.0);
        }
    }
    let norm = w.norm();
    (norm > 1e-8).then(|| w / norm)
}

/// Top-`d` right singular vectors of `x`, each column signed so that its
/// largest-magnitude entry is positive.
pub fn top_right_singular_vectors(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let gram = x.transpose() * x;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut out = DMatrix::zeros(x.ncols(), d);
    for (c, &k) in order.iter().take(d).enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        out.set_column(c, &col);
    }
    out
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone()).eigenvalues.max().max(0.0)
}

/// `max |B'B - I|`.
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    let btb = b.transpose() * b;
    let d = btb.nrows();
    (btb - DMatrix::identity(d, d)).amax()
}
