use nalgebra::{DMatrix, DVector, Matrix2, Matrix3};

/// Thin SVD `a = u diag(s) v^T` of a matrix with two or three columns and at
/// least as many rows. Householder QR first, then a fixed-size SVD of the
/// triangular factor: nalgebra's dynamic-size SVD occasionally stops short
/// on nearly repeated singular values (about 1% of rotated tetrahedra).
pub(crate) fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (m, d) = a.shape();
    assert!(m >= d && (2..=3).contains(&d), "thin_svd needs a tall matrix with 2 or 3 columns, got {m}x{d}");
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let (ur, s, v) = if d == 2 {
        let svd = Matrix2::from_fn(|i, j| r[(i, j)]).svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        (DMatrix::from_fn(2, 2, |i, j| u[(i, j)]), DVector::from_column_slice(svd.singular_values.as_slice()), DMatrix::from_fn(2, 2, |i, j| vt[(j, i)]))
    } else {
        let svd = Matrix3::from_fn(|i, j| r[(i, j)]).svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        (DMatrix::from_fn(3, 3, |i, j| u[(i, j)]), DVector::from_column_slice(svd.singular_values.as_slice()), DMatrix::from_fn(3, 3, |i, j| vt[(j, i)]))
    };
    (q * ur, s, v)
}
