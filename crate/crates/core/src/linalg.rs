//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::normal;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| normal(rng))
}

/// Matrix with orthonormal columns (`rows >= cols`), drawn Haar-uniformly
/// from the Stiefel manifold.
pub fn orthonormal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    assert!(rows >= cols, "need rows >= cols for orthonormal columns");
    let g = gaussian(rng, rows, cols);
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q.columns(0, cols).into_owned();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Haar-uniform orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `diag(R)` folded into `Q`.
pub fn haar_orthogonal(rng: &mut impl Rng, n: usize) -> Mat {
    orthonormal_columns(rng, n, n)
}

/// Haar-uniform rotation (orthogonal, det = +1).
pub fn haar_rotation(rng: &mut impl Rng, n: usize) -> Mat {
    let mut q = haar_orthogonal(rng, n);
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

pub fn rotation_2d(theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

pub fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn singular_values(a: &Mat) -> Vector {
    a.clone().svd(false, false).singular_values
}

/// Ratio of largest to smallest singular value; infinite when rank deficient.
pub fn condition_number(a: &Mat) -> f64 {
    let sv = singular_values(a);
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn pinv(a: &Mat) -> Mat {
    a.clone().pseudo_inverse(1e-12).expect("pseudo-inverse with positive eps")
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn hcat(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = Mat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn vcat(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = Mat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// `Aᵀ B` through an explicit transpose; nalgebra's `tr_mul` does not hit the
/// blocked gemm path.
pub fn t_mul(a: &Mat, b: &Mat) -> Mat {
    a.transpose() * b
}

/// `A Bᵀ`.
pub fn mul_t(a: &Mat, b: &Mat) -> Mat {
    a * b.transpose()
}

/// Solves `min_W ‖X W − Y‖²` through the normal equations `XᵀX W = XᵀY`.
pub fn normal_equations(x: &Mat, y: &Mat) -> Result<Mat> {
    let gram = t_mul(x, x);
    let rhs = t_mul(x, y);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{}x{} gram matrix not positive definite", x.ncols(), x.ncols())))?;
    let w = chol.solve(&rhs);
    if w.iter().all(|v| v.is_finite()) {
        Ok(w)
    } else {
        Err(Error::Singular("normal equations produced non-finite solution".into()))
    }
}

/// Ordinary least squares with intercept via SVD-based pseudo-inverse, so a
/// rank-deficient design still yields the minimum-norm fit.
pub struct LinearFit {
    pub weights: Mat,
    pub intercept: Vector,
    pub rank: usize,
}

pub fn fit_affine(x: &Mat, y: &Mat) -> LinearFit {
    let n = x.nrows();
    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let xc = center(x, &x_mean);
    let yc = center(y, &y_mean);
    let svd = xc.clone().svd(true, true);
    let tol = svd.singular_values.max() * (n.max(x.ncols()) as f64) * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    let weights = if rank == 0 {
        Mat::zeros(x.ncols(), y.ncols())
    } else {
        svd.solve(&yc, tol).expect("svd computed with u and v")
    };
    let intercept = &y_mean - weights.transpose() * &x_mean;
    LinearFit { weights, intercept, rank }
}

impl LinearFit {
    pub fn predict(&self, x: &Mat) -> Mat {
        let mut p = x * &self.weights;
        for mut row in p.row_iter_mut() {
            row += self.intercept.transpose();
        }
        p
    }
}

pub fn column_means(x: &Mat) -> Vector {
    let n = x.nrows().max(1) as f64;
    Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center(x: &Mat, mean: &Vector) -> Mat {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Coefficient of determination pooled over all target columns:
/// `1 − RSS / TSS`. Returns 0 when the target has no variance.
pub fn r_squared(pred: &Mat, target: &Mat) -> f64 {
    let mean = column_means(target);
    let tss = center(target, &mean).norm_squared();
    let rss = (pred - target).norm_squared();
    if tss <= 0.0 {
        0.0
    } else {
        1.0 - rss / tss
    }
}

/// Per-column R².
pub fn r_squared_per_column(pred: &Mat, target: &Mat) -> Vec<f64> {
    (0..target.ncols())
        .map(|j| {
            let t = target.column(j);
            let m = t.mean();
            let tss: f64 = t.iter().map(|v| (v - m).powi(2)).sum();
            let rss: f64 = pred.column(j).iter().zip(t.iter()).map(|(p, v)| (p - v).powi(2)).sum();
            if tss <= 0.0 {
                0.0
            } else {
                1.0 - rss / tss
            }
        })
        .collect()
}

/// Cosines of the principal angles between the column spaces of `a` and `b`.
pub fn principal_cosines(a: &Mat, b: &Mat) -> Vec<f64> {
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let m = t_mul(&qa, &qb);
    singular_values(&m).iter().map(|s| s.min(1.0)).collect()
}

fn orthonormal_basis(a: &Mat) -> Mat {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let tol = svd.singular_values.max() * a.nrows().max(a.ncols()) as f64 * f64::EPSILON * 16.0;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    u.columns(0, rank).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn haar_rotation_is_special_orthogonal() {
        let mut rng = stream(0, &["haar"]);
        for n in 2..6 {
            let r = haar_rotation(&mut rng, n);
            let err = (r.transpose() * &r - Mat::identity(n, n)).amax();
            assert!(err < 1e-12, "orthogonality error {err}");
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normal_equations_recovers_exact_linear_map() {
        let mut rng = stream(1, &["ne"]);
        let x = gaussian(&mut rng, 50, 4);
        let w = gaussian(&mut rng, 4, 3);
        let y = &x * &w;
        let w_hat = normal_equations(&x, &y).unwrap();
        assert!((w_hat - w).amax() < 1e-10);
    }

    #[test]
    fn normal_equations_rejects_rank_deficient_design() {
        let x = Mat::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = Mat::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(normal_equations(&x, &y), Err(Error::Singular(_))));
    }

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let r = rotation_2d(0.7);
        assert!((spectral_radius(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_fit_handles_constant_features() {
        let x = Mat::from_element(10, 3, 0.5);
        let y = Mat::from_fn(10, 2, |i, j| (i + j) as f64);
        let fit = fit_affine(&x, &y);
        assert_eq!(fit.rank, 0);
        assert!(r_squared(&fit.predict(&x), &y).abs() < 1e-12);
    }

    #[test]
    fn principal_cosines_of_same_span_are_one() {
        let mut rng = stream(2, &["pc"]);
        let a = gaussian(&mut rng, 8, 3);
        let b = &a * gaussian(&mut rng, 3, 3);
        for c in principal_cosines(&a, &b) {
            assert!((c - 1.0).abs() < 1e-10);
        }
    }
}
