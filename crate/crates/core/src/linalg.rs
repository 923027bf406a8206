//! Small dense linear-algebra helpers.
//!
//! Everything here works on matrices of dimension three or less, which covers
//! every system in the crate. Larger inputs fall back to nalgebra's SVD.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Spectral norm (largest singular value) of `m`.
///
/// Closed forms are used for 1×1 and 2×2 matrices; 3×3 matrices go through the
/// characteristic polynomial of `mᵀm`.
pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    match (m.nrows(), m.ncols()) {
        (0, _) | (_, 0) => Ok(0.0),
        (1, 1) => Ok(m[(0, 0)].abs()),
        (2, 2) => Ok(norm_2x2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])),
        (3, 3) => Ok(norm_3x3(m)),
        (_, 1) | (1, _) => Ok(m.iter().map(|v| v * v).sum::<f64>().sqrt()),
        _ => Ok(m.clone().svd(false, false).singular_values.max()),
    }
}

fn norm_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    // singular values of [[a,b],[c,d]]: s² = (S ± √(S² − 4 det²)) / 2
    let s = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    ((s + disc) / 2.0).sqrt()
}

fn norm_3x3(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let lam = symmetric_eigen_max_3x3(&g);
    lam.max(0.0).sqrt()
}

/// Largest eigenvalue of a symmetric 3×3 matrix via the trigonometric solution
/// of its characteristic cubic.
fn symmetric_eigen_max_3x3(g: &DMatrix<f64>) -> f64 {
    let p1 = g[(0, 1)].powi(2) + g[(0, 2)].powi(2) + g[(1, 2)].powi(2);
    let tr = g[(0, 0)] + g[(1, 1)] + g[(2, 2)];
    if p1 == 0.0 {
        return g[(0, 0)].max(g[(1, 1)]).max(g[(2, 2)]);
    }
    let q = tr / 3.0;
    let p2 = (g[(0, 0)] - q).powi(2) + (g[(1, 1)] - q).powi(2) + (g[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (g - DMatrix::<f64>::identity(3, 3) * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * phi.cos()
}

/// Eigenvalues of a real 2×2 matrix as `(re, im)` pairs, larger real part first.
pub fn eigenvalues_2x2(m: &DMatrix<f64>) -> [(f64, f64); 2] {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation in the smaller root
        let big = tr / 2.0 + r.copysign(tr);
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (hi, lo) = if big >= small { (big, small) } else { (small, big) };
        [(hi, 0.0), (lo, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [(tr / 2.0, im), (tr / 2.0, -im)]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        assert_eq!(operator_norm(&m).unwrap(), 4.0);
    }

    #[test]
    fn shear_norm_is_golden_ratio() {
        // oracle: largest eigenvalue of MᵀM = [[1,1],[1,2]] is (3+√5)/2
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let mtm_top = (3.0 + 5f64.sqrt()) / 2.0;
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let n = operator_norm(&m).unwrap();
        assert!((n - golden).abs() < 1e-14);
        assert!((n * n - mtm_top).abs() < 1e-13);
    }

    #[test]
    fn scalar_norm() {
        let m = DMatrix::from_row_slice(1, 1, &[-0.5]);
        assert_eq!(operator_norm(&m).unwrap(), 0.5);
    }

    #[test]
    fn three_by_three_agrees_with_svd() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -0.5, 0.3, -1.1, 4.0, 2.2, 0.0, 0.7]);
        let svd = m.clone().svd(false, false).singular_values.max();
        assert!((operator_norm(&m).unwrap() - svd).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(operator_norm(&m), Err(Error::NonFiniteMatrix)));
    }

    #[test]
    fn eigenvalues_of_saddle() {
        let m = DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, 1.0, 0.08]);
        let [(l1, _), (l2, _)] = eigenvalues_2x2(&m);
        assert!(l1 > 0.0 && l2 < 0.0);
        assert!((l1 * l2 - (-0.5 * 0.08 - 1.0)).abs() < 1e-14);
    }

    proptest::proptest! {
        #[test]
        fn norm_matches_svd(v in proptest::collection::vec(-10.0f64..10.0, 9), n in 1usize..=3) {
            let m = DMatrix::from_iterator(n, n, v.into_iter().take(n * n));
            let svd = m.clone().svd(false, false).singular_values.max();
            let got = operator_norm(&m).unwrap();
            proptest::prop_assert!((got - svd).abs() <= 1e-9 * (1.0 + svd));
        }
    }
}
