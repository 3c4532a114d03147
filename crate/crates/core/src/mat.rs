//! Tiny fixed-size linear algebra for the state estimators.
//!
//! The filters only ever need 2x2 and 4x4 symmetric positive-definite
//! matrices, so plain `[[T; N]; N]` arrays with const-generic helpers keep the
//! code transparent and allocation-free. Solves go through a Cholesky
//! factorization rather than explicit inverses for numerical stability.

use crate::scalar::Real;

/// Square matrix in row-major order.
pub type Mat<T, const N: usize> = [[T; N]; N];
pub type Mat2<T> = Mat<T, 2>;
pub type Mat4<T> = Mat<T, 4>;

pub fn zeros<T: Real, const N: usize>() -> Mat<T, N> {
    [[T::zero(); N]; N]
}

pub fn identity<T: Real, const N: usize>() -> Mat<T, N> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn transpose<T: Real, const N: usize>(m: &Mat<T, N>) -> Mat<T, N> {
    let mut t = zeros();
    for i in 0..N {
        for j in 0..N {
            t[j][i] = m[i][j];
        }
    }
    t
}

pub fn add<T: Real, const N: usize>(a: &Mat<T, N>, b: &Mat<T, N>) -> Mat<T, N> {
    let mut r = zeros();
    for i in 0..N {
        for j in 0..N {
            r[i][j] = a[i][j] + b[i][j];
        }
    }
    r
}

pub fn sub<T: Real, const N: usize>(a: &Mat<T, N>, b: &Mat<T, N>) -> Mat<T, N> {
    let mut r = zeros();
    for i in 0..N {
        for j in 0..N {
            r[i][j] = a[i][j] - b[i][j];
        }
    }
    r
}

pub fn mul<T: Real, const N: usize>(a: &Mat<T, N>, b: &Mat<T, N>) -> Mat<T, N> {
    let mut r = zeros();
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            for j in 0..N {
                r[i][j] += aik * b[k][j];
            }
        }
    }
    r
}

pub fn mat_vec<T: Real, const N: usize>(m: &Mat<T, N>, v: &[T; N]) -> [T; N] {
    let mut r = [T::zero(); N];
    for i in 0..N {
        for j in 0..N {
            r[i] += m[i][j] * v[j];
        }
    }
    r
}

/// Forces exact symmetry by averaging opposite off-diagonal entries. Kalman
/// covariance updates accumulate asymmetric rounding error without this.
pub fn symmetrize<T: Real, const N: usize>(m: &mut Mat<T, N>) {
    let half = T::of(0.5);
    for i in 0..N {
        for j in (i + 1)..N {
            let v = (m[i][j] + m[j][i]) * half;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`, or `None` when the
/// matrix is not positive definite (within floating-point tolerance).
pub fn cholesky<T: Real, const N: usize>(m: &Mat<T, N>) -> Option<Mat<T, N>> {
    let mut l = zeros();
    for i in 0..N {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= T::zero() {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L·Lᵀ·x = b` given the Cholesky factor `L`.
pub fn cholesky_solve<T: Real, const N: usize>(l: &Mat<T, N>, b: &[T; N]) -> [T; N] {
    // Forward substitution: L·y = b.
    let mut y = [T::zero(); N];
    for i in 0..N {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    // Back substitution: Lᵀ·x = y.
    let mut x = [T::zero(); N];
    for i in (0..N).rev() {
        let mut sum = y[i];
        for k in (i + 1)..N {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

/// Solves `m·x = b` for symmetric positive-definite `m`.
pub fn spd_solve<T: Real, const N: usize>(m: &Mat<T, N>, b: &[T; N]) -> Option<[T; N]> {
    cholesky(m).map(|l| cholesky_solve(&l, b))
}

/// Quadratic form `vᵀ·m⁻¹·v` for symmetric positive-definite `m`.
pub fn spd_quad_form<T: Real, const N: usize>(m: &Mat<T, N>, v: &[T; N]) -> Option<T> {
    let x = spd_solve(m, v)?;
    let mut acc = T::zero();
    for i in 0..N {
        acc += v[i] * x[i];
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_mul() {
        let i = identity::<f64, 3>();
        let a = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 10.0]];
        assert_eq!(mul(&a, &i), a);
        assert_eq!(mul(&i, &a), a);
        let v = [1.0, -1.0, 2.0];
        let av = mat_vec(&a, &v);
        assert_eq!(av, [5.0, 11.0, 19.0]);
    }

    #[test]
    fn cholesky_known_factorization() {
        // Classic example: m = L·Lᵀ with L = [[2,0],[6,1]].
        let m: Mat2<f64> = [[4.0, 12.0], [12.0, 37.0]];
        let l = cholesky(&m).unwrap();
        assert!((l[0][0] - 2.0).abs() < 1e-12);
        assert!((l[1][0] - 6.0).abs() < 1e-12);
        assert!((l[1][1] - 1.0).abs() < 1e-12);
        assert!(l[0][1] == 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky::<f64, 2>(&[[1.0, 2.0], [2.0, 1.0]]).is_none());
        assert!(cholesky::<f64, 2>(&[[0.0, 0.0], [0.0, 1.0]]).is_none());
        assert!(cholesky::<f64, 2>(&[[-1.0, 0.0], [0.0, 1.0]]).is_none());
    }

    /// Independent check for the quadratic form: closed-form 2x2 inverse.
    fn quad_form_2x2_by_inverse(m: &Mat2<f64>, v: &[f64; 2]) -> f64 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let mv = mat_vec(&inv, v);
        v[0] * mv[0] + v[1] * mv[1]
    }

    #[test]
    fn quad_form_matches_closed_form_inverse() {
        let m = [[2.0, 0.3], [0.3, 1.5]];
        let v = [1.2, -0.7];
        let a = spd_quad_form(&m, &v).unwrap();
        let b = quad_form_2x2_by_inverse(&m, &v);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn solve_4x4_recovers_solution() {
        // Build an SPD matrix as A·Aᵀ + I and verify m·x = b round-trips.
        let a: Mat4<f64> = [
            [1.0, 0.2, 0.0, -0.5],
            [0.3, 2.0, 0.1, 0.0],
            [0.0, -0.7, 1.5, 0.2],
            [0.4, 0.0, 0.3, 1.0],
        ];
        let mut m = mul(&a, &transpose(&a));
        for i in 0..4 {
            m[i][i] += 1.0;
        }
        let b = [1.0, -2.0, 3.0, 0.5];
        let x = spd_solve(&m, &b).unwrap();
        let back = mat_vec(&m, &x);
        for i in 0..4 {
            assert!((back[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetrize_averages() {
        let mut m: Mat2<f64> = [[1.0, 2.0], [4.0, 5.0]];
        symmetrize(&mut m);
        assert_eq!(m[0][1], 3.0);
        assert_eq!(m[1][0], 3.0);
    }

    proptest! {
        #[test]
        fn random_spd_quad_forms_agree_with_inverse(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
            v0 in -10.0f64..10.0, v1 in -10.0f64..10.0,
        ) {
            // m = G·Gᵀ + I is SPD for any G.
            let g = [[a, b], [c, a - b]];
            let mut m = mul(&g, &transpose(&g));
            m[0][0] += 1.0;
            m[1][1] += 1.0;
            let v = [v0, v1];
            let chol = spd_quad_form(&m, &v).unwrap();
            let inv = quad_form_2x2_by_inverse(&m, &v);
            prop_assert!((chol - inv).abs() < 1e-8 * (1.0 + inv.abs()));
            prop_assert!(chol >= -1e-12);
        }
    }
}
