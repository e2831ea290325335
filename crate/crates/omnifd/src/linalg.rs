//! Shared numeric kernels: Hermitian quadratic forms, the first-order
//! surrogate used by every convexified step, the diagonal-product trace
//! identity, and the complex-to-real embedding the conic backend consumes.

use nalgebra::{DMatrix, DVector};

use crate::channel::C64;

/// `X ∘ Yᵀ`: entrywise product with the second factor transposed, so that
/// `Tr(diag(v)^H X diag(v) Y) = v^H (X ∘ Yᵀ) v` holds for any `v`.
pub fn hadamard_transpose(x: &DMatrix<C64>, y: &DMatrix<C64>) -> DMatrix<C64> {
    assert_eq!(x.shape(), (y.ncols(), y.nrows()), "factor shapes disagree");
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * y[(j, i)])
}

/// Literal evaluation of `Tr(diag(v)^H X diag(v) Y)`, kept as the independent
/// route for checking [`hadamard_transpose`].
pub fn diag_product_trace(x: &DMatrix<C64>, y: &DMatrix<C64>, v: &DVector<C64>) -> C64 {
    let d = DMatrix::from_diagonal(v);
    (d.adjoint() * x * &d * y).trace()
}

/// Real value of the Hermitian form `v^H M v`.
pub fn hermitian_quad(m: &DMatrix<C64>, v: &DVector<C64>) -> f64 {
    let mv = m * v;
    v.dotc(&mv).re
}

/// First-order lower bound of `v^H M v` around `v0`:
/// `2 Re{v^H M v0} − v0^H M v0`. Tight at `v = v0`; a global lower bound for
/// positive semidefinite `M`.
pub fn taylor_lower_bound(m: &DMatrix<C64>, v: &DVector<C64>, v0: &DVector<C64>) -> f64 {
    let mv0 = m * v0;
    2.0 * v.dotc(&mv0).re - v0.dotc(&mv0).re
}

/// `[Re z; Im z]` stacking.
pub fn embed_vector(z: &DVector<C64>) -> DVector<f64> {
    let n = z.len();
    DVector::from_fn(2 * n, |i, _| if i < n { z[i].re } else { z[i - n].im })
}

/// Inverse of [`embed_vector`].
pub fn unembed_vector(x: &[f64]) -> DVector<C64> {
    let n = x.len() / 2;
    DVector::from_fn(n, |i, _| C64::new(x[i], x[i + n]))
}

/// Real symmetric embedding of a Hermitian matrix:
/// `[[Re A, −Im A], [Im A, Re A]]`, chosen so that
/// `z^H A z = [Re z; Im z]ᵀ Ā [Re z; Im z]`.
pub fn embed_hermitian(a: &DMatrix<C64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            out[(i, j)] = v.re;
            out[(i, j + n)] = -v.im;
            out[(i + n, j)] = v.im;
            out[(i + n, j + n)] = v.re;
        }
    }
    // symmetrize away Hermitian round-off so downstream factorizations see an
    // exactly symmetric matrix
    for i in 0..2 * n {
        for j in (i + 1)..2 * n {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Factor `R` with `RᵀR = Q` for a symmetric PSD `Q`, built from the
/// eigendecomposition with small negative eigenvalues clamped to zero. Rows
/// with negligible eigenvalues are dropped, so `R` has `rank(Q)` rows.
pub fn psd_factor(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let eig = q.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = max_ev.max(0.0) * 1e-14;
    let kept: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .collect();
    let mut r = DMatrix::zeros(kept.len(), n);
    for (row, &i) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        for j in 0..n {
            r[(row, j)] = scale * eig.eigenvectors[(j, i)];
        }
    }
    r
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(q: &DMatrix<f64>) -> f64 {
    q.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_complex_matrix(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        let a = random_complex_matrix(n, rng);
        (&a + a.adjoint()) / C64::new(2.0, 0.0)
    }

    fn random_hermitian_psd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        let a = random_complex_matrix(n, rng);
        &a * a.adjoint()
    }

    fn random_cvec(n: usize, rng: &mut ChaCha8Rng) -> DVector<C64> {
        DVector::from_fn(n, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn hadamard_matches_diag_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = random_hermitian(8, &mut rng);
            let y = random_hermitian(8, &mut rng);
            let v = random_cvec(8, &mut rng);
            let xi = hadamard_transpose(&x, &y);
            let quad = v.dotc(&(&xi * &v));
            let tr = diag_product_trace(&x, &y, &v);
            assert_relative_eq!(quad.re, tr.re, max_relative = 1e-10, epsilon = 1e-12);
            assert_relative_eq!(quad.im, tr.im, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn taylor_bound_is_tight_and_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let m = random_hermitian_psd(6, &mut rng);
            let v0 = random_cvec(6, &mut rng);
            let v = random_cvec(6, &mut rng);
            let true_v = hermitian_quad(&m, &v);
            let bound = taylor_lower_bound(&m, &v, &v0);
            assert!(bound <= true_v + 1e-10);
            let at_v0 = taylor_lower_bound(&m, &v0, &v0);
            assert_relative_eq!(
                at_v0,
                hermitian_quad(&m, &v0),
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn embedding_preserves_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_hermitian_psd(5, &mut rng);
            let z = random_cvec(5, &mut rng);
            let abar = embed_hermitian(&a);
            let x = embed_vector(&z);
            let complex_val = hermitian_quad(&a, &z);
            let real_val = (x.transpose() * &abar * &x)[(0, 0)];
            assert_relative_eq!(complex_val, real_val, max_relative = 1e-12);
            assert_relative_eq!(z.norm_squared(), x.norm_squared(), max_relative = 1e-12);
            // round trip
            let back = unembed_vector(x.as_slice());
            assert_eq!(back, z);
        }
    }

    #[test]
    fn psd_factor_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let h = random_hermitian_psd(4, &mut rng);
            let q = embed_hermitian(&h);
            let r = psd_factor(&q);
            let back = r.transpose() * &r;
            assert_relative_eq!((back - &q).norm(), 0.0, epsilon = 1e-9 * q.norm().max(1.0));
        }
        // rank-deficient case: embedding of a rank-one Hermitian
        let v = random_cvec(4, &mut rng);
        let h = &v * v.adjoint();
        let q = embed_hermitian(&h);
        let r = psd_factor(&q);
        assert!(r.nrows() <= 2); // complex rank one embeds as real rank two
        let back = r.transpose() * &r;
        assert_relative_eq!((back - &q).norm(), 0.0, epsilon = 1e-10 * q.norm().max(1.0));
    }

    #[test]
    fn min_eigenvalue_detects_indefiniteness() {
        let mut m = DMatrix::identity(3, 3);
        assert_relative_eq!(min_eigenvalue(&m), 1.0, max_relative = 1e-12);
        m[(2, 2)] = -0.5;
        assert_relative_eq!(min_eigenvalue(&m), -0.5, max_relative = 1e-12);
    }
}
