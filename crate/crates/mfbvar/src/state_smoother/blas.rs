//! Dense matrix products for the multivariate engine.
//!
//! Large products route through the system BLAS (single-threaded unless
//! `OPENBLAS_NUM_THREADS` says otherwise), whose throughput is flat across
//! the matrix sizes the companion-form smoother produces; small products
//! stay on nalgebra, which wins below the FFI break-even point.

use nalgebra::DMatrix;

/// Below this size every operand dimension, nalgebra is used directly.
const BLAS_MIN_DIM: usize = 64;

#[cfg(feature = "system-blas")]
mod ffi {
    use std::sync::Once;

    extern "C" {
        fn cblas_dgemm(
            layout: i32,
            transa: i32,
            transb: i32,
            m: i32,
            n: i32,
            k: i32,
            alpha: f64,
            a: *const f64,
            lda: i32,
            b: *const f64,
            ldb: i32,
            beta: f64,
            c: *mut f64,
            ldc: i32,
        );
        fn openblas_set_num_threads(n: i32);
    }

    const COL_MAJOR: i32 = 102;
    const NO_TRANS: i32 = 111;

    static INIT: Once = Once::new();

    /// `c = alpha a b + beta c`, column-major, no transposes.
    pub fn dgemm(
        m: usize,
        n: usize,
        k: usize,
        alpha: f64,
        a: &[f64],
        b: &[f64],
        beta: f64,
        c: &mut [f64],
    ) {
        INIT.call_once(|| {
            if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
                unsafe { openblas_set_num_threads(1) };
            }
        });
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        unsafe {
            cblas_dgemm(
                COL_MAJOR,
                NO_TRANS,
                NO_TRANS,
                m as i32,
                n as i32,
                k as i32,
                alpha,
                a.as_ptr(),
                m as i32,
                b.as_ptr(),
                k as i32,
                beta,
                c.as_mut_ptr(),
                m as i32,
            );
        }
    }
}

/// `c = a b` into a preallocated output.
pub fn gemm_into(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &mut DMatrix<f64>) {
    #[cfg(feature = "system-blas")]
    {
        let (m, k) = a.shape();
        let n = b.ncols();
        if m.min(n).min(k) >= BLAS_MIN_DIM {
            ffi::dgemm(m, n, k, 1.0, a.as_slice(), b.as_slice(), 0.0, c.as_mut_slice());
            return;
        }
    }
    a.mul_to(b, c);
}

/// `c += alpha a b`.
pub fn gemm_acc(alpha: f64, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &mut DMatrix<f64>) {
    #[cfg(feature = "system-blas")]
    {
        let (m, k) = a.shape();
        let n = b.ncols();
        if m.min(n) >= BLAS_MIN_DIM {
            ffi::dgemm(m, n, k, alpha, a.as_slice(), b.as_slice(), 1.0, c.as_mut_slice());
            return;
        }
    }
    c.gemm(alpha, a, b, 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_nalgebra() {
        for (m, n, k) in [(3usize, 4usize, 5usize), (70, 70, 70), (70, 70, 20), (100, 80, 90)] {
            let a = DMatrix::<f64>::from_fn(m, k, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
            let b = DMatrix::<f64>::from_fn(k, n, |i, j| ((i + 2 * j) as f64 * 0.21).cos());
            let mut c = DMatrix::<f64>::zeros(m, n);
            gemm_into(&a, &b, &mut c);
            let reference = &a * &b;
            assert!((c.clone() - &reference).abs().max() < 1e-10);
            let mut d = reference.clone();
            gemm_acc(-0.5, &a, &b, &mut d);
            assert!((d - 0.5 * reference).abs().max() < 1e-10);
        }
    }
}
