//! Dense matmul kernels. With the `openblas` feature (default) these call the
//! system CBLAS; otherwise a portable blocked kernel is used. Both are
//! single-threaded so repeated runs are bitwise deterministic.

/// C = alpha * op(A) * op(B) + beta * C, row-major, tightly packed.
/// Logical sizes: op(A) is m x k, op(B) is k x n, C is m x n.
pub trait Gemm: Copy {
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        ta: bool,
        tb: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

#[cfg(feature = "openblas")]
mod cblas {
    pub const ROW_MAJOR: i32 = 101;
    pub const NO_TRANS: i32 = 111;
    pub const TRANS: i32 = 112;

    extern "C" {
        pub fn openblas_set_num_threads(n: i32);
        #[allow(clippy::too_many_arguments)]
        pub fn cblas_sgemm(
            layout: i32,
            ta: i32,
            tb: i32,
            m: i32,
            n: i32,
            k: i32,
            alpha: f32,
            a: *const f32,
            lda: i32,
            b: *const f32,
            ldb: i32,
            beta: f32,
            c: *mut f32,
            ldc: i32,
        );
        #[allow(clippy::too_many_arguments)]
        pub fn cblas_dgemm(
            layout: i32,
            ta: i32,
            tb: i32,
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
    }

    /// One worker thread keeps accumulation order fixed across runs.
    pub fn pin_single_thread() {
        use std::sync::Once;
        static ONCE: Once = Once::new();
        ONCE.call_once(|| unsafe { openblas_set_num_threads(1) });
    }
}

#[cfg(feature = "openblas")]
fn check_dims(ta: bool, tb: bool, m: usize, n: usize, k: usize, a: usize, b: usize, c: usize) {
    assert!(m <= i32::MAX as usize && n <= i32::MAX as usize && k <= i32::MAX as usize);
    assert_eq!(a, m * k, "gemm: A buffer size");
    assert_eq!(b, k * n, "gemm: B buffer size");
    assert_eq!(c, m * n, "gemm: C buffer size");
    let _ = (ta, tb);
}

#[cfg(feature = "openblas")]
macro_rules! impl_gemm_blas {
    ($t:ty, $f:path) => {
        impl Gemm for $t {
            fn gemm(
                ta: bool,
                tb: bool,
                m: usize,
                n: usize,
                k: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                check_dims(ta, tb, m, n, k, a.len(), b.len(), c.len());
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for v in c.iter_mut() {
                        *v *= beta;
                    }
                    return;
                }
                cblas::pin_single_thread();
                let (tra, lda) = if ta {
                    (cblas::TRANS, m as i32)
                } else {
                    (cblas::NO_TRANS, k as i32)
                };
                let (trb, ldb) = if tb {
                    (cblas::TRANS, k as i32)
                } else {
                    (cblas::NO_TRANS, n as i32)
                };
                unsafe {
                    $f(
                        cblas::ROW_MAJOR,
                        tra,
                        trb,
                        m as i32,
                        n as i32,
                        k as i32,
                        alpha,
                        a.as_ptr(),
                        lda,
                        b.as_ptr(),
                        ldb,
                        beta,
                        c.as_mut_ptr(),
                        n as i32,
                    );
                }
            }
        }
    };
}

#[cfg(feature = "openblas")]
impl_gemm_blas!(f32, cblas::cblas_sgemm);
#[cfg(feature = "openblas")]
impl_gemm_blas!(f64, cblas::cblas_dgemm);

#[cfg(not(feature = "openblas"))]
macro_rules! impl_gemm_fallback {
    ($t:ty) => {
        impl Gemm for $t {
            fn gemm(
                ta: bool,
                tb: bool,
                m: usize,
                n: usize,
                k: usize,
                alpha: Self,
                a: &[Self],
                b: &[Self],
                beta: Self,
                c: &mut [Self],
            ) {
                gemm_naive(ta, tb, m, n, k, alpha, a, b, beta, c)
            }
        }
    };
}

#[cfg(not(feature = "openblas"))]
impl_gemm_fallback!(f32);
#[cfg(not(feature = "openblas"))]
impl_gemm_fallback!(f64);

/// Reference kernel, also used as the oracle for the BLAS path.
pub fn gemm_naive<T: num_traits::Float + num_traits::NumAssign>(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: A buffer size");
    assert_eq!(b.len(), k * n, "gemm: B buffer size");
    assert_eq!(c.len(), m * n, "gemm: C buffer size");
    for v in c.iter_mut() {
        *v *= beta;
    }
    // Normalize B to row-major [k, n] so the inner loop is contiguous.
    let bt: Vec<T>;
    let b = if tb {
        // b is physically [n, k]
        let mut t = vec![T::zero(); k * n];
        for j in 0..n {
            for p in 0..k {
                t[p * n + j] = b[j * k + p];
            }
        }
        bt = t;
        &bt[..]
    } else {
        b
    };
    for i in 0..m {
        for p in 0..k {
            let av = alpha * if ta { a[p * m + i] } else { a[i * k + p] };
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * *bv;
            }
        }
    }
}
