//! Floating-point abstraction so every network, loss, and optimizer runs at
//! f32 (training) or f64 (finite-difference gradient checks) from one code
//! path.

use std::iter::Sum;

/// Element type for all tensors in the crate.
///
/// The GEMM hooks dispatch to `matrixmultiply`'s sgemm/dgemm kernels; both
/// accumulate per output element in a fixed order, which keeps results
/// byte-reproducible regardless of thread scheduling.
pub trait Scalar:
    ndarray::NdFloat
    + num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Send
    + Sync
    + serde::Serialize
    + for<'de> serde::Deserialize<'de>
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    /// Lossy conversion from f64 (exact for f64, rounded for f32).
    fn cast(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }
    fn to_f64x(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
    fn from_count(v: usize) -> Self {
        Self::cast(v as f64)
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// C = alpha * op(A) * op(B) + beta * C over contiguous row-major slices.
    ///
    /// `a_dims`/`b_dims` are the *stored* dimensions; with `a_trans` the
    /// operand is read as its transpose. Callers guarantee
    /// `c.len() == m * n` with `m`/`n` the post-transpose sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Whether operand slices are read as stored or transposed.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// `c = op_a(a) * op_b(b) + beta * c` for row-major contiguous slices.
///
/// `m`, `k`, `n` are the logical (post-transpose) GEMM dimensions. Large
/// products are split along the output-row axis across rayon threads; each
/// output element is still produced by exactly one kernel call, so the result
/// is identical to the serial product.
pub fn gemm<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    op_a: Op,
    b: &[F],
    op_b: Op,
    beta: F,
    c: &mut [F],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }

    // Strides of op(A): stored row-major as (m,k) or, when transposed, (k,m).
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };

    let threads = rayon::current_num_threads().max(1);
    let flops = 2 * m * k * n;
    if threads == 1 || flops < (1 << 21) || m < 2 * threads {
        unsafe {
            F::gemm_raw(
                m,
                k,
                n,
                F::one(),
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }

    // Split rows of C into one contiguous block per thread.
    let block = m.div_ceil(threads);
    let a_ptr = SendPtr(a.as_ptr() as *mut F);
    let b_ptr = SendPtr(b.as_ptr() as *mut F);
    let c_ptr = SendPtr(c.as_mut_ptr());
    let blocks: Vec<(usize, usize)> = (0..threads)
        .map(|t| (t * block, ((t + 1) * block).min(m)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    rayon::scope(|s| {
        for &(lo, hi) in &blocks {
            let a_ptr = &a_ptr;
            let b_ptr = &b_ptr;
            let c_ptr = &c_ptr;
            s.spawn(move |_| unsafe {
                // Row block [lo, hi) of op(A) and of C.
                let a_off = match op_a {
                    Op::N => (lo * k) as isize,
                    Op::T => lo as isize,
                };
                F::gemm_raw(
                    hi - lo,
                    k,
                    n,
                    F::one(),
                    (a_ptr.0 as *const F).offset(a_off),
                    rsa,
                    csa,
                    b_ptr.0 as *const F,
                    rsb,
                    csb,
                    beta,
                    c_ptr.0.add(lo * n),
                    n as isize,
                    1,
                );
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], op_a: Op, b: &[F], op_b: Op) -> Vec<F> {
        let get_a = |i: usize, j: usize| match op_a {
            Op::N => a[i * k + j],
            Op::T => a[j * m + i],
        };
        let get_b = |i: usize, j: usize| match op_b {
            Op::N => b[i * n + j],
            Op::T => b[j * k + i],
        };
        let mut c = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = F::zero();
                for l in 0..k {
                    acc = acc + get_a(i, l) * get_b(l, j);
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_all_transpose_combinations() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        for (op_a, op_b) in [(Op::N, Op::N), (Op::N, Op::T), (Op::T, Op::N), (Op::T, Op::T)] {
            let mut c = vec![0.0f64; m * n];
            // Reinterpret the stored buffers to fit the requested op shapes.
            let (a_buf, b_buf): (Vec<f64>, Vec<f64>) = (a.clone(), b.clone());
            gemm(m, k, n, &a_buf, op_a, &b_buf, op_b, 0.0, &mut c);
            let want = naive(m, k, n, &a_buf, op_a, &b_buf, op_b);
            for (got, want) in c.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
            }
        }
    }

    #[test]
    fn parallel_split_equals_serial() {
        // Big enough to cross the parallel threshold.
        let (m, k, n) = (128, 96, 257);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 2654435761) % 1000) as f32 / 997.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 40503) % 1000) as f32 / 991.0 - 0.5).collect();
        let mut c_par = vec![0.0f32; m * n];
        gemm(m, k, n, &a, Op::N, &b, Op::N, 0.0, &mut c_par);
        let mut c_ser = vec![0.0f32; m * n];
        unsafe {
            f32::gemm_raw(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                0.0,
                c_ser.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        assert_eq!(c_par, c_ser, "parallel row split must be bit-identical to one kernel call");
    }

    #[test]
    fn beta_accumulates_into_existing_output() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [10.0f64, 20.0, 30.0, 40.0];
        gemm(2, 2, 2, &a, Op::N, &b, Op::N, 1.0, &mut c);
        assert_eq!(c, [11.0, 22.0, 33.0, 44.0]);
    }
}
