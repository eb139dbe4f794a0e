use super::par;
use super::Real;

/// Rows per parallel work item in the row-split products.
const ROW_BLOCK: usize = 128;

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

/// `C = alpha·A·B + beta·C` for strided row/column layouts (`A` is m×k, `B` is k×n).
///
/// Panics if a stride is negative or any access would fall outside a slice.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    beta: T,
    c: &mut [T],
    rsc: isize,
    csc: isize,
) {
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
    assert!(span(m, k, rsa, csa) <= a.len(), "gemm: A out of bounds");
    assert!(span(k, n, rsb, csb) <= b.len(), "gemm: B out of bounds");
    assert!(span(m, n, rsc, csc) <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: all three extents were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        )
    }
}

/// `X·Wᵀ` for `X` rows×cin and `W` cout×cin (the 1×1 convolution forward).
pub fn matmul_nt<T: Real>(x: &[T], rows: usize, cin: usize, w: &[T], cout: usize) -> Vec<T> {
    assert_eq!(x.len(), rows * cin);
    assert_eq!(w.len(), cout * cin);
    let mut y = vec![T::zero(); rows * cout];
    par::for_each_chunk(&mut y, ROW_BLOCK * cout.max(1), |ci, out| {
        let r0 = ci * ROW_BLOCK;
        let nr = out.len() / cout.max(1);
        gemm(
            nr,
            cin,
            cout,
            T::one(),
            &x[r0 * cin..(r0 + nr) * cin],
            cin as isize,
            1,
            w,
            1,
            cin as isize,
            T::zero(),
            out,
            cout as isize,
            1,
        );
    });
    y
}

/// `dY·W` for `dY` rows×cout and `W` cout×cin.
pub fn matmul_nn<T: Real>(dy: &[T], rows: usize, cout: usize, w: &[T], cin: usize) -> Vec<T> {
    assert_eq!(dy.len(), rows * cout);
    assert_eq!(w.len(), cout * cin);
    let mut dx = vec![T::zero(); rows * cin];
    par::for_each_chunk(&mut dx, ROW_BLOCK * cin.max(1), |ci, out| {
        let r0 = ci * ROW_BLOCK;
        let nr = out.len() / cin.max(1);
        gemm(
            nr,
            cout,
            cin,
            T::one(),
            &dy[r0 * cout..(r0 + nr) * cout],
            cout as isize,
            1,
            w,
            cin as isize,
            1,
            T::zero(),
            out,
            cin as isize,
            1,
        );
    });
    dx
}

/// `dW += dYᵀ·X` for `dY` rows×cout, `X` rows×cin, `dW` cout×cin.
///
/// Split over output rows of `dW`, so the reduction over `rows` stays in one
/// sequential GEMM per block.
pub fn matmul_tn_acc<T: Real>(dy: &[T], x: &[T], rows: usize, cout: usize, cin: usize, dw: &mut [T]) {
    assert_eq!(dy.len(), rows * cout);
    assert_eq!(x.len(), rows * cin);
    assert_eq!(dw.len(), cout * cin);
    const OUT_BLOCK: usize = 32;
    par::for_each_chunk(dw, OUT_BLOCK * cin.max(1), |ci, out| {
        let j0 = ci * OUT_BLOCK;
        let nj = out.len() / cin.max(1);
        gemm(
            nj,
            rows,
            cin,
            T::one(),
            &dy[j0..],
            1,
            cout as isize,
            x,
            cin as isize,
            1,
            T::one(),
            out,
            cin as isize,
            1,
        );
    });
}
