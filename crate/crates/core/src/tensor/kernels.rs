//! Raw numeric kernels shared by the graph and the inference paths.

/// `out = op(a) @ op(b)` where `op` optionally transposes.
///
/// `a` is stored as `[m, k]` (or `[k, m]` when `ta`), `b` as `[k, n]`
/// (or `[n, k]` when `tb`). `out` is `[m, n]` and is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, out: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked against the logical shapes above and
    // the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Affine layer `x @ w + b` with optional relu, used by the inference path.
pub(crate) fn dense(x: &[f64], rows: usize, w: &[f64], fan_in: usize, fan_out: usize, b: &[f64], relu: bool) -> Vec<f64> {
    let mut out = vec![0.0; rows * fan_out];
    gemm(rows, fan_in, fan_out, x, false, w, false, &mut out);
    for row in out.chunks_exact_mut(fan_out) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}
