//! Raw row-major kernels shared by forward and backward passes.

/// `c = op(a) * op(b) + beta * c` for row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored in its
/// untransposed layout (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer length");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer length");
    assert_eq!(c.len(), m * n, "gemm: output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every (row, col) addressed through
    // these strides lies inside the corresponding slice, and `c` does not
    // alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// Writes `src` (with `shape`) permuted by `perm` into `dst`, or accumulates
/// into it when `accumulate` is set. Output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_into(src: &[f64], shape: &[usize], perm: &[usize], dst: &mut [f64], accumulate: bool) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    if rank == 0 {
        if accumulate {
            dst[0] += src[0];
        } else {
            dst[0] = src[0];
        }
        return;
    }
    let inner = out_shape[rank - 1];
    let inner_stride = gather[rank - 1];
    let mut counter = vec![0usize; rank - 1];
    let mut base = 0usize;
    let mut out = 0usize;
    loop {
        let row = &mut dst[out..out + inner];
        if accumulate {
            for (j, d) in row.iter_mut().enumerate() {
                *d += src[base + j * inner_stride];
            }
        } else {
            for (j, d) in row.iter_mut().enumerate() {
                *d = src[base + j * inner_stride];
            }
        }
        out += inner;
        // Odometer increment over the outer axes.
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            base += gather[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            base -= gather[axis] * out_shape[axis];
            counter[axis] = 0;
        }
    }
}

/// Patch matrix for a 3x3 kernel over one `channels x h x w` plane stack:
/// rows are `(channel, ky, kx)`, columns are output positions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_3x3(
    x: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
    cols: &mut [f64],
) {
    let positions = out_h * out_w;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * positions;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut cols[row + oy * out_w..row + (oy + 1) * out_w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_3x3`]: scatters patch-matrix gradients back onto the input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_3x3(
    cols: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    pad: usize,
    dx: &mut [f64],
) {
    let positions = out_h * out_w;
    for c in 0..channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * positions;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += cols[row + oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
