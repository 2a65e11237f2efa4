//! Layer primitives on flat row-major buffers. Convolutions go through
//! im2col and a dense GEMM.

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`, all row-major with explicit transposition flags.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the length assertions above guarantee every strided access
    // stays within the slices.
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

/// Unrolls one `(channels, h, w)` sample into a `(channels*k*k, oh*ow)`
/// patch matrix.
pub(crate) fn im2col(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    cols: &mut [f64],
) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let p = oh * ow;
    debug_assert_eq!(cols.len(), channels * k * k * p);
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let src = &plane[(oy * stride + ky) * w + kx..];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        dst.copy_from_slice(&src[..ow]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = src[ox * stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into the image.
pub(crate) fn col2im(
    cols: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    out: &mut [f64],
) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let p = oh * ow;
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..oh {
                    let base = (oy * stride + ky) * w + kx;
                    for ox in 0..ow {
                        plane[base + ox * stride] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Max pooling over one sample. `argmax` receives, for every output cell,
/// the flat input index that won (first maximum in scan order).
pub(crate) fn maxpool_forward(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for py in 0..size {
                    for px in 0..size {
                        let idx = (c * h + oy * stride + py) * w + ox * stride + px;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward(grad_out: &[f64], argmax: &[u32], grad_in: &mut [f64]) {
    for (g, &idx) in grad_out.iter().zip(argmax) {
        grad_in[idx as usize] += g;
    }
}

/// Mean softmax cross-entropy over a batch of logits and the gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    assert_eq!(logits.len(), batch * classes);
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[y];
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - log_sum).exp() * inv;
        }
        g[y] -= inv;
    }
    (loss * inv, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transpositions() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (c, h, w, k) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = (h - k + 1) * (w - k + 1);
        let y: Vec<f64> = (0..c * k * k * p)
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, k, 1, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, k, 1, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_routes_to_argmax_only() {
        let x = [
            1.0, 5.0, 2.0, 0.0, //
            3.0, 4.0, 9.0, 1.0, //
            0.0, 0.0, 7.0, 8.0, //
            6.0, 0.0, 8.0, 2.0,
        ];
        let mut out = [0.0; 4];
        let mut arg = [0u32; 4];
        maxpool_forward(&x, 1, 4, 4, 2, 2, &mut out, &mut arg);
        assert_eq!(out, [5.0, 9.0, 6.0, 8.0]);
        let mut g = [0.0; 16];
        maxpool_backward(&[1.0, 2.0, 3.0, 4.0], &arg, &mut g);
        let mut expected = [0.0; 16];
        expected[1] = 1.0;
        expected[6] = 2.0;
        expected[12] = 3.0;
        // 8.0 appears twice in the last window; the first in scan order wins.
        expected[11] = 4.0;
        assert_eq!(g, expected);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0; 4], &[1, 0], 2);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![0.25, -0.25, -0.25, 0.25]);
    }
}
