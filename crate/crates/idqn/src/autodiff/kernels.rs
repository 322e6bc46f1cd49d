//! Raw array kernels shared by forward and backward passes.
//!
//! Every function accumulates into its output slice (`+=`), so callers
//! decide whether to zero first. Convolutions are valid (unpadded)
//! cross-correlations; the transposed convolution is their exact adjoint.

/// `acc += sum_i a[i] * b[i]` over two equal-length slices.
#[inline(always)]
fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out[i] += s * b[i]` over two equal-length slices.
#[inline(always)]
fn axpy_slices(s: f64, b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(b.len(), out.len());
    for (o, y) in out.iter_mut().zip(b) {
        *o += s * y;
    }
}

/// out[m x n] += a[m x k] . b[k x n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            axpy_slices(av, &b[t * n..(t + 1) * n], orow);
        }
    }
}

/// out[m x k] += a[m x n] . b[k x n]^T  (right operand transposed)
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (t, o) in orow.iter_mut().enumerate() {
            *o += dot_slices(arow, &b[t * n..(t + 1) * n]);
        }
    }
}

/// out[k x n] += a[m x k]^T . b[m x n]  (left operand transposed)
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            axpy_slices(av, brow, &mut out[t * n..(t + 1) * n]);
        }
    }
}

/// Output spatial extent of a valid convolution along one axis.
pub fn conv_out(extent: usize, kernel: usize, stride: usize) -> usize {
    (extent - kernel) / stride + 1
}

/// Output spatial extent of a transposed convolution along one axis.
pub fn deconv_out(extent: usize, kernel: usize, stride: usize) -> usize {
    (extent - 1) * stride + kernel
}

/// One kernel row swept across one input row:
/// `out[j] += sum_v k[v] * in[j*stride + v]`.
#[inline(always)]
fn correlate_row(irow: &[f64], krow: &[f64], stride: usize, orow: &mut [f64]) {
    match *krow {
        [k0] => {
            for (j, o) in orow.iter_mut().enumerate() {
                *o += k0 * irow[j * stride];
            }
        }
        [k0, k1, k2] => {
            for (j, o) in orow.iter_mut().enumerate() {
                let b = j * stride;
                *o += k0 * irow[b] + k1 * irow[b + 1] + k2 * irow[b + 2];
            }
        }
        [k0, k1, k2, k3] => {
            for (j, o) in orow.iter_mut().enumerate() {
                let b = j * stride;
                *o += k0 * irow[b] + k1 * irow[b + 1] + k2 * irow[b + 2] + k3 * irow[b + 3];
            }
        }
        _ => {
            let kw = krow.len();
            for (j, o) in orow.iter_mut().enumerate() {
                let b = j * stride;
                *o += dot_slices(&irow[b..b + kw], krow);
            }
        }
    }
}

/// Adjoint sweep of [`correlate_row`]:
/// `out[j*stride + v] += src[j] * k[v]`.
#[inline(always)]
fn scatter_row(src: &[f64], krow: &[f64], stride: usize, orow: &mut [f64]) {
    match *krow {
        [k0] => {
            for (j, &s) in src.iter().enumerate() {
                orow[j * stride] += s * k0;
            }
        }
        [k0, k1, k2] => {
            for (j, &s) in src.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                let b = j * stride;
                orow[b] += s * k0;
                orow[b + 1] += s * k1;
                orow[b + 2] += s * k2;
            }
        }
        [k0, k1, k2, k3] => {
            for (j, &s) in src.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                let b = j * stride;
                orow[b] += s * k0;
                orow[b + 1] += s * k1;
                orow[b + 2] += s * k2;
                orow[b + 3] += s * k3;
            }
        }
        _ => {
            let kw = krow.len();
            for (j, &s) in src.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                let b = j * stride;
                axpy_slices(s, krow, &mut orow[b..b + kw]);
            }
        }
    }
}

/// Kernel-row gradient of the same sweep:
/// `kgrad[v] += sum_j src[j] * in[j*stride + v]`.
#[inline(always)]
fn tap_grads(src: &[f64], irow: &[f64], stride: usize, kgrad: &mut [f64]) {
    if stride == 1 {
        for (v, kg) in kgrad.iter_mut().enumerate() {
            *kg += dot_slices(src, &irow[v..v + src.len()]);
        }
        return;
    }
    for (v, kg) in kgrad.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &s) in src.iter().enumerate() {
            acc += s * irow[j * stride + v];
        }
        *kg += acc;
    }
}

/// out[f x oh x ow] += conv(input[c x h x w], kernels[f x c x kh x kw])
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    kernels: &[f64],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (conv_out(h, kh, stride), conv_out(w, kw, stride));
    debug_assert_eq!(out.len(), f * oh * ow);
    for fi in 0..f {
        for ci in 0..c {
            let kch = &kernels[(fi * c + ci) * kh * kw..][..kh * kw];
            for u in 0..kh {
                let krow = &kch[u * kw..][..kw];
                for i in 0..oh {
                    let irow = &input[(ci * h + i * stride + u) * w..][..w];
                    let orow = &mut out[(fi * oh + i) * ow..][..ow];
                    correlate_row(irow, krow, stride, orow);
                }
            }
        }
    }
}

/// grad_input[c x h x w] += adjoint of conv2d w.r.t. its input
#[allow(clippy::too_many_arguments)]
pub fn conv2d_grad_input(
    grad_out: &[f64],
    kernels: &[f64],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    grad_input: &mut [f64],
) {
    let (oh, ow) = (conv_out(h, kh, stride), conv_out(w, kw, stride));
    for fi in 0..f {
        for ci in 0..c {
            let kch = &kernels[(fi * c + ci) * kh * kw..][..kh * kw];
            for u in 0..kh {
                let krow = &kch[u * kw..][..kw];
                for i in 0..oh {
                    let gout = &grad_out[(fi * oh + i) * ow..][..ow];
                    let girow = &mut grad_input[(ci * h + i * stride + u) * w..][..w];
                    scatter_row(gout, krow, stride, girow);
                }
            }
        }
    }
}

/// grad_kernels[f x c x kh x kw] += adjoint of conv2d w.r.t. its kernels
#[allow(clippy::too_many_arguments)]
pub fn conv2d_grad_kernels(
    grad_out: &[f64],
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    grad_kernels: &mut [f64],
) {
    let (oh, ow) = (conv_out(h, kh, stride), conv_out(w, kw, stride));
    for fi in 0..f {
        for ci in 0..c {
            let kch = &mut grad_kernels[(fi * c + ci) * kh * kw..][..kh * kw];
            for u in 0..kh {
                let krow = &mut kch[u * kw..][..kw];
                for i in 0..oh {
                    let gout = &grad_out[(fi * oh + i) * ow..][..ow];
                    let irow = &input[(ci * h + i * stride + u) * w..][..w];
                    tap_grads(gout, irow, stride, krow);
                }
            }
        }
    }
}

/// out[c x oh x ow] += deconv(input[f x h x w], kernels[f x c x kh x kw])
///
/// Scatter form of the exact adjoint of `conv2d`:
/// <conv(x, K), y> == <x, deconv(y, K)> for compatible shapes.
#[allow(clippy::too_many_arguments)]
pub fn deconv2d(
    input: &[f64],
    kernels: &[f64],
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out: &mut [f64],
) {
    let (oh, ow) = (deconv_out(h, kh, stride), deconv_out(w, kw, stride));
    debug_assert_eq!(out.len(), c * oh * ow);
    for fi in 0..f {
        for ci in 0..c {
            let kch = &kernels[(fi * c + ci) * kh * kw..][..kh * kw];
            for u in 0..kh {
                let krow = &kch[u * kw..][..kw];
                for i in 0..h {
                    let xrow = &input[(fi * h + i) * w..][..w];
                    let orow = &mut out[(ci * oh + i * stride + u) * ow..][..ow];
                    scatter_row(xrow, krow, stride, orow);
                }
            }
        }
    }
}

/// grad_input[f x h x w] += adjoint of deconv2d w.r.t. its input
#[allow(clippy::too_many_arguments)]
pub fn deconv2d_grad_input(
    grad_out: &[f64],
    kernels: &[f64],
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    grad_input: &mut [f64],
) {
    let (oh, ow) = (deconv_out(h, kh, stride), deconv_out(w, kw, stride));
    for fi in 0..f {
        for ci in 0..c {
            let kch = &kernels[(fi * c + ci) * kh * kw..][..kh * kw];
            for u in 0..kh {
                let krow = &kch[u * kw..][..kw];
                for i in 0..h {
                    let gout = &grad_out[(ci * oh + i * stride + u) * ow..][..ow];
                    let girow = &mut grad_input[(fi * h + i) * w..][..w];
                    correlate_row(gout, krow, stride, girow);
                }
            }
        }
    }
}

/// grad_kernels[f x c x kh x kw] += adjoint of deconv2d w.r.t. its kernels
#[allow(clippy::too_many_arguments)]
pub fn deconv2d_grad_kernels(
    grad_out: &[f64],
    input: &[f64],
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    grad_kernels: &mut [f64],
) {
    let (oh, ow) = (deconv_out(h, kh, stride), deconv_out(w, kw, stride));
    for fi in 0..f {
        for ci in 0..c {
            let kch = &mut grad_kernels[(fi * c + ci) * kh * kw..][..kh * kw];
            for u in 0..kh {
                let krow = &mut kch[u * kw..][..kw];
                for i in 0..h {
                    let xrow = &input[(fi * h + i) * w..][..w];
                    let gout = &grad_out[(ci * oh + i * stride + u) * ow..][..ow];
                    tap_grads(xrow, gout, stride, krow);
                }
            }
        }
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Plainest possible triple loop, used as the matmul oracle.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    out[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        out
    }

    /// Direct six-loop convolution, used as the conv2d oracle.
    #[allow(clippy::too_many_arguments)]
    fn conv_oracle(
        input: &[f64],
        kernels: &[f64],
        c: usize,
        h: usize,
        w: usize,
        f: usize,
        kh: usize,
        kw: usize,
        s: usize,
    ) -> Vec<f64> {
        let (oh, ow) = (conv_out(h, kh, s), conv_out(w, kw, s));
        let mut out = vec![0.0; f * oh * ow];
        for fi in 0..f {
            for i in 0..oh {
                for j in 0..ow {
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                out[(fi * oh + i) * ow + j] += input
                                    [(ci * h + i * s + u) * w + (j * s + v)]
                                    * kernels[((fi * c + ci) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!(
                (x - y).abs() <= tol,
                "element {} differs: {} vs {}",
                i,
                x,
                y
            );
        }
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(m, k, n) in &[(1, 1, 1), (2, 3, 4), (5, 7, 3), (1, 16, 1), (4, 4, 4)] {
            let a = randv(&mut rng, m * k);
            let b = randv(&mut rng, k * n);
            let mut out = vec![0.0; m * n];
            matmul(&a, &b, m, k, n, &mut out);
            assert_close(&out, &matmul_oracle(&a, &b, m, k, n), 1e-12);
        }
    }

    #[test]
    fn transposed_matmuls_match_explicit_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, k, n) = (3, 4, 5);
        let a = randv(&mut rng, m * k);
        let b = randv(&mut rng, k * n);

        // a^T explicitly
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for t in 0..k {
                at[t * m + i] = a[i * k + t];
            }
        }
        let mut want = vec![0.0; m * n]; // unused shape check placeholder
        matmul(&a, &b, m, k, n, &mut want);

        // matmul_tn(a, x) == a^T . x
        let x = randv(&mut rng, m * n);
        let mut got = vec![0.0; k * n];
        matmul_tn(&a, &x, m, k, n, &mut got);
        assert_close(&got, &matmul_oracle(&at, &x, k, m, n), 1e-12);

        // matmul_nt(x, b) == x . b^T with b as [k x n] read as [n x k] rows
        let y = randv(&mut rng, m * k);
        let mut bt = vec![0.0; n * k];
        for t in 0..k {
            for j in 0..n {
                bt[j * k + t] = b[t * n + j];
            }
        }
        let mut got2 = vec![0.0; m * n];
        // here the "n" argument is the shared axis length k
        matmul_nt(&y, &bt, m, k, n, &mut got2);
        assert_close(&got2, &matmul_oracle(&y, &b, m, k, n), 1e-12);
    }

    #[test]
    fn conv2d_matches_six_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(c, h, w, f, kh, kw, s) in &[
            (1, 5, 5, 1, 3, 3, 1),
            (2, 8, 8, 3, 3, 3, 2),
            (3, 7, 9, 2, 2, 4, 1),
            (2, 32, 32, 4, 3, 3, 2),
        ] {
            let input = randv(&mut rng, c * h * w);
            let kern = randv(&mut rng, f * c * kh * kw);
            let (oh, ow) = (conv_out(h, kh, s), conv_out(w, kw, s));
            let mut out = vec![0.0; f * oh * ow];
            conv2d(&input, &kern, c, h, w, f, kh, kw, s, &mut out);
            assert_close(&out, &conv_oracle(&input, &kern, c, h, w, f, kh, kw, s), 1e-12);
        }
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        // 1x1 kernel of weight 1 and stride 1 copies the input channel.
        let input: Vec<f64> = (0..9).map(|x| x as f64).collect();
        let mut out = vec![0.0; 9];
        conv2d(&input, &[1.0], 1, 3, 3, 1, 1, 1, 1, &mut out);
        assert_eq!(out, input);
    }

    #[test]
    fn deconv_is_exact_adjoint_of_conv() {
        // <conv(x, K), y> == <x, deconv(y, K)> to 1e-9 on random tensors.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(c, h, w, f, kh, kw, s) in &[
            (1, 5, 5, 2, 3, 3, 1),
            (2, 7, 7, 3, 3, 3, 2),
            (3, 10, 6, 2, 4, 2, 2),
        ] {
            assert_eq!((h - kh) % s, 0, "test shapes must make conv/deconv inverse extents");
            let x = randv(&mut rng, c * h * w);
            let kern = randv(&mut rng, f * c * kh * kw);
            let (oh, ow) = (conv_out(h, kh, s), conv_out(w, kw, s));
            let y = randv(&mut rng, f * oh * ow);

            let mut cx = vec![0.0; f * oh * ow];
            conv2d(&x, &kern, c, h, w, f, kh, kw, s, &mut cx);
            let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();

            let mut dy = vec![0.0; c * h * w];
            deconv2d(&y, &kern, f, oh, ow, c, kh, kw, s, &mut dy);
            let rhs: f64 = dy.iter().zip(&x).map(|(a, b)| a * b).sum();

            assert!(
                (lhs - rhs).abs() < 1e-9,
                "adjoint identity violated: {} vs {}",
                lhs,
                rhs
            );
        }
    }

    #[test]
    fn deconv_output_extent() {
        assert_eq!(deconv_out(7, 3, 2), 15);
        assert_eq!(deconv_out(15, 4, 2), 32);
        assert_eq!(conv_out(32, 3, 2), 15);
        assert_eq!(conv_out(15, 3, 2), 7);
    }

    #[test]
    fn softmax_row_known_values() {
        // softmax([ln 2, 0, 0]) == [0.5, 0.25, 0.25]
        let mut out = vec![0.0; 3];
        softmax_row(&[2.0f64.ln(), 0.0, 0.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-12);
        assert!((out[1] - 0.25).abs() < 1e-12);
        assert!((out[2] - 0.25).abs() < 1e-12);
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
