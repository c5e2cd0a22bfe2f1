//! 2-D convolution kernels (cross-correlation, "same" padding `k / 2`)
//! lowered to im2col + GEMM.

use super::tensor::Tensor;

pub(crate) fn output_size(size: usize, k: usize, stride: usize) -> usize {
    (size + 2 * (k / 2) - k) / stride + 1
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies in
/// `0..w`, as a half-open range.
fn valid_span(wo: usize, w: usize, kx: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    // largest ox with ox * stride + kx - pad <= w - 1
    let hi = if w + pad > kx {
        (w + pad - kx - 1) / stride + 1
    } else {
        0
    };
    (lo.min(wo), hi.min(wo).max(lo.min(wo)))
}

/// Unfold one `(C, H, W)` item into a `(C*k*k, Ho*Wo)` row-major matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, cols: &mut [f64]) {
    let pad = k / 2;
    let ho = output_size(h, k, stride);
    let wo = output_size(w, k, stride);
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_span(wo, w, kx, pad, stride);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if stride == 1 {
                        let start = lo + kx - pad;
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (ox, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[(lo + ox) * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image grid.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, stride: usize, dx: &mut [f64]) {
    let pad = k / 2;
    let ho = output_size(h, k, stride);
    let wo = output_size(w, k, stride);
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_span(wo, w, kx, pad, stride);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        dst[ox * stride + kx - pad] += line[ox];
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers pass buffers whose extents cover the strided
    // m x k, k x n and m x n views described by the dimensions and strides.
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Reusable im2col buffer of at least `len` entries (contents unspecified).
fn take_scratch(len: usize) -> Vec<f64> {
    let mut buf = SCRATCH.with(|s| std::mem::take(&mut *s.borrow_mut()));
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    buf.truncate(len);
    buf
}

fn give_scratch(buf: Vec<f64>) {
    if buf.capacity() > 0 {
        SCRATCH.with(|s| *s.borrow_mut() = buf);
    }
}

fn is_pointwise(k: usize, stride: usize) -> bool {
    k == 1 && stride == 1
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Tensor {
    let [n, cin, h, w] = x.shape();
    let [cout, wcin, k, k2] = weight.shape();
    assert_eq!(cin, wcin, "conv input channels");
    assert_eq!(k, k2, "square kernels only");
    assert!(k % 2 == 1, "odd kernels only");
    let ho = output_size(h, k, stride);
    let wo = output_size(w, k, stride);
    let p = ho * wo;
    let kk = cin * k * k;

    let mut out = Tensor::zeros([n, cout, ho, wo]);
    let mut cols = if is_pointwise(k, stride) {
        Vec::new()
    } else {
        take_scratch(kk * p)
    };
    for item in 0..n {
        let xi = x.item(item);
        let cols_ref: &[f64] = if is_pointwise(k, stride) {
            xi
        } else {
            im2col(xi, cin, h, w, k, stride, &mut cols);
            &cols
        };
        let oi = out.item_mut(item);
        if let Some(b) = bias {
            for (co, chunk) in oi.chunks_mut(p).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data()[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(
            cout,
            kk,
            p,
            weight.data(),
            kk as isize,
            1,
            cols_ref,
            p as isize,
            1,
            beta,
            oi,
        );
    }
    give_scratch(cols);
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let [n, cin, h, w] = x.shape();
    let [cout, _, k, _] = weight.shape();
    let [_, _, ho, wo] = grad_out.shape();
    let p = ho * wo;
    let kk = cin * k * k;
    let pointwise = is_pointwise(k, stride);

    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let db = need_db.then(|| {
        let mut db = Tensor::zeros([cout, 1, 1, 1]);
        for item in 0..n {
            for (co, chunk) in grad_out.item(item).chunks(p).enumerate() {
                db.data_mut()[co] += chunk.iter().sum::<f64>();
            }
        }
        db
    });

    let mut cols = if pointwise || !need_dw {
        Vec::new()
    } else {
        take_scratch(kk * p)
    };
    let mut dcols = if pointwise || !need_dx {
        Vec::new()
    } else {
        vec![0.0; kk * p]
    };
    for item in 0..n {
        let go = grad_out.item(item);
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[f64] = if pointwise {
                x.item(item)
            } else {
                im2col(x.item(item), cin, h, w, k, stride, &mut cols);
                &cols
            };
            // dW += gout (cout x p) * cols^T (p x kk)
            gemm(
                cout,
                p,
                kk,
                go,
                p as isize,
                1,
                cols_ref,
                1,
                p as isize,
                1.0,
                dw.data_mut(),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T (kk x cout) * gout (cout x p)
            if pointwise {
                gemm(
                    kk,
                    cout,
                    p,
                    weight.data(),
                    1,
                    kk as isize,
                    go,
                    p as isize,
                    1,
                    0.0,
                    dx.item_mut(item),
                );
            } else {
                gemm(
                    kk,
                    cout,
                    p,
                    weight.data(),
                    1,
                    kk as isize,
                    go,
                    p as isize,
                    1,
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, cin, h, w, k, stride, dx.item_mut(item));
            }
        }
    }
    give_scratch(cols);
    ConvGrads { dx, dw, db }
}
