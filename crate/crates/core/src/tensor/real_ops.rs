// SPDX-License-Identifier: Apache-2.0

//! Batched real-valued kernels used by training, each with its backward pass.
//!
//! Layouts are row-major: linear inputs are `[batch, in]`, weights
//! `[out, in]`; convolution inputs are `[batch, C, H, W]` and weights
//! `[F, C*Kh*Kw]`.

use super::kernels::ConvGeom;

/// `c = alpha * op(a) * op(b) + beta * c` with `op(a): m x k`, `op(b): k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
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
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
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

/// `y = x w^T`.
pub fn linear_forward(x: &[f64], w: &[f64], batch: usize, fan_in: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    gemm(batch, fan_in, out, x, false, w, true, 0.0, &mut y);
    y
}

/// Returns `(dx, dw)` for `y = x w^T`.
pub fn linear_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    batch: usize,
    fan_in: usize,
    out: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * fan_in];
    gemm(batch, out, fan_in, dy, false, w, false, 0.0, &mut dx);
    let mut dw = vec![0.0; out * fan_in];
    gemm(out, batch, fan_in, dy, true, x, false, 0.0, &mut dw);
    (dx, dw)
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (ov, k) = (g.out_w(), g.patch_len());
    for u in 0..g.out_h() {
        for v in 0..ov {
            let row = &mut cols[(u * ov + v) * k..(u * ov + v + 1) * k];
            for (kk, c) in row.iter_mut().enumerate() {
                *c = x[g.input_index(u, v, kk)];
            }
        }
    }
}

fn col2im_add(dcols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ov, k) = (g.out_w(), g.patch_len());
    for u in 0..g.out_h() {
        for v in 0..ov {
            let row = &dcols[(u * ov + v) * k..(u * ov + v + 1) * k];
            for (kk, d) in row.iter().enumerate() {
                dx[g.input_index(u, v, kk)] += d;
            }
        }
    }
}

/// Valid stride-1 correlation, `[B, C, H, W] -> [B, F, U, V]`.
pub fn conv2d_forward(x: &[f64], w: &[f64], batch: usize, g: &ConvGeom, filters: usize) -> Vec<f64> {
    let (in_len, pos, k) = (g.channels * g.height * g.width, g.positions(), g.patch_len());
    assert_eq!(x.len(), batch * in_len);
    assert_eq!(w.len(), filters * k);
    let mut cols = vec![0.0; pos * k];
    let mut y = vec![0.0; batch * filters * pos];
    for s in 0..batch {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let ys = &mut y[s * filters * pos..(s + 1) * filters * pos];
        gemm(filters, k, pos, w, false, &cols, true, 0.0, ys);
    }
    y
}

/// Returns `(dx, dw)`; `dx` is skipped (empty) when `need_dx` is false.
pub fn conv2d_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    batch: usize,
    g: &ConvGeom,
    filters: usize,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (in_len, pos, k) = (g.channels * g.height * g.width, g.positions(), g.patch_len());
    let mut cols = vec![0.0; pos * k];
    let mut dcols = vec![0.0; pos * k];
    let mut dw = vec![0.0; filters * k];
    let mut dx = if need_dx { vec![0.0; batch * in_len] } else { Vec::new() };
    for s in 0..batch {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let dys = &dy[s * filters * pos..(s + 1) * filters * pos];
        gemm(filters, pos, k, dys, false, &cols, false, 1.0, &mut dw);
        if need_dx {
            gemm(pos, filters, k, dys, true, w, false, 0.0, &mut dcols);
            col2im_add(&dcols, g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    (dx, dw)
}
