//! Per-sample 2D kernels on channel-major (C x H x W) buffers.
//!
//! Convolutions are "same"-padded and lowered to a single GEMM through an
//! im2col buffer whose row index is `(c_in, ky, kx)` and column index the
//! output pixel.

/// `out = relu?(W * im2col(input) + b)`.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
    k: usize,
    relu: bool,
    out: &mut [f32],
    col: &mut Vec<f32>,
) {
    let hw = h * w;
    let kk = c_in * k * k;
    debug_assert_eq!(input.len(), c_in * hw);
    debug_assert_eq!(weight.len(), c_out * kk);
    debug_assert_eq!(out.len(), c_out * hw);
    let b: &[f32] = if k == 1 {
        input
    } else {
        im2col(input, c_in, h, w, k, col);
        col
    };
    for (co, row) in out.chunks_exact_mut(hw).enumerate() {
        row.fill(bias[co]);
    }
    unsafe {
        matrixmultiply::sgemm(
            c_out,
            kk,
            hw,
            1.0,
            weight.as_ptr(),
            kk as isize,
            1,
            b.as_ptr(),
            hw as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            hw as isize,
            1,
        );
    }
    if relu {
        for x in out.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
}

/// Accumulates weight/bias gradients for one sample and, when asked, writes
/// the gradient with respect to the input (overwriting `dinput`).
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    c_out: usize,
    k: usize,
    dout: &[f32],
    dweight: &mut [f32],
    dbias: &mut [f32],
    dinput: Option<&mut [f32]>,
    col: &mut Vec<f32>,
    dcol: &mut Vec<f32>,
) {
    let hw = h * w;
    let kk = c_in * k * k;
    let b: &[f32] = if k == 1 {
        input
    } else {
        im2col(input, c_in, h, w, k, col);
        col
    };
    for (co, row) in dout.chunks_exact(hw).enumerate() {
        dbias[co] += row.iter().sum::<f32>();
    }
    // dW (c_out x kk) += dout (c_out x hw) * col^T (hw x kk)
    unsafe {
        matrixmultiply::sgemm(
            c_out,
            hw,
            kk,
            1.0,
            dout.as_ptr(),
            hw as isize,
            1,
            b.as_ptr(),
            1,
            hw as isize,
            1.0,
            dweight.as_mut_ptr(),
            kk as isize,
            1,
        );
    }
    let Some(dinput) = dinput else {
        return;
    };
    // dcol (kk x hw) = W^T (kk x c_out) * dout (c_out x hw)
    let target: &mut [f32] = if k == 1 {
        dinput
    } else {
        dcol.clear();
        dcol.resize(kk * hw, 0.0);
        dcol
    };
    unsafe {
        matrixmultiply::sgemm(
            kk,
            c_out,
            hw,
            1.0,
            weight.as_ptr(),
            1,
            kk as isize,
            dout.as_ptr(),
            hw as isize,
            1,
            0.0,
            target.as_mut_ptr(),
            hw as isize,
            1,
        );
    }
    if k != 1 {
        col2im(dcol, c_in, h, w, k, dinput);
    }
}

fn im2col(input: &[f32], c_in: usize, h: usize, w: usize, k: usize, col: &mut Vec<f32>) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    col.clear();
    col.resize(c_in * k * k * hw, 0.0);
    for c in 0..c_in {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = ((c * k + ky) * k + kx) * hw;
                let dst = &mut col[row..row + hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_off = (sy as usize * w) as isize + dx;
                    let d = &mut dst[y * w + x0..y * w + x1];
                    let s = &plane[(src_off + x0 as isize) as usize..(src_off + x1 as isize) as usize];
                    d.copy_from_slice(s);
                }
            }
        }
    }
}

fn col2im(dcol: &[f32], c_in: usize, h: usize, w: usize, k: usize, dinput: &mut [f32]) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    dinput.fill(0.0);
    for c in 0..c_in {
        let plane = &mut dinput[c * hw..(c + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = ((c * k + ky) * k + kx) * hw;
                let src = &dcol[row..row + hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let start = ((sy as usize * w) as isize + dx + x0 as isize) as usize;
                    let s = &src[y * w + x0..y * w + x1];
                    let d = &mut plane[start..start + (x1 - x0)];
                    for (a, b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2.
pub fn maxpool_forward(input: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..2 * y * w + w];
            let r1 = &src[(2 * y + 1) * w..(2 * y + 1) * w + w];
            for x in 0..ow {
                dst[y * ow + x] = r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]);
            }
        }
    }
}

/// Routes each pooled gradient to the first maximal input of its window,
/// adding into `dinput`.
pub fn maxpool_backward(input: &[f32], c: usize, h: usize, w: usize, dout: &[f32], dinput: &mut [f32]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let candidates = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                dinput[best] += dout[ch * oh * ow + y * ow + x];
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling from (h, w) to (2h, 2w).
pub fn upsample_forward(input: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let srow = &src[(y / 2) * w..(y / 2) * w + w];
            let drow = &mut dst[y * ow..(y + 1) * ow];
            for x in 0..ow {
                drow[x] = srow[x / 2];
            }
        }
    }
}

/// Sums each 2x2 block of `dout` (2h x 2w) into `dinput` (h x w).
pub fn upsample_backward(dout: &[f32], c: usize, h: usize, w: usize, dinput: &mut [f32]) {
    let (oh, ow) = (2 * h, 2 * w);
    dinput.fill(0.0);
    for ch in 0..c {
        let src = &dout[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut dinput[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            let srow = &src[y * ow..(y + 1) * ow];
            let drow = &mut dst[(y / 2) * w..(y / 2) * w + w];
            for x in 0..ow {
                drow[x / 2] += srow[x];
            }
        }
    }
}

/// Channel softmax over a C x HW logit buffer, in place.
pub fn softmax_channels(logits: &mut [f32], c: usize, hw: usize) {
    for p in 0..hw {
        let mut max = f32::NEG_INFINITY;
        for ch in 0..c {
            max = max.max(logits[ch * hw + p]);
        }
        let mut sum = 0f32;
        for ch in 0..c {
            let e = (logits[ch * hw + p] - max).exp();
            logits[ch * hw + p] = e;
            sum += e;
        }
        for ch in 0..c {
            logits[ch * hw + p] /= sum;
        }
    }
}
