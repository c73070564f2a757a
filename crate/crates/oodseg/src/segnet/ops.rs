//! Layer kernels and their adjoints.
//!
//! Feature maps are channel-major with row-major (H, W, D) spatial layout,
//! D contiguous. Convolutions are 3x3x3 with zero padding 1 (the head is
//! 1x1x1), written as row accumulations so the inner loops stay
//! contiguous and vectorize; output channels are computed independently,
//! which keeps rayon parallelism deterministic.

use rayon::prelude::*;

use crate::tensor::rng::Rng;

use super::scalar::Scalar;

/// One multi-channel feature map.
#[derive(Debug, Clone)]
pub(crate) struct Fm<S> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Fm<S> {
    pub fn zeros(c: usize, h: usize, w: usize, d: usize) -> Fm<S> {
        Fm {
            c,
            h,
            w,
            d,
            data: vec![S::ZERO; c * h * w * d],
        }
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.h * self.w * self.d
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[S] {
        let sp = self.spatial();
        &self.data[c * sp..(c + 1) * sp]
    }
}

/// Generic dot product with fixed-order 8-lane accumulation.
#[inline]
fn dot_s<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (va, vb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += va[k] * vb[k];
        }
    }
    let mut tail = S::ZERO;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// acc[x] += k0*row[x-1] + k1*row[x] + k2*row[x+1] with zero padding.
#[inline]
fn row_accumulate<S: Scalar>(acc: &mut [S], row: &[S], k0: S, k1: S, k2: S) {
    let d = acc.len();
    if d == 1 {
        acc[0] += k1 * row[0];
        return;
    }
    acc[0] += k1 * row[0] + k2 * row[1];
    acc[d - 1] += k0 * row[d - 2] + k1 * row[d - 1];
    let mid = &mut acc[1..d - 1];
    let r0 = &row[..d - 2];
    let r1 = &row[1..d - 1];
    let r2 = &row[2..];
    for i in 0..mid.len() {
        mid[i] += k0 * r0[i] + k1 * r1[i] + k2 * r2[i];
    }
}

/// 3x3x3 convolution, zero padding 1, spatial extents preserved.
/// `kernel` is [co][ci][3][3][3]; `bias` one entry per output channel.
pub(crate) fn conv3_forward<S: Scalar>(x: &Fm<S>, kernel: &[S], bias: &[S], out: &mut Fm<S>) {
    let (ci, h, w, d) = (x.c, x.h, x.w, x.d);
    let co = out.c;
    debug_assert_eq!(kernel.len(), co * ci * 27);
    debug_assert_eq!(out.spatial(), x.spatial());
    let spatial = h * w * d;
    out.data
        .par_chunks_mut(spatial)
        .enumerate()
        .for_each(|(o, out_ch)| {
            let ker_o = &kernel[o * ci * 27..(o + 1) * ci * 27];
            let b = bias[o];
            let mut acc = vec![S::ZERO; d];
            for hh in 0..h {
                for ww in 0..w {
                    for a in acc.iter_mut() {
                        *a = b;
                    }
                    for i in 0..ci {
                        let ker = &ker_o[i * 27..(i + 1) * 27];
                        let xc = x.channel(i);
                        for dz in 0..3usize {
                            let sh = hh + dz;
                            if sh < 1 || sh > h {
                                continue;
                            }
                            let sh = sh - 1;
                            for dy in 0..3usize {
                                let sw = ww + dy;
                                if sw < 1 || sw > w {
                                    continue;
                                }
                                let sw = sw - 1;
                                let row = &xc[(sh * w + sw) * d..(sh * w + sw) * d + d];
                                let base = (dz * 3 + dy) * 3;
                                row_accumulate(&mut acc, row, ker[base], ker[base + 1], ker[base + 2]);
                            }
                        }
                    }
                    out_ch[(hh * w + ww) * d..(hh * w + ww) * d + d].copy_from_slice(&acc);
                }
            }
        });
}

/// Gradient with respect to the convolution input: a correlation with the
/// transposed, spatially flipped kernel, reusing the forward kernel.
pub(crate) fn conv3_backward_input<S: Scalar>(
    dy: &Fm<S>,
    kernel: &[S],
    ci: usize,
    dx: &mut Fm<S>,
) {
    let co = dy.c;
    let mut flipped = vec![S::ZERO; ci * co * 27];
    for o in 0..co {
        for i in 0..ci {
            for t in 0..27 {
                let (dz, rest) = (t / 9, t % 9);
                let (dyy, dxx) = (rest / 3, rest % 3);
                let ft = (2 - dz) * 9 + (2 - dyy) * 3 + (2 - dxx);
                flipped[(i * co + o) * 27 + ft] = kernel[(o * ci + i) * 27 + t];
            }
        }
    }
    let zero_bias = vec![S::ZERO; ci];
    conv3_forward(dy, &flipped, &zero_bias, dx);
}

/// Gradients with respect to kernel and bias.
pub(crate) fn conv3_backward_weights<S: Scalar>(
    x: &Fm<S>,
    dy: &Fm<S>,
    dkernel: &mut [S],
    dbias: &mut [S],
) {
    let (ci, h, w, d) = (x.c, x.h, x.w, x.d);
    let co = dy.c;
    debug_assert_eq!(dkernel.len(), co * ci * 27);
    dkernel
        .par_chunks_mut(ci * 27)
        .enumerate()
        .for_each(|(o, dker_o)| {
            let dyc = dy.channel(o);
            for i in 0..ci {
                let xc = x.channel(i);
                for dz in 0..3usize {
                    let oz = dz as i64 - 1;
                    let h0 = (-oz).max(0) as usize;
                    let h1 = h - oz.max(0) as usize;
                    for dyy in 0..3usize {
                        let oy = dyy as i64 - 1;
                        let w0 = (-oy).max(0) as usize;
                        let w1 = w - oy.max(0) as usize;
                        for dxx in 0..3usize {
                            let ox = dxx as i64 - 1;
                            let x0 = (-ox).max(0) as usize;
                            let x1 = d - ox.max(0) as usize;
                            let mut acc = S::ZERO;
                            for hh in h0..h1 {
                                let sh = (hh as i64 + oz) as usize;
                                for ww in w0..w1 {
                                    let sw = (ww as i64 + oy) as usize;
                                    let dy_row = &dyc[(hh * w + ww) * d + x0..(hh * w + ww) * d + x1];
                                    let sx0 = (x0 as i64 + ox) as usize;
                                    let x_row =
                                        &xc[(sh * w + sw) * d + sx0..(sh * w + sw) * d + sx0 + (x1 - x0)];
                                    acc += dot_s(dy_row, x_row);
                                }
                            }
                            dker_o[i * 27 + dz * 9 + dyy * 3 + dxx] = acc;
                        }
                    }
                }
            }
        });
    for o in 0..co {
        let mut acc = S::ZERO;
        for v in dy.channel(o) {
            acc += *v;
        }
        dbias[o] = acc;
    }
}

/// Pointwise (1x1x1) convolution used by the classification head.
pub(crate) fn conv1_forward<S: Scalar>(x: &Fm<S>, kernel: &[S], bias: &[S], out: &mut Fm<S>) {
    let sp = x.spatial();
    for o in 0..out.c {
        let (head, tail) = out.data.split_at_mut(o * sp);
        let _ = head;
        let out_ch = &mut tail[..sp];
        for v in out_ch.iter_mut() {
            *v = bias[o];
        }
        for i in 0..x.c {
            let k = kernel[o * x.c + i];
            let xc = x.channel(i);
            for (ov, xv) in out_ch.iter_mut().zip(xc) {
                *ov += k * *xv;
            }
        }
    }
}

pub(crate) fn conv1_backward_input<S: Scalar>(dy: &Fm<S>, kernel: &[S], ci: usize, dx: &mut Fm<S>) {
    let sp = dy.spatial();
    for i in 0..ci {
        let (head, tail) = dx.data.split_at_mut(i * sp);
        let _ = head;
        let dx_ch = &mut tail[..sp];
        for v in dx_ch.iter_mut() {
            *v = S::ZERO;
        }
        for o in 0..dy.c {
            let k = kernel[o * ci + i];
            let dyc = dy.channel(o);
            for (dv, yv) in dx_ch.iter_mut().zip(dyc) {
                *dv += k * *yv;
            }
        }
    }
}

pub(crate) fn conv1_backward_weights<S: Scalar>(
    x: &Fm<S>,
    dy: &Fm<S>,
    dkernel: &mut [S],
    dbias: &mut [S],
) {
    for o in 0..dy.c {
        let dyc = dy.channel(o);
        for i in 0..x.c {
            dkernel[o * x.c + i] = dot_s(dyc, x.channel(i));
        }
        let mut acc = S::ZERO;
        for v in dyc {
            acc += *v;
        }
        dbias[o] = acc;
    }
}

/// Instance normalization without affine parameters. Returns per-channel
/// (mean, 1/sqrt(var + eps)) for the backward pass; statistics accumulate
/// in f64.
pub(crate) fn instance_norm_forward<S: Scalar>(
    x: &Fm<S>,
    eps: f64,
    out: &mut Fm<S>,
) -> Vec<(f64, f64)> {
    let sp = x.spatial();
    let mut saved = Vec::with_capacity(x.c);
    for c in 0..x.c {
        let xc = x.channel(c);
        let mut sum = 0.0f64;
        for v in xc {
            sum += v.to_f64();
        }
        let mean = sum / sp as f64;
        let mut var = 0.0f64;
        for v in xc {
            let d = v.to_f64() - mean;
            var += d * d;
        }
        var /= sp as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let m = S::from_f64(mean);
        let is = S::from_f64(inv_std);
        let out_ch = &mut out.data[c * sp..(c + 1) * sp];
        for (ov, xv) in out_ch.iter_mut().zip(xc) {
            *ov = (*xv - m) * is;
        }
        saved.push((mean, inv_std));
    }
    saved
}

/// Backward of instance norm. `y` is the normalized output.
pub(crate) fn instance_norm_backward<S: Scalar>(
    dy: &Fm<S>,
    y: &Fm<S>,
    saved: &[(f64, f64)],
    dx: &mut Fm<S>,
) {
    let sp = dy.spatial();
    for c in 0..dy.c {
        let dyc = dy.channel(c);
        let yc = y.channel(c);
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        for (g, v) in dyc.iter().zip(yc) {
            m1 += g.to_f64();
            m2 += g.to_f64() * v.to_f64();
        }
        m1 /= sp as f64;
        m2 /= sp as f64;
        let inv_std = S::from_f64(saved[c].1);
        let m1s = S::from_f64(m1);
        let m2s = S::from_f64(m2);
        let dx_ch = &mut dx.data[c * sp..(c + 1) * sp];
        for i in 0..sp {
            dx_ch[i] = (dyc[i] - m1s - yc[i] * m2s) * inv_std;
        }
    }
}

pub(crate) fn relu_forward<S: Scalar>(x: &Fm<S>, out: &mut Fm<S>) {
    for (o, v) in out.data.iter_mut().zip(&x.data) {
        *o = v.max_with(S::ZERO);
    }
}

/// Uses the forward output as the mask, so the subgradient at zero is zero.
pub(crate) fn relu_backward<S: Scalar>(dy: &Fm<S>, y: &Fm<S>, dx: &mut Fm<S>) {
    for i in 0..dy.data.len() {
        dx.data[i] = if y.data[i] > S::ZERO { dy.data[i] } else { S::ZERO };
    }
}

/// Channel-wise (3D) dropout with inverted scaling: a dropped channel is
/// zeroed entirely, kept channels are scaled by 1/(1-rate).
pub(crate) fn dropout3d_forward<S: Scalar>(
    x: &Fm<S>,
    rate: f64,
    rng: &mut Rng,
    out: &mut Fm<S>,
) -> Vec<bool> {
    let sp = x.spatial();
    let scale = S::from_f64(1.0 / (1.0 - rate));
    let mut mask = Vec::with_capacity(x.c);
    for c in 0..x.c {
        let keep = rng.uniform() >= rate;
        mask.push(keep);
        let out_ch = &mut out.data[c * sp..(c + 1) * sp];
        if keep {
            for (o, v) in out_ch.iter_mut().zip(x.channel(c)) {
                *o = *v * scale;
            }
        } else {
            for o in out_ch.iter_mut() {
                *o = S::ZERO;
            }
        }
    }
    mask
}

pub(crate) fn dropout3d_backward<S: Scalar>(
    dy: &Fm<S>,
    mask: &[bool],
    rate: f64,
    dx: &mut Fm<S>,
) {
    let sp = dy.spatial();
    let scale = S::from_f64(1.0 / (1.0 - rate));
    for c in 0..dy.c {
        let dx_ch = &mut dx.data[c * sp..(c + 1) * sp];
        if mask[c] {
            for (o, v) in dx_ch.iter_mut().zip(dy.channel(c)) {
                *o = *v * scale;
            }
        } else {
            for o in dx_ch.iter_mut() {
                *o = S::ZERO;
            }
        }
    }
}

/// 2x2x2 average pooling with stride 2; extents must be even.
pub(crate) fn avgpool2_forward<S: Scalar>(x: &Fm<S>, out: &mut Fm<S>) {
    let (h2, w2, d2) = (out.h, out.w, out.d);
    let eighth = S::from_f64(0.125);
    for c in 0..x.c {
        let xc = x.channel(c);
        let sp_out = out.spatial();
        let out_ch = &mut out.data[c * sp_out..(c + 1) * sp_out];
        let mut idx = 0;
        for oh in 0..h2 {
            for ow in 0..w2 {
                for od in 0..d2 {
                    let mut s = S::ZERO;
                    for dz in 0..2 {
                        for dyy in 0..2 {
                            for dxx in 0..2 {
                                s += xc[((2 * oh + dz) * x.w + 2 * ow + dyy) * x.d + 2 * od + dxx];
                            }
                        }
                    }
                    out_ch[idx] = s * eighth;
                    idx += 1;
                }
            }
        }
    }
}

pub(crate) fn avgpool2_backward<S: Scalar>(dy: &Fm<S>, dx: &mut Fm<S>) {
    let eighth = S::from_f64(0.125);
    for c in 0..dy.c {
        let dyc = dy.channel(c);
        let sp_in = dx.spatial();
        let (w, d) = (dx.w, dx.d);
        let dx_ch = &mut dx.data[c * sp_in..(c + 1) * sp_in];
        let mut idx = 0;
        for oh in 0..dy.h {
            for ow in 0..dy.w {
                for od in 0..dy.d {
                    let g = dyc[idx] * eighth;
                    idx += 1;
                    for dz in 0..2 {
                        for dyy in 0..2 {
                            for dxx in 0..2 {
                                dx_ch[((2 * oh + dz) * w + 2 * ow + dyy) * d + 2 * od + dxx] = g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-axis interpolation table for 2x trilinear upsampling: output index
/// -> (left voxel, right voxel, left weight, right weight). Output voxel
/// i samples the input at i/2 - 0.25, clamped at the borders.
fn upsample_axis_table<S: Scalar>(n_in: usize) -> Vec<(usize, usize, S, S)> {
    let mut table = Vec::with_capacity(2 * n_in);
    for i in 0..2 * n_in {
        let pos = i as f64 * 0.5 - 0.25;
        let base = pos.floor();
        let mut t = pos - base;
        let mut i0 = base as i64;
        if i0 < 0 {
            i0 = 0;
            t = 0.0;
        }
        let mut i1 = i0 + 1;
        if i1 > n_in as i64 - 1 {
            i1 = n_in as i64 - 1;
            t = 0.0;
        }
        table.push((i0 as usize, i1 as usize, S::from_f64(1.0 - t), S::from_f64(t)));
    }
    table
}

/// Trilinear upsampling by a factor of two along each axis.
pub(crate) fn upsample2_forward<S: Scalar>(x: &Fm<S>, out: &mut Fm<S>) {
    let th = upsample_axis_table::<S>(x.h);
    let tw = upsample_axis_table::<S>(x.w);
    let td = upsample_axis_table::<S>(x.d);
    let sp_out = out.spatial();
    for c in 0..x.c {
        let xc = x.channel(c);
        let out_ch = &mut out.data[c * sp_out..(c + 1) * sp_out];
        let mut idx = 0;
        for &(h0, h1, wh0, wh1) in &th {
            for &(w0, w1, ww0, ww1) in &tw {
                for &(d0, d1, wd0, wd1) in &td {
                    let v = wh0
                        * (ww0 * (wd0 * xc[(h0 * x.w + w0) * x.d + d0]
                            + wd1 * xc[(h0 * x.w + w0) * x.d + d1])
                            + ww1 * (wd0 * xc[(h0 * x.w + w1) * x.d + d0]
                                + wd1 * xc[(h0 * x.w + w1) * x.d + d1]))
                        + wh1
                            * (ww0 * (wd0 * xc[(h1 * x.w + w0) * x.d + d0]
                                + wd1 * xc[(h1 * x.w + w0) * x.d + d1])
                                + ww1 * (wd0 * xc[(h1 * x.w + w1) * x.d + d0]
                                    + wd1 * xc[(h1 * x.w + w1) * x.d + d1]));
                    out_ch[idx] = v;
                    idx += 1;
                }
            }
        }
    }
}

pub(crate) fn upsample2_backward<S: Scalar>(dy: &Fm<S>, dx: &mut Fm<S>) {
    let th = upsample_axis_table::<S>(dx.h);
    let tw = upsample_axis_table::<S>(dx.w);
    let td = upsample_axis_table::<S>(dx.d);
    let sp_in = dx.spatial();
    for v in dx.data.iter_mut() {
        *v = S::ZERO;
    }
    for c in 0..dy.c {
        let dyc = dy.channel(c);
        let dx_ch = &mut dx.data[c * sp_in..(c + 1) * sp_in];
        let (w, d) = (dx.w, dx.d);
        let mut idx = 0;
        for &(h0, h1, wh0, wh1) in &th {
            for &(w0, w1, ww0, ww1) in &tw {
                for &(d0, d1, wd0, wd1) in &td {
                    let g = dyc[idx];
                    idx += 1;
                    dx_ch[(h0 * w + w0) * d + d0] += wh0 * ww0 * wd0 * g;
                    dx_ch[(h0 * w + w0) * d + d1] += wh0 * ww0 * wd1 * g;
                    dx_ch[(h0 * w + w1) * d + d0] += wh0 * ww1 * wd0 * g;
                    dx_ch[(h0 * w + w1) * d + d1] += wh0 * ww1 * wd1 * g;
                    dx_ch[(h1 * w + w0) * d + d0] += wh1 * ww0 * wd0 * g;
                    dx_ch[(h1 * w + w0) * d + d1] += wh1 * ww0 * wd1 * g;
                    dx_ch[(h1 * w + w1) * d + d0] += wh1 * ww1 * wd0 * g;
                    dx_ch[(h1 * w + w1) * d + d1] += wh1 * ww1 * wd1 * g;
                }
            }
        }
    }
}

/// Channel concatenation (skip connections).
pub(crate) fn concat_forward<S: Scalar>(a: &Fm<S>, b: &Fm<S>, out: &mut Fm<S>) {
    debug_assert_eq!(a.spatial(), b.spatial());
    let sa = a.c * a.spatial();
    out.data[..sa].copy_from_slice(&a.data);
    out.data[sa..].copy_from_slice(&b.data);
}

pub(crate) fn concat_backward<S: Scalar>(dy: &Fm<S>, da: &mut Fm<S>, db: &mut Fm<S>) {
    let sa = da.c * da.spatial();
    da.data.copy_from_slice(&dy.data[..sa]);
    db.data.copy_from_slice(&dy.data[sa..]);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm_from(c: usize, h: usize, w: usize, d: usize, vals: Vec<f64>) -> Fm<f64> {
        assert_eq!(vals.len(), c * h * w * d);
        Fm {
            c,
            h,
            w,
            d,
            data: vals,
        }
    }

    /// Direct per-voxel convolution oracle.
    fn conv3_naive(x: &Fm<f64>, kernel: &[f64], bias: &[f64], co: usize) -> Fm<f64> {
        let mut out = Fm::zeros(co, x.h, x.w, x.d);
        for o in 0..co {
            for hh in 0..x.h {
                for ww in 0..x.w {
                    for dd in 0..x.d {
                        let mut acc = bias[o];
                        for i in 0..x.c {
                            for t in 0..27 {
                                let (dz, r) = (t / 9, t % 9);
                                let (dy, dx) = (r / 3, r % 3);
                                let sh = hh as i64 + dz as i64 - 1;
                                let sw = ww as i64 + dy as i64 - 1;
                                let sd = dd as i64 + dx as i64 - 1;
                                if sh < 0
                                    || sw < 0
                                    || sd < 0
                                    || sh >= x.h as i64
                                    || sw >= x.w as i64
                                    || sd >= x.d as i64
                                {
                                    continue;
                                }
                                acc += kernel[(o * x.c + i) * 27 + t]
                                    * x.channel(i)[(sh as usize * x.w + sw as usize) * x.d
                                        + sd as usize];
                            }
                        }
                        out.data[((o * x.h + hh) * x.w + ww) * x.d + dd] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = Rng::new(3);
        let x = fm_from(3, 4, 5, 6, (0..3 * 4 * 5 * 6).map(|_| rng.normal()).collect());
        let kernel: Vec<f64> = (0..2 * 3 * 27).map(|_| rng.normal()).collect();
        let bias = vec![0.3, -0.2];
        let mut out = Fm::zeros(2, 4, 5, 6);
        conv3_forward(&x, &kernel, &bias, &mut out);
        let expect = conv3_naive(&x, &kernel, &bias, 2);
        for i in 0..out.data.len() {
            assert!((out.data[i] - expect.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_input_is_transpose() {
        // <dy, conv(x)> == <conv_back(dy), x> for linear conv (zero bias)
        let mut rng = Rng::new(4);
        let x = fm_from(2, 4, 4, 4, (0..128).map(|_| rng.normal()).collect());
        let dy = fm_from(3, 4, 4, 4, (0..192).map(|_| rng.normal()).collect());
        let kernel: Vec<f64> = (0..3 * 2 * 27).map(|_| rng.normal()).collect();
        let mut out = Fm::zeros(3, 4, 4, 4);
        conv3_forward(&x, &kernel, &[0.0; 3], &mut out);
        let lhs: f64 = out.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let mut dx = Fm::zeros(2, 4, 4, 4);
        conv3_backward_input(&dy, &kernel, 2, &mut dx);
        let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn instance_norm_normalizes() {
        let mut rng = Rng::new(5);
        let x = fm_from(2, 4, 4, 4, (0..128).map(|_| 3.0 + 2.0 * rng.normal()).collect());
        let mut y = Fm::zeros(2, 4, 4, 4);
        instance_norm_forward(&x, 1e-5, &mut y);
        for c in 0..2 {
            let yc = y.channel(c);
            let mean: f64 = yc.iter().sum::<f64>() / yc.len() as f64;
            let var: f64 = yc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / yc.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn avgpool_and_upsample_shapes_and_constants() {
        let x = fm_from(1, 4, 4, 4, vec![2.5; 64]);
        let mut pooled = Fm::zeros(1, 2, 2, 2);
        avgpool2_forward(&x, &mut pooled);
        assert!(pooled.data.iter().all(|&v| (v - 2.5f64).abs() < 1e-12));
        let mut up = Fm::zeros(1, 4, 4, 4);
        upsample2_forward(&pooled, &mut up);
        assert!(up.data.iter().all(|&v| (v - 2.5f64).abs() < 1e-12));
    }

    #[test]
    fn upsample_backward_is_transpose() {
        let mut rng = Rng::new(6);
        let x = fm_from(2, 2, 2, 2, (0..16).map(|_| rng.normal()).collect());
        let dy = fm_from(2, 4, 4, 4, (0..128).map(|_| rng.normal()).collect());
        let mut up = Fm::zeros(2, 4, 4, 4);
        upsample2_forward(&x, &mut up);
        let lhs: f64 = up.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let mut dx = Fm::zeros(2, 2, 2, 2);
        upsample2_backward(&dy, &mut dx);
        let rhs: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = Rng::new(7);
        let x = fm_from(3, 2, 2, 2, (0..24).map(|_| rng.normal()).collect());
        let mut y = Fm::zeros(3, 2, 2, 2);
        let mask = dropout3d_forward(&x, 0.0, &mut Rng::new(1), &mut y);
        assert!(mask.iter().all(|&k| k));
        assert_eq!(x.data, y.data);
    }
}
