//! Radix-2 three-dimensional FFT with unitary normalization.
//!
//! Extents must be powers of two; phantom sizes are chosen accordingly.
//! Both directions scale by 1/sqrt(n) per axis, so a forward/inverse
//! round trip is the identity and Parseval holds bin for bin.

use super::{ComplexTensor, Tensor, TensorError};

fn check_pow2(extent: usize) -> Result<(), TensorError> {
    if extent == 0 || !extent.is_power_of_two() {
        return Err(TensorError::NotPowerOfTwo { extent });
    }
    Ok(())
}

/// In-place iterative radix-2 transform of one line.
fn fft1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n == 1 {
        return;
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
}

fn transform_axis(c: &mut ComplexTensor, axis: usize, inverse: bool) {
    let shape = [c.shape()[0], c.shape()[1], c.shape()[2]];
    let n = shape[axis];
    let scale = 1.0 / (n as f64).sqrt();
    let mut line_re = vec![0.0f64; n];
    let mut line_im = vec![0.0f64; n];
    // iterate over the two fixed axes
    let (fix_a, fix_b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let stride = |i: usize, j: usize, k: usize| (i * shape[1] + j) * shape[2] + k;
    for a in 0..shape[fix_a] {
        for b in 0..shape[fix_b] {
            for t in 0..n {
                let idx = match axis {
                    0 => stride(t, a, b),
                    1 => stride(a, t, b),
                    _ => stride(a, b, t),
                };
                line_re[t] = c.re[idx];
                line_im[t] = c.im[idx];
            }
            fft1d(&mut line_re, &mut line_im, inverse);
            for t in 0..n {
                let idx = match axis {
                    0 => stride(t, a, b),
                    1 => stride(a, t, b),
                    _ => stride(a, b, t),
                };
                c.re[idx] = line_re[t] * scale;
                c.im[idx] = line_im[t] * scale;
            }
        }
    }
}

/// Forward unitary 3D DFT of a real rank-3 volume.
pub fn fft3(v: &Tensor) -> Result<ComplexTensor, TensorError> {
    if v.rank() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: v.rank(),
        });
    }
    for &e in v.shape() {
        check_pow2(e)?;
    }
    let mut c = ComplexTensor::zeros(v.shape());
    for i in 0..v.len() {
        c.re[i] = v.value(i);
    }
    for axis in 0..3 {
        transform_axis(&mut c, axis, false);
    }
    Ok(c)
}

/// Inverse unitary 3D DFT, full complex output.
pub fn ifft3_complex(c: &ComplexTensor) -> Result<ComplexTensor, TensorError> {
    if c.shape().len() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: c.shape().len(),
        });
    }
    for &e in c.shape() {
        check_pow2(e)?;
    }
    let mut out = c.clone();
    for axis in 0..3 {
        transform_axis(&mut out, axis, true);
    }
    Ok(out)
}

/// Inverse unitary 3D DFT, real part as an f64 tensor.
pub fn ifft3(c: &ComplexTensor) -> Result<Tensor, TensorError> {
    let full = ifft3_complex(c)?;
    let shape = full.shape().to_vec();
    Tensor::from_f64(&shape, full.re)
}
