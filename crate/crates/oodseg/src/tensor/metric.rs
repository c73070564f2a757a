//! Vector distances and the shared accumulation kernels.

use super::TensorError;

/// Dot product with eight independent accumulators. The fixed summation
/// order keeps results deterministic while still vectorizing.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (va, vb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += va[k] * vb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ch = a.chunks_exact(8);
    let rem = ch.remainder();
    for v in ch {
        for k in 0..8 {
            acc[k] += v[k];
        }
    }
    let mut tail = 0.0;
    for x in rem {
        tail += x;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

fn check_lengths(op: &'static str, u: &[f64], v: &[f64]) -> Result<(), TensorError> {
    if u.is_empty() {
        return Err(TensorError::Empty { op });
    }
    if u.len() != v.len() {
        return Err(TensorError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Euclidean (L2) distance.
pub fn euclidean(u: &[f64], v: &[f64]) -> Result<f64, TensorError> {
    check_lengths("euclidean", u, v)?;
    let mut acc = 0.0;
    for (x, y) in u.iter().zip(v) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Cosine dissimilarity `1 - u.v / (|u||v|)`, in [0, 2].
///
/// A zero-norm argument is an error; the caller decides the fallback.
pub fn cosine_dissimilarity(u: &[f64], v: &[f64]) -> Result<f64, TensorError> {
    check_lengths("cosine_dissimilarity", u, v)?;
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(TensorError::ZeroVector {
            op: "cosine_dissimilarity",
        });
    }
    Ok(1.0 - dot(u, v) / (nu * nv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng::Rng;

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(euclidean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn euclidean_matches_naive_loop() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let n = 1 + rng.below(64);
            let u: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            // naive oracle
            let mut ss = 0.0;
            for i in 0..n {
                ss += (u[i] - v[i]) * (u[i] - v[i]);
            }
            let expect = ss.sqrt();
            let got = euclidean(&u, &v).unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn cosine_examples() {
        let u = [1.0, 2.0, -1.0];
        assert!(cosine_dissimilarity(&u, &u).unwrap().abs() < 1e-12);
        let a = [1.0, 0.0];
        let b = [0.0, 3.0];
        assert!((cosine_dissimilarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine_dissimilarity(&u, &neg).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_vector_is_an_error() {
        assert!(cosine_dissimilarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }
}
