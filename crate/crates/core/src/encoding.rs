//! Sinusoidal positional encoding.
//!
//! Layout for an `n`-component input and `L` frequency bands:
//! `[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]`,
//! where each block holds all `n` components. Output length is `n * (1 + 2L)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::real::Real;

pub fn encoded_len(n: usize, freqs: usize) -> usize {
    n * (1 + 2 * freqs)
}

pub fn positional_encode<T: Real>(p: &[T], freqs: usize) -> Result<Vec<T>> {
    if let Some(bad) = p.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "positional encoding input component {bad} is not finite"
        )));
    }
    let mut out = vec![T::zero(); encoded_len(p.len(), freqs)];
    encode_into(p, freqs, &mut out);
    Ok(out)
}

/// Unchecked single-point encoding into a preallocated slice.
#[inline]
pub fn encode_into<T: Real>(p: &[T], freqs: usize, out: &mut [T]) {
    let n = p.len();
    debug_assert_eq!(out.len(), encoded_len(n, freqs));
    out[..n].copy_from_slice(p);
    let mut scale = T::c(PI);
    for band in 0..freqs {
        let base = n * (1 + 2 * band);
        for j in 0..n {
            let (s, c) = (p[j] * scale).sin_cos();
            out[base + j] = s;
            out[base + n + j] = c;
        }
        scale = scale + scale;
    }
}

/// Encodes `count` points stored row-major with `dim` components each.
pub fn encode_batch<T: Real>(points: &[T], dim: usize, freqs: usize) -> Vec<T> {
    let width = encoded_len(dim, freqs);
    let count = points.len() / dim;
    let mut out = vec![T::zero(); count * width];
    for (p, o) in points.chunks_exact(dim).zip(out.chunks_exact_mut(width)) {
        encode_into(p, freqs, o);
    }
    out
}

/// Chain rule through the encoding: accumulates `d/dp` given `d/d(encoding)`.
pub fn encode_backward<T: Real>(p: &[T], freqs: usize, dout: &[T], dp: &mut [T]) {
    let n = p.len();
    for j in 0..n {
        dp[j] += dout[j];
    }
    let mut scale = T::c(PI);
    for band in 0..freqs {
        let base = n * (1 + 2 * band);
        for j in 0..n {
            let (s, c) = (p[j] * scale).sin_cos();
            dp[j] += scale * (c * dout[base + j] - s * dout[base + n + j]);
        }
        scale = scale + scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar reference written directly from the formula, one entry at a time.
    fn oracle(p: &[f64], freqs: usize) -> Vec<f64> {
        let mut out = p.to_vec();
        for band in 0..freqs {
            let f = 2f64.powi(band as i32) * std::f64::consts::PI;
            for &v in p {
                out.push((f * v).sin());
            }
            for &v in p {
                out.push((f * v).cos());
            }
        }
        out
    }

    #[test]
    fn origin_encodes_to_zeros_and_ones() {
        let e = positional_encode(&[0.0f64; 3], 10).unwrap();
        assert_eq!(e.len(), 63);
        assert!(e[..3].iter().all(|v| *v == 0.0));
        for band in 0..10 {
            let base = 3 * (1 + 2 * band);
            assert!(e[base..base + 3].iter().all(|v| *v == 0.0));
            assert!(e[base + 3..base + 6].iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn quarter_period_single_band() {
        let e = positional_encode(&[0.5f64], 1).unwrap();
        assert_eq!(e[0], 0.5);
        assert!((e[1] - 1.0).abs() < 1e-15);
        assert!(e[2].abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_oracle() {
        let p = [0.37, -0.2, 0.11];
        let e = positional_encode(&p, 10).unwrap();
        let o = oracle(&p, 10);
        assert_eq!(e.len(), o.len());
        for (a, b) in e.iter().zip(&o) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            positional_encode(&[0.1f64, f64::NAN], 2),
            Err(Error::InvalidInput(_))
        ));
        assert!(positional_encode(&[f64::INFINITY], 0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = [0.31f64, -0.42, 0.07];
        let freqs = 4;
        let w: Vec<f64> = (0..encoded_len(3, freqs)).map(|i| (i as f64 * 0.3).sin()).collect();
        let f = |q: &[f64]| -> f64 {
            positional_encode(q, freqs).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let mut dp = [0.0; 3];
        encode_backward(&p, freqs, &w, &mut dp);
        for j in 0..3 {
            let h = 1e-6;
            let mut a = p;
            a[j] += h;
            let mut b = p;
            b[j] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - dp[j]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn length_and_odd_symmetry(v in proptest::collection::vec(-3.0f64..3.0, 1..6), freqs in 0usize..8) {
            let e = positional_encode(&v, freqs).unwrap();
            prop_assert_eq!(e.len(), v.len() * (1 + 2 * freqs));
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let en = positional_encode(&neg, freqs).unwrap();
            let n = v.len();
            for j in 0..n {
                prop_assert_eq!(en[j], -e[j]);
            }
            for band in 0..freqs {
                let base = n * (1 + 2 * band);
                for j in 0..n {
                    prop_assert_eq!(en[base + j], -e[base + j]);
                    prop_assert_eq!(en[base + n + j], e[base + n + j]);
                }
            }
        }
    }
}
