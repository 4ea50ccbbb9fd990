//! In-place radix-2 FFT.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

use crate::C64;

/// Forward transform `X_j = sum_k x_k exp(-2 pi i j k / n)` in place.
///
/// # Panics
///
/// If the length is not a power of two.
pub fn fft(x: &mut [C64]) {
    let n = x.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            x.swap(i, j);
        }
    }
    // twiddles from direct evaluation keep the error at O(eps log n)
    let twiddles: Vec<C64> = (0..n / 2)
        .map(|k| {
            let (s, c) = Float::sin_cos(-2.0 * PI * k as f64 / n as f64);
            C64::new(c, s)
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = x[start + k];
                let b = x[start + k + half] * w;
                x[start + k] = a + b;
                x[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft(x: &[C64]) -> Vec<C64> {
        let n = x.len();
        (0..n)
            .map(|j| {
                x.iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let ph = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                        v * C64::new(ph.cos(), ph.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft() {
        for n in [1usize, 2, 4, 8, 64, 256] {
            let x: Vec<C64> = (0..n)
                .map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 1.1).cos() - 0.2))
                .collect();
            let mut y = x.clone();
            fft(&mut y);
            for (a, b) in y.iter().zip(dft(&x)) {
                assert!((a - b).norm() < 1e-11 * n as f64, "n = {n}");
            }
        }
    }

    #[test]
    #[should_panic]
    fn rejects_odd_length() {
        fft(&mut [C64::new(1.0, 0.0); 3]);
    }
}
