use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Precomputed twiddles and bit-reversal permutation for one power-of-two size.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Usage(format!("FFT length {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        // Each twiddle is evaluated directly; recurrences drift at larger n.
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(FftPlan { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, `X[b] = sum_n x[n] e^{-2 pi i b n / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n, "buffer length must match the plan");
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.n {
            let half = size / 2;
            let stride = self.n / size;
            for start in (0..self.n).step_by(size) {
                for k in 0..half {
                    let t = self.twiddles[k * stride] * buf[start + k + half];
                    let u = buf[start + k];
                    buf[start + k] = u + t;
                    buf[start + k + half] = u - t;
                }
            }
            size *= 2;
        }
    }

    /// One-sided spectrum (`N/2 + 1` bins) of a real frame.
    pub fn real_forward(&self, frame: &[f64], scratch: &mut Vec<Complex64>) -> Result<Vec<Complex64>> {
        if frame.len() != self.n {
            return Err(Error::Usage(format!(
                "frame of length {} given to a size-{} FFT",
                frame.len(),
                self.n
            )));
        }
        scratch.clear();
        scratch.extend(frame.iter().map(|&v| Complex64::new(v, 0.0)));
        self.forward(scratch);
        Ok(scratch[..self.n / 2 + 1].to_vec())
    }
}

/// One-sided DFT of a real frame whose length is a power of two.
pub fn fft_real(frame: &[f64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(frame.len())?;
    plan.real_forward(frame, &mut Vec::with_capacity(frame.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_signal() {
        let bins = fft_real(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(bins.len(), 3);
        assert!((bins[0] - Complex64::new(4.0, 0.0)).norm() < 1e-15);
        assert!(bins[1].norm() < 1e-15 && bins[2].norm() < 1e-15);
    }

    #[test]
    fn pure_cosine_lands_in_one_bin() {
        let n = 64;
        let k = 4;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * (i * k) as f64 / n as f64).cos()).collect();
        let bins = fft_real(&x).unwrap();
        for (b, v) in bins.iter().enumerate() {
            if b == k {
                assert!((v.norm() - 32.0).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9, "bin {b}: {}", v.norm());
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(fft_real(&[0.0; 6]), Err(Error::Usage(_))));
        assert!(fft_real(&[]).is_err());
        assert_eq!(fft_real(&[2.5]).unwrap(), vec![Complex64::new(2.5, 0.0)]);
    }
}
