//! Fast Fourier transform for arbitrary lengths.
//!
//! Powers of two use an iterative radix-2 Cooley-Tukey transform. Every other
//! length goes through Bluestein's chirp-z algorithm on top of a radix-2
//! transform of size `>= 2n - 1`. Both directions are unnormalized.

use num_complex::Complex;

use crate::scalar::Scalar;

#[derive(Clone, Debug)]
struct Radix2<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
}

impl<T: Scalar> Radix2<T> {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::lit(angle.cos()), T::lit(angle.sin()))
            })
            .collect();
        Radix2 { n, twiddles }
    }

    fn forward(&self, buf: &mut [Complex<T>]) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    fn inverse(&self, buf: &mut [Complex<T>]) {
        for z in buf.iter_mut() {
            *z = z.conj();
        }
        self.forward(buf);
        for z in buf.iter_mut() {
            *z = z.conj();
        }
    }
}

#[derive(Clone, Debug)]
struct Bluestein<T> {
    n: usize,
    inner: Radix2<T>,
    /// `exp(-i*pi*k^2/n)` for `k < n`.
    chirp: Vec<Complex<T>>,
    /// Transform of the conjugate chirp laid out circularly in the inner size.
    kernel: Vec<Complex<T>>,
}

impl<T: Scalar> Bluestein<T> {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        let two_n = 2 * n as u64;
        let chirp: Vec<Complex<T>> = (0..n as u64)
            .map(|k| {
                // k^2 mod 2n keeps the angle small and exact
                let r = (k * k) % two_n;
                let angle = -std::f64::consts::PI * r as f64 / n as f64;
                Complex::new(T::lit(angle.cos()), T::lit(angle.sin()))
            })
            .collect();
        let mut kernel = vec![Complex::new(T::zero(), T::zero()); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            let c = chirp[k].conj();
            kernel[k] = c;
            kernel[m - k] = c;
        }
        inner.forward(&mut kernel);
        Bluestein {
            n,
            inner,
            chirp,
            kernel,
        }
    }

    fn forward(&self, buf: &mut [Complex<T>]) {
        let m = self.inner.n;
        let mut work = vec![Complex::new(T::zero(), T::zero()); m];
        for k in 0..self.n {
            work[k] = buf[k] * self.chirp[k];
        }
        self.inner.forward(&mut work);
        for (w, h) in work.iter_mut().zip(&self.kernel) {
            *w = *w * *h;
        }
        self.inner.inverse(&mut work);
        let scale = T::one() / T::from_usize_lossy(m);
        for k in 0..self.n {
            buf[k] = work[k] * self.chirp[k] * scale;
        }
    }
}

#[derive(Clone, Debug)]
enum Kernel<T> {
    Radix2(Radix2<T>),
    Bluestein(Bluestein<T>),
}

/// A precomputed transform for one length.
#[derive(Clone, Debug)]
pub struct FftPlan<T> {
    n: usize,
    kernel: Kernel<T>,
}

impl<T: Scalar> FftPlan<T> {
    pub fn new(n: usize) -> Self {
        let kernel = if n.is_power_of_two() || n == 0 {
            Kernel::Radix2(Radix2::new(n.max(1)))
        } else {
            Kernel::Bluestein(Bluestein::new(n))
        };
        FftPlan { n, kernel }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In place `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        assert_eq!(buf.len(), self.n, "buffer length does not match plan");
        if self.n == 0 {
            return;
        }
        match &self.kernel {
            Kernel::Radix2(r) => r.forward(buf),
            Kernel::Bluestein(b) => b.forward(buf),
        }
    }

    /// In place unnormalized inverse (`+` exponent, no `1/N`).
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        for z in buf.iter_mut() {
            *z = z.conj();
        }
        self.forward(buf);
        for z in buf.iter_mut() {
            *z = z.conj();
        }
    }
}
