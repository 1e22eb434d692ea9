//! Discrete Fourier analysis of flow signals: forward/inverse transforms,
//! brick-wall frequency ablation, and the magnitude spectrum used as an
//! alternative network input.
//!
//! Conventions: the forward transform is unnormalized,
//! `X[k] = sum_n x[n] exp(-2 pi i k n / N)`; the inverse carries `1/N`. Bin
//! `k` sits at `k * fs / N` Hz for `k <= N/2` and at `(k - N) * fs / N` Hz
//! otherwise.

mod fft;

pub use fft::FftPlan;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::SAMPLE_RATE_HZ;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("inverse transform left imaginary residue {residue:e} (limit {limit:e}); the spectrum is not conjugate-symmetric")]
    ImaginaryResidueExceeded { residue: f64, limit: f64 },
    #[error("invalid ablation band: {0}")]
    InvalidBand(String),
}

/// Complex two-sided DFT of a real instance, in standard DFT order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum<T> {
    pub bins: Vec<Complex<T>>,
    pub sample_rate: f64,
}

impl<T: Scalar> Spectrum<T> {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Hz per bin: `sample_rate / N`.
    pub fn bin_resolution(&self) -> f64 {
        self.sample_rate / self.bins.len() as f64
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        bin_frequency(k, self.bins.len(), self.sample_rate)
    }

    pub fn max_magnitude(&self) -> T {
        self.bins.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    pub fn energy(&self) -> T {
        self.bins.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Signed frequency of bin `k` in an `n`-point transform.
pub fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let res = sample_rate / n as f64;
    if k <= n / 2 {
        k as f64 * res
    } else {
        -((n - k) as f64) * res
    }
}

/// Absolute frequency of bin `k`; exactly equal for `k` and `n - k`.
fn abs_bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    k.min(n - k) as f64 * sample_rate / n as f64
}

pub fn dft<T: Scalar>(values: &[T]) -> Spectrum<T> {
    dft_at(values, SAMPLE_RATE_HZ)
}

pub fn dft_at<T: Scalar>(values: &[T], sample_rate: f64) -> Spectrum<T> {
    let mut bins: Vec<Complex<T>> = values.iter().map(|&x| Complex::new(x, T::zero())).collect();
    FftPlan::new(bins.len()).forward(&mut bins);
    Spectrum { bins, sample_rate }
}

/// Inverse transform with `1/N` normalization. Returns the real part and the
/// largest absolute imaginary component that was discarded.
pub fn idft_with_residue<T: Scalar>(spectrum: &Spectrum<T>) -> (Vec<T>, T) {
    let n = spectrum.bins.len();
    let mut buf = spectrum.bins.clone();
    FftPlan::new(n).inverse(&mut buf);
    let scale = T::one() / T::from_usize_lossy(n.max(1));
    let mut residue = T::zero();
    let values = buf
        .iter()
        .map(|z| {
            residue = residue.max((z.im * scale).abs());
            z.re * scale
        })
        .collect();
    (values, residue)
}

/// Relative imaginary residue tolerated by [`idft`]: `1e-6`, widened for
/// single precision.
pub fn residue_tolerance<T: Scalar>() -> f64 {
    1e-6f64.max(100.0 * T::epsilon().to_f64_lossy())
}

/// Inverse transform returning real samples. Fails when the discarded
/// imaginary part exceeds `1e-6 * max |bin|`, which only happens when the
/// spectrum lost conjugate symmetry.
pub fn idft<T: Scalar>(spectrum: &Spectrum<T>) -> Result<Vec<T>, SpectralError> {
    idft_against(spectrum, spectrum.max_magnitude().to_f64_lossy())
}

/// Like [`idft`], but measures the residue against `reference_magnitude`
/// (e.g. the largest bin before filtering, so that a spectrum reduced to
/// rounding noise is not judged against its own noise floor).
pub fn idft_against<T: Scalar>(spectrum: &Spectrum<T>, reference_magnitude: f64) -> Result<Vec<T>, SpectralError> {
    let (values, residue) = idft_with_residue(spectrum);
    let limit = residue_tolerance::<T>() * reference_magnitude;
    let residue = residue.to_f64_lossy();
    if residue > limit {
        return Err(SpectralError::ImaginaryResidueExceeded { residue, limit });
    }
    Ok(values)
}

/// Passband for brick-wall ablation; a bin survives when its absolute
/// frequency lies in `[low_hz, high_hz]` (inclusive). DC survives iff
/// `keep_dc`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationBand {
    pub low_hz: f64,
    pub high_hz: f64,
    pub keep_dc: bool,
}

impl AblationBand {
    /// Band `[0, cutoff]` with DC kept.
    pub fn lowpass(cutoff_hz: f64) -> Self {
        AblationBand {
            low_hz: 0.0,
            high_hz: cutoff_hz,
            keep_dc: true,
        }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        let nyquist = SAMPLE_RATE_HZ / 2.0;
        if !(self.low_hz.is_finite() && self.high_hz.is_finite()) {
            return Err(SpectralError::InvalidBand("edges must be finite".into()));
        }
        if self.low_hz < 0.0 {
            return Err(SpectralError::InvalidBand(format!(
                "low edge {} Hz is negative",
                self.low_hz
            )));
        }
        if self.high_hz > nyquist {
            return Err(SpectralError::InvalidBand(format!(
                "high edge {} Hz exceeds {nyquist} Hz",
                self.high_hz
            )));
        }
        if self.low_hz > self.high_hz {
            return Err(SpectralError::InvalidBand(format!(
                "low edge {} Hz exceeds high edge {} Hz",
                self.low_hz, self.high_hz
            )));
        }
        Ok(())
    }

    /// Whether bin `k` of an `n`-point transform survives.
    pub fn keeps_bin(&self, k: usize, n: usize, sample_rate: f64) -> bool {
        if k == 0 {
            return self.keep_dc;
        }
        // absorb rounding in k * fs / n at exact band edges
        let slack = 1e-9 * sample_rate;
        let f = abs_bin_frequency(k, n, sample_rate);
        f >= self.low_hz - slack && f <= self.high_hz + slack
    }
}

/// Zeroes every bin outside the band (bins `k` and `N - k` together).
pub fn ablate_spectrum<T: Scalar>(spectrum: &mut Spectrum<T>, band: &AblationBand) {
    let n = spectrum.bins.len();
    let fs = spectrum.sample_rate;
    for k in 0..n {
        if !band.keeps_bin(k, n, fs) {
            spectrum.bins[k] = Complex::new(T::zero(), T::zero());
        }
    }
}

/// Brick-wall band filter of a 50 Hz signal of any length.
pub fn band_ablate<T: Scalar>(values: &[T], band: &AblationBand) -> Result<Vec<T>, SpectralError> {
    band.validate()?;
    let mut spectrum = dft(values);
    let reference = spectrum.max_magnitude().to_f64_lossy();
    ablate_spectrum(&mut spectrum, band);
    idft_against(&spectrum, reference)
}

/// Two-sided magnitude spectrum reordered so frequencies run from -fs/2 to
/// +fs/2 left to right, with DC at index `N / 2`. Length is preserved.
pub fn spectral_input<T: Scalar>(values: &[T]) -> Vec<T> {
    let spectrum = dft(values);
    let n = spectrum.len();
    let half = n / 2;
    (0..n).map(|j| spectrum.bins[(j + n - half) % n].norm()).collect()
}

/// Frequency (Hz) shown at each position of [`spectral_input`].
pub fn spectral_input_frequencies(n: usize, sample_rate: f64) -> Vec<f64> {
    let half = n / 2;
    (0..n)
        .map(|j| (j as f64 - half as f64) * sample_rate / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_is_dc_only() {
        let s = dft(&vec![1.0f64; 224]);
        assert!((s.bins[0].re - 224.0).abs() < 1e-9 && s.bins[0].im.abs() < 1e-9);
        assert!(s.bins[1..].iter().all(|z| z.norm() < 1e-9));
        assert!((s.bin_resolution() - 50.0 / 224.0).abs() < 1e-15);
    }

    #[test]
    fn single_tone() {
        let x: Vec<f64> = (0..224).map(|n| (2.0 * PI * 5.0 * n as f64 / 224.0).sin()).collect();
        let s = dft(&x);
        for (k, z) in s.bins.iter().enumerate() {
            if k == 5 || k == 219 {
                assert!((z.norm() - 112.0).abs() < 1e-9);
            } else {
                assert!(z.norm() < 1e-9, "bin {k} = {}", z.norm());
            }
        }
    }

    #[test]
    fn dc_only_inverse_is_constant() {
        let mut bins = vec![Complex::new(0.0f64, 0.0); 224];
        bins[0] = Complex::new(224.0, 0.0);
        let x = idft(&Spectrum {
            bins,
            sample_rate: 50.0,
        })
        .unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn asymmetric_spectrum_trips_residue_check() {
        let mut bins = vec![Complex::new(0.0, 0.0); 224];
        bins[3] = Complex::new(10.0, 0.0);
        let err = idft(&Spectrum {
            bins,
            sample_rate: 50.0,
        })
        .unwrap_err();
        assert!(matches!(err, SpectralError::ImaginaryResidueExceeded { .. }));
    }

    #[test]
    fn bin_frequencies() {
        assert_eq!(bin_frequency(0, 224, 50.0), 0.0);
        assert!((bin_frequency(112, 224, 50.0) - 25.0).abs() < 1e-12);
        assert!((bin_frequency(223, 224, 50.0) + 50.0 / 224.0).abs() < 1e-12);
    }

    #[test]
    fn full_band_is_identity() {
        let x: Vec<f64> = (0..224).map(|i| ((i * 7919) % 113) as f64 - 50.0).collect();
        let y = band_ablate(&x, &AblationBand::lowpass(25.0)).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9 * 50.0);
        }
    }

    #[test]
    fn tone_outside_passband_is_removed() {
        // 250 samples put 10 Hz exactly on bin 50
        let x: Vec<f64> = (0..250)
            .map(|n| 3.0 * (2.0 * PI * 10.0 * n as f64 / 50.0).sin())
            .collect();
        let y = band_ablate(&x, &AblationBand::lowpass(2.0)).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-6 * 3.0));
    }

    #[test]
    fn dc_survives_low_cutoff() {
        let x = vec![4.5f64; 224];
        let y = band_ablate(&x, &AblationBand::lowpass(0.5)).unwrap();
        assert!(y.iter().all(|v| (v - 4.5).abs() < 1e-9));
        let band = AblationBand {
            keep_dc: false,
            ..AblationBand::lowpass(0.5)
        };
        let y = band_ablate(&x, &band).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn band_edges_are_inclusive_and_exact() {
        // 15000-point series: 0.25 Hz is exactly bin 75
        let band = AblationBand::lowpass(0.25);
        assert!(band.keeps_bin(75, 15000, 50.0));
        assert!(band.keeps_bin(15000 - 75, 15000, 50.0));
        assert!(!band.keeps_bin(76, 15000, 50.0));
    }

    #[test]
    fn band_validation() {
        assert!(AblationBand::lowpass(25.0).validate().is_ok());
        assert!(AblationBand::lowpass(25.5).validate().is_err());
        let b = AblationBand {
            low_hz: 5.0,
            high_hz: 2.0,
            keep_dc: true,
        };
        assert!(b.validate().is_err());
        let b = AblationBand {
            low_hz: -1.0,
            high_hz: 2.0,
            keep_dc: true,
        };
        assert!(b.validate().is_err());
    }

    #[test]
    fn spectral_input_layout() {
        let s = spectral_input(&vec![1.0f64; 224]);
        assert!((s[112] - 224.0).abs() < 1e-9);
        assert!(s.iter().enumerate().all(|(j, v)| j == 112 || v.abs() < 1e-9));

        let x: Vec<f64> = (0..224).map(|n| (2.0 * PI * 5.0 * n as f64 / 224.0).sin()).collect();
        let s = spectral_input(&x);
        let freqs = spectral_input_frequencies(224, 50.0);
        assert!((s[117] - 112.0).abs() < 1e-9 && (s[107] - 112.0).abs() < 1e-9);
        assert!((freqs[117] - 5.0 * 50.0 / 224.0).abs() < 1e-12);
        assert!((freqs[107] + 5.0 * 50.0 / 224.0).abs() < 1e-12);
        assert_eq!(freqs[0], -25.0);
    }
}
