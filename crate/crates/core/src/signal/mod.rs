//! Impulse responses, Toeplitz convolution matrices and magnitude spectra.
//!
//! Every transfer function in the toolkit (source to microphone, source to
//! eardrum, receiver to eardrum, device processing, equalizer) is a finite
//! real impulse response. Products of transfer functions are full linear
//! convolutions; nothing is truncated implicitly.

mod io;

pub use io::{load_impulse_response, read_csv, read_wav, write_csv};

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default transform length (about 3.9 Hz resolution at 16 kHz).
pub const DEFAULT_N_FFT: usize = 4096;

/// Floor applied to magnitude bins whose log would be undefined.
pub const DB_FLOOR: f64 = -200.0;

/// A finite real FIR representation of a transfer function.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse<T> {
    samples: Vec<T>,
    sample_rate_hz: u32,
}

impl<T: Real> ImpulseResponse<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("impulse response must have at least one sample"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("impulse response".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Unit impulse at index 0.
    pub fn delta(sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![T::one()],
            sample_rate_hz,
        }
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![T::zero(); len], sample_rate_hz)
    }

    pub fn from_f64(samples: &[f64], sample_rate_hz: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&v| T::of(v)).collect(), sample_rate_hz)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_all_zero(&self) -> bool {
        self.samples.iter().all(|s| *s == T::zero())
    }

    pub fn energy(&self) -> T {
        self.samples.iter().fold(T::zero(), |acc, &s| acc + s * s)
    }

    pub fn scaled(&self, gain: T) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Zero-extends the tail to `len` samples (no-op when already longer).
    pub fn zero_extended(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        if samples.len() < len {
            samples.resize(len, T::zero());
        }
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.as_f64()).collect()
    }

    pub(crate) fn check_rate(&self, other: &Self) -> Result<()> {
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(Error::RateMismatch {
                left: self.sample_rate_hz,
                right: other.sample_rate_hz,
            });
        }
        Ok(())
    }
}

/// Full linear convolution of two sample slices.
pub fn convolve_slices<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

pub fn convolve<T: Real>(a: &ImpulseResponse<T>, b: &ImpulseResponse<T>) -> Result<ImpulseResponse<T>> {
    a.check_rate(b)?;
    Ok(ImpulseResponse {
        samples: convolve_slices(&a.samples, &b.samples),
        sample_rate_hz: a.sample_rate_hz,
    })
}

/// Convolves a chain of responses left to right.
pub fn convolve_all<T: Real>(chain: &[&ImpulseResponse<T>]) -> Result<ImpulseResponse<T>> {
    let (first, rest) = chain
        .split_first()
        .ok_or_else(|| Error::invalid("empty convolution chain"))?;
    rest.iter().try_fold((*first).clone(), |acc, h| convolve(&acc, h))
}

pub fn zero_pad_leading<T: Real>(h: &ImpulseResponse<T>, n: usize) -> ImpulseResponse<T> {
    let mut samples = vec![T::zero(); n];
    samples.extend_from_slice(&h.samples);
    ImpulseResponse {
        samples,
        sample_rate_hz: h.sample_rate_hz,
    }
}

/// Pure delay `q^{-d}` realized as an impulse of the given length.
pub fn unit_delay<T: Real>(d: usize, length: usize, sample_rate_hz: u32) -> Result<ImpulseResponse<T>> {
    if d >= length {
        return Err(Error::invalid(format!("delay {d} does not fit in length {length}")));
    }
    let mut samples = vec![T::zero(); length];
    samples[d] = T::one();
    ImpulseResponse::new(samples, sample_rate_hz)
}

/// Adds two sequences after zero-extending both to the longer length.
pub fn add_aligned<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let x = a.get(i).copied().unwrap_or_else(T::zero);
            let y = b.get(i).copied().unwrap_or_else(T::zero);
            x + y
        })
        .collect()
}

/// Toeplitz matrix realizing full convolution with a fixed tap vector:
/// `entry(i, j) = taps[i - j]` for `0 <= i - j < taps.len()`, else 0.
///
/// The matrix is never materialized by the solvers; its Gram matrix and
/// transpose products are computed from correlations of the taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionMatrix<T> {
    taps: Vec<T>,
    cols: usize,
}

impl<T: Real> ConvolutionMatrix<T> {
    pub fn new(taps: Vec<T>, cols: usize) -> Result<Self> {
        if cols == 0 {
            return Err(Error::invalid("convolution matrix needs at least one column"));
        }
        if taps.is_empty() {
            return Err(Error::invalid("convolution matrix needs at least one tap"));
        }
        Ok(Self { taps, cols })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(vec![T::one()], n)
    }

    pub fn rows(&self) -> usize {
        self.taps.len() + self.cols - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        if i >= j && i - j < self.taps.len() && j < self.cols {
            self.taps[i - j]
        } else {
            T::zero()
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.rows(), self.cols, |i, j| self.entry(i, j))
    }

    /// `M x`, equal to the full convolution of the taps with `x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "vector length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok(convolve_slices(&self.taps, x))
    }

    /// `M^T y`; `y` may be shorter or longer than the row count. Missing
    /// rows are treated as zero and rows past the matrix are ignored.
    pub fn transpose_apply(&self, y: &[T]) -> Vec<T> {
        (0..self.cols)
            .map(|j| {
                self.taps
                    .iter()
                    .zip(y.iter().skip(j))
                    .fold(T::zero(), |acc, (&h, &v)| acc + h * v)
            })
            .collect()
    }

    /// `M^T M`, a symmetric Toeplitz matrix of tap autocorrelations.
    pub fn gram(&self) -> DMatrix<T> {
        let n = self.cols;
        let lags: Vec<T> = (0..n)
            .map(|lag| {
                if lag >= self.taps.len() {
                    T::zero()
                } else {
                    self.taps[..self.taps.len() - lag]
                        .iter()
                        .zip(&self.taps[lag..])
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                }
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| lags[i.abs_diff(j)])
    }
}

pub fn convolution_matrix<T: Real>(h: &ImpulseResponse<T>, n_cols: usize) -> Result<ConvolutionMatrix<T>> {
    ConvolutionMatrix::new(h.samples.clone(), n_cols)
}

/// Magnitude response in dB on the non-negative frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeResponse {
    pub frequencies_hz: Vec<f64>,
    pub magnitude_db: Vec<f64>,
    pub n_fft: usize,
    pub sample_rate_hz: u32,
}

impl MagnitudeResponse {
    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.n_fft == other.n_fft
            && self.sample_rate_hz == other.sample_rate_hz
            && self.frequencies_hz == other.frequencies_hz
    }

    /// Adds a constant dB offset (mostly useful in tests).
    pub fn offset_db(&self, db: f64) -> Self {
        Self {
            magnitude_db: self.magnitude_db.iter().map(|v| v + db).collect(),
            ..self.clone()
        }
    }
}

pub fn magnitude_response<T: Real>(h: &ImpulseResponse<T>, n_fft: usize) -> Result<MagnitudeResponse> {
    if n_fft == 0 || n_fft < h.len() {
        return Err(Error::invalid(format!(
            "n_fft {n_fft} shorter than impulse response length {}",
            h.len()
        )));
    }
    let mut buf: Vec<Complex<f64>> = h
        .samples
        .iter()
        .map(|s| Complex::new(s.as_f64(), 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);

    let fs = h.sample_rate_hz as f64;
    let n_bins = n_fft / 2 + 1;
    let frequencies_hz = (0..n_bins).map(|k| k as f64 * fs / n_fft as f64).collect();
    let magnitude_db = buf[..n_bins]
        .iter()
        .map(|c| {
            let mag = c.norm();
            if mag == 0.0 {
                DB_FLOOR
            } else {
                (20.0 * mag.log10()).max(DB_FLOOR)
            }
        })
        .collect();
    Ok(MagnitudeResponse {
        frequencies_hz,
        magnitude_db,
        n_fft,
        sample_rate_hz: h.sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: u32 = 16_000;

    fn ir(v: &[f64]) -> ImpulseResponse<f64> {
        ImpulseResponse::from_f64(v, FS).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    // Brute-force double loop kept separate from `convolve_slices`.
    fn naive_conv(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = a.len() + b.len() - 1;
        (0..n)
            .map(|k| {
                let mut s = 0.0;
                for i in 0..a.len() {
                    for j in 0..b.len() {
                        if i + j == k {
                            s += a[i] * b[j];
                        }
                    }
                }
                s
            })
            .collect()
    }

    #[test]
    fn rejects_invalid_samples() {
        assert!(ImpulseResponse::<f64>::new(vec![], FS).is_err());
        assert!(ImpulseResponse::new(vec![1.0, f64::NAN], FS).is_err());
        assert!(ImpulseResponse::new(vec![1.0], 0).is_err());
    }

    #[test]
    fn delta_is_identity() {
        let h = ir(&[0.3, -0.2, 0.9]);
        let y = convolve(&ImpulseResponse::delta(FS), &h).unwrap();
        assert_eq!(y, h);
    }

    #[test]
    fn delays_compose() {
        let a = unit_delay::<f64>(3, 4, FS).unwrap();
        let b = unit_delay::<f64>(5, 6, FS).unwrap();
        let c = convolve(&a, &b).unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(c, unit_delay(8, 9, FS).unwrap());
    }

    #[test]
    fn convolve_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_vec(&mut rng, 7);
        let b = random_vec(&mut rng, 5);
        let got = convolve(&ir(&a), &ir(&b)).unwrap();
        let want = naive_conv(&a, &b);
        assert_eq!(got.len(), 11);
        for (g, w) in got.samples().iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-14);
        }
    }

    #[test]
    fn convolve_rejects_rate_mismatch() {
        let a = ImpulseResponse::<f64>::delta(16_000);
        let b = ImpulseResponse::<f64>::delta(48_000);
        assert!(matches!(convolve(&a, &b), Err(Error::RateMismatch { .. })));
    }

    #[test]
    fn convolution_matrix_of_delta_is_identity() {
        let m = convolution_matrix(&ImpulseResponse::<f64>::delta(FS), 4).unwrap();
        assert_eq!(m.rows(), 4);
        assert_eq!(m.to_dense(), DMatrix::identity(4, 4));
    }

    #[test]
    fn convolution_matrix_hand_checked() {
        let m = convolution_matrix(&ir(&[1.0, 2.0]), 2).unwrap();
        let want = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 0.0, 2.0]);
        assert_eq!(m.to_dense(), want);
        assert!(convolution_matrix(&ir(&[1.0]), 0).is_err());
    }

    #[test]
    fn gram_and_transpose_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_vec(&mut rng, 9);
        let m = ConvolutionMatrix::new(h, 6).unwrap();
        let dense = m.to_dense();
        let gram = dense.transpose() * &dense;
        assert!((m.gram() - gram).amax() < 1e-12);

        let y = random_vec(&mut rng, m.rows() + 3);
        let yv = nalgebra::DVector::from_column_slice(&y[..m.rows()]);
        let want = dense.transpose() * yv;
        for (g, w) in m.transpose_apply(&y).iter().zip(want.iter()) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_pad_cases() {
        let h = ir(&[1.0, -1.0]);
        assert_eq!(zero_pad_leading(&h, 0), h);
        assert_eq!(zero_pad_leading(&h, 2).samples(), &[0.0, 0.0, 1.0, -1.0]);
        let p = zero_pad_leading(&h, 32);
        assert!(p.samples()[..32].iter().all(|&s| s == 0.0));
        assert_eq!(p.len(), 34);
    }

    #[test]
    fn unit_delay_cases() {
        assert_eq!(unit_delay::<f64>(0, 1, FS).unwrap(), ImpulseResponse::delta(FS));
        let d = unit_delay::<f64>(96, 97, FS).unwrap();
        assert_eq!(d.samples()[96], 1.0);
        assert_eq!(d.energy(), 1.0);
        assert!(unit_delay::<f64>(4, 4, FS).is_err());

        let h = ir(&[0.5, 0.25]);
        let shifted = convolve(&unit_delay(3, 4, FS).unwrap(), &h).unwrap();
        assert_eq!(shifted.samples(), &[0.0, 0.0, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn magnitude_of_delta_and_gain() {
        let m = magnitude_response(&ImpulseResponse::<f64>::delta(FS), 64).unwrap();
        assert_eq!(m.len(), 33);
        assert_eq!(m.frequencies_hz[32], 8000.0);
        assert!(m.magnitude_db.iter().all(|v| v.abs() < 1e-12));

        let half = magnitude_response(&ir(&[0.5]), 64).unwrap();
        for v in &half.magnitude_db {
            assert_abs_diff_eq!(*v, -6.020599913279624, epsilon = 1e-12);
        }
        assert!(magnitude_response(&ir(&[1.0, 2.0, 3.0]), 2).is_err());
    }

    #[test]
    fn magnitude_of_comb_matches_closed_form() {
        let mut h = vec![0.0; 97];
        h[0] = 1.0;
        h[96] = 1.0;
        let m = magnitude_response(&ir(&h), DEFAULT_N_FFT).unwrap();
        for (f, db) in m.frequencies_hz.iter().zip(&m.magnitude_db) {
            let w = 2.0 * std::f64::consts::PI * f / FS as f64;
            let mag = (2.0 * (48.0 * w).cos()).abs();
            let want = (20.0 * mag.log10()).max(DB_FLOOR);
            assert_abs_diff_eq!(*db, want, epsilon = 1e-8);
        }
        let peak = m.magnitude_db.iter().cloned().fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(peak, 20.0 * 2f64.log10(), epsilon = 1e-9);
    }

    #[test]
    fn exact_zero_bins_hit_floor() {
        let m = magnitude_response(&ir(&[1.0, 1.0]), 2).unwrap();
        assert_eq!(m.magnitude_db[1], DB_FLOOR);
    }

    #[test]
    fn f32_path_works() {
        let h = ImpulseResponse::<f32>::from_f64(&[1.0, 2.0], FS).unwrap();
        let y = convolve(&h, &h).unwrap();
        assert_eq!(y.samples(), &[1.0f32, 4.0, 4.0]);
    }

    fn vec_strategy(max: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 1..=max)
    }

    fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = a.iter().chain(b).fold(1e-300f64, |m, v| m.max(v.abs()));
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
    }

    proptest! {
        #[test]
        fn convolution_commutes_and_associates(
            a in vec_strategy(64), b in vec_strategy(64), c in vec_strategy(64)
        ) {
            let ab = convolve_slices(&a, &b);
            prop_assert!(rel_close(&ab, &convolve_slices(&b, &a), 1e-12));
            let left = convolve_slices(&ab, &c);
            let right = convolve_slices(&a, &convolve_slices(&b, &c));
            prop_assert!(rel_close(&left, &right, 1e-12));
        }

        #[test]
        fn matrix_product_equals_convolution(h in vec_strategy(32), x in vec_strategy(32)) {
            let m = ConvolutionMatrix::new(h.clone(), x.len()).unwrap();
            let dense = m.to_dense() * nalgebra::DVector::from_column_slice(&x);
            let conv = convolve_slices(&h, &x);
            prop_assert!(rel_close(dense.as_slice(), &conv, 1e-12));
            prop_assert!(rel_close(&m.apply(&x).unwrap(), &conv, 1e-12));
            // Toeplitz structure
            let d = m.to_dense();
            for i in 0..d.nrows() - 1 {
                for j in 0..d.ncols() - 1 {
                    prop_assert_eq!(d[(i, j)], d[(i + 1, j + 1)]);
                }
            }
        }

        #[test]
        fn leading_pad_keeps_magnitude(h in vec_strategy(48), n in 0usize..64) {
            let h = ir(&h);
            let a = magnitude_response(&h, 256).unwrap();
            let b = magnitude_response(&zero_pad_leading(&h, n), 256).unwrap();
            for (x, y) in a.magnitude_db.iter().zip(&b.magnitude_db) {
                if *x > -150.0 {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn zero_delay_is_identity(h in vec_strategy(32), extra in 0usize..4) {
            let h = ir(&h);
            let d = unit_delay::<f64>(0, 1 + extra, FS).unwrap();
            let y = convolve(&d, &h).unwrap();
            prop_assert_eq!(&y.samples()[..h.len()], h.samples());
            prop_assert!(y.samples()[h.len()..].iter().all(|&v| v == 0.0));
        }
    }
}
