//! Dense real tensors, real FFT and convolution primitives.
//!
//! The FFT convention puts no normalization on the forward transform and a
//! factor of 1/n on the inverse, so `irfft(rfft(u), n) == u`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{GcError, Result};

/// Dense real tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GcError::invalid(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(GcError::numeric("tensor contains non-finite values"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Non-redundant half spectrum of a real signal.
#[derive(Debug, Clone)]
pub struct Spectrum {
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(data: Vec<Complex64>) -> Self {
        Spectrum { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }
}

/// Forward DFT of a real signal; returns the `floor(n/2)+1` non-redundant modes.
pub fn rfft(signal: &[f64]) -> Result<Spectrum> {
    let n = signal.len();
    if n == 0 {
        return Err(GcError::invalid("rfft of empty signal"));
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(n / 2 + 1);
    Ok(Spectrum::new(buf))
}

/// Inverse of [`rfft`], with 1/n normalization.
pub fn irfft(spec: &Spectrum, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(GcError::invalid("irfft target length 0"));
    }
    if spec.len() != n / 2 + 1 {
        return Err(GcError::invalid(format!(
            "spectrum has {} modes, length {} needs {}",
            spec.len(),
            n,
            n / 2 + 1
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    // Rebuild the full spectrum by conjugate symmetry. The DC (and Nyquist,
    // for even n) bins of a real signal are real; drop any imaginary part a
    // caller may have put there.
    buf[0] = Complex64::new(spec.data()[0].re, 0.0);
    for (m, &v) in spec.data().iter().enumerate().skip(1) {
        if n % 2 == 0 && m == n / 2 {
            buf[m] = Complex64::new(v.re, 0.0);
        } else {
            buf[m] = v;
            buf[n - m] = v.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.re / n as f64).collect())
}

/// Circular convolution via the FFT product identity.
pub fn circular_convolve(u: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if u.len() != k.len() {
        return Err(GcError::invalid(format!(
            "circular_convolve length mismatch: {} vs {}",
            u.len(),
            k.len()
        )));
    }
    let n = u.len();
    let mut uf = rfft(u)?;
    let kf = rfft(k)?;
    for (a, b) in uf.data_mut().iter_mut().zip(kf.data()) {
        *a *= *b;
    }
    irfft(&uf, n)
}

/// Causal convolution `y_t = sum_{i<=t} k_i u_{t-i}`, realized by zero-padding
/// both operands to 2n, circular convolving, and truncating.
pub fn causal_convolve(u: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if u.len() != k.len() {
        return Err(GcError::invalid(format!(
            "causal_convolve length mismatch: {} vs {}",
            u.len(),
            k.len()
        )));
    }
    let n = u.len();
    let mut up = u.to_vec();
    let mut kp = k.to_vec();
    up.resize(2 * n, 0.0);
    kp.resize(2 * n, 0.0);
    let mut y = circular_convolve(&up, &kp)?;
    y.truncate(n);
    Ok(y)
}

/// Central finite differences, `(f(x+h e_i) - f(x-h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(GcError::invalid("finite difference step must be positive"));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GcError::numeric(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Naive O(n^2) DFT, the oracle for everything FFT-shaped.
    pub fn naive_dft(signal: &[f64]) -> Vec<Complex64> {
        let n = signal.len();
        (0..n / 2 + 1)
            .map(|m| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &x) in signal.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (m * t) as f64 / n as f64;
                    acc += Complex64::new(ang.cos(), ang.sin()) * x;
                }
                acc
            })
            .collect()
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn rfft_dc_signal() {
        let s = rfft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.len(), 3);
        assert!((s.data()[0].re - 4.0).abs() < 1e-12);
        for m in 1..3 {
            assert!(s.data()[m].norm() < 1e-12);
        }
    }

    #[test]
    fn rfft_impulse_flat_spectrum() {
        let s = rfft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for m in 0..3 {
            assert!((s.data()[m].re - 1.0).abs() < 1e-12);
            assert!(s.data()[m].im.abs() < 1e-12);
        }
    }

    #[test]
    fn rfft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_vec(&mut rng, 64);
        let fast = rfft(&u).unwrap();
        let slow = naive_dft(&u);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn rfft_empty_is_error() {
        assert!(rfft(&[]).is_err());
    }

    #[test]
    fn irfft_dc_inverse() {
        let s = Spectrum::new(vec![
            Complex64::new(4.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        ]);
        let y = irfft(&s, 4).unwrap();
        for v in y {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn irfft_zero_spectrum() {
        let s = Spectrum::new(vec![Complex64::new(0.0, 0.0); 5]);
        let y = irfft(&s, 8).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn irfft_mode_count_mismatch() {
        let s = Spectrum::new(vec![Complex64::new(0.0, 0.0); 5]);
        assert!(irfft(&s, 4).is_err());
    }

    #[test]
    fn round_trip_length_100() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_vec(&mut rng, 100);
        let y = irfft(&rfft(&u).unwrap(), 100).unwrap();
        let err = u
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn circular_impulse_reproduces_kernel() {
        let y = circular_convolve(&[1.0, 0.0, 0.0, 0.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        for (a, b) in y.iter().zip(&[4.0, 3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn circular_identity_kernel() {
        let y = circular_convolve(&[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0]).unwrap();
        for (a, b) in y.iter().zip(&[1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    pub fn direct_circular(u: &[f64], k: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|t| (0..n).map(|i| k[i] * u[(t + n - i) % n]).sum())
            .collect()
    }

    pub fn direct_causal(u: &[f64], k: &[f64]) -> Vec<f64> {
        let n = u.len();
        (0..n)
            .map(|t| (0..=t).map(|i| k[i] * u[t - i]).sum())
            .collect()
    }

    #[test]
    fn circular_matches_direct_sum_257() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_vec(&mut rng, 257);
        let k = random_vec(&mut rng, 257);
        let fast = circular_convolve(&u, &k).unwrap();
        let slow = direct_circular(&u, &k);
        let scale = slow.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn causal_impulse_response() {
        let y = causal_convolve(&[1.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in y.iter().zip(&[1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_identity_kernel() {
        let u = [0.5, -1.25, 2.0, 0.0, 3.5];
        let mut k = vec![0.0; 5];
        k[0] = 1.0;
        let y = causal_convolve(&u, &k).unwrap();
        for (a, b) in y.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_matches_direct_sum_128() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_vec(&mut rng, 128);
        let k = random_vec(&mut rng, 128);
        let fast = causal_convolve(&u, &k).unwrap();
        let slow = direct_causal(&u, &k);
        let scale = slow.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() / scale < 1e-9);
        }
    }

    #[test]
    fn causal_never_leaks_future() {
        // An impulse at position p must not influence outputs before p.
        let n = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = random_vec(&mut rng, n);
        for p in [0usize, 5, 17, 31] {
            let mut u = vec![0.0; n];
            u[p] = 1.0;
            let y = causal_convolve(&u, &k).unwrap();
            for (t, v) in y.iter().enumerate().take(p) {
                assert!(v.abs() < 1e-12, "leak at t={t} from impulse p={p}");
            }
        }
    }

    #[test]
    fn fd_gradient_of_square() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &[2.0], 1e-4).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn fd_gradient_constant() {
        let g = finite_difference_gradient(|_| 3.0, &[1.0, 2.0, 3.0], 1e-4).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fd_gradient_sin_sum() {
        let g = finite_difference_gradient(
            |x| x.iter().map(|v| v.sin()).sum(),
            &[0.0, std::f64::consts::FRAC_PI_2],
            1e-5,
        )
        .unwrap();
        assert!((g[0] - 1.0).abs() < 1e-6);
        assert!(g[1].abs() < 1e-6);
    }

    #[test]
    fn tensor_shape_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_lengths(n in 1usize..512, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_vec(&mut rng, n);
            let y = irfft(&rfft(&u).unwrap(), n).unwrap();
            for (a, b) in u.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn convolution_linearity(n in 2usize..64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_vec(&mut rng, n);
            let v = random_vec(&mut rng, n);
            let k = random_vec(&mut rng, n);
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let combined: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = circular_convolve(&combined, &k).unwrap();
            let cu = circular_convolve(&u, &k).unwrap();
            let cv = circular_convolve(&v, &k).unwrap();
            for i in 0..n {
                prop_assert!((lhs[i] - (a * cu[i] + b * cv[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn parseval_identity(n in 1usize..200, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_vec(&mut rng, n);
            let time_energy: f64 = u.iter().map(|v| v * v).sum();
            let spec = rfft(&u).unwrap();
            let mut freq_energy = spec.data()[0].norm_sqr();
            for m in 1..spec.len() {
                let sym = if n % 2 == 0 && m == n / 2 { 1.0 } else { 2.0 };
                freq_energy += sym * spec.data()[m].norm_sqr();
            }
            freq_energy /= n as f64;
            let scale = time_energy.max(1e-12);
            prop_assert!((time_energy - freq_energy).abs() / scale < 1e-8);
        }
    }
}
