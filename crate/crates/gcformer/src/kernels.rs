//! The three sublinear global-convolution kernel parameterizations and a
//! uniform entry point for materializing them in the time domain.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GcError, Result};
use crate::legendre;
use crate::numerics::{irfft, rfft, Spectrum};

/// Multi-scale sub-kernel parameterization: `S` sub-kernels of `l0` weights
/// each, upsampled by powers of two and concatenated with geometric decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiScaleKernelParams {
    pub num_scales: usize,
    pub base_len: usize,
    pub decay: f64,
    /// One weight vector of length `base_len` per scale.
    pub sub_kernels: Vec<Vec<f64>>,
}

impl MultiScaleKernelParams {
    pub fn new(
        num_scales: usize,
        base_len: usize,
        decay: f64,
        sub_kernels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if num_scales == 0 || base_len == 0 {
            return Err(GcError::invalid("msk kernel needs at least one scale and one weight"));
        }
        if !(0.0 < decay && decay <= 1.0) {
            return Err(GcError::invalid("msk decay must lie in (0, 1]"));
        }
        if sub_kernels.len() != num_scales || sub_kernels.iter().any(|w| w.len() != base_len) {
            return Err(GcError::invalid("msk sub-kernel shapes do not match S x l0"));
        }
        Ok(MultiScaleKernelParams {
            num_scales,
            base_len,
            decay,
            sub_kernels,
        })
    }

    /// Smallest scale count whose materialized length `l0 (2^S - 1)` covers `n`.
    pub fn auto_scales(base_len: usize, n: usize) -> usize {
        let mut s = 1;
        while base_len * ((1usize << s) - 1) < n {
            s += 1;
        }
        s
    }

    /// Materialized length before truncation, `l0 (2^S - 1)`.
    pub fn full_len(&self) -> usize {
        self.base_len * ((1usize << self.num_scales) - 1)
    }
}

/// Frequency-domain parameterization: complex weights on the lowest `modes`
/// FFT modes, higher modes zeroed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreqKernelParams {
    pub modes: usize,
    pub weights_re: Vec<f64>,
    pub weights_im: Vec<f64>,
}

impl FreqKernelParams {
    pub fn new(weights_re: Vec<f64>, weights_im: Vec<f64>) -> Result<Self> {
        if weights_re.is_empty() || weights_re.len() != weights_im.len() {
            return Err(GcError::invalid("freq kernel needs matching non-empty re/im weights"));
        }
        Ok(FreqKernelParams {
            modes: weights_re.len(),
            weights_re,
            weights_im,
        })
    }

    pub fn identity(modes: usize) -> Result<Self> {
        FreqKernelParams::new(vec![1.0; modes], vec![0.0; modes])
    }
}

/// Legendre-space parameterization: a length-`kernel_len` causal filter per
/// Legendre coefficient channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LegKernelParams {
    pub order: usize,
    pub kernel_len: usize,
    /// `kernel_len` rows of `order` weights.
    pub weights: Vec<Vec<f64>>,
}

impl LegKernelParams {
    pub fn new(order: usize, kernel_len: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        if order == 0 || kernel_len == 0 {
            return Err(GcError::invalid("leg kernel needs order >= 1 and kernel_len >= 1"));
        }
        if weights.len() != kernel_len || weights.iter().any(|r| r.len() != order) {
            return Err(GcError::invalid("leg kernel weights do not match m x d_leg"));
        }
        Ok(LegKernelParams {
            order,
            kernel_len,
            weights,
        })
    }
}

/// Tagged union over the three kernel parameterizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum KernelSpec {
    Msk(MultiScaleKernelParams),
    Freq(FreqKernelParams),
    Leg(LegKernelParams),
}

impl KernelSpec {
    pub fn variant_name(&self) -> &'static str {
        match self {
            KernelSpec::Msk(_) => "msk",
            KernelSpec::Freq(_) => "freq",
            KernelSpec::Leg(_) => "leg",
        }
    }
}

/// Endpoint-aligned linear interpolation indices: output position `j` of
/// `len_out` falls between input samples `i0` and `i0+1` with weight `w` on
/// the right neighbor.
pub fn lerp_indices(len_in: usize, len_out: usize, j: usize) -> (usize, f64) {
    if len_in <= 1 || len_out <= 1 {
        return (0, 0.0);
    }
    let pos = j as f64 * (len_in - 1) as f64 / (len_out - 1) as f64;
    let i0 = (pos.floor() as usize).min(len_in - 2);
    (i0, pos - i0 as f64)
}

/// Upsample by an integer factor with linear interpolation.
pub fn upsample_linear(x: &[f64], factor: usize) -> Vec<f64> {
    let len_out = x.len() * factor;
    (0..len_out)
        .map(|j| {
            let (i0, w) = lerp_indices(x.len(), len_out, j);
            if x.len() == 1 {
                x[0]
            } else {
                x[i0] * (1.0 - w) + x[i0 + 1] * w
            }
        })
        .collect()
}

/// Concatenation over scales of decay-weighted, upsampled sub-kernels,
/// truncated or zero-padded to length `n`.
pub fn materialize_msk(params: &MultiScaleKernelParams, n: usize) -> Result<Vec<f64>> {
    if params.num_scales == 0 || params.base_len == 0 {
        return Err(GcError::invalid("msk kernel needs at least one scale and one weight"));
    }
    let mut kernel = Vec::with_capacity(params.full_len());
    let mut gain = 1.0;
    for (scale, sub) in params.sub_kernels.iter().enumerate() {
        let up = upsample_linear(sub, 1 << scale);
        kernel.extend(up.iter().map(|v| v * gain));
        gain *= params.decay;
    }
    kernel.resize(n, 0.0);
    Ok(kernel)
}

/// Multiply the lowest `modes` frequency modes of `u` by the learned complex
/// weights, zero the rest, and transform back.
pub fn apply_freq_kernel(u: &[f64], params: &FreqKernelParams) -> Result<Vec<f64>> {
    let n = u.len();
    let available = n / 2 + 1;
    if params.modes > available {
        return Err(GcError::invalid(format!(
            "freq kernel has {} modes but length {} offers only {}",
            params.modes, n, available
        )));
    }
    let spec = rfft(u)?;
    let filtered: Vec<Complex64> = spec
        .data()
        .iter()
        .enumerate()
        .map(|(m, &v)| {
            if m < params.modes {
                v * Complex64::new(params.weights_re[m], params.weights_im[m])
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    irfft(&Spectrum::new(filtered), n)
}

/// A concrete length-`n` time-domain kernel for inspection and plotting.
///
/// For the `leg` variant the path is not a plain convolution, so the impulse
/// response of the full project/filter/reconstruct pipeline is reported.
pub fn materialize_kernel(spec: &KernelSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(GcError::invalid("kernel length must be >= 1"));
    }
    match spec {
        KernelSpec::Msk(p) => materialize_msk(p, n),
        KernelSpec::Freq(p) => {
            let available = n / 2 + 1;
            if p.modes > available {
                return Err(GcError::invalid(format!(
                    "freq kernel has {} modes but length {} offers only {}",
                    p.modes, n, available
                )));
            }
            let padded: Vec<Complex64> = (0..available)
                .map(|m| {
                    if m < p.modes {
                        Complex64::new(p.weights_re[m], p.weights_im[m])
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            irfft(&Spectrum::new(padded), n)
        }
        KernelSpec::Leg(p) => {
            let mut impulse = vec![0.0; n];
            impulse[0] = 1.0;
            legendre::apply_leg_kernel(&impulse, p, None)
        }
    }
}

/// Exact learnable-real count for a kernel spec over `d` channels.
pub fn param_count(spec: &KernelSpec, _n: usize, d: usize) -> usize {
    let per_channel = match spec {
        KernelSpec::Msk(p) => p.num_scales * p.base_len,
        KernelSpec::Freq(p) => 2 * p.modes,
        KernelSpec::Leg(p) => p.kernel_len * p.order,
    };
    per_channel * d
}
