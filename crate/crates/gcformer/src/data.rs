//! Dataset handling: ETT-style CSV ingestion, chronological splitting,
//! sliding-window sample construction, synthetic series generation, and the
//! noise-injection protocol used for robustness studies.
//!
//! Splits are computed before windowing and windows never straddle a split
//! boundary, so no test-target timestamp can leak into training inputs.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GcError, Result};

/// A multivariate time series: ordered timestamp labels plus a `T x C` value
/// matrix stored row-per-timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub timestamps: Vec<String>,
    pub channel_names: Vec<String>,
    /// Row-major values, one `Vec` per timestep of length `channels()`.
    pub values: Vec<Vec<f64>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    /// Contiguous row range as a new series.
    fn slice(&self, start: usize, end: usize) -> Series {
        Series {
            timestamps: self.timestamps[start..end].to_vec(),
            channel_names: self.channel_names.clone(),
            values: self.values[start..end].to_vec(),
        }
    }

    /// Per-channel population standard deviations.
    pub fn channel_stds(&self) -> Vec<f64> {
        let t = self.len() as f64;
        let c = self.channels();
        let mut mean = vec![0.0; c];
        for row in &self.values {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= t;
        }
        let mut var = vec![0.0; c];
        for row in &self.values {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter().map(|v| (v / t).sqrt()).collect()
    }
}

/// One supervised sample: `N x C` input rows followed immediately in time by
/// `H x C` target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub input: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

/// Windowed samples from one chronological split.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub samples: Vec<WindowSample>,
    pub split: String,
}

/// Train/validation/test series after the chronological 7:1:2 split.
#[derive(Debug, Clone)]
pub struct SplitSeries {
    pub train: Series,
    pub val: Series,
    pub test: Series,
}

/// Parse an ETT-layout CSV: header `date,<ch1>,...,<chK>`, one row per
/// timestep. Timestamps may be ISO-8601 strings or integer indices; they
/// must be strictly increasing under lexicographic-or-numeric order.
pub fn load_csv(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GcError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| GcError::data(format!("{}: empty file", path.display())))?;
    let mut cols = header.split(',');
    let first = cols.next().unwrap_or_default();
    if !first.eq_ignore_ascii_case("date") {
        return Err(GcError::data(format!(
            "{}: header must start with 'date', found '{first}'",
            path.display()
        )));
    }
    let channel_names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if channel_names.is_empty() {
        return Err(GcError::data(format!(
            "{}: no channel columns in header",
            path.display()
        )));
    }
    let mut timestamps: Vec<String> = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let stamp = fields.next().unwrap_or_default().trim().to_string();
        let row: Vec<f64> = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    GcError::data(format!(
                        "{}:{}: non-numeric cell '{}'",
                        path.display(),
                        lineno + 1,
                        f.trim()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != channel_names.len() {
            return Err(GcError::data(format!(
                "{}:{}: expected {} value columns, found {}",
                path.display(),
                lineno + 1,
                channel_names.len(),
                row.len()
            )));
        }
        if let Some(prev) = timestamps.last() {
            if !stamp_increasing(prev, &stamp) {
                return Err(GcError::data(format!(
                    "{}:{}: timestamps not strictly increasing ('{prev}' then '{stamp}')",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        timestamps.push(stamp);
        values.push(row);
    }
    if values.is_empty() {
        return Err(GcError::data(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(Series {
        timestamps,
        channel_names,
        values,
    })
}

/// Strictly-increasing check that treats pure-integer labels numerically and
/// anything else lexicographically (ISO-8601 sorts correctly as text).
fn stamp_increasing(prev: &str, next: &str) -> bool {
    match (prev.parse::<i64>(), next.parse::<i64>()) {
        (Ok(a), Ok(b)) => a < b,
        _ => prev < next,
    }
}

/// Write a series in the same layout `load_csv` reads.
pub fn write_csv(series: &Series, path: &Path) -> Result<()> {
    let mut out = String::from("date");
    for name in &series.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (stamp, row) in series.timestamps.iter().zip(&series.values) {
        out.push_str(stamp);
        for v in row {
            let _ = write!(out, ",{v:.12}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| GcError::data(format!("cannot write {}: {e}", path.display())))
}

/// Chronological 7:1:2 split: `floor(0.7 T)` train rows, `floor(0.1 T)`
/// validation rows, remainder test.
pub fn split_712(series: &Series) -> Result<SplitSeries> {
    let t = series.len();
    if t < 10 {
        return Err(GcError::invalid(format!(
            "series too short to split 7:1:2 (need at least 10 rows, have {t})"
        )));
    }
    let n_train = (7 * t) / 10;
    let n_val = t / 10;
    Ok(SplitSeries {
        train: series.slice(0, n_train),
        val: series.slice(n_train, n_train + n_val),
        test: series.slice(n_train + n_val, t),
    })
}

/// Enumerate all (input, target) windows of the segment at the given stride.
pub fn sliding_windows(
    segment: &Series,
    input_len: usize,
    pred_len: usize,
    stride: usize,
    split: &str,
) -> Result<WindowedDataset> {
    let t = segment.len();
    if stride == 0 {
        return Err(GcError::invalid("window stride must be at least 1"));
    }
    if t < input_len + pred_len {
        return Err(GcError::invalid(format!(
            "segment of length {t} too short for windows of {input_len}+{pred_len}"
        )));
    }
    let count = (t - input_len - pred_len) / stride + 1;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        samples.push(WindowSample {
            input: segment.values[start..start + input_len].to_vec(),
            target: segment.values[start + input_len..start + input_len + pred_len].to_vec(),
        });
    }
    Ok(WindowedDataset {
        samples,
        split: split.to_string(),
    })
}

/// Parameters for the synthetic generators.
#[derive(Debug, Clone)]
pub struct SynthParams {
    /// Sinusoid periods (in samples) summed by `sin_mix`; also the seasonal
    /// period of `trend_seasonal_noise`.
    pub periods: Vec<f64>,
    /// Per-period amplitudes (padded with 1.0 when shorter than `periods`).
    pub amplitudes: Vec<f64>,
    /// Linear trend slope per step (`trend_seasonal_noise`).
    pub trend: f64,
    /// Noise standard deviation (`trend_seasonal_noise`, `random_walk`).
    pub noise_std: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            periods: vec![24.0, 96.0],
            amplitudes: vec![1.0, 0.5],
            trend: 0.001,
            noise_std: 0.1,
        }
    }
}

/// Which synthetic process to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Sum of sinusoids with per-channel phase offsets (periodic regime).
    SinMix,
    /// Linear trend + one seasonal component + Gaussian noise.
    TrendSeasonalNoise,
    /// Cumulative sum of Gaussian steps (aperiodic regime).
    RandomWalk,
}

impl SynthKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sin_mix" => Ok(SynthKind::SinMix),
            "trend_seasonal_noise" => Ok(SynthKind::TrendSeasonalNoise),
            "random_walk" => Ok(SynthKind::RandomWalk),
            other => Err(GcError::invalid(format!(
                "unknown synthetic kind '{other}' (expected sin_mix, trend_seasonal_noise, or random_walk)"
            ))),
        }
    }
}

/// Generate a deterministic synthetic series of `len` rows and `channels`
/// columns. Timestamps are integer indices.
pub fn synth_generate(
    kind: SynthKind,
    len: usize,
    channels: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<Series> {
    if len < 1 || channels < 1 {
        return Err(GcError::invalid(
            "synthetic series needs len >= 1 and channels >= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| GcError::invalid(e.to_string()))?;
    let mut values = vec![vec![0.0; channels]; len];
    match kind {
        SynthKind::SinMix => {
            let phases: Vec<f64> = (0..channels)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            for (t, row) in values.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, &period) in params.periods.iter().enumerate() {
                        let amp = params.amplitudes.get(i).copied().unwrap_or(1.0);
                        let omega = std::f64::consts::TAU / period;
                        acc += amp * (omega * t as f64 + phases[c] * (i + 1) as f64).sin();
                    }
                    *v = acc;
                }
            }
        }
        SynthKind::TrendSeasonalNoise => {
            let phases: Vec<f64> = (0..channels)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let period = params.periods.first().copied().unwrap_or(24.0);
            let amp = params.amplitudes.first().copied().unwrap_or(1.0);
            let omega = std::f64::consts::TAU / period;
            for t in 0..len {
                for c in 0..channels {
                    values[t][c] = params.trend * t as f64
                        + amp * (omega * t as f64 + phases[c]).sin()
                        + params.noise_std * normal.sample(&mut rng);
                }
            }
        }
        SynthKind::RandomWalk => {
            let mut state = vec![0.0; channels];
            for row in values.iter_mut() {
                for (c, v) in row.iter_mut().enumerate() {
                    state[c] += params.noise_std * normal.sample(&mut rng);
                    *v = state[c];
                }
            }
        }
    }
    Ok(Series {
        timestamps: (0..len).map(|t| t.to_string()).collect(),
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        values,
    })
}

/// Add Gaussian noise to exactly `round(p * cells)` training-input cells,
/// selected uniformly without replacement by the seed. The noise std per
/// cell is `scale` times that cell's channel standard deviation.
pub fn inject_noise(
    dataset: &WindowedDataset,
    fraction: f64,
    scale: f64,
    channel_stds: &[f64],
    seed: u64,
) -> Result<WindowedDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GcError::invalid(format!(
            "noise fraction must lie in [0,1], got {fraction}"
        )));
    }
    let mut out = dataset.clone();
    if out.samples.is_empty() {
        return Ok(out);
    }
    let rows = out.samples[0].input.len();
    let cols = out.samples[0].input[0].len();
    let cells = out.samples.len() * rows * cols;
    let count = (fraction * cells as f64).round() as usize;
    if count == 0 || scale == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| GcError::invalid(e.to_string()))?;
    let mut indices: Vec<usize> = (0..cells).collect();
    // Partial Fisher-Yates: the first `count` entries form a uniform sample.
    for i in 0..count {
        let j = rng.random_range(i..cells);
        indices.swap(i, j);
    }
    for &idx in &indices[..count] {
        let sample = idx / (rows * cols);
        let rest = idx % (rows * cols);
        let row = rest / cols;
        let col = rest % cols;
        let std = channel_stds.get(col).copied().unwrap_or(1.0);
        out.samples[sample].input[row][col] += scale * std * normal.sample(&mut rng);
    }
    Ok(out)
}
