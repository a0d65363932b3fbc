//! The dual-branch forecasting network: RevIN instance normalization, a
//! global convolutional branch with a structured kernel, a local
//! patch-attention branch over the tail of the window, and a selectable
//! fusion decoder.
//!
//! All learnable reals live in a flat, named parameter table with a stable
//! enumeration; forward passes are built on the autodiff tape so analytic
//! gradients line up with that enumeration. With `channel_independent` the
//! same weights serve every channel, which keeps the model exactly
//! equivariant under channel permutations (token attention axis).

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ProjectSys, Tape};
use crate::error::{GcError, Result};
use crate::kernels::KernelSpec;
use crate::legendre::{legt_init_state, legt_system, reconstruction_basis};

/// Row-major matrix convenience alias used throughout the model API.
pub type Matrix = Vec<Vec<f64>>;

/// How the decoder fuses the two branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// Cross-attention: global features query the local features.
    Attention,
    /// Concatenate along the sequence axis and map 2N tokens back to N.
    Concat,
    /// Local branch applied to the global kernel output.
    SeriesGl,
    /// Global kernel applied to the collapsed local branch output.
    SeriesLg,
    /// Local branch only (boosting baseline; no global information).
    LocalOnly,
}

impl DecoderMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "attention" => Ok(DecoderMode::Attention),
            "concat" => Ok(DecoderMode::Concat),
            "series_gl" => Ok(DecoderMode::SeriesGl),
            "series_lg" => Ok(DecoderMode::SeriesLg),
            "local_only" => Ok(DecoderMode::LocalOnly),
            other => Err(GcError::invalid(format!(
                "unknown decoder mode '{other}' (expected attention, concat, series_gl, series_lg, or local_only)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecoderMode::Attention => "attention",
            DecoderMode::Concat => "concat",
            DecoderMode::SeriesGl => "series_gl",
            DecoderMode::SeriesLg => "series_lg",
            DecoderMode::LocalOnly => "local_only",
        }
    }
}

/// Whether decoder attention mixes patch tokens or channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionAxis {
    Token,
    Channel,
}

impl AttentionAxis {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "token" => Ok(AttentionAxis::Token),
            "channel" => Ok(AttentionAxis::Channel),
            other => Err(GcError::invalid(format!(
                "unknown attention axis '{other}' (expected token or channel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Global window length N.
    pub input_len: usize,
    /// Local window length N' (tail of the global window).
    pub local_len: usize,
    /// Forecast horizon H.
    pub pred_len: usize,
    pub channels: usize,
    pub kernel: KernelSpec,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub hidden_dim: usize,
    pub decoder_mode: DecoderMode,
    pub attention_axis: AttentionAxis,
    pub channel_independent: bool,
    pub revin_epsilon: f64,
}

impl ModelConfig {
    /// Patch-token count P of the local branch.
    pub fn patch_count(&self) -> usize {
        (self.local_len - self.patch_len) / self.patch_stride + 1
    }

    /// Flattened feature width entering the output head.
    fn head_input_dim(&self) -> usize {
        let h = self.hidden_dim;
        match self.decoder_mode {
            DecoderMode::Attention | DecoderMode::Concat => self.input_len * h,
            DecoderMode::SeriesGl | DecoderMode::SeriesLg | DecoderMode::LocalOnly => {
                self.patch_count() * h
            }
        }
    }

    /// Collects every violated constraint so callers can report them all.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_len < 1 || self.local_len < 1 || self.pred_len < 1 {
            problems.push("all window extents must be >= 1".to_string());
        }
        if self.local_len > self.input_len {
            problems.push(format!(
                "local window {} exceeds global window {}",
                self.local_len, self.input_len
            ));
        }
        if self.patch_len < 1 || self.patch_len > self.local_len {
            problems.push(format!(
                "patch_len {} must lie in [1, local_len={}]",
                self.patch_len, self.local_len
            ));
        }
        if self.patch_stride < 1 {
            problems.push("patch_stride must be >= 1".to_string());
        }
        if self.hidden_dim < 1 {
            problems.push("hidden_dim must be >= 1".to_string());
        }
        if self.channels < 1 {
            problems.push("channels must be >= 1".to_string());
        }
        if self.revin_epsilon <= 0.0 {
            problems.push("revin_epsilon must be positive".to_string());
        }
        if !self.channel_independent && self.channels > 1 {
            problems.push("only channel_independent weights are implemented".to_string());
        }
        // Kernel applicability at the lengths the decoder will use.
        let kernel_lens: &[usize] = match self.decoder_mode {
            DecoderMode::SeriesLg => &[self.patch_count()],
            DecoderMode::LocalOnly => &[],
            _ => &[self.input_len],
        };
        for &len in kernel_lens {
            match &self.kernel {
                KernelSpec::Freq(p) => {
                    if p.modes > len / 2 + 1 {
                        problems.push(format!(
                            "freq kernel has {} modes but length {} offers only {}",
                            p.modes,
                            len,
                            len / 2 + 1
                        ));
                    }
                }
                KernelSpec::Leg(p) => {
                    if p.kernel_len * 4 > len {
                        problems.push(format!(
                            "leg kernel_len {} too long for length {} (need m <= len/4)",
                            p.kernel_len, len
                        ));
                    }
                }
                KernelSpec::Msk(_) => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GcError::invalid(problems.join("; ")))
        }
    }
}

/// Instance statistics captured at normalization time plus the affine
/// parameters that were applied.
#[derive(Debug, Clone)]
pub struct RevinState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
}

/// Standardize each channel with its population statistics, then apply the
/// learnable affine map.
pub fn revin_normalize(x: &Matrix, gamma: &[f64], beta: &[f64], epsilon: f64) -> (Matrix, RevinState) {
    let t = x.len();
    let c = if t > 0 { x[0].len() } else { 0 };
    let mut mean = vec![0.0; c];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= t as f64;
    }
    let mut var = vec![0.0; c];
    for row in x {
        for k in 0..c {
            let d = row[k] - mean[k];
            var[k] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= t as f64;
    }
    let out = x
        .iter()
        .map(|row| {
            (0..c)
                .map(|k| gamma[k] * (row[k] - mean[k]) / (var[k] + epsilon).sqrt() + beta[k])
                .collect()
        })
        .collect();
    let state = RevinState {
        mean,
        var,
        gamma: gamma.to_vec(),
        beta: beta.to_vec(),
        epsilon,
    };
    (out, state)
}

/// Exact inverse of [`revin_normalize`]'s affine map with the stored
/// statistics.
pub fn revin_denormalize(y: &Matrix, state: &RevinState) -> Result<Matrix> {
    for (k, g) in state.gamma.iter().enumerate() {
        if *g == 0.0 {
            return Err(GcError::invalid(format!(
                "cannot invert RevIN: gamma[{k}] is zero"
            )));
        }
    }
    Ok(y.iter()
        .map(|row| {
            (0..row.len())
                .map(|k| {
                    (row[k] - state.beta[k]) / state.gamma[k]
                        * (state.var[k] + state.epsilon).sqrt()
                        + state.mean[k]
                })
                .collect()
        })
        .collect())
}

/// Row-wise `Softmax(q k^T / sqrt(h)) v`.
pub fn cross_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    let h = q.first().map(|r| r.len()).unwrap_or(0);
    if k.len() != v.len()
        || k.iter().any(|r| r.len() != h)
        || v.iter().any(|r| r.len() != v[0].len())
    {
        return Err(GcError::invalid("cross_attention width mismatch"));
    }
    let scale = 1.0 / (h as f64).sqrt();
    let mut out = Vec::with_capacity(q.len());
    for qr in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kr| qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let width = v[0].len();
        let mut row = vec![0.0; width];
        for (w, vr) in weights.iter().zip(v) {
            for (o, x) in row.iter_mut().zip(vr) {
                *o += w * x;
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// One named learnable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// The model: a config plus the flat parameter table.
#[derive(Debug, Clone)]
pub struct GcformerModel {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

/// A built forward pass: the tape, the parameter leaves aligned with the
/// model's enumeration, per-channel denormalized predictions, and (when a
/// target was supplied) the scalar MSE loss node.
pub struct ForwardPass {
    pub tape: Tape,
    pub param_nodes: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
    pub loss: Option<NodeId>,
    pub state: RevinState,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"gcf1";

impl GcformerModel {
    /// Initialize parameters: kernel payloads are copied from the config's
    /// spec, linear maps draw symmetric uniform fan-in values, biases start
    /// at zero, and the RevIN affine starts at the identity.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Param> = Vec::new();
        let push_uniform = |params: &mut Vec<Param>, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (rows as f64).sqrt();
            let values = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(Param {
                name: name.to_string(),
                rows,
                cols,
                values,
            });
        };
        let push_fixed = |params: &mut Vec<Param>, name: &str, rows: usize, cols: usize, values: Vec<f64>| {
            debug_assert_eq!(values.len(), rows * cols);
            params.push(Param {
                name: name.to_string(),
                rows,
                cols,
                values,
            });
        };

        match &config.kernel {
            KernelSpec::Msk(p) => {
                for (scale, sub) in p.sub_kernels.iter().enumerate() {
                    push_fixed(
                        &mut params,
                        &format!("kernel.msk.scale{scale}"),
                        p.base_len,
                        1,
                        sub.clone(),
                    );
                }
            }
            KernelSpec::Freq(p) => {
                push_fixed(&mut params, "kernel.freq.re", p.modes, 1, p.weights_re.clone());
                push_fixed(&mut params, "kernel.freq.im", p.modes, 1, p.weights_im.clone());
            }
            KernelSpec::Leg(p) => {
                let flat: Vec<f64> = p.weights.iter().flatten().copied().collect();
                push_fixed(
                    &mut params,
                    "kernel.leg.weights",
                    p.kernel_len,
                    p.order,
                    flat,
                );
            }
        }

        let h = config.hidden_dim;
        let n = config.input_len;
        let p_count = config.patch_count();
        let needs_global_embed = !matches!(config.decoder_mode, DecoderMode::LocalOnly);
        if needs_global_embed {
            push_uniform(&mut params, "global.embed.weight", h, 1, &mut rng);
            push_fixed(&mut params, "global.embed.bias", h, 1, vec![0.0; h]);
        }
        push_uniform(&mut params, "local.embed.weight", config.patch_len, h, &mut rng);
        push_fixed(&mut params, "local.embed.bias", h, 1, vec![0.0; h]);
        push_uniform(&mut params, "local.attn.wq", h, h, &mut rng);
        push_uniform(&mut params, "local.attn.wk", h, h, &mut rng);
        push_uniform(&mut params, "local.attn.wv", h, h, &mut rng);
        match config.decoder_mode {
            DecoderMode::Attention => {
                push_uniform(&mut params, "decoder.wq", h, h, &mut rng);
                push_uniform(&mut params, "decoder.wk", h, h, &mut rng);
                push_uniform(&mut params, "decoder.wv", h, h, &mut rng);
            }
            DecoderMode::Concat => {
                push_uniform(&mut params, "decoder.align", n, p_count, &mut rng);
                push_uniform(&mut params, "decoder.map", n, 2 * n, &mut rng);
            }
            DecoderMode::SeriesLg => {
                push_uniform(&mut params, "decoder.collapse", h, 1, &mut rng);
            }
            DecoderMode::SeriesGl | DecoderMode::LocalOnly => {}
        }
        push_uniform(
            &mut params,
            "decoder.head.weight",
            config.head_input_dim(),
            config.pred_len,
            &mut rng,
        );
        push_fixed(
            &mut params,
            "decoder.head.bias",
            config.pred_len,
            1,
            vec![0.0; config.pred_len],
        );
        push_fixed(
            &mut params,
            "revin.gamma",
            config.channels,
            1,
            vec![1.0; config.channels],
        );
        push_fixed(
            &mut params,
            "revin.beta",
            config.channels,
            1,
            vec![0.0; config.channels],
        );
        Ok(GcformerModel { config, params })
    }

    /// Draw a random kernel payload of the requested shape (weights
    /// Normal(0, 0.01)), for configs that do not pin explicit values.
    pub fn random_kernel(kind: &str, n: usize, base_len: usize, modes: usize, order: usize, kernel_len: usize, seed: u64) -> Result<KernelSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
        let normal = Normal::new(0.0, 1e-2).map_err(|e| GcError::invalid(e.to_string()))?;
        match kind {
            "msk" => {
                let scales = crate::kernels::MultiScaleKernelParams::auto_scales(base_len, n);
                let subs = (0..scales)
                    .map(|_| (0..base_len).map(|_| normal.sample(&mut rng)).collect())
                    .collect();
                Ok(KernelSpec::Msk(crate::kernels::MultiScaleKernelParams::new(
                    scales, base_len, 0.5, subs,
                )?))
            }
            "freq" => {
                let re = (0..modes).map(|_| normal.sample(&mut rng)).collect();
                let im = (0..modes).map(|_| normal.sample(&mut rng)).collect();
                Ok(KernelSpec::Freq(crate::kernels::FreqKernelParams::new(re, im)?))
            }
            "leg" => {
                let weights = (0..kernel_len)
                    .map(|_| (0..order).map(|_| normal.sample(&mut rng)).collect())
                    .collect();
                Ok(KernelSpec::Leg(crate::kernels::LegKernelParams::new(
                    order, kernel_len, weights,
                )?))
            }
            other => Err(GcError::invalid(format!("unknown kernel kind '{other}'"))),
        }
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| GcError::invalid(format!("no parameter named '{name}'")))
    }

    pub fn set_param(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let param = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| GcError::invalid(format!("no parameter named '{name}'")))?;
        if values.len() != param.rows * param.cols {
            return Err(GcError::invalid(format!(
                "parameter '{name}' expects {} values, got {}",
                param.rows * param.cols,
                values.len()
            )));
        }
        param.values = values;
        Ok(())
    }

    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Parameter counts grouped by top-level component name.
    pub fn param_counts_by_group(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            let group = p.name.split('.').next().unwrap_or("other").to_string();
            match groups.iter_mut().find(|(g, _)| *g == group) {
                Some((_, count)) => *count += p.values.len(),
                None => groups.push((group, p.values.len())),
            }
        }
        groups
    }

    fn node(&self, param_nodes: &[NodeId], name: &str) -> NodeId {
        param_nodes[self
            .param_index(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    /// Apply the configured kernel to a length-`len` column vector node.
    fn kernel_on_tape(
        &self,
        tape: &mut Tape,
        param_nodes: &[NodeId],
        x: NodeId,
        len: usize,
    ) -> Result<NodeId> {
        match &self.config.kernel {
            KernelSpec::Msk(p) => {
                let mut pieces: Option<NodeId> = None;
                let mut gain = 1.0;
                for scale in 0..p.num_scales {
                    let sub = self.node(param_nodes, &format!("kernel.msk.scale{scale}"));
                    let up = tape.upsample(sub, 1 << scale);
                    let scaled = tape.scale_const(up, gain);
                    gain *= p.decay;
                    pieces = Some(match pieces {
                        Some(acc) => tape.concat_rows(acc, scaled),
                        None => scaled,
                    });
                }
                let full = pieces.expect("at least one msk scale");
                let full_len = p.full_len();
                let kernel = if full_len >= len {
                    tape.slice_rows(full, 0, len)
                } else {
                    tape.pad_rows(full, len)
                };
                Ok(tape.causal_conv(x, kernel))
            }
            KernelSpec::Freq(p) => {
                if p.modes > len / 2 + 1 {
                    return Err(GcError::invalid(format!(
                        "freq kernel has {} modes but length {} offers only {}",
                        p.modes,
                        len,
                        len / 2 + 1
                    )));
                }
                let re = self.node(param_nodes, "kernel.freq.re");
                let im = self.node(param_nodes, "kernel.freq.im");
                Ok(tape.freq_filter(x, re, im))
            }
            KernelSpec::Leg(p) => {
                if p.kernel_len * 4 > len {
                    return Err(GcError::invalid(format!(
                        "leg kernel_len {} too long for length {} (need m <= len/4)",
                        p.kernel_len, len
                    )));
                }
                let sys = legt_system(p.order, len as f64)?;
                let init_u0 = legt_init_state(1.0, 0.0, p.order, len);
                let init_u1 = legt_init_state(0.0, 1.0, p.order, len);
                let proj = Arc::new(ProjectSys {
                    a: sys.a,
                    b: sys.b,
                    init_u0: DVector::from_vec(init_u0),
                    init_u1: DVector::from_vec(init_u1),
                });
                let coeffs = tape.ssm_project(x, proj);
                let weights = self.node(param_nodes, "kernel.leg.weights");
                let filtered = tape.leg_filter_last(coeffs, weights);
                let basis: Vec<f64> = reconstruction_basis(len, p.order)
                    .into_iter()
                    .flatten()
                    .collect();
                let g = tape.leaf(len, p.order, basis);
                Ok(tape.matmul(g, filtered))
            }
        }
    }

    /// Pointwise embed of a column vector into hidden width h.
    fn embed_on_tape(&self, tape: &mut Tape, param_nodes: &[NodeId], seq: NodeId) -> NodeId {
        let w = self.node(param_nodes, "global.embed.weight");
        let b = self.node(param_nodes, "global.embed.bias");
        let wt = tape.transpose(w);
        let z = tape.matmul(seq, wt);
        tape.add_bias_row(z, b)
    }

    /// Global branch: kernel over the full window, then pointwise embedding.
    fn global_on_tape(
        &self,
        tape: &mut Tape,
        param_nodes: &[NodeId],
        xhat: NodeId,
    ) -> Result<NodeId> {
        let g = self.kernel_on_tape(tape, param_nodes, xhat, self.config.input_len)?;
        Ok(self.embed_on_tape(tape, param_nodes, g))
    }

    /// Local branch: patch the tail, embed patches, one self-attention layer.
    fn local_on_tape(&self, tape: &mut Tape, param_nodes: &[NodeId], tail: NodeId) -> NodeId {
        let h = self.config.hidden_dim;
        let patches = tape.extract_patches(tail, self.config.patch_len, self.config.patch_stride);
        let we = self.node(param_nodes, "local.embed.weight");
        let be = self.node(param_nodes, "local.embed.bias");
        let e0 = tape.matmul(patches, we);
        let e = tape.add_bias_row(e0, be);
        let wq = self.node(param_nodes, "local.attn.wq");
        let wk = self.node(param_nodes, "local.attn.wk");
        let wv = self.node(param_nodes, "local.attn.wv");
        let q = tape.matmul(e, wq);
        let k = tape.matmul(e, wk);
        let v = tape.matmul(e, wv);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale_const(scores, 1.0 / (h as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        tape.matmul(attn, v)
    }

    /// Output head on flattened features.
    fn head_on_tape(&self, tape: &mut Tape, param_nodes: &[NodeId], features: NodeId) -> NodeId {
        let flat = tape.flatten(features);
        let row = tape.transpose(flat);
        let w = self.node(param_nodes, "decoder.head.weight");
        let b = self.node(param_nodes, "decoder.head.bias");
        let out = tape.matmul(row, w);
        let col = tape.transpose(out);
        tape.add(col, b)
    }

    fn tail_on_tape(&self, tape: &mut Tape, xhat: NodeId) -> NodeId {
        tape.slice_rows(
            xhat,
            self.config.input_len - self.config.local_len,
            self.config.local_len,
        )
    }

    /// Token-axis forward for one channel: normalized input to normalized
    /// prediction.
    fn channel_on_tape(
        &self,
        tape: &mut Tape,
        param_nodes: &[NodeId],
        xhat: NodeId,
    ) -> Result<NodeId> {
        let h = self.config.hidden_dim;
        let features = match self.config.decoder_mode {
            DecoderMode::LocalOnly => {
                let tail = self.tail_on_tape(tape, xhat);
                self.local_on_tape(tape, param_nodes, tail)
            }
            DecoderMode::SeriesGl => {
                let g = self.kernel_on_tape(tape, param_nodes, xhat, self.config.input_len)?;
                let tail = self.tail_on_tape(tape, g);
                self.local_on_tape(tape, param_nodes, tail)
            }
            DecoderMode::SeriesLg => {
                let tail = self.tail_on_tape(tape, xhat);
                let z_local = self.local_on_tape(tape, param_nodes, tail);
                let collapse = self.node(param_nodes, "decoder.collapse");
                let s = tape.matmul(z_local, collapse);
                let ks = self.kernel_on_tape(tape, param_nodes, s, self.config.patch_count())?;
                self.embed_on_tape(tape, param_nodes, ks)
            }
            DecoderMode::Attention => {
                let z_global = self.global_on_tape(tape, param_nodes, xhat)?;
                let tail = self.tail_on_tape(tape, xhat);
                let z_local = self.local_on_tape(tape, param_nodes, tail);
                let wq = self.node(param_nodes, "decoder.wq");
                let wk = self.node(param_nodes, "decoder.wk");
                let wv = self.node(param_nodes, "decoder.wv");
                let q = tape.matmul(z_global, wq);
                let k = tape.matmul(z_local, wk);
                let v = tape.matmul(z_local, wv);
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt);
                let scaled = tape.scale_const(scores, 1.0 / (h as f64).sqrt());
                let attn = tape.softmax_rows(scaled);
                tape.matmul(attn, v)
            }
            DecoderMode::Concat => {
                let z_global = self.global_on_tape(tape, param_nodes, xhat)?;
                let tail = self.tail_on_tape(tape, xhat);
                let z_local = self.local_on_tape(tape, param_nodes, tail);
                let align = self.node(param_nodes, "decoder.align");
                let aligned = tape.matmul(align, z_local);
                let cat = tape.concat_rows(z_global, aligned);
                let map = self.node(param_nodes, "decoder.map");
                tape.matmul(map, cat)
            }
        };
        Ok(self.head_on_tape(tape, param_nodes, features))
    }

    /// Build the full forward pass for one `N x C` instance. With a target
    /// the tape ends in the scalar MSE loss over the denormalized output.
    pub fn build_forward(&self, input: &Matrix, target: Option<&Matrix>) -> Result<ForwardPass> {
        let n = self.config.input_len;
        let c = self.config.channels;
        if input.len() != n || input.iter().any(|r| r.len() != c) {
            return Err(GcError::invalid(format!(
                "input must be {n} x {c} (got {} x {})",
                input.len(),
                input.first().map(|r| r.len()).unwrap_or(0)
            )));
        }
        if input.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GcError::numeric("non-finite value in model input"));
        }
        if let Some(t) = target {
            if t.len() != self.config.pred_len || t.iter().any(|r| r.len() != c) {
                return Err(GcError::invalid("target shape mismatch"));
            }
        }
        let gamma = &self.param("revin.gamma")?.values;
        let beta = &self.param("revin.beta")?.values;
        for (k, g) in gamma.iter().enumerate() {
            if *g == 0.0 {
                return Err(GcError::invalid(format!(
                    "revin.gamma[{k}] is zero; prediction cannot be denormalized"
                )));
            }
        }
        let eps = self.config.revin_epsilon;
        // Instance statistics are constants with respect to the parameters.
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for row in input {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        for row in input {
            for k in 0..c {
                let d = row[k] - mean[k];
                var[k] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= n as f64;
        }
        let state = RevinState {
            mean: mean.clone(),
            var: var.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            epsilon: eps,
        };

        let mut tape = Tape::new();
        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.rows, p.cols, p.values.clone()))
            .collect();
        let gamma_node = self.node(&param_nodes, "revin.gamma");
        let beta_node = self.node(&param_nodes, "revin.beta");

        // Normalize each channel on the tape.
        let mut xhats = Vec::with_capacity(c);
        let mut gammas = Vec::with_capacity(c);
        let mut betas = Vec::with_capacity(c);
        for ch in 0..c {
            let column: Vec<f64> = input.iter().map(|r| r[ch]).collect();
            let x = tape.vector(column);
            let centered = tape.add_const(x, -mean[ch]);
            let scaled = tape.scale_const(centered, 1.0 / (var[ch] + eps).sqrt());
            let g = tape.slice_rows(gamma_node, ch, 1);
            let b = tape.slice_rows(beta_node, ch, 1);
            let affine = tape.mul_scalar(scaled, g);
            let xhat = tape.add_scalar(affine, b);
            xhats.push(xhat);
            gammas.push(g);
            betas.push(b);
        }

        // Normalized predictions per channel.
        let preds: Vec<NodeId> = match (self.config.attention_axis, self.config.decoder_mode) {
            (AttentionAxis::Channel, DecoderMode::Attention) => {
                self.channel_axis_on_tape(&mut tape, &param_nodes, &xhats)?
            }
            (AttentionAxis::Channel, _) => {
                return Err(GcError::invalid(
                    "attention_axis=channel requires decoder_mode=attention",
                ));
            }
            (AttentionAxis::Token, _) => xhats
                .iter()
                .map(|&xhat| self.channel_on_tape(&mut tape, &param_nodes, xhat))
                .collect::<Result<_>>()?,
        };

        // Denormalize and accumulate the loss.
        let mut outputs = Vec::with_capacity(c);
        let mut loss_acc: Option<NodeId> = None;
        for ch in 0..c {
            let nb = tape.neg(betas[ch]);
            let centered = tape.add_scalar(preds[ch], nb);
            let ginv = tape.recip(gammas[ch]);
            let unscaled = tape.mul_scalar(centered, ginv);
            let stretched = tape.scale_const(unscaled, (var[ch] + eps).sqrt());
            let y = tape.add_const(stretched, mean[ch]);
            outputs.push(y);
            if let Some(t) = target {
                let t_col: Vec<f64> = t.iter().map(|r| r[ch]).collect();
                let t_node = tape.vector(t_col);
                let d = tape.sub(y, t_node);
                let sq = tape.mul(d, d);
                let m = tape.mean_all(sq);
                loss_acc = Some(match loss_acc {
                    Some(acc) => tape.add(acc, m),
                    None => m,
                });
            }
        }
        let loss = loss_acc.map(|acc| tape.scale_const(acc, 1.0 / c as f64));
        Ok(ForwardPass {
            tape,
            param_nodes,
            outputs,
            loss,
            state,
        })
    }

    /// Channel-axis decoder: per-channel branch features plus one attention
    /// over channel summaries (global summaries query local summaries); the
    /// resulting per-channel context is broadcast onto the global features.
    fn channel_axis_on_tape(
        &self,
        tape: &mut Tape,
        param_nodes: &[NodeId],
        xhats: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let h = self.config.hidden_dim;
        let mut z_globals = Vec::with_capacity(xhats.len());
        let mut pooled_g: Option<NodeId> = None;
        let mut pooled_l: Option<NodeId> = None;
        for &xhat in xhats {
            let zg = self.global_on_tape(tape, param_nodes, xhat)?;
            let tail = self.tail_on_tape(tape, xhat);
            let zl = self.local_on_tape(tape, param_nodes, tail);
            let pg = tape.mean_rows(zg);
            let pl = tape.mean_rows(zl);
            pooled_g = Some(match pooled_g {
                Some(acc) => tape.concat_rows(acc, pg),
                None => pg,
            });
            pooled_l = Some(match pooled_l {
                Some(acc) => tape.concat_rows(acc, pl),
                None => pl,
            });
            z_globals.push(zg);
        }
        let qsrc = pooled_g.expect("at least one channel");
        let ksrc = pooled_l.expect("at least one channel");
        let wq = self.node(param_nodes, "decoder.wq");
        let wk = self.node(param_nodes, "decoder.wk");
        let wv = self.node(param_nodes, "decoder.wv");
        let q = tape.matmul(qsrc, wq);
        let k = tape.matmul(ksrc, wk);
        let v = tape.matmul(ksrc, wv);
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale_const(scores, 1.0 / (h as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let context = tape.matmul(attn, v);
        z_globals
            .iter()
            .enumerate()
            .map(|(ch, &zg)| {
                let ctx_row = tape.slice_rows(context, ch, 1);
                let ctx = tape.transpose(ctx_row);
                let fused = tape.add_bias_row(zg, ctx);
                Ok(self.head_on_tape(tape, param_nodes, fused))
            })
            .collect()
    }

    /// Denormalized forecast for one instance, `H x C`.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let pass = self.build_forward(input, None)?;
        let h = self.config.pred_len;
        let mut out = vec![vec![0.0; self.config.channels]; h];
        for (ch, &node) in pass.outputs.iter().enumerate() {
            let col = pass.tape.value(node);
            for (t, row) in out.iter_mut().enumerate() {
                row[ch] = col[t];
            }
        }
        Ok(out)
    }

    /// Loss and per-parameter gradients for one (input, target) pair,
    /// aligned with the parameter enumeration.
    pub fn loss_and_gradients(&self, input: &Matrix, target: &Matrix) -> Result<(f64, Vec<Vec<f64>>)> {
        let pass = self.build_forward(input, Some(target))?;
        let loss_node = pass.loss.expect("target supplied");
        let loss = pass.tape.value(loss_node)[0];
        if !loss.is_finite() {
            return Err(GcError::numeric("non-finite training loss"));
        }
        let grads = pass.tape.backward(loss_node);
        let out = pass
            .param_nodes
            .iter()
            .map(|&n| grads.wrt(n).to_vec())
            .collect();
        Ok((loss, out))
    }

    /// Global branch output per channel (after RevIN), mostly for tests and
    /// inspection.
    pub fn global_branch_forward(&self, input: &Matrix) -> Result<Vec<Matrix>> {
        let pass_input = self.build_forward(input, None)?;
        drop(pass_input);
        // Rebuild a minimal tape per channel to expose the branch output.
        let gamma = &self.param("revin.gamma")?.values;
        let beta = &self.param("revin.beta")?.values;
        let (xhat, _) = revin_normalize(input, gamma, beta, self.config.revin_epsilon);
        let mut result = Vec::with_capacity(self.config.channels);
        for ch in 0..self.config.channels {
            let mut tape = Tape::new();
            let param_nodes: Vec<NodeId> = self
                .params
                .iter()
                .map(|p| tape.leaf(p.rows, p.cols, p.values.clone()))
                .collect();
            let column: Vec<f64> = xhat.iter().map(|r| r[ch]).collect();
            let x = tape.vector(column);
            let z = self.global_on_tape(&mut tape, &param_nodes, x)?;
            result.push(matrix_from_node(&tape, z));
        }
        Ok(result)
    }

    /// Local branch output per channel on the tail window.
    pub fn local_branch_forward(&self, tail: &Matrix) -> Result<Vec<Matrix>> {
        if tail.len() != self.config.local_len {
            return Err(GcError::invalid(format!(
                "local branch expects {} rows, got {}",
                self.config.local_len,
                tail.len()
            )));
        }
        if self.config.patch_len > self.config.local_len {
            return Err(GcError::invalid("patch_len exceeds the local window"));
        }
        let mut result = Vec::with_capacity(self.config.channels);
        for ch in 0..self.config.channels {
            let mut tape = Tape::new();
            let param_nodes: Vec<NodeId> = self
                .params
                .iter()
                .map(|p| tape.leaf(p.rows, p.cols, p.values.clone()))
                .collect();
            let column: Vec<f64> = tail.iter().map(|r| r[ch]).collect();
            let x = tape.vector(column);
            let z = self.local_on_tape(&mut tape, &param_nodes, x);
            result.push(matrix_from_node(&tape, z));
        }
        Ok(result)
    }

    /// Serialize config and parameters to the "gcf1" checkpoint format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        let config_json = serde_json::to_vec(&self.config)
            .map_err(|e| GcError::checkpoint(format!("config serialization failed: {e}")))?;
        bytes.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&config_json);
        bytes.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            bytes.extend_from_slice(&(name.len() as u16).to_le_bytes());
            bytes.extend_from_slice(name);
            bytes.extend_from_slice(&(p.rows as u32).to_le_bytes());
            bytes.extend_from_slice(&(p.cols as u32).to_le_bytes());
            for v in &p.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, bytes)
            .map_err(|e| GcError::checkpoint(format!("cannot write {}: {e}", path.display())))
    }

    /// Load a "gcf1" checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| GcError::checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let mut cursor = Cursor::new(&bytes, path);
        let magic = cursor.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(GcError::checkpoint(format!(
                "{}: bad magic {:?}, expected version \"gcf1\"",
                path.display(),
                String::from_utf8_lossy(magic)
            )));
        }
        let config_len = cursor.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(cursor.take(config_len)?)
            .map_err(|e| GcError::checkpoint(format!("{}: config parse (version gcf1): {e}", path.display())))?;
        config.validate()?;
        let count = cursor.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cursor.u16()? as usize;
            let name = String::from_utf8(cursor.take(name_len)?.to_vec())
                .map_err(|e| GcError::checkpoint(format!("{}: parameter name: {e}", path.display())))?;
            let rows = cursor.u32()? as usize;
            let cols = cursor.u32()? as usize;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(cursor.f64()?);
            }
            params.push(Param {
                name,
                rows,
                cols,
                values,
            });
        }
        Ok(GcformerModel { config, params })
    }
}

fn matrix_from_node(tape: &Tape, node: NodeId) -> Matrix {
    let (rows, cols) = tape.shape(node);
    let v = tape.value(node);
    (0..rows)
        .map(|i| v[i * cols..(i + 1) * cols].to_vec())
        .collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GcError::checkpoint(format!(
                "{}: truncated checkpoint (version gcf1)",
                self.path.display()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
