//! Acceptance gate: one test per release criterion, each printing a single
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --show-output`).

use std::path::Path;
use std::process::Command;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use gcformer::data::{sliding_windows, split_712, synth_generate, SynthKind, SynthParams};
use gcformer::kernels::{FreqKernelParams, KernelSpec, LegKernelParams, MultiScaleKernelParams};
use gcformer::legendre::{
    discretize, legt_matrices, legt_project, legt_reconstruct, legt_system, spectral_radius,
    ssm_recurrence, StateSpaceSystem,
};
use gcformer::model::{AttentionAxis, DecoderMode, GcformerModel, Matrix, ModelConfig};
use gcformer::numerics::{causal_convolve, circular_convolve};
use gcformer::theory::{noise_accumulation, MatrixKind, NoiseAccumConfig};
use gcformer::training::{train, TrainConfig};

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("{}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gcformer"))
}

// ---------------------------------------------------------------------------
// 1. FFT-convolution oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn fft_convolution_oracle_equivalence() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = if case < 8 {
            // Force awkward fixed sizes including non-powers-of-two.
            [3, 5, 17, 100, 243, 510, 1000, 1024][case]
        } else {
            rng.random_range(3..=1024)
        };
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let circ = circular_convolve(&u, &k).unwrap();
        let caus = causal_convolve(&u, &k).unwrap();
        for t in 0..n {
            let mut direct_circ = 0.0;
            let mut direct_caus = 0.0;
            for i in 0..n {
                direct_circ += k[i] * u[(t + n - i) % n];
                if i <= t {
                    direct_caus += k[i] * u[t - i];
                }
            }
            let scale = direct_circ.abs().max(1.0);
            worst = worst.max((circ[t] - direct_circ).abs() / scale);
            let scale = direct_caus.abs().max(1.0);
            worst = worst.max((caus[t] - direct_caus).abs() / scale);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "fft-convolution-oracle",
        worst < 1e-9 && elapsed < 10.0,
        &format!("worst rel err {worst:.2e}, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 2. State-space equivalence (kernel precomputation identity)
// ---------------------------------------------------------------------------

#[test]
fn state_space_equivalence() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=16);
        let n = rng.random_range(8..=512);
        let a_cont = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0f64..1.0));
        // Shift the spectrum left of the imaginary axis so the discretized
        // system stays stable over long inputs.
        let norm = a_cont.norm().max(1e-9);
        let a_cont = a_cont * (1.0 / norm) - nalgebra::DMatrix::identity(d, d) * 1.2;
        let b = nalgebra::DVector::from_fn(d, |_, _| rng.random_range(-1.0f64..1.0));
        let c = nalgebra::RowDVector::from_fn(d, |_, _| rng.random_range(-1.0f64..1.0));
        let feed = rng.random_range(-0.5..0.5);
        let (a_bar, b_bar) = discretize(&a_cont, &b, 0.3).unwrap();
        let sys = StateSpaceSystem {
            a: a_bar,
            b: b_bar,
            c,
            d: feed,
            discrete: true,
        };
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let via_recurrence = ssm_recurrence(&sys, &u).unwrap();
        let kernel = gcformer::legendre::materialize_ssm_kernel(&sys, n).unwrap();
        let conv = causal_convolve(&u, &kernel).unwrap();
        for t in 0..n {
            let via_kernel = conv[t] + feed * u[t];
            let scale = via_recurrence[t].abs().max(1.0);
            worst = worst.max((via_recurrence[t] - via_kernel).abs() / scale);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "state-space-equivalence",
        worst < 1e-8 && elapsed < 10.0,
        &format!("worst rel err {worst:.2e}, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 3. LegT correctness
// ---------------------------------------------------------------------------

#[test]
fn legt_correctness() {
    // Exact integer generator matrices at order 3.
    let (a, b) = legt_matrices(3).unwrap();
    let expect_a = [[1.0, 1.0, 1.0], [-3.0, 3.0, 3.0], [5.0, -5.0, 5.0]];
    let expect_b = [1.0, -3.0, 5.0];
    let mut exact = true;
    for i in 0..3 {
        for j in 0..3 {
            exact &= a[(i, j)] == expect_a[i][j];
        }
        exact &= b[i] == expect_b[i];
    }

    // Discretized stability across window lengths.
    let mut stable = true;
    let mut radii = Vec::new();
    for theta in [64usize, 256, 1024] {
        let sys = legt_system(16, theta as f64).unwrap();
        let rho = spectral_radius(&sys.a, 500);
        radii.push(rho);
        stable &= rho <= 1.0 + 1e-9;
    }

    // Two-sinusoid reconstruction improves sharply with order.
    let n = 336;
    let signal: Vec<f64> = (0..n)
        .map(|t| {
            let x = t as f64;
            (x * std::f64::consts::TAU / 48.0).sin() + 0.5 * (x * std::f64::consts::TAU / 113.0).sin()
        })
        .collect();
    let mse_of = |order: usize| {
        let coeffs = legt_project(&signal, order, None).unwrap();
        let recon = legt_reconstruct(&coeffs, n);
        signal
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64
    };
    let ratio = mse_of(8) / mse_of(64);

    verdict(
        "legt-correctness",
        exact && stable && ratio >= 10.0,
        &format!(
            "matrices exact={exact}, radii {:?}, mse(d=8)/mse(d=64)={ratio:.1}",
            radii
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Gradient verification
// ---------------------------------------------------------------------------

fn toy_config(kernel: KernelSpec) -> ModelConfig {
    ModelConfig {
        input_len: 64,
        local_len: 32,
        pred_len: 8,
        channels: 2,
        kernel,
        patch_len: 8,
        patch_stride: 4,
        hidden_dim: 4,
        decoder_mode: DecoderMode::Attention,
        attention_axis: AttentionAxis::Token,
        channel_independent: true,
        revin_epsilon: 1e-5,
    }
}

fn toy_input(n: usize, c: usize) -> Matrix {
    (0..n)
        .map(|t| {
            (0..c)
                .map(|ch| ((t as f64) * 0.23 + ch as f64 * 1.7).sin() + 0.05 * t as f64 * 0.01)
                .collect()
        })
        .collect()
}

#[test]
fn gradient_verification() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let kernels: Vec<(&str, KernelSpec)> = vec![
        (
            "msk",
            KernelSpec::Msk(
                MultiScaleKernelParams::new(
                    3,
                    8,
                    0.5,
                    (0..3)
                        .map(|_| (0..8).map(|_| rng.random_range(-0.2..0.2)).collect())
                        .collect(),
                )
                .unwrap(),
            ),
        ),
        (
            "freq",
            KernelSpec::Freq(
                FreqKernelParams::new(
                    (0..16).map(|_| rng.random_range(-0.3..0.3)).collect(),
                    (0..16).map(|_| rng.random_range(-0.3..0.3)).collect(),
                )
                .unwrap(),
            ),
        ),
        (
            "leg",
            KernelSpec::Leg(
                LegKernelParams::new(
                    8,
                    12,
                    (0..12)
                        .map(|_| (0..8).map(|_| rng.random_range(-0.3..0.3)).collect())
                        .collect(),
                )
                .unwrap(),
            ),
        ),
    ];
    let input = toy_input(64, 2);
    let target: Matrix = (0..8)
        .map(|t| vec![(t as f64 * 0.4).cos(), 0.3 - t as f64 * 0.05])
        .collect();
    let mut all_ok = true;
    let mut detail = String::new();
    for (name, kernel) in kernels {
        let model = GcformerModel::init(toy_config(kernel), 55).unwrap();
        let (_, grads) = model.loss_and_gradients(&input, &target).unwrap();
        let kernel_param_indices: Vec<usize> = model
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with("kernel."))
            .map(|(i, _)| i)
            .collect();
        let mut checked = 0usize;
        let mut worst: f64 = 0.0;
        // Every parameter slot, kernel payload first, shuffled within the rest.
        let mut targets: Vec<(usize, usize)> = Vec::new();
        for &pi in &kernel_param_indices {
            for vi in 0..model.params[pi].values.len() {
                targets.push((pi, vi));
            }
        }
        let mut rest: Vec<(usize, usize)> = (0..model.params.len())
            .filter(|pi| !kernel_param_indices.contains(pi))
            .flat_map(|pi| (0..model.params[pi].values.len()).map(move |vi| (pi, vi)))
            .collect();
        rest.shuffle(&mut rng);
        targets.extend(rest);
        for (pi, vi) in targets {
            if checked >= 12 {
                break;
            }
            let analytic = grads[pi][vi];
            let eps = 1e-5;
            let bump = |delta: f64| {
                let mut m = model.clone();
                m.params[pi].values[vi] += delta;
                m.loss_and_gradients(&input, &target).unwrap().0
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let scale = analytic.abs().max(numeric.abs());
            if scale < 1e-6 {
                continue;
            }
            worst = worst.max((analytic - numeric).abs() / scale);
            checked += 1;
        }
        let ok = checked >= 10 && worst < 1e-4;
        all_ok &= ok;
        detail.push_str(&format!("{name}: {checked} params, worst {worst:.2e}; "));
    }
    let elapsed = start.elapsed().as_secs_f64();
    all_ok &= elapsed < 60.0;
    verdict(
        "gradient-verification",
        all_ok,
        &format!("{detail}{elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// 5. RevIN invertibility
// ---------------------------------------------------------------------------

#[test]
fn revin_invertibility() {
    use gcformer::model::{revin_denormalize, revin_normalize};
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let t = rng.random_range(8..64);
        let c = rng.random_range(1..5);
        let near_constant = instance % 5 == 0;
        let x: Matrix = (0..t)
            .map(|_| {
                (0..c)
                    .map(|_| {
                        if near_constant {
                            3.0 + rng.random_range(-1e-7..1e-7)
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (norm, state) = revin_normalize(&x, &gamma, &beta, 1e-5);
        let back = revin_denormalize(&norm, &state).unwrap();
        for (a, b) in x.iter().flatten().zip(back.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        "revin-invertibility",
        worst < 1e-10,
        &format!("worst abs err {worst:.2e} over 100 instances"),
    );
}

// ---------------------------------------------------------------------------
// 6. Parameter sublinearity via the CLI accounting
// ---------------------------------------------------------------------------

fn kernel_total(out: &std::process::Output) -> usize {
    let stdout = String::from_utf8_lossy(&out.stdout);
    stdout
        .lines()
        .find(|l| l.starts_with("kernel,"))
        .and_then(|l| l.split(',').nth(1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

#[test]
fn parameter_sublinearity() {
    let dir = tempfile::tempdir().unwrap();
    let run = |n: usize| {
        bin()
            .args([
                "param-count",
                "--channels",
                "3",
                "--set",
                "kernel.kind=\"msk\"",
                "--set",
                "kernel.base_len=16",
                "--set",
                &format!("model.input_len={n}"),
                "--set",
                &format!("model.local_len={}", 96),
                "--out",
            ])
            .arg(dir.path())
            .output()
            .unwrap()
    };
    let out_1024 = run(1024);
    let out_2048 = run(2048);
    let k1 = kernel_total(&out_1024);
    let k2 = kernel_total(&out_2048);
    let pass = out_1024.status.success()
        && out_2048.status.success()
        && k2 - k1 == 16 * 3;
    verdict(
        "parameter-sublinearity",
        pass,
        &format!("kernel params n=1024: {k1}, n=2048: {k2}, delta {}", k2 as i64 - k1 as i64),
    );
}

// ---------------------------------------------------------------------------
// 7. Directional boosting
// ---------------------------------------------------------------------------

fn boosting_fixture() -> (gcformer::data::WindowedDataset, gcformer::data::WindowedDataset, gcformer::data::WindowedDataset) {
    let params = SynthParams {
        periods: vec![240.0],
        amplitudes: vec![1.0],
        ..SynthParams::default()
    };
    let series = synth_generate(SynthKind::SinMix, 4800, 1, 77, &params).unwrap();
    let split = split_712(&series).unwrap();
    (
        sliding_windows(&split.train, 336, 96, 24, "train").unwrap(),
        sliding_windows(&split.val, 336, 96, 8, "val").unwrap(),
        sliding_windows(&split.test, 336, 96, 8, "test").unwrap(),
    )
}

fn boosting_config(mode: DecoderMode) -> ModelConfig {
    ModelConfig {
        input_len: 336,
        local_len: 96,
        pred_len: 96,
        channels: 1,
        kernel: GcformerModel::random_kernel("freq", 336, 16, 24, 16, 8, 7).unwrap(),
        patch_len: 16,
        patch_stride: 8,
        hidden_dim: 8,
        decoder_mode: mode,
        attention_axis: AttentionAxis::Token,
        channel_independent: true,
        revin_epsilon: 1e-5,
    }
}

#[test]
fn directional_boosting() {
    let start = std::time::Instant::now();
    let (train_set, val_set, test_set) = boosting_fixture();
    let config = TrainConfig {
        epochs: 10,
        batch_size: 16,
        learning_rate: 3e-3,
        patience: 4,
        seed: 0,
    };
    let mut full_mse = 0.0;
    let mut local_mse = 0.0;
    for seed in [1u64, 2, 3] {
        let tc = TrainConfig { seed, ..config.clone() };
        let full = GcformerModel::init(boosting_config(DecoderMode::Attention), seed).unwrap();
        let (_, report) = train(&full, &train_set, &val_set, &test_set, &tc).unwrap();
        full_mse += report.test_mse / 3.0;
        let local = GcformerModel::init(boosting_config(DecoderMode::LocalOnly), seed).unwrap();
        let (_, report) = train(&local, &train_set, &val_set, &test_set, &tc).unwrap();
        local_mse += report.test_mse / 3.0;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let improvement = 100.0 * (1.0 - full_mse / local_mse);
    verdict(
        "directional-boosting",
        improvement >= 5.0 && elapsed < 600.0,
        &format!(
            "full {full_mse:.5} vs local-only {local_mse:.5}: {improvement:.1}% better, {elapsed:.0}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Decoder ablation ordering
// ---------------------------------------------------------------------------

#[test]
fn decoder_ablation_ordering() {
    let params = SynthParams {
        periods: vec![48.0, 13.0],
        amplitudes: vec![1.0, 0.4],
        ..SynthParams::default()
    };
    let series = synth_generate(SynthKind::SinMix, 1200, 1, 31, &params).unwrap();
    let split = split_712(&series).unwrap();
    let train_set = sliding_windows(&split.train, 64, 16, 4, "train").unwrap();
    let val_set = sliding_windows(&split.val, 64, 16, 2, "val").unwrap();
    let test_set = sliding_windows(&split.test, 64, 16, 2, "test").unwrap();

    let config_for = |mode: DecoderMode| ModelConfig {
        input_len: 64,
        local_len: 32,
        pred_len: 16,
        channels: 1,
        kernel: GcformerModel::random_kernel("msk", 64, 8, 8, 8, 4, 3).unwrap(),
        patch_len: 8,
        patch_stride: 4,
        hidden_dim: 6,
        decoder_mode: mode,
        attention_axis: AttentionAxis::Token,
        channel_independent: true,
        revin_epsilon: 1e-5,
    };
    let mse_for = |mode: DecoderMode, seed: u64| {
        let model = GcformerModel::init(config_for(mode), seed).unwrap();
        let tc = TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 3e-3,
            patience: 4,
            seed,
        };
        train(&model, &train_set, &val_set, &test_set, &tc)
            .unwrap()
            .1
            .test_mse
    };
    let mut attention_wins = 0;
    let mut concat_wins = 0;
    let mut detail = String::new();
    for seed in [1u64, 2, 3] {
        let a = mse_for(DecoderMode::Attention, seed);
        let c = mse_for(DecoderMode::Concat, seed);
        let s = mse_for(DecoderMode::SeriesLg, seed);
        if a < s {
            attention_wins += 1;
        }
        if c < s {
            concat_wins += 1;
        }
        detail.push_str(&format!("seed {seed}: attn {a:.4} concat {c:.4} series_lg {s:.4}; "));
    }
    verdict(
        "decoder-ablation-ordering",
        attention_wins >= 2 && concat_wins >= 2,
        &format!("{detail}attention {attention_wins}/3, concat {concat_wins}/3 vs series_lg"),
    );
}

// ---------------------------------------------------------------------------
// 9. Theorem 2 Monte Carlo
// ---------------------------------------------------------------------------

#[test]
fn theorem2_monte_carlo() {
    let start = std::time::Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for theta in [16usize, 64, 256, 1024] {
        let report = noise_accumulation(&NoiseAccumConfig {
            dim: 4,
            horizon: theta,
            sigma: 1.0,
            trials: 10_000,
            kind: MatrixKind::UnitaryRandom,
            seed: 909,
        })
        .unwrap();
        ok &= report.ratio >= 0.5 && report.ratio <= 2.0;
        detail.push_str(&format!("theta {theta}: ratio {:.3}; ", report.ratio));
    }
    // Identity anchor: scalar sum of 100 standard Gaussians has std 10.
    let anchor = noise_accumulation(&NoiseAccumConfig {
        dim: 1,
        horizon: 101,
        sigma: 1.0,
        trials: 10_000,
        kind: MatrixKind::Identity,
        seed: 910,
    })
    .unwrap();
    let std = (anchor.norms.iter().map(|n| n * n).sum::<f64>() / anchor.norms.len() as f64).sqrt();
    ok &= (std - 10.0).abs() / 10.0 < 0.05;
    detail.push_str(&format!("identity std {std:.3}; "));
    // Expanding contrast.
    let expanding = noise_accumulation(&NoiseAccumConfig {
        dim: 4,
        horizon: 256,
        sigma: 1.0,
        trials: 1000,
        kind: MatrixKind::Expanding(1.05),
        seed: 911,
    })
    .unwrap();
    ok &= expanding.ratio > 10.0;
    detail.push_str(&format!("expanding ratio {:.1}; ", expanding.ratio));
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 60.0;
    verdict("theorem2-monte-carlo", ok, &format!("{detail}{elapsed:.1}s"));
}

// ---------------------------------------------------------------------------
// 10. Theorem 3 Monte Carlo
// ---------------------------------------------------------------------------

#[test]
fn theorem3_monte_carlo() {
    use gcformer::theory::{column_selection_check, ColumnSelectConfig};
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut violations = 0usize;
    let mut trials = 0usize;
    for round in 0..10 {
        let rows = rng.random_range(4..=32);
        let cols = rng.random_range(8..=64);
        let kept = rng.random_range(0..=cols);
        let report = column_selection_check(&ColumnSelectConfig {
            rows,
            cols,
            kept,
            a_min: rng.random_range(0.01..0.5),
            trials: 10,
            seed: 2000 + round,
        })
        .unwrap();
        violations += report.violations;
        trials += report.errors.len();
    }
    verdict(
        "theorem3-monte-carlo",
        violations == 0 && trials == 100,
        &format!("{violations} violations in {trials} trials"),
    );
}

// ---------------------------------------------------------------------------
// 11. Robustness to training noise
// ---------------------------------------------------------------------------

#[test]
fn robustness_protocol() {
    use gcformer::data::inject_noise;
    let params = SynthParams {
        periods: vec![24.0],
        amplitudes: vec![1.0],
        ..SynthParams::default()
    };
    let series = synth_generate(SynthKind::SinMix, 900, 1, 13, &params).unwrap();
    let split = split_712(&series).unwrap();
    let clean_train = sliding_windows(&split.train, 64, 16, 3, "train").unwrap();
    let val_set = sliding_windows(&split.val, 64, 16, 1, "val").unwrap();
    let test_set = sliding_windows(&split.test, 64, 16, 1, "test").unwrap();
    let stds = split.train.channel_stds();

    let config = ModelConfig {
        input_len: 64,
        local_len: 32,
        pred_len: 16,
        channels: 1,
        kernel: GcformerModel::random_kernel("freq", 64, 16, 8, 8, 4, 5).unwrap(),
        patch_len: 8,
        patch_stride: 4,
        hidden_dim: 6,
        decoder_mode: DecoderMode::Attention,
        attention_axis: AttentionAxis::Token,
        channel_independent: true,
        revin_epsilon: 1e-5,
    };
    let mut mses = Vec::new();
    for &p in &[0.0, 0.01, 0.05, 0.10] {
        let train_set = inject_noise(&clean_train, p, 1.0, &stds, 42).unwrap();
        let model = GcformerModel::init(config.clone(), 6).unwrap();
        let tc = TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 3e-3,
            patience: 4,
            seed: 6,
        };
        let (_, report) = train(&model, &train_set, &val_set, &test_set, &tc).unwrap();
        mses.push(report.test_mse);
    }
    let monotone = mses.windows(2).all(|w| w[1] >= w[0] * 0.95);
    verdict(
        "robustness-protocol",
        monotone,
        &format!("test mse by noise fraction: {mses:?}"),
    );
}

// ---------------------------------------------------------------------------
// 12. Training determinism through the CLI
// ---------------------------------------------------------------------------

#[test]
fn training_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.csv");
    let status = bin()
        .args([
            "generate", "--kind", "sin_mix", "--len", "900", "--channels", "1", "--period", "24",
            "--seed", "5", "--output",
        ])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let run = |out: &Path| {
        let status = bin()
            .args([
                "train",
                "--data",
            ])
            .arg(&data)
            .args([
                "--seed",
                "11",
                "--set",
                "model.input_len=64",
                "--set",
                "model.local_len=32",
                "--set",
                "model.pred_len=16",
                "--set",
                "model.patch_len=8",
                "--set",
                "model.patch_stride=4",
                "--set",
                "model.hidden_dim=6",
                "--set",
                "kernel.modes=8",
                "--set",
                "training.epochs=3",
                "--set",
                "training.window_stride=4",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    let mut identical = true;
    for file in ["model.ckpt", "train_report.csv", "forecast.csv"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        identical &= a == b;
    }
    verdict(
        "training-determinism",
        identical,
        "checkpoint, report, and forecast byte-identical across reruns",
    );
}
