//! Command-line entry point: synthetic data generation, training,
//! evaluation, kernel inspection, parameter accounting, and Monte Carlo
//! theorem checks.
//!
//! Configuration comes from an optional TOML file with sections mirroring
//! the library modules; `--set section.key=value` overrides win. Exit codes:
//! 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gcformer::data::{
    inject_noise, load_csv, sliding_windows, split_712, synth_generate, write_csv, Series,
    SynthKind, SynthParams, WindowedDataset,
};
use gcformer::kernels::{materialize_kernel, param_count, KernelSpec};
use gcformer::model::{AttentionAxis, DecoderMode, GcformerModel, ModelConfig};
use gcformer::svg::line_plot;
use gcformer::theory::{
    column_selection_check, noise_accumulation, report_csv, ColumnSelectConfig, MatrixKind,
    NoiseAccumConfig,
};
use gcformer::training::{evaluate, train, TrainConfig};
use gcformer::{GcError, Result};

#[derive(Parser)]
#[command(name = "gcformer", version, about = "Dual-branch global-convolution forecasting toolkit")]
struct Cli {
    /// TOML configuration file; omitted keys use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set model.hidden_dim=16 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory for all written files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for model initialization and training order.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic CSV dataset.
    Generate(GenerateArgs),
    /// Train a model on a CSV dataset and write checkpoint + reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Materialize the configured kernel as CSV and an SVG plot.
    InspectKernel(InspectArgs),
    /// Print learnable-parameter counts; with a second config, the reduction.
    ParamCount(ParamCountArgs),
    /// Run the Monte Carlo theorem checks.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// sin_mix, trend_seasonal_noise, or random_walk.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    len: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Sinusoid periods in samples (repeatable).
    #[arg(long = "period")]
    periods: Vec<f64>,
    /// Per-period amplitudes (repeatable).
    #[arg(long = "amplitude")]
    amplitudes: Vec<f64>,
    #[arg(long, default_value_t = 0.001)]
    trend: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    /// Output CSV path (default: <out>/synthetic.csv).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input CSV dataset.
    #[arg(long)]
    data: PathBuf,
    /// Convenience override for model.decoder_mode.
    #[arg(long)]
    decoder_mode: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which chronological split to score: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct InspectArgs {
    /// Kernel length to materialize (default: model.input_len).
    #[arg(long)]
    len: Option<usize>,
}

#[derive(Args)]
struct ParamCountArgs {
    /// Second config file to compare against.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Channel count used for the per-channel kernel accounting.
    #[arg(long, default_value_t = 1)]
    channels: usize,
}

#[derive(Args)]
struct TheoryArgs {
    /// noise, columns, or both.
    #[arg(long, default_value = "both")]
    experiment: String,
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    model: ModelSection,
    kernel: KernelSection,
    training: TrainingSection,
    data: DataSection,
    theory: TheorySection,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            model: ModelSection::default(),
            kernel: KernelSection::default(),
            training: TrainingSection::default(),
            data: DataSection::default(),
            theory: TheorySection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    input_len: usize,
    local_len: usize,
    pred_len: usize,
    hidden_dim: usize,
    patch_len: usize,
    patch_stride: usize,
    decoder_mode: String,
    attention_axis: String,
    channel_independent: bool,
    revin_epsilon: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_len: 336,
            local_len: 96,
            pred_len: 96,
            hidden_dim: 8,
            patch_len: 16,
            patch_stride: 8,
            decoder_mode: "attention".to_string(),
            attention_axis: "token".to_string(),
            channel_independent: true,
            revin_epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct KernelSection {
    /// msk, freq, or leg.
    kind: String,
    /// msk: weights per sub-kernel.
    base_len: usize,
    /// freq: learned low-frequency modes.
    modes: usize,
    /// leg: Legendre order d_leg.
    order: usize,
    /// leg: causal filter length over coefficient trajectories.
    kernel_len: usize,
    /// Seed for the kernel weight initialization.
    seed: u64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: "freq".to_string(),
            base_len: 16,
            modes: 64,
            order: 16,
            kernel_len: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainingSection {
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    patience: usize,
    /// Stride between training windows (larger = fewer samples).
    window_stride: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 30,
            batch_size: 32,
            learning_rate: 5e-4,
            patience: 5,
            window_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataSection {
    /// Fraction of training-input cells perturbed with noise.
    noise_fraction: f64,
    /// Noise std as a multiple of the channel std.
    noise_scale: f64,
    noise_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            noise_fraction: 0.0,
            noise_scale: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TheorySection {
    dim: usize,
    horizon: usize,
    sigma: f64,
    trials: usize,
    /// unitary_random, identity, or expanding.
    kind: String,
    rho: f64,
    rows: usize,
    cols: usize,
    kept: usize,
    a_min: f64,
    select_trials: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            dim: 4,
            horizon: 256,
            sigma: 1.0,
            trials: 10_000,
            kind: "unitary_random".to_string(),
            rho: 1.05,
            rows: 4,
            cols: 8,
            kept: 4,
            a_min: 0.1,
            select_trials: 100,
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<FileConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| GcError::data(format!("cannot read config {}: {e}", p.display())))?;
            text.parse()
                .map_err(|e| GcError::invalid(format!("config parse error: {e}")))?
        }
        None => toml::Table::new(),
    };
    for entry in overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| GcError::invalid(format!("override '{entry}' is not KEY=VALUE")))?;
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| GcError::invalid(format!("override key '{key}' must be section.field")))?;
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .map(|t| t["v"].clone())
            .unwrap_or_else(|_| toml::Value::String(value.to_string()));
        table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| GcError::invalid(format!("config section '{section}' is not a table")))?
            .insert(field.to_string(), parsed);
    }
    table
        .try_into()
        .map_err(|e| GcError::invalid(format!("config error: {e}")))
}

fn build_kernel(kernel: &KernelSection, n: usize) -> Result<KernelSpec> {
    GcformerModel::random_kernel(
        &kernel.kind,
        n,
        kernel.base_len,
        kernel.modes,
        kernel.order,
        kernel.kernel_len,
        kernel.seed,
    )
}

fn build_model_config(config: &FileConfig, channels: usize) -> Result<ModelConfig> {
    let m = &config.model;
    let model = ModelConfig {
        input_len: m.input_len,
        local_len: m.local_len,
        pred_len: m.pred_len,
        channels,
        kernel: build_kernel(&config.kernel, m.input_len)?,
        patch_len: m.patch_len,
        patch_stride: m.patch_stride,
        hidden_dim: m.hidden_dim,
        decoder_mode: DecoderMode::parse(&m.decoder_mode)?,
        attention_axis: AttentionAxis::parse(&m.attention_axis)?,
        channel_independent: m.channel_independent,
        revin_epsilon: m.revin_epsilon,
    };
    model.validate()?;
    Ok(model)
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| GcError::data(format!("cannot create output directory {}: {e}", dir.display())))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    if args.len == 0 {
        return Err(GcError::invalid("--len must be >= 1"));
    }
    let kind = SynthKind::parse(&args.kind)?;
    let defaults = SynthParams::default();
    let params = SynthParams {
        periods: if args.periods.is_empty() {
            defaults.periods
        } else {
            args.periods.clone()
        },
        amplitudes: if args.amplitudes.is_empty() {
            defaults.amplitudes
        } else {
            args.amplitudes.clone()
        },
        trend: args.trend,
        noise_std: args.noise_std,
    };
    let series = synth_generate(kind, args.len, args.channels, cli.seed, &params)?;
    let path = match &args.output {
        Some(p) => p.clone(),
        None => {
            ensure_out(&cli.out)?;
            cli.out.join("synthetic.csv")
        }
    };
    write_csv(&series, &path)?;
    println!(
        "wrote {} rows x {} channels to {}",
        series.len(),
        series.channels(),
        path.display()
    );
    Ok(())
}

struct Splits {
    train: WindowedDataset,
    val: WindowedDataset,
    test: WindowedDataset,
    series: Series,
}

fn load_splits(config: &FileConfig, data: &Path, stride: usize) -> Result<Splits> {
    if !data.exists() {
        return Err(GcError::data(format!("dataset not found: {}", data.display())));
    }
    let series = load_csv(data)?;
    let split = split_712(&series)?;
    let n = config.model.input_len;
    let h = config.model.pred_len;
    let mut train = sliding_windows(&split.train, n, h, stride, "train")?;
    let val = sliding_windows(&split.val, n, h, stride.max(1), "val");
    let test = sliding_windows(&split.test, n, h, 1, "test")?;
    let val = val?;
    if config.data.noise_fraction > 0.0 && config.data.noise_scale != 0.0 {
        let stds = split.train.channel_stds();
        train = inject_noise(
            &train,
            config.data.noise_fraction,
            config.data.noise_scale,
            &stds,
            config.data.noise_seed,
        )?;
    }
    Ok(Splits {
        train,
        val,
        test,
        series,
    })
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut config = load_config(cli.config.as_deref(), &cli.overrides)?;
    if let Some(mode) = &args.decoder_mode {
        config.model.decoder_mode = mode.clone();
    }
    ensure_out(&cli.out)?;
    let splits = load_splits(&config, &args.data, config.training.window_stride)?;
    let model_config = build_model_config(&config, splits.series.channels())?;
    let model = GcformerModel::init(model_config, cli.seed)?;
    let train_config = TrainConfig {
        epochs: config.training.epochs,
        batch_size: config.training.batch_size,
        learning_rate: config.training.learning_rate,
        patience: config.training.patience,
        seed: cli.seed,
    };
    let (best, report) = train(&model, &splits.train, &splits.val, &splits.test, &train_config)?;

    let checkpoint = cli.out.join("model.ckpt");
    best.save(&checkpoint)?;
    let report_path = cli.out.join("train_report.csv");
    std::fs::write(&report_path, report.to_csv())?;

    // Forecast overlay for the first test window.
    let sample = &splits.test.samples[0];
    let pred = best.forward(&sample.input)?;
    let mut overlay = String::from("time,channel,actual,predicted\n");
    for (t, (pr, tr)) in pred.iter().zip(&sample.target).enumerate() {
        for ch in 0..pr.len() {
            use std::fmt::Write as _;
            let _ = writeln!(overlay, "{t},{ch},{:.12},{:.12}", tr[ch], pr[ch]);
        }
    }
    let overlay_path = cli.out.join("forecast.csv");
    std::fs::write(&overlay_path, overlay)?;
    let actual: Vec<f64> = sample.target.iter().map(|r| r[0]).collect();
    let predicted: Vec<f64> = pred.iter().map(|r| r[0]).collect();
    let svg = line_plot(
        "forecast (channel 0)",
        &[("actual", &actual), ("predicted", &predicted)],
    );
    std::fs::write(cli.out.join("forecast.svg"), svg)?;

    println!(
        "trained {} epochs (best {}), test mse {:.6}, test mae {:.6}",
        report.epochs.len(),
        report.best_epoch,
        report.test_mse,
        report.test_mae
    );
    println!("checkpoint: {}", checkpoint.display());
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    let model = GcformerModel::load(&args.checkpoint)?;
    if !args.data.exists() {
        return Err(GcError::data(format!("dataset not found: {}", args.data.display())));
    }
    let series = load_csv(&args.data)?;
    if series.channels() != model.config.channels {
        return Err(GcError::checkpoint(format!(
            "checkpoint expects {} channels but dataset has {} (version gcf1)",
            model.config.channels,
            series.channels()
        )));
    }
    let split = split_712(&series)?;
    let segment = match args.split.as_str() {
        "train" => &split.train,
        "val" => &split.val,
        "test" => &split.test,
        other => return Err(GcError::invalid(format!("unknown split '{other}'"))),
    };
    let ds = sliding_windows(
        segment,
        model.config.input_len,
        model.config.pred_len,
        1,
        &args.split,
    )?;
    let (mse, mae) = evaluate(&model, &ds)?;
    ensure_out(&cli.out)?;
    let mut csv = String::from("split,horizon,mse,mae\n");
    use std::fmt::Write as _;
    let _ = writeln!(csv, "{},{},{mse:.12},{mae:.12}", args.split, model.config.pred_len);
    std::fs::write(cli.out.join("metrics.csv"), csv)?;
    let _ = config; // config only affects overrides/validation for now
    println!("split {} horizon {}: mse {:.6} mae {:.6}", args.split, model.config.pred_len, mse, mae);
    Ok(())
}

fn cmd_inspect_kernel(cli: &Cli, args: &InspectArgs) -> Result<()> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    let n = args.len.unwrap_or(config.model.input_len);
    let spec = build_kernel(&config.kernel, n)?;
    let kernel = materialize_kernel(&spec, n)?;
    ensure_out(&cli.out)?;
    // The kernel is shared across channels; emit one block per channel so
    // downstream plotting has per-channel rows.
    let channels = 1usize.max(1);
    let mut csv = String::from("channel,index,value\n");
    use std::fmt::Write as _;
    for ch in 0..channels {
        for (i, v) in kernel.iter().enumerate() {
            let _ = writeln!(csv, "{ch},{i},{v:.12}");
        }
    }
    std::fs::write(cli.out.join("kernel.csv"), csv)?;
    let svg = line_plot(
        &format!("{} kernel, n={n}", spec.variant_name()),
        &[("kernel", &kernel)],
    );
    std::fs::write(cli.out.join("kernel.svg"), svg)?;
    println!(
        "materialized {} kernel of length {n} -> {}",
        spec.variant_name(),
        cli.out.join("kernel.csv").display()
    );
    Ok(())
}

fn count_table(config: &FileConfig, channels: usize) -> Result<(Vec<(String, usize)>, usize)> {
    let model_config = build_model_config(config, channels)?;
    let model = GcformerModel::init(model_config.clone(), 0)?;
    let mut rows = Vec::new();
    // The kernel row uses the per-channel accounting (weights instantiated
    // per channel), matching how parameter efficiency is usually reported.
    let kernel_count = param_count(&model_config.kernel, model_config.input_len, channels);
    rows.push(("kernel".to_string(), kernel_count));
    let mut total = kernel_count;
    for (group, count) in model.param_counts_by_group() {
        if group == "kernel" {
            continue;
        }
        total += count;
        rows.push((group, count));
    }
    Ok((rows, total))
}

fn cmd_param_count(cli: &Cli, args: &ParamCountArgs) -> Result<()> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    let channels = args.channels.max(1);
    let (rows, total) = count_table(&config, channels)?;
    println!("component,params");
    for (name, count) in &rows {
        println!("{name},{count}");
    }
    println!("total,{total}");
    if let Some(other_path) = &args.compare {
        let other = load_config(Some(other_path), &[])?;
        let (_, other_total) = count_table(&other, channels)?;
        let reduction = 100.0 * (1.0 - total.min(other_total) as f64 / total.max(other_total) as f64);
        println!("comparison_total,{other_total}");
        println!("reduction_percent,{reduction:.2}");
    }
    ensure_out(&cli.out)?;
    let mut csv = String::from("component,params\n");
    use std::fmt::Write as _;
    for (name, count) in &rows {
        let _ = writeln!(csv, "{name},{count}");
    }
    let _ = writeln!(csv, "total,{total}");
    std::fs::write(cli.out.join("param_count.csv"), csv)?;
    Ok(())
}

fn cmd_theory(cli: &Cli, args: &TheoryArgs) -> Result<()> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    ensure_out(&cli.out)?;
    let t = &config.theory;
    let mut all_pass = true;

    if args.experiment == "noise" || args.experiment == "both" {
        let kind = match t.kind.as_str() {
            "unitary_random" => MatrixKind::UnitaryRandom,
            "identity" => MatrixKind::Identity,
            "expanding" => MatrixKind::Expanding(t.rho),
            other => return Err(GcError::invalid(format!("unknown matrix kind '{other}'"))),
        };
        let report = noise_accumulation(&NoiseAccumConfig {
            dim: t.dim,
            horizon: t.horizon,
            sigma: t.sigma,
            trials: t.trials,
            kind,
            seed: cli.seed,
        })?;
        let bound = t.sigma * (t.horizon as f64).sqrt();
        std::fs::write(
            cli.out.join("noise_accumulation.csv"),
            report_csv(&report.norms, bound * 3.0),
        )?;
        match kind {
            MatrixKind::Expanding(_) => {
                // The contrast case: divergence past the sqrt(theta) scale is
                // the expected outcome.
                let contrast = report.ratio > 10.0 || report.diverged;
                println!(
                    "noise_accumulation: status=expected-divergence ratio={:.3} {}",
                    report.ratio,
                    if contrast { "PASS" } else { "FAIL" }
                );
                all_pass &= contrast;
            }
            _ => {
                let ok = report.ratio >= 0.5 && report.ratio <= 2.0 && report.tail_exceedance < 0.05;
                println!(
                    "noise_accumulation: ratio={:.3} tail_exceedance={:.4} {}",
                    report.ratio,
                    report.tail_exceedance,
                    if ok { "PASS" } else { "FAIL" }
                );
                all_pass &= ok;
            }
        }
    }

    if args.experiment == "columns" || args.experiment == "both" {
        let report = column_selection_check(&ColumnSelectConfig {
            rows: t.rows,
            cols: t.cols,
            kept: t.kept,
            a_min: t.a_min,
            trials: t.select_trials,
            seed: cli.seed,
        })?;
        std::fs::write(
            cli.out.join("column_selection.csv"),
            report_csv(&report.errors, report.bound),
        )?;
        let ok = report.violations == 0;
        println!(
            "column_selection: bound={:.6} violations={}/{} {}",
            report.bound,
            report.violations,
            report.errors.len(),
            if ok { "PASS" } else { "FAIL" }
        );
        all_pass &= ok;
    }

    if all_pass {
        Ok(())
    } else {
        Err(GcError::numeric("one or more theorem checks failed"))
    }
}

fn exit_code_for(err: &GcError) -> u8 {
    match err {
        GcError::InvalidArgument(_) => 2,
        GcError::Data(_) | GcError::Checkpoint(_) | GcError::Io(_) => 3,
        GcError::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => cmd_generate(&cli, args),
        Command::Train(args) => cmd_train(&cli, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, args),
        Command::InspectKernel(args) => cmd_inspect_kernel(&cli, args),
        Command::ParamCount(args) => cmd_param_count(&cli, args),
        Command::Theory(args) => cmd_theory(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
