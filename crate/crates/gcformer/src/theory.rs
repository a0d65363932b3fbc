//! Monte Carlo checks of the two appendix results: noise accumulation under
//! repeated application of a unitary transition matrix stays at scale
//! O(sigma * sqrt(theta)), and keeping the first `s` columns of a matrix
//! whose tail entries are bounded by `a_min` incurs Frobenius error at most
//! `sqrt(d (n - s)) * a_min`.
//!
//! Per-trial RNG streams are derived from (seed, trial index), so results do
//! not depend on evaluation order.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GcError, Result};

/// Transition-matrix family for the accumulation experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixKind {
    /// Haar-ish orthogonal matrix from QR of a Gaussian matrix.
    UnitaryRandom,
    Identity,
    /// `rho * I` with `rho > 1`: the contrast case that blows up.
    Expanding(f64),
}

#[derive(Debug, Clone)]
pub struct NoiseAccumConfig {
    pub dim: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub trials: usize,
    pub kind: MatrixKind,
    pub seed: u64,
}

/// Outcome of one accumulation experiment.
#[derive(Debug, Clone)]
pub struct NoiseAccumReport {
    /// Per-trial norms of the accumulated noise term.
    pub norms: Vec<f64>,
    /// Empirical per-coordinate scale: sqrt(mean(norm^2) / d).
    pub empirical_scale: f64,
    /// `empirical_scale / (sigma * sqrt(horizon))`.
    pub ratio: f64,
    /// Fraction of trials with norm above `3 sigma sqrt(d * horizon)`.
    pub tail_exceedance: f64,
    /// True when a trial overflowed (expected for expanding matrices).
    pub diverged: bool,
}

impl NoiseAccumConfig {
    fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(GcError::invalid("noise accumulation needs >= 100 trials"));
        }
        if self.horizon < 1 {
            return Err(GcError::invalid("horizon must be >= 1"));
        }
        if self.sigma < 0.0 {
            return Err(GcError::invalid("sigma must be non-negative"));
        }
        if self.dim < 1 {
            return Err(GcError::invalid("state dimension must be >= 1"));
        }
        if let MatrixKind::Expanding(rho) = self.kind {
            if rho <= 1.0 {
                return Err(GcError::invalid("expanding kind needs rho > 1"));
            }
        }
        Ok(())
    }
}

/// Draw an orthogonal matrix via QR of a standard Gaussian matrix, with the
/// sign convention fixed so the decomposition is unique.
pub fn random_unitary(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let g = DMatrix::from_fn(dim, dim, |_, _| normal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Check `||A x|| = ||x||` on random vectors.
pub fn verify_unitary(a: &DMatrix<f64>, rng: &mut impl Rng, tol: f64) -> bool {
    let d = a.nrows();
    for _ in 0..8 {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0f64));
        let nx = x.norm();
        if nx < 1e-12 {
            continue;
        }
        if ((a * &x).norm() - nx).abs() > tol * nx.max(1.0) {
            return false;
        }
    }
    true
}

/// Sample the accumulated noise term `sum_{i=1}^{theta-1} A^i e_{t-i}` across
/// trials and report its scale and tail statistics.
pub fn noise_accumulation(config: &NoiseAccumConfig) -> Result<NoiseAccumReport> {
    config.validate()?;
    let d = config.dim;
    let mut setup_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = match config.kind {
        MatrixKind::UnitaryRandom => {
            let m = random_unitary(d, &mut setup_rng);
            if !verify_unitary(&m, &mut setup_rng, 1e-10) {
                return Err(GcError::numeric("sampled matrix failed the unitarity check"));
            }
            m
        }
        MatrixKind::Identity => DMatrix::identity(d, d),
        MatrixKind::Expanding(rho) => DMatrix::identity(d, d) * rho,
    };
    let normal = Normal::new(0.0, 1.0).map_err(|e| GcError::invalid(e.to_string()))?;

    let mut norms = Vec::with_capacity(config.trials);
    let mut diverged = false;
    for trial in 0..config.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(trial as u64),
        );
        // Horner form: acc = A (e_{theta-1} + A (e_{theta-2} + ...)), which
        // realizes sum_{i=1}^{theta-1} A^i e_i with one matvec per term.
        let mut acc = DVector::<f64>::zeros(d);
        for _ in 1..config.horizon {
            let eps = DVector::from_fn(d, |_, _| config.sigma * normal.sample(&mut rng));
            acc = &a * (eps + acc);
        }
        let norm = acc.norm();
        if !norm.is_finite() {
            diverged = true;
            norms.push(f64::INFINITY);
        } else {
            norms.push(norm);
        }
    }

    let finite: Vec<f64> = norms.iter().copied().filter(|n| n.is_finite()).collect();
    let empirical_scale = if finite.is_empty() {
        f64::INFINITY
    } else {
        (finite.iter().map(|n| n * n).sum::<f64>() / finite.len() as f64 / d as f64).sqrt()
    };
    let reference = config.sigma * (config.horizon as f64).sqrt();
    let ratio = if reference > 0.0 {
        empirical_scale / reference
    } else if empirical_scale == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let tail_mu = 3.0 * config.sigma * ((d * config.horizon) as f64).sqrt();
    let tail_exceedance = if config.sigma == 0.0 {
        0.0
    } else {
        norms.iter().filter(|n| **n > tail_mu).count() as f64 / norms.len() as f64
    };
    Ok(NoiseAccumReport {
        norms,
        empirical_scale,
        ratio,
        tail_exceedance,
        diverged: diverged || !empirical_scale.is_finite(),
    })
}

#[derive(Debug, Clone)]
pub struct ColumnSelectConfig {
    pub rows: usize,
    pub cols: usize,
    pub kept: usize,
    pub a_min: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ColumnSelectReport {
    /// Per-trial Frobenius error of zeroing the tail columns.
    pub errors: Vec<f64>,
    /// The analytic bound `sqrt(d (n - s)) * a_min`.
    pub bound: f64,
    pub violations: usize,
}

/// Generate matrices with bounded tail columns and verify that keeping the
/// first `kept` columns (zeroing the rest) stays within the Frobenius bound.
pub fn column_selection_check(config: &ColumnSelectConfig) -> Result<ColumnSelectReport> {
    if config.kept > config.cols {
        return Err(GcError::invalid("kept columns cannot exceed total columns"));
    }
    if config.a_min < 0.0 {
        return Err(GcError::invalid("a_min must be non-negative"));
    }
    let d = config.rows;
    let tail = config.cols - config.kept;
    let bound = ((d * tail) as f64).sqrt() * config.a_min;
    let mut errors = Vec::with_capacity(config.trials);
    let mut violations = 0usize;
    for trial in 0..config.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_mul(0x517cc1b727220a95)
                .wrapping_add(trial as u64),
        );
        // First `kept` columns are arbitrary; the error only involves the
        // tail, whose entries are uniform in [-a_min, a_min].
        let mut frob_sq = 0.0;
        for _ in 0..d * tail {
            let v = if config.a_min > 0.0 {
                rng.random_range(-config.a_min..=config.a_min)
            } else {
                0.0
            };
            frob_sq += v * v;
        }
        let err = frob_sq.sqrt();
        if err > bound + 1e-12 {
            violations += 1;
        }
        errors.push(err);
    }
    Ok(ColumnSelectReport {
        errors,
        bound,
        violations,
    })
}

/// CSV lines `trial,value,bound` for either report.
pub fn report_csv(values: &[f64], bound: f64) -> String {
    let mut out = String::from("trial,value,bound\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{i},{v:.9},{bound:.9}");
    }
    out
}
