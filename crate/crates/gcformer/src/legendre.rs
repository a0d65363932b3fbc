//! Translated-Legendre (LegT) state-space machinery: the A/B generator
//! matrices, bilinear discretization, the recurrence/kernel equivalence, and
//! signal projection/reconstruction in the Legendre basis.
//!
//! The generator returned by [`legt_matrices`] is continuous-time up to sign:
//! the stable system is `x' = (-A/theta) x + (B/theta) u`, which
//! [`legt_system`] discretizes with the bilinear transform at a step of one
//! sample. States are plain (unnormalized) Legendre coefficients of the
//! trailing window; [`legt_reconstruct`] evaluates them against `P_j(-s)` on a
//! midpoint grid, with `s = 1` at the oldest sample and `s = -1` just past the
//! newest.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{GcError, Result};
use crate::kernels::LegKernelParams;
use crate::numerics::causal_convolve;

/// Discrete or continuous linear state-space system.
#[derive(Debug, Clone)]
pub struct StateSpaceSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    pub discrete: bool,
}

/// Per-step Legendre coefficients of a projected signal; row `k` is the state
/// after consuming sample `k`.
#[derive(Debug, Clone)]
pub struct LegendreCoeffs {
    pub order: usize,
    pub values: Vec<Vec<f64>>,
}

/// The LegT generator pair of the translated Legendre measure:
/// `A[n][k] = (2n+1) * ((-1)^(n-k) if k <= n else 1)`, `B[n] = (2n+1)(-1)^n`.
pub fn legt_matrices(d: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if d == 0 {
        return Err(GcError::invalid("legt_matrices order must be >= 1"));
    }
    let a = DMatrix::from_fn(d, d, |n, k| {
        let scale = (2 * n + 1) as f64;
        if k <= n {
            scale * if (n - k) % 2 == 0 { 1.0 } else { -1.0 }
        } else {
            scale
        }
    });
    let b = DVector::from_fn(d, |n, _| {
        (2 * n + 1) as f64 * if n % 2 == 0 { 1.0 } else { -1.0 }
    });
    Ok((a, b))
}

/// Bilinear (Tustin) discretization of `x' = A x + B u`.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if dt <= 0.0 {
        return Err(GcError::invalid("discretization step must be positive"));
    }
    let d = a.nrows();
    let eye = DMatrix::identity(d, d);
    let left = &eye - a * (dt / 2.0);
    let inv = left.clone().try_inverse().ok_or_else(|| {
        let cond = left.norm() * d as f64;
        GcError::numeric(format!(
            "I - dt/2 A is singular (norm-based condition estimate {cond:.3e})"
        ))
    })?;
    let a_bar = &inv * (&eye + a * (dt / 2.0));
    let b_bar = &inv * (b * dt);
    Ok((a_bar, b_bar))
}

/// The discretized LegT system for a window of `theta` samples, with the
/// output row reading the window's newest point and no feedthrough.
pub fn legt_system(order: usize, theta: f64) -> Result<StateSpaceSystem> {
    if theta <= 0.0 {
        return Err(GcError::invalid("window length must be positive"));
    }
    let (a, b) = legt_matrices(order)?;
    let a_cont = -&a / theta;
    let b_cont = &b / theta;
    let (a_bar, b_bar) = discretize(&a_cont, &b_cont, 1.0)?;
    // Newest grid point sits at s = -1 + 1/theta; the basis is P_j(-s).
    let s_new = -1.0 + 1.0 / theta;
    let c = RowDVector::from_fn(order, |_, j| legendre_poly(j, -s_new));
    Ok(StateSpaceSystem {
        a: a_bar,
        b: b_bar,
        c,
        d: 0.0,
        discrete: true,
    })
}

/// Iterates `x_k = A x_{k-1} + B u_k`, `y_k = C x_k + D u_k` from `x_0 = 0`.
pub fn ssm_recurrence(sys: &StateSpaceSystem, u: &[f64]) -> Result<Vec<f64>> {
    if !sys.discrete {
        return Err(GcError::invalid("ssm_recurrence needs a discrete system"));
    }
    let mut x = DVector::zeros(sys.a.nrows());
    let mut y = Vec::with_capacity(u.len());
    for (k, &uk) in u.iter().enumerate() {
        x = &sys.a * x + &sys.b * uk;
        let yk = (&sys.c * &x)[0] + sys.d * uk;
        if !yk.is_finite() {
            return Err(GcError::numeric(format!(
                "state-space recurrence diverged at step {k}"
            )));
        }
        y.push(yk);
    }
    Ok(y)
}

/// Convolution kernel `K_i = C A^i B` by iterated matrix-vector products.
pub fn materialize_ssm_kernel(sys: &StateSpaceSystem, n: usize) -> Result<Vec<f64>> {
    if !sys.discrete {
        return Err(GcError::invalid(
            "materialize_ssm_kernel needs a discrete system",
        ));
    }
    let mut v = sys.b.clone();
    let mut kernel = Vec::with_capacity(n);
    for i in 0..n {
        let ki = (&sys.c * &v)[0];
        if !ki.is_finite() {
            return Err(GcError::numeric(format!("kernel overflow at tap {i}")));
        }
        kernel.push(ki);
        if i + 1 < n {
            v = &sys.a * v;
        }
    }
    Ok(kernel)
}

/// Legendre polynomial `P_j(x)` by the three-term recurrence.
pub fn legendre_poly(j: usize, x: f64) -> f64 {
    let mut p0 = 1.0;
    if j == 0 {
        return p0;
    }
    let mut p1 = x;
    for m in 1..j {
        let m = m as f64;
        let p2 = ((2.0 * m + 1.0) * x * p1 - m * p0) / (m + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Midpoint evaluation grid for a window of `theta` samples, oldest first.
fn window_grid(theta: usize) -> Vec<f64> {
    (0..theta)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / theta as f64)
        .collect()
}

/// Basis matrix `G[i][j] = P_j(-s_i)` over the window grid.
pub fn reconstruction_basis(theta: usize, order: usize) -> Vec<Vec<f64>> {
    window_grid(theta)
        .iter()
        .map(|&s| (0..order).map(|j| legendre_poly(j, -s)).collect())
        .collect()
}

/// Initial state used by [`legt_project`]: the exact coefficients of the
/// window obtained by extrapolating the first two samples linearly backwards.
/// Exact for constant signals and removes most of the cold-start transient
/// for smooth ones.
pub fn legt_init_state(u0: f64, u1: f64, order: usize, theta: usize) -> Vec<f64> {
    let grid = window_grid(theta);
    let slope = u1 - u0;
    // Window sample i (oldest first) is u0 - slope * (theta - 1 - i).
    let mut state = vec![0.0; order];
    for (j, st) in state.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &s) in grid.iter().enumerate() {
            let w = u0 - slope * (theta - 1 - i) as f64;
            acc += w * legendre_poly(j, -s);
        }
        *st = (2 * j + 1) as f64 * acc / theta as f64;
    }
    state
}

/// Runs the discretized LegT system over `u`, returning the coefficient
/// trajectory. `theta` defaults to the signal length when `None`.
pub fn legt_project(u: &[f64], order: usize, theta: Option<usize>) -> Result<LegendreCoeffs> {
    if u.is_empty() {
        return Err(GcError::invalid("legt_project of empty signal"));
    }
    let theta = theta.unwrap_or(u.len());
    if theta == 0 {
        return Err(GcError::invalid("window length must be >= 1"));
    }
    let sys = legt_system(order, theta as f64)?;
    let u1 = if u.len() > 1 { u[1] } else { u[0] };
    let mut x = DVector::from_vec(legt_init_state(u[0], u1, order, theta));
    let mut rows = Vec::with_capacity(u.len());
    for (k, &uk) in u.iter().enumerate() {
        x = &sys.a * x + &sys.b * uk;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GcError::numeric(format!(
                "LegT projection diverged at step {k}"
            )));
        }
        rows.push(x.iter().copied().collect());
    }
    Ok(LegendreCoeffs {
        order,
        values: rows,
    })
}

/// Reconstructs the trailing window from the final coefficient row.
pub fn legt_reconstruct(coeffs: &LegendreCoeffs, theta: usize) -> Vec<f64> {
    let basis = reconstruction_basis(theta, coeffs.order);
    let last = coeffs
        .values
        .last()
        .map(|r| r.as_slice())
        .unwrap_or(&[]);
    basis
        .iter()
        .map(|row| row.iter().zip(last).map(|(g, c)| g * c).sum())
        .collect()
}

/// The Legendre-space global convolution: project, causally filter each
/// coefficient channel with the matching kernel column, reconstruct.
pub fn apply_leg_kernel(u: &[f64], params: &LegKernelParams, theta: Option<usize>) -> Result<Vec<f64>> {
    let n = u.len();
    let theta = theta.unwrap_or(n);
    if params.kernel_len * 4 > n {
        return Err(GcError::invalid(format!(
            "leg kernel_len {} too long for signal length {} (need m <= n/4)",
            params.kernel_len, n
        )));
    }
    let coeffs = legt_project(u, params.order, Some(theta))?;
    let mut filtered_last = vec![0.0; params.order];
    for (j, fl) in filtered_last.iter_mut().enumerate() {
        let col: Vec<f64> = (0..n)
            .map(|i| {
                if i < params.kernel_len {
                    params.weights[i][j]
                } else {
                    0.0
                }
            })
            .collect();
        let chan: Vec<f64> = coeffs.values.iter().map(|row| row[j]).collect();
        let conv = causal_convolve(&chan, &col)?;
        *fl = conv[n - 1];
    }
    let tail = LegendreCoeffs {
        order: params.order,
        values: vec![filtered_last],
    };
    Ok(legt_reconstruct(&tail, theta))
}

/// Spectral radius estimate by power iteration on `A^T A` would give the
/// largest singular value; here we want the largest eigenvalue modulus, so we
/// iterate the matrix itself with periodic renormalization.
pub fn spectral_radius(a: &DMatrix<f64>, iters: usize) -> f64 {
    let d = a.nrows();
    let mut v = DVector::from_fn(d, |i, _| 1.0 + (i as f64 * 0.7).sin() * 0.1);
    v /= v.norm();
    let mut lambda: f64 = 0.0;
    for _ in 0..iters {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}
