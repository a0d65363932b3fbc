//! Reverse-mode automatic differentiation on a tape of small dense tensors.
//!
//! Values are computed eagerly as nodes are pushed; [`Tape::backward`] walks
//! the tape once and accumulates adjoints. Ops cover exactly what the model
//! forward pass needs: elementwise arithmetic, matrix products, softmax,
//! causal convolution, the frequency-domain filter, linear upsampling, patch
//! extraction, and the LegT projection recurrence.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::kernels::lerp_indices;
use crate::numerics::{causal_convolve, circular_convolve, irfft, rfft, Spectrum};
use rustfft::num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// State-space data for the projection op: discrete `A`, `B` and the two
/// initialization vectors (`x_init = p u_0 + q u_1`).
#[derive(Debug)]
pub struct ProjectSys {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub init_u0: DVector<f64>,
    pub init_u1: DVector<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Recip(NodeId),
    ScaleConst(NodeId, f64),
    AddConst(NodeId),
    /// Broadcast a (1,1) node over every element.
    AddScalar(NodeId, NodeId),
    MulScalar(NodeId, NodeId),
    /// Broadcast a (c,1) node over every row of an (r,c) node.
    AddBiasRow(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    CausalConv(NodeId, NodeId),
    FreqFilter {
        input: NodeId,
        weights_re: NodeId,
        weights_im: NodeId,
    },
    Upsample {
        input: NodeId,
        factor: usize,
    },
    ConcatRows(NodeId, NodeId),
    SliceRows {
        input: NodeId,
        start: usize,
    },
    PadRows(NodeId),
    ExtractPatches {
        input: NodeId,
        patch_len: usize,
        stride: usize,
    },
    SsmProject {
        input: NodeId,
        sys: Arc<ProjectSys>,
    },
    /// `out[j] = sum_i weights[i][j] * coeffs[n-1-i][j]` over the kernel rows.
    LegFilterLast {
        coeffs: NodeId,
        weights: NodeId,
    },
    MeanRows(NodeId),
    MeanAll(NodeId),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a tape after one backward pass.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        assert_eq!(rows * cols, value.len(), "leaf shape mismatch");
        self.push(rows, cols, value, Op::Leaf)
    }

    pub fn vector(&mut self, value: Vec<f64>) -> NodeId {
        let n = value.len();
        self.leaf(n, 1, value)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(1, 1, vec![value])
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (ra, ca) = self.shape(a);
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let value = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(ra, ca, value, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| -x).collect();
        self.push(r, c, value, Op::Neg(a))
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| 1.0 / x).collect();
        self.push(r, c, value, Op::Recip(a))
    }

    pub fn scale_const(&mut self, a: NodeId, s: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x * s).collect();
        self.push(r, c, value, Op::ScaleConst(a, s))
    }

    pub fn add_const(&mut self, a: NodeId, s: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x + s).collect();
        self.push(r, c, value, Op::AddConst(a))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.shape(s), (1, 1));
        let (r, c) = self.shape(a);
        let sv = self.nodes[s.0].value[0];
        let value = self.nodes[a.0].value.iter().map(|x| x + sv).collect();
        self.push(r, c, value, Op::AddScalar(a, s))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.shape(s), (1, 1));
        let (r, c) = self.shape(a);
        let sv = self.nodes[s.0].value[0];
        let value = self.nodes[a.0].value.iter().map(|x| x * sv).collect();
        self.push(r, c, value, Op::MulScalar(a, s))
    }

    pub fn add_bias_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(bias), (c, 1), "bias length must match columns");
        let bv = self.nodes[bias.0].value.clone();
        let mut value = self.nodes[a.0].value.clone();
        for row in 0..r {
            for col in 0..c {
                value[row * c + col] += bv[col];
            }
        }
        self.push(r, c, value, Op::AddBiasRow(a, bias))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, rb, "matmul inner dimension mismatch");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut value = vec![0.0; ra * cb];
        for i in 0..ra {
            for k in 0..ca {
                let x = av[i * ca + k];
                if x == 0.0 {
                    continue;
                }
                for j in 0..cb {
                    value[i * cb + j] += x * bv[k * cb + j];
                }
            }
        }
        self.push(ra, cb, value, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = av[i * c + j];
            }
        }
        self.push(c, r, value, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                value[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                value[i * c + j] /= sum;
            }
        }
        self.push(r, c, value, Op::SoftmaxRows(a))
    }

    pub fn causal_conv(&mut self, u: NodeId, k: NodeId) -> NodeId {
        let (n, cu) = self.shape(u);
        assert_eq!(cu, 1, "causal_conv expects column vectors");
        assert_eq!(self.shape(k), (n, 1), "causal_conv length mismatch");
        let y = causal_convolve(&self.nodes[u.0].value, &self.nodes[k.0].value)
            .expect("causal convolution on tape");
        self.push(n, 1, y, Op::CausalConv(u, k))
    }

    pub fn freq_filter(&mut self, input: NodeId, weights_re: NodeId, weights_im: NodeId) -> NodeId {
        let (n, c) = self.shape(input);
        assert_eq!(c, 1, "freq_filter expects a column vector");
        let (m, _) = self.shape(weights_re);
        assert_eq!(self.shape(weights_re), self.shape(weights_im));
        assert!(m <= n / 2 + 1, "more modes than the signal offers");
        let spec = rfft(&self.nodes[input.0].value).expect("rfft on tape");
        let wr = &self.nodes[weights_re.0].value;
        let wi = &self.nodes[weights_im.0].value;
        let filtered: Vec<Complex64> = spec
            .data()
            .iter()
            .enumerate()
            .map(|(mode, &v)| {
                if mode < m {
                    v * Complex64::new(wr[mode], wi[mode])
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let y = irfft(&Spectrum::new(filtered), n).expect("irfft on tape");
        self.push(
            n,
            1,
            y,
            Op::FreqFilter {
                input,
                weights_re,
                weights_im,
            },
        )
    }

    pub fn upsample(&mut self, input: NodeId, factor: usize) -> NodeId {
        let (n, c) = self.shape(input);
        assert_eq!(c, 1, "upsample expects a column vector");
        let y = crate::kernels::upsample_linear(&self.nodes[input.0].value, factor);
        self.push(n * factor, 1, y, Op::Upsample { input, factor })
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ca, cb, "concat_rows column mismatch");
        let mut value = self.nodes[a.0].value.clone();
        value.extend_from_slice(&self.nodes[b.0].value);
        self.push(ra + rb, ca, value, Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, input: NodeId, start: usize, len: usize) -> NodeId {
        let (r, c) = self.shape(input);
        assert!(start + len <= r, "slice_rows out of range");
        let value = self.nodes[input.0].value[start * c..(start + len) * c].to_vec();
        self.push(len, c, value, Op::SliceRows { input, start })
    }

    pub fn pad_rows(&mut self, input: NodeId, rows: usize) -> NodeId {
        let (r, c) = self.shape(input);
        assert!(rows >= r, "pad_rows target smaller than input");
        let mut value = self.nodes[input.0].value.clone();
        value.resize(rows * c, 0.0);
        self.push(rows, c, value, Op::PadRows(input))
    }

    pub fn extract_patches(&mut self, input: NodeId, patch_len: usize, stride: usize) -> NodeId {
        let (n, c) = self.shape(input);
        assert_eq!(c, 1, "extract_patches expects a column vector");
        assert!(patch_len >= 1 && patch_len <= n && stride >= 1);
        let count = (n - patch_len) / stride + 1;
        let v = &self.nodes[input.0].value;
        let mut value = Vec::with_capacity(count * patch_len);
        for p in 0..count {
            value.extend_from_slice(&v[p * stride..p * stride + patch_len]);
        }
        self.push(
            count,
            patch_len,
            value,
            Op::ExtractPatches {
                input,
                patch_len,
                stride,
            },
        )
    }

    pub fn ssm_project(&mut self, input: NodeId, sys: Arc<ProjectSys>) -> NodeId {
        let (n, c) = self.shape(input);
        assert_eq!(c, 1, "ssm_project expects a column vector");
        let order = sys.a.nrows();
        let u = &self.nodes[input.0].value;
        let u1 = if n > 1 { u[1] } else { u[0] };
        let mut x = &sys.init_u0 * u[0] + &sys.init_u1 * u1;
        let mut value = Vec::with_capacity(n * order);
        for &uk in u.iter() {
            x = &sys.a * x + &sys.b * uk;
            value.extend(x.iter());
        }
        self.push(n, order, value, Op::SsmProject { input, sys })
    }

    pub fn leg_filter_last(&mut self, coeffs: NodeId, weights: NodeId) -> NodeId {
        let (n, order) = self.shape(coeffs);
        let (m, wc) = self.shape(weights);
        assert_eq!(order, wc, "leg filter order mismatch");
        let cv = &self.nodes[coeffs.0].value;
        let wv = &self.nodes[weights.0].value;
        let taps = m.min(n);
        let mut value = vec![0.0; order];
        for i in 0..taps {
            for j in 0..order {
                value[j] += wv[i * order + j] * cv[(n - 1 - i) * order + j];
            }
        }
        self.push(order, 1, value, Op::LegFilterLast { coeffs, weights })
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                value[j] += av[i * c + j];
            }
        }
        for v in value.iter_mut() {
            *v /= r as f64;
        }
        self.push(1, c, value, Op::MeanRows(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        self.push(1, 1, vec![mean], Op::MeanAll(a))
    }

    /// Reinterpret an (r,c) node under a new shape with the same element
    /// count. Row-major layout makes this a copy-only op; gradients pass
    /// straight through.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape element count mismatch");
        if (r, c) == (rows, cols) {
            return a;
        }
        let value = self.nodes[a.0].value.clone();
        self.push(
            rows,
            cols,
            value,
            Op::SliceRows {
                input: a,
                start: 0,
            },
        )
    }

    /// Flatten an (r,c) node into an (r*c,1) column vector.
    pub fn flatten(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        self.reshape(a, r * c, 1)
    }

    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "loss must be scalar");
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.rows * n.cols])
            .collect();
        grads[loss.0][0] = 1.0;
        for idx in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|v| *v == 0.0) {
                grads[idx] = g;
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[b.0].value.clone();
                    let av = self.nodes[a.0].value.clone();
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * bv[i];
                        grads[b.0][i] += gi * av[i];
                    }
                }
                Op::Neg(a) => axpy(&mut grads[a.0], &g, -1.0),
                Op::Recip(a) => {
                    let y = &node.value;
                    for (i, &gi) in g.iter().enumerate() {
                        grads[a.0][i] -= gi * y[i] * y[i];
                    }
                }
                Op::ScaleConst(a, s) => axpy(&mut grads[a.0], &g, *s),
                Op::AddConst(a) => axpy(&mut grads[a.0], &g, 1.0),
                Op::AddScalar(a, s) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    grads[s.0][0] += g.iter().sum::<f64>();
                }
                Op::MulScalar(a, s) => {
                    let sv = self.nodes[s.0].value[0];
                    let av = self.nodes[a.0].value.clone();
                    axpy(&mut grads[a.0], &g, sv);
                    grads[s.0][0] += g.iter().zip(&av).map(|(gi, ai)| gi * ai).sum::<f64>();
                }
                Op::AddBiasRow(a, bias) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    let (r, c) = (node.rows, node.cols);
                    for row in 0..r {
                        for col in 0..c {
                            grads[bias.0][col] += g[row * c + col];
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (ra, ca) = self.shape(*a);
                    let (_, cb) = self.shape(*b);
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    // gA += gY B^T
                    for i in 0..ra {
                        for k in 0..ca {
                            let mut acc = 0.0;
                            for j in 0..cb {
                                acc += g[i * cb + j] * bv[k * cb + j];
                            }
                            grads[a.0][i * ca + k] += acc;
                        }
                    }
                    // gB += A^T gY
                    for k in 0..ca {
                        for j in 0..cb {
                            let mut acc = 0.0;
                            for i in 0..ra {
                                acc += av[i * ca + k] * g[i * cb + j];
                            }
                            grads[b.0][k * cb + j] += acc;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (node.rows, node.cols); // transposed shape
                    for i in 0..r {
                        for j in 0..c {
                            grads[a.0][j * r + i] += g[i * c + j];
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (node.rows, node.cols);
                    let y = &node.value;
                    for i in 0..r {
                        let dot: f64 = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
                        for j in 0..c {
                            grads[a.0][i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                        }
                    }
                }
                Op::CausalConv(u, k) => {
                    let uv = self.nodes[u.0].value.clone();
                    let kv = self.nodes[k.0].value.clone();
                    let gu = causal_correlate(&g, &kv);
                    let gk = causal_correlate(&g, &uv);
                    axpy(&mut grads[u.0], &gu, 1.0);
                    axpy(&mut grads[k.0], &gk, 1.0);
                }
                Op::FreqFilter {
                    input,
                    weights_re,
                    weights_im,
                } => {
                    let n = node.rows;
                    let m = self.nodes[weights_re.0].value.len();
                    let wr = &self.nodes[weights_re.0].value;
                    let wi = &self.nodes[weights_im.0].value;
                    // Equivalent time-domain kernel of the filter.
                    let padded: Vec<Complex64> = (0..n / 2 + 1)
                        .map(|mode| {
                            if mode < m {
                                Complex64::new(wr[mode], wi[mode])
                            } else {
                                Complex64::new(0.0, 0.0)
                            }
                        })
                        .collect();
                    let kernel = irfft(&Spectrum::new(padded), n).expect("irfft in backward");
                    let gu = circular_correlate(&g, &kernel);
                    axpy(&mut grads[input.0], &gu, 1.0);
                    let uv = self.nodes[input.0].value.clone();
                    let gk = circular_correlate(&g, &uv);
                    let gspec = rfft(&gk).expect("rfft in backward");
                    for mode in 0..m {
                        let c = if mode == 0 || (n % 2 == 0 && mode == n / 2) {
                            1.0
                        } else {
                            2.0
                        };
                        grads[weights_re.0][mode] += c / n as f64 * gspec.data()[mode].re;
                        if mode != 0 && !(n % 2 == 0 && mode == n / 2) {
                            grads[weights_im.0][mode] += 2.0 / n as f64 * gspec.data()[mode].im;
                        }
                    }
                }
                Op::Upsample { input, factor } => {
                    let len_in = self.nodes[input.0].value.len();
                    let len_out = len_in * factor;
                    for (j, &gj) in g.iter().enumerate() {
                        if len_in == 1 {
                            grads[input.0][0] += gj;
                        } else {
                            let (i0, w) = lerp_indices(len_in, len_out, j);
                            grads[input.0][i0] += gj * (1.0 - w);
                            grads[input.0][i0 + 1] += gj * w;
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    axpy(&mut grads[a.0], &g[..na], 1.0);
                    axpy(&mut grads[b.0], &g[na..], 1.0);
                }
                Op::SliceRows { input, start, .. } => {
                    // Also serves reshape (start = 0, full length), so walk
                    // the output gradient rather than recomputing its extent.
                    let off = start * self.nodes[input.0].cols;
                    for (i, &gi) in g.iter().enumerate() {
                        grads[input.0][off + i] += gi;
                    }
                }
                Op::PadRows(input) => {
                    let n = self.nodes[input.0].value.len();
                    axpy(&mut grads[input.0], &g[..n], 1.0);
                }
                Op::ExtractPatches {
                    input,
                    patch_len,
                    stride,
                } => {
                    let count = node.rows;
                    for p in 0..count {
                        for j in 0..*patch_len {
                            grads[input.0][p * stride + j] += g[p * patch_len + j];
                        }
                    }
                }
                Op::SsmProject { input, sys } => {
                    let n = node.rows;
                    let order = node.cols;
                    let at = sys.a.transpose();
                    let mut lambda = DVector::<f64>::zeros(order);
                    let mut gu = vec![0.0; n];
                    for k in (0..n).rev() {
                        lambda = &at * lambda;
                        for j in 0..order {
                            lambda[j] += g[k * order + j];
                        }
                        gu[k] = sys.b.dot(&lambda);
                    }
                    let g_init = &at * lambda;
                    gu[0] += sys.init_u0.dot(&g_init);
                    if n > 1 {
                        gu[1] += sys.init_u1.dot(&g_init);
                    } else {
                        gu[0] += sys.init_u1.dot(&g_init);
                    }
                    axpy(&mut grads[input.0], &gu, 1.0);
                }
                Op::LegFilterLast { coeffs, weights } => {
                    let (n, order) = self.shape(*coeffs);
                    let (m, _) = self.shape(*weights);
                    let taps = m.min(n);
                    let cv = self.nodes[coeffs.0].value.clone();
                    let wv = self.nodes[weights.0].value.clone();
                    for i in 0..taps {
                        for j in 0..order {
                            grads[coeffs.0][(n - 1 - i) * order + j] += wv[i * order + j] * g[j];
                            grads[weights.0][i * order + j] += cv[(n - 1 - i) * order + j] * g[j];
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.shape(*a);
                    for i in 0..r {
                        for j in 0..c {
                            grads[a.0][i * c + j] += g[j] / r as f64;
                        }
                    }
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[a.0].value.len();
                    let gi = g[0] / n as f64;
                    for v in grads[a.0].iter_mut() {
                        *v += gi;
                    }
                }
            }
            grads[idx] = g;
        }
        Gradients { grads }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

/// Adjoint of causal convolution with a fixed second argument:
/// `out_j = sum_{t >= j} g_t k_{t-j}`, computed as a reversed causal
/// convolution so the FFT path stays O(n log n).
fn causal_correlate(g: &[f64], k: &[f64]) -> Vec<f64> {
    let rev: Vec<f64> = g.iter().rev().copied().collect();
    let mut out = causal_convolve(&rev, k).expect("causal_correlate");
    out.reverse();
    out
}

/// Adjoint of circular convolution with a fixed second argument.
fn circular_correlate(g: &[f64], k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let rev: Vec<f64> = (0..n).map(|i| k[(n - i) % n]).collect();
    circular_convolve(g, &rev).expect("circular_correlate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::{legt_init_state, legt_system};
    use crate::numerics::finite_difference_gradient;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Finite-difference check of a tape-built scalar function of one leaf.
    fn check_grad(build: impl Fn(&mut Tape, NodeId) -> NodeId, x0: &[f64], tol: f64) {
        let eval = |x: &[f64]| {
            let mut tape = Tape::new();
            let leaf = tape.vector(x.to_vec());
            let loss = build(&mut tape, leaf);
            tape.value(loss)[0]
        };
        let mut tape = Tape::new();
        let leaf = tape.vector(x0.to_vec());
        let loss = build(&mut tape, leaf);
        let grads = tape.backward(loss);
        let analytic = grads.wrt(leaf);
        let numeric = finite_difference_gradient(eval, x0, 1e-5).unwrap();
        for i in 0..x0.len() {
            let scale = numeric[i].abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                (analytic[i] - numeric[i]).abs() / scale < tol,
                "coordinate {i}: analytic {} vs numeric {}",
                analytic[i],
                numeric[i]
            );
        }
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn elementwise_and_scalar_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = random_vec(&mut rng, 6);
        check_grad(
            |tape, x| {
                let c = tape.vector(vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9]);
                let p = tape.mul(x, c);
                let q = tape.add(p, x);
                let r = tape.scale_const(q, 1.7);
                let s = tape.add_const(r, 0.25);
                let sq = tape.mul(s, s);
                tape.mean_all(sq)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn scalar_broadcast_and_recip() {
        let x0 = vec![1.3, -0.4, 2.0];
        check_grad(
            |tape, x| {
                let s = tape.slice_rows(x, 0, 1);
                let r = tape.recip(s);
                let rest = tape.slice_rows(x, 1, 2);
                let scaled = tape.mul_scalar(rest, r);
                let shifted = tape.add_scalar(scaled, s);
                let sq = tape.mul(shifted, shifted);
                tape.mean_all(sq)
            },
            &x0,
            1e-5,
        );
    }

    #[test]
    fn matmul_transpose_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random_vec(&mut rng, 12);
        check_grad(
            |tape, x| {
                let m = tape.reshape(x, 3, 4);
                let t = tape.transpose(m);
                let prod = tape.matmul(m, t); // 3x3
                let soft = tape.softmax_rows(prod);
                let sq = tape.mul(soft, soft);
                tape.mean_all(sq)
            },
            &x0,
            1e-5,
        );
    }

    #[test]
    fn causal_conv_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = random_vec(&mut rng, 16);
        check_grad(
            |tape, x| {
                let u = tape.slice_rows(x, 0, 8);
                let k = tape.slice_rows(x, 8, 8);
                let y = tape.causal_conv(u, k);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn freq_filter_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 12 signal samples + 4 re + 4 im weights; n even so Nyquist is
        // exercised when m spans the full half-spectrum elsewhere.
        let x0 = random_vec(&mut rng, 20);
        check_grad(
            |tape, x| {
                let u = tape.slice_rows(x, 0, 12);
                let wr = tape.slice_rows(x, 12, 4);
                let wi = tape.slice_rows(x, 16, 4);
                let y = tape.freq_filter(u, wr, wi);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn freq_filter_full_band_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // n = 8, full half-spectrum m = 5 including DC and Nyquist.
        let x0 = random_vec(&mut rng, 18);
        check_grad(
            |tape, x| {
                let u = tape.slice_rows(x, 0, 8);
                let wr = tape.slice_rows(x, 8, 5);
                let wi = tape.slice_rows(x, 13, 5);
                let y = tape.freq_filter(u, wr, wi);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn upsample_patch_concat_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = random_vec(&mut rng, 10);
        check_grad(
            |tape, x| {
                let up = tape.upsample(x, 3);
                let patches = tape.extract_patches(up, 6, 4);
                let bias = tape.slice_rows(x, 0, 6);
                let biased = tape.add_bias_row(patches, bias);
                let pooled = tape.mean_rows(biased);
                let flat = tape.transpose(pooled);
                let padded = tape.pad_rows(flat, 9);
                let sq = tape.mul(padded, padded);
                tape.mean_all(sq)
            },
            &x0,
            1e-6,
        );
    }

    #[test]
    fn ssm_project_grad() {
        let order = 4;
        let n = 24;
        let sys_disc = legt_system(order, n as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = random_vec(&mut rng, n);
        // Init vectors for u0/u1 from the shared helper.
        let p = legt_init_state(1.0, 0.0, order, n);
        let q = legt_init_state(0.0, 1.0, order, n);
        let sys = Arc::new(ProjectSys {
            a: sys_disc.a.clone(),
            b: sys_disc.b.clone(),
            init_u0: DVector::from_vec(p),
            init_u1: DVector::from_vec(q),
        });
        check_grad(
            |tape, x| {
                let coeffs = tape.ssm_project(x, sys.clone());
                let sq = tape.mul(coeffs, coeffs);
                tape.mean_all(sq)
            },
            &x0,
            1e-5,
        );
    }

    #[test]
    fn leg_filter_last_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let order = 3;
        let n = 6;
        let m = 2;
        let x0 = random_vec(&mut rng, n * order + m * order);
        check_grad(
            |tape, x| {
                let c_flat = tape.slice_rows(x, 0, n * order);
                let coeffs = tape.reshape(c_flat, n, order);
                let w_flat = tape.slice_rows(x, n * order, m * order);
                let weights = tape.reshape(w_flat, m, order);
                let out = tape.leg_filter_last(coeffs, weights);
                let sq = tape.mul(out, out);
                tape.mean_all(sq)
            },
            &x0,
            1e-5,
        );
    }

    #[test]
    fn ssm_project_matches_legt_project() {
        let order = 5;
        let n = 32;
        let sys_disc = legt_system(order, n as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_vec(&mut rng, n);
        let p = legt_init_state(1.0, 0.0, order, n);
        let q = legt_init_state(0.0, 1.0, order, n);
        let sys = Arc::new(ProjectSys {
            a: sys_disc.a.clone(),
            b: sys_disc.b.clone(),
            init_u0: DVector::from_vec(p),
            init_u1: DVector::from_vec(q),
        });
        let mut tape = Tape::new();
        let leaf = tape.vector(u.clone());
        let coeffs = tape.ssm_project(leaf, sys);
        let reference = crate::legendre::legt_project(&u, order, None).unwrap();
        for k in 0..n {
            for j in 0..order {
                let got = tape.value(coeffs)[k * order + j];
                assert!((got - reference.values[k][j]).abs() < 1e-10);
            }
        }
    }
}
