use super::{Layer, ModelParams, NetworkSpec, Tensor};
use crate::vectorize::BankGradient;
use crate::{Error, Result};

/// Gradients laid out like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
    pub bank: Option<BankGradient>,
}

impl Gradients {
    /// Same ordering as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect();
        if let Some(b) = &self.bank {
            for (mu, s) in b.mu.iter().zip(&b.sigma) {
                out.extend_from_slice(&[mu[0], mu[1], *s]);
            }
        }
        out
    }
}

/// Per-layer values kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Input of every layer, plus the final output.
    activations: Vec<Tensor>,
    /// im2col buffers of conv layers, argmax indices of pooling layers.
    cols: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
}

/// `C = A·B + beta·C` with `A` m×k, `B` k×n (each optionally stored
/// transposed), all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly the m×k, k×n and m×n elements addressed
    // by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let n = self.cols();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let y = (oy * self.s + ki) as isize - self.p as isize;
                        for ox in 0..self.wo {
                            let xx = (ox * self.s + kj) as isize - self.p as isize;
                            dst[oy * self.wo + ox] = if y >= 0
                                && (y as usize) < self.h
                                && xx >= 0
                                && (xx as usize) < self.w
                            {
                                x[(c * self.h + y as usize) * self.w + xx as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let n = self.cols();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &col[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let y = (oy * self.s + ki) as isize - self.p as isize;
                        if y < 0 || y as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let xx = (ox * self.s + kj) as isize - self.p as isize;
                            if xx >= 0 && (xx as usize) < self.w {
                                dx[(c * self.h + y as usize) * self.w + xx as usize] +=
                                    src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geom(input: &[usize], output: &[usize], k: usize, s: usize, p: usize) -> ConvGeom {
    ConvGeom {
        c: input[0],
        h: input[1],
        w: input[2],
        k,
        s,
        p,
        ho: output[1],
        wo: output[2],
    }
}

/// Run the network on a `[B, ...]` batch. With `keep` the intermediate
/// values needed by [`backward`] are returned as well.
pub(super) fn forward(
    spec: &NetworkSpec,
    params: &ModelParams,
    x: &Tensor,
    keep: bool,
) -> Result<(Tensor, Option<Trace>)> {
    let shapes = spec.shapes()?;
    let batch = x.shape[0];
    if x.shape[1..] != spec.input_shape[..] {
        return Err(Error::Shape {
            expected: spec.input_shape.clone(),
            actual: x.shape[1..].to_vec(),
        });
    }
    let mut trace = Trace {
        activations: Vec::new(),
        cols: Vec::new(),
        argmax: Vec::new(),
    };
    let mut cur = x.clone();
    let mut p_idx = 0;
    for (i, layer) in spec.layers.iter().enumerate() {
        let in_shape = if i == 0 { &spec.input_shape } else { &shapes[i - 1] };
        let out_shape = &shapes[i];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let mut out_dims = vec![batch];
        out_dims.extend_from_slice(out_shape);
        let mut out = vec![0.0; batch * out_len];
        match *layer {
            Layer::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                let g = geom(in_shape, out_shape, kernel, stride, padding);
                let (w, b) = (&params.tensors[p_idx], &params.tensors[p_idx + 1]);
                p_idx += 2;
                let (rows, ncol, cout) = (g.rows(), g.cols(), out_shape[0]);
                let mut cols = vec![0.0; batch * rows * ncol];
                for s in 0..batch {
                    let col = &mut cols[s * rows * ncol..(s + 1) * rows * ncol];
                    g.im2col(&cur.data[s * in_len..(s + 1) * in_len], col);
                    let o = &mut out[s * out_len..(s + 1) * out_len];
                    for (co, chunk) in o.chunks_mut(ncol).enumerate() {
                        chunk.fill(b.data[co]);
                    }
                    gemm(cout, rows, ncol, &w.data, false, col, false, o, 1.0);
                }
                if keep {
                    trace.cols.push(cols);
                }
            }
            Layer::MaxPool { kernel, stride } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (ho, wo) = (out_shape[1], out_shape[2]);
                let mut arg = vec![0usize; batch * out_len];
                for s in 0..batch {
                    let xs = &cur.data[s * in_len..(s + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut best = usize::MAX;
                                for ki in 0..kernel {
                                    for kj in 0..kernel {
                                        let idx = (ch * h + oy * stride + ki) * w + ox * stride + kj;
                                        if best == usize::MAX || xs[idx] > xs[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                let o = s * out_len + (ch * ho + oy) * wo + ox;
                                out[o] = xs[best];
                                arg[o] = best;
                            }
                        }
                    }
                }
                if keep {
                    trace.argmax.push(arg);
                }
            }
            Layer::Relu => {
                for (o, &v) in out.iter_mut().zip(&cur.data) {
                    *o = v.max(0.0);
                }
            }
            Layer::Flatten => out.copy_from_slice(&cur.data),
            Layer::Fc { out_dim } => {
                let (w, b) = (&params.tensors[p_idx], &params.tensors[p_idx + 1]);
                p_idx += 2;
                for row in out.chunks_mut(out_dim) {
                    row.copy_from_slice(&b.data);
                }
                gemm(batch, in_len, out_dim, &cur.data, false, &w.data, true, &mut out, 1.0);
            }
            Layer::Softmax => {
                for (row, z) in out.chunks_mut(out_len).zip(cur.data.chunks(in_len)) {
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (r, &v) in row.iter_mut().zip(z) {
                        *r = (v - m).exp();
                        sum += *r;
                    }
                    for r in row.iter_mut() {
                        *r /= sum;
                    }
                }
            }
        }
        let next = Tensor {
            shape: out_dims,
            data: out,
        };
        if keep {
            trace.activations.push(std::mem::replace(&mut cur, next));
        } else {
            cur = next;
        }
    }
    if keep {
        trace.activations.push(cur.clone());
    }
    Ok((cur, keep.then_some(trace)))
}

/// Mean of `−log p[label]` over the batch.
pub(super) fn cross_entropy(probs: &Tensor, labels: &[usize]) -> f64 {
    let m = probs.shape[1];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data[i * m + l].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / labels.len() as f64
}

/// Gradients of the mean cross-entropy. The softmax layer is differentiated
/// together with the loss (`∂/∂z = p − onehot`). When `input_grad` is set the
/// gradient with respect to the network input is returned too.
pub(super) fn backward(
    spec: &NetworkSpec,
    params: &ModelParams,
    trace: &Trace,
    labels: &[usize],
    input_grad: bool,
) -> Result<(Gradients, Option<Tensor>)> {
    let shapes = spec.shapes()?;
    let batch = labels.len();
    let mut grads: Vec<Tensor> = params.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect();
    let probs = trace.activations.last().expect("output");
    let m = spec.class_count;
    let mut delta = probs.data.clone();
    for (i, &l) in labels.iter().enumerate() {
        delta[i * m + l] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    for d in &mut delta {
        *d *= inv;
    }

    let mut p_idx = params.tensors.len();
    let mut col_idx = trace.cols.len();
    let mut arg_idx = trace.argmax.len();
    let last = spec.layers.len() - 1;
    for i in (0..last).rev() {
        let layer = &spec.layers[i];
        let in_shape = if i == 0 { &spec.input_shape } else { &shapes[i - 1] };
        let out_shape = &shapes[i];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let x = &trace.activations[i];
        let want_dx = i > 0 || input_grad;
        let mut dx = if want_dx {
            vec![0.0; batch * in_len]
        } else {
            Vec::new()
        };
        match *layer {
            Layer::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                p_idx -= 2;
                col_idx -= 1;
                let g = geom(in_shape, out_shape, kernel, stride, padding);
                let (rows, ncol, cout) = (g.rows(), g.cols(), out_shape[0]);
                let cols = &trace.cols[col_idx];
                let w = &params.tensors[p_idx].data;
                let mut dcol = vec![0.0; rows * ncol];
                for s in 0..batch {
                    let d = &delta[s * out_len..(s + 1) * out_len];
                    let col = &cols[s * rows * ncol..(s + 1) * rows * ncol];
                    gemm(cout, ncol, rows, d, false, col, true, &mut grads[p_idx].data, 1.0);
                    for (co, chunk) in d.chunks(ncol).enumerate() {
                        grads[p_idx + 1].data[co] += chunk.iter().sum::<f64>();
                    }
                    if want_dx {
                        gemm(rows, cout, ncol, w, true, d, false, &mut dcol, 0.0);
                        g.col2im(&dcol, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
            }
            Layer::MaxPool { .. } => {
                arg_idx -= 1;
                let arg = &trace.argmax[arg_idx];
                for s in (0..batch).filter(|_| want_dx) {
                    for o in 0..out_len {
                        dx[s * in_len + arg[s * out_len + o]] += delta[s * out_len + o];
                    }
                }
            }
            Layer::Relu => {
                if want_dx {
                    for ((d, &v), &g) in dx.iter_mut().zip(&x.data).zip(&delta) {
                        if v > 0.0 {
                            *d = g;
                        }
                    }
                }
            }
            Layer::Flatten => {
                if want_dx {
                    dx.copy_from_slice(&delta);
                }
            }
            Layer::Fc { out_dim } => {
                p_idx -= 2;
                gemm(out_dim, batch, in_len, &delta, true, &x.data, false, &mut grads[p_idx].data, 1.0);
                for row in delta.chunks(out_dim) {
                    for (g, &d) in grads[p_idx + 1].data.iter_mut().zip(row) {
                        *g += d;
                    }
                }
                if want_dx {
                    gemm(batch, out_dim, in_len, &delta, false, &params.tensors[p_idx].data, false, &mut dx, 0.0);
                }
            }
            Layer::Softmax => unreachable!("softmax is only allowed last"),
        }
        if !want_dx {
            break;
        }
        delta = dx;
    }
    let dx = input_grad.then(|| {
        let mut shape = vec![batch];
        shape.extend_from_slice(&spec.input_shape);
        Tensor { shape, data: delta }
    });
    Ok((
        Gradients {
            tensors: grads,
            bank: None,
        },
        dx,
    ))
}
