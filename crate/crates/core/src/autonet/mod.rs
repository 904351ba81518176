//! A small differentiable network: conv, max-pool, ReLU, fully connected,
//! softmax with cross-entropy, SGD/Adam, and a parameter/FLOP estimator.
//!
//! Data flows through the network in batches laid out row-major as
//! `[B, C, H, W]` (spatial) or `[B, D]` (flat). All arithmetic is `f64`.

mod format;
mod net;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::homology::PersistenceDiagram;
use crate::rng;
use crate::vectorize::KernelBank;
use crate::{Error, Result};

pub use format::{decode_model, encode_model, read_model, write_model};
pub use net::{Gradients, Trace};
pub use train::{fit, EpochStats, InitScheme, Optimizer, OptimizerState, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One stage of a [`NetworkSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    Conv {
        kernel: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "maxpool")]
    MaxPool { kernel: usize, stride: usize },
    Relu,
    Flatten,
    Fc { out_dim: usize },
    Softmax,
}

fn one() -> usize {
    1
}

impl Layer {
    fn tag(&self) -> u8 {
        match self {
            Layer::Conv { .. } => 0,
            Layer::MaxPool { .. } => 1,
            Layer::Relu => 2,
            Layer::Flatten => 3,
            Layer::Fc { .. } => 4,
            Layer::Softmax => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[C, H, W]` or `[D]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub class_count: usize,
}

impl NetworkSpec {
    /// Output shape of every layer (per sample), checking that they chain.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.class_count < 2 {
            return Err(Error::invalid("class_count must be >= 2"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(format!("bad input shape {:?}", self.input_shape)));
        }
        if self.layers.last() != Some(&Layer::Softmax) {
            return Err(Error::invalid("the last layer must be softmax"));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |why: String| Error::invalid(format!("layer {i} ({layer:?}): {why}"));
            shape = match *layer {
                Layer::Conv {
                    kernel,
                    out_channels,
                    stride,
                    padding,
                } => {
                    let [_, h, w] = shape[..] else {
                        return Err(bad(format!("needs [C,H,W] input, got {shape:?}")));
                    };
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(bad("zero kernel, stride or channel count".into()));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(bad(format!("kernel larger than padded input {shape:?}")));
                    }
                    vec![
                        out_channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ]
                }
                Layer::MaxPool { kernel, stride } => {
                    let [c, h, w] = shape[..] else {
                        return Err(bad(format!("needs [C,H,W] input, got {shape:?}")));
                    };
                    if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                        return Err(bad(format!("cannot pool {shape:?}")));
                    }
                    vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
                }
                Layer::Relu => shape,
                Layer::Flatten => vec![shape.iter().product()],
                Layer::Fc { out_dim } => {
                    if shape.len() != 1 {
                        return Err(bad(format!("needs flat input, got {shape:?}")));
                    }
                    if out_dim == 0 {
                        return Err(bad("zero output size".into()));
                    }
                    vec![out_dim]
                }
                Layer::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("softmax must be last".into()));
                    }
                    if shape != [self.class_count] {
                        return Err(bad(format!(
                            "softmax over {shape:?}, expected [{}]",
                            self.class_count
                        )));
                    }
                    shape
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Shapes of the trainable tensors in declaration order
    /// (weight then bias for each conv/fc layer).
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.shapes()?;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { &self.input_shape } else { &shapes[i - 1] };
            match *layer {
                Layer::Conv {
                    kernel,
                    out_channels,
                    ..
                } => {
                    out.push(vec![out_channels, input[0], kernel, kernel]);
                    out.push(vec![out_channels]);
                }
                Layer::Fc { out_dim } => {
                    out.push(vec![out_dim, input[0]]);
                    out.push(vec![out_dim]);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Trainable state: conv/fc tensors plus an optional kernel bank in front.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
    pub bank: Option<KernelBank>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum::<usize>()
            + self.bank.as_ref().map_or(0, KernelBank::param_count)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All parameters in one vector: tensors in order, then `(μ₁, μ₂, σ)`
    /// per kernel.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        if let Some(bank) = &self.bank {
            for k in &bank.kernels {
                out.extend_from_slice(&[k.mu[0], k.mu[1], k.sigma]);
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). σ values are clamped.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape {
                expected: vec![self.len()],
                actual: vec![flat.len()],
            });
        }
        let mut pos = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        if let Some(bank) = &mut self.bank {
            for k in &mut bank.kernels {
                k.mu = [flat[pos], flat[pos + 1]];
                k.sigma = flat[pos + 2];
                pos += 3;
            }
            bank.clamp_sigmas();
        }
        Ok(())
    }
}

/// One sample as seen by a model.
#[derive(Clone, Debug)]
pub enum ModelInput {
    Tensor(Tensor),
    Diagram(PersistenceDiagram),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: ModelParams,
}

impl Model {
    /// Fresh model with seeded fan-in-scaled uniform weights and zero biases.
    pub fn new(
        spec: NetworkSpec,
        bank: Option<KernelBank>,
        init: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if let Some(b) = &bank {
            if b.len() != spec.input_len() {
                return Err(Error::IncompatibleModel(format!(
                    "{} kernels cannot feed input shape {:?}",
                    b.len(),
                    spec.input_shape
                )));
            }
        }
        let mut stream = rng::stream(seed);
        let mut tensors = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            let mut t = Tensor::zeros(shape);
            if shape.len() > 1 {
                let fan_in: usize = shape[1..].iter().product();
                let bound = match init {
                    InitScheme::HeUniform => (6.0 / fan_in as f64).sqrt(),
                    InitScheme::Zeros => 0.0,
                };
                for v in &mut t.data {
                    *v = rng::uniform(&mut stream, -bound, bound);
                }
            }
            tensors.push(t);
        }
        Ok(Model {
            spec,
            params: ModelParams { tensors, bank },
        })
    }

    /// Class probabilities, one row of `class_count` per input.
    pub fn forward(&self, inputs: &[ModelInput]) -> Result<Tensor> {
        let x = self.stack_inputs(inputs)?;
        Ok(net::forward(&self.spec, &self.params, &x, false)?.0)
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, inputs: &[ModelInput], labels: &[usize]) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.loss_grad_probs(inputs, labels)?;
        Ok((loss, grads))
    }

    pub(crate) fn loss_grad_probs(
        &self,
        inputs: &[ModelInput],
        labels: &[usize],
    ) -> Result<(f64, Gradients, Tensor)> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::invalid(format!(
                "{} inputs vs {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.spec.class_count) {
            return Err(Error::invalid(format!("label {bad} out of range")));
        }
        let x = self.stack_inputs(inputs)?;
        let (probs, trace) = net::forward(&self.spec, &self.params, &x, true)?;
        let loss = net::cross_entropy(&probs, labels);
        let need_input_grad = self.params.bank.is_some();
        let (mut grads, dx) =
            net::backward(&self.spec, &self.params, &trace.expect("trace"), labels, need_input_grad)?;
        if let (Some(bank), Some(dx)) = (&self.params.bank, dx) {
            let n = bank.len();
            let mut total = crate::vectorize::BankGradient::zeros(n);
            for (i, input) in inputs.iter().enumerate() {
                let ModelInput::Diagram(d) = input else { unreachable!() };
                let g = crate::vectorize::project_backward(d, bank, &dx.data[i * n..(i + 1) * n])?;
                total.add_assign(&g);
            }
            grads.bank = Some(total);
        }
        Ok((loss, grads, probs))
    }

    /// Batch the inputs into one `[B, ...]` tensor, projecting diagrams
    /// through the kernel bank when the model has one.
    fn stack_inputs(&self, inputs: &[ModelInput]) -> Result<Tensor> {
        let per = self.spec.input_len();
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(&self.spec.input_shape);
        let mut data = Vec::with_capacity(per * inputs.len());
        for input in inputs {
            match (input, &self.params.bank) {
                (ModelInput::Tensor(t), None) => {
                    if t.shape != self.spec.input_shape {
                        return Err(Error::Shape {
                            expected: self.spec.input_shape.clone(),
                            actual: t.shape.clone(),
                        });
                    }
                    data.extend_from_slice(&t.data);
                }
                (ModelInput::Diagram(d), Some(bank)) => {
                    data.extend(crate::vectorize::project(d, bank).0);
                }
                (ModelInput::Tensor(_), Some(_)) => {
                    return Err(Error::IncompatibleModel("model expects diagrams".into()))
                }
                (ModelInput::Diagram(_), None) => {
                    return Err(Error::IncompatibleModel("model expects tensors".into()))
                }
            }
        }
        Ok(Tensor { shape, data })
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predict(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopRow {
    pub name: String,
    pub params: u64,
    pub forward_flops: u64,
    pub backward_flops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopTable {
    pub batch: usize,
    pub rows: Vec<FlopRow>,
}

impl FlopTable {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_forward(&self) -> u64 {
        self.rows.iter().map(|r| r.forward_flops).sum()
    }

    pub fn total_backward(&self) -> u64 {
        self.rows.iter().map(|r| r.backward_flops).sum()
    }
}

/// `12_345_678` → `"12.35 M"`, `34_944` → `"35 K"`.
pub fn human(n: u64) -> String {
    let x = n as f64;
    if x >= 1e9 {
        format!("{:.2} G", x / 1e9)
    } else if x >= 1e6 {
        format!("{:.2} M", x / 1e6)
    } else if x >= 1e3 {
        format!("{:.0} K", x / 1e3)
    } else {
        format!("{n}")
    }
}

impl fmt::Display for FlopTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>14} {:>10} {:>16} {:>16}",
            "layer", "params", "", "forward FLOPs", "backward FLOPs"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>14} {:>10} {:>16} {:>16}",
                r.name,
                r.params,
                human(r.params),
                human(r.forward_flops),
                human(r.backward_flops)
            )?;
        }
        write!(
            f,
            "{:<8} {:>14} {:>10} {:>16} {:>16}\n(FLOPs per batch of {})",
            "total",
            self.total_params(),
            human(self.total_params()),
            human(self.total_forward()),
            human(self.total_backward()),
            self.batch
        )
    }
}

/// Per-layer parameter and FLOP counts for a batch of `batch` samples.
///
/// conv: `(k²·C_in + 1)·C_out` params, `2·k²·C_in·C_out·H_out·W_out` forward
/// FLOPs; fc: `(in + 1)·out` params, `2·in·out` FLOPs; max-pool: no params,
/// one comparison per window element. Backward is counted as twice the
/// forward cost for conv/fc and equal to it for pooling. A kernel bank adds
/// a `ph` row with `3N` params.
pub fn count_params_flops(
    spec: &NetworkSpec,
    bank: Option<&KernelBank>,
    batch: usize,
) -> Result<FlopTable> {
    let shapes = spec.shapes()?;
    let b = batch as u64;
    let mut rows = Vec::new();
    if let Some(bank) = bank {
        rows.push(FlopRow {
            name: "ph".into(),
            params: bank.param_count() as u64,
            forward_flops: 0,
            backward_flops: 0,
        });
    }
    let (mut n_conv, mut n_pool) = (0, 0);
    for (i, layer) in spec.layers.iter().enumerate() {
        let input = if i == 0 { &spec.input_shape } else { &shapes[i - 1] };
        let out = &shapes[i];
        let prod = |s: &[usize]| s.iter().map(|&d| d as u64).product::<u64>();
        match *layer {
            Layer::Conv { kernel, .. } => {
                n_conv += 1;
                let k2 = (kernel * kernel) as u64;
                let (cin, cout) = (input[0] as u64, out[0] as u64);
                let fwd = 2 * k2 * cin * prod(out) * b;
                rows.push(FlopRow {
                    name: format!("conv{n_conv}"),
                    params: (k2 * cin + 1) * cout,
                    forward_flops: fwd,
                    backward_flops: 2 * fwd,
                });
            }
            Layer::MaxPool { kernel, .. } => {
                n_pool += 1;
                let fwd = (kernel * kernel) as u64 * prod(out) * b;
                rows.push(FlopRow {
                    name: format!("pool{n_pool}"),
                    params: 0,
                    forward_flops: fwd,
                    backward_flops: fwd,
                });
            }
            Layer::Fc { out_dim } => {
                n_conv += 1;
                let (i_dim, o_dim) = (input[0] as u64, out_dim as u64);
                let fwd = 2 * i_dim * o_dim * b;
                rows.push(FlopRow {
                    name: format!("fc{n_conv}"),
                    params: (i_dim + 1) * o_dim,
                    forward_flops: fwd,
                    backward_flops: 2 * fwd,
                });
            }
            _ => {}
        }
    }
    Ok(FlopTable { batch, rows })
}

/// The single-tower AlexNet layout (227×227×3 input, 1000 classes).
pub fn alexnet_spec() -> NetworkSpec {
    let conv = |kernel, out_channels, stride, padding| Layer::Conv {
        kernel,
        out_channels,
        stride,
        padding,
    };
    let pool = Layer::MaxPool {
        kernel: 3,
        stride: 2,
    };
    NetworkSpec {
        input_shape: vec![3, 227, 227],
        layers: vec![
            conv(11, 96, 4, 0),
            Layer::Relu,
            pool,
            conv(5, 256, 1, 2),
            Layer::Relu,
            pool,
            conv(3, 384, 1, 1),
            Layer::Relu,
            conv(3, 384, 1, 1),
            Layer::Relu,
            conv(3, 256, 1, 1),
            Layer::Relu,
            pool,
            Layer::Flatten,
            Layer::Fc { out_dim: 4096 },
            Layer::Relu,
            Layer::Fc { out_dim: 4096 },
            Layer::Relu,
            Layer::Fc { out_dim: 1000 },
            Layer::Softmax,
        ],
        class_count: 1000,
    }
}

/// Conv blocks (3×3 conv, ReLU, 2×2 pool) followed by a hidden fc layer.
pub fn conv_stack(input_shape: &[usize], channels: &[usize], hidden: usize, classes: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    for &c in channels {
        layers.extend([
            Layer::Conv {
                kernel: 3,
                out_channels: c,
                stride: 1,
                padding: 1,
            },
            Layer::Relu,
            Layer::MaxPool {
                kernel: 2,
                stride: 2,
            },
        ]);
    }
    layers.extend([
        Layer::Flatten,
        Layer::Fc { out_dim: hidden },
        Layer::Relu,
        Layer::Fc { out_dim: classes },
        Layer::Softmax,
    ]);
    NetworkSpec {
        input_shape: input_shape.to_vec(),
        layers,
        class_count: classes,
    }
}

/// Two-hidden-layer perceptron on a flat input.
pub fn mlp(input_len: usize, hidden: usize, classes: usize) -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![input_len],
        layers: vec![
            Layer::Fc { out_dim: hidden },
            Layer::Relu,
            Layer::Fc { out_dim: hidden },
            Layer::Relu,
            Layer::Fc { out_dim: classes },
            Layer::Softmax,
        ],
        class_count: classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alexnet_table() {
        let t = count_params_flops(&alexnet_spec(), None, 64).unwrap();
        let params: Vec<(String, u64)> = t
            .rows
            .iter()
            .filter(|r| r.params > 0)
            .map(|r| (r.name.clone(), r.params))
            .collect();
        let expect = [
            ("conv1", 34_944),
            ("conv2", 614_656),
            ("conv3", 885_120),
            ("conv4", 1_327_488),
            ("conv5", 884_992),
            ("fc6", 37_752_832),
            ("fc7", 16_781_312),
            ("fc8", 4_097_000),
        ];
        for ((name, p), (en, ep)) in params.iter().zip(expect) {
            assert_eq!((name.as_str(), *p), (en, ep));
        }
        assert_eq!(t.total_params(), 62_378_344);
        assert_eq!(human(34_944), "35 K");
        assert_eq!(human(4_097_000), "4.10 M");
    }

    #[test]
    fn shape_chain_errors() {
        let mut s = conv_stack(&[1, 16, 16], &[4], 8, 3);
        assert!(s.shapes().is_ok());
        s.layers.pop();
        assert!(s.shapes().is_err());
        let s = NetworkSpec {
            input_shape: vec![4],
            layers: vec![Layer::Fc { out_dim: 3 }, Layer::Softmax],
            class_count: 2,
        };
        assert!(s.shapes().is_err());
    }

    #[test]
    fn predict_ties_to_lowest() {
        assert_eq!(predict(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(predict(&[0.25; 4]), 0);
        let mut f = vec![0.0; 100];
        f[82] = 0.5;
        f[91] = 0.4;
        assert_eq!(predict(&f), 82);
    }

    #[test]
    fn zero_network_is_uniform() {
        let spec = conv_stack(&[1, 8, 8], &[2], 4, 5);
        let m = Model::new(spec, None, InitScheme::Zeros, 0).unwrap();
        let x = ModelInput::Tensor(Tensor::zeros(&[1, 8, 8]));
        let p = m.forward(&[x]).unwrap();
        for v in &p.data {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_round_trip() {
        let spec = mlp(4, 3, 2);
        let m = Model::new(spec, None, InitScheme::HeUniform, 9).unwrap();
        let flat = m.params.to_flat();
        assert_eq!(flat.len(), 5 * 3 + 4 * 3 + 4 * 2);
        let mut p = m.params.clone();
        p.set_flat(&flat).unwrap();
        assert_eq!(p, m.params);
        assert!(p.set_flat(&flat[1..]).is_err());
    }
}
