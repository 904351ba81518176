//! `OAMM` model files.
//!
//! ```text
//! "OAMM" u32 version
//! u32 class_count, u8 rank, rank × u32 input extents
//! u32 layer_count, per layer: u8 tag + u32 fields
//!     conv(0): kernel, out_channels, stride, padding
//!     maxpool(1): kernel, stride
//!     relu(2) flatten(3) softmax(5): no fields
//!     fc(4): out_dim
//! u8 has_bank; if 1: u32 N, f64 nu, u8 norm_mode, N × (f64 μ₁, f64 μ₂, f64 σ, u8 dim)
//! all conv/fc weights and biases as f64, declaration order
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::{Layer, Model, ModelParams, NetworkSpec, Tensor};
use crate::io::{self, Reader, Writer};
use crate::vectorize::{Kernel, KernelBank, NormMode};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"OAMM";
const VERSION: u32 = 1;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let spec = &model.spec;
    w.u32(spec.class_count as u32);
    w.u8(spec.input_shape.len() as u8);
    for &d in &spec.input_shape {
        w.u32(d as u32);
    }
    w.u32(spec.layers.len() as u32);
    for layer in &spec.layers {
        w.u8(layer.tag());
        match *layer {
            Layer::Conv {
                kernel,
                out_channels,
                stride,
                padding,
            } => {
                for v in [kernel, out_channels, stride, padding] {
                    w.u32(v as u32);
                }
            }
            Layer::MaxPool { kernel, stride } => {
                w.u32(kernel as u32);
                w.u32(stride as u32);
            }
            Layer::Fc { out_dim } => w.u32(out_dim as u32),
            Layer::Relu | Layer::Flatten | Layer::Softmax => {}
        }
    }
    match &model.params.bank {
        None => w.u8(0),
        Some(bank) => {
            w.u8(1);
            w.u32(bank.len() as u32);
            w.f64(bank.nu);
            w.u8(match bank.norm_mode {
                NormMode::Literal => 0,
                NormMode::Squared => 1,
            });
            for k in &bank.kernels {
                w.f64(k.mu[0]);
                w.f64(k.mu[1]);
                w.f64(k.sigma);
                w.u8(k.dim);
            }
        }
    }
    for t in &model.params.tensors {
        for &v in &t.data {
            w.f64(v);
        }
    }
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes, "model");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format("model", format!("unsupported version {version}")));
    }
    let class_count = r.u32()? as usize;
    let rank = r.u8()? as usize;
    let input_shape = (0..rank)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32()? as usize;
    if n_layers > 4096 {
        return Err(Error::format("model", format!("{n_layers} layers")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.u8()?;
        let mut u = || r.u32().map(|v| v as usize);
        let layer = match tag {
            0 => Layer::Conv {
                kernel: u()?,
                out_channels: u()?,
                stride: u()?,
                padding: u()?,
            },
            1 => Layer::MaxPool {
                kernel: u()?,
                stride: u()?,
            },
            2 => Layer::Relu,
            3 => Layer::Flatten,
            4 => Layer::Fc { out_dim: u()? },
            5 => Layer::Softmax,
            t => return Err(Error::format("model", format!("unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    let spec = NetworkSpec {
        input_shape,
        layers,
        class_count,
    };
    let shapes = spec
        .param_shapes()
        .map_err(|e| Error::format("model", format!("invalid network: {e}")))?;
    let bank = match r.u8()? {
        0 => None,
        1 => {
            let n = r.u32()? as usize;
            let nu = r.f64()?;
            let norm_mode = match r.u8()? {
                0 => NormMode::Literal,
                1 => NormMode::Squared,
                m => return Err(Error::format("model", format!("unknown norm mode {m}"))),
            };
            let mut kernels = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let mu = [r.f64()?, r.f64()?];
                let sigma = r.f64()?;
                let dim = r.u8()?;
                kernels.push(Kernel { mu, sigma, dim });
            }
            Some(KernelBank::new(kernels, nu, norm_mode)?)
        }
        b => return Err(Error::format("model", format!("bad bank flag {b}"))),
    };
    let mut tensors = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format("model", "tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor {
            shape: shape.clone(),
            data,
        });
    }
    r.finish()?;
    if let Some(b) = &bank {
        if b.len() != spec.input_len() {
            return Err(Error::IncompatibleModel(format!(
                "{} kernels for input shape {:?}",
                b.len(),
                spec.input_shape
            )));
        }
    }
    Ok(Model {
        spec,
        params: ModelParams { tensors, bank },
    })
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    io::write_atomic(path, &encode_model(model))
}

pub fn read_model(path: &Path) -> Result<Model> {
    decode_model(&io::read_file(path)?)
}
