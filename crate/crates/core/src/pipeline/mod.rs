//! Datasets, diagram caches, training, evaluation and the accuracy sweep.

pub mod config;
pub mod dataset;
pub mod diagrams;
pub mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autonet::{self, EpochStats, Model, ModelInput, NetworkSpec, Tensor};
use crate::homology::PersistenceDiagram;
use crate::rng;
use crate::vectorize::{self, even_split, grid_shape};
use crate::{Error, Result};

pub use config::{ChannelKind, ExperimentConfig, Head};
pub use dataset::{generate_dataset, read_dataset, split, write_dataset, Dataset, DatasetMeta};
pub use diagrams::{compute_diagrams, precompute_diagrams};
pub use sweep::{run_cell, run_sweep, CellResult, SweepRow, SweepSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    PhCnn,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Cnn => "cnn",
            ModelKind::PhCnn => "ph_cnn",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(ModelKind::Cnn),
            "ph_cnn" | "ph-cnn" => Ok(ModelKind::PhCnn),
            _ => Err(Error::invalid(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Network layout for `kind` on data with `channels` image channels.
pub fn network_spec(kind: ModelKind, cfg: &ExperimentConfig, channels: usize, n_bits: u32) -> Result<NetworkSpec> {
    let classes = 1usize << n_bits;
    let spec = match kind {
        ModelKind::Cnn => {
            let side = cfg.data.side;
            autonet::conv_stack(&[channels, side, side], &cfg.cnn.channels, cfg.cnn.hidden, classes)
        }
        ModelKind::PhCnn => {
            let n = cfg.bank.kernels;
            match cfg.ph_cnn.head {
                Head::Mlp => autonet::mlp(n, cfg.ph_cnn.hidden, classes),
                Head::Conv => {
                    let dims = cfg.filtration.max_dim + 1;
                    if n % dims != 0 {
                        return Err(Error::invalid(format!(
                            "conv head needs the {n} kernels split evenly over {dims} dimensions"
                        )));
                    }
                    let (rows, cols) = grid_shape(n / dims);
                    autonet::conv_stack(&[1, rows * dims, cols], &cfg.ph_cnn.channels, cfg.ph_cnn.hidden, classes)
                }
            }
        }
    };
    spec.shapes()?;
    Ok(spec)
}

/// Network input for sample `i`: each channel scaled to a fixed range
/// (intensity by its own maximum, phase by π).
pub fn tensor_input(dataset: &Dataset, i: usize) -> Tensor {
    let n = dataset.side * dataset.side;
    let s = &dataset.samples[i];
    let mut data = Vec::with_capacity(s.data.len());
    for (c, kind) in dataset.channels.iter().enumerate() {
        let chunk = &s.data[c * n..(c + 1) * n];
        let scale = match kind {
            ChannelKind::Intensity => {
                let m = chunk.iter().copied().fold(0.0f32, f32::max) as f64;
                if m > 0.0 {
                    1.0 / m
                } else {
                    0.0
                }
            }
            ChannelKind::Phase => 1.0 / std::f64::consts::PI,
        };
        data.extend(chunk.iter().map(|&v| v as f64 * scale));
    }
    Tensor {
        shape: vec![dataset.channels.len(), dataset.side, dataset.side],
        data,
    }
}

/// Model inputs for the given sample indices.
pub fn model_inputs(
    kind: ModelKind,
    dataset: &Dataset,
    diagrams: Option<&[PersistenceDiagram]>,
    idx: &[usize],
) -> Result<Vec<ModelInput>> {
    match kind {
        ModelKind::Cnn => Ok(idx.iter().map(|&i| ModelInput::Tensor(tensor_input(dataset, i))).collect()),
        ModelKind::PhCnn => {
            let d = diagrams.ok_or_else(|| Error::invalid("ph_cnn needs persistence diagrams"))?;
            if d.len() != dataset.samples.len() {
                return Err(Error::invalid(format!(
                    "{} diagrams for {} samples",
                    d.len(),
                    dataset.samples.len()
                )));
            }
            Ok(idx.iter().map(|&i| ModelInput::Diagram(d[i].clone())).collect())
        }
    }
}

pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Train a model of `kind` on the samples `train_idx`.
///
/// For `ph_cnn` the kernel bank is initialised from the training diagrams
/// and trained jointly with the network.
pub fn train_model(
    kind: ModelKind,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    diagrams: Option<&[PersistenceDiagram]>,
    train_idx: &[usize],
) -> Result<TrainedModel> {
    let spec = network_spec(kind, cfg, dataset.channels.len(), dataset.n_bits)?;
    let inputs = model_inputs(kind, dataset, diagrams, train_idx)?;
    let labels: Vec<usize> = train_idx.iter().map(|&i| dataset.samples[i].label as usize).collect();
    let bank = match kind {
        ModelKind::Cnn => None,
        ModelKind::PhCnn => {
            let d = diagrams.expect("checked by model_inputs");
            let sample: Vec<PersistenceDiagram> = train_idx.iter().map(|&i| d[i].clone()).collect();
            Some(vectorize::init_bank(
                cfg.bank.kernels,
                &even_split(cfg.bank.kernels, cfg.filtration.max_dim),
                &sample,
                cfg.bank.nu,
                cfg.bank.norm_mode,
            )?)
        }
    };
    let init_seed = rng::derive_seed(&[cfg.train.seed, kind as u64]);
    let mut model = Model::new(spec, bank, cfg.train.init, init_seed)?;
    let history = autonet::fit(&mut model, &inputs, &labels, &cfg.train)?;
    Ok(TrainedModel { model, history })
}

/// `epoch,loss,accuracy` rows.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for h in history {
        s.push_str(&format!("{},{:.9},{:.6}\n", h.epoch, h.loss, h.accuracy));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub model: ModelKind,
    pub n_bits: u32,
    pub turbulence: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub p_e: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<f64>,
    pub meta: EvalMeta,
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predicted: &[usize], classes: usize, meta: EvalMeta) -> Self {
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in labels.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let total = labels.len().max(1) as f64;
        let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[c] as f64 / n as f64
                }
            })
            .collect();
        let accuracy = correct as f64 / total;
        EvalReport {
            accuracy,
            p_e: 1.0 - accuracy,
            confusion,
            per_class,
            meta,
        }
    }
}

/// Predicted class of every input, evaluated in fixed-size chunks.
pub fn predict_all(model: &Model, inputs: &[ModelInput]) -> Result<Vec<usize>> {
    let m = model.spec.class_count;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(256) {
        let probs = model.forward(chunk)?;
        out.extend(probs.data.chunks(m).map(autonet::predict));
    }
    Ok(out)
}

pub fn evaluate(model: &Model, inputs: &[ModelInput], labels: &[usize], meta: EvalMeta) -> Result<EvalReport> {
    if inputs.len() != labels.len() {
        return Err(Error::invalid("inputs and labels differ in length"));
    }
    let classes = model.spec.class_count;
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IncompatibleModel(format!("label {l} but the model has {classes} classes")));
    }
    let predicted = predict_all(model, inputs)?;
    Ok(EvalReport::from_predictions(labels, &predicted, classes, meta))
}
