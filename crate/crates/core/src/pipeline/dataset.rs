//! `OAMD` datasets.
//!
//! ```text
//! "OAMD" u32 version=1 u32 sample_count u16 side u16 side
//! u8 channel_count u8 dtype(0 = f32) u16 n_bits channel_count × u8 kind
//! per sample: u32 label, u64 sample_seed, channel_count·side² f32 row-major
//! ```
//!
//! A JSON sidecar (`<file>.json`) records how the samples were made.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ChannelKind, DataConfig};
use crate::io::{self, Reader, Writer};
use crate::optics::{self, GridSpec, Image, Message};
use crate::rng;
use crate::turbulence::{self, ScreenGenerator, TurbulenceSpec};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"OAMD";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: u32,
    pub seed: u64,
    /// `channels.len() · side²` values, channel-major.
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub n_bits: u32,
    pub channels: Vec<ChannelKind>,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub charges: Vec<i32>,
    pub turbulence: f64,
    pub noise_sigma: f64,
    pub extent: f64,
    pub aperture: Option<f64>,
    pub propagation: f64,
    pub samples_per_class: usize,
    pub master_seed: u64,
    pub config_hash: String,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        1usize << self.n_bits
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label as usize).collect()
    }

    /// Channel `kind` of sample `i` as an image on `grid`.
    pub fn image(&self, i: usize, kind: ChannelKind, grid: GridSpec) -> Result<Image> {
        let c = self
            .channels
            .iter()
            .position(|&k| k == kind)
            .ok_or_else(|| Error::invalid(format!("dataset has no {kind:?} channel")))?;
        let n = self.side * self.side;
        let s = &self.samples[i];
        Image::from_values(grid, s.data[c * n..(c + 1) * n].iter().map(|&v| v as f64).collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.samples.len() as u32);
        w.u16(self.side as u16);
        w.u16(self.side as u16);
        w.u8(self.channels.len() as u8);
        w.u8(0);
        w.u16(self.n_bits as u16);
        for c in &self.channels {
            w.u8(c.tag());
        }
        for s in &self.samples {
            w.u32(s.label);
            w.u64(s.seed);
            for &v in &s.data {
                w.f32(v);
            }
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("dataset", format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let (h, w) = (r.u16()? as usize, r.u16()? as usize);
        if h != w {
            return Err(Error::format("dataset", format!("non-square {h}x{w} images")));
        }
        let n_channels = r.u8()? as usize;
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(Error::format("dataset", format!("unsupported dtype {dtype}")));
        }
        let n_bits = r.u16()? as u32;
        let channels = (0..n_channels)
            .map(|_| r.u8().and_then(ChannelKind::from_tag))
            .collect::<Result<Vec<_>>>()?;
        let per = n_channels * h * w;
        let mut samples = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let label = r.u32()?;
            if n_bits < 32 && label >= 1 << n_bits {
                return Err(Error::format("dataset", format!("label {label} out of range")));
            }
            let seed = r.u64()?;
            let raw = r.take(per * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            samples.push(Sample { label, seed, data });
        }
        r.finish()?;
        Ok(Dataset {
            side: h,
            n_bits,
            channels,
            samples,
        })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_dataset(path: &Path, dataset: &Dataset, meta: &DatasetMeta) -> Result<()> {
    io::write_atomic(path, &dataset.encode())?;
    let json = serde_json::to_string_pretty(meta).expect("metadata serialises");
    io::write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::decode(&io::read_file(path)?)
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let bytes = io::read_file(&sidecar_path(path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format("dataset metadata", e.to_string()))
}

/// Seed of sample `index` of class `class`.
pub fn sample_seed(master: u64, class: usize, index: usize) -> u64 {
    rng::derive_seed(&[master, class as u64, index as u64])
}

/// Generate `samples_per_class` channel realisations of every message.
///
/// Samples are ordered by class, then index; each depends only on
/// `(master_seed, class, index)`, so generation runs in parallel without
/// changing a byte of the result.
pub fn generate_dataset(cfg: &DataConfig, master_seed: u64) -> Result<(Dataset, DatasetMeta)> {
    cfg.validate()?;
    let modes = cfg.mode_set()?;
    let grid = cfg.grid()?;
    let classes = cfg.class_count();
    let base = TurbulenceSpec {
        level: cfg.turbulence,
        grid,
        aperture: cfg.aperture,
        propagation: cfg.propagation,
        seed: 0,
    };
    base.validate()?;
    let generator = (cfg.turbulence > 0.0).then(|| ScreenGenerator::for_spec(&base));
    let clean: Vec<_> = (0..classes)
        .map(|c| optics::encode(Message::new(c as u64, cfg.n_bits)?, &modes, grid))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..classes)
        .flat_map(|c| (0..cfg.samples_per_class).map(move |i| (c, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(class, index)| {
            let seed = sample_seed(master_seed, class, index);
            let spec = TurbulenceSpec { seed, ..base };
            let screen = match &generator {
                Some(g) => g.generate(cfg.turbulence, seed),
                None => Image::zeros(grid),
            };
            let rx = turbulence::channel_with_screen(&clean[class], &spec, &screen, cfg.noise_sigma)?;
            let mut data = Vec::with_capacity(cfg.channels.len() * grid.len());
            for kind in &cfg.channels {
                let img = match kind {
                    ChannelKind::Intensity => optics::intensity(&rx),
                    ChannelKind::Phase => optics::phase(&rx),
                };
                data.extend(img.values.iter().map(|&v| v as f32));
            }
            Ok(Sample {
                label: class as u32,
                seed,
                data,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        side: cfg.side,
        n_bits: cfg.n_bits,
        channels: cfg.channels.clone(),
        samples,
    };
    let meta = DatasetMeta {
        charges: modes.charges().to_vec(),
        turbulence: cfg.turbulence,
        noise_sigma: cfg.noise_sigma,
        extent: cfg.extent,
        aperture: cfg.aperture,
        propagation: cfg.propagation,
        samples_per_class: cfg.samples_per_class,
        master_seed,
        config_hash: io::sha256_hex(toml::to_string(cfg).expect("serialises").as_bytes()),
    };
    Ok((dataset, meta))
}

/// Stratified split. Each class keeps `min(⌈ratio·c⌉, c − 1)` samples for
/// training; membership is a seeded shuffle of the class's indices.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count()];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label as usize].push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has {} samples; a split needs at least 2",
                idx.len()
            )));
        }
        let c = idx.len();
        let n_train = ((ratio * c as f64 - 1e-9).ceil() as usize).clamp(1, c - 1);
        let mut stream = rng::stream(rng::derive_seed(&[seed, class as u64]));
        rng::shuffle(&mut stream, &mut idx);
        let (a, b) = idx.split_at(n_train);
        train.extend_from_slice(a);
        test.extend_from_slice(b);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
