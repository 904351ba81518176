use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autonet::TrainConfig;
use crate::homology::{FiltrationMode, FiltrationParams};
use crate::io;
use crate::optics::{GridSpec, ModeSet};
use crate::vectorize::NormMode;
use crate::{Error, Result};

/// Image channels stored per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Intensity,
    Phase,
}

impl ChannelKind {
    pub fn tag(self) -> u8 {
        match self {
            ChannelKind::Intensity => 0,
            ChannelKind::Phase => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ChannelKind::Intensity),
            1 => Ok(ChannelKind::Phase),
            t => Err(Error::format("dataset", format!("unknown channel tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_bits: u32,
    /// Topological charges, one per bit. Empty means `1..=n_bits`.
    pub charges: Vec<i32>,
    pub side: usize,
    /// Half-width of the window in units of w0.
    pub extent: f64,
    /// Turbulence level T = D / r0 for `gen`.
    pub turbulence: f64,
    /// Aperture width D in units of w0; unset means the full window.
    pub aperture: Option<f64>,
    /// Propagation after the screen, in Rayleigh ranges.
    pub propagation: f64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
    pub channels: Vec<ChannelKind>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_bits: 4,
            charges: Vec::new(),
            side: 64,
            extent: 3.0,
            turbulence: 0.0,
            aperture: None,
            propagation: 0.0,
            noise_sigma: 0.01,
            samples_per_class: 120,
            channels: vec![ChannelKind::Intensity],
        }
    }
}

impl DataConfig {
    pub fn mode_set(&self) -> Result<ModeSet> {
        if self.charges.is_empty() {
            ModeSet::first_n(self.n_bits as usize)
        } else {
            let modes = ModeSet::new(self.charges.clone())?;
            if modes.len() != self.n_bits as usize {
                return Err(Error::BitCountMismatch {
                    message_bits: self.n_bits,
                    modes: modes.len(),
                });
            }
            Ok(modes)
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.side, self.extent)
    }

    pub fn class_count(&self) -> usize {
        1usize << self.n_bits
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.n_bits) {
            return Err(Error::invalid(format!("n_bits {} outside 1..=16", self.n_bits)));
        }
        self.mode_set()?;
        self.grid()?;
        if self.side > u16::MAX as usize {
            return Err(Error::invalid("side too large"));
        }
        if !(self.turbulence >= 0.0 && self.turbulence.is_finite()) {
            return Err(Error::invalid(format!("turbulence {}", self.turbulence)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma {}", self.noise_sigma)));
        }
        if self.samples_per_class < 2 {
            return Err(Error::invalid("samples_per_class must be >= 2"));
        }
        if self.channels.is_empty() {
            return Err(Error::invalid("at least one channel"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub kernels: usize,
    pub nu: f64,
    pub norm_mode: NormMode,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            kernels: 1024,
            nu: crate::vectorize::DEFAULT_NU,
            norm_mode: NormMode::Literal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Feature vector reshaped to a single-channel map feeding conv blocks.
    #[default]
    Conv,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Output channels of the 3×3 conv / 2×2 pool blocks.
    pub channels: Vec<usize>,
    pub hidden: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            channels: vec![8, 16, 32],
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhCnnConfig {
    pub head: Head,
    pub channels: Vec<usize>,
    pub hidden: usize,
}

impl Default for PhCnnConfig {
    fn default() -> Self {
        PhCnnConfig {
            head: Head::Conv,
            channels: vec![8, 16],
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub bits: Vec<u32>,
    pub turbulence: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            bits: vec![4, 5, 6],
            turbulence: vec![0.0, 3.0, 6.0, 9.0, 12.0],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

/// Everything that determines an experiment's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub split_ratio: f64,
    pub data: DataConfig,
    pub filtration: FiltrationParams,
    pub bank: BankConfig,
    pub cnn: CnnConfig,
    pub ph_cnn: PhCnnConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            split_ratio: 0.85,
            data: DataConfig::default(),
            filtration: FiltrationParams {
                mode: FiltrationMode::Rips,
                max_dim: 1,
                ..FiltrationParams::default()
            },
            bank: BankConfig::default(),
            cnn: CnnConfig::default(),
            ph_cnn: PhCnnConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::invalid(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// sha256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        io::sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        self.data.validate()?;
        self.filtration.validate()?;
        self.train.validate()?;
        if self.bank.kernels == 0 || !(self.bank.nu >= 0.0) {
            return Err(Error::invalid("bank needs kernels >= 1 and nu >= 0"));
        }
        if self.bank.kernels < self.filtration.max_dim + 1 {
            return Err(Error::invalid(format!(
                "{} kernels cannot cover dimensions 0..={}",
                self.bank.kernels, self.filtration.max_dim
            )));
        }
        if self.sweep.bits.iter().any(|b| !(1..=16).contains(b)) {
            return Err(Error::invalid("sweep bits outside 1..=16"));
        }
        if self.sweep.turbulence.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid("sweep turbulence levels must be >= 0"));
        }
        Ok(())
    }
}
