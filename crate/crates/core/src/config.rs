//! Run configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::head::HeadConfig;
use crate::lfs::LfsConfig;
use crate::vafm::VafmConfig;

/// The four ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Modules {
    pub lfs: bool,
    pub rsfdm: bool,
    pub dctam: bool,
    pub vafm: bool,
}

impl Default for Modules {
    fn default() -> Self {
        Self {
            lfs: true,
            rsfdm: true,
            dctam: true,
            vafm: true,
        }
    }
}

impl Modules {
    /// All sixteen on/off combinations, full model first.
    pub fn all_combinations() -> Vec<Modules> {
        (0..16u8)
            .map(|bits| Modules {
                lfs: bits & 1 == 0,
                rsfdm: bits & 2 == 0,
                dctam: bits & 4 == 0,
                vafm: bits & 8 == 0,
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let names = [
            (self.lfs, "lfs"),
            (self.rsfdm, "rsfdm"),
            (self.dctam, "dctam"),
            (self.vafm, "vafm"),
        ];
        let off: Vec<&str> = names.iter().filter(|(on, _)| !on).map(|(_, n)| *n).collect();
        if off.is_empty() {
            "full".into()
        } else {
            format!("no-{}", off.join("-no-"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Balanced coherent/jitter/desync pairs from the generator.
    Synthetic {
        train: usize,
        test: usize,
        frames: usize,
        size: usize,
    },
    /// A JSON Lines manifest; clip `id` lives at `root/id/` with audio at
    /// `root/id.wav`.
    Manifest {
        manifest: PathBuf,
        root: PathBuf,
        frames: usize,
        size: usize,
        #[serde(default = "one")]
        frame_stride: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            train: 1600,
            test: 400,
            frames: 8,
            size: 32,
        }
    }
}

impl DatasetSpec {
    pub fn frames(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { frames, .. } | DatasetSpec::Manifest { frames, .. } => *frames,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { size, .. } | DatasetSpec::Manifest { size, .. } => *size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels of the strided stem that produces the visual feature map.
    pub visual_channels: usize,
    /// Channels of the audio map.
    pub audio_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_channels: 16,
            audio_channels: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DctamConfig {
    pub k_fraction: f64,
    /// Per-pixel attention is single-headed; only 1 is accepted.
    pub heads: usize,
}

impl Default for DctamConfig {
    fn default() -> Self {
        Self {
            k_fraction: 0.5,
            heads: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    Logmel,
    Pretrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub adapter: AdapterKind,
    pub pretrained_path: Option<PathBuf>,
    pub res_dim: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            adapter: AdapterKind::Logmel,
            pretrained_path: None,
            res_dim: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub audio_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { audio_weight: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Where checkpoints and reports go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    pub modules: Modules,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub dctam: DctamConfig,
    pub vafm: VafmConfig,
    pub lfs: LfsConfig,
    pub audio: AudioConfig,
    pub head: HeadConfig,
    pub loss: LossConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            output_dir: None,
            modules: Modules::default(),
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            dctam: DctamConfig::default(),
            vafm: VafmConfig::default(),
            lfs: LfsConfig::default(),
            audio: AudioConfig::default(),
            head: HeadConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl RunConfig {
    /// Narrow widths sized for single-core synthetic runs.
    pub fn synthetic_small() -> Self {
        Self {
            epochs: 10,
            learning_rate: 3e-3,
            model: ModelConfig {
                visual_channels: 8,
                audio_channels: 8,
            },
            vafm: VafmConfig {
                heads: 4,
                width: 16,
                ..VafmConfig::default()
            },
            audio: AudioConfig {
                res_dim: 64,
                ..AudioConfig::default()
            },
            head: HeadConfig {
                width: 32,
                ..HeadConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(self.dctam.k_fraction > 0.0 && self.dctam.k_fraction <= 1.0) {
            return bad(format!("dctam.k_fraction {} outside (0, 1]", self.dctam.k_fraction));
        }
        if self.dctam.heads != 1 {
            return bad("dctam.heads must be 1".into());
        }
        if self.vafm.heads == 0 || self.vafm.width % self.vafm.heads != 0 {
            return bad(format!("vafm.width {} not divisible by heads {}", self.vafm.width, self.vafm.heads));
        }
        if self.head.kernel % 2 == 0 {
            return bad("head.kernel must be odd".into());
        }
        if self.loss.audio_weight < 0.0 {
            return bad("loss.audio_weight must be >= 0".into());
        }
        if self.audio.adapter == AdapterKind::Pretrained && self.audio.pretrained_path.is_none() {
            return bad("audio.pretrained_path is required for the pretrained adapter".into());
        }
        let (t, s) = (self.dataset.frames(), self.dataset.size());
        if t < 2 || (self.modules.dctam && t % 4 != 0) {
            return bad(format!("frame count {t}: need >= 2, and a multiple of 4 with dctam on"));
        }
        if s == 0 || s % 16 != 0 {
            return bad(format!("crop size {s} must be a positive multiple of 16"));
        }
        if self.modules.lfs {
            let l = &self.lfs;
            if l.window == 0 || l.stride == 0 || l.bands == 0 {
                return bad("lfs window, stride and bands must be positive".into());
            }
            let blocks = s.checked_sub(l.window).map(|r| r / l.stride + 1).unwrap_or(0);
            if blocks < crate::audio::AUDIO_GRID {
                return bad(format!(
                    "crop size {s} gives {blocks} LFS blocks per side, need {}",
                    crate::audio::AUDIO_GRID
                ));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
