//! Layered configuration: built-in defaults, then an optional TOML file,
//! then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenDataConfig {
    pub out: PathBuf,
    pub subjects: usize,
    pub quadruplets: usize,
    pub test_poses: usize,
    pub test_views: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            out: "data".into(),
            subjects: 3,
            quadruplets: 300,
            test_poses: 10,
            test_views: 2,
            image_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    pub data: PathBuf,
    pub out: PathBuf,
    pub preset: Preset,
    /// Preset value when absent.
    pub steps: Option<u64>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub seed: u64,
    pub pose_consistency: bool,
    pub checkpoint_every: Option<u64>,
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many steps (0 = quiet).
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            data: "data".into(),
            out: "runs/train".into(),
            preset: Preset::Desk,
            steps: None,
            batch: None,
            lr: None,
            seed: 0,
            pose_consistency: true,
            checkpoint_every: None,
            resume: None,
            log_every: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolArg {
    Standard,
    Hard,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSection {
    pub data: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub oracle: bool,
    pub protocol: ProtocolArg,
    pub out: PathBuf,
    pub label: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoint: None,
            oracle: false,
            protocol: ProtocolArg::Both,
            out: "runs/eval".into(),
            label: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RenderSection {
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    /// Dataset whose camera intrinsics and lights apply to `image`.
    pub data: PathBuf,
    pub input_azimuth: String,
    /// Offset added to the input azimuth.
    pub azimuth: String,
    /// Absolute elevation; the dataset's when absent.
    pub elevation: Option<String>,
    pub directional: Option<f64>,
    pub ambient: Option<f64>,
    pub recolor: bool,
    pub export_obj: bool,
    pub out: PathBuf,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            image: None,
            data: "data".into(),
            input_azimuth: "0deg".into(),
            azimuth: "0deg".into(),
            elevation: None,
            directional: None,
            ambient: None,
            recolor: false,
            export_obj: false,
            out: "runs/render".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub version: u32,
    pub gen_data: GenDataConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub render: RenderSection,
}

impl ConfigFile {
    pub fn defaults() -> Self {
        Self {
            version: CONFIG_VERSION,
            ..Self::default()
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let user = |m: String| CliError::User(format!("{}: {m}", origin.display()));
        let file: ConfigFile = toml::from_str(text).map_err(|e| user(e.to_string()))?;
        if file.version != CONFIG_VERSION {
            return Err(user(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::defaults()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
                Self::parse(&text, p)
            }
        }
    }
}

/// Overwrite `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
