//! Config resolution: preset, then config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use diarize_core::evaluate::PostProcessConfig;
use diarize_core::features::FeatureConfig;
use diarize_core::meetingsim::{CorpusConfig, MeetingConfig};
use diarize_core::model::{ModelConfig, SpeakerModuleKind};
use diarize_core::trainer::TrainConfig;

use crate::error::{io_error, CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "DIARIZE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "diarize-out";

/// Explicit path, else `<root>/<command>`.
pub fn output_dir(explicit: Option<PathBuf>, root: Option<&Path>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        root.map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
            .join(command)
    })
}

/// Creates `dir`, refusing one that already has entries unless `force`.
pub fn prepare_output(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
        if !force && entries.next().is_some() {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force to write into it)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// `a:b`, or a single value meaning `a:a`.
pub fn parse_range<T>(s: &str) -> Result<(T, T), String>
where
    T: std::str::FromStr + PartialOrd + Copy,
    T::Err: std::fmt::Display,
{
    let parse = |p: &str| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}"));
    let (lo, hi) = match s.split_once(':') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("range {s:?} is decreasing"));
    }
    Ok((lo, hi))
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Overlays a config file on `base`. TOML files may be partial; a JSON
/// file is read as a run manifest and its resolved config is used.
pub fn overlay_file<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let over: serde_json::Value = if path.extension().is_some_and(|e| e == "json") {
        let m: serde_json::Value = serde_json::from_str(&text)?;
        m.get("config")
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{} has no config field", path.display())))?
    } else {
        let t: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t)?
    };
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, over);
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub corpus: CorpusConfig,
    /// Directory from `synth-corpus`; without it the corpus is synthesized
    /// in memory from `corpus` and the run seed.
    pub corpus_dir: Option<PathBuf>,
    pub meeting: MeetingConfig,
    pub features: FeatureConfig,
    /// Materialized training meetings; unused when `dynamic`.
    pub train_meetings: usize,
    /// Fresh meetings for every example instead of a fixed set.
    pub dynamic: bool,
    pub heldout_meetings: usize,
}

/// Everything `train` needs to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub postprocess: PostProcessConfig,
    /// Two-stage models: train stage 1, then stage 2 with stage 1 frozen.
    pub stage_wise: bool,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self {
                seed: 0,
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                data: DataConfig {
                    corpus: CorpusConfig::default(),
                    corpus_dir: None,
                    meeting: MeetingConfig::default(),
                    features: FeatureConfig::default(),
                    train_meetings: 300,
                    dynamic: false,
                    heldout_meetings: 60,
                },
                postprocess: PostProcessConfig::default(),
                stage_wise: false,
            },
            Preset::Full => Self {
                seed: 0,
                model: ModelConfig::full_scale(),
                train: TrainConfig::full_scale(),
                data: DataConfig {
                    corpus: CorpusConfig {
                        num_speakers: 1000,
                        utterances_per_speaker: 8,
                        min_utterance_s: 2.0,
                        max_utterance_s: 15.0,
                        ..CorpusConfig::default()
                    },
                    corpus_dir: None,
                    meeting: MeetingConfig {
                        duration_s: 120.0,
                        speakers: (1, 8),
                        overlap: (0.2, 0.5),
                        max_speakers: 8,
                        ..MeetingConfig::default()
                    },
                    features: FeatureConfig::default(),
                    train_meetings: 0,
                    dynamic: true,
                    heldout_meetings: 100,
                },
                postprocess: PostProcessConfig::default(),
                stage_wise: false,
            },
        }
    }

    pub fn corpus_seed(&self) -> u64 {
        self.seed
    }

    pub fn train_data_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn heldout_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    /// Cross-checks between sections; the corpus size is checked once the
    /// corpus is loaded.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.postprocess.validate()?;
        if self.data.features.dim() != self.model.feature_dim {
            return Err(CliError::Usage(format!(
                "front end produces {}-dim features but the model expects {}",
                self.data.features.dim(),
                self.model.feature_dim
            )));
        }
        if self.data.meeting.max_speakers != self.model.max_speakers {
            return Err(CliError::Usage(format!(
                "meetings are labeled with {} slots but the model has {}",
                self.data.meeting.max_speakers, self.model.max_speakers
            )));
        }
        if !self.data.dynamic && self.data.train_meetings == 0 {
            return Err(CliError::Usage(
                "materialized training needs at least one meeting".into(),
            ));
        }
        Ok(())
    }

    pub fn check_corpus_size(&self, speakers: usize) -> CliResult<()> {
        let uses_ids = self.model.speaker_module != SpeakerModuleKind::None;
        if uses_ids && speakers > self.model.num_train_speakers {
            return Err(CliError::Usage(format!(
                "corpus has {speakers} speakers but the speaker classifier knows {}",
                self.model.num_train_speakers
            )));
        }
        Ok(())
    }
}
