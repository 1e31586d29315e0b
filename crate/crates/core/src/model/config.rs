use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Full,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerModuleKind {
    None,
    /// Joint speaker classifier applied directly to the local embeddings.
    Local,
    /// Separate speaker encoder, multi-label classifier over all speakers.
    Joint,
    /// Separate speaker encoder split into one normalized embedding per slot.
    Individual,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub version: u32,
    /// Output slots (maximum speakers per meeting).
    pub max_speakers: usize,
    pub feature_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// Dilation layers per TDCN repeat; block `b` uses dilation `2^(b mod M)`.
    pub dilation_layers: usize,
    /// TDCN repeats; 0 disables the TDCN and leaves only the input projection.
    pub repeats: usize,
    pub tdcn_kernel: usize,
    pub sa_layers: usize,
    pub attention: AttentionKind,
    pub speaker_module: SpeakerModuleKind,
    /// Speakers in the training corpus.
    pub num_train_speakers: usize,
    pub stages: usize,
    pub ffn_expansion: usize,
    /// Separate diarization layer on the local embeddings.
    pub local_head: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: TDCN-SA with the local diarization head.
    pub fn desk() -> Self {
        Self {
            version: CONFIG_VERSION,
            max_speakers: 4,
            feature_dim: 64 * 21,
            model_dim: 64,
            heads: 4,
            dilation_layers: 4,
            repeats: 2,
            tdcn_kernel: 3,
            sa_layers: 2,
            attention: AttentionKind::Full,
            speaker_module: SpeakerModuleKind::None,
            num_train_speakers: 16,
            stages: 1,
            ffn_expansion: 4,
            local_head: true,
        }
    }

    /// Desk TDCN-SA without the local head.
    pub fn desk_tdcn_sa() -> Self {
        Self {
            local_head: false,
            ..Self::desk()
        }
    }

    /// Desk self-attention stack alone: no TDCN blocks, no local head.
    pub fn desk_sa_only() -> Self {
        Self {
            repeats: 0,
            local_head: false,
            ..Self::desk()
        }
    }

    /// Full-size configuration (8 speakers, D=512, 6 SA layers,
    /// 4 repeats of 8 dilation layers).
    pub fn full_scale() -> Self {
        Self {
            max_speakers: 8,
            model_dim: 512,
            heads: 8,
            dilation_layers: 8,
            repeats: 4,
            sa_layers: 6,
            num_train_speakers: 1000,
            ..Self::desk()
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            max_speakers: 2,
            feature_dim: 6,
            model_dim: 8,
            heads: 2,
            dilation_layers: 2,
            repeats: 1,
            sa_layers: 1,
            num_train_speakers: 3,
            ..Self::desk()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn tdcn_blocks(&self) -> usize {
        self.repeats * self.dilation_layers
    }

    /// Input width for stage `stage` (0-based); later stages also see the
    /// previous stage's probabilities.
    pub fn stage_input_dim(&self, stage: usize) -> usize {
        if stage == 0 {
            self.feature_dim
        } else {
            self.feature_dim + self.max_speakers
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported model config version {}", self.version));
        }
        if self.max_speakers == 0 || self.feature_dim == 0 || self.model_dim < 2 {
            return fail("speakers, features and model dim must be positive (D >= 2)".into());
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return fail(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.speaker_module == SpeakerModuleKind::Individual
            && self.model_dim % self.max_speakers != 0
        {
            return fail(format!(
                "individual speaker embeddings need D={} divisible by S={}",
                self.model_dim, self.max_speakers
            ));
        }
        if self.tdcn_kernel % 2 == 0 {
            return fail(format!("TDCN kernel {} must be odd", self.tdcn_kernel));
        }
        if self.repeats > 0 && self.dilation_layers == 0 {
            return fail("TDCN repeats need at least one dilation layer".into());
        }
        if !(1..=2).contains(&self.stages) {
            return fail(format!("stages must be 1 or 2, got {}", self.stages));
        }
        if self.speaker_module != SpeakerModuleKind::None && self.num_train_speakers == 0 {
            return fail("speaker module needs a non-empty training speaker set".into());
        }
        if self.ffn_expansion == 0 {
            return fail("ffn expansion must be positive".into());
        }
        Ok(())
    }

    /// Frames influencing one TDCN output frame.
    pub fn receptive_field(&self) -> usize {
        let per_repeat: usize = (0..self.dilation_layers).map(|b| 1usize << b).sum();
        1 + (self.tdcn_kernel - 1) * per_repeat * self.repeats
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [ModelConfig::desk(), ModelConfig::full_scale(), ModelConfig::tiny()] {
            c.validate().unwrap();
        }
        assert_eq!(ModelConfig::full_scale().tdcn_blocks(), 32);
    }

    #[test]
    fn receptive_field_of_desk_stack() {
        let c = ModelConfig {
            dilation_layers: 4,
            repeats: 2,
            tdcn_kernel: 3,
            ..ModelConfig::desk()
        };
        assert_eq!(c.receptive_field(), 61);
    }

    #[test]
    fn stage_two_width() {
        let c = ModelConfig {
            feature_dim: 1344,
            max_speakers: 8,
            stages: 2,
            ..ModelConfig::desk()
        };
        assert_eq!(c.stage_input_dim(1), 1352);
    }

    #[test]
    fn individual_needs_divisible_dim() {
        let c = ModelConfig {
            model_dim: 66,
            heads: 3,
            max_speakers: 4,
            speaker_module: SpeakerModuleKind::Individual,
            ..ModelConfig::desk()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig {
            attention: AttentionKind::Linear,
            speaker_module: SpeakerModuleKind::Joint,
            ..ModelConfig::desk()
        };
        let text = c.to_toml().unwrap();
        assert!(text.contains("attention = \"linear\""));
        assert_eq!(ModelConfig::from_toml(&text).unwrap(), c);
    }
}
