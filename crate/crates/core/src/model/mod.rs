//! Diarization network: TDCN local encoder, optional speaker module,
//! self-attention global encoder and sigmoid diarization head, optionally
//! chained into two stages.

pub mod blocks;
pub mod config;

use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureStats};
use crate::gradcore::{BoundParams, Container, Graph, ParamSet, Tensor, Var};
use crate::rng::stream_rng;
use crate::types::DiarizationProbs;

pub use crate::gradcore::ops::{attention_full, attention_linear};
pub use blocks::{
    diarization_head, multi_head_attention, sa_block, tdcn_forward, LAYER_NORM_EPS,
};
pub use config::{AttentionKind, ModelConfig, SpeakerModuleKind, CONFIG_VERSION};

use blocks::{init_linear, init_sa_block, init_tdcn, linear};

pub const CHECKPOINT_FORMAT: &str = "diarize-model";
const PARAM_PREFIX: &str = "param/";

/// Speaker-classifier outputs on the graph.
#[derive(Clone, Debug)]
pub enum SpeakerOutput {
    /// Multi-label probabilities over training speakers, `T×C`.
    Joint(Var),
    /// One `T×(C+1)` logit matrix per slot; class `C` means "no speaker".
    Individual(Vec<Var>),
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    /// Diarization probabilities, `T×S`.
    pub probs: Var,
    /// Probabilities from the auxiliary head on the local embeddings.
    pub local_probs: Option<Var>,
    pub speaker: Option<SpeakerOutput>,
    pub local_embeddings: Var,
    pub global_embeddings: Var,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub stages: Vec<StageOutput>,
}

impl ModelOutput {
    pub fn last(&self) -> &StageOutput {
        self.stages.last().expect("at least one stage")
    }
}

pub fn stage_prefix(stage: usize) -> String {
    format!("s{}", stage + 1)
}

/// Fresh parameters for `cfg`, drawn deterministically from `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, 0x6d6f64656c);
    let mut p = ParamSet::new();
    let d = cfg.model_dim;
    let s = cfg.max_speakers;
    let c = cfg.num_train_speakers;
    for stage in 0..cfg.stages {
        let pre = stage_prefix(stage);
        let fin = cfg.stage_input_dim(stage);
        init_tdcn(&mut p, &format!("{pre}.local"), cfg, fin, &mut rng)?;
        if cfg.local_head {
            init_linear(&mut p, &format!("{pre}.local_head"), d, s, &mut rng)?;
        }
        match cfg.speaker_module {
            SpeakerModuleKind::None => {}
            SpeakerModuleKind::Local => {
                init_linear(&mut p, &format!("{pre}.spk.cls"), d, c, &mut rng)?;
            }
            SpeakerModuleKind::Joint => {
                init_tdcn(&mut p, &format!("{pre}.spk"), cfg, fin, &mut rng)?;
                init_linear(&mut p, &format!("{pre}.spk.cls"), d, c, &mut rng)?;
                init_linear(&mut p, &format!("{pre}.fuse"), 2 * d, d, &mut rng)?;
            }
            SpeakerModuleKind::Individual => {
                init_tdcn(&mut p, &format!("{pre}.spk"), cfg, fin, &mut rng)?;
                for slot in 0..s {
                    init_linear(&mut p, &format!("{pre}.spk.cls{slot}"), d / s, c + 1, &mut rng)?;
                }
                init_linear(&mut p, &format!("{pre}.fuse"), 2 * d, d, &mut rng)?;
            }
        }
        for l in 0..cfg.sa_layers {
            init_sa_block(&mut p, &format!("{pre}.sa{l}"), cfg, &mut rng)?;
        }
        init_linear(&mut p, &format!("{pre}.head"), d, s, &mut rng)?;
    }
    Ok(p)
}

/// One stage on already-normalized input `x` (`T×F_in`).
pub fn forward_stage(
    g: &mut Graph,
    bp: &BoundParams,
    cfg: &ModelConfig,
    stage: usize,
    x: Var,
) -> Result<StageOutput> {
    let pre = stage_prefix(stage);
    let d = cfg.model_dim;
    let s = cfg.max_speakers;
    let e_l = tdcn_forward(g, bp, &format!("{pre}.local"), cfg, x)?;
    let local_probs = if cfg.local_head {
        Some(diarization_head(g, bp, &format!("{pre}.local_head"), e_l)?)
    } else {
        None
    };
    let (speaker, fused) = match cfg.speaker_module {
        SpeakerModuleKind::None => (None, e_l),
        SpeakerModuleKind::Local => {
            let logits = linear(g, bp, &format!("{pre}.spk.cls"), e_l)?;
            (Some(SpeakerOutput::Joint(g.sigmoid(logits))), e_l)
        }
        SpeakerModuleKind::Joint => {
            let e_u = tdcn_forward(g, bp, &format!("{pre}.spk"), cfg, x)?;
            let logits = linear(g, bp, &format!("{pre}.spk.cls"), e_u)?;
            let probs = g.sigmoid(logits);
            let cat = g.concat_cols(&[e_l, e_u])?;
            let fused = linear(g, bp, &format!("{pre}.fuse"), cat)?;
            (Some(SpeakerOutput::Joint(probs)), fused)
        }
        SpeakerModuleKind::Individual => {
            let e_z = tdcn_forward(g, bp, &format!("{pre}.spk"), cfg, x)?;
            let group = d / s;
            let zn = g.l2_normalize_groups(e_z, group)?;
            let mut logits = Vec::with_capacity(s);
            for slot in 0..s {
                let z = g.slice_cols(zn, slot * group, group)?;
                logits.push(linear(g, bp, &format!("{pre}.spk.cls{slot}"), z)?);
            }
            let cat = g.concat_cols(&[e_l, zn])?;
            let fused = linear(g, bp, &format!("{pre}.fuse"), cat)?;
            (Some(SpeakerOutput::Individual(logits)), fused)
        }
    };
    let mut h = fused;
    for l in 0..cfg.sa_layers {
        h = sa_block(g, bp, &format!("{pre}.sa{l}"), cfg, h)?;
    }
    let probs = diarization_head(g, bp, &format!("{pre}.head"), h)?;
    Ok(StageOutput {
        probs,
        local_probs,
        speaker,
        local_embeddings: e_l,
        global_embeddings: h,
    })
}

/// All stages; stage 2 sees `[x; stage-1 probabilities]`.
pub fn forward(g: &mut Graph, bp: &BoundParams, cfg: &ModelConfig, x: Var) -> Result<ModelOutput> {
    forward_stages(g, bp, cfg, x, cfg.stages)
}

/// The first `n` stages only.
pub fn forward_stages(
    g: &mut Graph,
    bp: &BoundParams,
    cfg: &ModelConfig,
    x: Var,
    n: usize,
) -> Result<ModelOutput> {
    if n == 0 || n > cfg.stages {
        return Err(Error::config(format!(
            "cannot run {n} of {} stages",
            cfg.stages
        )));
    }
    let mut stages: Vec<StageOutput> = Vec::with_capacity(n);
    for stage in 0..n {
        let input = match stages.last() {
            None => x,
            Some(prev) => g.concat_cols(&[x, prev.probs])?,
        };
        stages.push(forward_stage(g, bp, cfg, stage, input)?);
    }
    Ok(ModelOutput { stages })
}

/// Configuration, parameters and input normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct DiarizationModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub stats: FeatureStats,
    /// Front end the model was trained on, when known.
    pub features: Option<FeatureConfig>,
}

impl DiarizationModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let stats = FeatureStats::identity(config.feature_dim);
        Ok(Self {
            config,
            params,
            stats,
            features: None,
        })
    }

    /// Normalized features as a graph constant.
    pub fn input(&self, g: &mut Graph, features: &Tensor) -> Result<Var> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "model expects {}-dim features, got {}",
                self.config.feature_dim,
                features.cols()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::EmptyInput("no feature frames".into()));
        }
        Ok(g.constant(self.stats.apply(features)?))
    }

    /// Final-stage probabilities, slot-major.
    pub fn predict(&self, features: &Tensor) -> Result<DiarizationProbs> {
        let probs = self.predict_stages(features)?;
        Ok(probs.into_iter().last().expect("at least one stage"))
    }

    /// Probabilities of every stage.
    pub fn predict_stages(&self, features: &Tensor) -> Result<Vec<DiarizationProbs>> {
        let mut g = Graph::new();
        let bp = self.params.bind_frozen(&mut g);
        let x = self.input(&mut g, features)?;
        let out = forward(&mut g, &bp, &self.config, x)?;
        Ok(out
            .stages
            .iter()
            .map(|s| DiarizationProbs::from_frame_major(g.value(s.probs)))
            .collect())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(json!({
            "format": CHECKPOINT_FORMAT,
            "config": serde_json::to_value(&self.config)?,
            "stats": serde_json::to_value(&self.stats)?,
            "features": serde_json::to_value(&self.features)?,
        }));
        c.push_params(PARAM_PREFIX, &self.params);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.meta.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Format("not a diarization model checkpoint".into()));
        }
        let config: ModelConfig = serde_json::from_value(c.meta["config"].clone())?;
        config.validate()?;
        let stats: FeatureStats = serde_json::from_value(c.meta["stats"].clone())?;
        if stats.mean.len() != config.feature_dim || stats.std.len() != config.feature_dim {
            return Err(Error::Format("feature statistics do not match config".into()));
        }
        let features: Option<FeatureConfig> = match c.meta.get("features") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => None,
        };
        if let Some(f) = &features {
            if f.dim() != config.feature_dim {
                return Err(Error::Format(format!(
                    "front end produces {}-dim features, model expects {}",
                    f.dim(),
                    config.feature_dim
                )));
            }
        }
        let template = init_params(&config, 0)?;
        let params = c.load_params(PARAM_PREFIX, &template)?;
        Ok(Self {
            config,
            params,
            stats,
            features,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[cfg(test)]
mod tests;
