//! Optimization loop: gradient accumulation over a batch, Adam, periodic
//! evaluation, checkpoints and a CSV log.

mod data;
mod log;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use data::{
    estimate_stats, example_from_spec, generate_spec, DataSource, Dataset, DynamicSource, Example,
};
pub use log::{append_log, log_header, smoothed, TrainLogRecord};

use crate::error::{Error, Result};
use crate::evaluate::{der, postprocess, DerResult, PostProcessConfig};
use crate::gradcore::{adam_step_masked, AdamState, Container, Graph, Tensor};
use crate::losses::{model_loss, LossWeights, StageLosses};
use crate::model::{forward_stages, stage_prefix, DiarizationModel};

/// Which parameters a run updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainScope {
    All,
    /// Only the given 0-based stage; earlier stages run frozen, later ones
    /// are skipped.
    Stage(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: u64,
    /// Checkpoint and evaluation interval in steps; 0 disables both until
    /// the final step.
    pub eval_every: u64,
    /// Component weights; `None` enables everything the model produces.
    pub loss: Option<LossWeights>,
    pub scope: TrainScope,
    /// Estimate input normalization from the data before the first step.
    pub fit_stats: bool,
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self {
            batch_size: 3,
            learning_rate: 1e-3,
            max_steps: 2000,
            eval_every: 200,
            loss: None,
            scope: TrainScope::All,
            fit_stats: true,
        }
    }

    /// Full-scale setup: lr 1e-4, batch 3, 800K steps.
    pub fn full_scale() -> Self {
        Self {
            learning_rate: 1e-4,
            max_steps: 800_000,
            eval_every: 10_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        if let Some(w) = &self.loss {
            w.validate()?;
        }
        Ok(())
    }
}

/// Model, optimizer state and position in the example stream.
pub struct Trainer {
    pub model: DiarizationModel,
    pub adam: AdamState,
    pub step: u64,
    pub config: TrainConfig,
    pub records: Vec<TrainLogRecord>,
    /// Checkpoints and the CSV log go here when set.
    pub out_dir: Option<PathBuf>,
    pub heldout: Vec<Example>,
    pub postprocess: PostProcessConfig,
    weights: LossWeights,
    started: Instant,
}

pub const CHECKPOINT_PREFIX: &str = "ckpt-";
pub const LOG_FILE: &str = "train_log.csv";
const ADAM_PREFIX: &str = "adam/";

pub fn checkpoint_name(step: u64) -> String {
    format!("{CHECKPOINT_PREFIX}{step:07}.ckpt")
}

impl Trainer {
    pub fn new(model: DiarizationModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let weights = config
            .loss
            .clone()
            .unwrap_or_else(|| LossWeights::for_model(&model.config));
        weights.validate()?;
        if let TrainScope::Stage(s) = config.scope {
            if s >= model.config.stages {
                return Err(Error::config(format!(
                    "stage {s} of a {}-stage model",
                    model.config.stages
                )));
            }
        }
        let adam = AdamState::new(&model.params, config.learning_rate);
        Ok(Self {
            model,
            adam,
            step: 0,
            config,
            records: Vec::new(),
            out_dir: None,
            heldout: Vec::new(),
            postprocess: PostProcessConfig::default(),
            weights,
            started: Instant::now(),
        })
    }

    /// Restores model, optimizer and step from a training checkpoint. The
    /// stored training config is used unless `config` overrides it.
    pub fn resume(path: &Path, config: Option<TrainConfig>) -> Result<Self> {
        let c = Container::read(path)?;
        let model = DiarizationModel::from_container(&c)?;
        let train = c
            .meta
            .get("train")
            .ok_or_else(|| Error::Format(format!("{} is not a training checkpoint", path.display())))?;
        let stored: TrainConfig = serde_json::from_value(train["config"].clone())?;
        let step = train["step"]
            .as_u64()
            .ok_or_else(|| Error::Format("training step missing".into()))?;
        let adam = c.load_adam(ADAM_PREFIX, &model.params)?;
        let mut t = Self::new(model, config.unwrap_or(stored))?;
        t.adam = adam;
        t.adam.learning_rate = t.config.learning_rate;
        t.step = step;
        Ok(t)
    }

    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn with_heldout(mut self, heldout: Vec<Example>) -> Self {
        self.heldout = heldout;
        self
    }

    fn trainable(&self, name: &str) -> bool {
        match self.config.scope {
            TrainScope::All => true,
            TrainScope::Stage(s) => name.starts_with(&format!("{}.", stage_prefix(s))),
        }
    }

    fn stage_plan(&self) -> (usize, Vec<usize>) {
        match self.config.scope {
            TrainScope::All => (self.model.config.stages, Vec::new()),
            TrainScope::Stage(s) => (s + 1, (0..s).collect()),
        }
    }

    /// Loss and gradients of one example; gradients are aligned with the
    /// parameter order.
    pub fn example_gradients(&self, ex: &Example) -> Result<(Vec<StageLosses>, Vec<Tensor>)> {
        let mut g = Graph::new();
        let bp = self.model.params.bind_where(&mut g, |n| self.trainable(n));
        let x = self.model.input(&mut g, &ex.features)?;
        let (n, skip) = self.stage_plan();
        let out = forward_stages(&mut g, &bp, &self.model.config, x, n)?;
        let loss = model_loss(
            &mut g,
            &out,
            &ex.labels,
            &self.model.config,
            &self.weights,
            &skip,
        )?;
        for (i, s) in loss.stages.iter().enumerate() {
            check_finite(s, i, self.step)?;
        }
        g.backward(loss.total)?;
        Ok((loss.stages, bp.grads(&g)))
    }

    /// One optimizer step over `batch_size` consecutive stream examples.
    pub fn train_step(&mut self, data: &mut dyn DataSource) -> Result<TrainLogRecord> {
        let batch = self.config.batch_size as u64;
        let mut grads: Option<Vec<Tensor>> = None;
        let mut sums: Vec<StageLosses> = Vec::new();
        let mut elements = 0usize;
        for b in 0..batch {
            let ex = data.example(self.step * batch + b)?;
            elements = ex.labels.slots() * ex.labels.frames();
            let (losses, g) = self.example_gradients(&ex)?;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
                            *x += y;
                        }
                    }
                }
            }
            accumulate(&mut sums, &losses);
        }
        let grads = grads.expect("batch size is at least one");
        let mask: Vec<bool> = self
            .model
            .params
            .names()
            .iter()
            .map(|n| self.trainable(n))
            .collect();
        adam_step_masked(&mut self.model.params, &grads, &mut self.adam, &mask)?;
        self.step += 1;
        for (name, t) in self.model.params.iter() {
            if !t.is_finite() {
                return Err(Error::NonFinite {
                    component: format!("parameter {name}"),
                    step: self.step,
                });
            }
        }
        let scale = 1.0 / (batch as f64 * elements.max(1) as f64);
        let stages: Vec<StageLosses> = sums.iter().map(|s| scaled(s, scale)).collect();
        let total = crate::losses::total_loss(&stages, &self.weights)?;
        Ok(TrainLogRecord {
            step: self.step,
            total,
            stages,
            wall_s: self.started.elapsed().as_secs_f64(),
            eval_der: None,
        })
    }

    /// Pooled held-out DER of the final stage after post-processing.
    pub fn evaluate(&self, examples: &[Example]) -> Result<DerResult> {
        evaluate_model(&self.model, examples, &self.postprocess)
    }

    /// Training checkpoint: model, Adam moments, step and config.
    pub fn to_container(&self) -> Result<Container> {
        let mut c = self.model.to_container()?;
        c.push_adam(ADAM_PREFIX, &self.model.params, &self.adam);
        if let serde_json::Value::Object(map) = &mut c.meta {
            map.insert(
                "train".into(),
                serde_json::json!({
                    "step": self.step,
                    "config": serde_json::to_value(&self.config)?,
                }),
            );
        }
        Ok(c)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    fn checkpoint_if_needed(&self, force: bool) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.out_dir else {
            return Ok(None);
        };
        let due = self.config.eval_every > 0 && self.step % self.config.eval_every == 0;
        if !(force || due) {
            return Ok(None);
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(checkpoint_name(self.step));
        self.save_checkpoint(&path)?;
        Ok(Some(path))
    }

    /// Trains until `max_steps`, returning the records of this call.
    pub fn run(&mut self, data: &mut dyn DataSource) -> Result<Vec<TrainLogRecord>> {
        if self.step == 0 && self.config.fit_stats {
            self.model.stats = estimate_stats(&data.stats_sample()?)?;
        }
        let mut new_records = Vec::new();
        if self.step >= self.config.max_steps {
            self.checkpoint_if_needed(true)?;
            return Ok(new_records);
        }
        while self.step < self.config.max_steps {
            let mut rec = self.train_step(data)?;
            let due = self.config.eval_every > 0 && self.step % self.config.eval_every == 0;
            let last = self.step == self.config.max_steps;
            if (due || last) && !self.heldout.is_empty() {
                rec.eval_der = Some(self.evaluate(&self.heldout)?.der);
            }
            if let Some(dir) = &self.out_dir {
                append_log(&dir.join(LOG_FILE), &rec, self.model.config.stages)?;
            }
            self.checkpoint_if_needed(last)?;
            new_records.push(rec.clone());
            self.records.push(rec);
        }
        Ok(new_records)
    }
}

fn check_finite(s: &StageLosses, stage: usize, step: u64) -> Result<()> {
    let pre = stage_prefix(stage);
    let parts = [
        ("diar", Some(s.diarization)),
        ("local", s.local),
        ("jointspk", s.joint_speaker),
        ("indspk", s.individual_speaker),
    ];
    for (name, v) in parts {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    component: format!("{pre}_{name}"),
                    step,
                });
            }
        }
    }
    Ok(())
}

fn accumulate(acc: &mut Vec<StageLosses>, add: &[StageLosses]) {
    if acc.is_empty() {
        acc.extend(add.iter().cloned());
        return;
    }
    let plus = |a: &mut Option<f64>, b: Option<f64>| {
        if let (Some(x), Some(y)) = (a.as_mut(), b) {
            *x += y;
        }
    };
    for (a, b) in acc.iter_mut().zip(add) {
        a.diarization += b.diarization;
        plus(&mut a.local, b.local);
        plus(&mut a.joint_speaker, b.joint_speaker);
        plus(&mut a.individual_speaker, b.individual_speaker);
    }
}

fn scaled(s: &StageLosses, k: f64) -> StageLosses {
    StageLosses {
        diarization: s.diarization * k,
        local: s.local.map(|v| v * k),
        joint_speaker: s.joint_speaker.map(|v| v * k),
        individual_speaker: s.individual_speaker.map(|v| v * k),
    }
}

/// Pooled DER of the final stage over `examples`.
pub fn evaluate_model(
    model: &DiarizationModel,
    examples: &[Example],
    pp: &PostProcessConfig,
) -> Result<DerResult> {
    let per: Vec<DerResult> = examples
        .iter()
        .map(|ex| {
            let probs = model.predict(&ex.features)?;
            der(&ex.labels, &postprocess(&probs, pp), 0)
        })
        .collect::<Result<_>>()?;
    Ok(DerResult::aggregate(&per))
}

/// Single run over `data`; returns the trained model and the log.
pub fn train(
    model: DiarizationModel,
    config: &TrainConfig,
    data: &mut dyn DataSource,
    out_dir: Option<&Path>,
) -> Result<(DiarizationModel, Vec<TrainLogRecord>)> {
    let mut t = Trainer::new(model, config.clone())?;
    if let Some(d) = out_dir {
        t = t.with_output(d);
    }
    let records = t.run(data)?;
    Ok((t.model, records))
}

/// Two-stage training. Jointly by default; `stage_wise` first trains stage 1
/// for `max_steps`, then freezes it and trains stage 2 for another
/// `max_steps` on the continuing stream. Single-stage models reduce to
/// [`train`].
pub fn train_sequential(
    model: DiarizationModel,
    config: &TrainConfig,
    data: &mut dyn DataSource,
    out_dir: Option<&Path>,
    stage_wise: bool,
) -> Result<(DiarizationModel, Vec<TrainLogRecord>)> {
    let mut t = Trainer::new(model, config.clone())?;
    if let Some(d) = out_dir {
        t = t.with_output(d);
    }
    let t = run_sequential(t, data, stage_wise)?;
    Ok((t.model, t.records))
}

/// Drives a prepared trainer through [`train_sequential`]'s schedule. A
/// trainer resumed in the second stage-wise phase continues that phase.
pub fn run_sequential(
    mut t: Trainer,
    data: &mut dyn DataSource,
    stage_wise: bool,
) -> Result<Trainer> {
    if t.model.config.stages == 1 || !stage_wise {
        t.run(data)?;
        return Ok(t);
    }
    if t.config.scope != TrainScope::Stage(1) {
        let phase = t.config.max_steps;
        t.config.scope = TrainScope::Stage(0);
        t.run(data)?;
        let second = TrainConfig {
            scope: TrainScope::Stage(1),
            fit_stats: false,
            max_steps: 2 * phase,
            ..t.config.clone()
        };
        let mut next = Trainer::new(t.model, second)?;
        next.step = phase;
        next.out_dir = t.out_dir;
        next.heldout = t.heldout;
        next.postprocess = t.postprocess;
        next.records = t.records;
        t = next;
    }
    t.run(data)?;
    Ok(t)
}

#[cfg(test)]
mod tests;
