//! Training objectives.
//!
//! Value-level functions take slot-major images and return plain numbers;
//! the `*_graph` variants record the same quantities on a [`Graph`] against
//! the model's frame-major outputs.

use crate::assignment;
use crate::error::{Error, Result};
use crate::gradcore::{bce_value, Graph, Tensor, Var, PROB_EPS};
use crate::model::{ModelConfig, ModelOutput, SpeakerModuleKind, SpeakerOutput};
use crate::types::{DiarizationLabels, DiarizationProbs, SpeakerId};

/// Binary cross-entropy with the probability clamped to `[1e-7, 1-1e-7]`.
pub fn bce(p: f64, y: f64) -> f64 {
    bce_value(p, y)
}

/// Loss under the optimal slot assignment. `permutation[s]` is the output
/// slot matched to reference row `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PitResult {
    pub loss: f64,
    pub permutation: Vec<usize>,
}

/// Multi-label targets over training speakers, `C×T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerLabelJoint {
    classes: usize,
    frames: usize,
    data: Vec<u8>,
}

impl SpeakerLabelJoint {
    /// Row `id - 1` is active wherever the slot holding speaker `id` is.
    pub fn from_diarization(labels: &DiarizationLabels, classes: usize) -> Result<Self> {
        let frames = labels.frames();
        let mut data = vec![0u8; classes * frames];
        for (&slot, &id) in &labels.slot_to_speaker {
            let row = class_row(id, classes)?;
            for (t, &v) in labels.row(slot).iter().enumerate() {
                data[row * frames + t] |= v;
            }
        }
        Ok(Self {
            classes,
            frames,
            data,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, class: usize, frame: usize) -> bool {
        self.data[class * self.frames + frame] != 0
    }

    /// Frame-major `T×C` 0/1 tensor.
    pub fn to_frame_major(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.frames, self.classes]);
        for c in 0..self.classes {
            for t in 0..self.frames {
                out.data_mut()[t * self.classes + c] = self.get(c, t) as u8 as f64;
            }
        }
        out
    }
}

/// Per-slot class targets, `S×T`, in `0..=C`; 0 is the silent dummy class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerLabelIndividual {
    slots: usize,
    frames: usize,
    data: Vec<usize>,
}

impl SpeakerLabelIndividual {
    pub fn from_diarization(labels: &DiarizationLabels, classes: usize) -> Result<Self> {
        let (slots, frames) = (labels.slots(), labels.frames());
        let mut data = vec![0usize; slots * frames];
        for s in 0..slots {
            let Some(&id) = labels.slot_to_speaker.get(&s) else {
                if labels.row(s).iter().any(|&v| v != 0) {
                    return Err(Error::config(format!("active slot {s} has no speaker id")));
                }
                continue;
            };
            class_row(id, classes)?;
            for (t, &v) in labels.row(s).iter().enumerate() {
                if v != 0 {
                    data[s * frames + t] = id as usize;
                }
            }
        }
        Ok(Self {
            slots,
            frames,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != frames) {
            return Err(Error::shape("individual label rows differ in length"));
        }
        Ok(Self {
            slots: rows.len(),
            frames,
            data: rows.concat(),
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn row(&self, slot: usize) -> &[usize] {
        &self.data[slot * self.frames..(slot + 1) * self.frames]
    }
}

fn class_row(id: SpeakerId, classes: usize) -> Result<usize> {
    match (id as usize).checked_sub(1) {
        Some(r) if r < classes => Ok(r),
        _ => Err(Error::config(format!(
            "speaker id {id} outside the {classes} training speakers"
        ))),
    }
}

fn check_same_shape(p: &DiarizationProbs, y: &DiarizationLabels) -> Result<()> {
    if (p.slots(), p.frames()) != (y.slots(), y.frames()) {
        return Err(Error::shape(format!(
            "probabilities {}x{} vs labels {}x{}",
            p.slots(),
            p.frames(),
            y.slots(),
            y.frames()
        )));
    }
    Ok(())
}

/// `C[s][s'] = Σ_t BCE(ŷ_{s',t}, y_{s,t})`.
pub fn pit_cost_matrix(p: &DiarizationProbs, y: &DiarizationLabels) -> Result<Vec<Vec<f64>>> {
    check_same_shape(p, y)?;
    let s = y.slots();
    Ok((0..s)
        .map(|r| {
            (0..s)
                .map(|c| {
                    p.row(c)
                        .iter()
                        .zip(y.row(r))
                        .map(|(&pp, &yy)| bce(pp, yy as f64))
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// Minimum over slot permutations of the summed BCE, via optimal assignment.
pub fn pit_diarization_loss(p: &DiarizationProbs, y: &DiarizationLabels) -> Result<PitResult> {
    let costs = pit_cost_matrix(p, y)?;
    let permutation = assignment::solve_lexmin(&costs);
    // Summed in sorted order: matchings that tie on identical reference rows
    // pick the same costs, so reordering the outputs cannot move the loss by
    // an ulp.
    let mut chosen: Vec<f64> = permutation.iter().enumerate().map(|(r, &c)| costs[r][c]).collect();
    chosen.sort_by(f64::total_cmp);
    let loss = chosen.iter().sum();
    Ok(PitResult { loss, permutation })
}

/// Same contract as [`pit_diarization_loss`], applied to the local head.
pub fn local_diarization_loss(p: &DiarizationProbs, y: &DiarizationLabels) -> Result<PitResult> {
    pit_diarization_loss(p, y)
}

/// Summed BCE over all training speakers; `u_hat` is `C×T`.
pub fn joint_speaker_loss(u_hat: &Tensor, u: &SpeakerLabelJoint) -> Result<f64> {
    if u_hat.shape() != [u.classes(), u.frames()] {
        return Err(Error::shape(format!(
            "joint speaker probabilities {:?} vs labels {}x{}",
            u_hat.shape(),
            u.classes(),
            u.frames()
        )));
    }
    Ok(u_hat
        .data()
        .iter()
        .zip(&u.data)
        .map(|(&p, &y)| bce(p, y as f64))
        .sum())
}

pub(crate) fn check_permutation(pi: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if pi.len() != n || pi.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::Usage(format!("{pi:?} is not a permutation of {n} slots")));
    }
    Ok(())
}

/// Negative log-likelihood of the slot classifiers under the diarization
/// permutation `pi`. `z_hat[slot]` holds `T×(C+1)` class probabilities.
pub fn individual_speaker_loss(
    z_hat: &[Tensor],
    z: &SpeakerLabelIndividual,
    pi: &[usize],
) -> Result<f64> {
    check_permutation(pi, z.slots())?;
    if z_hat.len() != z.slots() {
        return Err(Error::shape(format!(
            "{} slot classifiers for {} slots",
            z_hat.len(),
            z.slots()
        )));
    }
    let mut loss = 0.0;
    for (s, &out) in pi.iter().enumerate() {
        let probs = &z_hat[out];
        if probs.rows() != z.frames() {
            return Err(Error::shape("speaker probabilities and labels differ in length"));
        }
        for (t, &class) in z.row(s).iter().enumerate() {
            if class >= probs.cols() {
                return Err(Error::shape(format!("class {class} beyond {}", probs.cols())));
            }
            loss -= probs.at(t, class).max(PROB_EPS).ln();
        }
    }
    Ok(loss)
}

/// Frame-major targets with reference row `s` placed in output column `pi[s]`.
pub fn permuted_targets(y: &DiarizationLabels, pi: &[usize]) -> Tensor {
    let (slots, frames) = (y.slots(), y.frames());
    let mut out = Tensor::zeros(&[frames, slots]);
    for (s, &col) in pi.iter().enumerate() {
        for (t, &v) in y.row(s).iter().enumerate() {
            out.data_mut()[t * slots + col] = v as f64;
        }
    }
    out
}

/// PIT loss on the graph for frame-major probabilities `T×S`. The
/// permutation is chosen on the current values and held fixed.
pub fn pit_diarization_loss_graph(
    g: &mut Graph,
    probs: Var,
    y: &DiarizationLabels,
) -> Result<(Var, PitResult)> {
    let pv = DiarizationProbs::from_frame_major(g.value(probs));
    let pit = pit_diarization_loss(&pv, y)?;
    let target = permuted_targets(y, &pit.permutation);
    Ok((g.bce_sum(probs, &target)?, pit))
}

/// Joint speaker loss on frame-major probabilities `T×C`.
pub fn joint_speaker_loss_graph(g: &mut Graph, probs: Var, u: &SpeakerLabelJoint) -> Result<Var> {
    g.bce_sum(probs, &u.to_frame_major())
}

/// Individual speaker loss on per-slot logits `T×(C+1)`.
pub fn individual_speaker_loss_graph(
    g: &mut Graph,
    logits: &[Var],
    z: &SpeakerLabelIndividual,
    pi: &[usize],
) -> Result<Var> {
    check_permutation(pi, z.slots())?;
    if logits.len() != z.slots() {
        return Err(Error::shape("slot classifier count differs from label slots"));
    }
    let mut total: Option<Var> = None;
    for (s, &out) in pi.iter().enumerate() {
        let l = g.softmax_xent(logits[out], z.row(s))?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    total.ok_or_else(|| Error::EmptyInput("no slots".into()))
}

/// Component weights; `None` disables a component.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub diarization: f64,
    pub local: Option<f64>,
    pub joint_speaker: Option<f64>,
    pub individual_speaker: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            diarization: 1.0,
            local: None,
            joint_speaker: None,
            individual_speaker: None,
        }
    }
}

impl LossWeights {
    /// Every component the model can produce, at weight 1.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        let joint = matches!(
            cfg.speaker_module,
            SpeakerModuleKind::Joint | SpeakerModuleKind::Local
        );
        Self {
            diarization: 1.0,
            local: cfg.local_head.then_some(1.0),
            joint_speaker: joint.then_some(1.0),
            individual_speaker: (cfg.speaker_module == SpeakerModuleKind::Individual)
                .then_some(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            Some(self.diarization),
            self.local,
            self.joint_speaker,
            self.individual_speaker,
        ];
        if all.iter().flatten().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        if self.joint_speaker.is_some() && self.individual_speaker.is_some() {
            return Err(Error::config(
                "joint and individual speaker losses are mutually exclusive",
            ));
        }
        Ok(())
    }
}

/// Raw-sum components of one stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageLosses {
    pub diarization: f64,
    pub local: Option<f64>,
    pub joint_speaker: Option<f64>,
    pub individual_speaker: Option<f64>,
}

/// Weighted sum of every enabled component over all stages.
pub fn total_loss(stages: &[StageLosses], w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let mut total = 0.0;
    for s in stages {
        total += w.diarization * s.diarization;
        for (value, weight) in [
            (s.local, w.local),
            (s.joint_speaker, w.joint_speaker),
            (s.individual_speaker, w.individual_speaker),
        ] {
            if let (Some(v), Some(k)) = (value, weight) {
                total += k * v;
            }
        }
    }
    Ok(total)
}

/// Loss for a forward pass, with per-stage values for logging.
pub struct LossBreakdown {
    pub total: Var,
    pub stages: Vec<StageLosses>,
    /// Diarization permutation per stage.
    pub permutations: Vec<Vec<usize>>,
    /// Slots times frames, for per-element normalization.
    pub elements: usize,
}

/// Builds the weighted training loss for `out` on the graph. Stages listed
/// in `skip_stages` contribute nothing (used when a stage is frozen).
pub fn model_loss(
    g: &mut Graph,
    out: &ModelOutput,
    labels: &DiarizationLabels,
    cfg: &ModelConfig,
    w: &LossWeights,
    skip_stages: &[usize],
) -> Result<LossBreakdown> {
    w.validate()?;
    let joint_labels = match w.joint_speaker {
        Some(_) => Some(SpeakerLabelJoint::from_diarization(labels, cfg.num_train_speakers)?),
        None => None,
    };
    let ind_labels = match w.individual_speaker {
        Some(_) => Some(SpeakerLabelIndividual::from_diarization(
            labels,
            cfg.num_train_speakers,
        )?),
        None => None,
    };
    let mut terms: Vec<Var> = Vec::new();
    let mut stages = Vec::new();
    let mut permutations = Vec::new();
    for (i, st) in out.stages.iter().enumerate() {
        if skip_stages.contains(&i) {
            continue;
        }
        let mut rec = StageLosses::default();
        let (diar, pit) = pit_diarization_loss_graph(g, st.probs, labels)?;
        rec.diarization = pit.loss;
        terms.push(g.scale(diar, w.diarization));
        if let (Some(k), Some(lp)) = (w.local, st.local_probs) {
            let (l, lpit) = pit_diarization_loss_graph(g, lp, labels)?;
            rec.local = Some(lpit.loss);
            terms.push(g.scale(l, k));
        }
        match (&st.speaker, &joint_labels, &ind_labels) {
            (Some(SpeakerOutput::Joint(u)), Some(ul), _) => {
                let l = joint_speaker_loss_graph(g, *u, ul)?;
                rec.joint_speaker = Some(g.value(l).item());
                let k = w.joint_speaker.unwrap_or(0.0);
                terms.push(g.scale(l, k));
            }
            (Some(SpeakerOutput::Individual(logits)), _, Some(zl)) => {
                let l = individual_speaker_loss_graph(g, logits, zl, &pit.permutation)?;
                rec.individual_speaker = Some(g.value(l).item());
                let k = w.individual_speaker.unwrap_or(0.0);
                terms.push(g.scale(l, k));
            }
            (None, _, _) | (Some(_), None, None) => {}
            (Some(_), _, _) => {
                return Err(Error::config(
                    "speaker loss variant does not match the model's speaker module",
                ))
            }
        }
        stages.push(rec);
        permutations.push(pit.permutation);
    }
    let mut total = *terms
        .first()
        .ok_or_else(|| Error::config("every stage is skipped"))?;
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(LossBreakdown {
        total,
        stages,
        permutations,
        elements: labels.slots() * labels.frames(),
    })
}

#[cfg(test)]
mod tests;
