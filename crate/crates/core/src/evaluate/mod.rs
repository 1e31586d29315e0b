//! Post-processing, diarization error rate, speaker counting and RTTM.

mod report;
mod rttm;

pub use report::{metrics_csv, MeetingScore};
pub use rttm::{rttm_read, rttm_read_all, rttm_write, slot_name};

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::types::{DiarizationLabels, DiarizationProbs};

/// Threshold and median filter applied to model probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    pub threshold: f64,
    /// Odd window length in frames; 1 disables filtering.
    pub median_len: usize,
    /// Filter the probabilities before thresholding instead of after.
    pub median_first: bool,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            median_len: 31,
            median_first: false,
        }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "threshold {} must lie in (0, 1)",
                self.threshold
            )));
        }
        if self.median_len % 2 == 0 {
            return Err(Error::config(format!(
                "median length {} must be odd",
                self.median_len
            )));
        }
        Ok(())
    }
}

/// Median over a centered window; near the edges the window shrinks
/// symmetrically so its length stays odd.
pub fn median_filter(x: &[f64], len: usize) -> Vec<f64> {
    let half = len / 2;
    let n = x.len();
    let mut buf = Vec::with_capacity(len);
    (0..n)
        .map(|t| {
            let r = half.min(t).min(n - 1 - t);
            buf.clear();
            buf.extend_from_slice(&x[t - r..=t + r]);
            buf.sort_by(f64::total_cmp);
            buf[r]
        })
        .collect()
}

pub fn postprocess(probs: &DiarizationProbs, cfg: &PostProcessConfig) -> DiarizationLabels {
    let mut out = DiarizationLabels::zeros(probs.slots(), probs.frames());
    for s in 0..probs.slots() {
        let row = probs.row(s);
        let bits: Vec<f64> = if cfg.median_first {
            median_filter(row, cfg.median_len)
                .iter()
                .map(|&p| (p >= cfg.threshold) as u8 as f64)
                .collect()
        } else {
            let b: Vec<f64> = row
                .iter()
                .map(|&p| (p >= cfg.threshold) as u8 as f64)
                .collect();
            median_filter(&b, cfg.median_len)
        };
        for (o, &b) in out.row_mut(s).iter_mut().zip(&bits) {
            *o = (b >= 0.5) as u8;
        }
    }
    out
}

/// Frame counts behind a diarization error rate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DerResult {
    pub der: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub total_speech_frames: usize,
}

impl DerResult {
    fn from_counts(missed: f64, false_alarm: f64, confusion: f64, speech: usize) -> Self {
        let errors = missed + false_alarm + confusion;
        let der = if speech > 0 {
            errors / speech as f64
        } else if errors == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            der,
            missed,
            false_alarm,
            confusion,
            total_speech_frames: speech,
        }
    }

    pub fn errors(&self) -> f64 {
        self.missed + self.false_alarm + self.confusion
    }

    /// Pooled over meetings: summed errors over summed reference speech.
    pub fn aggregate(results: &[DerResult]) -> Self {
        let sum = |f: fn(&DerResult) -> f64| results.iter().map(f).sum::<f64>();
        Self::from_counts(
            sum(|r| r.missed),
            sum(|r| r.false_alarm),
            sum(|r| r.confusion),
            results.iter().map(|r| r.total_speech_frames).sum(),
        )
    }

    /// `(missed, false alarm, confusion)` as fractions of reference speech.
    pub fn rates(&self) -> (f64, f64, f64) {
        let d = self.total_speech_frames.max(1) as f64;
        (self.missed / d, self.false_alarm / d, self.confusion / d)
    }
}

/// Frames excluded from scoring: within `collar` frames of any reference
/// segment boundary.
fn collar_mask(reference: &DiarizationLabels, collar: usize) -> Vec<bool> {
    let t_len = reference.frames();
    let mut scored = vec![true; t_len];
    if collar == 0 {
        return scored;
    }
    for s in 0..reference.slots() {
        let row = reference.row(s);
        for b in 0..=t_len {
            let before = b > 0 && row[b - 1] != 0;
            let after = b < t_len && row[b] != 0;
            if before != after {
                for f in b.saturating_sub(collar)..(b + collar).min(t_len) {
                    scored[f] = false;
                }
            }
        }
    }
    scored
}

/// Optimal one-to-one mapping `reference slot -> hypothesis slot` over
/// `max(S_ref, S_hyp)` padded slots, maximizing jointly active frames.
pub fn speaker_mapping(
    reference: &DiarizationLabels,
    hypothesis: &DiarizationLabels,
    scored: &[bool],
) -> Vec<usize> {
    let n = reference.slots().max(hypothesis.slots());
    let costs: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            (0..n)
                .map(|h| {
                    if r >= reference.slots() || h >= hypothesis.slots() {
                        return 0.0;
                    }
                    let both = reference
                        .row(r)
                        .iter()
                        .zip(hypothesis.row(h))
                        .zip(scored)
                        .filter(|((&a, &b), &m)| m && a != 0 && b != 0)
                        .count();
                    -(both as f64)
                })
                .collect()
        })
        .collect();
    assignment::solve_lexmin(&costs)
}

/// Frame-level DER at the label rate.
pub fn der(
    reference: &DiarizationLabels,
    hypothesis: &DiarizationLabels,
    collar_frames: usize,
) -> Result<DerResult> {
    if reference.frames() != hypothesis.frames() {
        return Err(Error::Usage(format!(
            "reference has {} frames, hypothesis {}",
            reference.frames(),
            hypothesis.frames()
        )));
    }
    let scored = collar_mask(reference, collar_frames);
    let map = speaker_mapping(reference, hypothesis, &scored);
    let (mut missed, mut fa, mut conf, mut speech) = (0usize, 0usize, 0usize, 0usize);
    for t in 0..reference.frames() {
        if !scored[t] {
            continue;
        }
        let nr = reference.active_count(t);
        let nh = hypothesis.active_count(t);
        let correct = (0..reference.slots())
            .filter(|&r| {
                reference.get(r, t) && map[r] < hypothesis.slots() && hypothesis.get(map[r], t)
            })
            .count();
        missed += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        conf += nr.min(nh) - correct;
        speech += nr;
    }
    Ok(DerResult::from_counts(
        missed as f64,
        fa as f64,
        conf as f64,
        speech,
    ))
}

/// Frames a slot must be active for to count as a present speaker.
pub const MIN_ACTIVE_FRAMES: usize = 10;

/// Slots active for at least `min_active` frames.
pub fn count_speakers(labels: &DiarizationLabels, min_active: usize) -> usize {
    (0..labels.slots())
        .filter(|&s| {
            let n = labels.row(s).iter().filter(|&&v| v != 0).count();
            n > 0 && n >= min_active
        })
        .count()
}

/// `matrix[reference count][estimated count]` over all cases. Reference
/// counts include every slot with any activity; counts above `max_speakers`
/// land in the last row or column.
pub fn speaker_count_confusion(
    cases: &[(DiarizationLabels, DiarizationLabels)],
    max_speakers: usize,
    min_active: usize,
) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; max_speakers + 1]; max_speakers + 1];
    for (r, h) in cases {
        let rc = count_speakers(r, 1).min(max_speakers);
        let hc = count_speakers(h, min_active).min(max_speakers);
        m[rc][hc] += 1;
    }
    m
}
