use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{AudioClip, DiarizationLabels, LABEL_RATE};

use super::corpus::SpeakerCorpus;
use super::schedule::MeetingSpec;

pub const PEAK_LEVEL: f64 = 0.9;

/// Number of label frames for a meeting of `duration_s` seconds.
pub fn label_frames(duration_s: f64) -> usize {
    (duration_s * LABEL_RATE).round() as usize
}

/// Center time of label frame `t` in seconds.
pub fn frame_center(t: usize) -> f64 {
    (t as f64 + 0.5) / LABEL_RATE
}

/// Ground-truth labels: slot `s` is active at frame `t` iff one of its
/// speaker's utterances covers the frame center.
pub fn meeting_labels(spec: &MeetingSpec, max_speakers: usize) -> Result<DiarizationLabels> {
    let order = spec.slot_order();
    if order.len() > max_speakers {
        return Err(Error::config(format!(
            "{} participants exceed {max_speakers} slots",
            order.len()
        )));
    }
    let frames = label_frames(spec.duration_s);
    let mut labels = DiarizationLabels::zeros(max_speakers, frames);
    let slot_of: BTreeMap<_, _> = order.iter().enumerate().map(|(s, &id)| (id, s)).collect();
    for (&id, &s) in &slot_of {
        labels.slot_to_speaker.insert(s, id);
    }
    for u in &spec.schedule {
        let s = slot_of[&u.speaker];
        for t in 0..frames {
            let c = frame_center(t);
            if u.onset_s <= c && c < u.end_s() {
                labels.set(s, t, true);
            }
        }
    }
    Ok(labels)
}

/// Mixes the scheduled clips with their gains, peak-normalizes, and derives labels.
pub fn render_meeting(
    spec: &MeetingSpec,
    corpus: &SpeakerCorpus,
    max_speakers: usize,
) -> Result<(AudioClip, DiarizationLabels)> {
    let sr = corpus.sample_rate;
    let n = (spec.duration_s * sr as f64).round() as usize;
    let mut mix = vec![0.0; n];
    for u in &spec.schedule {
        if u.onset_s < 0.0 || u.end_s() > spec.duration_s + 1e-9 {
            return Err(Error::Simulation {
                constraint: "meeting duration".into(),
                detail: format!(
                    "utterance of speaker {} spans {:.3}..{:.3} s in a {:.3} s meeting",
                    u.speaker,
                    u.onset_s,
                    u.end_s(),
                    spec.duration_s
                ),
            });
        }
        let clip = corpus.utterance(u.speaker, u.utterance).ok_or_else(|| {
            Error::Usage(format!(
                "speaker {} has no utterance {}",
                u.speaker, u.utterance
            ))
        })?;
        let start = (u.onset_s * sr as f64).round() as usize;
        let len = ((u.duration_s * sr as f64).round() as usize)
            .min(clip.samples.len())
            .min(n.saturating_sub(start));
        let gain = 10f64.powf(u.gain_db / 20.0);
        for (m, &c) in mix[start..start + len].iter_mut().zip(&clip.samples) {
            *m += gain * c;
        }
    }
    let peak = mix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        mix.iter_mut().for_each(|v| *v *= PEAK_LEVEL / peak);
    }
    let labels = meeting_labels(spec, max_speakers)?;
    Ok((AudioClip::new(mix, sr)?, labels))
}
