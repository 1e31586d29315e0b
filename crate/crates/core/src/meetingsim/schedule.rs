use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SpeakerId;

use super::corpus::SpeakerCorpus;

/// Allowed distance between achieved and drawn overlap ratio.
pub const OVERLAP_TOLERANCE: f64 = 0.05;
pub const MAX_ATTEMPTS: usize = 100;
const MIN_PIECE_S: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledUtterance {
    pub speaker: SpeakerId,
    /// Index into the speaker's utterance list.
    pub utterance: usize,
    pub onset_s: f64,
    pub duration_s: f64,
    pub gain_db: f64,
}

impl ScheduledUtterance {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetingSpec {
    pub meeting_id: String,
    pub duration_s: f64,
    pub participants: Vec<SpeakerId>,
    pub schedule: Vec<ScheduledUtterance>,
    pub overlap_target: f64,
}

impl MeetingSpec {
    /// Participants in order of first appearance (slot order).
    pub fn slot_order(&self) -> Vec<SpeakerId> {
        let mut entries: Vec<&ScheduledUtterance> = self.schedule.iter().collect();
        entries.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        let mut order = Vec::new();
        for e in entries {
            if !order.contains(&e.speaker) {
                order.push(e.speaker);
            }
        }
        for &p in &self.participants {
            if !order.contains(&p) {
                order.push(p);
            }
        }
        order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetingConfig {
    pub duration_s: f64,
    /// Inclusive range of participant counts.
    pub speakers: (usize, usize),
    /// Range the per-meeting overlap target is drawn from.
    pub overlap: (f64, f64),
    pub max_speakers: usize,
    pub gain_db: f64,
}

impl Default for MeetingConfig {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            speakers: (2, 2),
            overlap: (0.3, 0.3),
            max_speakers: 4,
            gain_db: 5.0,
        }
    }
}

impl MeetingConfig {
    pub fn validate(&self, corpus_size: usize) -> Result<()> {
        let (lo, hi) = self.overlap;
        if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
            return Err(Error::config(format!(
                "overlap range {lo}..{hi} must lie in [0, 1)"
            )));
        }
        let (a, b) = self.speakers;
        if a == 0 || a > b || b > self.max_speakers {
            return Err(Error::config(format!(
                "speaker range {a}..{b} must lie in [1, {}]",
                self.max_speakers
            )));
        }
        if b > corpus_size {
            return Err(Error::config(format!(
                "{b} speakers requested from a corpus of {corpus_size}"
            )));
        }
        if self.duration_s <= 0.0 {
            return Err(Error::config("meeting duration must be positive"));
        }
        Ok(())
    }
}

/// Overlapped time (>= 2 active) over speech time (>= 1 active); 0 without speech.
pub fn compute_overlap_ratio(spec: &MeetingSpec) -> f64 {
    let (overlap, speech) = overlap_and_speech(&spec.schedule);
    if speech <= 0.0 {
        0.0
    } else {
        overlap / speech
    }
}

/// Sweep over sorted interval boundaries.
pub fn overlap_and_speech(schedule: &[ScheduledUtterance]) -> (f64, f64) {
    let mut events: Vec<(f64, i32)> = schedule
        .iter()
        .filter(|u| u.duration_s > 0.0)
        .flat_map(|u| [(u.onset_s, 1), (u.end_s(), -1)])
        .collect();
    // Ends sort before starts at equal times: touching intervals do not overlap.
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut active, mut last) = (0, 0.0);
    let (mut overlap, mut speech) = (0.0, 0.0);
    for (t, delta) in events {
        let span = t - last;
        if active >= 1 {
            speech += span;
        }
        if active >= 2 {
            overlap += span;
        }
        active += delta;
        last = t;
    }
    (overlap, speech)
}

/// Draws a meeting schedule respecting the turn-taking constraints.
///
/// Utterances are placed left to right. Consecutive utterances come from
/// different speakers, and each onset is no earlier than the second-latest
/// end so far, which bounds simultaneous talkers at two and rules out
/// self-overlap. Overlap lengths steer the running ratio toward the drawn
/// target; schedules that miss it by more than the tolerance are redrawn.
pub fn sample_meeting<R: Rng>(
    corpus: &SpeakerCorpus,
    cfg: &MeetingConfig,
    meeting_id: &str,
    rng: &mut R,
) -> Result<MeetingSpec> {
    cfg.validate(corpus.num_speakers())?;
    let mut last_miss = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let k = rng.gen_range(cfg.speakers.0..=cfg.speakers.1);
        let target = if k == 1 {
            0.0
        } else {
            rng.gen_range(cfg.overlap.0..=cfg.overlap.1)
        };
        let mut ids = corpus.ids();
        ids.shuffle(rng);
        ids.truncate(k);
        let Some(schedule) = draw_schedule(corpus, cfg, &ids, target, rng) else {
            last_miss = format!("could not fit all {k} participants in {} s", cfg.duration_s);
            continue;
        };
        let spec = MeetingSpec {
            meeting_id: meeting_id.to_string(),
            duration_s: cfg.duration_s,
            participants: ids,
            schedule,
            overlap_target: target,
        };
        let achieved = compute_overlap_ratio(&spec);
        if (achieved - target).abs() <= OVERLAP_TOLERANCE {
            return Ok(spec);
        }
        last_miss = format!("achieved overlap {achieved:.3} vs target {target:.3}");
    }
    Err(Error::Simulation {
        constraint: "overlap ratio".into(),
        detail: format!("no valid schedule after {MAX_ATTEMPTS} attempts; last: {last_miss}"),
    })
}

fn draw_schedule<R: Rng>(
    corpus: &SpeakerCorpus,
    cfg: &MeetingConfig,
    participants: &[SpeakerId],
    target: f64,
    rng: &mut R,
) -> Option<Vec<ScheduledUtterance>> {
    let mut schedule: Vec<ScheduledUtterance> = Vec::new();
    let mut unused: Vec<SpeakerId> = participants.to_vec();
    let (mut end_max, mut end_second) = (0.0f64, 0.0f64);
    let mut tail: Option<SpeakerId> = None;
    let (mut overlap, mut speech) = (0.0, 0.0);

    loop {
        let pool: Vec<SpeakerId> = if unused.is_empty() { participants } else { &unused[..] }
            .iter()
            .copied()
            .filter(|&s| participants.len() == 1 || Some(s) != tail)
            .collect();
        let speaker = *pool.choose(rng)?;
        let spk = corpus.speaker(speaker)?;
        let utterance = rng.gen_range(0..spk.utterances.len());
        let mut dur = round_ms(spk.utterances[utterance].duration_s());

        let onset = if schedule.is_empty() {
            round_ms(rng.gen_range(0.0..0.5))
        } else {
            let wanted = (target * (speech + dur) - overlap) / (1.0 + target);
            let room = (end_max - end_second).min(dur);
            if target > 0.0 && wanted > 0.05 && room > 0.0 {
                let ov = (wanted * rng.gen_range(0.85..1.15)).min(room);
                round_ms(end_max - ov).max(end_second)
            } else {
                round_ms(end_max + rng.gen_range(0.1..1.0))
            }
        };
        if onset + dur > cfg.duration_s {
            dur = round_ms(cfg.duration_s - onset);
            if dur < MIN_PIECE_S {
                break;
            }
        }
        let end = onset + dur;
        overlap += (end.min(end_max) - onset).max(0.0);
        speech += (end - onset.max(end_max)).max(0.0);
        if end >= end_max {
            end_second = end_max;
            end_max = end;
            tail = Some(speaker);
        } else {
            end_second = end;
        }
        unused.retain(|&s| s != speaker);
        let gain_db = rng.gen_range(-cfg.gain_db..=cfg.gain_db);
        schedule.push(ScheduledUtterance {
            speaker,
            utterance,
            onset_s: onset,
            duration_s: dur,
            gain_db,
        });
        if end_max >= cfg.duration_s - MIN_PIECE_S {
            break;
        }
    }
    unused.is_empty().then_some(schedule)
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}
