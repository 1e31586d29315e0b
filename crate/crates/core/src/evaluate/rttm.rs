//! RTTM speaker segments.
//!
//! Lines are `SPEAKER <file> 1 <onset> <duration> <NA> <NA> <name> <NA> <NA>`
//! with times in seconds at 0.01 s precision. Slots with a known speaker id
//! are named `spk<id>`, others `slot<k>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{DiarizationLabels, SpeakerId, LABEL_RATE};

pub fn slot_name(labels: &DiarizationLabels, slot: usize) -> String {
    match labels.slot_to_speaker.get(&slot) {
        Some(id) => format!("spk{id}"),
        None => format!("slot{slot}"),
    }
}

/// One line per contiguous active run, ordered by slot then onset.
pub fn rttm_write(labels: &DiarizationLabels, file_id: &str) -> String {
    let mut out = String::new();
    for s in 0..labels.slots() {
        let name = slot_name(labels, s);
        let row = labels.row(s);
        let mut t = 0;
        while t < row.len() {
            if row[t] == 0 {
                t += 1;
                continue;
            }
            let start = t;
            while t < row.len() && row[t] != 0 {
                t += 1;
            }
            let onset = start as f64 / LABEL_RATE;
            let dur = (t - start) as f64 / LABEL_RATE;
            let _ = writeln!(
                out,
                "SPEAKER {file_id} 1 {onset:.2} {dur:.2} <NA> <NA> {name} <NA> <NA>"
            );
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RttmSegment {
    pub file_id: String,
    pub onset_s: f64,
    pub duration_s: f64,
    pub name: String,
}

fn parse_segments(text: &str) -> Result<Vec<RttmSegment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f[0] != "SPEAKER" {
            continue;
        }
        if f.len() < 8 {
            return Err(err(format!("expected at least 8 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("bad {what} {s:?}")))
        };
        out.push(RttmSegment {
            file_id: f[1].to_string(),
            onset_s: num(f[3], "onset")?,
            duration_s: num(f[4], "duration")?,
            name: f[7].to_string(),
        });
    }
    Ok(out)
}

fn frame_of(seconds: f64) -> usize {
    (seconds * LABEL_RATE).round() as usize
}

fn to_labels(
    segs: &[&RttmSegment],
    frames: Option<usize>,
    slots: Option<usize>,
) -> Result<DiarizationLabels> {
    // `slot<k>` names keep their index; every other name takes the lowest
    // free slot in order of first appearance.
    let mut slot_of: BTreeMap<&str, usize> = BTreeMap::new();
    for s in segs {
        if let Some(k) = s.name.strip_prefix("slot").and_then(|k| k.parse().ok()) {
            slot_of.insert(&s.name, k);
        }
    }
    let mut taken: Vec<usize> = slot_of.values().copied().collect();
    let mut ids: BTreeMap<usize, SpeakerId> = BTreeMap::new();
    for s in segs {
        if slot_of.contains_key(s.name.as_str()) {
            continue;
        }
        let k = (0..).find(|k| !taken.contains(k)).expect("free slot");
        taken.push(k);
        slot_of.insert(&s.name, k);
        if let Some(id) = s.name.strip_prefix("spk").and_then(|v| v.parse().ok()) {
            ids.insert(k, id);
        }
    }
    let needed = slot_of.values().map(|&k| k + 1).max().unwrap_or(0);
    let n_slots = match slots {
        Some(n) if n < needed => {
            return Err(Error::Format(format!(
                "RTTM uses {needed} slots, only {n} allowed"
            )))
        }
        Some(n) => n,
        None => needed,
    };
    let n_frames = frames.unwrap_or_else(|| {
        segs.iter()
            .map(|s| frame_of(s.onset_s + s.duration_s))
            .max()
            .unwrap_or(0)
    });
    let mut labels = DiarizationLabels::zeros(n_slots, n_frames);
    labels.slot_to_speaker = ids;
    for s in segs {
        let k = slot_of[s.name.as_str()];
        let start = frame_of(s.onset_s).min(n_frames);
        let end = frame_of(s.onset_s + s.duration_s).min(n_frames);
        for t in start..end {
            labels.set(k, t, true);
        }
    }
    Ok(labels)
}

/// Labels for an RTTM holding a single file. `frames` and `slots` fix the
/// image size; otherwise it is inferred from the segments.
pub fn rttm_read(
    text: &str,
    frames: Option<usize>,
    slots: Option<usize>,
) -> Result<DiarizationLabels> {
    let segs = parse_segments(text)?;
    if let Some(first) = segs.first() {
        if let Some(other) = segs.iter().find(|s| s.file_id != first.file_id) {
            return Err(Error::Format(format!(
                "RTTM mixes files {} and {}",
                first.file_id, other.file_id
            )));
        }
    }
    to_labels(&segs.iter().collect::<Vec<_>>(), frames, slots)
}

/// Labels per file id, sizes inferred from the segments.
pub fn rttm_read_all(text: &str) -> Result<BTreeMap<String, DiarizationLabels>> {
    let segs = parse_segments(text)?;
    let mut by_file: BTreeMap<&str, Vec<&RttmSegment>> = BTreeMap::new();
    for s in &segs {
        by_file.entry(&s.file_id).or_default().push(s);
    }
    by_file
        .into_iter()
        .map(|(f, v)| Ok((f.to_string(), to_labels(&v, None, None)?)))
        .collect()
}
