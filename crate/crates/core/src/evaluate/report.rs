use std::fmt::Write as _;

use super::DerResult;

#[derive(Clone, Debug, PartialEq)]
pub struct MeetingScore {
    pub file_id: String,
    pub result: DerResult,
}

/// One row per meeting plus a pooled `ALL` row. Component columns are
/// fractions of reference speech, so they sum to `der`. Values print in
/// shortest round-trip form.
pub fn metrics_csv(scores: &[MeetingScore]) -> String {
    let mut out = String::from("file_id,der,miss,fa,conf,speech_frames\n");
    let mut row = |id: &str, r: &DerResult| {
        let (m, f, c) = r.rates();
        let _ = writeln!(
            out,
            "{id},{},{m},{f},{c},{}",
            r.der, r.total_speech_frames
        );
    };
    for s in scores {
        row(&s.file_id, &s.result);
    }
    let all: Vec<DerResult> = scores.iter().map(|s| s.result.clone()).collect();
    row("ALL", &DerResult::aggregate(&all));
    out
}
