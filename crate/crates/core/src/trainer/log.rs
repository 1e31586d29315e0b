use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::StageLosses;
use crate::model::stage_prefix;

/// Batch-mean losses per slot and frame after one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRecord {
    pub step: u64,
    pub total: f64,
    pub stages: Vec<StageLosses>,
    pub wall_s: f64,
    pub eval_der: Option<f64>,
}

impl TrainLogRecord {
    /// Diarization loss of the last trained stage.
    pub fn diarization(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.diarization)
    }

    /// Loss columns only; wall-clock excluded so runs can be compared.
    pub fn loss_values(&self) -> Vec<Option<f64>> {
        let mut v = vec![Some(self.total)];
        for s in &self.stages {
            v.extend([
                Some(s.diarization),
                s.local,
                s.joint_speaker,
                s.individual_speaker,
            ]);
        }
        v
    }
}

pub fn log_header(stages: usize) -> String {
    let mut h = String::from("step,total");
    for s in 0..stages {
        let p = stage_prefix(s);
        h.push_str(&format!(",{p}_diar,{p}_local,{p}_jointspk,{p}_indspk"));
    }
    h.push_str(",wall_s,eval_der");
    h
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9}")).unwrap_or_default()
}

fn row(rec: &TrainLogRecord, stages: usize) -> String {
    let mut r = format!("{},{:.9}", rec.step, rec.total);
    for s in 0..stages {
        match rec.stages.get(s) {
            Some(l) => {
                for v in [Some(l.diarization), l.local, l.joint_speaker, l.individual_speaker] {
                    r.push(',');
                    r.push_str(&cell(v));
                }
            }
            None => r.push_str(",,,,"),
        }
    }
    r.push_str(&format!(",{:.3},{}", rec.wall_s, cell(rec.eval_der)));
    r
}

/// Appends one row, writing the header first when the file is new.
pub fn append_log(path: &Path, rec: &TrainLogRecord, stages: usize) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(&log_header(stages));
        text.push('\n');
    }
    text.push_str(&row(rec, stages));
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trailing moving average over up to `window` values.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average() {
        assert_eq!(smoothed(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn header_and_rows_line_up() {
        let rec = TrainLogRecord {
            step: 3,
            total: 0.5,
            stages: vec![StageLosses {
                diarization: 0.25,
                local: Some(0.25),
                ..StageLosses::default()
            }],
            wall_s: 1.0,
            eval_der: None,
        };
        let h = log_header(2);
        let r = row(&rec, 2);
        assert_eq!(h.split(',').count(), r.split(',').count());
        assert!(r.starts_with("3,0.500000000,0.250000000,0.250000000,,"));
    }
}
