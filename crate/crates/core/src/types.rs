//! Data types shared across the pipeline.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

/// Label and model frame rate in frames per second.
pub const LABEL_RATE: f64 = 10.0;

pub type SpeakerId = u32;

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        Self {
            samples: vec![0.0; n],
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Stacked log-mel frames at the label rate, `T×F` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Binary speaker-activity image, `S×T`, slot-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiarizationLabels {
    slots: usize,
    frames: usize,
    data: Vec<u8>,
    /// Global speaker id behind each slot; slots without an entry are unused.
    pub slot_to_speaker: BTreeMap<usize, SpeakerId>,
}

impl DiarizationLabels {
    pub fn zeros(slots: usize, frames: usize) -> Self {
        Self {
            slots,
            frames,
            data: vec![0; slots * frames],
            slot_to_speaker: BTreeMap::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let frames = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != frames) {
            return Err(Error::shape("label rows differ in length"));
        }
        if rows.iter().flatten().any(|&v| v > 1) {
            return Err(Error::shape("labels must be 0 or 1"));
        }
        Ok(Self {
            slots: rows.len(),
            frames,
            data: rows.concat(),
            slot_to_speaker: BTreeMap::new(),
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Copy enlarged with inactive slots and frames to at least
    /// `slots × frames`.
    pub fn padded(&self, slots: usize, frames: usize) -> Self {
        let (s_new, t_new) = (slots.max(self.slots), frames.max(self.frames));
        let mut out = Self::zeros(s_new, t_new);
        for s in 0..self.slots {
            out.row_mut(s)[..self.frames].copy_from_slice(self.row(s));
        }
        out.slot_to_speaker = self.slot_to_speaker.clone();
        out
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, slot: usize, frame: usize) -> bool {
        self.data[slot * self.frames + frame] != 0
    }

    pub fn set(&mut self, slot: usize, frame: usize, active: bool) {
        self.data[slot * self.frames + frame] = active as u8;
    }

    pub fn row(&self, slot: usize) -> &[u8] {
        &self.data[slot * self.frames..(slot + 1) * self.frames]
    }

    pub fn row_mut(&mut self, slot: usize) -> &mut [u8] {
        &mut self.data[slot * self.frames..(slot + 1) * self.frames]
    }

    /// Number of active slots at `frame`.
    pub fn active_count(&self, frame: usize) -> usize {
        (0..self.slots).filter(|&s| self.get(s, frame)).count()
    }

    pub fn speech_frames(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Frame-major `T×S` tensor of 0/1 values, matching the model's output layout.
    pub fn to_frame_major(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.frames, self.slots]);
        for s in 0..self.slots {
            for t in 0..self.frames {
                out.data_mut()[t * self.slots + s] = self.get(s, t) as u8 as f64;
            }
        }
        out
    }

    /// Copy with slots reordered so that new slot `i` is old slot `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = Self::zeros(self.slots, self.frames);
        for (i, &s) in order.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(s));
            if let Some(&id) = self.slot_to_speaker.get(&s) {
                out.slot_to_speaker.insert(i, id);
            }
        }
        out
    }
}

/// Model probabilities, `S×T`, slot-major, each in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiarizationProbs {
    slots: usize,
    frames: usize,
    data: Vec<f64>,
}

impl DiarizationProbs {
    pub fn new(slots: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != slots * frames {
            return Err(Error::shape(format!(
                "{} probabilities for a {slots}x{frames} image",
                data.len()
            )));
        }
        Ok(Self {
            slots,
            frames,
            data,
        })
    }

    pub fn filled(slots: usize, frames: usize, value: f64) -> Self {
        Self {
            slots,
            frames,
            data: vec![value; slots * frames],
        }
    }

    /// From a frame-major `T×S` tensor (the model's native layout).
    pub fn from_frame_major(t: &Tensor) -> Self {
        let (frames, slots) = (t.rows(), t.cols());
        let mut data = vec![0.0; slots * frames];
        for f in 0..frames {
            for s in 0..slots {
                data[s * frames + f] = t.at(f, s);
            }
        }
        Self {
            slots,
            frames,
            data,
        }
    }

    pub fn to_frame_major(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.frames, self.slots]);
        for s in 0..self.slots {
            for f in 0..self.frames {
                out.data_mut()[f * self.slots + s] = self.get(s, f);
            }
        }
        out
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, slot: usize, frame: usize) -> f64 {
        self.data[slot * self.frames + frame]
    }

    pub fn row(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.frames..(slot + 1) * self.frames]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy with slots reordered so that new slot `i` is old slot `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &s in order {
            data.extend_from_slice(self.row(s));
        }
        Self {
            slots: self.slots,
            frames: self.frames,
            data,
        }
    }
}
