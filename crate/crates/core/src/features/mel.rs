use crate::error::{Error, Result};

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge and center frequencies: `n_mels + 2` points equally spaced in mel.
fn mel_points(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

pub fn mel_center_frequencies(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let pts = mel_points(n_mels, f_min, f_max);
    pts[1..=n_mels].to_vec()
}

/// Triangular filters with unit peak, linear in Hz between adjacent points.
pub struct MelFilterBank {
    /// Per filter: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterBank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Result<Self> {
        if n_mels == 0 || f_min < 0.0 || f_max <= f_min || f_max > sample_rate / 2.0 {
            return Err(Error::config(format!(
                "mel bank: {n_mels} bands over {f_min}..{f_max} Hz at {sample_rate} Hz"
            )));
        }
        let pts = mel_points(n_mels, f_min, f_max);
        let bin_hz = sample_rate / n_fft as f64;
        let n_bins = n_fft / 2 + 1;
        let filters = (0..n_mels)
            .map(|m| {
                let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
                let first = (l / bin_hz).ceil() as usize;
                let last = ((r / bin_hz).floor() as usize).min(n_bins - 1);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= c {
                            ((f - l) / (c - l)).max(0.0)
                        } else {
                            ((r - f) / (r - c)).max(0.0)
                        }
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        Ok(Self { filters })
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .zip(&power[*first..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}
