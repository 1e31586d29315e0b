//! Log-mel features, context stacking, and downsampling to the label rate.

mod mel;
pub mod wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::types::{AudioClip, FeatureSequence};

pub use mel::{mel_center_frequencies, MelFilterBank};

/// Added to mel energies before the log.
pub const MEL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub context: usize,
    pub factor: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            window_ms: 40.0,
            hop_ms: 10.0,
            context: 21,
            factor: 10,
            f_min: 125.0,
            f_max: 7500.0,
        }
    }
}

impl FeatureConfig {
    /// Width of one stacked frame.
    pub fn dim(&self) -> usize {
        self.n_mels * self.context
    }
}

/// Hann-windowed power spectrum pooled through a triangular mel bank, then
/// `ln(energy + MEL_FLOOR)`.
///
/// One output row per hop; frame `i` is centered on the middle of hop `i`.
pub fn log_mel(audio: &AudioClip, n_mels: usize, window_ms: f64, hop_ms: f64) -> Result<Tensor> {
    let cfg = FeatureConfig {
        n_mels,
        window_ms,
        hop_ms,
        ..FeatureConfig::default()
    };
    log_mel_with(audio, &cfg)
}

pub fn log_mel_with(audio: &AudioClip, cfg: &FeatureConfig) -> Result<Tensor> {
    if cfg.window_ms < cfg.hop_ms || cfg.hop_ms <= 0.0 {
        return Err(Error::config(format!(
            "window {} ms must be >= hop {} ms > 0",
            cfg.window_ms, cfg.hop_ms
        )));
    }
    let sr = audio.sample_rate as f64;
    let win = (cfg.window_ms * sr / 1000.0).round() as usize;
    let hop = (cfg.hop_ms * sr / 1000.0).round() as usize;
    if audio.samples.len() < win {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {win}-sample window",
            audio.samples.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let bank = MelFilterBank::new(cfg.n_mels, n_fft, sr, cfg.f_min, cfg.f_max)?;
    let frames = audio.samples.len() / hop;
    let window: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
        .collect();

    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut buf = vec![rustfft::num_complex::Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let lead = (win as isize - hop as isize) / 2;
    for i in 0..frames {
        let start = (i * hop) as isize - lead;
        for (n, b) in buf.iter_mut().enumerate() {
            let idx = start + n as isize;
            let x = if n < win && idx >= 0 && (idx as usize) < audio.samples.len() {
                audio.samples[idx as usize] * window[n]
            } else {
                0.0
            };
            *b = rustfft::num_complex::Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        out.extend(bank.apply(&power).into_iter().map(|e| (e + MEL_FLOOR).ln()));
    }
    Tensor::matrix(frames, cfg.n_mels, out)
}

/// Concatenates `context` neighbouring frames around every `factor`-th frame.
///
/// Output frame `t` is frames `factor·t − context/2 ..= factor·t + context/2`,
/// with indices clamped to the valid range (edge replication).
pub fn stack_and_downsample(mel: &Tensor, context: usize, factor: usize) -> Result<Tensor> {
    if context % 2 == 0 {
        return Err(Error::config(format!("context must be odd, got {context}")));
    }
    if factor == 0 {
        return Err(Error::config("downsampling factor must be >= 1"));
    }
    let (frames, width) = mel.expect_matrix("mel")?;
    let out_frames = frames / factor;
    let half = (context / 2) as isize;
    let mut out = Vec::with_capacity(out_frames * width * context);
    for t in 0..out_frames {
        let center = (t * factor) as isize;
        for off in -half..=half {
            let src = (center + off).clamp(0, frames as isize - 1) as usize;
            out.extend_from_slice(mel.row(src));
        }
    }
    Tensor::matrix(out_frames, width * context, out)
}

/// Full pipeline from audio to label-rate features.
pub fn extract(audio: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    let mel = log_mel_with(audio, cfg)?;
    let frames = stack_and_downsample(&mel, cfg.context, cfg.factor)?;
    Ok(FeatureSequence {
        frames,
        frame_rate: 1000.0 / (cfg.hop_ms * cfg.factor as f64),
    })
}

/// Per-column mean and standard deviation used to standardize model inputs.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn estimate<'a>(seqs: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.cols()];
                sq = vec![0.0; s.cols()];
            }
            if s.cols() != sum.len() {
                return Err(Error::shape("feature widths differ"));
            }
            for row in s.data().chunks(s.cols()) {
                for ((a, b), &v) in sum.iter_mut().zip(sq.iter_mut()).zip(row) {
                    *a += v;
                    *b += v * v;
                }
            }
            n += s.rows();
        }
        if n == 0 {
            return Err(Error::EmptyInput("no frames for feature statistics".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(format!(
                "features of width {} vs statistics of width {}",
                x.cols(),
                self.mean.len()
            )));
        }
        let mut out = x.clone();
        let cols = x.cols();
        for row in out.data_mut().chunks_mut(cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, amp: f64) -> AudioClip {
        let sr = 16000;
        let n = (seconds * sr as f64) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioClip::new(s, sr).unwrap()
    }

    #[test]
    fn frame_counts_at_label_rate() {
        let audio = AudioClip::silence(12.0, 16000);
        let mel = log_mel(&audio, 64, 40.0, 10.0).unwrap();
        assert_eq!(mel.rows(), 1200);
        let stacked = stack_and_downsample(&mel, 21, 10).unwrap();
        assert_eq!(stacked.shape(), &[120, 1344]);
    }

    #[test]
    fn silence_is_floor() {
        let mel = log_mel(&AudioClip::silence(1.0, 16000), 64, 40.0, 10.0).unwrap();
        let floor = MEL_FLOOR.ln();
        assert!(mel.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn short_audio_is_empty_input() {
        let audio = AudioClip::silence(0.01, 16000);
        assert!(matches!(
            log_mel(&audio, 64, 40.0, 10.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn tone_peaks_at_nearest_center() {
        // Independent center construction from the HTK mel formula.
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let (lo, hi) = (mel(125.0), mel(7500.0));
        let centers: Vec<f64> = (1..=64)
            .map(|i| inv(lo + (hi - lo) * i as f64 / 65.0))
            .collect();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let m = log_mel(&tone(1000.0, 1.0, 0.5), 64, 40.0, 10.0).unwrap();
        let row = m.row(50);
        let argmax = (0..64).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmax, nearest);
    }

    #[test]
    fn louder_audio_raises_every_bin() {
        let quiet = tone(440.0, 0.5, 0.1);
        let mut loud = quiet.clone();
        loud.samples.iter_mut().for_each(|s| *s *= 2.0);
        let a = log_mel(&quiet, 64, 40.0, 10.0).unwrap();
        let b = log_mel(&loud, 64, 40.0, 10.0).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| y > x));
    }

    #[test]
    fn stacking_identity_and_constant() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(stack_and_downsample(&x, 1, 1).unwrap(), x);
        let c = Tensor::filled(&[30, 4], 2.5);
        let s = stack_and_downsample(&c, 21, 10).unwrap();
        assert_eq!(s.shape(), &[3, 84]);
        assert!(s.data().iter().all(|&v| v == 2.5));
        assert!(matches!(
            stack_and_downsample(&c, 4, 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stacked_frame_is_centered_window() {
        let x = Tensor::matrix(40, 1, (0..40).map(|v| v as f64).collect()).unwrap();
        let s = stack_and_downsample(&x, 21, 10).unwrap();
        let expect_t1: Vec<f64> = (0..=20).map(|v| v as f64).collect();
        assert_eq!(s.row(1), expect_t1.as_slice());
        // Left edge replicates frame 0.
        assert_eq!(&s.row(0)[..11], &[0.0; 11]);
    }
}
