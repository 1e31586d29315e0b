//! Synthetic speaker corpus.
//!
//! Each speaker is a harmonic source shaped by a fixed set of formant-like
//! resonances and a spectral tilt. Utterances vary the pitch contour and the
//! syllable-rate amplitude envelope, so frames carry a stable per-speaker
//! spectral signature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{log_mel, FeatureConfig};
use crate::rng::stream_rng;
use crate::types::{AudioClip, SpeakerId};

/// Minimum per-bin level gap (3 dB in power, natural-log units) between two
/// speakers' mean log-mel spectra.
pub const DISTINCT_LOG_GAP: f64 = 0.690_775_527_898_213_7;
/// Bins that must exceed the gap.
pub const DISTINCT_MIN_BINS: usize = 8;

const MAX_VOICE_DRAWS: u64 = 64;
const UTTERANCE_RMS: f64 = 0.1;
const MAX_HARMONIC_HZ: f64 = 7000.0;
const ENVELOPE_BLOCK: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_utterance_s: f64,
    pub max_utterance_s: f64,
    pub sample_rate: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers: 16,
            utterances_per_speaker: 8,
            min_utterance_s: 1.0,
            max_utterance_s: 3.5,
            sample_rate: 16000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub f0_hz: f64,
    /// (center Hz, bandwidth Hz, linear amplitude)
    pub formants: Vec<(f64, f64, f64)>,
    /// Spectral slope in dB per octave above 100 Hz.
    pub tilt_db_per_octave: f64,
    pub breath: f64,
}

impl Voice {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let formant = |rng: &mut R, lo: f64, hi: f64, amp: f64| {
            (rng.gen_range(lo..hi), rng.gen_range(60.0..220.0), amp * rng.gen_range(0.5..1.5))
        };
        Self {
            f0_hz: rng.gen_range(80.0..260.0),
            formants: vec![
                formant(rng, 250.0, 950.0, 1.0),
                formant(rng, 850.0, 2600.0, 0.6),
                formant(rng, 2200.0, 3800.0, 0.35),
                formant(rng, 3500.0, 6500.0, 0.2),
            ],
            tilt_db_per_octave: rng.gen_range(-9.0..-3.0),
            breath: rng.gen_range(0.005..0.03),
        }
    }

    /// Spectral envelope magnitude at `f` Hz.
    fn envelope(&self, f: f64) -> f64 {
        let res: f64 = self
            .formants
            .iter()
            .map(|&(c, bw, a)| a * (-0.5 * ((f - c) / bw).powi(2)).exp())
            .sum();
        let tilt = 10f64.powf(self.tilt_db_per_octave * (f / 100.0).max(1.0).log2() / 20.0);
        (res + 0.02) * tilt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: SpeakerId,
    pub voice: Voice,
    pub utterances: Vec<AudioClip>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerCorpus {
    pub speakers: Vec<Speaker>,
    pub sample_rate: u32,
}

impl SpeakerCorpus {
    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn ids(&self) -> Vec<SpeakerId> {
        self.speakers.iter().map(|s| s.id).collect()
    }

    pub fn speaker(&self, id: SpeakerId) -> Option<&Speaker> {
        // Ids are dense in 1..=C.
        self.speakers.get((id as usize).checked_sub(1)?).filter(|s| s.id == id)
    }

    pub fn utterance(&self, id: SpeakerId, index: usize) -> Option<&AudioClip> {
        self.speaker(id)?.utterances.get(index)
    }
}

/// Renders one utterance with a per-utterance pitch contour and envelope.
pub fn synth_utterance<R: Rng>(voice: &Voice, seconds: f64, sample_rate: u32, rng: &mut R) -> AudioClip {
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    let base = voice.f0_hz * rng.gen_range(0.92..1.08);
    let (vib_rate, vib_depth, vib_phase) = (
        rng.gen_range(0.3..1.2),
        rng.gen_range(0.03..0.10),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let drift = rng.gen_range(-0.08..0.08);
    let (syl_rate, syl_phase) = (rng.gen_range(3.0..5.5), rng.gen_range(0.0..std::f64::consts::TAU));
    let max_h = (MAX_HARMONIC_HZ / (base * 0.8)).floor() as usize;
    let mut amps = vec![0.0; max_h + 1];
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    let ramp = (0.01 * sr) as usize;
    for i in 0..n {
        let t = i as f64 / sr;
        let f0 = base
            * (1.0 + vib_depth * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin())
            * (1.0 + drift * t / seconds.max(1e-9));
        if i % ENVELOPE_BLOCK == 0 {
            for (k, a) in amps.iter_mut().enumerate().skip(1) {
                let f = f0 * k as f64;
                *a = if f < MAX_HARMONIC_HZ { voice.envelope(f) } else { 0.0 };
            }
        }
        phase = (phase + std::f64::consts::TAU * f0 / sr) % std::f64::consts::TAU;
        // sin(kφ) by the Chebyshev recurrence.
        let two_cos = 2.0 * phase.cos();
        let (mut prev, mut cur) = (0.0, phase.sin());
        let mut s = 0.0;
        for a in amps.iter().skip(1) {
            s += a * cur;
            let next = two_cos * cur - prev;
            prev = cur;
            cur = next;
        }
        let syllable = 0.6 + 0.4 * (std::f64::consts::TAU * syl_rate * t + syl_phase).sin();
        let noise = voice.breath * rng.gen_range(-1.0..1.0);
        let edge = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
        out.push((s * syllable + noise) * edge.max(0.05));
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= UTTERANCE_RMS / rms);
    }
    AudioClip {
        samples: out,
        sample_rate,
    }
}

fn mean_log_mel(clips: &[AudioClip]) -> Result<Vec<f64>> {
    let cfg = FeatureConfig::default();
    let mut acc = vec![0.0; cfg.n_mels];
    let mut n = 0usize;
    for c in clips {
        let m = log_mel(c, cfg.n_mels, cfg.window_ms, cfg.hop_ms)?;
        for row in m.data().chunks(cfg.n_mels) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        n += m.rows();
    }
    Ok(acc.into_iter().map(|a| a / n.max(1) as f64).collect())
}

/// Number of mel bins whose mean levels differ by at least 3 dB.
pub fn distinct_bins(a: &[f64], b: &[f64]) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| (*x - *y).abs() >= DISTINCT_LOG_GAP)
        .count()
}

/// Builds `num_speakers` speakers with ids `1..=C`.
///
/// A speaker whose mean log-mel spectrum is not distinct from every earlier
/// speaker is redrawn from a fresh stream.
pub fn synth_speaker_corpus(cfg: &CorpusConfig, seed: u64) -> Result<SpeakerCorpus> {
    if cfg.num_speakers == 0 || cfg.utterances_per_speaker == 0 {
        return Err(Error::config("corpus needs at least one speaker and utterance"));
    }
    if cfg.min_utterance_s < 1.0 || cfg.max_utterance_s < cfg.min_utterance_s {
        return Err(Error::config("utterances must last at least 1 s"));
    }
    let mut speakers: Vec<Speaker> = Vec::with_capacity(cfg.num_speakers);
    let mut means: Vec<Vec<f64>> = Vec::new();
    for idx in 0..cfg.num_speakers {
        let mut accepted = None;
        for draw in 0..MAX_VOICE_DRAWS {
            let mut rng = stream_rng(seed, (idx as u64) << 8 | draw);
            let voice = Voice::draw(&mut rng);
            let utterances: Vec<AudioClip> = (0..cfg.utterances_per_speaker)
                .map(|_| {
                    let secs = rng.gen_range(cfg.min_utterance_s..=cfg.max_utterance_s);
                    let secs = (secs * 10.0).round() / 10.0;
                    synth_utterance(&voice, secs, cfg.sample_rate, &mut rng)
                })
                .collect();
            let mean = mean_log_mel(&utterances)?;
            if means.iter().all(|m| distinct_bins(m, &mean) >= DISTINCT_MIN_BINS) {
                accepted = Some((voice, utterances, mean));
                break;
            }
        }
        let (voice, utterances, mean) = accepted.ok_or_else(|| Error::Simulation {
            constraint: "speaker distinctness".into(),
            detail: format!("speaker {} not distinct after {MAX_VOICE_DRAWS} draws", idx + 1),
        })?;
        means.push(mean);
        speakers.push(Speaker {
            id: idx as SpeakerId + 1,
            voice,
            utterances,
        });
    }
    Ok(SpeakerCorpus {
        speakers,
        sample_rate: cfg.sample_rate,
    })
}
