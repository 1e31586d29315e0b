//! Fast invariant suite run by `diarize selfcheck`.
//!
//! Every check compares a production code path against an oracle from
//! [`crate::verify`]. A [`Fault`] deliberately breaks one production path so
//! the harness itself can be shown to catch errors.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::evaluate::{der, rttm_read, rttm_write};
use crate::gradcore::{check_params, ops, GradCheckReport, Tensor};
use crate::losses::{model_loss, pit_diarization_loss, LossWeights};
use crate::meetingsim::{
    compute_overlap_ratio, sample_meeting, synth_speaker_corpus, CorpusConfig, MeetingConfig,
};
use crate::model::{forward, DiarizationModel, ModelConfig, SpeakerModuleKind};
use crate::rng::stream_rng;
use crate::types::{DiarizationLabels, DiarizationProbs};
use crate::verify;

/// Production path to sabotage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Gradient,
    Pit,
    Attention,
    Simulator,
    Der,
    Rttm,
}

impl Fault {
    pub const ALL: [Fault; 6] = [
        Fault::Gradient,
        Fault::Pit,
        Fault::Attention,
        Fault::Simulator,
        Fault::Der,
        Fault::Rttm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fault::Gradient => "gradient",
            Fault::Pit => "pit",
            Fault::Attention => "attention",
            Fault::Simulator => "simulator",
            Fault::Der => "der",
            Fault::Rttm => "rttm",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fault::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Fault::ALL.iter().map(|f| f.name()).collect();
                Error::Usage(format!("unknown fault {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SelfCheckConfig {
    pub seed: u64,
    /// Random PIT instances per speaker count.
    pub pit_instances: usize,
    pub meetings: usize,
    pub der_cases: usize,
    pub rttm_cases: usize,
    pub fault: Option<Fault>,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pit_instances: 100,
            meetings: 200,
            der_cases: 200,
            rttm_cases: 100,
            fault: None,
        }
    }
}

fn outcome(name: &'static str, start: Instant, res: Result<std::result::Result<String, String>>) -> CheckOutcome {
    let (passed, detail) = match res {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_labels(slots: usize, frames: usize, p: f64, rng: &mut impl Rng) -> DiarizationLabels {
    let rows: Vec<Vec<u8>> = (0..slots)
        .map(|_| (0..frames).map(|_| rng.gen_bool(p) as u8).collect())
        .collect();
    DiarizationLabels::from_rows(&rows).expect("rectangular rows")
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("matching length")
}

/// Finite differences over every parameter of `cfg` under its full
/// training loss, on 12 random frames.
pub fn model_gradcheck(cfg: &ModelConfig, seed: u64, fault: bool) -> Result<GradCheckReport> {
    let mut rng = stream_rng(seed, 0x6772);
    let model = DiarizationModel::new(cfg.clone(), rng.gen())?;
    let x = random_matrix(12, cfg.feature_dim, &mut rng);
    let mut y = random_labels(cfg.max_speakers, 12, 0.4, &mut rng);
    for s in 0..cfg.max_speakers.min(cfg.num_train_speakers) {
        y.slot_to_speaker.insert(s, s as u32 + 1);
    }
    let w = LossWeights::for_model(cfg);
    check_params(
        &model.params,
        |g, bp| {
            let xv = g.constant(x.clone());
            let out = forward(g, bp, cfg, xv)?;
            let loss = model_loss(g, &out, &y, cfg, &w, &[])?.total;
            if !fault {
                return Ok(loss);
            }
            // A term computed off the tape: finite differences see it,
            // backpropagation does not.
            let head = g.value(bp.var("s1.head.w")?).clone();
            let detached = g.constant(Tensor::scalar(head.data().iter().map(|v| v * v).sum()));
            g.add(loss, detached)
        },
        1e-5,
        1e-4,
    )
}

/// [`model_gradcheck`] on the tiny model, plain and as a two-stage
/// individual-speaker variant.
pub fn check_gradients(seed: u64, fault: bool) -> Result<std::result::Result<String, String>> {
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for (kind, stages) in [(SpeakerModuleKind::None, 1), (SpeakerModuleKind::Individual, 2)] {
        let cfg = ModelConfig {
            speaker_module: kind,
            stages,
            ..ModelConfig::tiny()
        };
        let report = model_gradcheck(&cfg, seed ^ stages as u64, fault)?;
        total += report.checked;
        worst = worst.max(report.max_rel_err);
        if !report.passed() {
            return Ok(Err(format!(
                "{kind:?}/{stages}: {} of {} scalars off, worst {} (analytic {:.3e}, numeric {:.3e})",
                report.failed, report.checked, report.worst, report.worst_pair.0, report.worst_pair.1
            )));
        }
    }
    Ok(Ok(format!("{total} scalars, max rel err {worst:.2e}")))
}

/// Assignment-based PIT against enumeration of all permutations, plus
/// invariance of the loss to reordering the output slots.
pub fn check_pit(seed: u64, instances: usize, fault: bool) -> Result<std::result::Result<String, String>> {
    let mut rng = stream_rng(seed, 0x7069);
    let mut worst: f64 = 0.0;
    for s in 2..=6 {
        for i in 0..instances {
            let t = rng.gen_range(1..40);
            let data = (0..s * t).map(|_| rng.gen_range(0.001..0.999)).collect();
            let p = DiarizationProbs::new(s, t, data)?;
            let y = random_labels(s, t, 0.4, &mut rng);
            let mut fast = pit_diarization_loss(&p, &y)?;
            if fault {
                let identity: Vec<usize> = (0..s).collect();
                fast.loss = crate::assignment::cost_of(&crate::losses::pit_cost_matrix(&p, &y)?, &identity);
            }
            let (slow, _) = verify::brute_force_pit(&p, &y);
            let diff = (fast.loss - slow).abs();
            worst = worst.max(diff);
            if diff >= 1e-10 {
                return Ok(Err(format!("S={s} instance {i}: assignment {} vs brute force {slow}", fast.loss)));
            }
            let mut order: Vec<usize> = (0..s).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let shuffled = pit_diarization_loss(&p.permuted(&order), &y)?;
            if (shuffled.loss - fast.loss).abs() >= 1e-10 {
                return Ok(Err(format!("S={s} instance {i}: loss changed under slot reordering")));
            }
        }
    }
    Ok(Ok(format!("{} instances, max diff {worst:.1e}", 5 * instances)))
}

/// Both attention kernels against loop implementations, and the linear
/// kernel's closed forms.
pub fn check_attention(seed: u64, fault: bool) -> Result<std::result::Result<String, String>> {
    let mut rng = stream_rng(seed, 0x6174);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let t = rng.gen_range(1..30);
        let dh = rng.gen_range(1..9);
        let dv = rng.gen_range(1..9);
        let q = random_matrix(t, dh, &mut rng);
        let k = random_matrix(t, dh, &mut rng);
        let v = random_matrix(t, dv, &mut rng);
        let q_in = if fault { q.map(|x| x * (dh as f64).sqrt()) } else { q.clone() };
        let (full, _) = ops::attention_full(&q_in, &k, &v)?;
        let d = full.max_abs_diff(&verify::naive_attention_full(&q, &k, &v));
        worst = worst.max(d);
        if d >= 1e-10 {
            return Ok(Err(format!("full attention off by {d:.2e} at T={t}")));
        }
        let lin = ops::attention_linear(&q, &k, &v)?;
        let d = lin.max_abs_diff(&verify::naive_attention_linear(&q, &k, &v));
        worst = worst.max(d);
        if d >= 1e-10 {
            return Ok(Err(format!("linear attention off by {d:.2e} at T={t}")));
        }
    }
    // One frame: the output is the value row itself.
    let q = random_matrix(1, 4, &mut rng);
    let k = random_matrix(1, 4, &mut rng);
    let v = random_matrix(1, 3, &mut rng);
    if ops::attention_linear(&q, &k, &v)?.max_abs_diff(&v) > 1e-12 {
        return Ok(Err("linear attention with T=1 does not return v".into()));
    }
    // Identical keys: uniform weights, so every row is the mean of v.
    let key = random_matrix(1, 4, &mut rng);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| key.row(0).to_vec()).collect();
    let k = Tensor::from_rows(&rows)?;
    let q = random_matrix(6, 4, &mut rng);
    let v = random_matrix(6, 3, &mut rng);
    let out = ops::attention_linear(&q, &k, &v)?;
    for i in 0..6 {
        for c in 0..3 {
            let mean = (0..6).map(|j| v.at(j, c)).sum::<f64>() / 6.0;
            if (out.at(i, c) - mean).abs() > 1e-12 {
                return Ok(Err("linear attention with identical keys is not the value mean".into()));
            }
        }
    }
    Ok(Ok(format!("max diff {worst:.1e}")))
}

/// Sampled schedules against the turn-taking constraints and their own
/// overlap targets.
pub fn check_simulator(seed: u64, meetings: usize, fault: bool) -> Result<std::result::Result<String, String>> {
    let corpus = synth_speaker_corpus(&CorpusConfig::default(), seed)?;
    let configs = [
        MeetingConfig::default(),
        MeetingConfig {
            duration_s: 20.0,
            speakers: (1, 4),
            overlap: (0.0, 0.4),
            ..MeetingConfig::default()
        },
    ];
    let mut worst: f64 = 0.0;
    for i in 0..meetings {
        let cfg = &configs[i % configs.len()];
        let mut rng = stream_rng(seed ^ 0x73696d, i as u64);
        let mut spec = sample_meeting(&corpus, cfg, &format!("m{i}"), &mut rng)?;
        if fault {
            let dup = spec.schedule[0].clone();
            spec.schedule.push(dup);
        }
        if verify::has_self_overlap(&spec) {
            return Ok(Err(format!("{}: a speaker overlaps itself", spec.meeting_id)));
        }
        if verify::has_triple_overlap(&spec) {
            return Ok(Err(format!("{}: three simultaneous speakers", spec.meeting_id)));
        }
        let achieved = verify::pairwise_overlap_ratio(&spec);
        if (achieved - compute_overlap_ratio(&spec)).abs() > 1e-9 {
            return Ok(Err(format!("{}: overlap ratio disagrees with the oracle", spec.meeting_id)));
        }
        let miss = (achieved - spec.overlap_target).abs();
        worst = worst.max(miss);
        if miss > 0.05 + 1e-9 {
            return Ok(Err(format!(
                "{}: overlap {achieved:.3} vs target {:.3}",
                spec.meeting_id, spec.overlap_target
            )));
        }
    }
    Ok(Ok(format!("{meetings} meetings, max overlap miss {worst:.3}")))
}

/// Scorer against exhaustive mapping search.
pub fn check_der(seed: u64, cases: usize, fault: bool) -> Result<std::result::Result<String, String>> {
    let mut rng = stream_rng(seed, 0x6465);
    for i in 0..cases {
        let (sr, sh) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let t = rng.gen_range(1..30);
        let r = random_labels(sr, t, 0.4, &mut rng);
        let h = random_labels(sh, t, 0.4, &mut rng);
        let d = der(&r, &h, 0)?;
        let errors = if fault {
            // Identity mapping instead of the optimal one.
            (0..t)
                .map(|f| {
                    let nr = r.active_count(f);
                    let nh = h.active_count(f);
                    let hit = (0..sr.min(sh)).filter(|&s| r.get(s, f) && h.get(s, f)).count();
                    nr.max(nh) - hit
                })
                .sum::<usize>() as f64
        } else {
            d.errors()
        };
        let (oracle, speech) = verify::brute_force_der(&r, &h);
        if errors != oracle as f64 || d.total_speech_frames != speech {
            return Ok(Err(format!("case {i}: {errors} errors vs exhaustive {oracle}")));
        }
        let (m, f, c) = d.rates();
        if d.missed + d.false_alarm + d.confusion != d.errors()
            || (d.total_speech_frames > 0 && ((m + f + c) - d.der).abs() > 1e-12)
        {
            return Ok(Err(format!("case {i}: components do not sum to the total")));
        }
        let same = der(&r, &r, 0)?;
        if same.errors() != 0.0 {
            return Ok(Err(format!("case {i}: DER(x, x) = {}", same.der)));
        }
    }
    Ok(Ok(format!("{cases} cases")))
}

/// Write then read of random label images.
pub fn check_rttm(seed: u64, cases: usize, fault: bool) -> Result<std::result::Result<String, String>> {
    let mut rng = stream_rng(seed, 0x7274);
    for i in 0..cases {
        let l = random_labels(rng.gen_range(1..5), rng.gen_range(1..80), 0.4, &mut rng);
        let mut text = rttm_write(&l, &format!("f{i}"));
        if fault {
            let keep = text.lines().count().saturating_sub(1);
            text = text.lines().take(keep).map(|s| format!("{s}\n")).collect();
        }
        if rttm_read(&text, Some(l.frames()), Some(l.slots()))? != l {
            return Ok(Err(format!("image {i} changed after a round trip")));
        }
    }
    Ok(Ok(format!("{cases} images")))
}

pub fn run_selfcheck(cfg: &SelfCheckConfig) -> Vec<CheckOutcome> {
    let on = |f: Fault| cfg.fault == Some(f);
    let seed = cfg.seed;
    let mut out = Vec::new();
    let start = Instant::now();
    out.push(outcome("gradient", start, check_gradients(seed, on(Fault::Gradient))));
    let start = Instant::now();
    out.push(outcome("pit", start, check_pit(seed, cfg.pit_instances, on(Fault::Pit))));
    let start = Instant::now();
    out.push(outcome("attention", start, check_attention(seed, on(Fault::Attention))));
    let start = Instant::now();
    out.push(outcome("simulator", start, check_simulator(seed, cfg.meetings, on(Fault::Simulator))));
    let start = Instant::now();
    out.push(outcome("der", start, check_der(seed, cfg.der_cases, on(Fault::Der))));
    let start = Instant::now();
    out.push(outcome("rttm", start, check_rttm(seed, cfg.rttm_cases, on(Fault::Rttm))));
    out
}

pub fn format_table(results: &[CheckOutcome]) -> String {
    let mut s = format!("{:<10} {:<6} {:>8}  {}\n", "check", "status", "seconds", "detail");
    for r in results {
        s.push_str(&format!(
            "{:<10} {:<6} {:>8.2}  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        ));
    }
    s
}
