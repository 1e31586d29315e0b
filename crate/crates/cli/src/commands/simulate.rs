use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diarize_core::evaluate::rttm_write;
use diarize_core::features::wav::write_wav;
use diarize_core::meetingsim::{compute_overlap_ratio, render_meeting, write_specs, CorpusConfig, MeetingConfig};
use diarize_core::trainer::generate_spec;

use super::load_or_synth_corpus;
use crate::config::{output_dir, overlay_file, parse_range, prepare_output};
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::ManifestBuilder;

pub const SPEC_FILE: &str = "meetings.spec";

#[derive(clap::Args)]
pub struct Args {
    /// Corpus directory from `synth-corpus`; synthesized from the seed when
    /// omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// TOML config or a previous run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of meetings.
    #[arg(long)]
    n: Option<usize>,
    /// Meeting length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Participant count range, `min:max`.
    #[arg(long, value_parser = parse_range::<usize>)]
    speakers: Option<(usize, usize)>,
    /// Overlap target range, `lo:hi`.
    #[arg(long, value_parser = parse_range::<f64>)]
    overlap: Option<(f64, f64)>,
    /// Label slots per meeting.
    #[arg(long)]
    max_speakers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SimulateConfig {
    seed: u64,
    meetings: usize,
    corpus_dir: Option<PathBuf>,
    corpus: CorpusConfig,
    meeting: MeetingConfig,
}

pub fn run(a: Args, root: Option<&Path>) -> CliResult<()> {
    let mut m = ManifestBuilder::new("simulate");
    let mut cfg = SimulateConfig {
        seed: 0,
        meetings: 10,
        corpus_dir: None,
        corpus: CorpusConfig::default(),
        meeting: MeetingConfig::default(),
    };
    if let Some(p) = &a.config {
        cfg = overlay_file(&cfg, p)?;
        m.input(p);
    }
    if a.corpus.is_some() {
        cfg.corpus_dir = a.corpus;
    }
    if let Some(v) = a.n {
        cfg.meetings = v;
    }
    if let Some(v) = a.duration {
        cfg.meeting.duration_s = v;
    }
    if let Some(v) = a.speakers {
        cfg.meeting.speakers = v;
    }
    if let Some(v) = a.overlap {
        cfg.meeting.overlap = v;
    }
    if let Some(v) = a.max_speakers {
        cfg.meeting.max_speakers = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if cfg.meetings == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let corpus = load_or_synth_corpus(cfg.corpus_dir.as_deref(), &cfg.corpus, cfg.seed)?;
    if let Some(d) = &cfg.corpus_dir {
        m.input(d);
    }
    cfg.meeting.validate(corpus.num_speakers())?;

    let out = output_dir(a.out, root, "simulate");
    prepare_output(&out, a.force)?;
    let mut specs = Vec::with_capacity(cfg.meetings);
    let mut overlap_sum = 0.0;
    for i in 0..cfg.meetings as u64 {
        let spec = generate_spec(&corpus, &cfg.meeting, cfg.seed, i)?;
        let (audio, labels) = render_meeting(&spec, &corpus, cfg.meeting.max_speakers)?;
        write_wav(&out.join(format!("{}.wav", spec.meeting_id)), &audio)?;
        let rttm = out.join(format!("{}.rttm", spec.meeting_id));
        fs::write(&rttm, rttm_write(&labels, &spec.meeting_id)).map_err(|e| io_error(&rttm, e))?;
        overlap_sum += compute_overlap_ratio(&spec);
        specs.push(spec);
    }
    write_specs(&out.join(SPEC_FILE), &specs)?;
    m.config(&cfg)?;
    m.seed(cfg.seed);
    m.output(&out);
    m.finish(&out)?;
    let (lo, hi) = cfg.meeting.overlap;
    println!(
        "wrote {} meetings to {}; mean overlap {:.4} (target range {lo}:{hi})",
        cfg.meetings,
        out.display(),
        overlap_sum / cfg.meetings as f64
    );
    Ok(())
}
