use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diarize_core::meetingsim::{synth_speaker_corpus, write_corpus, CorpusConfig};

use crate::config::{output_dir, overlay_file, prepare_output};
use crate::error::CliResult;
use crate::manifest::ManifestBuilder;

#[derive(clap::Args)]
pub struct Args {
    /// Output directory [default: <output-root>/synth-corpus].
    out: Option<PathBuf>,
    /// TOML config or a previous run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    speakers: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    utterances: Option<u64>,
    /// Utterance length range in seconds, `min:max`.
    #[arg(long, value_parser = crate::config::parse_range::<f64>)]
    utterance_s: Option<(f64, f64)>,
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SynthConfig {
    seed: u64,
    corpus: CorpusConfig,
}

pub fn run(a: Args, root: Option<&Path>) -> CliResult<()> {
    let mut m = ManifestBuilder::new("synth-corpus");
    let mut cfg = SynthConfig {
        seed: 0,
        corpus: CorpusConfig::default(),
    };
    if let Some(p) = &a.config {
        cfg = overlay_file(&cfg, p)?;
        m.input(p);
    }
    if let Some(v) = a.speakers {
        cfg.corpus.num_speakers = v as usize;
    }
    if let Some(v) = a.utterances {
        cfg.corpus.utterances_per_speaker = v as usize;
    }
    if let Some((lo, hi)) = a.utterance_s {
        cfg.corpus.min_utterance_s = lo;
        cfg.corpus.max_utterance_s = hi;
    }
    if let Some(v) = a.sample_rate {
        cfg.corpus.sample_rate = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let out = output_dir(a.out, root, "synth-corpus");
    let corpus = synth_speaker_corpus(&cfg.corpus, cfg.seed)?;
    prepare_output(&out, a.force)?;
    write_corpus(&out, &corpus)?;
    m.config(&cfg)?;
    m.seed(cfg.seed);
    m.output(&out);
    m.finish(&out)?;
    println!(
        "wrote {} speakers x {} utterances to {}",
        corpus.num_speakers(),
        cfg.corpus.utterances_per_speaker,
        out.display()
    );
    Ok(())
}
