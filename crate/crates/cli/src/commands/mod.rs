pub mod infer;
pub mod score;
pub mod selfcheck;
pub mod simulate;
pub mod synth;
pub mod train;

use std::path::Path;

use diarize_core::meetingsim::{read_corpus, synth_speaker_corpus, CorpusConfig, SpeakerCorpus};

use crate::error::CliResult;

/// Loads `dir` when given, else synthesizes from `cfg` and `seed`.
pub fn load_or_synth_corpus(
    dir: Option<&Path>,
    cfg: &CorpusConfig,
    seed: u64,
) -> CliResult<SpeakerCorpus> {
    Ok(match dir {
        Some(d) => read_corpus(d)?,
        None => synth_speaker_corpus(cfg, seed)?,
    })
}
