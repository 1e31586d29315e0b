//! Meeting-spec files (a JSON header line, then one JSON record per
//! meeting) and corpus directories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::wav::{read_wav, write_wav};
use crate::types::SpeakerId;

use super::corpus::{Speaker, SpeakerCorpus, Voice};
use super::schedule::MeetingSpec;

pub const SPEC_FORMAT: &str = "diarize-meetingspec";
pub const SPEC_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn specs_to_string(specs: &[MeetingSpec]) -> Result<String> {
    let mut out = serde_json::to_string(&Header {
        format: SPEC_FORMAT.into(),
        version: SPEC_VERSION,
    })?;
    out.push('\n');
    for s in specs {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn specs_from_str(text: &str) -> Result<Vec<MeetingSpec>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.format != SPEC_FORMAT || header.version != SPEC_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported spec file {} v{}", header.format, header.version),
        });
    }
    lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_specs(path: &Path, specs: &[MeetingSpec]) -> Result<()> {
    fs::write(path, specs_to_string(specs)?).map_err(|e| Error::io(path, e))
}

pub fn read_specs(path: &Path) -> Result<Vec<MeetingSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    specs_from_str(&text)
}

pub const CORPUS_FORMAT: &str = "diarize-corpus";
pub const CORPUS_INDEX: &str = "speakers.json";

#[derive(Serialize, Deserialize)]
struct CorpusIndex {
    format: String,
    version: u32,
    sample_rate: u32,
    speakers: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: SpeakerId,
    voice: Voice,
    /// Paths relative to the corpus directory.
    utterances: Vec<String>,
}

pub fn speaker_dir_name(id: SpeakerId) -> String {
    format!("spk{id:04}")
}

/// One subdirectory of WAVs per speaker plus an index file.
pub fn write_corpus(dir: &Path, corpus: &SpeakerCorpus) -> Result<()> {
    let mut speakers = Vec::with_capacity(corpus.speakers.len());
    for spk in &corpus.speakers {
        let sub = speaker_dir_name(spk.id);
        let sub_path = dir.join(&sub);
        fs::create_dir_all(&sub_path).map_err(|e| Error::io(&sub_path, e))?;
        let mut files = Vec::with_capacity(spk.utterances.len());
        for (k, clip) in spk.utterances.iter().enumerate() {
            let name = format!("{sub}/utt{k:03}.wav");
            write_wav(&dir.join(&name), clip)?;
            files.push(name);
        }
        speakers.push(IndexEntry {
            id: spk.id,
            voice: spk.voice.clone(),
            utterances: files,
        });
    }
    let index = CorpusIndex {
        format: CORPUS_FORMAT.into(),
        version: 1,
        sample_rate: corpus.sample_rate,
        speakers,
    };
    let path = dir.join(CORPUS_INDEX);
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))
}

/// Loads a directory written by [`write_corpus`]. Audio comes back
/// quantized to 16 bits.
pub fn read_corpus(dir: &Path) -> Result<SpeakerCorpus> {
    let path = dir.join(CORPUS_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: CorpusIndex = serde_json::from_str(&text)?;
    if index.format != CORPUS_FORMAT || index.version != 1 {
        return Err(Error::Format(format!(
            "{}: unsupported corpus index {} v{}",
            path.display(),
            index.format,
            index.version
        )));
    }
    let mut speakers = Vec::with_capacity(index.speakers.len());
    for (i, e) in index.speakers.into_iter().enumerate() {
        if e.id as usize != i + 1 {
            return Err(Error::Format(format!(
                "{}: speaker ids must run 1..=C in order, found {} at position {}",
                path.display(),
                e.id,
                i + 1
            )));
        }
        let utterances = e
            .utterances
            .iter()
            .map(|f| {
                let clip = read_wav(&dir.join(f))?;
                if clip.sample_rate != index.sample_rate {
                    return Err(Error::Format(format!(
                        "{f}: sample rate {} differs from corpus rate {}",
                        clip.sample_rate, index.sample_rate
                    )));
                }
                Ok(clip)
            })
            .collect::<Result<Vec<_>>>()?;
        speakers.push(Speaker {
            id: e.id,
            voice: e.voice,
            utterances,
        });
    }
    if speakers.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no speakers", path.display())));
    }
    Ok(SpeakerCorpus {
        speakers,
        sample_rate: index.sample_rate,
    })
}
