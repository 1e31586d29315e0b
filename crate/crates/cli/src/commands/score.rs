use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use diarize_core::evaluate::{
    der, metrics_csv, rttm_read_all, speaker_count_confusion, DerResult, MeetingScore,
    MIN_ACTIVE_FRAMES,
};
use diarize_core::types::DiarizationLabels;

use crate::config::output_dir;
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::{write_atomic, ManifestBuilder};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(clap::Args)]
pub struct Args {
    /// Reference RTTM files or directories of `.rttm` files.
    #[arg(long = "ref", required = true, num_args = 1..)]
    reference: Vec<PathBuf>,
    /// Hypothesis RTTM files or directories.
    #[arg(long, required = true, num_args = 1..)]
    hyp: Vec<PathBuf>,
    /// Frames excluded on each side of reference boundaries.
    #[arg(long, default_value_t = 0)]
    collar: usize,
    /// Frames a hypothesis slot needs to count as a speaker.
    #[arg(long, default_value_t = MIN_ACTIVE_FRAMES)]
    min_active: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn rttm_files(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| io_error(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "rttm"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

/// Labels per file id. A file without segments still names a recording
/// through its stem, with no speech.
fn load(paths: &[PathBuf]) -> CliResult<BTreeMap<String, DiarizationLabels>> {
    let mut all = BTreeMap::new();
    for f in rttm_files(paths)? {
        let text = fs::read_to_string(&f).map_err(|e| io_error(&f, e))?;
        let mut map = rttm_read_all(&text)
            .map_err(|e| CliError::Failed(format!("{}: {e}", f.display())))?;
        if map.is_empty() {
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            map.insert(stem, DiarizationLabels::zeros(0, 0));
        }
        for (id, l) in map {
            if all.insert(id.clone(), l).is_some() {
                return Err(CliError::Failed(format!("file id {id} appears twice")));
            }
        }
    }
    Ok(all)
}

pub fn run(a: Args, root: Option<&Path>) -> CliResult<()> {
    let mut m = ManifestBuilder::new("score");
    let refs = load(&a.reference)?;
    let hyps = load(&a.hyp)?;
    let only_ref: Vec<&String> = refs.keys().filter(|k| !hyps.contains_key(*k)).collect();
    let only_hyp: Vec<&String> = hyps.keys().filter(|k| !refs.contains_key(*k)).collect();
    if !only_ref.is_empty() || !only_hyp.is_empty() {
        let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        return Err(CliError::Failed(format!(
            "unmatched file ids; reference only: [{}]; hypothesis only: [{}]",
            list(&only_ref),
            list(&only_hyp)
        )));
    }

    let mut scores = Vec::with_capacity(refs.len());
    let mut pairs = Vec::with_capacity(refs.len());
    let mut max_slots = 1;
    for (id, r) in &refs {
        let h = &hyps[id];
        let frames = r.frames().max(h.frames());
        let (r, h) = (r.padded(r.slots(), frames), h.padded(h.slots(), frames));
        max_slots = max_slots.max(r.slots()).max(h.slots());
        scores.push(MeetingScore {
            file_id: id.clone(),
            result: der(&r, &h, a.collar)?,
        });
        pairs.push((r, h));
    }
    let all = DerResult::aggregate(&scores.iter().map(|s| s.result.clone()).collect::<Vec<_>>());
    let confusion = speaker_count_confusion(&pairs, max_slots, a.min_active);

    let out = output_dir(a.out, root, "score");
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let csv = out.join(METRICS_FILE);
    write_atomic(&csv, metrics_csv(&scores).as_bytes())?;
    let (mi, fa, co) = all.rates();
    println!("DER {} (miss {mi:.4}, false alarm {fa:.4}, confusion {co:.4}) over {} files", all.der, scores.len());
    println!("speaker count confusion (rows: reference, columns: estimated, 0..={max_slots}):");
    for row in &confusion {
        println!("  {}", row.iter().map(|c| format!("{c:>4}")).collect::<String>());
    }
    for p in a.reference.iter().chain(&a.hyp) {
        m.input(p);
    }
    m.config(&json!({ "collar": a.collar, "min_active": a.min_active }))?;
    m.output(&csv);
    m.finish(&out)?;
    Ok(())
}
