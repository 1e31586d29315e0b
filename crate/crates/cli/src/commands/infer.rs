use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use diarize_core::evaluate::{postprocess, rttm_write, PostProcessConfig};
use diarize_core::features::{extract, wav::read_wav, FeatureConfig};
use diarize_core::gradcore::Container;
use diarize_core::model::DiarizationModel;
use diarize_core::Tensor;

use crate::config::output_dir;
use crate::error::{io_error, CliError, CliResult};
use crate::manifest::ManifestBuilder;

pub const PROBS_FORMAT: &str = "diarize-probs";

#[derive(clap::Args)]
pub struct Args {
    /// Model or training checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mono WAV files.
    #[arg(required = true)]
    audio: Vec<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Median filter length in frames (odd; 1 disables).
    #[arg(long)]
    median: Option<usize>,
    /// Filter the probabilities before thresholding.
    #[arg(long)]
    median_first: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn front_end(model: &DiarizationModel, ckpt: &Path) -> CliResult<FeatureConfig> {
    let f = model.features.clone().unwrap_or_default();
    if f.dim() != model.config.feature_dim {
        return Err(CliError::Failed(format!(
            "{} records no front end and expects {}-dim features; the default front end gives {}",
            ckpt.display(),
            model.config.feature_dim,
            f.dim()
        )));
    }
    Ok(f)
}

pub fn run(a: Args, root: Option<&Path>) -> CliResult<()> {
    let mut m = ManifestBuilder::new("infer");
    let model = DiarizationModel::load(&a.checkpoint)?;
    let features = front_end(&model, &a.checkpoint)?;
    m.input(&a.checkpoint);
    let mut pp = PostProcessConfig::default();
    if let Some(t) = a.threshold {
        pp.threshold = t;
    }
    if let Some(l) = a.median {
        pp.median_len = l;
    }
    pp.median_first |= a.median_first;
    pp.validate()?;

    let out = output_dir(a.out, root, "infer");
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    for wav in &a.audio {
        let id = wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage(format!("{} has no file name", wav.display())))?;
        let audio = read_wav(wav)?;
        let feats = extract(&audio, &features)?;
        let stages = model.predict_stages(&feats.frames)?;
        let last = stages.last().expect("at least one stage");
        let labels = postprocess(last, &pp);

        let rttm = out.join(format!("{id}.rttm"));
        fs::write(&rttm, rttm_write(&labels, &id)).map_err(|e| io_error(&rttm, e))?;
        let mut dump = Container::new(json!({
            "format": PROBS_FORMAT,
            "file_id": id,
            "frame_rate": diarize_core::types::LABEL_RATE,
            "layout": "slots x frames",
            "stages": stages.len(),
        }));
        for (k, p) in stages.iter().enumerate() {
            dump.push(format!("stage{k}"), Tensor::matrix(p.slots(), p.frames(), p.data().to_vec())?);
        }
        let probs = out.join(format!("{id}.probs"));
        dump.write(&probs)?;
        m.input(wav);
        m.output(&rttm);
        m.output(&probs);
        println!("{}: {} frames, {} active slot-frames", id, labels.frames(), labels.speech_frames());
    }
    m.config(&json!({ "postprocess": pp, "features": features }))?;
    m.finish(&out)?;
    Ok(())
}
