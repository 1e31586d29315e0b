use std::path::{Path, PathBuf};

use diarize_core::model::{AttentionKind, DiarizationModel, SpeakerModuleKind};
use diarize_core::trainer::{
    checkpoint_name, run_sequential, smoothed, DataSource, Dataset, DynamicSource, Trainer,
    TrainLogRecord,
};

use super::load_or_synth_corpus;
use crate::config::{output_dir, overlay_file, parse_range, prepare_output, Preset, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, ManifestBuilder};

pub const MODEL_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";
const STATS_EXAMPLES: usize = 32;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// TOML config (may be partial) or a previous run manifest; applied on
    /// top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long, value_enum)]
    attention: Option<AttentionArg>,
    /// Model width D shared by the TDCN and self-attention stacks.
    #[arg(long)]
    sa_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    sa_layers: Option<usize>,
    /// Dilation layers per TDCN repeat.
    #[arg(long)]
    tdcn_layers: Option<usize>,
    #[arg(long)]
    tdcn_repeats: Option<usize>,
    #[arg(long, value_enum)]
    speaker_module: Option<SpeakerArg>,
    /// Auxiliary diarization head on the TDCN output.
    #[arg(long)]
    local_head: Option<bool>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    stage_wise: bool,
    /// Corpus directory from `synth-corpus`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train_meetings: Option<usize>,
    /// Generate a fresh meeting for every example.
    #[arg(long)]
    dynamic: bool,
    #[arg(long)]
    heldout: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, value_parser = parse_range::<usize>)]
    speakers: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_range::<f64>)]
    overlap: Option<(f64, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AttentionArg {
    Full,
    Linear,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SpeakerArg {
    None,
    Local,
    Joint,
    Individual,
}

fn resolve(a: &Args) -> CliResult<RunConfig> {
    let mut c = RunConfig::preset(a.preset);
    if let Some(p) = &a.config {
        c = overlay_file(&c, p)?;
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.seed, c.seed);
    set!(a.steps, c.train.max_steps);
    set!(a.batch_size, c.train.batch_size);
    set!(a.lr, c.train.learning_rate);
    set!(a.eval_every, c.train.eval_every);
    set!(a.sa_dim, c.model.model_dim);
    set!(a.heads, c.model.heads);
    set!(a.sa_layers, c.model.sa_layers);
    set!(a.tdcn_layers, c.model.dilation_layers);
    set!(a.tdcn_repeats, c.model.repeats);
    set!(a.local_head, c.model.local_head);
    set!(a.stages, c.model.stages);
    set!(a.train_meetings, c.data.train_meetings);
    set!(a.heldout, c.data.heldout_meetings);
    set!(a.duration, c.data.meeting.duration_s);
    set!(a.speakers, c.data.meeting.speakers);
    set!(a.overlap, c.data.meeting.overlap);
    if let Some(k) = a.attention {
        c.model.attention = match k {
            AttentionArg::Full => AttentionKind::Full,
            AttentionArg::Linear => AttentionKind::Linear,
        };
    }
    if let Some(k) = a.speaker_module {
        c.model.speaker_module = match k {
            SpeakerArg::None => SpeakerModuleKind::None,
            SpeakerArg::Local => SpeakerModuleKind::Local,
            SpeakerArg::Joint => SpeakerModuleKind::Joint,
            SpeakerArg::Individual => SpeakerModuleKind::Individual,
        };
    }
    if a.stage_wise {
        c.stage_wise = true;
    }
    if a.dynamic {
        c.data.dynamic = true;
    }
    if a.corpus.is_some() {
        c.data.corpus_dir = a.corpus.clone();
    }
    c.validate()?;
    Ok(c)
}

fn loss_summary(records: &[TrainLogRecord]) -> Option<(f64, f64)> {
    let diar: Vec<f64> = records.iter().map(TrainLogRecord::diarization).collect();
    let window = (diar.len() / 10).clamp(1, 50);
    let s = smoothed(&diar, window);
    Some((*s.get(window - 1)?, *s.last()?))
}

pub fn run(a: Args, root: Option<&Path>) -> CliResult<()> {
    let mut m = ManifestBuilder::new("train");
    let cfg = resolve(&a)?;
    if let Some(p) = &a.config {
        m.input(p);
    }
    let out = output_dir(a.out.clone(), root, "train");
    prepare_output(&out, a.force || a.resume.is_some())?;

    let corpus = load_or_synth_corpus(cfg.data.corpus_dir.as_deref(), &cfg.data.corpus, cfg.corpus_seed())?;
    if let Some(d) = &cfg.data.corpus_dir {
        m.input(d);
    }
    cfg.check_corpus_size(corpus.num_speakers())?;
    cfg.data.meeting.validate(corpus.num_speakers())?;

    let heldout = if cfg.data.heldout_meetings > 0 {
        Dataset::materialize(
            &corpus,
            &cfg.data.meeting,
            &cfg.data.features,
            cfg.data.heldout_meetings,
            cfg.heldout_seed(),
        )?
        .examples
    } else {
        Vec::new()
    };
    let mut materialized;
    let mut dynamic;
    let data: &mut dyn DataSource = if cfg.data.dynamic {
        dynamic = DynamicSource {
            corpus: &corpus,
            meeting: cfg.data.meeting.clone(),
            features: cfg.data.features.clone(),
            seed: cfg.train_data_seed(),
            stats_examples: STATS_EXAMPLES,
        };
        &mut dynamic
    } else {
        materialized = Dataset::materialize(
            &corpus,
            &cfg.data.meeting,
            &cfg.data.features,
            cfg.data.train_meetings,
            cfg.train_data_seed(),
        )?;
        &mut materialized
    };

    let trainer = match &a.resume {
        Some(ckpt) => {
            m.input(ckpt);
            let mut t = Trainer::resume(ckpt, None)?;
            if t.model.config != cfg.model {
                return Err(CliError::Usage(format!(
                    "{} was trained with a different model config",
                    ckpt.display()
                )));
            }
            if let Some(s) = a.steps {
                t.config.max_steps = s;
            }
            t
        }
        None => {
            let mut model = DiarizationModel::new(cfg.model.clone(), cfg.init_seed())?;
            model.features = Some(cfg.data.features.clone());
            Trainer::new(model, cfg.train.clone())?
        }
    };
    let mut trainer = trainer.with_output(&out).with_heldout(heldout);
    trainer.postprocess = cfg.postprocess.clone();
    let trainer = run_sequential(trainer, data, cfg.stage_wise)?;

    trainer.model.save(&out.join(MODEL_FILE))?;
    let text = toml::to_string(&cfg).map_err(|e| CliError::Failed(e.to_string()))?;
    write_atomic(&out.join(CONFIG_FILE), text.as_bytes())?;
    m.config(&cfg)?;
    m.seed(cfg.seed);
    m.output(out.join(MODEL_FILE));
    m.output(out.join(checkpoint_name(trainer.step)));
    m.finish(&out)?;

    println!("trained to step {} in {}", trainer.step, out.display());
    if let Some((first, last)) = loss_summary(&trainer.records) {
        println!("smoothed diarization loss: initial {first:.6}, final {last:.6}");
    }
    if let Some(d) = trainer.records.last().and_then(|r| r.eval_der) {
        println!("held-out DER {d:.4}");
    }
    Ok(())
}
