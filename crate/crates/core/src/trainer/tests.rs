use rand::Rng;

use super::*;
use crate::model::{ModelConfig, SpeakerModuleKind};
use crate::rng::stream_rng;
use crate::types::DiarizationLabels;

/// Two slots whose activity is visible, with noise, in feature columns 0 and 1.
struct Toy {
    seed: u64,
    poison_at: Option<u64>,
}

impl DataSource for Toy {
    fn example(&mut self, index: u64) -> Result<Example> {
        let mut rng = stream_rng(self.seed, index);
        let t_len = 12;
        let mut labels = DiarizationLabels::zeros(2, t_len);
        for s in 0..2 {
            let start = rng.gen_range(0..8);
            let len = rng.gen_range(2..6);
            for t in start..(start + len).min(t_len) {
                labels.set(s, t, true);
            }
            labels.slot_to_speaker.insert(s, s as u32 + 1);
        }
        let mut f = Tensor::zeros(&[t_len, 6]);
        for t in 0..t_len {
            for c in 0..6 {
                let signal = if c < 2 && labels.get(c, t) { 2.0 } else { 0.0 };
                f.data_mut()[t * 6 + c] = signal + rng.gen_range(-0.3..0.3);
            }
        }
        if self.poison_at == Some(index) {
            f.data_mut()[0] = f64::NAN;
        }
        Ok(Example {
            id: format!("toy{index}"),
            features: f,
            labels,
        })
    }

    fn stats_sample(&mut self) -> Result<Vec<Example>> {
        (1000..1008).map(|i| self.example(i)).collect()
    }
}

fn toy() -> Toy {
    Toy {
        seed: 5,
        poison_at: None,
    }
}

fn tiny_train(steps: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        eval_every: 0,
        learning_rate: 3e-3,
        ..TrainConfig::desk()
    }
}

#[test]
fn zero_steps_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let model = DiarizationModel::new(ModelConfig::tiny(), 1).unwrap();
    let before = model.params.clone();
    let (after, records) = train(model, &tiny_train(0), &mut toy(), Some(dir.path())).unwrap();
    assert!(records.is_empty());
    assert_eq!(after.params, before);
    let files: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(files, vec![checkpoint_name(0)]);
}

#[test]
fn smoothed_loss_decreases() {
    let model = DiarizationModel::new(ModelConfig::tiny(), 2).unwrap();
    let (_, records) = train(model, &tiny_train(200), &mut toy(), None).unwrap();
    let diar: Vec<f64> = records.iter().map(TrainLogRecord::diarization).collect();
    let s = smoothed(&diar, 20);
    assert!(s[199] < s[19], "{} vs {}", s[199], s[19]);
}

#[test]
fn resume_reproduces_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        eval_every: 4,
        ..tiny_train(10)
    };
    let model = DiarizationModel::new(ModelConfig::tiny(), 3).unwrap();
    let (full, records) = train(model, &cfg, &mut toy(), Some(dir.path())).unwrap();

    let mut resumed = Trainer::resume(&dir.path().join(checkpoint_name(4)), None).unwrap();
    assert_eq!(resumed.step, 4);
    let tail = resumed.run(&mut toy()).unwrap();
    assert_eq!(tail.len(), 6);
    for (a, b) in records[4..].iter().zip(&tail) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.loss_values(), b.loss_values());
    }
    assert_eq!(resumed.model.params, full.params);
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 11);
}

#[test]
fn nan_aborts_with_component_and_step() {
    let model = DiarizationModel::new(ModelConfig::tiny(), 4).unwrap();
    let mut data = Toy {
        seed: 5,
        poison_at: Some(7),
    };
    let cfg = TrainConfig {
        fit_stats: false,
        ..tiny_train(5)
    };
    match train(model, &cfg, &mut data, None) {
        Err(Error::NonFinite { component, step }) => {
            assert_eq!(component, "s1_diar");
            assert_eq!(step, 2);
        }
        other => panic!("expected non-finite error, got {:?}", other.map(|r| r.1.len())),
    }
}

#[test]
fn joint_two_stage_logs_both_stages() {
    let cfg = ModelConfig {
        stages: 2,
        ..ModelConfig::tiny()
    };
    let model = DiarizationModel::new(cfg, 5).unwrap();
    let (_, records) =
        train_sequential(model, &tiny_train(3), &mut toy(), None, false).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.stages.len() == 2));
}

#[test]
fn single_stage_sequential_equals_train() {
    let model = DiarizationModel::new(ModelConfig::tiny(), 6).unwrap();
    let (a, ra) = train(model.clone(), &tiny_train(4), &mut toy(), None).unwrap();
    let (b, rb) = train_sequential(model, &tiny_train(4), &mut toy(), None, true).unwrap();
    assert_eq!(a.params, b.params);
    let la: Vec<_> = ra.iter().map(TrainLogRecord::loss_values).collect();
    let lb: Vec<_> = rb.iter().map(TrainLogRecord::loss_values).collect();
    assert_eq!(la, lb);
}

#[test]
fn stage_wise_freezes_stage_one() {
    let cfg = ModelConfig {
        stages: 2,
        ..ModelConfig::tiny()
    };
    let model = DiarizationModel::new(cfg, 7).unwrap();
    let init = model.params.clone();
    let first = TrainConfig {
        scope: TrainScope::Stage(0),
        ..tiny_train(3)
    };
    let (after_one, r1) = train(model, &first, &mut toy(), None).unwrap();
    assert!(r1.iter().all(|r| r.stages.len() == 1));
    for (name, t) in after_one.params.iter() {
        assert_eq!(name.starts_with("s2."), t == init.get(name).unwrap(), "{name}");
    }
    let (both, records) =
        train_sequential(after_one.clone(), &tiny_train(3), &mut toy(), None, true).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(records.last().unwrap().step, 6);
    let _ = both;
}

#[test]
fn speaker_losses_enter_the_log() {
    let cfg = ModelConfig {
        speaker_module: SpeakerModuleKind::Individual,
        ..ModelConfig::tiny()
    };
    let model = DiarizationModel::new(cfg, 8).unwrap();
    let (_, records) = train(model, &tiny_train(2), &mut toy(), None).unwrap();
    assert!(records[0].stages[0].individual_speaker.is_some());
    assert!(records[0].stages[0].joint_speaker.is_none());
}

#[test]
fn both_speaker_losses_are_rejected() {
    let model = DiarizationModel::new(ModelConfig::tiny(), 9).unwrap();
    let cfg = TrainConfig {
        loss: Some(LossWeights {
            joint_speaker: Some(1.0),
            individual_speaker: Some(1.0),
            ..LossWeights::default()
        }),
        ..tiny_train(1)
    };
    assert!(matches!(Trainer::new(model, cfg), Err(Error::Config(_))));
}

#[test]
fn materialized_order_is_seeded_and_covers_each_epoch() {
    let examples: Vec<Example> = (0..5).map(|i| toy().example(i).unwrap()).collect();
    let mut d = Dataset::new(examples.clone(), 3).unwrap();
    let epoch: Vec<String> = (0..5).map(|i| d.example(i).unwrap().id).collect();
    let mut sorted = epoch.clone();
    sorted.sort();
    assert_eq!(sorted, (0..5).map(|i| format!("toy{i}")).collect::<Vec<_>>());
    let mut again = Dataset::new(examples, 3).unwrap();
    assert_eq!(again.example(2).unwrap().id, epoch[2]);
}
