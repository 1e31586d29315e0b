use rand::Rng;

use super::*;
use crate::gradcore::{check_params, ops};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 1);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn permute_rows(x: &Tensor, order: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = order.iter().map(|&r| x.row(r).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn stage_values(model: &DiarizationModel, x: &Tensor) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let bp = model.params.bind_frozen(&mut g);
    let xv = model.input(&mut g, x).unwrap();
    let out = forward(&mut g, &bp, &model.config, xv).unwrap();
    let s = out.last();
    (g.value(s.probs).clone(), g.value(s.local_embeddings).clone())
}

#[test]
fn output_shapes_and_range_for_every_variant() {
    for kind in [
        SpeakerModuleKind::None,
        SpeakerModuleKind::Local,
        SpeakerModuleKind::Joint,
        SpeakerModuleKind::Individual,
    ] {
        for stages in [1, 2] {
            let cfg = ModelConfig {
                speaker_module: kind,
                stages,
                ..ModelConfig::tiny()
            };
            let model = DiarizationModel::new(cfg, 3).unwrap();
            let x = random_matrix(12, 6, 4);
            let all = model.predict_stages(&x).unwrap();
            assert_eq!(all.len(), stages);
            for p in &all {
                assert_eq!((p.slots(), p.frames()), (2, 12));
                assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }
}

#[test]
fn rejects_wrong_feature_width() {
    let model = DiarizationModel::new(ModelConfig::tiny(), 0).unwrap();
    assert!(matches!(
        model.predict(&random_matrix(5, 7, 0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn sa_stack_is_permutation_equivariant() {
    for attention in [AttentionKind::Full, AttentionKind::Linear] {
        let cfg = ModelConfig {
            repeats: 0,
            local_head: false,
            sa_layers: 2,
            attention,
            ..ModelConfig::tiny()
        };
        let model = DiarizationModel::new(cfg, 11).unwrap();
        let x = random_matrix(15, 6, 12);
        let order: Vec<usize> = (0..15).map(|i| (i * 7 + 3) % 15).collect();
        let (y, _) = stage_values(&model, &x);
        let (yp, _) = stage_values(&model, &permute_rows(&x, &order));
        assert!(yp.max_abs_diff(&permute_rows(&y, &order)) < 1e-9);
    }
}

#[test]
fn tdcn_receptive_field_by_impulse() {
    let cfg = ModelConfig {
        dilation_layers: 4,
        repeats: 2,
        sa_layers: 0,
        local_head: false,
        ..ModelConfig::tiny()
    };
    let model = DiarizationModel::new(cfg.clone(), 5).unwrap();
    let x = random_matrix(101, 6, 6);
    let mut bumped = x.clone();
    for c in 0..6 {
        bumped.data_mut()[50 * 6 + c] += 0.5;
    }
    let (_, e) = stage_values(&model, &x);
    let (_, eb) = stage_values(&model, &bumped);
    let changed: Vec<usize> = (0..101)
        .filter(|&t| {
            e.row(t)
                .iter()
                .zip(eb.row(t))
                .any(|(a, b)| (a - b).abs() > 1e-12)
        })
        .collect();
    assert_eq!(changed.len(), cfg.receptive_field());
    assert_eq!(changed.first(), Some(&20));
    assert_eq!(changed.last(), Some(&80));
}

#[test]
fn tdcn_is_shift_equivariant_in_the_interior() {
    let cfg = ModelConfig {
        sa_layers: 0,
        local_head: false,
        ..ModelConfig::tiny()
    };
    let model = DiarizationModel::new(cfg.clone(), 8).unwrap();
    let rf = cfg.receptive_field() / 2;
    let x = random_matrix(40, 6, 9);
    let shift = 3;
    let shifted = permute_rows(&x, &(0..40).map(|t| (t + shift) % 40).collect::<Vec<_>>());
    let (_, e) = stage_values(&model, &x);
    let (_, es) = stage_values(&model, &shifted);
    for t in rf..40 - rf - shift {
        for (a, b) in es.row(t).iter().zip(e.row(t + shift)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_output_projections_reduce_block_to_normalization() {
    let cfg = ModelConfig::tiny();
    let mut params = ParamSet::new();
    let mut rng = stream_rng(2, 0);
    blocks::init_sa_block(&mut params, "b", &cfg, &mut rng).unwrap();
    for name in ["b.o.w", "b.o.b", "b.ff2.w", "b.ff2.b"] {
        let t = params.get_mut(name).unwrap();
        *t = Tensor::zeros(t.shape());
    }
    let x = random_matrix(7, 8, 3);
    let mut g = Graph::new();
    let bp = params.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let y = sa_block(&mut g, &bp, "b", &cfg, xv).unwrap();
    let ones = Tensor::filled(&[8], 1.0);
    let zeros = Tensor::zeros(&[8]);
    let once = ops::layer_norm(&x, &ones, &zeros, LAYER_NORM_EPS).unwrap();
    let twice = ops::layer_norm(&once, &ones, &zeros, LAYER_NORM_EPS).unwrap();
    assert!(g.value(y).max_abs_diff(&twice) < 1e-12);
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    for (kind, stages) in [
        (SpeakerModuleKind::None, 1),
        (SpeakerModuleKind::Individual, 1),
        (SpeakerModuleKind::Joint, 2),
    ] {
        let cfg = ModelConfig {
            speaker_module: kind,
            stages,
            ..ModelConfig::tiny()
        };
        let model = DiarizationModel::new(cfg, 21).unwrap();
        let x = model.stats.apply(&random_matrix(12, 6, 22)).unwrap();
        let target = random_matrix(12, 2, 23).map(|v| (v > 0.0) as u8 as f64);
        let report = check_params(
            &model.params,
            |g, bp| {
                let xv = g.constant(x.clone());
                let out = forward(g, bp, &model.config, xv)?;
                let mut total = g.bce_sum(out.last().probs, &target)?;
                for s in &out.stages {
                    if let Some(lp) = s.local_probs {
                        let l = g.bce_sum(lp, &target)?;
                        total = g.add(total, l)?;
                    }
                    if let Some(SpeakerOutput::Individual(logits)) = &s.speaker {
                        for &lg in logits {
                            let l = g.softmax_xent(lg, &[1; 12])?;
                            total = g.add(total, l)?;
                        }
                    }
                }
                Ok(total)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{kind:?}: {report:?}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut model = DiarizationModel::new(ModelConfig::tiny(), 31).unwrap();
    model.stats = FeatureStats {
        mean: vec![0.1; 6],
        std: vec![2.0; 6],
    };
    model.save(&path).unwrap();
    let back = DiarizationModel::load(&path).unwrap();
    assert_eq!(back, model);
    let x = random_matrix(9, 6, 1);
    assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
}

#[test]
fn same_seed_same_parameters() {
    let a = init_params(&ModelConfig::tiny(), 4).unwrap();
    let b = init_params(&ModelConfig::tiny(), 4).unwrap();
    let c = init_params(&ModelConfig::tiny(), 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
