use std::f64::consts::LN_2;

use rand::Rng;

use super::*;
use crate::gradcore::{check_params, ParamSet};
use crate::rng::stream_rng;
use crate::verify::{brute_force_pit, permutations};

fn labels(rows: &[&[u8]]) -> DiarizationLabels {
    DiarizationLabels::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn clamped(y: &DiarizationLabels) -> DiarizationProbs {
    let mut data = Vec::new();
    for s in 0..y.slots() {
        data.extend(
            y.row(s)
                .iter()
                .map(|&v| if v == 1 { 1.0 - PROB_EPS } else { PROB_EPS }),
        );
    }
    DiarizationProbs::new(y.slots(), y.frames(), data).unwrap()
}

fn random_case(slots: usize, frames: usize, seed: u64) -> (DiarizationProbs, DiarizationLabels) {
    let mut rng = stream_rng(seed, 2);
    let rows: Vec<Vec<u8>> = (0..slots)
        .map(|_| (0..frames).map(|_| rng.gen_range(0..2)).collect())
        .collect();
    let p = (0..slots * frames)
        .map(|_| rng.gen_range(0.01..0.99))
        .collect();
    (
        DiarizationProbs::new(slots, frames, p).unwrap(),
        DiarizationLabels::from_rows(&rows).unwrap(),
    )
}

#[test]
fn bce_closed_forms() {
    assert!((bce(0.5, 1.0) - LN_2).abs() < 1e-15);
    assert!((bce(1.0 - 1e-7, 1.0) - 1e-7).abs() < 1e-13);
    assert!((bce(0.2, 0.0) + 0.8f64.ln()).abs() < 1e-15);
}

#[test]
fn perfect_prediction_is_identity() {
    let y = labels(&[&[1, 0, 1, 1], &[0, 0, 1, 0], &[0, 1, 0, 0]]);
    let r = pit_diarization_loss(&clamped(&y), &y).unwrap();
    assert_eq!(r.permutation, vec![0, 1, 2]);
    assert!((r.loss - 12.0 * 1e-7).abs() < 1e-12);
}

#[test]
fn swapped_rows_give_swap() {
    let y = labels(&[&[1, 1, 0, 0], &[0, 1, 1, 1]]);
    let p = clamped(&y);
    let swapped = p.permuted(&[1, 0]);
    let a = pit_diarization_loss(&p, &y).unwrap();
    let b = pit_diarization_loss(&swapped, &y).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(b.permutation, vec![1, 0]);
    assert_eq!(local_diarization_loss(&swapped, &y).unwrap(), b);
}

#[test]
fn assignment_matches_brute_force() {
    let (p, y) = random_case(4, 6, 17);
    let r = pit_diarization_loss(&p, &y).unwrap();
    let (loss, perm) = brute_force_pit(&p, &y);
    assert!((r.loss - loss).abs() < 1e-10);
    assert_eq!(r.permutation, perm);
}

#[test]
fn shape_mismatch_is_rejected() {
    let (p, _) = random_case(2, 5, 1);
    let (_, y) = random_case(2, 4, 1);
    assert!(matches!(pit_diarization_loss(&p, &y), Err(Error::Shape(_))));
}

#[test]
fn joint_loss_closed_forms_and_naive_loop() {
    let mut y = labels(&[&[1, 0, 1, 1], &[0, 1, 1, 0]]);
    y.slot_to_speaker.insert(0, 3);
    y.slot_to_speaker.insert(1, 1);
    let u = SpeakerLabelJoint::from_diarization(&y, 3).unwrap();
    assert!(u.get(2, 0) && u.get(0, 1) && !u.get(1, 2));

    let clamp = Tensor::from_rows(
        &(0..3)
            .map(|c| {
                (0..4)
                    .map(|t| if u.get(c, t) { 1.0 - PROB_EPS } else { PROB_EPS })
                    .collect()
            })
            .collect::<Vec<_>>(),
    )
    .unwrap();
    assert!((joint_speaker_loss(&clamp, &u).unwrap() - 12e-7).abs() < 1e-12);
    let half = Tensor::filled(&[3, 4], 0.5);
    assert!((joint_speaker_loss(&half, &u).unwrap() - 12.0 * LN_2).abs() < 1e-12);

    let mut rng = stream_rng(5, 0);
    let rand_p = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(0.01..0.99)).collect())
        .unwrap();
    let mut naive = 0.0;
    for c in 0..3 {
        for t in 0..4 {
            let (p, y) = (rand_p.at(c, t), u.get(c, t) as u8 as f64);
            naive -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    assert!((joint_speaker_loss(&rand_p, &u).unwrap() - naive).abs() < 1e-12);
}

#[test]
fn speaker_ids_outside_training_set_are_rejected() {
    let mut y = labels(&[&[1, 0]]);
    y.slot_to_speaker.insert(0, 5);
    assert!(SpeakerLabelJoint::from_diarization(&y, 4).is_err());
    assert!(SpeakerLabelIndividual::from_diarization(&y, 4).is_err());
}

fn one_hot_probs(z: &SpeakerLabelIndividual, classes: usize, eps: f64) -> Vec<Tensor> {
    (0..z.slots())
        .map(|s| {
            let rows: Vec<Vec<f64>> = z
                .row(s)
                .iter()
                .map(|&c| {
                    (0..classes)
                        .map(|k| {
                            if k == c {
                                1.0 - eps
                            } else {
                                eps / (classes - 1) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            Tensor::from_rows(&rows).unwrap()
        })
        .collect()
}

#[test]
fn individual_loss_closed_forms() {
    let z = SpeakerLabelIndividual::from_rows(&[vec![2, 2, 0, 2], vec![0, 1, 1, 0]]).unwrap();
    let eps = 1e-6;
    let near = individual_speaker_loss(&one_hot_probs(&z, 4, eps), &z, &[0, 1]).unwrap();
    assert!((near - 8.0 * eps).abs() < 1e-10);
    let uniform = vec![Tensor::filled(&[4, 4], 0.25); 2];
    let u = individual_speaker_loss(&uniform, &z, &[1, 0]).unwrap();
    assert!((u - 8.0 * 4f64.ln()).abs() < 1e-12);
    assert!(matches!(
        individual_speaker_loss(&uniform, &z, &[0, 0]),
        Err(Error::Usage(_))
    ));
}

#[test]
fn individual_label_from_slots() {
    let mut y = labels(&[&[1, 0, 1], &[0, 1, 1], &[0, 0, 0]]);
    y.slot_to_speaker.insert(0, 4);
    y.slot_to_speaker.insert(1, 2);
    let z = SpeakerLabelIndividual::from_diarization(&y, 5).unwrap();
    assert_eq!(z.row(0), &[4, 0, 4]);
    assert_eq!(z.row(1), &[0, 2, 2]);
    assert_eq!(z.row(2), &[0, 0, 0]);
}

/// The diarization-optimal permutation is kept even where the speaker loss
/// alone would prefer the other one.
#[test]
fn shared_permutation_follows_diarization() {
    let y = labels(&[&[1, 1, 0, 0], &[0, 0, 1, 1]]);
    let p = DiarizationProbs::new(
        2,
        4,
        vec![0.9, 0.8, 0.2, 0.1, 0.1, 0.3, 0.7, 0.9],
    )
    .unwrap();
    let z = SpeakerLabelIndividual::from_rows(&[vec![1, 1, 0, 0], vec![0, 0, 3, 3]]).unwrap();
    // Slot 0's classifier predicts speaker 3 and slot 1's speaker 1: the
    // speaker loss favors swapping, the diarization loss does not.
    let mk = |c: usize| {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|k| if k == c { 0.7 } else { 0.1 }).collect())
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    let z_hat = vec![mk(3), mk(1)];

    let pit = pit_diarization_loss(&p, &y).unwrap();
    let used = individual_speaker_loss(&z_hat, &z, &pit.permutation).unwrap();

    let mut joint = Vec::new();
    for perm in permutations(2) {
        let mut d = 0.0;
        for (s, &o) in perm.iter().enumerate() {
            for t in 0..4 {
                d += bce(p.get(o, t), y.get(s, t) as u8 as f64);
            }
        }
        let mut spk = 0.0;
        for (s, &o) in perm.iter().enumerate() {
            for t in 0..4 {
                spk -= z_hat[o].at(t, z.row(s)[t]).ln();
            }
        }
        joint.push((perm, d, spk));
    }
    let diar_best = joint
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let spk_best = joint
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap();
    assert_ne!(diar_best.0, spk_best.0);
    assert_eq!(pit.permutation, diar_best.0);
    assert!((used - diar_best.2).abs() < 1e-12);
    assert!(used > spk_best.2);
}

#[test]
fn total_loss_combinations() {
    let stage = StageLosses {
        diarization: 3.0,
        local: Some(2.0),
        joint_speaker: Some(5.0),
        individual_speaker: None,
    };
    let only = LossWeights::default();
    assert_eq!(total_loss(&[stage.clone()], &only).unwrap(), 3.0);
    let doubled = LossWeights {
        diarization: 2.0,
        local: Some(0.0),
        joint_speaker: Some(0.0),
        individual_speaker: None,
    };
    assert_eq!(total_loss(&[stage.clone()], &doubled).unwrap(), 6.0);
    let all = LossWeights {
        local: Some(1.0),
        joint_speaker: Some(1.0),
        ..LossWeights::default()
    };
    let second = StageLosses {
        diarization: 1.5,
        local: Some(0.25),
        joint_speaker: Some(4.0),
        individual_speaker: None,
    };
    let parts = (3.0 + 2.0 + 5.0) + (1.5 + 0.25 + 4.0);
    assert_eq!(total_loss(&[stage.clone(), second], &all).unwrap(), parts);
    let both = LossWeights {
        joint_speaker: Some(1.0),
        individual_speaker: Some(1.0),
        ..LossWeights::default()
    };
    assert!(matches!(total_loss(&[stage], &both), Err(Error::Config(_))));
}

#[test]
fn graph_losses_match_values_and_finite_differences() {
    let (p, y) = random_case(3, 5, 9);
    let mut params = ParamSet::new();
    params.insert("p", p.to_frame_major()).unwrap();
    let mut g = Graph::new();
    let bp = params.bind(&mut g);
    let (l, pit) = pit_diarization_loss_graph(&mut g, bp.var("p").unwrap(), &y).unwrap();
    assert!((g.value(l).item() - pit.loss).abs() < 1e-12);
    let report = check_params(
        &params,
        |g, bp| Ok(pit_diarization_loss_graph(g, bp.var("p")?, &y)?.0),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");

    let z = SpeakerLabelIndividual::from_rows(&[vec![1, 0, 2], vec![0, 3, 3]]).unwrap();
    let mut logits = ParamSet::new();
    let mut rng = stream_rng(3, 3);
    for s in 0..2 {
        logits
            .insert_uniform(format!("z{s}"), &[3, 4], 1, &mut rng)
            .unwrap();
    }
    let report = check_params(
        &logits,
        |g, bp| {
            let v = [bp.var("z0")?, bp.var("z1")?];
            individual_speaker_loss_graph(g, &v, &z, &[1, 0])
        },
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    let probs: Vec<Tensor> = logits
        .values()
        .iter()
        .map(crate::gradcore::ops::softmax_rows)
        .collect();
    let mut g = Graph::new();
    let bp = logits.bind_frozen(&mut g);
    let v = [bp.var("z0").unwrap(), bp.var("z1").unwrap()];
    let l = individual_speaker_loss_graph(&mut g, &v, &z, &[1, 0]).unwrap();
    let value = individual_speaker_loss(&probs, &z, &[1, 0]).unwrap();
    assert!((g.value(l).item() - value).abs() < 1e-12);
}
