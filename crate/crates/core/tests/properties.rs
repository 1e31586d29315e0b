use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diarize_core::assignment::cost_of;
use diarize_core::evaluate::{der, postprocess, PostProcessConfig};
use diarize_core::features::log_mel;
use diarize_core::gradcore::{ops, Tensor};
use diarize_core::losses::{pit_cost_matrix, pit_diarization_loss};
use diarize_core::meetingsim::{
    compute_overlap_ratio, sample_meeting, synth_speaker_corpus, CorpusConfig, MeetingConfig,
    SpeakerCorpus,
};
use diarize_core::types::{AudioClip, DiarizationLabels, DiarizationProbs};
use diarize_core::verify;

fn labels(s: usize, t: usize, bits: &[bool]) -> DiarizationLabels {
    let rows: Vec<Vec<u8>> = bits.chunks(t).take(s).map(|r| r.iter().map(|&b| b as u8).collect()).collect();
    DiarizationLabels::from_rows(&rows).unwrap()
}

/// A label image as hard 0/1 probabilities.
fn hard(l: &DiarizationLabels) -> DiarizationProbs {
    let data = (0..l.slots()).flat_map(|s| l.row(s).iter().map(|&v| v as f64)).collect();
    DiarizationProbs::new(l.slots(), l.frames(), data).unwrap()
}

/// Probabilities and labels of matching shape, `S` in 2..=6.
fn pit_case() -> impl Strategy<Value = (DiarizationProbs, DiarizationLabels)> {
    (2usize..=6, 1usize..25).prop_flat_map(|(s, t)| {
        (
            prop::collection::vec(0.001f64..0.999, s * t),
            prop::collection::vec(any::<bool>(), s * t),
        )
            .prop_map(move |(p, y)| (DiarizationProbs::new(s, t, p).unwrap(), labels(s, t, &y)))
    })
}

fn with_order<T: std::fmt::Debug + Clone>(
    case: impl Strategy<Value = T>,
    slots: impl Fn(&T) -> usize + Clone + 'static,
) -> impl Strategy<Value = (T, Vec<usize>)> {
    case.prop_flat_map(move |c| {
        let s = slots(&c);
        (Just(c), Just((0..s).collect::<Vec<usize>>()).prop_shuffle())
    })
}

/// Reference and hypothesis images with up to six slots each.
fn der_case() -> impl Strategy<Value = (DiarizationLabels, DiarizationLabels)> {
    (1usize..=6, 1usize..=6, 1usize..40).prop_flat_map(|(sr, sh, t)| {
        (
            prop::collection::vec(any::<bool>(), sr * t),
            prop::collection::vec(any::<bool>(), sh * t),
        )
            .prop_map(move |(r, h)| (labels(sr, t, &r), labels(sh, t, &h)))
    })
}

fn corpus() -> &'static SpeakerCorpus {
    static CORPUS: OnceLock<SpeakerCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| synth_speaker_corpus(&CorpusConfig::default(), 11).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pit_loss_ignores_output_row_order(((p, y), order) in with_order(pit_case(), |c| c.1.slots())) {
        let a = pit_diarization_loss(&p, &y).unwrap();
        let b = pit_diarization_loss(&p.permuted(&order), &y).unwrap();
        prop_assert_eq!(a.loss, b.loss);
        // New slot i holds old slot order[i], so b's choice maps back through it.
        let back: Vec<usize> = b.permutation.iter().map(|&i| order[i]).collect();
        let costs = pit_cost_matrix(&p, &y).unwrap();
        prop_assert!((cost_of(&costs, &back) - a.loss).abs() <= 1e-12 * a.loss.max(1.0));
    }

    #[test]
    fn pit_equals_brute_force((p, y) in pit_case()) {
        let fast = pit_diarization_loss(&p, &y).unwrap();
        let (slow, _) = verify::brute_force_pit(&p, &y);
        prop_assert!((fast.loss - slow).abs() < 1e-10, "{} vs {}", fast.loss, slow);
        let mut seen = fast.permutation.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..y.slots()).collect::<Vec<_>>());
    }

    #[test]
    fn pit_loss_is_non_negative((p, y) in pit_case()) {
        prop_assert!(pit_diarization_loss(&p, &y).unwrap().loss >= 0.0);
    }

    #[test]
    fn pit_loss_vanishes_only_on_a_permuted_match(
        (s, t, bits, guess) in (2usize..=4, 1usize..8).prop_flat_map(|(s, t)| {
            (Just(s), Just(t), prop::collection::vec(any::<bool>(), s * t), prop::collection::vec(any::<bool>(), s * t))
        }),
        order in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        exact in any::<bool>(),
    ) {
        let y = labels(s, t, &bits);
        // Either a slot-permuted copy of the labels or an unrelated image.
        let x = if exact {
            let o: Vec<usize> = order.iter().copied().filter(|&i| i < s).collect();
            y.permuted(&o)
        } else {
            labels(s, t, &guess)
        };
        let p = hard(&x);
        let matches = verify::permutations(s).iter().any(|perm| (0..s).all(|r| x.row(perm[r]) == y.row(r)));
        let loss = pit_diarization_loss(&p, &y).unwrap().loss;
        // Every entry is clamped to 1e-7 from the label, or a whole unit away.
        let floor = (s * t) as f64 * -(1.0 - 1e-7f64).ln();
        if matches {
            prop_assert!(loss <= floor * (1.0 + 1e-9), "{loss} > {floor}");
        } else {
            prop_assert!(loss > 1.0, "{loss}");
        }
    }

    #[test]
    fn repairing_one_coordinate_never_raises_the_loss(
        (p, y) in pit_case(),
        pick in any::<prop::sample::Index>(),
        step in 0.0f64..=1.0,
    ) {
        let before = pit_diarization_loss(&p, &y).unwrap();
        let (s, t) = (y.slots(), y.frames());
        let k = pick.index(s * t);
        let (r, f) = (k / t, k % t);
        let slot = before.permutation[r];
        let mut data = p.data().to_vec();
        let target = y.get(r, f) as u8 as f64;
        let i = slot * t + f;
        data[i] += step * (target - data[i]);
        let repaired = DiarizationProbs::new(s, t, data).unwrap();
        let fixed = cost_of(&pit_cost_matrix(&repaired, &y).unwrap(), &before.permutation);
        prop_assert!(fixed <= before.loss, "{fixed} > {}", before.loss);
        let after = pit_diarization_loss(&repaired, &y).unwrap().loss;
        prop_assert!(after <= before.loss + 1e-12, "{after} > {}", before.loss);
    }

    #[test]
    fn der_ignores_a_shared_slot_permutation(
        ((r, h), order) in with_order(der_case(), |c| c.0.slots().max(c.1.slots()))
    ) {
        let s = order.len();
        let (r, h) = (r.padded(s, r.frames()), h.padded(s, h.frames()));
        let a = der(&r, &h, 0).unwrap();
        let b = der(&r.permuted(&order), &h.permuted(&order), 0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn der_matches_exhaustive_mapping((r, h) in der_case()) {
        let d = der(&r, &h, 0).unwrap();
        let (errors, speech) = verify::brute_force_der(&r, &h);
        prop_assert_eq!(d.errors(), errors as f64);
        prop_assert_eq!(d.total_speech_frames, speech);
    }

    #[test]
    fn der_components_sum_and_self_score_is_zero((r, h) in der_case()) {
        let d = der(&r, &h, 0).unwrap();
        prop_assert!(d.missed >= 0.0 && d.false_alarm >= 0.0 && d.confusion >= 0.0);
        if d.total_speech_frames > 0 {
            let total = d.der * d.total_speech_frames as f64;
            prop_assert!((d.missed + d.false_alarm + d.confusion - total).abs() <= 1e-9 * total.max(1.0));
            prop_assert_eq!(der(&r, &r, 0).unwrap().der, 0.0);
        }
    }

    #[test]
    fn plain_threshold_is_idempotent((p, _) in pit_case(), threshold in 0.05f64..0.95) {
        let pp = PostProcessConfig { threshold, median_len: 1, median_first: false };
        let once = postprocess(&p, &pp);
        let again = hard(&once);
        prop_assert_eq!(postprocess(&again, &pp), once);
    }

    #[test]
    fn attention_rows_are_convex_combinations(
        (t, q, k, v) in (1usize..20).prop_flat_map(|t| (
            Just(t),
            prop::collection::vec(-3.0f64..3.0, t * 4),
            prop::collection::vec(-3.0f64..3.0, t * 4),
            prop::collection::vec(-3.0f64..3.0, t * 3),
        ))
    ) {
        let q = Tensor::matrix(t, 4, q).unwrap();
        let k = Tensor::matrix(t, 4, k).unwrap();
        let v = Tensor::matrix(t, 3, v).unwrap();
        let (_, w) = ops::attention_full(&q, &k, &v).unwrap();
        for i in 0..t {
            let sum: f64 = w.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        let lin = ops::attention_linear(&q, &k, &v).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..t).map(|j| v.at(j, c)).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..t {
                prop_assert!(lin.at(i, c) >= lo - 1e-12 && lin.at(i, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(x in prop::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..8) {
        let rows = x.len() / cols;
        prop_assume!(rows > 0);
        let s = ops::softmax_rows(&Tensor::matrix(rows, cols, x[..rows * cols].to_vec()).unwrap());
        for r in 0..rows {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.row(r).iter().all(|&v| v > 0.0 || v == 0.0));
        }
    }

    #[test]
    fn doubling_audio_raises_every_log_mel_value(samples in prop::collection::vec(-0.5f64..0.5, 1600..4000)) {
        prop_assume!(samples.iter().any(|&s| s != 0.0));
        let quiet = AudioClip::new(samples.clone(), 16000).unwrap();
        let loud = AudioClip::new(samples.iter().map(|s| 2.0 * s).collect(), 16000).unwrap();
        let a = log_mel(&quiet, 32, 25.0, 10.0).unwrap();
        let b = log_mel(&loud, 32, 25.0, 10.0).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| y > x));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn simulated_meetings_respect_the_hard_constraints(
        seed in any::<u64>(),
        duration in 10.0f64..30.0,
        (lo, hi) in (1usize..=4).prop_flat_map(|lo| (Just(lo), lo..=4)),
        (olo, ohi) in (0.0f64..0.4).prop_flat_map(|a| (Just(a), a..0.4)),
    ) {
        let cfg = MeetingConfig { duration_s: duration, speakers: (lo, hi), overlap: (olo, ohi), ..MeetingConfig::default() };
        let spec = sample_meeting(corpus(), &cfg, "m", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(!verify::has_self_overlap(&spec));
        prop_assert!(!verify::has_triple_overlap(&spec));
        let ratio = verify::pairwise_overlap_ratio(&spec);
        prop_assert!((ratio - compute_overlap_ratio(&spec)).abs() < 1e-9);
        prop_assert!((ratio - spec.overlap_target).abs() <= 0.05 + 1e-9, "{ratio} vs {}", spec.overlap_target);
    }
}
