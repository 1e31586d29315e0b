//! Simulated meetings with turn-taking constraints and frame-level labels.

pub mod corpus;
pub mod io;
pub mod render;
pub mod schedule;

pub use corpus::{synth_speaker_corpus, CorpusConfig, Speaker, SpeakerCorpus, Voice};
pub use io::{read_corpus, read_specs, write_corpus, write_specs};
pub use render::{frame_center, label_frames, meeting_labels, render_meeting};
pub use schedule::{
    compute_overlap_ratio, sample_meeting, MeetingConfig, MeetingSpec, ScheduledUtterance,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn corpus() -> SpeakerCorpus {
        let cfg = CorpusConfig {
            num_speakers: 4,
            utterances_per_speaker: 3,
            min_utterance_s: 1.0,
            max_utterance_s: 2.5,
            ..CorpusConfig::default()
        };
        synth_speaker_corpus(&cfg, 3).unwrap()
    }

    #[test]
    fn single_speaker_meeting_has_no_overlap() {
        let c = corpus();
        let cfg = MeetingConfig {
            speakers: (1, 1),
            overlap: (0.2, 0.4),
            ..MeetingConfig::default()
        };
        for i in 0..10 {
            let spec = sample_meeting(&c, &cfg, "m", &mut stream_rng(1, i)).unwrap();
            assert_eq!(compute_overlap_ratio(&spec), 0.0);
        }
    }

    #[test]
    fn empty_schedule_renders_silence() {
        let c = corpus();
        let spec = MeetingSpec {
            meeting_id: "e".into(),
            duration_s: 3.0,
            participants: vec![],
            schedule: vec![],
            overlap_target: 0.0,
        };
        let (audio, labels) = render_meeting(&spec, &c, 4).unwrap();
        assert!(audio.samples.iter().all(|&s| s == 0.0));
        assert_eq!(labels.speech_frames(), 0);
        assert_eq!(labels.frames(), 30);
    }

    #[test]
    fn one_utterance_frames() {
        let spec = MeetingSpec {
            meeting_id: "u".into(),
            duration_s: 5.0,
            participants: vec![2],
            schedule: vec![ScheduledUtterance {
                speaker: 2,
                utterance: 0,
                onset_s: 1.0,
                duration_s: 1.0,
                gain_db: 0.0,
            }],
            overlap_target: 0.0,
        };
        let labels = meeting_labels(&spec, 4).unwrap();
        let active: Vec<usize> = (0..50).filter(|&t| labels.get(0, t)).collect();
        assert_eq!(active, (10..20).collect::<Vec<_>>());
        assert_eq!(labels.slot_to_speaker.get(&0), Some(&2));
    }

    #[test]
    fn schedule_past_end_is_error() {
        let c = corpus();
        let spec = MeetingSpec {
            meeting_id: "x".into(),
            duration_s: 1.5,
            participants: vec![1],
            schedule: vec![ScheduledUtterance {
                speaker: 1,
                utterance: 0,
                onset_s: 1.0,
                duration_s: 1.0,
                gain_db: 0.0,
            }],
            overlap_target: 0.0,
        };
        assert!(matches!(
            render_meeting(&spec, &c, 4),
            Err(crate::Error::Simulation { .. })
        ));
    }

    #[test]
    fn spec_file_round_trip() {
        let c = corpus();
        let specs: Vec<MeetingSpec> = (0..3)
            .map(|i| {
                sample_meeting(&c, &MeetingConfig::default(), &format!("m{i}"), &mut stream_rng(2, i))
                    .unwrap()
            })
            .collect();
        let text = io::specs_to_string(&specs).unwrap();
        assert_eq!(io::specs_from_str(&text).unwrap(), specs);
        let bad = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(io::specs_from_str(&bad).is_err());
    }

    #[test]
    fn corpus_directory_round_trip() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.ids(), c.ids());
        assert_eq!(back.speakers[1].voice, c.speakers[1].voice);
        let (a, b) = (&c.speakers[0].utterances[0], &back.speakers[0].utterances[0]);
        assert_eq!(a.samples.len(), b.samples.len());
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| (x - y).abs() < 1e-4));
    }
}
