//! Training examples: pre-materialized sets and on-the-fly generation.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::{extract, FeatureConfig, FeatureStats};
use crate::gradcore::Tensor;
use crate::meetingsim::{render_meeting, sample_meeting, MeetingConfig, MeetingSpec, SpeakerCorpus};
use crate::rng::stream_rng;
use crate::types::DiarizationLabels;

/// Random stream reserved for meeting generation.
const MEETING_STREAM: u64 = 0x6d656574;
const SHUFFLE_STREAM: u64 = 0x73687566;

/// Raw (unnormalized) features with aligned frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Tensor,
    pub labels: DiarizationLabels,
}

/// Feature and label frame counts may differ by one through rounding; both
/// are cut to the shorter.
fn align(id: String, features: Tensor, labels: DiarizationLabels) -> Result<Example> {
    let (tf, tl) = (features.rows(), labels.frames());
    if tf.abs_diff(tl) > 1 {
        return Err(Error::shape(format!(
            "{id}: {tf} feature frames vs {tl} label frames"
        )));
    }
    let t = tf.min(tl);
    let features = if tf > t {
        Tensor::matrix(t, features.cols(), features.data()[..t * features.cols()].to_vec())?
    } else {
        features
    };
    let labels = if tl > t {
        let mut cut = DiarizationLabels::zeros(labels.slots(), t);
        for s in 0..labels.slots() {
            cut.row_mut(s).copy_from_slice(&labels.row(s)[..t]);
        }
        cut.slot_to_speaker = labels.slot_to_speaker.clone();
        cut
    } else {
        labels
    };
    Ok(Example {
        id,
        features,
        labels,
    })
}

/// Renders and featurizes one meeting spec.
pub fn example_from_spec(
    spec: &MeetingSpec,
    corpus: &SpeakerCorpus,
    max_speakers: usize,
    features: &FeatureConfig,
) -> Result<Example> {
    let (audio, labels) = render_meeting(spec, corpus, max_speakers)?;
    let feats = extract(&audio, features)?;
    align(spec.meeting_id.clone(), feats.frames, labels)
}

/// Meeting `index` of the stream keyed by `seed`.
pub fn generate_spec(
    corpus: &SpeakerCorpus,
    meeting: &MeetingConfig,
    seed: u64,
    index: u64,
) -> Result<MeetingSpec> {
    let mut rng = stream_rng(seed ^ MEETING_STREAM, index);
    sample_meeting(corpus, meeting, &format!("m{index:06}"), &mut rng)
}

/// Source of training examples addressed by a global example index, so a
/// run resumed at any step sees exactly the examples it would have seen.
pub trait DataSource {
    fn example(&mut self, index: u64) -> Result<Example>;

    /// Examples used to estimate input normalization.
    fn stats_sample(&mut self) -> Result<Vec<Example>>;
}

/// A fixed set of examples visited in a fresh seeded order every epoch.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub examples: Vec<Example>,
    seed: u64,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("dataset has no examples".into()));
        }
        Ok(Self {
            examples,
            seed,
            epoch_order: None,
        })
    }

    /// Generates `n` meetings from the seeded stream and featurizes them.
    pub fn materialize(
        corpus: &SpeakerCorpus,
        meeting: &MeetingConfig,
        features: &FeatureConfig,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let examples = (0..n as u64)
            .map(|i| {
                let spec = generate_spec(corpus, meeting, seed, i)?;
                example_from_spec(&spec, corpus, meeting.max_speakers, features)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(examples, seed)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn order(&mut self, epoch: u64) -> &[usize] {
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.examples.len()).collect();
            order.shuffle(&mut stream_rng(self.seed ^ SHUFFLE_STREAM, epoch));
            self.epoch_order = Some((epoch, order));
        }
        &self.epoch_order.as_ref().expect("order set").1
    }
}

impl DataSource for Dataset {
    fn example(&mut self, index: u64) -> Result<Example> {
        let n = self.examples.len() as u64;
        let pos = self.order(index / n)[(index % n) as usize];
        Ok(self.examples[pos].clone())
    }

    fn stats_sample(&mut self) -> Result<Vec<Example>> {
        Ok(self.examples.clone())
    }
}

/// On-the-fly mixing: example `i` is meeting `i` of the seeded stream, so no
/// spec repeats within a run.
pub struct DynamicSource<'a> {
    pub corpus: &'a SpeakerCorpus,
    pub meeting: MeetingConfig,
    pub features: FeatureConfig,
    pub seed: u64,
    pub stats_examples: usize,
}

impl DynamicSource<'_> {
    /// Normalization statistics come from a stream disjoint from training.
    const STATS_OFFSET: u64 = 1 << 40;
}

impl DataSource for DynamicSource<'_> {
    fn example(&mut self, index: u64) -> Result<Example> {
        let spec = generate_spec(self.corpus, &self.meeting, self.seed, index)?;
        example_from_spec(&spec, self.corpus, self.meeting.max_speakers, &self.features)
    }

    fn stats_sample(&mut self) -> Result<Vec<Example>> {
        (0..self.stats_examples as u64)
            .map(|i| self.example(Self::STATS_OFFSET + i))
            .collect()
    }
}

pub fn estimate_stats(examples: &[Example]) -> Result<FeatureStats> {
    FeatureStats::estimate(examples.iter().map(|e| &e.features))
}
