//! Synthetic multimodal emotion-recognition task.
//!
//! Every sample is a pair of symbolic cue channels (visual and audio). A cue
//! token `c` encodes the label `c % K`. Within a split one channel is
//! dominant: the ground truth always follows it, while on conflict samples the
//! other channel encodes a different label. The out-of-distribution split
//! raises the noise rate, swaps the dominant channel and reverses the class
//! marginals. Cue vocabularies may hold several tokens per label; each split
//! draws from one variant per channel, so a split can optionally be given an
//! inventory never seen in training.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcript::OutputVocab;

/// Label names in taxonomy order. The first six form the default taxonomy.
pub const LABEL_NAMES: [&str; 16] = [
    "happy",
    "sad",
    "angry",
    "neutral",
    "fear",
    "surprise",
    "disgust",
    "contempt",
    "anxiety",
    "helplessness",
    "disappointment",
    "calm",
    "excited",
    "bored",
    "confused",
    "tired",
];

pub const MIN_CLASSES: usize = 4;
pub const MAX_CLASSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmotionLabel {
    pub id: usize,
    pub name: String,
}

/// Ordered label set; `labels[i].id == i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    labels: Vec<EmotionLabel>,
}

impl Taxonomy {
    /// The first `k` entries of [`LABEL_NAMES`].
    pub fn standard(k: usize) -> Result<Self> {
        if !(MIN_CLASSES..=MAX_CLASSES).contains(&k) {
            return Err(Error::config(
                "num_classes",
                format!("must lie in [{MIN_CLASSES}, {MAX_CLASSES}], got {k}"),
            ));
        }
        Ok(Self {
            labels: LABEL_NAMES[..k]
                .iter()
                .enumerate()
                .map(|(id, name)| EmotionLabel {
                    id,
                    name: (*name).to_string(),
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }

    pub fn get(&self, id: usize) -> Option<&EmotionLabel> {
        self.labels.get(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&EmotionLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    IdTrain,
    IdTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::IdTrain, Split::IdTest, Split::OodTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::IdTrain => "id_train",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::IdTrain => 1,
            Split::IdTest => 2,
            Split::OodTest => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Visual => Modality::Audio,
            Modality::Audio => Modality::Visual,
        }
    }
}

/// Per-split generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub count: usize,
    pub noise: f64,
    pub dominant: Modality,
    pub class_marginals: Vec<f64>,
    /// Index of the cue variant used on the visual channel. With `m` cue
    /// tokens per label, variant `v` uses token `label + v * K`.
    #[serde(default)]
    pub visual_variant: usize,
    #[serde(default)]
    pub audio_variant: usize,
}

/// Missing fields in a serialized config take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    pub num_classes: usize,
    pub visual_vocab: usize,
    pub audio_vocab: usize,
    pub visual_len: usize,
    pub audio_len: usize,
    pub conflict_rate: f64,
    pub id_train: SplitConfig,
    pub id_test: SplitConfig,
    pub ood_test: SplitConfig,
    pub reasoning_demos: usize,
    pub answer_only_demos: usize,
    pub seed: u64,
}

/// In-distribution marginals: linearly decreasing weights `K, K-1, ..., 1`.
fn id_marginals(k: usize) -> Vec<f64> {
    let total = (k * (k + 1) / 2) as f64;
    (0..k).map(|i| (k - i) as f64 / total).collect()
}

/// Out-of-distribution marginals: the in-distribution weights reversed.
fn ood_marginals(k: usize) -> Vec<f64> {
    let mut m = id_marginals(k);
    m.reverse();
    m
}

impl GenerativeConfig {
    /// Defaults for a taxonomy of `k` classes.
    pub fn with_classes(k: usize) -> Self {
        let id = |count| SplitConfig {
            count,
            noise: 0.1,
            dominant: Modality::Visual,
            class_marginals: id_marginals(k),
            visual_variant: 0,
            audio_variant: 0,
        };
        Self {
            num_classes: k,
            visual_vocab: k,
            audio_vocab: k,
            visual_len: 8,
            audio_len: 8,
            conflict_rate: 0.2,
            id_train: id(2000),
            id_test: id(500),
            ood_test: SplitConfig {
                count: 500,
                noise: 0.25,
                dominant: Modality::Audio,
                class_marginals: ood_marginals(k),
                visual_variant: 0,
                audio_variant: 0,
            },
            reasoning_demos: 64,
            answer_only_demos: 2000,
            seed: 7,
        }
    }

    pub fn split(&self, split: Split) -> &SplitConfig {
        match split {
            Split::IdTrain => &self.id_train,
            Split::IdTest => &self.id_test,
            Split::OodTest => &self.ood_test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut SplitConfig {
        match split {
            Split::IdTrain => &mut self.id_train,
            Split::IdTest => &mut self.id_test,
            Split::OodTest => &mut self.ood_test,
        }
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        Taxonomy::standard(self.num_classes)
    }

    pub fn vocab(&self) -> Result<OutputVocab> {
        Ok(OutputVocab::new(
            self.visual_vocab,
            self.audio_vocab,
            self.taxonomy()?.names(),
        ))
    }

    fn vocab_size(&self, modality: Modality) -> usize {
        match modality {
            Modality::Visual => self.visual_vocab,
            Modality::Audio => self.audio_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes;
        Taxonomy::standard(k)?;
        for (field, size) in [
            ("visual_vocab", self.visual_vocab),
            ("audio_vocab", self.audio_vocab),
        ] {
            if size < k || size % k != 0 {
                return Err(Error::config(
                    field,
                    format!("must be a positive multiple of num_classes ({k}), got {size}"),
                ));
            }
        }
        if self.visual_len == 0 {
            return Err(Error::config("visual_len", "must be > 0"));
        }
        if self.audio_len == 0 {
            return Err(Error::config("audio_len", "must be > 0"));
        }
        check_probability("conflict_rate", self.conflict_rate)?;
        for split in Split::ALL {
            let cfg = self.split(split);
            let name = split.as_str();
            if cfg.count == 0 {
                return Err(Error::config(format!("{name}.count"), "must be > 0"));
            }
            check_probability(&format!("{name}.noise"), cfg.noise)?;
            if cfg.class_marginals.len() != k {
                return Err(Error::config(
                    format!("{name}.class_marginals"),
                    format!("expected {k} entries, got {}", cfg.class_marginals.len()),
                ));
            }
            if cfg.class_marginals.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::config(
                    format!("{name}.class_marginals"),
                    "entries must be finite and non-negative",
                ));
            }
            let sum: f64 = cfg.class_marginals.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::config(
                    format!("{name}.class_marginals"),
                    format!("must sum to 1, got {sum}"),
                ));
            }
            for (field, variant, modality) in [
                ("visual_variant", cfg.visual_variant, Modality::Visual),
                ("audio_variant", cfg.audio_variant, Modality::Audio),
            ] {
                let variants = self.vocab_size(modality) / k;
                if variant >= variants {
                    return Err(Error::config(
                        format!("{name}.{field}"),
                        format!("must be < {variants} (cue tokens per label)"),
                    ));
                }
            }
        }
        if self.reasoning_demos > self.id_train.count {
            return Err(Error::config(
                "reasoning_demos",
                "cannot exceed id_train.count",
            ));
        }
        if self.answer_only_demos > self.id_train.count {
            return Err(Error::config(
                "answer_only_demos",
                "cannot exceed id_train.count",
            ));
        }
        Ok(())
    }
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self::with_classes(6)
    }
}

fn check_probability(field: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(field, format!("must lie in [0, 1), got {p}")));
    }
    Ok(())
}

/// One synthetic "video".
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub visual: Vec<usize>,
    pub audio: Vec<usize>,
    pub label: EmotionLabel,
    pub split: Split,
    /// The non-dominant channel encodes a different label.
    pub conflict: bool,
}

impl Sample {
    pub fn channel(&self, modality: Modality) -> &[usize] {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Audio => &self.audio,
        }
    }
}

/// On-disk form of a [`Sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub visual: Vec<usize>,
    pub audio: Vec<usize>,
    pub label: String,
    pub split: Split,
    #[serde(default)]
    pub conflict: bool,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            visual: s.visual.clone(),
            audio: s.audio.clone(),
            label: s.label.name.clone(),
            split: s.split,
            conflict: s.conflict,
        }
    }
}

impl SampleRecord {
    pub fn into_sample(self, config: &GenerativeConfig, taxonomy: &Taxonomy) -> Result<Sample> {
        let label = taxonomy
            .by_name(&self.label)
            .ok_or_else(|| {
                Error::Data(format!("sample {}: unknown label `{}`", self.id, self.label))
            })?
            .clone();
        if self.visual.is_empty() || self.audio.is_empty() {
            return Err(Error::Data(format!("sample {}: empty cue channel", self.id)));
        }
        if let Some(c) = self.visual.iter().find(|&&c| c >= config.visual_vocab) {
            return Err(Error::Data(format!("sample {}: visual cue {c} out of range", self.id)));
        }
        if let Some(c) = self.audio.iter().find(|&&c| c >= config.audio_vocab) {
            return Err(Error::Data(format!("sample {}: audio cue {c} out of range", self.id)));
        }
        Ok(Sample {
            id: self.id,
            visual: self.visual,
            audio: self.audio,
            label,
            split: self.split,
            conflict: self.conflict,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id_train: Vec<Sample>,
    pub id_test: Vec<Sample>,
    pub ood_test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::IdTrain => &self.id_train,
            Split::IdTest => &self.id_test,
            Split::OodTest => &self.ood_test,
        }
    }
}

/// Label encoded by cue token `cue`.
pub fn cue_label(cue: usize, num_classes: usize) -> usize {
    cue % num_classes
}

struct ChannelSpec {
    vocab: usize,
    len: usize,
    variant: usize,
}

impl ChannelSpec {
    /// The split's cue inventory: one variant per label.
    fn inventory(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..k).map(move |label| label + self.variant * k)
    }

    fn draw(&self, label: usize, noise: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..self.len)
            .map(|_| {
                if rng.gen::<f64>() < noise {
                    let pick = rng.gen_range(0..k);
                    self.inventory(k).nth(pick).expect("pick < k")
                } else {
                    label + self.variant * k
                }
            })
            .collect()
    }
}

/// Draws the three splits. Deterministic in `config.seed`.
pub fn generate_dataset(config: &GenerativeConfig) -> Result<Dataset> {
    config.validate()?;
    let taxonomy = config.taxonomy()?;
    let mut out = Vec::with_capacity(3);
    for split in Split::ALL {
        out.push(generate_split(config, &taxonomy, split)?);
    }
    let ood_test = out.pop().expect("three splits");
    let id_test = out.pop().expect("three splits");
    let id_train = out.pop().expect("three splits");
    Ok(Dataset {
        id_train,
        id_test,
        ood_test,
    })
}

fn generate_split(config: &GenerativeConfig, taxonomy: &Taxonomy, split: Split) -> Result<Vec<Sample>> {
    let cfg = config.split(split);
    let k = config.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(split.stream());

    let n = cfg.count;
    let n_conflict = (config.conflict_rate * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut conflict = vec![false; n];
    for &i in &order[..n_conflict] {
        conflict[i] = true;
    }

    let marginals = WeightedIndex::new(&cfg.class_marginals)
        .map_err(|e| Error::config(format!("{split}.class_marginals"), e.to_string()))?;
    let visual = ChannelSpec {
        vocab: config.visual_vocab,
        len: config.visual_len,
        variant: cfg.visual_variant,
    };
    let audio = ChannelSpec {
        vocab: config.audio_vocab,
        len: config.audio_len,
        variant: cfg.audio_variant,
    };
    debug_assert!(visual.vocab >= k && audio.vocab >= k);

    let mut samples = Vec::with_capacity(n);
    for (i, &is_conflict) in conflict.iter().enumerate() {
        let label = marginals.sample(&mut rng);
        let other = if is_conflict {
            // uniform over the K-1 other labels
            let shift = rng.gen_range(1..k);
            (label + shift) % k
        } else {
            label
        };
        let (visual_label, audio_label) = match cfg.dominant {
            Modality::Visual => (label, other),
            Modality::Audio => (other, label),
        };
        let visual_tokens = visual.draw(visual_label, cfg.noise, k, &mut rng);
        let audio_tokens = audio.draw(audio_label, cfg.noise, k, &mut rng);
        samples.push(Sample {
            id: format!("{split}-{i:05}"),
            visual: visual_tokens,
            audio: audio_tokens,
            label: taxonomy.get(label).expect("label < k").clone(),
            split,
            conflict: is_conflict,
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoStyle {
    Reasoning,
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub sample_id: String,
    pub tokens: Vec<usize>,
    pub style: DemoStyle,
}

/// Rule-generated demonstration transcripts for `count` samples chosen by a
/// seeded shuffle.
///
/// Reasoning transcripts mention every distinct informative cue of the
/// dominant channel (ascending token order) inside the think block;
/// answer-only transcripts leave the think block empty.
pub fn generate_demonstrations(
    samples: &[Sample],
    config: &GenerativeConfig,
    style: DemoStyle,
    count: usize,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    if count > samples.len() {
        return Err(Error::Argument(format!(
            "requested {count} demonstrations from {} samples",
            samples.len()
        )));
    }
    let vocab = config.vocab()?;
    let k = config.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match style {
        DemoStyle::Reasoning => 11,
        DemoStyle::AnswerOnly => 12,
    });
    let mut picked: Vec<usize> = (0..samples.len()).collect();
    picked.shuffle(&mut rng);
    picked.truncate(count);
    picked.sort_unstable();

    Ok(picked
        .into_iter()
        .map(|i| {
            let sample = &samples[i];
            let mut tokens = vec![OutputVocab::THINK_OPEN];
            if style == DemoStyle::Reasoning {
                let dominant = config.split(sample.split).dominant;
                let mut cues: Vec<usize> = sample
                    .channel(dominant)
                    .iter()
                    .copied()
                    .filter(|&c| cue_label(c, k) == sample.label.id)
                    .collect::<HashSet<_>>()
                    .into_iter()
                    .collect();
                cues.sort_unstable();
                tokens.extend(cues.into_iter().map(|c| vocab.cue_mention(dominant, c)));
            }
            tokens.extend([
                OutputVocab::THINK_CLOSE,
                OutputVocab::ANSWER_OPEN,
                vocab.label_token(sample.label.id),
                OutputVocab::ANSWER_CLOSE,
                OutputVocab::EOS,
            ]);
            Demonstration {
                sample_id: sample.id.clone(),
                tokens,
                style,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(k: usize, noise: f64, conflict: f64, n: usize) -> GenerativeConfig {
        let mut cfg = GenerativeConfig::with_classes(k.max(MIN_CLASSES));
        cfg.conflict_rate = conflict;
        for split in Split::ALL {
            let s = cfg.split_mut(split);
            s.count = n;
            s.noise = noise;
        }
        cfg.reasoning_demos = n.min(4);
        cfg.answer_only_demos = n.min(4);
        cfg
    }

    #[test]
    fn zero_noise_every_cue_encodes_label() {
        let cfg = small(4, 0.0, 0.0, 4);
        let data = generate_dataset(&cfg).unwrap();
        for split in Split::ALL {
            for s in data.split(split) {
                assert!(s.visual.iter().all(|&c| cue_label(c, 4) == s.label.id));
                assert!(s.audio.iter().all(|&c| cue_label(c, 4) == s.label.id));
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = GenerativeConfig::default();
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn conflict_count_is_exact() {
        let cfg = GenerativeConfig::default();
        let data = generate_dataset(&cfg).unwrap();
        let n = data.id_train.iter().filter(|s| s.conflict).count();
        assert_eq!(n, (0.2f64 * 2000.0).round() as usize);
        assert_eq!(n, 400);
        assert_eq!(data.ood_test.iter().filter(|s| s.conflict).count(), 100);
    }

    #[test]
    fn zero_noise_majority_vote_recovers_label() {
        let mut cfg = small(6, 0.0, 0.2, 200);
        cfg.ood_test.noise = 0.0;
        let data = generate_dataset(&cfg).unwrap();
        for split in Split::ALL {
            let dominant = cfg.split(split).dominant;
            for s in data.split(split) {
                let mut votes = [0usize; 6];
                for &c in s.channel(dominant) {
                    votes[cue_label(c, 6)] += 1;
                }
                let best = (0..6).max_by_key(|&l| (votes[l], std::cmp::Reverse(l))).unwrap();
                assert_eq!(best, s.label.id, "{}", s.id);
            }
        }
    }

    #[test]
    fn conflict_channel_encodes_other_label() {
        let cfg = small(6, 0.0, 0.5, 100);
        let data = generate_dataset(&cfg).unwrap();
        for s in data.id_train.iter().filter(|s| s.conflict) {
            assert!(s.audio.iter().all(|&c| cue_label(c, 6) != s.label.id));
        }
        for s in data.ood_test.iter().filter(|s| s.conflict) {
            assert!(s.visual.iter().all(|&c| cue_label(c, 6) != s.label.id));
            assert!(s.audio.iter().all(|&c| cue_label(c, 6) == s.label.id));
        }
    }

    #[test]
    fn ids_unique_across_splits() {
        let data = generate_dataset(&GenerativeConfig::default()).unwrap();
        let mut seen = HashSet::new();
        for split in Split::ALL {
            for s in data.split(split) {
                assert!(seen.insert(s.id.clone()));
                assert!(!s.visual.is_empty() && !s.audio.is_empty());
            }
        }
    }

    #[test]
    fn cues_stay_in_split_inventory() {
        let mut cfg = GenerativeConfig {
            visual_vocab: 12,
            ..GenerativeConfig::default()
        };
        cfg.ood_test.visual_variant = 1;
        let data = generate_dataset(&cfg).unwrap();
        for s in &data.id_train {
            assert!(s.visual.iter().all(|&c| c < 6));
        }
        for s in &data.ood_test {
            assert!(s.visual.iter().all(|&c| (6..12).contains(&c)));
            assert!(s.audio.iter().all(|&c| c < 6));
        }
    }

    #[test]
    fn bad_config_names_field() {
        let mut cfg = GenerativeConfig::default();
        cfg.ood_test.noise = 1.0;
        match generate_dataset(&cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "ood_test.noise"),
            other => panic!("unexpected {other:?}"),
        }
        let mut cfg = GenerativeConfig::default();
        cfg.id_test.class_marginals[0] += 0.01;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "id_test.class_marginals"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = GenerativeConfig {
            num_classes: 3,
            ..GenerativeConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "num_classes"));
    }

    #[test]
    fn demonstrations_have_expected_shape() {
        let cfg = GenerativeConfig::default();
        let data = generate_dataset(&cfg).unwrap();
        let vocab = cfg.vocab().unwrap();
        let demos =
            generate_demonstrations(&data.id_train, &cfg, DemoStyle::AnswerOnly, 10, 3).unwrap();
        assert_eq!(demos.len(), 10);
        for d in &demos {
            assert_eq!(d.tokens.len(), 6);
            assert_eq!(d.tokens[0], OutputVocab::THINK_OPEN);
            assert_eq!(d.tokens[1], OutputVocab::THINK_CLOSE);
        }
        let demos =
            generate_demonstrations(&data.id_train, &cfg, DemoStyle::Reasoning, 10, 3).unwrap();
        for d in &demos {
            let sample = data.id_train.iter().find(|s| s.id == d.sample_id).unwrap();
            let think = &d.tokens[1..d.tokens.len() - 5];
            assert!(!think.is_empty());
            for &t in think {
                let cue = t - vocab.cue_mention(Modality::Visual, 0);
                assert!(sample.visual.contains(&cue));
                assert_eq!(cue_label(cue, 6), sample.label.id);
            }
        }
        assert!(generate_demonstrations(&data.id_train, &cfg, DemoStyle::Reasoning, 0, 3)
            .unwrap()
            .is_empty());
        assert!(matches!(
            generate_demonstrations(&data.id_train[..3], &cfg, DemoStyle::Reasoning, 4, 3),
            Err(Error::Argument(_))
        ));
    }
}
