//! Structured-output grammar and the verifiable rewards.
//!
//! A well-formed response is one think block followed by one answer block:
//!
//! ```text
//! <think> ...cue mentions... </think> <answer> label </answer> [EOS]
//! ```
//!
//! The same grammar is checked on token sequences produced by the toy policy
//! and on raw text produced by an external model.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{EmotionLabel, Modality, Taxonomy};

/// Output alphabet: four tags, EOS, one mention per cue token, one token per
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputVocab {
    num_visual_cues: usize,
    num_audio_cues: usize,
    labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
    Eos,
    Cue(Modality, usize),
    Label(usize),
}

impl TokenKind {
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            TokenKind::ThinkOpen
                | TokenKind::ThinkClose
                | TokenKind::AnswerOpen
                | TokenKind::AnswerClose
                | TokenKind::Eos
        )
    }
}

impl OutputVocab {
    pub const THINK_OPEN: usize = 0;
    pub const THINK_CLOSE: usize = 1;
    pub const ANSWER_OPEN: usize = 2;
    pub const ANSWER_CLOSE: usize = 3;
    pub const EOS: usize = 4;
    const FIRST_CUE: usize = 5;

    pub fn new(num_visual_cues: usize, num_audio_cues: usize, labels: Vec<String>) -> Self {
        Self {
            num_visual_cues,
            num_audio_cues,
            labels,
        }
    }

    pub fn size(&self) -> usize {
        Self::FIRST_CUE + self.num_visual_cues + self.num_audio_cues + self.labels.len()
    }

    pub fn num_visual_cues(&self) -> usize {
        self.num_visual_cues
    }

    pub fn num_audio_cues(&self) -> usize {
        self.num_audio_cues
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cue_mention(&self, modality: Modality, cue: usize) -> usize {
        match modality {
            Modality::Visual => Self::FIRST_CUE + cue,
            Modality::Audio => Self::FIRST_CUE + self.num_visual_cues + cue,
        }
    }

    pub fn label_token(&self, label: usize) -> usize {
        Self::FIRST_CUE + self.num_visual_cues + self.num_audio_cues + label
    }

    /// Panics on ids outside the vocabulary.
    pub fn kind(&self, token: usize) -> TokenKind {
        let audio_start = Self::FIRST_CUE + self.num_visual_cues;
        let label_start = audio_start + self.num_audio_cues;
        match token {
            Self::THINK_OPEN => TokenKind::ThinkOpen,
            Self::THINK_CLOSE => TokenKind::ThinkClose,
            Self::ANSWER_OPEN => TokenKind::AnswerOpen,
            Self::ANSWER_CLOSE => TokenKind::AnswerClose,
            Self::EOS => TokenKind::Eos,
            t if t < audio_start => TokenKind::Cue(Modality::Visual, t - Self::FIRST_CUE),
            t if t < label_start => TokenKind::Cue(Modality::Audio, t - audio_start),
            t if t < self.size() => TokenKind::Label(t - label_start),
            t => panic!("token {t} outside vocabulary of size {}", self.size()),
        }
    }

    /// Text rendering of a token sequence, e.g.
    /// `<think>v2 a2</think><answer>angry</answer>`.
    pub fn render(&self, tokens: &[usize]) -> String {
        let mut out = String::new();
        let mut prev_content = false;
        for &t in tokens {
            let piece = match self.kind(t) {
                TokenKind::ThinkOpen => "<think>".to_string(),
                TokenKind::ThinkClose => "</think>".to_string(),
                TokenKind::AnswerOpen => "<answer>".to_string(),
                TokenKind::AnswerClose => "</answer>".to_string(),
                TokenKind::Eos => String::new(),
                TokenKind::Cue(Modality::Visual, c) => format!("v{c}"),
                TokenKind::Cue(Modality::Audio, c) => format!("a{c}"),
                TokenKind::Label(l) => self.labels[l].clone(),
            };
            let content = !self.kind(t).is_structural();
            if content && prev_content {
                out.push(' ');
            }
            out.push_str(&piece);
            prev_content = content;
        }
        out
    }
}

/// A response in token form (toy policy) or text form (external model).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transcript {
    Tokens(Vec<usize>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTranscript {
    /// Token range (token form) or byte range (text form) of the think content.
    pub think_span: Range<usize>,
    /// Decoded label (token form) or trimmed answer text (text form); empty
    /// when malformed.
    pub answer_content: String,
    pub well_formed: bool,
}

impl ParsedTranscript {
    fn malformed() -> Self {
        Self {
            think_span: 0..0,
            answer_content: String::new(),
            well_formed: false,
        }
    }
}

/// Checks the think/answer grammar. Never fails: malformation is reported
/// through `well_formed`.
pub fn parse_transcript(transcript: &Transcript, vocab: &OutputVocab) -> ParsedTranscript {
    match transcript {
        Transcript::Tokens(tokens) => parse_tokens(tokens, vocab),
        Transcript::Text(text) => parse_text(text),
    }
}

fn parse_tokens(tokens: &[usize], vocab: &OutputVocab) -> ParsedTranscript {
    if tokens.iter().any(|&t| t >= vocab.size()) {
        return ParsedTranscript::malformed();
    }
    let kinds: Vec<TokenKind> = tokens.iter().map(|&t| vocab.kind(t)).collect();
    if kinds.first() != Some(&TokenKind::ThinkOpen) {
        return ParsedTranscript::malformed();
    }
    let close = 1 + kinds[1..].iter().take_while(|k| !k.is_structural()).count();
    if kinds.get(close) != Some(&TokenKind::ThinkClose) {
        return ParsedTranscript::malformed();
    }
    let rest = &kinds[close + 1..];
    let label = match rest {
        [TokenKind::AnswerOpen, TokenKind::Label(l), TokenKind::AnswerClose]
        | [TokenKind::AnswerOpen, TokenKind::Label(l), TokenKind::AnswerClose, TokenKind::Eos] => *l,
        _ => return ParsedTranscript::malformed(),
    };
    ParsedTranscript {
        think_span: 1..close,
        answer_content: vocab.labels[label].clone(),
        well_formed: true,
    }
}

const TAGS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

fn text_grammar() -> &'static Regex {
    static GRAMMAR: OnceLock<Regex> = OnceLock::new();
    GRAMMAR.get_or_init(|| {
        Regex::new(r"(?s)\A\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*\z")
            .expect("grammar regex")
    })
}

fn parse_text(text: &str) -> ParsedTranscript {
    let Some(caps) = text_grammar().captures(text) else {
        return ParsedTranscript::malformed();
    };
    let think = caps.get(1).expect("group 1");
    let answer = caps.get(2).expect("group 2");
    let nested = |s: &str| TAGS.iter().any(|tag| s.contains(tag));
    let answer_text = answer.as_str().trim();
    if nested(think.as_str()) || nested(answer.as_str()) || answer_text.is_empty() {
        return ParsedTranscript::malformed();
    }
    ParsedTranscript {
        think_span: think.range(),
        answer_content: answer_text.to_string(),
        well_formed: true,
    }
}

pub fn format_reward(parsed: &ParsedTranscript) -> u8 {
    u8::from(parsed.well_formed)
}

/// Synonyms shipped with the default alias table, as (alias, canonical).
pub const DEFAULT_SYNONYMS: &[(&str, &str)] = &[
    ("happiness", "happy"),
    ("joy", "happy"),
    ("joyful", "happy"),
    ("sadness", "sad"),
    ("unhappy", "sad"),
    ("anger", "angry"),
    ("mad", "angry"),
    ("neutrality", "neutral"),
    ("fearful", "fear"),
    ("afraid", "fear"),
    ("scared", "fear"),
    ("surprised", "surprise"),
    ("disgusted", "disgust"),
    ("contemptuous", "contempt"),
    ("anxious", "anxiety"),
    ("helpless", "helplessness"),
    ("disappointed", "disappointment"),
    ("bored", "bored"),
    ("boredom", "bored"),
    ("confusion", "confused"),
    ("excitement", "excited"),
    ("tiredness", "tired"),
];

/// Lowercase, then strip surrounding whitespace and punctuation.
pub fn canonical_form(s: &str) -> String {
    s.to_lowercase()
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_string()
}

/// Maps free-form answers onto the taxonomy by exact lookup after
/// normalization.
#[derive(Debug, Clone)]
pub struct AliasTable {
    taxonomy: Taxonomy,
    lookup: HashMap<String, usize>,
}

impl AliasTable {
    /// Canonical names plus [`DEFAULT_SYNONYMS`] whose target is in the
    /// taxonomy.
    pub fn standard(taxonomy: &Taxonomy) -> Self {
        let aliases = DEFAULT_SYNONYMS
            .iter()
            .filter(|(_, canonical)| taxonomy.by_name(canonical).is_some())
            .map(|(a, c)| ((*a).to_string(), (*c).to_string()))
            .collect();
        Self::with_aliases(taxonomy, &aliases).expect("shipped synonyms are valid")
    }

    /// Canonical names plus the given alias → canonical map. Every target
    /// must be a taxonomy label.
    pub fn with_aliases(taxonomy: &Taxonomy, aliases: &BTreeMap<String, String>) -> Result<Self> {
        let mut lookup: HashMap<String, usize> = taxonomy
            .labels()
            .iter()
            .map(|l| (canonical_form(&l.name), l.id))
            .collect();
        for (alias, target) in aliases {
            let label = taxonomy.by_name(&canonical_form(target)).ok_or_else(|| {
                Error::Data(format!("alias `{alias}` points at unknown label `{target}`"))
            })?;
            lookup.insert(canonical_form(alias), label.id);
        }
        Ok(Self {
            taxonomy: taxonomy.clone(),
            lookup,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn normalize(&self, answer: &str) -> Option<&EmotionLabel> {
        self.lookup
            .get(&canonical_form(answer))
            .and_then(|&id| self.taxonomy.get(id))
    }
}

/// `None` is the NoMatch outcome.
pub fn normalize_label<'a>(answer: &str, aliases: &'a AliasTable) -> Option<&'a EmotionLabel> {
    aliases.normalize(answer)
}

pub fn accuracy_reward(parsed: &ParsedTranscript, gt: &EmotionLabel, aliases: &AliasTable) -> u8 {
    if !parsed.well_formed {
        return 0;
    }
    u8::from(normalize_label(&parsed.answer_content, aliases).is_some_and(|l| l.id == gt.id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: u8,
    pub r_format: u8,
    pub r_total: u8,
    pub kl_penalty: f64,
}

impl RewardBreakdown {
    pub fn new(r_acc: u8, r_format: u8) -> Self {
        Self {
            r_acc,
            r_format,
            r_total: r_acc + r_format,
            kl_penalty: 0.0,
        }
    }
}

pub fn total_reward(
    transcript: &Transcript,
    gt: &EmotionLabel,
    vocab: &OutputVocab,
    aliases: &AliasTable,
) -> RewardBreakdown {
    let parsed = parse_transcript(transcript, vocab);
    RewardBreakdown::new(accuracy_reward(&parsed, gt, aliases), format_reward(&parsed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup() -> (OutputVocab, AliasTable) {
        let tax = Taxonomy::standard(6).unwrap();
        (OutputVocab::new(12, 12, tax.names()), AliasTable::standard(&tax))
    }

    fn angry(vocab: &OutputVocab) -> usize {
        vocab.label_token(2)
    }

    #[test]
    fn vocab_layout() {
        let (vocab, _) = setup();
        assert_eq!(vocab.size(), 5 + 24 + 6);
        let mut seen = std::collections::HashSet::new();
        for t in 0..vocab.size() {
            let kind = vocab.kind(t);
            assert!(seen.insert(format!("{kind:?}")));
        }
        assert_eq!(vocab.kind(vocab.cue_mention(Modality::Audio, 3)), TokenKind::Cue(Modality::Audio, 3));
    }

    #[test]
    fn well_formed_token_transcript() {
        let (vocab, _) = setup();
        let tokens = vec![
            OutputVocab::THINK_OPEN,
            vocab.cue_mention(Modality::Visual, 3),
            OutputVocab::THINK_CLOSE,
            OutputVocab::ANSWER_OPEN,
            angry(&vocab),
            OutputVocab::ANSWER_CLOSE,
            OutputVocab::EOS,
        ];
        let p = parse_transcript(&Transcript::Tokens(tokens.clone()), &vocab);
        assert!(p.well_formed);
        assert_eq!(p.answer_content, "angry");
        assert_eq!(p.think_span, 1..2);
        // EOS is optional
        let p = parse_transcript(&Transcript::Tokens(tokens[..6].to_vec()), &vocab);
        assert!(p.well_formed);
        assert_eq!(vocab.render(&tokens), "<think>v3</think><answer>angry</answer>");
    }

    #[test]
    fn malformed_token_transcripts() {
        let (vocab, _) = setup();
        let a = angry(&vocab);
        let cases: Vec<Vec<usize>> = vec![
            vec![],
            vec![OutputVocab::ANSWER_OPEN, vocab.label_token(0), OutputVocab::ANSWER_CLOSE],
            vec![0, 1, 2, a, a, 3],
            vec![0, 1, 2, 3],
            vec![0, 1, 2, a, 3, 4, 4],
            vec![0, 1, 2, a, 3, 5],
            vec![0, 0, 1, 2, a, 3],
            vec![0, 5, 4, 1, 2, a, 3],
            vec![0, 5, 5, 5],
            vec![0, 1, 2, vocab.cue_mention(Modality::Visual, 0), 3],
            vec![0, 1, 0, 1, 2, a, 3],
        ];
        for tokens in cases {
            let p = parse_transcript(&Transcript::Tokens(tokens.clone()), &vocab);
            assert!(!p.well_formed, "{tokens:?}");
            assert_eq!(p.answer_content, "");
            assert_eq!(format_reward(&p), 0);
        }
    }

    #[test]
    fn text_grammar_accepts_reference_layout() {
        let text = "<think>frown, raised voice</think>\n<answer>angry</answer>";
        let p = parse_text(text);
        assert!(p.well_formed);
        assert_eq!(p.answer_content, "angry");
        assert_eq!(&text[p.think_span], "frown, raised voice");
        let p = parse_text("  <think></think><answer> Angry. </answer>\n");
        assert!(p.well_formed);
        assert_eq!(p.answer_content, "Angry.");
    }

    #[test]
    fn text_grammar_rejects_violations() {
        for text in [
            "",
            "<answer>angry</answer>",
            "<think>x<answer>angry</answer>",
            "<think>x</think>",
            "prefix <think>x</think><answer>angry</answer>",
            "<think>x</think><answer>angry</answer> suffix",
            "<THINK>x</THINK><answer>angry</answer>",
            "<think>x</think><answer>angry</answer><answer>sad</answer>",
            "<think>x</think><think>y</think><answer>angry</answer>",
            "<think>x</think><answer>  </answer>",
        ] {
            assert!(!parse_text(text).well_formed, "{text:?}");
        }
    }

    #[test]
    fn normalization() {
        let (_, aliases) = setup();
        assert_eq!(normalize_label(" Angry.", &aliases).unwrap().name, "angry");
        assert_eq!(normalize_label("angry", &aliases).unwrap().name, "angry");
        assert_eq!(normalize_label("Joy!", &aliases).unwrap().name, "happy");
        assert_eq!(normalize_label("fearful", &aliases).unwrap().name, "fear");
        assert!(normalize_label("melancholic", &aliases).is_none());
        assert!(normalize_label("very angry", &aliases).is_none());
        // synonyms for labels outside the taxonomy are not shipped
        assert!(normalize_label("disgusted", &aliases).is_none());
        for label in aliases.taxonomy().labels() {
            let once = normalize_label(&label.name, &aliases).unwrap();
            assert_eq!(normalize_label(&once.name, &aliases).unwrap(), label);
        }
    }

    #[test]
    fn custom_aliases() {
        let tax = Taxonomy::standard(6).unwrap();
        let mut map = BTreeMap::new();
        map.insert("Furious".to_string(), "angry".to_string());
        let table = AliasTable::with_aliases(&tax, &map).unwrap();
        assert_eq!(table.normalize("furious").unwrap().name, "angry");
        assert!(table.normalize("anger").is_none());
        map.insert("x".to_string(), "melancholy".to_string());
        assert!(AliasTable::with_aliases(&tax, &map).is_err());
    }

    #[test]
    fn reward_goldens() {
        let (vocab, aliases) = setup();
        let tax = aliases.taxonomy().clone();
        let gt = tax.by_name("angry").unwrap();
        let a = angry(&vocab);
        let ok = Transcript::Tokens(vec![0, 7, 1, 2, a, 3, 4]);
        assert_eq!(total_reward(&ok, gt, &vocab, &aliases), RewardBreakdown::new(1, 1));
        let wrong = Transcript::Tokens(vec![0, 7, 1, 2, vocab.label_token(0), 3, 4]);
        assert_eq!(total_reward(&wrong, gt, &vocab, &aliases), RewardBreakdown::new(0, 1));
        let bad = Transcript::Tokens(vec![2, a, 3, 4]);
        let rb = total_reward(&bad, gt, &vocab, &aliases);
        assert_eq!((rb.r_acc, rb.r_format, rb.r_total), (0, 0, 0));
        let text = Transcript::Text("<think>frown</think><answer>Anger</answer>".into());
        assert_eq!(total_reward(&text, gt, &vocab, &aliases).r_total, 2);
    }

    proptest! {
        #[test]
        fn rewards_are_total(tokens in proptest::collection::vec(0usize..35, 0..40)) {
            let (vocab, aliases) = setup();
            let gt = aliases.taxonomy().get(2).unwrap().clone();
            let t = Transcript::Tokens(tokens);
            let parsed = parse_transcript(&t, &vocab);
            let rb = total_reward(&t, &gt, &vocab, &aliases);
            prop_assert!(rb.r_total <= 2);
            prop_assert_eq!(rb.r_total, rb.r_acc + rb.r_format);
            prop_assert_eq!(rb.r_format, u8::from(parsed.well_formed));
            if rb.r_acc == 1 {
                prop_assert!(!parsed.answer_content.is_empty());
            }
        }

        #[test]
        fn text_parser_is_total(text in ".{0,80}") {
            let parsed = parse_text(&text);
            prop_assert_eq!(parsed.well_formed, !parsed.answer_content.is_empty());
        }
    }
}
