//! In-process driver for the whole study: generate data, train the three
//! regimes, evaluate all four models on both test splits.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{compare_models, evaluate_policy, ComparisonTable, EvalOptions, MetricsReport};
use crate::grpo::{train_rlvr, train_sft, RlvrLogRow, TrainerConfig, TrainingContext};
use crate::policy::{PolicyParams, TokenPolicy};
use crate::task::{generate_dataset, generate_demonstrations, Dataset, DemoStyle, Demonstration, GenerativeConfig, Split};
use crate::transcript::AliasTable;

/// Model names in table order.
pub const MODEL_NAMES: [&str; 4] = ["base", "emer_sft", "direct_sft", "rlvr"];

/// Data and trainer configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StudyConfig {
    pub data: GenerativeConfig,
    pub trainer: TrainerConfig,
}

impl StudyConfig {
    /// Same configuration with every seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.data.seed = seed;
        c.trainer.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.trainer.validate()
    }
}

/// Reasoning and answer-only demonstrations drawn from the ID training split.
pub fn build_demonstrations(config: &GenerativeConfig, dataset: &Dataset) -> Result<(Vec<Demonstration>, Vec<Demonstration>)> {
    let train = dataset.split(Split::IdTrain);
    let reasoning = generate_demonstrations(train, config, DemoStyle::Reasoning, config.reasoning_demos, config.seed)?;
    let answer_only = generate_demonstrations(train, config, DemoStyle::AnswerOnly, config.answer_only_demos, config.seed)?;
    Ok((reasoning, answer_only))
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub models: Vec<(String, PolicyParams)>,
    pub rlvr_log: Vec<RlvrLogRow>,
    pub emer_epoch_loglik: Vec<f64>,
    pub reports: Vec<MetricsReport>,
    pub table: ComparisonTable,
}

impl StudyOutcome {
    pub fn report(&self, model: &str, split: Split) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.model == model && r.split == split.as_str())
    }
}

/// Runs cold-start SFT, RLVR from it, answer-only SFT, and evaluates the
/// four resulting models (uniform base included) with greedy decoding.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let dataset = generate_dataset(&config.data)?;
    let policy = TokenPolicy::new(config.data.vocab()?);
    let aliases = AliasTable::standard(&config.data.taxonomy()?);
    let ctx = TrainingContext {
        policy: &policy,
        aliases: &aliases,
        config: &config.trainer,
    };
    let (reasoning, answer_only) = build_demonstrations(&config.data, &dataset)?;
    let train = dataset.split(Split::IdTrain);

    let base = PolicyParams::zeros(&policy);
    let emer = train_sft(&base, ctx, &reasoning, train)?;
    let direct = train_sft(&base, ctx, &answer_only, train)?;
    let rlvr = train_rlvr(&emer.params, ctx, train)?;

    let models = vec![
        (MODEL_NAMES[0].to_string(), base),
        (MODEL_NAMES[1].to_string(), emer.params),
        (MODEL_NAMES[2].to_string(), direct.params),
        (MODEL_NAMES[3].to_string(), rlvr.params),
    ];
    let options = EvalOptions {
        max_len: config.trainer.max_len,
        ..EvalOptions::default()
    };
    let mut reports = Vec::new();
    for (name, params) in &models {
        for split in [Split::IdTest, Split::OodTest] {
            let eval = evaluate_policy(&policy, params, dataset.split(split), &aliases, options, name)?;
            reports.push(eval.report);
        }
    }
    let table = compare_models(&reports)?;
    Ok(StudyOutcome {
        models,
        rlvr_log: rlvr.log,
        emer_epoch_loglik: emer.epoch_loglik,
        reports,
        table,
    })
}
