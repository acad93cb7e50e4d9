//! Reinforcement learning with verifiable rewards, optimized by group-relative
//! policy optimization, on a synthetic two-channel emotion-recognition task.
//!
//! The policy is a linear softmax over a small output alphabet, so every
//! gradient is exact and a full cold-start / RL / evaluation study runs in
//! seconds on one core.

pub mod error;
pub mod eval;
pub mod grpo;
pub mod io;
pub mod pipeline;
pub mod policy;
pub mod task;
pub mod transcript;

pub use error::{Error, Result};
pub use eval::{compare_models, evaluate_policy, uar, war, ComparisonTable, ConfusionMatrix, MetricsReport};
pub use grpo::{compute_advantages, grpo_step, train_rlvr, train_sft, TrainerConfig, TrainingContext};
pub use pipeline::{run_study, StudyConfig, StudyOutcome};
pub use policy::{PolicyParams, ReferencePolicy, TokenPolicy};
pub use task::{generate_dataset, Dataset, GenerativeConfig, Sample, Split, Taxonomy};
pub use transcript::{parse_transcript, AliasTable, OutputVocab, RewardBreakdown, Transcript};
