//! Group-relative advantages, the KL-regularized verifiable-reward objective,
//! and the two trainers (GRPO and supervised fine-tuning).
//!
//! One GRPO step draws `G` responses for a single prompt, scores them with the
//! rule-based reward, standardizes the rewards within the group and ascends
//!
//! ```text
//! (1/G) sum_i A_i grad log pi(o_i)  -  beta (1/G) sum_i grad KL_i
//! ```
//!
//! When `kl_in_reward` is set the penalty is instead folded into each reward
//! (`r_i - beta KL_i`) before standardization and the second term is dropped.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sgd_update, Matrix, PolicyParams, ReferencePolicy, SampledResponse, TokenPolicy};
use crate::task::{Demonstration, Sample};
use crate::transcript::{parse_transcript, total_reward, AliasTable, RewardBreakdown, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// All-equal reward groups get zero advantages.
    #[default]
    ZeroAdvantages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    /// Step size for GRPO updates; `None` uses `learning_rate`.
    pub rlvr_learning_rate: Option<f64>,
    pub rlvr_steps: usize,
    pub sft_epochs: usize,
    pub sft_batch_size: usize,
    pub std_epsilon: f64,
    pub degenerate_policy: DegeneratePolicy,
    pub kl_in_reward: bool,
    /// Longest response sampled during training and evaluation.
    pub max_len: usize,
    /// GRPO steps per training-log row.
    pub log_window: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            beta: 0.04,
            learning_rate: 0.05,
            rlvr_learning_rate: None,
            rlvr_steps: 3000,
            sft_epochs: 100,
            sft_batch_size: 8,
            std_epsilon: 1e-8,
            degenerate_policy: DegeneratePolicy::ZeroAdvantages,
            kl_in_reward: false,
            max_len: 24,
            log_window: 100,
            seed: 7,
        }
    }
}

impl TrainerConfig {
    pub fn rlvr_lr(&self) -> f64 {
        self.rlvr_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group_size", "must be >= 2"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if let Some(lr) = self.rlvr_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config("rlvr_learning_rate", "must be finite and > 0"));
            }
        }
        if !self.std_epsilon.is_finite() || self.std_epsilon <= 0.0 {
            return Err(Error::config("std_epsilon", "must be > 0"));
        }
        if self.sft_batch_size == 0 {
            return Err(Error::config("sft_batch_size", "must be > 0"));
        }
        if self.max_len < 7 {
            return Err(Error::config("max_len", "must be >= 7"));
        }
        if self.log_window == 0 {
            return Err(Error::config("log_window", "must be > 0"));
        }
        Ok(())
    }
}

/// `A_i = (r_i - mean) / max(std, eps)` with the population standard
/// deviation. A group whose rewards are all equal gets exact zeros.
pub fn compute_advantages(rewards: &[f64], std_epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Argument(format!(
            "advantages need a group of at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_epsilon);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Scalar reward fed to the advantage computation.
pub fn rlvr_reward(breakdown: &RewardBreakdown, kl: f64, beta: f64, kl_in_reward: bool) -> f64 {
    let r = f64::from(breakdown.r_total);
    if kl_in_reward {
        r - beta * kl
    } else {
        r
    }
}

/// The `G` responses of one prompt and everything derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub sample: Sample,
    pub responses: Vec<SampledResponse>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub mean_reward: f64,
    pub std_reward: f64,
}

impl GroupBatch {
    pub fn is_degenerate(&self) -> bool {
        self.rewards.iter().all(|r| *r == self.rewards[0])
    }

    fn mean_of(&self, f: impl Fn(&RewardBreakdown) -> u8) -> f64 {
        self.breakdowns.iter().map(|b| f64::from(f(b))).sum::<f64>() / self.breakdowns.len() as f64
    }

    pub fn mean_acc_reward(&self) -> f64 {
        self.mean_of(|b| b.r_acc)
    }

    pub fn mean_format_reward(&self) -> f64 {
        self.mean_of(|b| b.r_format)
    }

    pub fn mean_kl(&self) -> f64 {
        self.responses.iter().map(|r| r.total_kl()).sum::<f64>() / self.responses.len() as f64
    }
}

/// One row of the GRPO training log, averaged over a window of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlvrLogRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_acc_reward: f64,
    pub mean_format_reward: f64,
    pub mean_kl: f64,
    /// Fraction of steps whose whole group was well-formed.
    pub format_rate: f64,
}

impl RlvrLogRow {
    pub const CSV_HEADER: &'static str = "step,mean_reward,mean_acc_reward,mean_format_reward,mean_kl,format_rate";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.mean_reward, self.mean_acc_reward, self.mean_format_reward, self.mean_kl, self.format_rate
        )
    }
}

#[derive(Debug, Clone, Default)]
struct WindowStats {
    steps: usize,
    reward: f64,
    acc: f64,
    format: f64,
    kl: f64,
    all_formatted: usize,
}

impl WindowStats {
    fn push(&mut self, batch: &GroupBatch) {
        self.steps += 1;
        self.reward += batch.mean_reward;
        self.acc += batch.mean_acc_reward();
        self.format += batch.mean_format_reward();
        self.kl += batch.mean_kl();
        self.all_formatted += usize::from(batch.breakdowns.iter().all(|b| b.r_format == 1));
    }

    fn flush(&mut self, step: usize) -> Option<RlvrLogRow> {
        if self.steps == 0 {
            return None;
        }
        let n = self.steps as f64;
        let row = RlvrLogRow {
            step,
            mean_reward: self.reward / n,
            mean_acc_reward: self.acc / n,
            mean_format_reward: self.format / n,
            mean_kl: self.kl / n,
            format_rate: self.all_formatted as f64 / n,
        };
        *self = WindowStats::default();
        Some(row)
    }
}

/// Mutable head of a GRPO run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    reference: ReferencePolicy,
    pub step: usize,
    window: WindowStats,
    log: Vec<RlvrLogRow>,
}

impl TrainState {
    /// Snapshots `params` as the frozen reference.
    pub fn new(params: PolicyParams) -> Self {
        Self {
            reference: ReferencePolicy::snapshot(&params),
            params,
            step: 0,
            window: WindowStats::default(),
            log: Vec::new(),
        }
    }

    pub fn reference(&self) -> &ReferencePolicy {
        &self.reference
    }

    pub fn log(&self) -> &[RlvrLogRow] {
        &self.log
    }
}

/// Shared, immutable context of a trainer.
#[derive(Debug, Clone, Copy)]
pub struct TrainingContext<'a> {
    pub policy: &'a TokenPolicy,
    pub aliases: &'a AliasTable,
    pub config: &'a TrainerConfig,
}

/// One GRPO update on a single prompt. On error the state is left untouched.
pub fn grpo_step<R: Rng + ?Sized>(
    state: &mut TrainState,
    ctx: TrainingContext<'_>,
    sample: &Sample,
    rng: &mut R,
) -> Result<GroupBatch> {
    let TrainingContext { policy, aliases, config } = ctx;
    let g = config.group_size;
    let seeds: Vec<u64> = (0..g).map(|_| rng.gen()).collect();
    let params = &state.params;
    let reference = &state.reference;

    let responses: Vec<SampledResponse> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rollout_rng = ChaCha8Rng::seed_from_u64(seed);
            policy.sample_response(params, sample, config.max_len, Some(reference), &mut rollout_rng)
        })
        .collect::<Result<_>>()?;

    let mut breakdowns: Vec<RewardBreakdown> = responses
        .iter()
        .map(|r| total_reward(&Transcript::Tokens(r.tokens.clone()), &sample.label, policy.vocab(), aliases))
        .collect();
    let rewards: Vec<f64> = breakdowns
        .iter_mut()
        .zip(&responses)
        .map(|(b, r)| {
            b.kl_penalty = config.beta * r.total_kl();
            rlvr_reward(b, r.total_kl(), config.beta, config.kl_in_reward)
        })
        .collect();
    let advantages = compute_advantages(&rewards, config.std_epsilon)?;

    let scale = 1.0 / g as f64;
    let with_kl_term = !config.kl_in_reward && config.beta > 0.0;
    let partials: Vec<Option<Matrix>> = responses
        .par_iter()
        .zip(&advantages)
        .map(|(response, &advantage)| {
            if advantage == 0.0 && !with_kl_term {
                return Ok(None);
            }
            let mut grad = Matrix::zeros(policy.vocab_size(), policy.feature_dim());
            if advantage != 0.0 {
                policy.accumulate_grad_logprob(params, sample, &response.tokens, advantage * scale, &mut grad)?;
            }
            if with_kl_term {
                policy.accumulate_grad_kl(params, reference, sample, &response.tokens, -config.beta * scale, &mut grad)?;
            }
            Ok(Some(grad))
        })
        .collect::<Result<_>>()?;
    let mut gradient = Matrix::zeros(policy.vocab_size(), policy.feature_dim());
    for partial in partials.iter().flatten() {
        gradient.add_scaled(partial, 1.0);
    }
    let next = sgd_update(&state.params, &gradient, config.rlvr_lr())?;

    let n = rewards.len() as f64;
    let mean_reward = rewards.iter().sum::<f64>() / n;
    let std_reward = (rewards.iter().map(|r| (r - mean_reward).powi(2)).sum::<f64>() / n).sqrt();
    let batch = GroupBatch {
        sample: sample.clone(),
        responses,
        breakdowns,
        rewards,
        advantages,
        mean_reward,
        std_reward,
    };

    state.params = next;
    state.step += 1;
    state.window.push(&batch);
    if state.step.is_multiple_of(config.log_window) {
        let row = state.window.flush(state.step).expect("window holds this step");
        state.log.push(row);
    }
    Ok(batch)
}

#[derive(Debug, Clone)]
pub struct RlvrOutcome {
    pub params: PolicyParams,
    pub reference: ReferencePolicy,
    pub log: Vec<RlvrLogRow>,
}

/// GRPO from `initial`, which is also frozen as the KL reference.
pub fn train_rlvr(
    initial: &PolicyParams,
    ctx: TrainingContext<'_>,
    dataset: &[Sample],
) -> Result<RlvrOutcome> {
    train_rlvr_observed(initial, ctx, dataset, |_| {})
}

/// [`train_rlvr`] with a callback on every group batch.
pub fn train_rlvr_observed(
    initial: &PolicyParams,
    ctx: TrainingContext<'_>,
    dataset: &[Sample],
    mut observe: impl FnMut(&GroupBatch),
) -> Result<RlvrOutcome> {
    let config = ctx.config;
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("RLVR dataset is empty".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(21);
    let mut rollout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    rollout_rng.set_stream(22);

    let mut state = TrainState::new(initial.clone());
    let mut order: Vec<usize> = Vec::new();
    for step in 0..config.rlvr_steps {
        let pos = step % dataset.len();
        if pos == 0 {
            order = (0..dataset.len()).collect();
            order.shuffle(&mut order_rng);
        }
        let batch = grpo_step(&mut state, ctx, &dataset[order[pos]], &mut rollout_rng)?;
        observe(&batch);
    }
    if let Some(row) = state.window.flush(state.step) {
        state.log.push(row);
    }
    Ok(RlvrOutcome {
        params: state.params,
        reference: state.reference,
        log: state.log,
    })
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Mean per-demonstration log-likelihood after each epoch.
    pub epoch_loglik: Vec<f64>,
}

/// Mean total log-likelihood of the demonstrations under `params`.
pub fn mean_demo_loglik(policy: &TokenPolicy, params: &PolicyParams, pairs: &[(&Sample, &Demonstration)]) -> Result<f64> {
    let total = pairs
        .par_iter()
        .map(|(s, d)| policy.logprob_of(params, s, &d.tokens).map(|score| score.total))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(total / pairs.len().max(1) as f64)
}

fn pair_demos<'a>(
    policy: &TokenPolicy,
    demos: &'a [Demonstration],
    samples: &'a [Sample],
    aliases: &AliasTable,
) -> Result<Vec<(&'a Sample, &'a Demonstration)>> {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    demos
        .iter()
        .map(|d| {
            let sample = by_id
                .get(d.sample_id.as_str())
                .ok_or_else(|| Error::Data(format!("demonstration {}: no such sample", d.sample_id)))?;
            if d.tokens.iter().any(|&t| t >= policy.vocab_size()) {
                return Err(Error::Data(format!("demonstration {}: token outside vocabulary", d.sample_id)));
            }
            let parsed = parse_transcript(&Transcript::Tokens(d.tokens.clone()), policy.vocab());
            if !parsed.well_formed {
                return Err(Error::Data(format!("demonstration {}: transcript does not parse", d.sample_id)));
            }
            if crate::transcript::accuracy_reward(&parsed, &sample.label, aliases) != 1 {
                return Err(Error::Data(format!("demonstration {}: answer does not match label", d.sample_id)));
            }
            Ok((*sample, d))
        })
        .collect()
}

/// Mini-batch gradient ascent on the mean demonstration log-likelihood.
pub fn train_sft(
    initial: &PolicyParams,
    ctx: TrainingContext<'_>,
    demos: &[Demonstration],
    samples: &[Sample],
) -> Result<SftOutcome> {
    let TrainingContext { policy, aliases, config } = ctx;
    config.validate()?;
    let pairs = pair_demos(policy, demos, samples, aliases)?;
    let mut params = initial.clone();
    let mut epoch_loglik = Vec::with_capacity(config.sft_epochs);
    if pairs.is_empty() {
        return Ok(SftOutcome { params, epoch_loglik });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(31);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..config.sft_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.sft_batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let partials = batch
                .par_iter()
                .map(|&i| {
                    let (s, d) = pairs[i];
                    policy.grad_logprob(&params, s, &d.tokens)
                })
                .collect::<Result<Vec<Matrix>>>()?;
            let mut gradient = Matrix::zeros(policy.vocab_size(), policy.feature_dim());
            for g in &partials {
                gradient.add_scaled(g, scale);
            }
            params = sgd_update(&params, &gradient, config.learning_rate)?;
        }
        epoch_loglik.push(mean_demo_loglik(policy, &params, &pairs)?);
    }
    Ok(SftOutcome { params, epoch_loglik })
}
