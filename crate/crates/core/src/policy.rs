//! Linear-softmax autoregressive policy over the output vocabulary.
//!
//! The next-token distribution is `softmax(W f)` where `f` is the context
//! feature vector
//!
//! ```text
//! [visual cue counts | audio cue counts | one-hot(previous token) | phase flags]
//! ```
//!
//! Everything the trainers need is exact: log-probabilities, their gradient
//! `sum_t (onehot(o_t) - p_t) f_t^T`, and the per-context categorical KL
//! against a frozen reference together with its gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::task::Sample;
use crate::transcript::OutputVocab;

/// Position in the think/answer protocol, derived from the emitted prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    PreThink,
    InThink,
    InAnswer,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::PreThink => 0,
            Phase::InThink => 1,
            Phase::InAnswer => 2,
        }
    }

    /// Phase after emitting `token`.
    pub fn advance(self, token: usize) -> Phase {
        match (self, token) {
            (Phase::PreThink, OutputVocab::THINK_OPEN) => Phase::InThink,
            (Phase::InThink, OutputVocab::THINK_CLOSE) => Phase::InAnswer,
            (phase, _) => phase,
        }
    }
}

/// Dense context feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatures(Vec<f64>);

impl ContextFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Argument(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// `self[k, :] += coeffs[k] * features` over the nonzero features.
    fn add_outer(&mut self, coeffs: &[f64], features: &ContextFeatures) {
        let nz: Vec<(usize, f64)> = features.nonzeros().collect();
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &mut self.data[k * self.cols..(k + 1) * self.cols];
            for &(j, f) in &nz {
                row[j] += c * f;
            }
        }
    }
}

/// The learnable state: a `V x F` weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Matrix,
    pub step_count: u64,
}

impl PolicyParams {
    /// All-zero weights: the uniform "base model".
    pub fn zeros(policy: &TokenPolicy) -> Self {
        Self {
            weights: Matrix::zeros(policy.vocab_size(), policy.feature_dim()),
            step_count: 0,
        }
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.weights.is_finite() {
            Ok(())
        } else {
            Err(Error::Numerical("policy weights contain non-finite entries".into()))
        }
    }

    /// Hex SHA-256 over shape, step count and weight bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.weights.rows as u64).to_le_bytes());
        h.update((self.weights.cols as u64).to_le_bytes());
        h.update(self.step_count.to_le_bytes());
        for w in &self.weights.data {
            h.update(w.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Frozen snapshot of a policy; no mutable access is exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy(PolicyParams);

impl ReferencePolicy {
    pub fn snapshot(params: &PolicyParams) -> Self {
        Self(params.clone())
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledResponse {
    pub tokens: Vec<usize>,
    pub per_step_logprobs: Vec<f64>,
    /// KL against the reference at every visited context; zeros when no
    /// reference was given.
    pub per_step_kl: Vec<f64>,
    pub total_logprob: f64,
    /// Stopped at `max_len` without emitting EOS.
    pub truncated: bool,
}

impl SampledResponse {
    pub fn total_kl(&self) -> f64 {
        self.per_step_kl.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub total: f64,
    pub per_step: Vec<f64>,
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    logits.iter().map(|l| l - log_z).collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `KL(p || q)` for two categorical distributions given as log-probabilities.
pub fn categorical_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    let kl: f64 = log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum();
    kl.max(0.0)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Featurizer and the operations of the linear-softmax policy. Holds only
/// configuration; parameters are passed explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenPolicy {
    vocab: OutputVocab,
}

#[derive(Serialize)]
struct FeaturizerSpec<'a> {
    layout: &'static str,
    vocab: &'a OutputVocab,
}

impl TokenPolicy {
    pub fn new(vocab: OutputVocab) -> Self {
        Self { vocab }
    }

    pub fn vocab(&self) -> &OutputVocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    /// `F = |visual cues| + |audio cues| + V + 3`.
    pub fn feature_dim(&self) -> usize {
        self.vocab.num_visual_cues() + self.vocab.num_audio_cues() + self.vocab.size() + 3
    }

    /// Hash of the vocabulary and feature layout; checkpoints only load
    /// against a matching value.
    pub fn config_hash(&self) -> String {
        let spec = FeaturizerSpec {
            layout: "visual-counts|audio-counts|prev-onehot|phase3",
            vocab: &self.vocab,
        };
        let json = serde_json::to_vec(&spec).expect("vocab serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn featurize(&self, sample: &Sample, prev: Option<usize>, phase: Phase) -> ContextFeatures {
        let nv = self.vocab.num_visual_cues();
        let na = self.vocab.num_audio_cues();
        let mut f = vec![0.0; self.feature_dim()];
        for &c in &sample.visual {
            f[c] += 1.0;
        }
        for &c in &sample.audio {
            f[nv + c] += 1.0;
        }
        if let Some(t) = prev {
            f[nv + na + t] = 1.0;
        }
        f[nv + na + self.vocab.size() + phase.index()] = 1.0;
        ContextFeatures(f)
    }

    fn check_shape(&self, params: &PolicyParams) -> Result<()> {
        let shape = (params.weights.rows, params.weights.cols);
        if shape != (self.vocab_size(), self.feature_dim()) {
            return Err(Error::Argument(format!(
                "params have shape {shape:?}, policy expects ({}, {})",
                self.vocab_size(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Argument("token sequence is empty".into()));
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::Argument(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn logits(&self, params: &PolicyParams, features: &ContextFeatures) -> Vec<f64> {
        let w = &params.weights;
        let nz: Vec<(usize, f64)> = features.nonzeros().collect();
        (0..w.rows)
            .map(|k| {
                let row = w.row(k);
                nz.iter().map(|&(j, f)| row[j] * f).sum()
            })
            .collect()
    }

    /// Next-token distribution `softmax(W f)`.
    pub fn token_distribution(&self, params: &PolicyParams, features: &ContextFeatures) -> Result<Vec<f64>> {
        self.check_shape(params)?;
        params.ensure_finite()?;
        Ok(softmax(&self.logits(params, features)))
    }

    /// Feature vectors of every context visited by teacher-forcing `tokens`.
    pub fn contexts<'a>(&'a self, sample: &'a Sample, tokens: &'a [usize]) -> impl Iterator<Item = ContextFeatures> + 'a {
        let mut phase = Phase::PreThink;
        let mut prev = None;
        tokens.iter().map(move |&t| {
            let f = self.featurize(sample, prev, phase);
            phase = phase.advance(t);
            prev = Some(t);
            f
        })
    }

    /// Autoregressive sampling until EOS or `max_len` tokens.
    pub fn sample_response<R: Rng + ?Sized>(
        &self,
        params: &PolicyParams,
        sample: &Sample,
        max_len: usize,
        reference: Option<&ReferencePolicy>,
        rng: &mut R,
    ) -> Result<SampledResponse> {
        self.generate(params, sample, max_len, reference, |log_probs| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, lp) in log_probs.iter().enumerate() {
                let p = lp.exp();
                if p > 0.0 {
                    last = i;
                }
                acc += p;
                if u < acc {
                    return i;
                }
            }
            last
        })
    }

    /// Deterministic argmax decoding; ties go to the lowest token id.
    pub fn greedy_response(&self, params: &PolicyParams, sample: &Sample, max_len: usize) -> Result<SampledResponse> {
        self.generate(params, sample, max_len, None, argmax)
    }

    fn generate(
        &self,
        params: &PolicyParams,
        sample: &Sample,
        max_len: usize,
        reference: Option<&ReferencePolicy>,
        mut choose: impl FnMut(&[f64]) -> usize,
    ) -> Result<SampledResponse> {
        if max_len < 7 {
            return Err(Error::Argument(format!("max_len must be >= 7, got {max_len}")));
        }
        self.check_shape(params)?;
        params.ensure_finite()?;
        if let Some(r) = reference {
            self.check_shape(r.params())?;
            r.params().ensure_finite()?;
        }
        let mut tokens = Vec::with_capacity(max_len);
        let mut per_step_logprobs = Vec::with_capacity(max_len);
        let mut per_step_kl = Vec::with_capacity(max_len);
        let mut phase = Phase::PreThink;
        let mut prev = None;
        let mut truncated = true;
        while tokens.len() < max_len {
            let f = self.featurize(sample, prev, phase);
            let log_p = log_softmax(&self.logits(params, &f));
            let kl = match reference {
                Some(r) => categorical_kl(&log_p, &log_softmax(&self.logits(r.params(), &f))),
                None => 0.0,
            };
            let t = choose(&log_p);
            tokens.push(t);
            per_step_logprobs.push(log_p[t]);
            per_step_kl.push(kl);
            if t == OutputVocab::EOS {
                truncated = false;
                break;
            }
            phase = phase.advance(t);
            prev = Some(t);
        }
        Ok(SampledResponse {
            total_logprob: per_step_logprobs.iter().sum(),
            tokens,
            per_step_logprobs,
            per_step_kl,
            truncated,
        })
    }

    /// Teacher-forced log-probability of `tokens`.
    pub fn logprob_of(&self, params: &PolicyParams, sample: &Sample, tokens: &[usize]) -> Result<SequenceScore> {
        self.check_shape(params)?;
        self.check_tokens(tokens)?;
        params.ensure_finite()?;
        let per_step: Vec<f64> = self
            .contexts(sample, tokens)
            .zip(tokens)
            .map(|(f, &t)| log_softmax(&self.logits(params, &f))[t])
            .collect();
        Ok(SequenceScore {
            total: per_step.iter().sum(),
            per_step,
        })
    }

    /// Gradient of the teacher-forced log-probability with respect to `W`.
    pub fn grad_logprob(&self, params: &PolicyParams, sample: &Sample, tokens: &[usize]) -> Result<Matrix> {
        let mut grad = Matrix::zeros(self.vocab_size(), self.feature_dim());
        self.accumulate_grad_logprob(params, sample, tokens, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// `grad += scale * d/dW log pi(tokens)`.
    pub fn accumulate_grad_logprob(
        &self,
        params: &PolicyParams,
        sample: &Sample,
        tokens: &[usize],
        scale: f64,
        grad: &mut Matrix,
    ) -> Result<()> {
        self.check_shape(params)?;
        self.check_tokens(tokens)?;
        params.ensure_finite()?;
        for (f, &t) in self.contexts(sample, tokens).zip(tokens) {
            let p = softmax(&self.logits(params, &f));
            let coeffs: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(k, pk)| scale * (f64::from(u8::from(k == t)) - pk))
                .collect();
            grad.add_outer(&coeffs, &f);
        }
        Ok(())
    }

    /// Sum over the contexts visited by `tokens` of the exact categorical
    /// `KL(pi_theta || pi_ref)`.
    pub fn kl_divergence(
        &self,
        params: &PolicyParams,
        reference: &ReferencePolicy,
        sample: &Sample,
        tokens: &[usize],
    ) -> Result<SequenceScore> {
        self.check_shape(params)?;
        self.check_shape(reference.params())?;
        self.check_tokens(tokens)?;
        params.ensure_finite()?;
        reference.params().ensure_finite()?;
        let per_step: Vec<f64> = self
            .contexts(sample, tokens)
            .map(|f| {
                categorical_kl(
                    &log_softmax(&self.logits(params, &f)),
                    &log_softmax(&self.logits(reference.params(), &f)),
                )
            })
            .collect();
        Ok(SequenceScore {
            total: per_step.iter().sum(),
            per_step,
        })
    }

    /// `grad += scale * d/dW kl_divergence(...)`. Per context,
    /// `dKL/dz_k = p_k (log p_k - log q_k - KL)`.
    pub fn accumulate_grad_kl(
        &self,
        params: &PolicyParams,
        reference: &ReferencePolicy,
        sample: &Sample,
        tokens: &[usize],
        scale: f64,
        grad: &mut Matrix,
    ) -> Result<()> {
        self.check_shape(params)?;
        self.check_shape(reference.params())?;
        self.check_tokens(tokens)?;
        params.ensure_finite()?;
        reference.params().ensure_finite()?;
        for f in self.contexts(sample, tokens) {
            let log_p = log_softmax(&self.logits(params, &f));
            let log_q = log_softmax(&self.logits(reference.params(), &f));
            let kl = categorical_kl(&log_p, &log_q);
            let coeffs: Vec<f64> = log_p
                .iter()
                .zip(&log_q)
                .map(|(lp, lq)| scale * lp.exp() * (lp - lq - kl))
                .collect();
            grad.add_outer(&coeffs, &f);
        }
        Ok(())
    }

    pub fn grad_kl(
        &self,
        params: &PolicyParams,
        reference: &ReferencePolicy,
        sample: &Sample,
        tokens: &[usize],
    ) -> Result<Matrix> {
        let mut grad = Matrix::zeros(self.vocab_size(), self.feature_dim());
        self.accumulate_grad_kl(params, reference, sample, tokens, 1.0, &mut grad)?;
        Ok(grad)
    }
}

/// Gradient ascent step: `W + lr * grad`. Refuses non-finite gradients.
pub fn sgd_update(params: &PolicyParams, gradient: &Matrix, learning_rate: f64) -> Result<PolicyParams> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::Argument(format!("learning rate must be > 0, got {learning_rate}")));
    }
    if (gradient.rows, gradient.cols) != (params.weights.rows, params.weights.cols) {
        return Err(Error::Argument("gradient shape does not match params".into()));
    }
    if !gradient.is_finite() {
        return Err(Error::Numerical("gradient contains non-finite entries".into()));
    }
    let mut weights = params.weights.clone();
    weights.add_scaled(gradient, learning_rate);
    if !weights.is_finite() {
        return Err(Error::Numerical("update produced non-finite weights".into()));
    }
    Ok(PolicyParams {
        weights,
        step_count: params.step_count + 1,
    })
}
