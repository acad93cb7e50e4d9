//! Evaluation harness on real decodes.

mod common;

use r1lab_core::eval::{evaluate_policy, tally, uar, war, Decode, EvalOptions};
use r1lab_core::grpo::{train_sft, TrainerConfig, TrainingContext};
use r1lab_core::policy::{ContextFeatures, PolicyParams, TokenPolicy};
use r1lab_core::task::{generate_dataset, generate_demonstrations, DemoStyle, GenerativeConfig, Split};
use r1lab_core::transcript::{AliasTable, OutputVocab};

/// Hand-set weights that emit `<think></think><answer>L</answer>EOS` with
/// `L` the label whose visual cue is most frequent.
fn oracle(policy: &TokenPolicy) -> PolicyParams {
    let v = policy.vocab();
    let nv = v.num_visual_cues();
    let na = v.num_audio_cues();
    let prev = |t: usize| nv + na + t;
    let phase_pre = nv + na + v.size();
    let mut p = PolicyParams::zeros(policy);
    let w = &mut p.weights;
    w.set(OutputVocab::THINK_OPEN, phase_pre, 100.0);
    w.set(OutputVocab::THINK_CLOSE, prev(OutputVocab::THINK_OPEN), 100.0);
    w.set(OutputVocab::ANSWER_OPEN, prev(OutputVocab::THINK_CLOSE), 100.0);
    for l in 0..v.num_labels() {
        let t = v.label_token(l);
        w.set(t, prev(OutputVocab::ANSWER_OPEN), 100.0);
        w.set(t, l, 1.0);
        w.set(OutputVocab::ANSWER_CLOSE, prev(t), 100.0);
    }
    w.set(OutputVocab::EOS, prev(OutputVocab::ANSWER_CLOSE), 100.0);
    p
}

#[test]
fn oracle_policy_scores_perfectly() {
    let mut config = GenerativeConfig::default();
    config.id_test.noise = 0.0;
    config.conflict_rate = 0.0;
    let data = generate_dataset(&config).unwrap();
    let policy = TokenPolicy::new(config.vocab().unwrap());
    let aliases = AliasTable::standard(&config.taxonomy().unwrap());
    let eval = evaluate_policy(&policy, &oracle(&policy), &data.id_test, &aliases, EvalOptions::default(), "oracle").unwrap();
    assert_eq!(eval.report.war, 1.0);
    assert_eq!(eval.report.uar, 1.0);
    assert_eq!(eval.report.format_rate, 1.0);
    assert_eq!(eval.records[0].transcript, format!("<think></think><answer>{}</answer>", data.id_test[0].label.name));
}

#[test]
fn uniform_policy_is_near_chance() {
    let fx = common::fixture(1);
    let mut config = fx.config.clone();
    config.id_test.count = 500;
    let data = generate_dataset(&config).unwrap();
    let eval = evaluate_policy(
        &fx.policy,
        &PolicyParams::zeros(&fx.policy),
        &data.id_test,
        &fx.aliases,
        EvalOptions::default(),
        "base",
    )
    .unwrap();
    assert!(eval.report.format_rate < 0.05);
    assert!(eval.report.war <= 1.0 / 6.0 + 0.05);
}

#[test]
fn harness_matches_brute_force_recount() {
    let fx = common::fixture(2);
    let demos = generate_demonstrations(&fx.dataset.id_train, &fx.config, DemoStyle::Reasoning, 64, 2).unwrap();
    let trainer = TrainerConfig { sft_epochs: 10, ..Default::default() };
    let ctx = TrainingContext { policy: &fx.policy, aliases: &fx.aliases, config: &trainer };
    let params = train_sft(&PolicyParams::zeros(&fx.policy), ctx, &demos, &fx.dataset.id_train).unwrap().params;
    for split in [Split::IdTest, Split::OodTest] {
        let samples = fx.dataset.split(split);
        let eval = evaluate_policy(&fx.policy, &params, samples, &fx.aliases, EvalOptions::default(), "m").unwrap();
        let n = eval.records.len();
        assert_eq!(n, samples.len());
        let correct = eval.records.iter().filter(|r| r.matched_label.as_deref() == Some(r.gt_label.as_str())).count();
        assert_eq!(eval.report.war, correct as f64 / n as f64);
        assert_eq!(eval.records.iter().map(|r| u64::from(r.r_acc)).sum::<u64>(), correct as u64);
        let unmatched = eval.records.iter().filter(|r| r.matched_label.is_none()).count();
        assert_eq!(eval.report.unmatched_rate, unmatched as f64 / n as f64);
        let recount = tally(&eval.records, &fx.aliases).unwrap();
        assert_eq!(recount, eval.report.confusion);
        assert_eq!(uar(&recount).unwrap(), eval.report.uar);
        assert_eq!(war(&recount).unwrap(), eval.report.war);
        assert_eq!(eval.report.split, split.as_str());
    }
}

#[test]
fn evaluation_is_deterministic() {
    let fx = common::fixture(3);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let params = common::random_params(&fx.policy, 1.0, &mut rng);
    let run = |decode| {
        let options = EvalOptions { decode, seed: 9, ..Default::default() };
        evaluate_policy(&fx.policy, &params, &fx.dataset.id_test, &fx.aliases, options, "m").unwrap()
    };
    assert_eq!(run(Decode::Greedy), run(Decode::Greedy));
    assert_eq!(run(Decode::Sample), run(Decode::Sample));
}

#[test]
fn empty_split_is_an_error() {
    let fx = common::fixture(4);
    let params = PolicyParams::zeros(&fx.policy);
    assert!(evaluate_policy(&fx.policy, &params, &[], &fx.aliases, EvalOptions::default(), "m").is_err());
}

#[test]
fn featurize_layout_matches_policy_dimension() {
    let fx = common::fixture(5);
    let f: ContextFeatures = fx.policy.featurize(&fx.dataset.id_test[0], None, r1lab_core::policy::Phase::PreThink);
    assert_eq!(f.len(), fx.policy.feature_dim());
}
