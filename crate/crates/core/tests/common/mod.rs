#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use r1lab_core::policy::{Matrix, PolicyParams, TokenPolicy};
use r1lab_core::task::{generate_dataset, Dataset, GenerativeConfig};
use r1lab_core::transcript::AliasTable;

pub struct Fixture {
    pub config: GenerativeConfig,
    pub dataset: Dataset,
    pub policy: TokenPolicy,
    pub aliases: AliasTable,
}

/// Default task shape with smaller splits.
pub fn fixture(seed: u64) -> Fixture {
    let mut config = GenerativeConfig {
        seed,
        ..GenerativeConfig::default()
    };
    config.id_train.count = 400;
    config.id_test.count = 200;
    config.ood_test.count = 200;
    config.answer_only_demos = 400;
    let dataset = generate_dataset(&config).unwrap();
    let policy = TokenPolicy::new(config.vocab().unwrap());
    let aliases = AliasTable::standard(&config.taxonomy().unwrap());
    Fixture {
        config,
        dataset,
        policy,
        aliases,
    }
}

pub fn random_params(policy: &TokenPolicy, scale: f64, rng: &mut ChaCha8Rng) -> PolicyParams {
    let (rows, cols) = (policy.vocab_size(), policy.feature_dim());
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    PolicyParams {
        weights: Matrix::from_vec(rows, cols, data).unwrap(),
        step_count: 0,
    }
}

pub fn random_tokens(policy: &TokenPolicy, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.gen_range(1..=12);
    (0..len).map(|_| rng.gen_range(0..policy.vocab_size())).collect()
}
