//! KL-coefficient ablation: cold start once, then GRPO at several betas.
//!
//! Usage: `cargo run --release -p r1lab-core --example ablation -- SEEDS BETA... [--config PATH]`

use r1lab_core::grpo::{train_rlvr, train_sft, TrainingContext};
use r1lab_core::pipeline::{build_demonstrations, StudyConfig};
use r1lab_core::policy::{PolicyParams, TokenPolicy};
use r1lab_core::task::{generate_dataset, Split};
use r1lab_core::transcript::AliasTable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let mut base = StudyConfig::default();
    if let Some(pos) = args.iter().position(|a| a == "--config") {
        base = serde_json::from_slice(&std::fs::read(&args[pos + 1])?)?;
        args.drain(pos..pos + 2);
    }
    let seeds: u64 = args[0].parse()?;
    let betas: Vec<f64> = args[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    for seed in 1..=seeds {
        let config = base.with_seed(seed);
        let dataset = generate_dataset(&config.data)?;
        let policy = TokenPolicy::new(config.data.vocab()?);
        let aliases = AliasTable::standard(&config.data.taxonomy()?);
        let (reasoning, _) = build_demonstrations(&config.data, &dataset)?;
        let train = dataset.split(Split::IdTrain);
        let ctx = TrainingContext { policy: &policy, aliases: &aliases, config: &config.trainer };
        let emer = train_sft(&PolicyParams::zeros(&policy), ctx, &reasoning, train)?;
        for &beta in &betas {
            let mut trainer = config.trainer.clone();
            trainer.beta = beta;
            let ctx = TrainingContext { policy: &policy, aliases: &aliases, config: &trainer };
            match train_rlvr(&emer.params, ctx, train) {
                Ok(out) => {
                    let last = out.log.last().unwrap();
                    println!(
                        "seed {seed} beta {beta:>6}: final kl {:.4} reward {:.3} format {:.3}",
                        last.mean_kl, last.mean_reward, last.mean_format_reward
                    );
                }
                Err(e) => println!("seed {seed} beta {beta:>6}: error {e}"),
            }
        }
    }
    Ok(())
}
