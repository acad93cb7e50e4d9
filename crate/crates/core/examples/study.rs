//! Runs the full study for a range of seeds and prints per-seed tables.
//!
//! Usage: `cargo run --release -p r1lab-core --example study -- [SEEDS] [CONFIG.json]`

use std::time::Instant;

use r1lab_core::pipeline::{run_study, StudyConfig};
use r1lab_core::task::Split;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let base: StudyConfig = match args.get(2) {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => StudyConfig::default(),
    };
    for seed in 0..seeds {
        let start = Instant::now();
        let out = run_study(&base.with_seed(seed + 1))?;
        println!("seed {} ({:.1}s)", seed + 1, start.elapsed().as_secs_f64());
        print!("{}", out.table.to_text());
        for name in ["emer_sft", "direct_sft", "rlvr"] {
            let id = out.report(name, Split::IdTest).unwrap();
            let ood = out.report(name, Split::OodTest).unwrap();
            println!(
                "  {name:<10} format id {:.3} ood {:.3}  unmatched id {:.3} ood {:.3}",
                id.format_rate, ood.format_rate, id.unmatched_rate, ood.unmatched_rate
            );
        }
        let log = &out.rlvr_log;
        let show: Vec<String> = log
            .iter()
            .step_by((log.len() / 6).max(1))
            .chain(log.last())
            .map(|r| format!("{}:r={:.2} f={:.2} kl={:.3}", r.step, r.mean_reward, r.mean_format_reward, r.mean_kl))
            .collect();
        println!("  rlvr log {}", show.join(" "));
        println!("  sft ll {:?}", out.emer_epoch_loglik.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
