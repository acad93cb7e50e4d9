//! Prints confusion matrices for every model of one study run.
//!
//! Usage: `cargo run --release -p r1lab-core --example confusion -- SEED [CONFIG.json]`

use r1lab_core::pipeline::{run_study, StudyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let base: StudyConfig = match args.get(2) {
        Some(path) => serde_json::from_slice(&std::fs::read(path)?)?,
        None => StudyConfig::default(),
    };
    let out = run_study(&base.with_seed(seed))?;
    for r in &out.reports {
        println!("{} / {}  war {:.3} uar {:.3}", r.model, r.split, r.war, r.uar);
        for row in r.confusion.rows() {
            println!("  {row:?}");
        }
    }
    Ok(())
}
