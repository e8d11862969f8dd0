//! Stage-1 training on real-proxy crops, then Stage-2 training on plain
//! renders with the extractor frozen or finetuned.
//!
//!     cargo run --release --example freeze_experiment [seeds] [steps]

use std::time::Instant;

use synthfreeze::transferlab::{run_transfer_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut config = ExperimentConfig::default();
    if let Some(n) = args.next() {
        config.seeds = (1..=n.parse()?).collect();
    }
    if let Some(steps) = args.next() {
        config.stage1.steps = steps.parse()?;
        config.stage2.steps = config.stage1.steps;
    }
    let t = Instant::now();
    let schedules = config.schedules.clone();
    let report = run_transfer_experiment(&config, &schedules, 1)?;
    print!("{}", report.to_table());
    eprintln!("total {:.1?}", t.elapsed());
    Ok(())
}
