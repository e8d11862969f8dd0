//! Distances between extractor features of pose-paired real-proxy and
//! plain crops, before and after finetuning on the plain domain.
//!
//!     cargo run --release --example feature_distance

use synthfreeze::transferlab::{
    feature_distances, histogram_with_range, paired_crops, train, ExperimentConfig, ExperimentData,
    FreezeSchedule, TinyNet,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig {
        train_per_domain: 600,
        test_count: 100,
        distance_pairs: 0,
        ..Default::default()
    };
    config.stage1.steps = 200;
    config.stage2.steps = 200;
    let data = ExperimentData::generate(&config)?;
    let pairs = paired_crops(&config, 200)?;

    let mut net = TinyNet::random(&config.arch, config.classes(), 1)?;
    net.reinit_head(3);
    train(&mut net, &data.real_train, &FreezeSchedule::none(), &config.stage1)?;
    let before = feature_distances(&pairs, &net)?;
    let mut tuned = net.clone();
    tuned.reinit_head(2);
    train(&mut tuned, &data.plain_train, &FreezeSchedule::none(), &config.stage2)?;
    let after = feature_distances(&pairs, &tuned)?;

    let top = before.iter().chain(&after).copied().fold(0.0, f64::max);
    for (name, d) in [("stage-1 extractor", before), ("finetuned extractor", after)] {
        let h = histogram_with_range(d, 10, Some(top))?;
        println!("{name}: median {:.3}, mean {:.3}, counts {:?}", h.median, h.mean, h.counts);
    }
    Ok(())
}
