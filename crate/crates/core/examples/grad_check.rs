//! Compares backpropagated gradients with central differences on random
//! nets of the default architecture.
//!
//!     cargo run --release --example grad_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthfreeze::transferlab::{grad_check_report, random_image, ArchSpec, TinyNet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arch = ArchSpec::default();
    for seed in 0..5 {
        let net = TinyNet::random(&arch, 10, seed)?;
        let x = random_image(net.input, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = grad_check_report(&net, &x, (seed % 10) as usize, 1e-5, seed)?;
        println!(
            "net {seed}: {} weights, max relative error {:.2e} ({} skipped near ReLU kinks)",
            r.checked, r.max_relative_error, r.skipped_kinks
        );
    }
    Ok(())
}
