use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{cross_entropy, loss_and_gradients, BatchItem, Layer, Tensor, TinyNet};
use super::TransferError;

/// Weights compared per check unless the net has fewer.
pub const GRAD_CHECK_WEIGHTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Weights whose ±ε perturbation flipped some ReLU input's sign.
    pub skipped_kinks: usize,
}

/// Loss and the sign of every ReLU input, from one forward pass.
fn loss_and_pattern(net: &TinyNet, image: &Tensor, label: usize) -> (f64, Vec<bool>) {
    let trace = net.trace_from(image.clone(), 0);
    let pattern = net
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Relu))
        .flat_map(|(i, _)| trace.acts[i].data.iter().map(|v| *v > 0.0).collect::<Vec<_>>())
        .collect();
    (cross_entropy(&trace.logits().data, label), pattern)
}

fn flat_gradient(net: &TinyNet, image: &Tensor, label: usize) -> Result<Vec<f64>, TransferError> {
    let (_, g) = loss_and_gradients(net, &[BatchItem { input: image, label }], 0, 0)?;
    Ok(g.grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect())
}

/// Analytic gradient vs central differences on randomly chosen weights.
/// Weights whose perturbation moves any ReLU input across zero are replaced
/// by other draws, so every compared loss is smooth on `[w − ε, w + ε]`.
/// Relative error is `|g_a − g_fd| / max(|g_a|, |g_fd|, 1e-8)`.
pub fn grad_check_report(
    net: &TinyNet,
    image: &Tensor,
    label: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport, TransferError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(TransferError::InvalidConfig(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    net.check_input(image)?;
    let analytic = flat_gradient(net, image, label)?;
    let (_, base) = loss_and_pattern(net, image, label);
    let n = net.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, n, n);
    let want = GRAD_CHECK_WEIGHTS.min(n);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = net.clone();
    for k in order.iter() {
        if report.checked == want {
            break;
        }
        let w = net.param(k);
        probe.set_param(k, w + epsilon);
        let (lp, pp) = loss_and_pattern(&probe, image, label);
        probe.set_param(k, w - epsilon);
        let (lm, pm) = loss_and_pattern(&probe, image, label);
        probe.set_param(k, w);
        if pp != base || pm != base {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * epsilon);
        let ga = analytic[k];
        let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-8);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

pub fn grad_check(net: &TinyNet, image: &Tensor, label: usize, epsilon: f64) -> Result<f64, TransferError> {
    Ok(grad_check_report(net, image, label, epsilon, 0)?.max_relative_error)
}
