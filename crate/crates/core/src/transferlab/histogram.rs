use serde::{Deserialize, Serialize};

use super::net::{forward, Layer, Tensor, TinyNet};
use super::TransferError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    /// `bins + 1` ascending edges; the last bin is closed.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub median: f64,
    pub distances: Vec<f64>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Histogram over `[0, max]` (or `[0, 1]` when every distance is 0).
pub fn histogram_from_distances(distances: Vec<f64>, bins: usize) -> Result<DistanceHistogram, TransferError> {
    histogram_with_range(distances, bins, None)
}

/// Same, with a fixed upper edge so several histograms share bins.
pub fn histogram_with_range(
    distances: Vec<f64>,
    bins: usize,
    upper: Option<f64>,
) -> Result<DistanceHistogram, TransferError> {
    if distances.is_empty() || bins == 0 {
        return Err(TransferError::EmptyInput);
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    let top = upper.unwrap_or(max).max(max);
    let top = if top > 0.0 { top } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| top * k as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for d in &distances {
        let k = ((d / top) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(DistanceHistogram {
        edges,
        counts,
        mean: distances.iter().sum::<f64>() / distances.len() as f64,
        median: median(&sorted),
        distances,
    })
}

/// Distances between extractor features of each image pair.
pub fn feature_distances(pairs: &[(Tensor, Tensor)], net: &TinyNet) -> Result<Vec<f64>, TransferError> {
    if pairs.is_empty() {
        return Err(TransferError::EmptyInput);
    }
    pairs
        .iter()
        .map(|(a, b)| {
            let fa = forward(net, a, Some(net.feature_cut))?;
            let fb = forward(net, b, Some(net.feature_cut))?;
            Ok(euclidean(&fa.data, &fb.data))
        })
        .collect()
}

pub fn feature_distance_histogram(
    pairs: &[(Tensor, Tensor)],
    net: &TinyNet,
    bins: usize,
) -> Result<DistanceHistogram, TransferError> {
    histogram_from_distances(feature_distances(pairs, net)?, bins)
}

/// Upper bound on `‖f(x) − f(y)‖ / ‖x − y‖` for the extractor: each strided
/// conv contributes `‖K‖_F·√(⌈kh/s⌉·⌈kw/s⌉)`, ReLU 1, and global average
/// pooling `1/√(h·w)`.
pub fn extractor_lipschitz_bound(net: &TinyNet) -> f64 {
    let mut bound = 1.0;
    for (i, layer) in net.layers[..net.feature_cut].iter().enumerate() {
        match layer {
            Layer::Conv(c) => {
                let fro = c.weight.iter().map(|w| w * w).sum::<f64>().sqrt();
                let overlap = c.kh.div_ceil(c.stride) * c.kw.div_ceil(c.stride);
                bound *= fro * (overlap as f64).sqrt();
            }
            Layer::GlobalAvgPool => {
                let s = net.shape_after(i);
                bound /= ((s.h * s.w) as f64).sqrt();
            }
            Layer::Linear(l) => bound *= l.weight.iter().map(|w| w * w).sum::<f64>().sqrt(),
            Layer::Relu => {}
        }
    }
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transferlab::net::{random_image, ArchSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_pairs_land_in_first_bin() {
        let net = TinyNet::random(&ArchSpec::default(), 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<_> = (0..5)
            .map(|_| {
                let x = random_image(net.input, &mut rng);
                (x.clone(), x)
            })
            .collect();
        let h = feature_distance_histogram(&pairs, &net, 4).unwrap();
        assert_eq!(h.counts, vec![5, 0, 0, 0]);
        assert!(h.distances.iter().all(|d| *d == 0.0));
        assert_eq!(h.median, 0.0);
    }

    #[test]
    fn perturbations_respect_lipschitz_bound() {
        let net = TinyNet::random(&ArchSpec::default(), 3, 2).unwrap();
        let bound = extractor_lipschitz_bound(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = random_image(net.input, &mut rng);
            let mut y = x.clone();
            y.data.iter_mut().for_each(|v| *v += rng.random_range(-1e-3..1e-3));
            let d = feature_distances(&[(x.clone(), y.clone())], &net).unwrap()[0];
            assert!(d <= bound * euclidean(&x.data, &y.data) * (1.0 + 1e-9), "{d} vs {bound}");
        }
    }

    #[test]
    fn scaling_features_scales_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Vec<f64>> = (0..20).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..20).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
        let lambda = 3.7;
        for (x, y) in a.iter().zip(&b) {
            let xs: Vec<f64> = x.iter().map(|v| v * lambda).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * lambda).collect();
            let (d, ds) = (euclidean(x, y), euclidean(&xs, &ys));
            assert!((ds - lambda * d).abs() <= 1e-12 * ds.max(1.0));
        }
    }

    #[test]
    fn counts_total_and_median() {
        let h = histogram_from_distances(vec![0.5, 3.0, 1.0, 2.0], 3).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 4);
        assert_eq!(h.counts, vec![1, 1, 2]);
        assert_eq!(h.median, 1.5);
        assert_eq!(h.edges.len(), 4);
        assert!(histogram_from_distances(vec![], 3).is_err());
    }
}
