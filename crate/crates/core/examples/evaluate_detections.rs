//! Scores jittered copies of ground-truth boxes, with some misses and
//! false alarms, under the COCO-style metrics.
//!
//!     cargo run --example evaluate_detections

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthfreeze::evalmetrics::{evaluate, Detection, GroundTruth, DEFAULT_MAX_DETS};
use synthfreeze::geometry::BBox2D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gts = Vec::new();
    for image_id in 0..20u64 {
        for _ in 0..3 {
            let (x, y) = (rng.random_range(0.0..500.0), rng.random_range(0.0..350.0));
            let (w, h) = (rng.random_range(30.0..120.0), rng.random_range(30.0..120.0));
            gts.push(GroundTruth {
                image_id,
                category_id: rng.random_range(1..=2),
                bbox: BBox2D::new(x, y, x + w, y + h),
            });
        }
    }
    let mut dets = Vec::new();
    for g in &gts {
        if rng.random::<f64>() < 0.15 {
            continue;
        }
        let j = |v: f64, rng: &mut ChaCha8Rng| v + rng.random_range(-6.0..6.0);
        let b = g.bbox;
        let (x0, y0) = (j(b.x_min, &mut rng), j(b.y_min, &mut rng));
        dets.push(Detection {
            image_id: g.image_id,
            category_id: g.category_id,
            bbox: BBox2D::new(x0, y0, j(b.x_max, &mut rng).max(x0), j(b.y_max, &mut rng).max(y0)),
            score: rng.random_range(0.3..1.0),
        });
    }
    for image_id in 0..20u64 {
        dets.push(Detection {
            image_id,
            category_id: 1,
            bbox: BBox2D::new(600.0, 10.0, 630.0, 40.0),
            score: rng.random_range(0.0..0.6),
        });
    }
    let report = evaluate(&dets, &gts, &[1, 2], DEFAULT_MAX_DETS)?;
    print!("{}", report.to_table());
    for c in &report.per_category {
        println!("category {}: {} gt, AP@0.5 {:.3}", c.category_id, c.num_gt, c.ap_50);
    }
    Ok(())
}
