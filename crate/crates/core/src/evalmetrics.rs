//! COCO-style box detection metrics.
//!
//! * AP at IoU threshold `t`: detections of one category sorted by score
//!   (ties by image id, then box coordinates), each matched greedily to the
//!   unmatched ground truth of the same image with the highest IoU ≥ `t`.
//!   Precision is made monotone from the right and sampled at the 101 recall
//!   points `0, 0.01, …, 1`; unreachable recall points contribute 0.
//! * `map` averages AP over categories and `t ∈ {0.50, 0.55, …, 0.95}`.
//! * `ar_100` averages final recall over the same categories and thresholds.
//! * At most `max_dets` detections per image are kept (highest scores,
//!   across categories) before any of the above.
//!
//! Categories without ground truth are left out of every mean. Recall
//! comparisons use exact integer arithmetic, so a recall of 7/100 reaches
//! the 0.07 point.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::AnnotationFile;
use crate::geometry::BBox2D;

pub const DEFAULT_MAX_DETS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("detection references unknown category {0}")]
    UnknownCategory(u32),
    #[error("invalid detection {index}: {message}")]
    InvalidDetection { index: usize, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
}

/// IoU thresholds 0.50:0.05:0.95, in hundredths.
pub const IOU_THRESHOLDS_PCT: [u32; 10] = [50, 55, 60, 65, 70, 75, 80, 85, 90, 95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectionRecord", into = "DetectionRecord")]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox2D,
    pub score: f64,
}

/// On-disk form: `bbox` is `[x, y, width, height]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    score: f64,
}

impl TryFrom<DetectionRecord> for Detection {
    type Error = String;

    fn try_from(r: DetectionRecord) -> Result<Self, String> {
        if !(r.bbox[2] >= 0.0 && r.bbox[3] >= 0.0) {
            return Err(format!("bbox {:?} has negative size", r.bbox));
        }
        let d = Detection {
            image_id: r.image_id,
            category_id: r.category_id,
            bbox: BBox2D::from_xywh(r.bbox),
            score: r.score,
        };
        d.check()?;
        Ok(d)
    }
}

impl From<Detection> for DetectionRecord {
    fn from(d: Detection) -> Self {
        Self {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        }
    }
}

impl Detection {
    fn check(&self) -> Result<(), String> {
        if !self.bbox.is_valid() {
            return Err(format!(
                "bbox {:?} is not a valid box",
                self.bbox.to_xywh()
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: BBox2D,
}

/// Ground-truth boxes and category ids of a generated dataset.
pub fn ground_truth_from_annotations(file: &AnnotationFile) -> (Vec<GroundTruth>, Vec<u32>) {
    let gts = file
        .annotations
        .iter()
        .map(|a| GroundTruth {
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: BBox2D::from_xywh(a.bbox),
        })
        .collect();
    (gts, file.categories.iter().map(|c| c.id).collect())
}

/// Perfect detections: every ground-truth box with score 1.
pub fn detections_from_ground_truth(gts: &[GroundTruth]) -> Vec<Detection> {
    gts.iter()
        .map(|g| Detection {
            image_id: g.image_id,
            category_id: g.category_id,
            bbox: g.bbox,
            score: 1.0,
        })
        .collect()
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>, EvalError> {
    serde_json::from_str(text).map_err(|e| EvalError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn bbox_key(b: &BBox2D) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

/// Score descending, then image id, then box coordinates.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_id.cmp(&b.image_id))
        .then_with(|| {
            bbox_key(&a.bbox)
                .iter()
                .zip(bbox_key(&b.bbox).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.category_id.cmp(&b.category_id))
}

/// Outcome of matching one category at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `true` for each detection in sorted order that matched.
    pub is_tp: Vec<bool>,
    pub num_gt: usize,
}

/// Greedy matching of already-sorted detections of one category.
pub fn match_detections(
    sorted: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> MatchResult {
    let mut by_image: HashMap<u64, Vec<(usize, bool)>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push((i, false));
    }
    let is_tp = sorted
        .iter()
        .map(|d| {
            let Some(cands) = by_image.get_mut(&d.image_id) else {
                return false;
            };
            let mut best: Option<(usize, f64)> = None;
            for (slot, (gi, used)) in cands.iter().enumerate() {
                if *used {
                    continue;
                }
                let v = iou(&d.bbox, &gts[*gi].bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((slot, v));
                }
            }
            match best {
                Some((slot, _)) => {
                    cands[slot].1 = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    MatchResult {
        is_tp,
        num_gt: gts.len(),
    }
}

/// 101-point interpolated AP from a match result. Zero ground truths give 0.
pub fn interpolated_ap(m: &MatchResult) -> f64 {
    if m.num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points: Vec<(usize, f64)> = Vec::with_capacity(m.is_tp.len());
    for (k, &hit) in m.is_tp.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    for k in (0..points.len().saturating_sub(1)).rev() {
        points[k].1 = points[k].1.max(points[k + 1].1);
    }
    let n = m.num_gt;
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..=100usize {
        // first point whose recall tp/n reaches r/100
        while k < points.len() && points[k].0 * 100 < r * n {
            k += 1;
        }
        if k == points.len() {
            break;
        }
        sum += points[k].1;
    }
    sum / 101.0
}

pub fn final_recall(m: &MatchResult) -> f64 {
    if m.num_gt == 0 {
        return 0.0;
    }
    m.is_tp.iter().filter(|t| **t).count() as f64 / m.num_gt as f64
}

/// AP of one category's detections at one threshold.
pub fn average_precision(detections: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> f64 {
    let mut sorted = detections.to_vec();
    sorted.sort_by(detection_order);
    interpolated_ap(&match_detections(&sorted, gts, iou_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category_id: u32,
    pub num_gt: usize,
    /// AP at each of the ten thresholds.
    pub ap_per_threshold: Vec<f64>,
    pub recall_per_threshold: Vec<f64>,
    pub ap: f64,
    pub ap_50: f64,
    pub ap_75: f64,
    pub ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub map_50: f64,
    pub map_75: f64,
    pub ar_100: f64,
    pub max_dets: usize,
    pub per_category: Vec<CategoryMetrics>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Keeps the `max_dets` best detections of each image.
fn cap_per_image(detections: &[Detection], max_dets: usize) -> Vec<Detection> {
    let mut by_image: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_image.entry(d.image_id).or_default().push(*d);
    }
    by_image
        .into_values()
        .flat_map(|mut v| {
            v.sort_by(detection_order);
            v.truncate(max_dets);
            v
        })
        .collect()
}

/// Full report over every category in `categories`.
pub fn evaluate(
    detections: &[Detection],
    gts: &[GroundTruth],
    categories: &[u32],
    max_dets: usize,
) -> Result<MetricsReport, EvalError> {
    let known: HashSet<u32> = categories.iter().copied().collect();
    for (index, d) in detections.iter().enumerate() {
        d.check()
            .map_err(|message| EvalError::InvalidDetection { index, message })?;
        if !known.contains(&d.category_id) {
            return Err(EvalError::UnknownCategory(d.category_id));
        }
    }
    let kept = cap_per_image(detections, max_dets);

    let mut ids: Vec<u32> = known.into_iter().collect();
    ids.sort_unstable();
    let mut per_category = Vec::new();
    for cat in ids {
        let cat_gts: Vec<GroundTruth> = gts
            .iter()
            .filter(|g| g.category_id == cat)
            .copied()
            .collect();
        if cat_gts.is_empty() {
            continue;
        }
        let mut dets: Vec<Detection> = kept
            .iter()
            .filter(|d| d.category_id == cat)
            .copied()
            .collect();
        dets.sort_by(detection_order);
        let (aps, recalls): (Vec<f64>, Vec<f64>) = IOU_THRESHOLDS_PCT
            .iter()
            .map(|&t| {
                let m = match_detections(&dets, &cat_gts, t as f64 / 100.0);
                (interpolated_ap(&m), final_recall(&m))
            })
            .unzip();
        per_category.push(CategoryMetrics {
            category_id: cat,
            num_gt: cat_gts.len(),
            ap: mean(aps.iter().copied()),
            ap_50: aps[0],
            ap_75: aps[5],
            ar: mean(recalls.iter().copied()),
            ap_per_threshold: aps,
            recall_per_threshold: recalls,
        });
    }
    Ok(MetricsReport {
        map: mean(per_category.iter().map(|c| c.ap)),
        map_50: mean(per_category.iter().map(|c| c.ap_50)),
        map_75: mean(per_category.iter().map(|c| c.ap_75)),
        ar_100: mean(per_category.iter().map(|c| c.ar)),
        max_dets,
        per_category,
    })
}

impl MetricsReport {
    /// Aligned two-column table with one row per headline metric.
    pub fn to_table(&self) -> String {
        let rows = [
            ("Prec [mAP]", self.map),
            ("Prec [mAP@0.5]", self.map_50),
            ("Prec [mAP@0.75]", self.map_75),
            (&format!("Acc [@{}]", self.max_dets)[..], self.ar_100),
        ];
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (label, v) in rows {
            let _ = writeln!(s, "{label:<width$}  {v:.3}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox2D {
        BBox2D::new(x0, y0, x1, y1)
    }

    fn det(image_id: u64, bbox: BBox2D, score: f64) -> Detection {
        Detection {
            image_id,
            category_id: 1,
            bbox,
            score,
        }
    }

    fn gt(image_id: u64, bbox: BBox2D) -> GroundTruth {
        GroundTruth {
            image_id,
            category_id: 1,
            bbox,
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 0.0, 30.0, 10.0)), 0.0);
        assert!((iou(&a, &b(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![gt(0, b(0.0, 0.0, 5.0, 5.0)), gt(1, b(3.0, 3.0, 9.0, 9.0))];
        let dets = detections_from_ground_truth(&gts);
        assert_eq!(average_precision(&dets, &gts, 0.5), 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5), 0.0);
        let r = evaluate(&dets, &gts, &[1], 100).unwrap();
        assert_eq!((r.map, r.map_50, r.map_75, r.ar_100), (1.0, 1.0, 1.0, 1.0));
    }

    /// Interpolated precision by scanning every PR point for each recall level.
    fn enumerate_ap(pr: &[(f64, f64)]) -> f64 {
        (0..=100)
            .map(|k| {
                pr.iter()
                    .filter(|(_, r)| *r >= k as f64 / 100.0 - 1e-12)
                    .map(|(p, _)| *p)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 101.0
    }

    #[test]
    fn three_detection_sequence() {
        let g1 = b(0.0, 0.0, 10.0, 10.0);
        let g2 = b(20.0, 20.0, 30.0, 30.0);
        let gts = vec![gt(0, g1), gt(0, g2)];
        let dets = vec![
            det(0, g1, 0.9),
            det(0, b(50.0, 50.0, 60.0, 60.0), 0.8),
            det(0, g2, 0.7),
        ];
        let expected = enumerate_ap(&[(1.0, 0.5), (0.5, 0.5), (2.0 / 3.0, 1.0)]);
        assert!((average_precision(&dets, &gts, 0.5) - expected).abs() < 1e-12);
        assert!((expected - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_straddle() {
        // shifted boxes with IoU exactly 0.6
        let gts: Vec<_> = (0..3).map(|i| gt(i, b(0.0, 0.0, 16.0, 10.0))).collect();
        let dets: Vec<_> = (0..3)
            .map(|i| det(i, b(4.0, 0.0, 20.0, 10.0), 0.9))
            .collect();
        assert!((iou(&dets[0].bbox, &gts[0].bbox) - 0.6).abs() < 1e-12);
        let r = evaluate(&dets, &gts, &[1], 100).unwrap();
        assert_eq!(r.map_50, 1.0);
        assert_eq!(r.map_75, 0.0);
    }

    #[test]
    fn duplicates_are_false_positives() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let gts = vec![gt(0, g)];
        let m = match_detections(&[det(0, g, 0.9), det(0, g, 0.8)], &gts, 0.5);
        assert_eq!(m.is_tp, vec![true, false]);
    }

    #[test]
    fn unknown_category_and_bad_scores() {
        let gts = vec![gt(0, b(0.0, 0.0, 1.0, 1.0))];
        let mut d = det(0, b(0.0, 0.0, 1.0, 1.0), 0.5);
        d.category_id = 9;
        assert_eq!(
            evaluate(&[d], &gts, &[1], 100),
            Err(EvalError::UnknownCategory(9))
        );
        d.category_id = 1;
        d.score = 1.5;
        assert!(matches!(
            evaluate(&[d], &gts, &[1], 100),
            Err(EvalError::InvalidDetection { .. })
        ));
    }

    #[test]
    fn max_dets_caps_per_image() {
        let gts: Vec<_> = (0..4)
            .map(|i| gt(0, b(10.0 * i as f64, 0.0, 10.0 * i as f64 + 5.0, 5.0)))
            .collect();
        let dets: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| det(0, g.bbox, 0.9 - 0.1 * i as f64))
            .collect();
        let r = evaluate(&dets, &gts, &[1], 2).unwrap();
        assert_eq!(r.ar_100, 0.5);
        assert!(r.to_table().contains("Acc [@2]"));
    }

    #[test]
    fn detections_json_round_trip() {
        let text =
            r#"[{"image_id": 3, "category_id": 1, "bbox": [1.0, 2.0, 3.0, 4.0], "score": 0.5}]"#;
        let dets = parse_detections(text).unwrap();
        assert_eq!(dets[0].bbox, b(1.0, 2.0, 4.0, 6.0));
        let again = parse_detections(&serde_json::to_string(&dets).unwrap()).unwrap();
        assert_eq!(again, dets);
        assert!(matches!(
            parse_detections(
                r#"[{"image_id": 3, "category_id": 1, "bbox": [1, 2, -1, 4], "score": 0.5}]"#
            ),
            Err(EvalError::ParseError { .. })
        ));
    }

    #[test]
    fn table_labels() {
        let r = evaluate(&[], &[gt(0, b(0.0, 0.0, 1.0, 1.0))], &[1], 100).unwrap();
        let t = r.to_table();
        for label in [
            "Prec [mAP]",
            "Prec [mAP@0.5]",
            "Prec [mAP@0.75]",
            "Acc [@100]",
        ] {
            assert!(t.contains(label));
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
        let boxy = (0u8..4, 0u8..4, 1u8..4, 1u8..4).prop_map(|(x, y, w, h)| {
            b(
                x as f64 * 3.0,
                y as f64 * 3.0,
                (x + w) as f64 * 3.0,
                (y + h) as f64 * 3.0,
            )
        });
        let g = proptest::collection::vec((0u64..3, boxy.clone()), 1..5);
        let d = proptest::collection::vec((0u64..3, boxy, 1u8..5), 0..6);
        (g, d).prop_map(|(g, d)| {
            (
                d.into_iter()
                    .map(|(i, bb, s)| det(i, bb, s as f64 / 4.0))
                    .collect(),
                g.into_iter().map(|(i, bb)| gt(i, bb)).collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn ap_monotone_in_threshold((dets, gts) in instance()) {
            let aps: Vec<f64> = IOU_THRESHOLDS_PCT.iter().map(|t| average_precision(&dets, &gts, *t as f64 / 100.0)).collect();
            prop_assert!(aps.windows(2).all(|w| w[0] >= w[1]));
            let r = evaluate(&dets, &gts, &[1], 100).unwrap();
            prop_assert!(r.map_50 >= r.map_75);
            for v in [r.map, r.map_50, r.map_75, r.ar_100] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn input_order_does_not_matter((dets, gts) in instance(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(evaluate(&dets, &gts, &[1], 100).unwrap(), evaluate(&shuffled, &gts, &[1], 100).unwrap());
        }

        #[test]
        fn unmatched_lowest_detection_changes_nothing((dets, gts) in instance(), x in 0u8..9, y in 0u8..9) {
            let mut more = dets.clone();
            more.push(det(0, b(x as f64, y as f64, x as f64 + 4.0, y as f64 + 4.0), 0.0));
            more.sort_by(detection_order);
            prop_assert_eq!(more.last().unwrap().score, 0.0);
            let m = match_detections(&more, &gts, 0.5);
            if !m.is_tp.last().unwrap() {
                prop_assert_eq!(average_precision(&more, &gts, 0.5), average_precision(&dets, &gts, 0.5));
            }
        }
    }
}
