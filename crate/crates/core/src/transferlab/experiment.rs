//! Two-stage transfer protocol on rendered crops.
//!
//! Stage 1 trains the whole net on the real-proxy domain. Stage 2 starts
//! from that net with a fresh head, trains on the plain-synthetic domain
//! under a freeze schedule, and is scored on held-out real-proxy crops.
//! "Real" here means renders with strong lighting and material jitter,
//! object noise and blur; "plain" means the same objects rendered under
//! fixed lighting with no noise or blur. Both use cluttered backgrounds.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::histogram::{feature_distances, histogram_with_range, DistanceHistogram};
use super::net::{
    backward_and_step, forward, FEATURE_CUT, ArchSpec, BatchItem, FreezeSchedule, Optimizer, Tensor, TinyNet, TrainConfig,
};
use super::TransferError;
use crate::compositor::{ComposeSpec, Placement};
use crate::datagen::{BackgroundSource, GenerationConfig, ObjectSource, ObjectSpec, SampleGenerator};
use crate::geometry::{CameraIntrinsics, PrimitiveKind};
use crate::renderer::{JitterSpec, LightSpec, PhongMaterial};
use crate::substream::{mix64, substream};
use crate::viewsampler::PoseGridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainName {
    RealProxy,
    PlainSynthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    /// Procedural clutter with rotation, flip and channel-swap augmentation.
    Cluttered,
    /// One random flat color per crop.
    Solid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: DomainName,
    pub light_jitter: bool,
    pub noise_sigma_range: [f64; 2],
    pub blur_sigma_range: [f64; 2],
    pub background: BackgroundMode,
    pub channel_swap: bool,
}

impl DomainSpec {
    pub fn real_proxy() -> Self {
        Self {
            name: DomainName::RealProxy,
            light_jitter: true,
            noise_sigma_range: [10.0, 25.0],
            blur_sigma_range: [0.6, 1.4],
            background: BackgroundMode::Cluttered,
            channel_swap: true,
        }
    }

    pub fn plain_synthetic() -> Self {
        Self {
            name: DomainName::PlainSynthetic,
            light_jitter: false,
            noise_sigma_range: [0.0, 0.0],
            blur_sigma_range: [0.0, 0.0],
            background: BackgroundMode::Cluttered,
            channel_swap: false,
        }
    }

    pub fn validate(&self) -> Result<(), TransferError> {
        self.compose_spec()
            .validate()
            .map_err(|e| TransferError::InvalidConfig(e.to_string()))
    }

    fn compose_spec(&self) -> ComposeSpec {
        let cluttered = self.background == BackgroundMode::Cluttered;
        ComposeSpec {
            noise_sigma_range: self.noise_sigma_range,
            blur_sigma_range: self.blur_sigma_range,
            placement: Placement::FullInside,
            channel_swap: self.channel_swap && cluttered,
            flips: cluttered,
            rotations: if cluttered { vec![0, 90, 180, 270] } else { vec![0] },
        }
    }
}

/// Ten shape classes built from the primitive generators, each with its
/// own base color.
pub fn default_crop_objects() -> Vec<ObjectSpec> {
    let (red, green, blue, yellow, purple) = (
        [0.85, 0.25, 0.2],
        [0.2, 0.65, 0.3],
        [0.25, 0.35, 0.85],
        [0.9, 0.8, 0.2],
        [0.75, 0.3, 0.8],
    );
    let colors = [red, green, green, blue, yellow, purple, blue, yellow, purple, red];
    let kinds = [
        ("cube", PrimitiveKind::Cube { edge: 0.16 }),
        (
            "disc",
            PrimitiveKind::Cylinder {
                radius: 0.13,
                height: 0.08,
                segments: 24,
            },
        ),
        (
            "rod",
            PrimitiveKind::Cylinder {
                radius: 0.045,
                height: 0.26,
                segments: 16,
            },
        ),
        (
            "hex_prism",
            PrimitiveKind::Cylinder {
                radius: 0.1,
                height: 0.18,
                segments: 6,
            },
        ),
        (
            "cone",
            PrimitiveKind::Cone {
                radius: 0.1,
                height: 0.18,
                segments: 24,
            },
        ),
        (
            "pyramid",
            PrimitiveKind::Cone {
                radius: 0.11,
                height: 0.16,
                segments: 4,
            },
        ),
        (
            "ring",
            PrimitiveKind::Torus {
                major_radius: 0.11,
                minor_radius: 0.025,
                major_segments: 32,
                minor_segments: 12,
            },
        ),
        (
            "donut",
            PrimitiveKind::Torus {
                major_radius: 0.09,
                minor_radius: 0.05,
                major_segments: 32,
                minor_segments: 16,
            },
        ),
        ("icosahedron", PrimitiveKind::Icosphere { radius: 0.135, level: 0 }),
        ("sphere", PrimitiveKind::Icosphere { radius: 0.13, level: 3 }),
    ];
    kinds
        .into_iter()
        .enumerate()
        .zip(colors)
        .map(|((i, (name, kind)), color)| ObjectSpec {
            class_id: i as u32 + 1,
            class_name: name.into(),
            source: ObjectSource::Primitive(kind),
            color: Some(color),
        })
        .collect()
}

fn crop_pose_grid() -> PoseGridSpec {
    PoseGridSpec {
        subdivision_level: 2,
        in_plane_count: 8,
        in_plane_range: [0.0, 360.0],
        distance_min: 1.25,
        distance_max: 1.7,
        scale_levels: 3,
        hemisphere_only: false,
    }
}

/// Missing keys take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objects: Vec<ObjectSpec>,
    pub crop_size: u32,
    pub focal: f64,
    pub pose_grid: PoseGridSpec,
    #[serde(default)]
    pub material: PhongMaterial,
    #[serde(default)]
    pub light: LightSpec,
    /// Lighting and material jitter for domains with `light_jitter` on.
    #[serde(default)]
    pub jitter: JitterSpec,
    pub real_proxy: DomainSpec,
    pub plain_synthetic: DomainSpec,
    /// Procedural clutter images per domain.
    pub clutter_pool: usize,
    pub train_per_domain: usize,
    pub test_count: usize,
    pub distance_pairs: usize,
    pub histogram_bins: usize,
    pub data_seed: u64,
    pub arch: ArchSpec,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub schedules: Vec<FreezeSchedule>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let stage = TrainConfig::default();
        Self {
            objects: default_crop_objects(),
            crop_size: 64,
            focal: 280.0,
            pose_grid: crop_pose_grid(),
            material: PhongMaterial::default(),
            light: LightSpec::default(),
            jitter: JitterSpec {
                material_jitter: 0.5,
                light_color_jitter: 0.8,
                light_cone_angle: 90.0,
            },
            real_proxy: DomainSpec::real_proxy(),
            plain_synthetic: DomainSpec::plain_synthetic(),
            clutter_pool: 24,
            train_per_domain: 2000,
            test_count: 1000,
            distance_pairs: 300,
            histogram_bins: 20,
            data_seed: 1,
            arch: ArchSpec::default(),
            stage1: stage,
            stage2: TrainConfig { steps: 1000, ..stage },
            schedules: vec![FreezeSchedule::frozen(FEATURE_CUT), FreezeSchedule::none()],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        let bad = |m: String| Err(TransferError::InvalidConfig(m));
        if self.objects.len() < 2 {
            return bad("objects: need at least two classes".into());
        }
        if self.crop_size as usize != self.arch.input_size {
            return bad(format!(
                "crop_size {} differs from arch.input_size {}",
                self.crop_size, self.arch.input_size
            ));
        }
        if self.train_per_domain == 0 || self.test_count == 0 {
            return bad("train_per_domain and test_count must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive".into());
        }
        if self.clutter_pool == 0 {
            return bad("clutter_pool must be positive".into());
        }
        self.real_proxy.validate()?;
        self.plain_synthetic.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        let net = TinyNet::zeros(&self.arch, self.objects.len())?;
        for (i, s) in self.schedules.iter().enumerate() {
            if s.frozen_prefix_layers > net.layers.len() {
                return bad(format!("schedules[{i}].frozen_prefix_layers exceeds {}", net.layers.len()));
            }
        }
        self.generation_config(&self.real_proxy, 0, 1)
            .validate()
            .map_err(|e| TransferError::InvalidConfig(e.to_string()))
    }

    /// Generation settings producing `count` crops of `domain`.
    pub fn generation_config(&self, domain: &DomainSpec, master_seed: u64, count: u64) -> GenerationConfig {
        GenerationConfig {
            objects: self.objects.clone(),
            camera: CameraIntrinsics::centered(self.focal, self.crop_size, self.crop_size),
            pose_grid: self.pose_grid.clone(),
            material: self.material,
            light: self.light,
            jitter: if domain.light_jitter {
                self.jitter
            } else {
                JitterSpec::none()
            },
            compose: domain.compose_spec(),
            backgrounds: match domain.background {
                BackgroundMode::Cluttered => BackgroundSource::Procedural {
                    count: self.clutter_pool,
                    seed: mix64(self.data_seed ^ 0xC1u64),
                },
                BackgroundMode::Solid => BackgroundSource::Solid,
            },
            sample_count: count,
            master_seed,
            output_dir: None,
            emit_masks: false,
            exhaustive: false,
        }
    }

    pub fn classes(&self) -> usize {
        self.objects.len()
    }

    /// Copy whose `data_seed` is derived from the run seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            data_seed: mix64(self.data_seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.clone()
        }
    }
}

/// Interleaved RGB crops with class labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct CropSet {
    pub size: usize,
    pub pixels: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
}

impl CropSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tensor(&self, i: usize) -> Tensor {
        Tensor::from_rgb8(self.size, self.size, &self.pixels[i]).expect("crop buffers have the crop size")
    }
}

fn data_err(e: crate::datagen::DatagenError) -> TransferError {
    TransferError::Data(e.to_string())
}

/// `count` crops from `domain`, sample `i` labelled with its object index.
pub fn generate_crops(
    config: &ExperimentConfig,
    domain: &DomainSpec,
    master_seed: u64,
    count: usize,
) -> Result<CropSet, TransferError> {
    let g = SampleGenerator::new(&config.generation_config(domain, master_seed, count as u64)).map_err(data_err)?;
    let samples: Vec<(Vec<u8>, usize)> = (0..count as u64)
        .into_par_iter()
        .map(|i| Ok((g.sample(i).map_err(data_err)?.image.into_raw(), g.object_of(i))))
        .collect::<Result<_, TransferError>>()?;
    let (pixels, labels) = samples.into_iter().unzip();
    Ok(CropSet {
        size: config.crop_size as usize,
        pixels,
        labels,
    })
}

/// Real-proxy and plain crops of the same object at the same grid pose.
pub fn paired_crops(config: &ExperimentConfig, count: usize) -> Result<Vec<(Tensor, Tensor)>, TransferError> {
    let seed = config.data_seed;
    let real = SampleGenerator::new(&config.generation_config(&config.real_proxy, mix64(seed ^ 0xA3), count as u64))
        .map_err(data_err)?;
    let plain =
        SampleGenerator::new(&config.generation_config(&config.plain_synthetic, mix64(seed ^ 0xA4), count as u64))
            .map_err(data_err)?;
    check_fit(config, &real)?;
    let n_poses = real.poses().len();
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let pose = substream(mix64(seed ^ 0xA5), i).random_range(0..n_poses);
            let a = real.sample_with_pose(i, Some(pose)).map_err(data_err)?;
            let b = plain.sample_with_pose(i, Some(pose)).map_err(data_err)?;
            let size = config.crop_size as usize;
            Ok((
                Tensor::from_rgb8(size, size, a.image.as_raw())?,
                Tensor::from_rgb8(size, size, b.image.as_raw())?,
            ))
        })
        .collect()
}

/// A fixed pose cannot be redrawn, so every object must fit the crop at
/// the nearest grid distance in any orientation.
fn check_fit(config: &ExperimentConfig, g: &SampleGenerator) -> Result<(), TransferError> {
    let half = config.crop_size as f64 / 2.0;
    let d = config.pose_grid.distance_min;
    for (mesh, spec) in g.meshes().iter().zip(&config.objects) {
        let r = mesh.bounding_radius();
        if r >= d || config.focal * r / (d * d - r * r).sqrt() > half {
            return Err(TransferError::InvalidConfig(format!(
                "object {} (radius {r:.3}) does not fit a {}px crop at distance {d}",
                spec.class_name, config.crop_size
            )));
        }
    }
    Ok(())
}

/// All crops the protocol needs, generated once per data seed.
pub struct ExperimentData {
    pub real_train: CropSet,
    pub plain_train: CropSet,
    pub real_test: CropSet,
    pub pairs: Vec<(Tensor, Tensor)>,
}

impl ExperimentData {
    pub fn generate(config: &ExperimentConfig) -> Result<Self, TransferError> {
        let s = config.data_seed;
        Ok(Self {
            real_train: generate_crops(config, &config.real_proxy, mix64(s ^ 0xA0), config.train_per_domain)?,
            plain_train: generate_crops(config, &config.plain_synthetic, mix64(s ^ 0xA1), config.train_per_domain)?,
            real_test: generate_crops(config, &config.real_proxy, mix64(s ^ 0xA2), config.test_count)?,
            pairs: if config.distance_pairs > 0 {
                paired_crops(config, config.distance_pairs)?
            } else {
                Vec::new()
            },
        })
    }
}

/// Inputs to layer `start` of `net` for every crop.
fn activations(net: &TinyNet, crops: &CropSet, start: usize) -> Vec<Tensor> {
    (0..crops.len())
        .map(|i| {
            let x = crops.tensor(i);
            if start == 0 {
                x
            } else {
                forward(net, &x, Some(start)).expect("crop matches net input")
            }
        })
        .collect()
}

/// Trains `net` in place and returns the loss of every step. When the
/// schedule never trains layers below its frozen prefix, the prefix output
/// is computed once per crop instead of every step.
pub fn train(
    net: &mut TinyNet,
    crops: &CropSet,
    schedule: &FreezeSchedule,
    config: &TrainConfig,
) -> Result<Vec<f64>, TransferError> {
    config.validate()?;
    if crops.is_empty() {
        return Err(TransferError::EmptyInput);
    }
    let start = match schedule.unfreeze_at_step {
        None => schedule.frozen_prefix_layers.min(net.layers.len()),
        Some(_) => 0,
    };
    let cached = (start > 0).then(|| activations(net, crops, start));
    let mut optimizer = Optimizer::new(net);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..crops.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let mut idx = Vec::with_capacity(config.batch_size);
        while idx.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let owned: Vec<Tensor>;
        let inputs: Vec<&Tensor> = match &cached {
            Some(acts) => idx.iter().map(|&i| &acts[i]).collect(),
            None => {
                owned = idx.iter().map(|&i| crops.tensor(i)).collect();
                owned.iter().collect()
            }
        };
        let batch: Vec<BatchItem> = inputs
            .iter()
            .zip(&idx)
            .map(|(x, &i)| BatchItem {
                input: x,
                label: crops.labels[i],
            })
            .collect();
        losses.push(backward_and_step(net, &mut optimizer, &batch, start, schedule, config, step)?);
    }
    Ok(losses)
}

pub fn accuracy(net: &TinyNet, crops: &CropSet) -> f64 {
    let correct = (0..crops.len())
        .filter(|&i| {
            let logits = forward(net, &crops.tensor(i), None).expect("crop matches net input").data;
            let pred = (0..logits.len())
                .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
                .expect("at least one class");
            pred == crops.labels[i]
        })
        .count();
    correct as f64 / crops.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Row {
    pub seed: u64,
    pub holdout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub schedule: FreezeSchedule,
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub classes: usize,
    pub stage1: Vec<Stage1Row>,
    pub runs: Vec<RunRow>,
    /// Pair distances under the Stage-1 extractor, pooled over seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_frozen: Option<DistanceHistogram>,
    /// Pair distances under the extractor finetuned without any freezing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_finetuned: Option<DistanceHistogram>,
}

fn stage1_init(config: &ExperimentConfig, seed: u64) -> Result<TinyNet, TransferError> {
    let mut net = TinyNet::random(&config.arch, config.classes(), mix64(seed ^ 0x5EED_0001))?;
    net.reinit_head(mix64(seed ^ 0x5EED_0005));
    Ok(net)
}

fn stage2_seed(seed: u64, k: usize) -> u64 {
    mix64(seed ^ 0x5EED_0002 ^ ((k as u64) << 32))
}

struct SeedOutcome {
    stage1: Stage1Row,
    runs: Vec<RunRow>,
    frozen_distances: Vec<f64>,
    finetuned_distances: Option<Vec<f64>>,
}

fn run_seed(
    config: &ExperimentConfig,
    data: &ExperimentData,
    schedules: &[FreezeSchedule],
    seed: u64,
) -> Result<SeedOutcome, TransferError> {
    let mut net = stage1_init(config, seed)?;
    let stage1_cfg = TrainConfig {
        seed: mix64(seed ^ 0x5EED_0003),
        ..config.stage1
    };
    train(&mut net, &data.real_train, &FreezeSchedule::none(), &stage1_cfg)?;
    let stage1 = Stage1Row {
        seed,
        holdout_accuracy: accuracy(&net, &data.real_test),
    };
    let frozen_distances = if data.pairs.is_empty() {
        Vec::new()
    } else {
        feature_distances(&data.pairs, &net)?
    };

    let mut runs = Vec::new();
    let mut finetuned_distances = None;
    for (k, schedule) in schedules.iter().enumerate() {
        let mut student = net.clone();
        student.reinit_head(stage2_seed(seed, k));
        let cfg = TrainConfig {
            seed: mix64(seed ^ 0x5EED_0004 ^ ((k as u64) << 32)),
            ..config.stage2
        };
        let losses = train(&mut student, &data.plain_train, schedule, &cfg)?;
        runs.push(RunRow {
            schedule: *schedule,
            seed,
            accuracy: accuracy(&student, &data.real_test),
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
        });
        if *schedule == FreezeSchedule::none() && !data.pairs.is_empty() && finetuned_distances.is_none() {
            finetuned_distances = Some(feature_distances(&data.pairs, &student)?);
        }
    }
    Ok(SeedOutcome {
        stage1,
        runs,
        frozen_distances,
        finetuned_distances,
    })
}

/// Runs the protocol for every seed on `jobs` worker threads. Each seed
/// draws its own crops (see [`ExperimentConfig::for_seed`]), so the mean
/// over seeds also averages over data draws. Results do not depend on
/// `jobs`.
pub fn run_transfer_experiment(
    config: &ExperimentConfig,
    schedules: &[FreezeSchedule],
    jobs: usize,
) -> Result<ExperimentReport, TransferError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TransferError::InvalidConfig(e.to_string()))?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let data = ExperimentData::generate(&config.for_seed(seed))?;
                run_seed(config, &data, schedules, seed)
            })
            .collect::<Result<_, _>>()
    })?;

    let frozen: Vec<f64> = outcomes.iter().flat_map(|o| o.frozen_distances.iter().copied()).collect();
    let finetuned: Option<Vec<f64>> = outcomes
        .iter()
        .map(|o| o.finetuned_distances.clone())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());
    let upper = frozen
        .iter()
        .chain(finetuned.iter().flatten())
        .copied()
        .fold(0.0, f64::max);
    let hist = |d: Vec<f64>| -> Result<Option<DistanceHistogram>, TransferError> {
        if d.is_empty() {
            Ok(None)
        } else {
            histogram_with_range(d, config.histogram_bins, Some(upper)).map(Some)
        }
    };
    Ok(ExperimentReport {
        classes: config.classes(),
        stage1: outcomes.iter().map(|o| o.stage1.clone()).collect(),
        runs: outcomes.iter().flat_map(|o| o.runs.iter().cloned()).collect(),
        distance_frozen: hist(frozen)?,
        distance_finetuned: match finetuned {
            Some(d) => hist(d)?,
            None => None,
        },
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

impl ExperimentReport {
    pub fn accuracies(&self, schedule: &FreezeSchedule) -> Vec<f64> {
        self.runs.iter().filter(|r| r.schedule == *schedule).map(|r| r.accuracy).collect()
    }

    pub fn mean_accuracy(&self, schedule: &FreezeSchedule) -> Option<f64> {
        let a = self.accuracies(schedule);
        (!a.is_empty()).then(|| mean_std(&a).0)
    }

    fn schedules(&self) -> Vec<FreezeSchedule> {
        let mut out: Vec<FreezeSchedule> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.schedule) {
                out.push(r.schedule);
            }
        }
        out
    }

    /// Accuracy against frozen prefix depth, then against unfreeze step.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let stage1: Vec<f64> = self.stage1.iter().map(|r| r.holdout_accuracy).collect();
        let (m, sd) = mean_std(&stage1);
        let _ = writeln!(s, "stage 1 real-proxy holdout accuracy: {m:.3} ± {sd:.3} over {} seeds", stage1.len());
        let _ = writeln!(s, "chance level: {:.3}", 1.0 / self.classes as f64);
        let schedules = self.schedules();
        let depth: Vec<_> = schedules.iter().filter(|s| s.unfreeze_at_step.is_none()).collect();
        let delayed: Vec<_> = schedules.iter().filter(|s| s.unfreeze_at_step.is_some()).collect();
        if !depth.is_empty() {
            let _ = writeln!(s, "\nfrozen prefix layers  mean acc  std     per seed");
            for sch in depth {
                let a = self.accuracies(sch);
                let (m, sd) = mean_std(&a);
                let per: Vec<String> = a.iter().map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(s, "{:<21}  {m:<8.3}  {sd:<6.3}  {}", sch.frozen_prefix_layers, per.join(" "));
            }
        }
        if !delayed.is_empty() {
            let _ = writeln!(s, "\nunfreeze at step  frozen prefix  mean acc  std");
            for sch in delayed {
                let (m, sd) = mean_std(&self.accuracies(sch));
                let _ = writeln!(
                    s,
                    "{:<16}  {:<13}  {m:<8.3}  {sd:.3}",
                    sch.unfreeze_at_step.expect("filtered"),
                    sch.frozen_prefix_layers
                );
            }
        }
        for (name, h) in [("stage-1 extractor", &self.distance_frozen), ("finetuned extractor", &self.distance_finetuned)] {
            if let Some(h) = h {
                let _ = writeln!(s, "\npair feature distance, {name}: median {:.4}, mean {:.4}", h.median, h.mean);
                let peak = h.counts.iter().copied().max().unwrap_or(1).max(1);
                for (k, c) in h.counts.iter().enumerate() {
                    let bar = "#".repeat((40 * c / peak) as usize);
                    let _ = writeln!(s, "  [{:>8.4}, {:>8.4})  {c:>5}  {bar}", h.edges[k], h.edges[k + 1]);
                }
            }
        }
        s
    }
}

/// One pipeline toggle combination for the Stage-2 training domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub blur: bool,
    pub noise: bool,
    pub light_jitter: bool,
    pub background: BackgroundMode,
}

impl Toggles {
    /// All 16 combinations, full pipeline first.
    pub fn matrix() -> Vec<Toggles> {
        let mut out = Vec::with_capacity(16);
        for background in [BackgroundMode::Cluttered, BackgroundMode::Solid] {
            for light_jitter in [true, false] {
                for noise in [true, false] {
                    for blur in [true, false] {
                        out.push(Toggles {
                            blur,
                            noise,
                            light_jitter,
                            background,
                        });
                    }
                }
            }
        }
        out
    }

    /// `base` with each disabled block switched off.
    pub fn apply(&self, base: &DomainSpec) -> DomainSpec {
        DomainSpec {
            name: DomainName::PlainSynthetic,
            light_jitter: base.light_jitter && self.light_jitter,
            noise_sigma_range: if self.noise { base.noise_sigma_range } else { [0.0, 0.0] },
            blur_sigma_range: if self.blur { base.blur_sigma_range } else { [0.0, 0.0] },
            background: self.background,
            channel_swap: base.channel_swap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub schedule: FreezeSchedule,
    /// Stage-2 training crops per toggle combination.
    pub train_per_combo: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            schedule: FreezeSchedule::frozen(FEATURE_CUT),
            train_per_combo: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub toggles: Toggles,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Trains one Stage-1 net per seed on real-proxy crops, then for every
/// toggle combination trains a fresh head (under `ablation.schedule`) on
/// crops generated with that combination and scores it on real-proxy test
/// crops.
pub fn run_ablation(
    config: &ExperimentConfig,
    ablation: &AblationConfig,
    jobs: usize,
) -> Result<AblationReport, TransferError> {
    config.validate()?;
    if ablation.train_per_combo == 0 {
        return Err(TransferError::InvalidConfig("train_per_combo must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TransferError::InvalidConfig(e.to_string()))?;
    pool.install(|| {
        let s = config.data_seed;
        let real_train = generate_crops(config, &config.real_proxy, mix64(s ^ 0xA0), config.train_per_domain)?;
        let real_test = generate_crops(config, &config.real_proxy, mix64(s ^ 0xA2), config.test_count)?;
        let stage1: Vec<TinyNet> = config
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut net = stage1_init(config, seed)?;
                let cfg = TrainConfig {
                    seed: mix64(seed ^ 0x5EED_0003),
                    ..config.stage1
                };
                train(&mut net, &real_train, &FreezeSchedule::none(), &cfg)?;
                Ok(net)
            })
            .collect::<Result<_, TransferError>>()?;
        let rows = Toggles::matrix()
            .into_iter()
            .enumerate()
            .map(|(k, toggles)| {
                let domain = toggles.apply(&config.real_proxy);
                let crops = generate_crops(config, &domain, mix64(s ^ 0xB0 ^ ((k as u64) << 8)), ablation.train_per_combo)?;
                let accuracies: Vec<f64> = stage1
                    .par_iter()
                    .zip(&config.seeds)
                    .map(|(net, &seed)| {
                        let mut student = net.clone();
                        student.reinit_head(stage2_seed(seed, 0));
                        let cfg = TrainConfig {
                            seed: mix64(seed ^ 0x5EED_0004),
                            ..config.stage2
                        };
                        train(&mut student, &crops, &ablation.schedule, &cfg)?;
                        Ok(accuracy(&student, &real_test))
                    })
                    .collect::<Result<_, TransferError>>()?;
                Ok(AblationRow {
                    toggles,
                    mean_accuracy: mean_std(&accuracies).0,
                    accuracies,
                })
            })
            .collect::<Result<Vec<_>, TransferError>>()?;
        Ok(AblationReport { rows })
    })
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        let mut s = String::from("blur  noise  light jitter  background  mean acc  per seed\n");
        for r in &self.rows {
            let t = r.toggles;
            let bg = match t.background {
                BackgroundMode::Cluttered => "cluttered",
                BackgroundMode::Solid => "solid",
            };
            let per: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.3}")).collect();
            let _ = writeln!(
                s,
                "{:<4}  {:<5}  {:<12}  {bg:<10}  {:<8.3}  {}",
                on(t.blur),
                on(t.noise),
                on(t.light_jitter),
                r.mean_accuracy,
                per.join(" ")
            );
        }
        s
    }

    /// Mean accuracy with every block on minus the same with blur off.
    pub fn blur_delta(&self) -> Option<f64> {
        let find = |blur: bool| {
            self.rows
                .iter()
                .find(|r| {
                    r.toggles
                        == Toggles {
                            blur,
                            noise: true,
                            light_jitter: true,
                            background: BackgroundMode::Cluttered,
                        }
                })
                .map(|r| r.mean_accuracy)
        };
        Some(find(true)? - find(false)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            crop_size: 32,
            focal: 75.0,
            train_per_domain: 40,
            test_count: 20,
            distance_pairs: 6,
            histogram_bins: 4,
            clutter_pool: 4,
            seeds: vec![1, 2],
            ..Default::default()
        };
        c.arch.input_size = 32;
        c.objects.truncate(3);
        c.pose_grid.subdivision_level = 1;
        c.stage1.steps = 5;
        c.stage1.batch_size = 4;
        c.stage2 = c.stage1;
        c
    }

    #[test]
    fn report_has_row_per_schedule_and_seed() {
        let c = tiny_config();
        let data = ExperimentData::generate(&c.for_seed(1)).unwrap();
        assert_eq!(data.real_train.len(), 40);
        assert!(data.real_train.labels.iter().all(|l| *l < 3));
        let schedules = [FreezeSchedule::frozen(FEATURE_CUT), FreezeSchedule::none(), FreezeSchedule {
            frozen_prefix_layers: 5,
            unfreeze_at_step: Some(2),
        }];
        let r = run_transfer_experiment(&c, &schedules, 1).unwrap();
        assert_eq!(r.runs.len(), 6);
        assert!(r.runs.iter().all(|row| (0.0..=1.0).contains(&row.accuracy)));
        let f = r.distance_frozen.as_ref().unwrap();
        assert_eq!(f.counts.iter().sum::<u64>(), 12);
        assert_eq!(r.distance_finetuned.as_ref().unwrap().edges, f.edges);
        let table = r.to_table();
        assert!(table.contains("frozen prefix layers"));
        assert!(table.contains("unfreeze at step"));
        // same result on more workers
        assert_eq!(run_transfer_experiment(&c, &schedules, 3).unwrap(), r);
    }

    #[test]
    fn paired_crops_share_pose_and_class() {
        let c = tiny_config();
        let pairs = paired_crops(&c, 4).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|(a, b)| a.shape == b.shape && a != b));
    }

    #[test]
    fn toggle_matrix_is_complete() {
        let m = Toggles::matrix();
        assert_eq!(m.len(), 16);
        for (i, a) in m.iter().enumerate() {
            assert!(m[i + 1..].iter().all(|b| b != a));
        }
        let off = Toggles {
            blur: false,
            noise: false,
            light_jitter: false,
            background: BackgroundMode::Solid,
        }
        .apply(&DomainSpec::real_proxy());
        assert_eq!(off.blur_sigma_range, [0.0, 0.0]);
        assert_eq!(off.noise_sigma_range, [0.0, 0.0]);
        assert!(!off.light_jitter);
    }

    #[test]
    fn crops_are_deterministic() {
        let c = tiny_config();
        let a = generate_crops(&c, &c.real_proxy, 5, 6).unwrap();
        let b = generate_crops(&c, &c.real_proxy, 5, 6).unwrap();
        assert_eq!(a, b);
    }
}
