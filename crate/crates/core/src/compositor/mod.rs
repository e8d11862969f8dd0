//! Pastes a rendered object layer into an augmented background, adds
//! object noise, blurs the object together with its border, and derives the
//! ground-truth mask and box.
//!
//! Pipeline order in [`compose_sample`]: pick background → augment → place
//! → paste → noise → blur → mask/box. Noise comes before blur; the two do
//! not commute.

mod background;
mod filters;

pub use background::{
    augment_background, permute_channels, procedural_backgrounds, rotate_quarter_turns,
    BackgroundPool, CHANNEL_PERMUTATIONS,
};
pub use filters::{add_object_noise, blur_object_boundary, dilate_square, gaussian_kernel};

use image::{GrayImage, Luma, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox2D, Pose};
use crate::renderer::RenderLayer;

pub type Mask = GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum CompositeError {
    #[error("background {width}x{height} cannot hold a {need_w}x{need_h} crop")]
    BackgroundTooSmall {
        width: u32,
        height: u32,
        need_w: u32,
        need_h: u32,
    },
    #[error("object cannot be placed under the placement constraint")]
    NoValidPlacement,
    #[error("render layer covers no pixels")]
    EmptyLayer,
    #[error("background pool is empty")]
    EmptyPool,
    #[error("invalid compose spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// The whole mask must land inside the frame.
    FullInside,
    /// At least this fraction of mask pixels must land inside the frame.
    MinVisibility(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    /// Object noise standard deviation range, 8-bit intensity units.
    pub noise_sigma_range: [f64; 2],
    /// Blur standard deviation range in pixels.
    pub blur_sigma_range: [f64; 2],
    pub placement: Placement,
    pub channel_swap: bool,
    pub flips: bool,
    /// Allowed background rotations in degrees, from {0, 90, 180, 270}.
    pub rotations: Vec<u32>,
}

impl Default for ComposeSpec {
    fn default() -> Self {
        Self {
            noise_sigma_range: [0.0, 8.0],
            blur_sigma_range: [0.5, 2.0],
            placement: Placement::FullInside,
            channel_swap: true,
            flips: true,
            rotations: vec![0, 90, 180, 270],
        }
    }
}

impl ComposeSpec {
    /// No augmentation, no noise, no blur.
    pub fn plain() -> Self {
        Self {
            noise_sigma_range: [0.0, 0.0],
            blur_sigma_range: [0.0, 0.0],
            placement: Placement::FullInside,
            channel_swap: false,
            flips: false,
            rotations: vec![0],
        }
    }

    pub fn validate(&self) -> Result<(), CompositeError> {
        let range_ok = |[lo, hi]: [f64; 2]| lo >= 0.0 && lo <= hi && hi.is_finite();
        if !range_ok(self.noise_sigma_range) {
            return Err(CompositeError::InvalidSpec(
                "noise_sigma_range must satisfy 0 <= lo <= hi".into(),
            ));
        }
        if !range_ok(self.blur_sigma_range) {
            return Err(CompositeError::InvalidSpec(
                "blur_sigma_range must satisfy 0 <= lo <= hi".into(),
            ));
        }
        if let Placement::MinVisibility(f) = self.placement {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CompositeError::InvalidSpec(
                    "min_visibility must lie in (0, 1]".into(),
                ));
            }
        }
        if let Some(r) = self
            .rotations
            .iter()
            .find(|r| ![0, 90, 180, 270].contains(*r))
        {
            return Err(CompositeError::InvalidSpec(format!(
                "rotation {r} not in {{0, 90, 180, 270}}"
            )));
        }
        Ok(())
    }
}

/// Where the object went.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementResult {
    /// Top-left corner of the mask's bounding box in the background frame.
    pub offset: (i64, i64),
    /// Translation from layer pixel coordinates to background coordinates.
    pub shift: (i64, i64),
    pub visible_fraction: f64,
}

/// Samples a placement uniformly over every offset that satisfies the
/// constraint.
pub fn place_object<R: Rng + ?Sized>(
    layer: &RenderLayer,
    frame: (u32, u32),
    placement: Placement,
    rng: &mut R,
) -> Result<PlacementResult, CompositeError> {
    let (x0, y0, x1, y1) = layer.mask_bounds().ok_or(CompositeError::EmptyLayer)?;
    let (bw, bh) = ((x1 - x0 + 1) as i64, (y1 - y0 + 1) as i64);
    let (fw, fh) = (frame.0 as i64, frame.1 as i64);
    let finish = |dx: i64, dy: i64, visible: f64| PlacementResult {
        offset: (dx, dy),
        shift: (dx - x0 as i64, dy - y0 as i64),
        visible_fraction: visible,
    };
    match placement {
        Placement::FullInside => {
            if bw > fw || bh > fh {
                return Err(CompositeError::NoValidPlacement);
            }
            let dx = rng.random_range(0..=fw - bw);
            let dy = rng.random_range(0..=fh - bh);
            Ok(finish(dx, dy, 1.0))
        }
        Placement::MinVisibility(min_fraction) => {
            // summed-area table over the mask's bounding box
            let (w, h) = (bw as usize, bh as usize);
            let mut sat = vec![0u64; (w + 1) * (h + 1)];
            for y in 0..h {
                for x in 0..w {
                    let a = layer.alpha[(y + y0 as usize) * layer.width as usize + x + x0 as usize];
                    sat[(y + 1) * (w + 1) + x + 1] =
                        (a > 0) as u64 + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x]
                            - sat[y * (w + 1) + x];
                }
            }
            let total = sat[h * (w + 1) + w];
            let rect = |xa: usize, ya: usize, xb: usize, yb: usize| {
                sat[yb * (w + 1) + xb] + sat[ya * (w + 1) + xa]
                    - sat[ya * (w + 1) + xb]
                    - sat[yb * (w + 1) + xa]
            };
            let mut valid = Vec::new();
            for dy in -(bh - 1)..fh {
                let ya = (-dy).max(0) as usize;
                let yb = (fh - dy).min(bh) as usize;
                for dx in -(bw - 1)..fw {
                    let xa = (-dx).max(0) as usize;
                    let xb = (fw - dx).min(bw) as usize;
                    let visible = rect(xa, ya, xb, yb);
                    if visible > 0 && visible as f64 >= min_fraction * total as f64 {
                        valid.push((dx, dy, visible));
                    }
                }
            }
            if valid.is_empty() {
                return Err(CompositeError::NoValidPlacement);
            }
            let (dx, dy, visible) = valid[rng.random_range(0..valid.len())];
            Ok(finish(dx, dy, visible as f64 / total as f64))
        }
    }
}

/// Tight box `[min_x, min_y, max_x + 1, max_y + 1]` of nonzero mask pixels.
pub fn mask_bbox(mask: &Mask) -> Option<BBox2D> {
    let mut b: Option<(u32, u32, u32, u32)> = None;
    for (x, y, p) in mask.enumerate_pixels() {
        if p[0] > 0 {
            b = Some(match b {
                None => (x, y, x, y),
                Some((a, c, d, e)) => (a.min(x), c.min(y), d.max(x), e.max(y)),
            });
        }
    }
    b.map(|(x0, y0, x1, y1)| BBox2D::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub sample_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample {
    pub image: RgbImage,
    pub mask: Mask,
    pub bbox: BBox2D,
    pub class_id: u32,
    pub pose: Pose,
    pub provenance: Provenance,
    pub placement: PlacementResult,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
}

fn sample_range<R: Rng + ?Sized>([lo, hi]: [f64; 2], rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Runs the full compositing pipeline for one object layer.
pub fn compose_sample<R: Rng + ?Sized>(
    layer: &RenderLayer,
    pool: &BackgroundPool,
    spec: &ComposeSpec,
    class_id: u32,
    pose: Pose,
    provenance: Provenance,
    rng: &mut R,
) -> Result<CompositeSample, CompositeError> {
    spec.validate()?;
    let target = pool.target_size();
    let background = pool.pick(rng)?;
    let mut image = match background {
        std::borrow::Cow::Borrowed(img) => augment_background(img, target, spec, rng)?,
        std::borrow::Cow::Owned(img) => augment_background(&img, target, spec, rng)?,
    };
    let placement = place_object(layer, target, spec.placement, rng)?;

    let mut mask = GrayImage::new(target.0, target.1);
    let (sx, sy) = placement.shift;
    let lw = layer.width as usize;
    for (i, _) in layer.alpha.iter().enumerate().filter(|(_, &a)| a > 0) {
        let (x, y) = ((i % lw) as i64 + sx, (i / lw) as i64 + sy);
        if x < 0 || y < 0 || x >= target.0 as i64 || y >= target.1 as i64 {
            continue;
        }
        let (x, y) = (x as u32, y as u32);
        image.put_pixel(
            x,
            y,
            image::Rgb([layer.rgb[3 * i], layer.rgb[3 * i + 1], layer.rgb[3 * i + 2]]),
        );
        mask.put_pixel(x, y, Luma([255]));
    }

    let noise_sigma = sample_range(spec.noise_sigma_range, rng);
    let image = add_object_noise(&image, &mask, noise_sigma, rng);
    let blur_sigma = sample_range(spec.blur_sigma_range, rng);
    let image = blur_object_boundary(&image, &mask, blur_sigma);
    let bbox = mask_bbox(&mask).ok_or(CompositeError::NoValidPlacement)?;

    Ok(CompositeSample {
        image,
        mask,
        bbox,
        class_id,
        pose,
        provenance,
        placement,
        noise_sigma,
        blur_sigma,
    })
}
