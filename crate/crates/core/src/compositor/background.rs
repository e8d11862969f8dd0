use std::borrow::Cow;
use std::path::Path;

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ComposeSpec, CompositeError};

/// Source channel for each output channel; index 4 is `(R,G,B) → (B,R,G)`.
pub const CHANNEL_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

#[derive(Debug, Clone)]
pub enum BackgroundPool {
    /// Cluttered images, each at least the target size.
    Images {
        images: Vec<RgbImage>,
        target: (u32, u32),
    },
    /// One uniformly random color per sample, square with side
    /// `max(width, height)`.
    SolidRandom { target: (u32, u32) },
}

impl BackgroundPool {
    pub fn from_images(images: Vec<RgbImage>, target: (u32, u32)) -> Result<Self, CompositeError> {
        if images.is_empty() {
            return Err(CompositeError::EmptyPool);
        }
        if let Some(img) = images
            .iter()
            .find(|i| i.width() < target.0 || i.height() < target.1)
        {
            return Err(CompositeError::BackgroundTooSmall {
                width: img.width(),
                height: img.height(),
                need_w: target.0,
                need_h: target.1,
            });
        }
        Ok(Self::Images { images, target })
    }

    /// Loads every PNG/JPEG file in `dir`, sorted by file name.
    pub fn from_directory(dir: &Path, target: (u32, u32)) -> Result<Self, std::io::Error> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg")
                })
            })
            .collect();
        paths.sort();
        let images = paths
            .iter()
            .map(|p| {
                image::open(p)
                    .map(|i| i.to_rgb8())
                    .map_err(|e| std::io::Error::other(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_images(images, target).map_err(|e| std::io::Error::other(e.to_string()))
    }

    pub fn target_size(&self) -> (u32, u32) {
        match self {
            Self::Images { target, .. } | Self::SolidRandom { target } => *target,
        }
    }

    /// Uniformly chosen background.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Cow<'_, RgbImage>, CompositeError> {
        match self {
            Self::Images { images, .. } => {
                if images.is_empty() {
                    return Err(CompositeError::EmptyPool);
                }
                Ok(Cow::Borrowed(&images[rng.random_range(0..images.len())]))
            }
            Self::SolidRandom { target } => {
                let color = Rgb([rng.random(), rng.random(), rng.random()]);
                // square, so every quarter turn still covers the frame
                let side = target.0.max(target.1);
                Ok(Cow::Owned(RgbImage::from_pixel(side, side, color)))
            }
        }
    }
}

/// Rotates by `quarter_turns × 90°`. A quarter turn moves the right edge
/// to the top, so the row `[a, b]` becomes the column `[b; a]`.
pub fn rotate_quarter_turns(img: &RgbImage, quarter_turns: u32) -> RgbImage {
    match quarter_turns % 4 {
        0 => img.clone(),
        1 => imageops::rotate270(img),
        2 => imageops::rotate180(img),
        _ => imageops::rotate90(img),
    }
}

pub fn permute_channels(img: &RgbImage, perm: [usize; 3]) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let src = p.0;
        p.0 = perm.map(|c| src[c]);
    }
    out
}

/// Random crop to `target`, then rotation, horizontal flip and channel
/// permutation, each drawn only when enabled in `spec`.
pub fn augment_background<R: Rng + ?Sized>(
    img: &RgbImage,
    target: (u32, u32),
    spec: &ComposeSpec,
    rng: &mut R,
) -> Result<RgbImage, CompositeError> {
    let degrees = match spec.rotations.len() {
        0 => 0,
        1 => spec.rotations[0],
        n => spec.rotations[rng.random_range(0..n)],
    };
    let turns = degrees / 90;
    let (cw, ch) = if turns % 2 == 1 {
        (target.1, target.0)
    } else {
        target
    };
    if img.width() < cw || img.height() < ch {
        return Err(CompositeError::BackgroundTooSmall {
            width: img.width(),
            height: img.height(),
            need_w: cw,
            need_h: ch,
        });
    }
    let x = rng.random_range(0..=img.width() - cw);
    let y = rng.random_range(0..=img.height() - ch);
    let crop = imageops::crop_imm(img, x, y, cw, ch).to_image();
    let mut out = rotate_quarter_turns(&crop, turns);
    if spec.flips && rng.random::<bool>() {
        imageops::flip_horizontal_in_place(&mut out);
    }
    if spec.channel_swap {
        out = permute_channels(&out, CHANNEL_PERMUTATIONS[rng.random_range(0..6)]);
    }
    Ok(out)
}

/// Asset-free cluttered backgrounds: smooth colored value noise with random
/// filled polygons on top. Not real imagery; used for tests and the lab.
pub fn procedural_backgrounds(count: usize, width: u32, height: u32, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0xA076_1D64_78BD_642F));
            procedural_background(width, height, &mut rng)
        })
        .collect()
}

fn procedural_background(width: u32, height: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let cell = rng.random_range(6.0..24.0f64);
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let grid: Vec<[f64; 3]> = (0..gw * gh)
        .map(|_| {
            [
                rng.random_range(0.0..255.0),
                rng.random_range(0.0..255.0),
                rng.random_range(0.0..255.0),
            ]
        })
        .collect();
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64 / cell, y as f64 / cell);
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        // smoothstep weights
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let g = |a: usize, b: usize| grid[b * gw + a];
        let (c00, c10, c01, c11) = (g(ix, iy), g(ix + 1, iy), g(ix, iy + 1), g(ix + 1, iy + 1));
        Rgb(std::array::from_fn(|c| {
            let top = c00[c] + (c10[c] - c00[c]) * sx;
            let bottom = c01[c] + (c11[c] - c01[c]) * sx;
            (top + (bottom - top) * sy).round() as u8
        }))
    });

    let polygons = rng.random_range(15..40);
    let scale = width.max(height) as f64;
    for _ in 0..polygons {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let radius = rng.random_range(0.03..0.25) * scale;
        let n = rng.random_range(3..8);
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let pts: Vec<(f64, f64)> = angles
            .iter()
            .map(|a| {
                let r = radius * rng.random_range(0.4..1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let color = Rgb([rng.random(), rng.random(), rng.random()]);
        fill_polygon(&mut img, &pts, color);
    }
    img
}

/// Even-odd fill sampled at pixel centers.
fn fill_polygon(img: &mut RgbImage, pts: &[(f64, f64)], color: Rgb<u8>) {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let xs = x0.floor().max(0.0) as u32;
    let ys = y0.floor().max(0.0) as u32;
    let xe = (x1.ceil() as i64).min(img.width() as i64 - 1);
    let ye = (y1.ceil() as i64).min(img.height() as i64 - 1);
    if xe < 0 || ye < 0 {
        return;
    }
    for py in ys..=ye as u32 {
        let sy = py as f64 + 0.5;
        for px in xs..=xe as u32 {
            let sx = px as f64 + 0.5;
            let mut inside = false;
            let mut j = pts.len() - 1;
            for i in 0..pts.len() {
                let (xi, yi) = pts[i];
                let (xj, yj) = pts[j];
                if (yi > sy) != (yj > sy) && sx < (xj - xi) * (sy - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            if inside {
                img.put_pixel(px, py, color);
            }
        }
    }
}
