use image::{GrayImage, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Adds i.i.d. N(0, sigma²) noise to every channel of masked pixels,
/// rounding and clamping to [0, 255]. Unmasked pixels are untouched.
pub fn add_object_noise<R: Rng + ?Sized>(
    image: &RgbImage,
    mask: &GrayImage,
    sigma: f64,
    rng: &mut R,
) -> RgbImage {
    let mut out = image.clone();
    if !(sigma > 0.0) {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    for (p, m) in out.pixels_mut().zip(mask.pixels()) {
        if m[0] == 0 {
            continue;
        }
        for c in p.0.iter_mut() {
            *c = (*c as f64 + normal.sample(rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Square (Chebyshev) dilation by `radius` pixels.
pub fn dilate_square(mask: &GrayImage, radius: u32) -> GrayImage {
    let (w, h) = mask.dimensions();
    let r = radius as i64;
    let mut horiz = GrayImage::new(w, h);
    for y in 0..h {
        // distance to the nearest set pixel on the left, scanning once each way
        let mut last: i64 = i64::MIN / 2;
        let mut near = vec![i64::MAX; w as usize];
        for x in 0..w as i64 {
            if mask.get_pixel(x as u32, y)[0] > 0 {
                last = x;
            }
            near[x as usize] = x - last;
        }
        last = i64::MAX / 2;
        for x in (0..w as i64).rev() {
            if mask.get_pixel(x as u32, y)[0] > 0 {
                last = x;
            }
            if near[x as usize].min(last - x) <= r {
                horiz.put_pixel(x as u32, y, image::Luma([255]));
            }
        }
    }
    let mut out = GrayImage::new(w, h);
    for x in 0..w {
        let mut last: i64 = i64::MIN / 2;
        let mut near = vec![i64::MAX; h as usize];
        for y in 0..h as i64 {
            if horiz.get_pixel(x, y as u32)[0] > 0 {
                last = y;
            }
            near[y as usize] = y - last;
        }
        last = i64::MAX / 2;
        for y in (0..h as i64).rev() {
            if horiz.get_pixel(x, y as u32)[0] > 0 {
                last = y;
            }
            if near[y as usize].min(last - y) <= r {
                out.put_pixel(x, y as u32, image::Luma([255]));
            }
        }
    }
    out
}

/// Gaussian blur restricted to the mask dilated by `⌈3σ⌉`. The kernel is
/// truncated at that radius and renormalized over taps inside the image.
/// Pixels outside the dilated region are copied unchanged; `sigma = 0` is
/// the identity.
pub fn blur_object_boundary(image: &RgbImage, mask: &GrayImage, sigma: f64) -> RgbImage {
    let mut out = image.clone();
    if !(sigma > 0.0) {
        return out;
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let region = dilate_square(mask, r as u32);
    let (w, h) = (image.width() as i64, image.height() as i64);

    let Some((x0, y0, x1, y1)) =
        region
            .enumerate_pixels()
            .filter(|(_, _, p)| p[0] > 0)
            .fold(None, |acc, (x, y, _)| {
                let (x, y) = (x as i64, y as i64);
                Some(match acc {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (x.min(a), y.min(b), x.max(c), y.max(d)),
                })
            })
    else {
        return out;
    };

    // horizontal pass over the rows the vertical pass will read
    let (ry0, ry1) = ((y0 - r).max(0), (y1 + r).min(h - 1));
    let cols = (x1 - x0 + 1) as usize;
    let mut horiz = vec![[0.0f64; 3]; cols * (ry1 - ry0 + 1) as usize];
    for y in ry0..=ry1 {
        for x in x0..=x1 {
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sx = x + k as i64 - r;
                if sx < 0 || sx >= w {
                    continue;
                }
                let p = image.get_pixel(sx as u32, y as u32).0;
                for c in 0..3 {
                    acc[c] += wt * p[c] as f64;
                }
                wsum += wt;
            }
            horiz[(y - ry0) as usize * cols + (x - x0) as usize] = acc.map(|a| a / wsum);
        }
    }

    for y in y0..=y1 {
        for x in x0..=x1 {
            if region.get_pixel(x as u32, y as u32)[0] == 0 {
                continue;
            }
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let sy = y + k as i64 - r;
                if sy < 0 || sy >= h {
                    continue;
                }
                let hv = horiz[(sy - ry0) as usize * cols + (x - x0) as usize];
                for c in 0..3 {
                    acc[c] += wt * hv[c];
                }
                wsum += wt;
            }
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(acc.map(|a| (a / wsum).round().clamp(0.0, 255.0) as u8)),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::procedural_backgrounds;
    use image::{Luma, Rgb};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn center_mask(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            Luma([if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                255
            } else {
                0
            }])
        })
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = procedural_backgrounds(1, 40, 30, 3).remove(0);
        let mask = center_mask(40, 30, 10, 10, 20, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_object_noise(&img, &mask, 0.0, &mut rng), img);
        assert_eq!(blur_object_boundary(&img, &mask, 0.0), img);
    }

    #[test]
    fn noise_only_touches_mask() {
        let img = procedural_backgrounds(1, 40, 30, 3).remove(0);
        let mask = center_mask(40, 30, 5, 8, 30, 20);
        let out = add_object_noise(&img, &mask, 12.0, &mut ChaCha8Rng::seed_from_u64(1));
        let mut changed = 0;
        for ((a, b), m) in img.pixels().zip(out.pixels()).zip(mask.pixels()) {
            if m[0] == 0 {
                assert_eq!(a, b);
            } else if a != b {
                changed += 1;
            }
        }
        assert!(changed > 200);
    }

    #[test]
    fn noise_std_estimate() {
        let img = RgbImage::from_pixel(80, 80, Rgb([128, 128, 128]));
        let mask = GrayImage::from_pixel(80, 80, Luma([255]));
        let out = add_object_noise(&img, &mask, 5.0, &mut ChaCha8Rng::seed_from_u64(2));
        let diffs: Vec<f64> = out
            .pixels()
            .flat_map(|p| p.0)
            .map(|v| v as f64 - 128.0)
            .collect();
        assert!(diffs.len() >= 10_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>()
            / (diffs.len() - 1) as f64)
            .sqrt();
        assert!((4.5..=5.5).contains(&std), "{std}");
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RgbImage::from_pixel(30, 30, Rgb([77, 140, 3]));
        let mask = center_mask(30, 30, 0, 0, 30, 30);
        for sigma in [0.4, 1.0, 2.7] {
            let out = blur_object_boundary(&img, &mask, sigma);
            for (a, b) in img.pixels().zip(out.pixels()) {
                for c in 0..3 {
                    assert!((a[c] as i32 - b[c] as i32).abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn dilation_matches_brute_force() {
        let mask = center_mask(20, 15, 6, 4, 9, 7);
        let d = dilate_square(&mask, 2);
        for (x, y, p) in d.enumerate_pixels() {
            let expect = mask.enumerate_pixels().any(|(mx, my, m)| {
                m[0] > 0 && (mx as i64 - x as i64).abs() <= 2 && (my as i64 - y as i64).abs() <= 2
            });
            assert_eq!(p[0] > 0, expect, "({x},{y})");
        }
    }

    #[test]
    fn kernel_radius_and_normalization() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(0.5).len(), 5);
        assert!((gaussian_kernel(1.3).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
