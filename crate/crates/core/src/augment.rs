//! Training-time geometric augmentation of disc windows: centre jitter,
//! isotropic scaling about the window centre, and horizontal flipping. Image
//! and mask always receive the same geometric map.

use boostnet_autodiff::StreamRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::polar::{bilinear, crop_od_window, jitter_budget, nearest, OdWindow};
use crate::synth::LabeledSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Largest per-axis centre jitter at the reference window size.
    pub max_jitter_px: f64,
    pub jitter_reference_window: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub hflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_jitter_px: 20.0,
            jitter_reference_window: 640,
            scale_min: 0.8,
            scale_max: 1.2,
            hflip_prob: 0.5,
        }
    }
}

/// One concrete draw of the augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Centre shift `(dx, dy)` in source pixels.
    pub jitter: (i64, i64),
    pub scale: f64,
    pub hflip: bool,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        jitter: (0, 0),
        scale: 1.0,
        hflip: false,
    };
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_jitter_px.is_finite()
            && self.max_jitter_px >= 0.0
            && self.jitter_reference_window > 0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.scale_max.is_finite()
            && (0.0..=1.0).contains(&self.hflip_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation settings {self:?}")))
        }
    }

    pub fn budget(&self, window: usize) -> f64 {
        jitter_budget(window, self.max_jitter_px, self.jitter_reference_window)
    }

    /// Jitter uniform over whole pixels within the budget, scale uniform in
    /// `[scale_min, scale_max]`, flip with probability `hflip_prob`.
    pub fn draw(&self, window: usize, rng: &mut StreamRng) -> AugmentParams {
        let b = self.budget(window).floor() as i64;
        let dx = rng.int_inclusive(-b, b);
        let dy = rng.int_inclusive(-b, b);
        let scale = rng.uniform_range(self.scale_min, self.scale_max);
        let hflip = rng.bernoulli(self.hflip_prob);
        AugmentParams {
            jitter: (dx, dy),
            scale,
            hflip,
        }
    }
}

/// Applies `params` to a labelled sample: crop at the jittered centre, scale
/// about the window centre, then mirror columns `x → S−1−x`.
pub fn augment_with(
    sample: &LabeledSample,
    window: usize,
    params: &AugmentParams,
    config: &AugmentConfig,
) -> Result<OdWindow> {
    if !(params.scale.is_finite() && params.scale > 0.0) {
        return Err(Error::Geometry(format!("scale must be positive, got {}", params.scale)));
    }
    let mut w = crop_od_window(
        &sample.image,
        Some(&sample.mask),
        sample.od_center,
        window,
        params.jitter,
        config.budget(window),
    )?;
    if params.scale != 1.0 {
        w.image = scale_image(&w.image, params.scale);
        w.mask = w.mask.map(|m| scale_mask(&m, params.scale));
    }
    if params.hflip {
        w.image = hflip_image(&w.image);
        w.mask = w.mask.map(|m| hflip_mask(&m));
    }
    Ok(w)
}

/// Source position of output pixel `i` when magnifying by `scale` about `S/2`.
fn scaled_src(i: usize, size: usize, scale: f64) -> f64 {
    let c = size as f64 / 2.0;
    c + (i as f64 - c) / scale
}

fn scale_image(img: &Image, scale: f64) -> Image {
    let (h, w) = (img.height, img.width);
    let mut out = Image::zeros(img.channels, h, w);
    for ch in 0..img.channels {
        let plane = img.plane(ch);
        for y in 0..h {
            let sy = scaled_src(y, h, scale);
            for x in 0..w {
                out.data[(ch * h + y) * w + x] = bilinear(plane, h, w, sy, scaled_src(x, w, scale));
            }
        }
    }
    out
}

fn scale_mask(mask: &Mask, scale: f64) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = scaled_src(y, h, scale);
        for x in 0..w {
            data.push(nearest(mask, sy, scaled_src(x, w, scale)));
        }
    }
    Mask { height: h, width: w, data }
}

fn hflip_image(img: &Image) -> Image {
    let mut out = img.clone();
    for row in out.data.chunks_exact_mut(img.width) {
        row.reverse();
    }
    out
}

fn hflip_mask(mask: &Mask) -> Mask {
    let mut out = mask.clone();
    for row in out.data.chunks_exact_mut(mask.width) {
        row.reverse();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sample, SynthParams};

    fn sample() -> LabeledSample {
        generate_sample(&SynthParams { size: 64, ..SynthParams::default() }, 0).unwrap()
    }

    #[test]
    fn identity_params_reproduce_the_plain_crop() {
        let s = sample();
        let cfg = AugmentConfig::default();
        let w = augment_with(&s, 48, &AugmentParams::IDENTITY, &cfg).unwrap();
        let plain = crop_od_window(&s.image, Some(&s.mask), s.od_center, 48, (0, 0), 0.0).unwrap();
        assert_eq!(w, plain);
    }

    #[test]
    fn jitter_beyond_budget_is_rejected() {
        let s = sample();
        let cfg = AugmentConfig::default();
        // 20·64/640 = 2 px
        let p = AugmentParams { jitter: (3, 0), ..AugmentParams::IDENTITY };
        assert!(augment_with(&s, 64, &p, &cfg).is_err());
        let p = AugmentParams { jitter: (2, -2), ..AugmentParams::IDENTITY };
        assert!(augment_with(&s, 64, &p, &cfg).is_ok());
    }

    #[test]
    fn flip_mirrors_columns_of_image_and_mask() {
        let s = sample();
        let cfg = AugmentConfig::default();
        let a = augment_with(&s, 64, &AugmentParams::IDENTITY, &cfg).unwrap();
        let b = augment_with(&s, 64, &AugmentParams { hflip: true, ..AugmentParams::IDENTITY }, &cfg).unwrap();
        let (am, bm) = (a.mask.unwrap(), b.mask.unwrap());
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(bm.get(y, x), am.get(y, 63 - x));
                assert_eq!(b.image.get(1, y, x), a.image.get(1, y, 63 - x));
            }
        }
    }

    #[test]
    fn image_and_mask_share_one_geometric_map() {
        // Channel 0 carries the class index. Wherever the four bilinear
        // neighbours of a source position share one class, the nearest-sampled
        // mask and the interpolated image must both show that class.
        let mut s = sample();
        for k in 0..s.mask.data.len() {
            s.image.data[k] = s.mask.data[k] as f32;
        }
        let cfg = AugmentConfig::default();
        let mut rng = StreamRng::new(9, "augment-test");
        let mut checked = 0;
        for _ in 0..8 {
            let p = cfg.draw(64, &mut rng);
            let src = crop_od_window(&s.image, Some(&s.mask), s.od_center, 64, p.jitter, 2.0).unwrap();
            let src_mask = src.mask.unwrap();
            let w = augment_with(&s, 64, &p, &cfg).unwrap();
            let m = w.mask.unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    let xs = if p.hflip { 63 - x } else { x };
                    let (sy, sx) = (scaled_src(y, 64, p.scale), scaled_src(xs, 64, p.scale));
                    let (y0, x0) = (sy.floor() as i64, sx.floor() as i64);
                    if y0 < 0 || x0 < 0 || y0 + 1 >= 64 || x0 + 1 >= 64 {
                        continue;
                    }
                    let corners = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)]
                        .map(|(yy, xx)| src_mask.get(yy as usize, xx as usize));
                    if corners.iter().all(|&c| c == corners[0]) {
                        assert_eq!(m.get(y, x), corners[0], "mask at ({x}, {y}) under {p:?}");
                        assert_eq!(w.image.get(0, y, x), corners[0] as f32, "image at ({x}, {y})");
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 8 * 64 * 64 / 2, "only {checked} pixels checked");
    }

    #[test]
    fn draws_respect_configured_bounds() {
        let cfg = AugmentConfig::default();
        let mut rng = StreamRng::new(1, "bounds");
        let (mut flips, n) = (0, 2000);
        for _ in 0..n {
            let p = cfg.draw(640, &mut rng);
            assert!(p.jitter.0.abs() <= 20 && p.jitter.1.abs() <= 20);
            assert!((0.8..=1.2).contains(&p.scale));
            flips += p.hflip as usize;
        }
        assert!((800..1200).contains(&flips), "{flips} flips");
    }
}
