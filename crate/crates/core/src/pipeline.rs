//! Sample preparation shared by training, evaluation and inference: disc
//! window cropping, polar resampling, input normalisation and label
//! downsampling to the logit-map resolution.

use boostnet_autodiff::{LabelMap, Real, StreamRng, Tensor};

use crate::augment::{augment_with, AugmentConfig};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::polar::{crop_od_window, to_polar, to_polar_mask, PolarGeometry};
use crate::synth::LabeledSample;

/// Network input value of an intensity `v ∈ [0, 1]`.
pub fn normalize(v: f32) -> f32 {
    (v - 0.5) / 0.25
}

/// A disc window in both frames, with ground truth when known.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub window: Image,
    pub window_mask: Option<Mask>,
    pub polar: Image,
    pub polar_mask: Option<Mask>,
}

/// Crop at `center` without jitter and resample to polar coordinates.
pub fn prepare_window(
    id: &str,
    image: &Image,
    mask: Option<&Mask>,
    center: (i64, i64),
    geom: &PolarGeometry,
) -> Result<PreparedSample> {
    let w = crop_od_window(image, mask, center, geom.window, (0, 0), 0.0)?;
    let polar = to_polar(&w.image, geom)?;
    let polar_mask = w.mask.as_ref().map(|m| to_polar_mask(m, geom)).transpose()?;
    Ok(PreparedSample {
        id: id.to_string(),
        window: w.image,
        window_mask: w.mask,
        polar,
        polar_mask,
    })
}

pub fn prepare_eval(sample: &LabeledSample, geom: &PolarGeometry) -> Result<PreparedSample> {
    prepare_window(&sample.id, &sample.image, Some(&sample.mask), sample.od_center, geom)
}

/// Augmented polar image and polar label map of one training draw.
pub fn prepare_train(
    sample: &LabeledSample,
    geom: &PolarGeometry,
    augment: &AugmentConfig,
    rng: &mut StreamRng,
) -> Result<(Image, Mask)> {
    let params = augment.draw(geom.window, rng);
    let w = augment_with(sample, geom.window, &params, augment)?;
    let mask = w.mask.expect("labelled sample");
    Ok((to_polar(&w.image, geom)?, to_polar_mask(&mask, geom)?))
}

/// Nearest downsampling by an integer `stride`: output `o` reads source
/// `floor((o + 0.5)·stride)`.
pub fn downsample_labels(mask: &Mask, stride: usize) -> Result<Mask> {
    if stride == 0 || mask.height % stride != 0 || mask.width % stride != 0 {
        return Err(Error::Geometry(format!(
            "mask {}x{} is not divisible by stride {stride}",
            mask.height, mask.width
        )));
    }
    let (h, w) = (mask.height / stride, mask.width / stride);
    let off = stride / 2;
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            data.push(mask.get(y * stride + off, x * stride + off));
        }
    }
    Mask::new(h, w, data)
}

/// Stacks normalised images of equal size into `[N, C, H, W]`.
pub fn batch_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::Geometry("batch images differ in size".into()));
        }
        data.extend(img.data.iter().map(|&v| T::from_f64(normalize(v) as f64)));
    }
    Ok(Tensor::new(&[images.len(), c, h, w], data)?)
}

pub fn label_map(masks: &[Mask]) -> Result<LabelMap> {
    let first = masks.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.height, m.width) != (h, w) {
            return Err(Error::Geometry("batch masks differ in size".into()));
        }
        data.extend_from_slice(&m.data);
    }
    Ok(LabelMap::new(masks.len(), h, w, data)?)
}
