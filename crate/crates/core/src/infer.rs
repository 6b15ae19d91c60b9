//! Single-image inference and the correct/miss/error overlay.

use boostnet_autodiff::Real;
use serde::Serialize;

use crate::boostnet::BoostNet;
use crate::error::{Error, Result};
use crate::eval::{ModelSegmenter, Segmenter};
use crate::image::{BinaryMask, Image, Mask, BACKGROUND};
use crate::pipeline::prepare_window;
use crate::polar::{estimate_od_center, PolarGeometry};

/// Where the disc window is centred.
#[derive(Debug, Clone, PartialEq)]
pub enum CenterSource {
    /// Pixel `(x, y)`.
    Given(i64, i64),
    /// Centroid of the disc pixels of a full-size coarse mask.
    CoarseMask(Mask),
    /// Centroid of a first prediction on a window at the image centre.
    FirstPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub center: (i64, i64),
    /// Class map of the disc window.
    pub window_mask: Mask,
    /// The window pasted into a background map of the full image size.
    pub mask: Mask,
}

fn paste(window: &Mask, center: (i64, i64), height: usize, width: usize) -> Mask {
    let mut out = Mask::filled(height, width, BACKGROUND);
    let s = window.height as i64;
    let (top, left) = (center.1 - s / 2, center.0 - s / 2);
    for i in 0..window.height {
        for j in 0..window.width {
            let (y, x) = (top + i as i64, left + j as i64);
            if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                out.data[y as usize * width + x as usize] = window.get(i, j);
            }
        }
    }
    out
}

fn segment_at<T: Real>(
    model: &BoostNet<T>,
    geom: &PolarGeometry,
    image: &Image,
    center: (i64, i64),
    tta: bool,
) -> Result<Inference> {
    let prepared = prepare_window("input", image, None, center, geom)?;
    let seg = ModelSegmenter {
        model,
        geometry: geom.clone(),
        tta,
    };
    let pred = seg.segment(&[&prepared])?.remove(0);
    let mask = paste(&pred.cartesian, center, image.height, image.width);
    Ok(Inference {
        center,
        window_mask: pred.cartesian,
        mask,
    })
}

pub fn infer<T: Real>(
    model: &BoostNet<T>,
    geom: &PolarGeometry,
    image: &Image,
    source: &CenterSource,
    tta: bool,
) -> Result<Inference> {
    if image.channels != 3 {
        return Err(Error::Geometry(format!("expected an RGB image, got {} channels", image.channels)));
    }
    let center = match source {
        CenterSource::Given(x, y) => (*x, *y),
        CenterSource::CoarseMask(m) => {
            if (m.height, m.width) != (image.height, image.width) {
                return Err(Error::Geometry("coarse mask and image sizes differ".into()));
            }
            estimate_od_center(m)?
        }
        CenterSource::FirstPass => {
            let mid = ((image.width / 2) as i64, (image.height / 2) as i64);
            let first = segment_at(model, geom, image, mid, tta)?;
            estimate_od_center(&first.mask)
                .map_err(|_| Error::Geometry("first pass found no disc pixels; pass a centre".into()))?
        }
    };
    segment_at(model, geom, image, center, tta)
}

/// Pixel counts of one overlay: correct, missed and false detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OverlayCounts {
    pub yellow: usize,
    pub red: usize,
    pub green: usize,
}

pub const YELLOW: [f32; 3] = [1.0, 1.0, 0.0];
pub const RED: [f32; 3] = [1.0, 0.0, 0.0];
pub const GREEN: [f32; 3] = [0.0, 1.0, 0.0];

/// Paints `pred ∧ gt` yellow, `gt ∧ ¬pred` red and `pred ∧ ¬gt` green at
/// half opacity over `image`.
pub fn overlay(image: &Image, pred: &BinaryMask, gt: &BinaryMask) -> Result<(Image, OverlayCounts)> {
    let (h, w) = (image.height, image.width);
    if (pred.height, pred.width) != (h, w) || (gt.height, gt.width) != (h, w) || image.channels != 3 {
        return Err(Error::Geometry("overlay inputs differ in size".into()));
    }
    let mut out = image.clone();
    let mut counts = OverlayCounts { yellow: 0, red: 0, green: 0 };
    for px in 0..h * w {
        let colour = match (pred.data[px], gt.data[px]) {
            (true, true) => {
                counts.yellow += 1;
                YELLOW
            }
            (false, true) => {
                counts.red += 1;
                RED
            }
            (true, false) => {
                counts.green += 1;
                GREEN
            }
            (false, false) => continue,
        };
        for (c, &v) in colour.iter().enumerate() {
            let at = c * h * w + px;
            out.data[at] = 0.5 * out.data[at] + 0.5 * v;
        }
    }
    Ok((out, counts))
}
