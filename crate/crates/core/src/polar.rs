//! Optic-disc windows and the polar transform around their centre.
//!
//! A polar image has rows indexed by angle `θ_i = 2πi/A` and columns by
//! radius `r_j = j·(S/2)/R`, measured from the window centre `(S/2, S/2)`
//! with `x = c + r cos θ`, `y = c + r sin θ` in pixel-index coordinates.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask, BACKGROUND};

/// Window size and polar sampling resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarGeometry {
    pub window: usize,
    pub angles: usize,
    pub radii: usize,
}

impl Default for PolarGeometry {
    fn default() -> Self {
        Self {
            window: 128,
            angles: 180,
            radii: 180,
        }
    }
}

impl PolarGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.angles < 2 || self.radii < 2 {
            return Err(Error::Config(format!("degenerate polar geometry {self:?}")));
        }
        if self.angles % 2 != 0 || self.radii % 2 != 0 {
            return Err(Error::Config(format!(
                "polar angles and radii must be even, got {}x{}",
                self.angles, self.radii
            )));
        }
        Ok(())
    }

    fn centre(&self) -> f64 {
        self.window as f64 / 2.0
    }

    fn radial_step(&self) -> f64 {
        self.centre() / self.radii as f64
    }

    /// Cartesian window position sampled by polar cell `(i, j)`.
    pub fn cartesian_of(&self, i: usize, j: usize) -> (f64, f64) {
        let theta = TAU * i as f64 / self.angles as f64;
        let r = j as f64 * self.radial_step();
        let c = self.centre();
        (c + r * theta.cos(), c + r * theta.sin())
    }

    /// Fractional polar cell `(angle row, radius column)` of window point
    /// `(x, y)`, or `None` beyond the inscribed circle.
    pub fn polar_of(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let c = self.centre();
        let (dx, dy) = (x - c, y - c);
        let r = dx.hypot(dy);
        if r >= c {
            return None;
        }
        let mut theta = dy.atan2(dx);
        if theta < 0.0 {
            theta += TAU;
        }
        Some((theta * self.angles as f64 / TAU, r / self.radial_step()))
    }
}

/// A square crop of a fundus image centred on the (possibly jittered) disc.
#[derive(Debug, Clone, PartialEq)]
pub struct OdWindow {
    pub image: Image,
    pub mask: Option<Mask>,
    /// Source-image pixel at window index `(S/2, S/2)`, as `(x, y)`.
    pub center: (i64, i64),
}

/// Largest admissible per-axis jitter for a window of `size` pixels.
pub fn jitter_budget(size: usize, max_jitter_px: f64, reference: usize) -> f64 {
    max_jitter_px * size as f64 / reference as f64
}

/// Crops a `size`×`size` window whose centre index maps to `center + jitter`.
/// Pixels outside the source are zero (background for the mask).
pub fn crop_od_window(
    src: &Image,
    mask: Option<&Mask>,
    center: (i64, i64),
    size: usize,
    jitter: (i64, i64),
    budget: f64,
) -> Result<OdWindow> {
    let (cx, cy) = center;
    if cx < 0 || cy < 0 || cx >= src.width as i64 || cy >= src.height as i64 {
        return Err(Error::Geometry(format!(
            "disc centre ({cx}, {cy}) outside {}x{} image",
            src.width, src.height
        )));
    }
    if jitter.0.abs() as f64 > budget || jitter.1.abs() as f64 > budget {
        return Err(Error::Geometry(format!(
            "jitter {jitter:?} exceeds budget {budget} for window {size}"
        )));
    }
    if let Some(m) = mask {
        if (m.height, m.width) != (src.height, src.width) {
            return Err(Error::Geometry("mask and image sizes differ".into()));
        }
    }
    let c = (cx + jitter.0, cy + jitter.1);
    let top = c.1 - (size / 2) as i64;
    let left = c.0 - (size / 2) as i64;
    let mut data = Vec::with_capacity(src.channels * size * size);
    for ch in 0..src.channels {
        data.extend(crop_plane(src.plane(ch), src.height, src.width, top, left, size, 0.0));
    }
    let image = Image::new(src.channels, size, size, data)?;
    let mask = mask.map(|m| {
        let d = crop_plane(&m.data, m.height, m.width, top, left, size, BACKGROUND);
        Mask::new(size, size, d).expect("crop size")
    });
    Ok(OdWindow { image, mask, center: c })
}

fn crop_plane<T: Copy>(plane: &[T], h: usize, w: usize, top: i64, left: i64, size: usize, fill: T) -> Vec<T> {
    let mut out = vec![fill; size * size];
    for i in 0..size {
        let y = top + i as i64;
        if y < 0 || y >= h as i64 {
            continue;
        }
        for j in 0..size {
            let x = left + j as i64;
            if x >= 0 && x < w as i64 {
                out[i * size + j] = plane[y as usize * w + x as usize];
            }
        }
    }
    out
}

/// Bilinear sample of a plane at fractional `(y, x)` with zero outside.
pub(crate) fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
        + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    v as f32
}

/// Nearest sample of a mask at fractional `(y, x)`, background outside.
pub(crate) fn nearest(mask: &Mask, y: f64, x: f64) -> u8 {
    let (yy, xx) = (y.round(), x.round());
    if yy < 0.0 || xx < 0.0 || yy >= mask.height as f64 || xx >= mask.width as f64 {
        BACKGROUND
    } else {
        mask.get(yy as usize, xx as usize)
    }
}

fn check_window(geom: &PolarGeometry, h: usize, w: usize) -> Result<()> {
    geom.validate()?;
    if h != geom.window || w != geom.window {
        return Err(Error::Geometry(format!(
            "window is {h}x{w}, geometry expects {0}x{0}",
            geom.window
        )));
    }
    Ok(())
}

/// Bilinear polar resampling of a window image to `[C, A, R]`.
pub fn to_polar(window: &Image, geom: &PolarGeometry) -> Result<Image> {
    check_window(geom, window.height, window.width)?;
    let (a, r) = (geom.angles, geom.radii);
    let mut out = Image::zeros(window.channels, a, r);
    for ch in 0..window.channels {
        let plane = window.plane(ch);
        for i in 0..a {
            for j in 0..r {
                let (x, y) = geom.cartesian_of(i, j);
                out.data[(ch * a + i) * r + j] = bilinear(plane, window.height, window.width, y, x);
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour polar resampling of a window mask to `[A, R]`.
pub fn to_polar_mask(window: &Mask, geom: &PolarGeometry) -> Result<Mask> {
    check_window(geom, window.height, window.width)?;
    let (a, r) = (geom.angles, geom.radii);
    let mut data = Vec::with_capacity(a * r);
    for i in 0..a {
        for j in 0..r {
            let (x, y) = geom.cartesian_of(i, j);
            data.push(nearest(window, y, x));
        }
    }
    Mask::new(a, r, data)
}

fn check_polar(geom: &PolarGeometry, h: usize, w: usize) -> Result<()> {
    geom.validate()?;
    if h != geom.angles || w != geom.radii {
        return Err(Error::Geometry(format!(
            "polar map is {h}x{w}, geometry expects {}x{}",
            geom.angles, geom.radii
        )));
    }
    Ok(())
}

/// Inverse transform of a polar image; angle wraps, radius clamps, and
/// pixels beyond the inscribed circle are zero.
pub fn from_polar(polar: &Image, geom: &PolarGeometry) -> Result<Image> {
    check_polar(geom, polar.height, polar.width)?;
    let (a, r, s) = (geom.angles, geom.radii, geom.window);
    let mut out = Image::zeros(polar.channels, s, s);
    for y in 0..s {
        for x in 0..s {
            let Some((pa, pr)) = geom.polar_of(x as f64, y as f64) else {
                continue;
            };
            let (a0, fa) = (pa.floor(), pa - pa.floor());
            let (i0, i1) = (a0 as usize % a, (a0 as usize + 1) % a);
            let (r0, fr) = (pr.floor(), pr - pr.floor());
            let j0 = (r0 as usize).min(r - 1);
            let j1 = (j0 + 1).min(r - 1);
            for ch in 0..polar.channels {
                let p = polar.plane(ch);
                let v = (1.0 - fa) * ((1.0 - fr) * p[i0 * r + j0] as f64 + fr * p[i0 * r + j1] as f64)
                    + fa * ((1.0 - fr) * p[i1 * r + j0] as f64 + fr * p[i1 * r + j1] as f64);
                out.data[(ch * s + y) * s + x] = v as f32;
            }
        }
    }
    Ok(out)
}

/// Inverse transform of a polar mask by nearest neighbour; pixels beyond the
/// inscribed circle are background.
pub fn from_polar_mask(polar: &Mask, geom: &PolarGeometry) -> Result<Mask> {
    check_polar(geom, polar.height, polar.width)?;
    let (a, r, s) = (geom.angles, geom.radii, geom.window);
    let mut out = Mask::filled(s, s, BACKGROUND);
    for y in 0..s {
        for x in 0..s {
            if let Some((pa, pr)) = geom.polar_of(x as f64, y as f64) {
                let i = pa.round() as usize % a;
                let j = (pr.round() as usize).min(r - 1);
                out.data[y * s + x] = polar.get(i, j);
            }
        }
    }
    Ok(out)
}

/// Reverses the angle axis (rows) of every channel.
pub fn vflip_polar(polar: &Image) -> Image {
    let (h, w) = (polar.height, polar.width);
    let mut out = polar.clone();
    for ch in 0..polar.channels {
        for i in 0..h {
            let src = (ch * h + h - 1 - i) * w;
            let dst = (ch * h + i) * w;
            out.data[dst..dst + w].copy_from_slice(&polar.data[src..src + w]);
        }
    }
    out
}

pub fn vflip_mask(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut data = Vec::with_capacity(h * w);
    for i in (0..h).rev() {
        data.extend_from_slice(&mask.data[i * w..(i + 1) * w]);
    }
    Mask { height: h, width: w, data }
}

/// Rounded centroid `(x, y)` of all disc (rim or cup) pixels.
pub fn estimate_od_center(mask: &Mask) -> Result<(i64, i64)> {
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) != BACKGROUND {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Geometry("mask has no disc pixels".into()));
    }
    Ok(((sx / n as f64).round() as i64, (sy / n as f64).round() as i64))
}
