//! Deterministic fundus-like samples and the on-disk dataset layout.
//!
//! Layout: `images/<id>.ppm` (8-bit RGB), `masks/<id>.pgm` (8-bit class
//! indices) and `manifest.json`. Regions are rasterized by pixel-centre
//! inclusion: pixel `(x, y)` lies in an ellipse iff
//! `((x-cx)/rx)² + ((y-cy)/ry)² ≤ 1`, evaluated with IEEE arithmetic only.

use std::fs;
use std::path::{Path, PathBuf};

use boostnet_autodiff::StreamRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Image, Mask, BACKGROUND, CUP, RIM};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
const MAX_GEOMETRY_TRIES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub size: usize,
    /// Horizontal disc semi-axis as a fraction of `size`.
    pub od_axis_range: [f64; 2],
    /// Vertical over horizontal disc semi-axis.
    pub od_aspect_range: [f64; 2],
    /// Cup semi-axes over disc semi-axes.
    pub cup_ratio_range: [f64; 2],
    /// Largest cup centre offset as a fraction of the disc semi-axes.
    pub cup_offset: f64,
    /// Largest disc centre offset from the image centre, fraction of `size`.
    pub center_jitter: f64,
    pub background: [f64; 3],
    pub rim: [f64; 3],
    pub cup: [f64; 3],
    /// Per-sample uniform shift of each region's base intensity.
    pub intensity_jitter: f64,
    pub vessel_count: [usize; 2],
    pub vessel_width: [f64; 2],
    /// Fraction of intensity removed under a vessel.
    pub vessel_darkening: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            size: 128,
            od_axis_range: [0.14, 0.20],
            od_aspect_range: [0.95, 1.15],
            cup_ratio_range: [0.3, 0.8],
            cup_offset: 0.08,
            center_jitter: 0.05,
            background: [0.55, 0.27, 0.14],
            rim: [0.78, 0.50, 0.28],
            cup: [0.95, 0.80, 0.58],
            intensity_jitter: 0.03,
            vessel_count: [2, 4],
            vessel_width: [1.0, 2.5],
            vessel_darkening: 0.35,
            noise_std: 0.03,
            seed: 0,
        }
    }
}

fn mean3(c: &[f64; 3]) -> f64 {
    (c[0] + c[1] + c[2]) / 3.0
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size < 16 {
            return bad(format!("synthetic image size {} below 16", self.size));
        }
        let ranges = [
            ("od_axis_range", self.od_axis_range),
            ("od_aspect_range", self.od_aspect_range),
            ("cup_ratio_range", self.cup_ratio_range),
            ("vessel_width", self.vessel_width),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return bad(format!("{name} must be a non-empty positive range, got [{lo}, {hi}]"));
            }
        }
        if self.cup_ratio_range[1] >= 1.0 {
            return bad("cup_ratio_range must lie inside (0, 1)".into());
        }
        if self.od_axis_range[1] * self.od_aspect_range[1] + self.center_jitter >= 0.5 {
            return bad("disc does not fit inside the image".into());
        }
        if self.vessel_count[0] > self.vessel_count[1] {
            return bad("vessel_count must be a non-empty range".into());
        }
        let scalars = [
            ("cup_offset", self.cup_offset),
            ("center_jitter", self.center_jitter),
            ("intensity_jitter", self.intensity_jitter),
            ("vessel_darkening", self.vessel_darkening),
            ("noise_std", self.noise_std),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        for c in [self.background, self.rim, self.cup] {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("region intensities must lie in [0, 1]".into());
            }
        }
        if !(mean3(&self.background) < mean3(&self.rim) && mean3(&self.rim) < mean3(&self.cup)) {
            return bad("region brightness must increase from background to rim to cup".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("params serialize").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
    /// Disc centre `(x, y)` in pixel indices.
    pub od_center: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let u = (x - self.cx) / self.rx;
        let v = (y - self.cy) / self.ry;
        u * u + v * v <= 1.0
    }
}

fn rasterize(s: usize, od: &Ellipse, cup: &Ellipse) -> Mask {
    let mut data = vec![BACKGROUND; s * s];
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f64, y as f64);
            data[y * s + x] = if cup.contains(fx, fy) {
                CUP
            } else if od.contains(fx, fy) {
                RIM
            } else {
                BACKGROUND
            };
        }
    }
    Mask { height: s, width: s, data }
}

/// Every cup pixel's 8-neighbours exist and are disc pixels, and a rim exists.
fn cup_contained(mask: &Mask) -> bool {
    let s = mask.height as i64;
    let mut any_cup = false;
    for y in 0..s {
        for x in 0..s {
            if mask.data[(y * s + x) as usize] != CUP {
                continue;
            }
            any_cup = true;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= s || ny >= s || mask.data[(ny * s + nx) as usize] == BACKGROUND {
                        return false;
                    }
                }
            }
        }
    }
    any_cup && mask.count(RIM) > 0
}

fn draw_geometry(p: &SynthParams, rng: &mut StreamRng) -> Result<(Ellipse, Ellipse, Mask)> {
    let s = p.size as f64;
    for _ in 0..MAX_GEOMETRY_TRIES {
        let rx = rng.uniform_range(p.od_axis_range[0], p.od_axis_range[1]) * s;
        let ry = rx * rng.uniform_range(p.od_aspect_range[0], p.od_aspect_range[1]);
        let j = p.center_jitter * s;
        let od = Ellipse {
            cx: s / 2.0 + rng.uniform_range(-j, j),
            cy: s / 2.0 + rng.uniform_range(-j, j),
            rx,
            ry,
        };
        let ratio = rng.uniform_range(p.cup_ratio_range[0], p.cup_ratio_range[1]);
        let cup = Ellipse {
            cx: od.cx + rng.uniform_range(-1.0, 1.0) * p.cup_offset * rx,
            cy: od.cy + rng.uniform_range(-1.0, 1.0) * p.cup_offset * ry,
            rx: ratio * rx,
            ry: ratio * ry,
        };
        let mask = rasterize(p.size, &od, &cup);
        if cup_contained(&mask) {
            return Ok((od, cup, mask));
        }
    }
    Err(Error::Config(format!(
        "no feasible disc/cup geometry after {MAX_GEOMETRY_TRIES} draws"
    )))
}

fn quadratic_bezier(p: [(f64, f64); 3], t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    (
        u * u * p[0].0 + 2.0 * u * t * p[1].0 + t * t * p[2].0,
        u * u * p[0].1 + 2.0 * u * t * p[1].1 + t * t * p[2].1,
    )
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (px - a.0 - t * dx).hypot(py - a.1 - t * dy)
}

/// Unit direction drawn without trigonometry.
fn random_direction(rng: &mut StreamRng) -> (f64, f64) {
    loop {
        let (x, y) = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
        let n = x.hypot(y);
        if n > 1e-3 && n <= 1.0 {
            return (x / n, y / n);
        }
    }
}

/// Vessel coverage: pixels within half a width of a curve through the disc.
fn vessel_map(p: &SynthParams, od: &Ellipse, rng: &mut StreamRng) -> Vec<bool> {
    const SEGMENTS: usize = 24;
    let s = p.size;
    let mut hit = vec![false; s * s];
    let count = rng.int_inclusive(p.vessel_count[0] as i64, p.vessel_count[1] as i64);
    let reach = s as f64 * 0.75;
    for _ in 0..count {
        let (dx, dy) = random_direction(rng);
        let (ex, ey) = random_direction(rng);
        let bend = 0.5;
        let start = (od.cx + reach * dx, od.cy + reach * dy);
        let end = (od.cx - reach * (dx + bend * ex), od.cy - reach * (dy + bend * ey));
        let ctrl = (
            od.cx + rng.uniform_range(-0.5, 0.5) * od.rx,
            od.cy + rng.uniform_range(-0.5, 0.5) * od.ry,
        );
        let half = rng.uniform_range(p.vessel_width[0], p.vessel_width[1]) / 2.0;
        let pts: Vec<(f64, f64)> = (0..=SEGMENTS)
            .map(|k| quadratic_bezier([start, ctrl, end], k as f64 / SEGMENTS as f64))
            .collect();
        for y in 0..s {
            for x in 0..s {
                let (fx, fy) = (x as f64, y as f64);
                if !hit[y * s + x] && pts.windows(2).any(|w| segment_distance(fx, fy, w[0], w[1]) <= half) {
                    hit[y * s + x] = true;
                }
            }
        }
    }
    hit
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Deterministic in `(params.seed, index)`.
pub fn generate_sample(p: &SynthParams, index: usize) -> Result<LabeledSample> {
    p.validate()?;
    let mut rng = StreamRng::new(p.seed, &format!("synth/sample/{index}"));
    let (od, _cup, mask) = draw_geometry(p, &mut rng)?;
    let mut colors = [p.background, p.rim, p.cup];
    for c in colors.iter_mut() {
        let shift = rng.uniform_range(-p.intensity_jitter, p.intensity_jitter);
        for v in c.iter_mut() {
            *v += shift;
        }
    }
    let vessels = vessel_map(p, &od, &mut rng);
    let s = p.size;
    let mut data = vec![0.0f32; 3 * s * s];
    for ch in 0..3 {
        for k in 0..s * s {
            let mut v = colors[mask.data[k] as usize][ch];
            if vessels[k] {
                v *= 1.0 - p.vessel_darkening;
            }
            if p.noise_std > 0.0 {
                v += p.noise_std * rng.normal();
            }
            data[ch * s * s + k] = v as f32;
        }
    }
    let image = Image::new(3, s, s, data)?.quantized();
    Ok(LabeledSample {
        id: sample_id(index),
        image,
        mask,
        od_center: (od.cx.round() as i64, od.cy.round() as i64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Disc centre `[x, y]`.
    pub center: [i64; 2],
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// Absent for externally supplied data.
    #[serde(default)]
    pub params: Option<SynthParams>,
    #[serde(default)]
    pub params_hash: Option<String>,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `n_train + n_test` samples; train ids precede test ids.
pub fn generate_dataset(p: &SynthParams, n_train: usize, n_test: usize, out_dir: &Path) -> Result<Manifest> {
    p.validate()?;
    create_dir(&out_dir.join("images"))?;
    create_dir(&out_dir.join("masks"))?;
    let mut samples = Vec::with_capacity(n_train + n_test);
    for index in 0..n_train + n_test {
        let sample = generate_sample(p, index)?;
        let image = format!("images/{}.ppm", sample.id);
        let mask = format!("masks/{}.pgm", sample.id);
        sample.image.save(&out_dir.join(&image))?;
        sample.mask.save(&out_dir.join(&mask))?;
        samples.push(ManifestEntry {
            id: sample.id,
            split: if index < n_train { Split::Train } else { Split::Test },
            center: [sample.od_center.0, sample.od_center.1],
            image,
            mask,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        params: Some(p.clone()),
        params_hash: Some(p.hash()),
        samples,
    };
    write_file(&out_dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[LabeledSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::data(&path, format!("malformed manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::data(
            &path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    match (&manifest.params, &manifest.params_hash) {
        (Some(p), Some(h)) if p.hash() != *h => {
            return Err(Error::data(&path, format!("params hash mismatch: recorded {h}, computed {}", p.hash())))
        }
        (Some(_), None) => return Err(Error::data(&path, "params present without params_hash")),
        _ => {}
    }
    let mut seen = std::collections::HashSet::new();
    for e in &manifest.samples {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::data(&path, format!("duplicate sample id {}", e.id)));
        }
    }
    Ok(manifest)
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<LabeledSample> {
    let image_path = dir.join(&entry.image);
    let mask_path = dir.join(&entry.mask);
    let image = Image::load(&image_path)?;
    let mask = Mask::load(&mask_path)?;
    if let Some(v) = mask.invalid_value() {
        return Err(Error::data(&mask_path, format!("mask value {v} outside {{0, 1, 2}}")));
    }
    if (mask.height, mask.width) != (image.height, image.width) {
        return Err(Error::data(
            &mask_path,
            format!(
                "mask is {}x{} but image is {}x{}",
                mask.height, mask.width, image.height, image.width
            ),
        ));
    }
    let [cx, cy] = entry.center;
    if cx < 0 || cy < 0 || cx >= image.width as i64 || cy >= image.height as i64 {
        return Err(Error::data(&image_path, format!("centre ({cx}, {cy}) outside the image")));
    }
    Ok(LabeledSample {
        id: entry.id.clone(),
        image,
        mask,
        od_center: (cx, cy),
    })
}

/// Loads and validates every sample listed in the manifest, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for entry in &manifest.samples {
        let sample = load_sample(dir, entry)?;
        match entry.split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
        train,
        test,
    })
}
