//! Boosted dense classifier: side-output units produce residual logit maps
//! (`DOP_m`) from progressively shallower backbone stages and aggregation
//! units fold them into the boosted maps (`BOP_m`).
//!
//! `DOP_0 = dsu0(stage 4)`, `BOP_0 = DOP_0`, and for `m ≥ 1`
//! `DOP_m = dsu_m(stage 4−m)`, `BOP_m = au_m(concat(BOP_{m−1}, DOP_m))`.

use boostnet_autodiff::{
    deformable_conv2d, pointwise_fc, resize_planes, softmax_channels, Bound, ConvParams, DeformConvParams, Graph,
    InitSpec, LabelMap, ParamStore, Real, Tensor, Var,
};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::image::{Mask, NUM_CLASSES};
use crate::model_config::ModelConfig;

/// Side-output unit: per-branch deformable conv, upsampling, concatenation,
/// fuse fc with ReLU, residual fc to class logits.
#[derive(Debug, Clone)]
pub struct Dsu {
    pub branches: Vec<DeformConvParams>,
    pub fuse: ConvParams,
    pub residual: ConvParams,
}

/// Aggregation unit: one 6→3 pointwise fc over `concat(BOP_{m−1}, DOP_m)`.
#[derive(Debug, Clone)]
pub struct Au {
    pub fc: ConvParams,
}

/// Logit-map size: `height × width` before cropping to the valid region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputGeometry {
    pub height: usize,
    pub width: usize,
    pub valid_height: usize,
    pub valid_width: usize,
}

impl OutputGeometry {
    fn cropped(&self) -> bool {
        (self.valid_height, self.valid_width) != (self.height, self.width)
    }
}

/// `dop[m]` and `bop[m]` for `m = 0..=M`; `bop[0]` is the same node as `dop[0]`.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    pub dop: Vec<Var>,
    pub bop: Vec<Var>,
}

impl StageOutputs {
    /// The final prediction map `BOP_M`.
    pub fn last(&self) -> Var {
        *self.bop.last().expect("at least one stage")
    }
}

impl Dsu {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        branch_channels: &[usize],
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        let h = &config.heads;
        let k = h.dc_kernel;
        let branches = branch_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                DeformConvParams::new(store, &format!("{name}.dc{i}"), c, h.dc_channels, k, InitSpec::fan_in(c * k * k), seed)
            })
            .collect::<boostnet_autodiff::Result<Vec<_>>>()?;
        let concat = h.dc_channels * branch_channels.len();
        let fuse = ConvParams::new(store, &format!("{name}.fuse"), concat, h.fuse_channels, 1, 1, InitSpec::fan_in(concat), seed)?;
        let res_init = InitSpec::Gaussian {
            mean: 0.0,
            std: h.residual_init_std,
        };
        let residual = ConvParams::new(store, &format!("{name}.res"), h.fuse_channels, NUM_CLASSES, 1, 1, res_init, seed)?;
        Ok(Self { branches, fuse, residual })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, feats: &[Var], out: &OutputGeometry) -> Result<Var> {
        if feats.len() != self.branches.len() {
            return Err(Error::Geometry(format!(
                "side-output unit expects {} branches, got {}",
                self.branches.len(),
                feats.len()
            )));
        }
        let mut ups = Vec::with_capacity(feats.len());
        for (dc, &f) in self.branches.iter().zip(feats) {
            let y = deformable_conv2d(g, p, f, dc)?;
            let (_, _, h, w) = g.value(y).dims4()?;
            ups.push(if (h, w) == (out.height, out.width) {
                y
            } else {
                g.bilinear_upsample(y, out.height, out.width)?
            });
        }
        let mut cat = g.concat_channels(&ups)?;
        if out.cropped() {
            cat = g.crop(cat, 0, 0, out.valid_height, out.valid_width)?;
        }
        let fused = pointwise_fc(g, p, cat, &self.fuse)?;
        let fused = g.relu(fused)?;
        Ok(pointwise_fc(g, p, fused, &self.residual)?)
    }
}

impl Au {
    /// Weights start at `[I₃ | I₃]` with zero bias: pure residual addition.
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, seed: u64) -> Result<Self> {
        let fc = ConvParams::new(store, name, 2 * NUM_CLASSES, NUM_CLASSES, 1, 1, InitSpec::Zeros, seed)?;
        let w = store.get_mut(fc.weight).data_mut();
        for o in 0..NUM_CLASSES {
            w[o * 2 * NUM_CLASSES + o] = T::one();
            w[o * 2 * NUM_CLASSES + NUM_CLASSES + o] = T::one();
        }
        Ok(Self { fc })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, bop_prev: Var, dop: Var) -> Result<Var> {
        if g.value(bop_prev).shape() != g.value(dop).shape() {
            return Err(Error::Geometry(format!(
                "aggregation inputs differ: {:?} vs {:?}",
                g.value(bop_prev).shape(),
                g.value(dop).shape()
            )));
        }
        let cat = g.concat_channels(&[bop_prev, dop])?;
        Ok(pointwise_fc(g, p, cat, &self.fc)?)
    }
}

#[derive(Debug, Clone)]
pub struct BoostNet<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub backbone: Backbone,
    /// `dsus[m]` attaches to backbone stage `4 − m`.
    pub dsus: Vec<Dsu>,
    /// `aus[m − 1]` produces `BOP_m`.
    pub aus: Vec<Au>,
}

impl<T: Real> BoostNet<T> {
    /// Every tensor is seeded from `(seed, parameter name)`, so models that
    /// differ only in `M` share the initial values of their common modules.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, &config.backbone, seed)?;
        let stages = config.backbone.stages();
        let mut dsus = Vec::new();
        let mut aus = Vec::new();
        for m in 0..=config.stages {
            dsus.push(Dsu::new(&mut params, &format!("dsu{m}"), stages[2 - m], config, seed)?);
            if m > 0 {
                aus.push(Au::new(&mut params, &format!("au{m}"), seed)?);
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
            backbone,
            dsus,
            aus,
        })
    }

    /// Output geometry for an unpadded `valid_h × valid_w` input.
    pub fn output_geometry(&self, valid_h: usize, valid_w: usize) -> Result<OutputGeometry> {
        let s = self.config.heads.output_stride;
        if valid_h % s != 0 || valid_w % s != 0 {
            return Err(Error::Geometry(format!(
                "input {valid_h}x{valid_w} is not divisible by the output stride {s}"
            )));
        }
        let m = self.config.backbone.input_multiple();
        Ok(OutputGeometry {
            height: valid_h.div_ceil(m) * m / s,
            width: valid_w.div_ceil(m) * m / s,
            valid_height: valid_h / s,
            valid_width: valid_w / s,
        })
    }

    /// Runs the network on a padded batch whose meaningful content occupies
    /// the top-left `valid_h × valid_w` pixels.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var, valid: (usize, usize)) -> Result<StageOutputs> {
        let (_, _, h, w) = g.value(x).dims4()?;
        let out = self.output_geometry(valid.0, valid.1)?;
        let s = self.config.heads.output_stride;
        if (out.height * s, out.width * s) != (h, w) {
            return Err(Error::Geometry(format!(
                "input {h}x{w} is not the padded size of valid region {}x{}",
                valid.0, valid.1
            )));
        }
        let pyramids = self.backbone.forward(g, p, x)?;
        let mut dop = Vec::with_capacity(self.dsus.len());
        let mut bop = Vec::with_capacity(self.dsus.len());
        for (m, dsu) in self.dsus.iter().enumerate() {
            let r = dsu.forward(g, p, &pyramids[2 - m], &out)?;
            dop.push(r);
            bop.push(if m == 0 { r } else { self.aus[m - 1].forward(g, p, bop[m - 1], r)? });
        }
        Ok(StageOutputs { dop, bop })
    }

    /// Softmax of `BOP_M` for a batch of unpadded inputs `[N, 3, h, w]`,
    /// optionally averaged with the row-flipped input's un-flipped prediction.
    pub fn predict_probs(&self, input: &Tensor<T>, tta_vflip: bool) -> Result<Tensor<T>> {
        let probs = self.single_pass(input)?;
        if !tta_vflip {
            return Ok(probs);
        }
        let flipped = flip_rows(&self.single_pass(&flip_rows(input)?)?)?;
        let half = T::from_f64(0.5);
        let data = probs
            .data()
            .iter()
            .zip(flipped.data())
            .map(|(&a, &b)| (a + b) * half)
            .collect();
        Ok(Tensor::new(probs.shape(), data)?)
    }

    fn single_pass(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, h, w) = input.dims4()?;
        let padded = pad_to_multiple(input, self.config.backbone.input_multiple())?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.input(padded);
        let out = self.forward(&mut g, &p, x, (h, w))?;
        Ok(softmax_channels(g.value(out.last()))?)
    }
}

/// Per-head cross-entropies and their weighted total.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub heads: Vec<Var>,
}

/// `Σ_m λ_m · CE(BOP_m)` over the supervised maps `DOP_0 = BOP_0, BOP_1, …`.
pub fn boostnet_loss<T: Real>(
    g: &mut Graph<T>,
    out: &StageOutputs,
    labels: &LabelMap,
    weights: &[f64; 3],
) -> Result<LossTerms> {
    let mut heads = Vec::with_capacity(out.bop.len());
    for &b in &out.bop {
        heads.push(g.softmax_ce(b, labels)?);
    }
    let terms: Vec<(Var, f64)> = heads.iter().copied().zip(weights.iter().copied()).collect();
    let total = g.linear_comb(&terms)?;
    Ok(LossTerms { total, heads })
}

/// Zero-pads the bottom and right of `[N, C, H, W]` up to multiples of `m`.
pub fn pad_to_multiple<T: Real>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = vec![T::zero(); n * c * ph * pw];
    for plane in 0..n * c {
        for y in 0..h {
            let src = (plane * h + y) * w;
            let dst = (plane * ph + y) * pw;
            out[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
        }
    }
    Ok(Tensor::new(&[n, c, ph, pw], out)?)
}

/// Reverses the row axis of `[N, C, H, W]`.
pub fn flip_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = Vec::with_capacity(x.numel());
    for plane in 0..n * c {
        for y in (0..h).rev() {
            let src = (plane * h + y) * w;
            out.extend_from_slice(&x.data()[src..src + w]);
        }
    }
    Ok(Tensor::new(&[n, c, h, w], out)?)
}

/// Per-pixel argmax of `[N, 3, h, w]` after bilinear resizing to
/// `out_h × out_w`; ties resolve to the lower class index.
pub fn decode_masks<T: Real>(probs: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Vec<Mask>> {
    let (n, c, h, w) = probs.dims4()?;
    if c != NUM_CLASSES {
        return Err(Error::Geometry(format!("expected {NUM_CLASSES} class maps, got {c}")));
    }
    let mut masks = Vec::with_capacity(n);
    for i in 0..n {
        let planes: Vec<Vec<T>> = (0..c)
            .map(|k| {
                let start = (i * c + k) * h * w;
                let plane = &probs.data()[start..start + h * w];
                if (h, w) == (out_h, out_w) {
                    plane.to_vec()
                } else {
                    resize_planes(plane, h, w, out_h, out_w)
                }
            })
            .collect();
        let data = (0..out_h * out_w)
            .map(|px| {
                let mut best = 0;
                for k in 1..c {
                    if planes[k][px] > planes[best][px] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        masks.push(Mask::new(out_h, out_w, data)?);
    }
    Ok(masks)
}
