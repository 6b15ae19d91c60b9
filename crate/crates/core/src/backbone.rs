//! Multi-resolution backbone: stage `t` carries `t` parallel branches, each at
//! half the resolution of the previous one.
//!
//! Stem: `s0` stride-2 3×3 convs. Stage 1: one 3×3 conv. Stage `t ≥ 2`: a new
//! branch from a stride-2 conv on the last branch, one 3×3 conv per branch,
//! then an exchange where every output branch sums all inputs resampled to its
//! resolution (chains of stride-2 convs downwards, 1×1 conv plus bilinear
//! upsampling upwards). Every conv output passes through ReLU except those
//! feeding an exchange sum, which is rectified after summation.

use boostnet_autodiff::{Bound, ConvParams, Graph, InitSpec, ParamStore, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::model_config::BackboneConfig;

#[derive(Debug, Clone)]
enum Transfer {
    Identity,
    /// Stride-2 3×3 chain; intermediate links keep the source width.
    Down(Vec<ConvParams>),
    /// 1×1 conv then bilinear upsampling to the target resolution.
    Up(ConvParams),
}

#[derive(Debug, Clone)]
struct Stage {
    new_branch: ConvParams,
    blocks: Vec<ConvParams>,
    /// `exchange[j][i]` carries input branch `i` into output branch `j`.
    exchange: Vec<Vec<Transfer>>,
}

/// Branch tensors of one stage, highest resolution first.
pub type FeaturePyramid = Vec<Var>;

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    stem: Vec<ConvParams>,
    stage1: ConvParams,
    stages: Vec<Stage>,
}

fn he(cin: usize, k: usize) -> InitSpec {
    InitSpec::fan_in(cin * k * k)
}

impl Backbone {
    /// Registers all backbone parameters under `backbone.*`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let conv = |store: &mut ParamStore<T>, name: String, cin, cout, k, stride| {
            ConvParams::new(store, &name, cin, cout, k, stride, he(cin, k), seed)
        };
        let mut stem = Vec::new();
        let mut cin = 3;
        for i in 0..config.stem_convs {
            stem.push(conv(store, format!("backbone.stem{i}"), cin, config.stem_channels, 3, 2)?);
            cin = config.stem_channels;
        }
        let c1 = config.stage2[0];
        let stage1 = conv(store, "backbone.stage1".into(), cin, c1, 3, 1)?;
        let mut prev: Vec<usize> = vec![c1];
        let mut stages = Vec::new();
        for (t, chans) in config.stages().iter().enumerate() {
            let tag = format!("backbone.s{}", t + 2);
            let k = chans.len();
            let new_branch = conv(store, format!("{tag}.new"), *prev.last().unwrap(), chans[k - 1], 3, 2)?;
            let inputs: Vec<usize> = prev.iter().copied().chain([chans[k - 1]]).collect();
            let blocks = (0..k)
                .map(|i| conv(store, format!("{tag}.b{i}"), inputs[i], chans[i], 3, 1))
                .collect::<boostnet_autodiff::Result<Vec<_>>>()?;
            let mut exchange = Vec::with_capacity(k);
            for j in 0..k {
                let mut row = Vec::with_capacity(k);
                for i in 0..k {
                    let name = format!("{tag}.x{i}to{j}");
                    row.push(match i.cmp(&j) {
                        std::cmp::Ordering::Equal => Transfer::Identity,
                        std::cmp::Ordering::Greater => Transfer::Up(conv(store, name, chans[i], chans[j], 1, 1)?),
                        std::cmp::Ordering::Less => {
                            let mut chain = Vec::new();
                            for step in 0..j - i {
                                let cout = if step + 1 == j - i { chans[j] } else { chans[i] };
                                chain.push(conv(store, format!("{name}.{step}"), chans[i], cout, 3, 2)?);
                            }
                            Transfer::Down(chain)
                        }
                    });
                }
                exchange.push(row);
            }
            stages.push(Stage { new_branch, blocks, exchange });
            prev = chans.to_vec();
        }
        Ok(Self {
            config: config.clone(),
            stem,
            stage1,
            stages,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Pyramids of stages 2, 3 and 4.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<[FeaturePyramid; 3]> {
        self.forward_observed(g, p, x, &mut |_, _| {})
    }

    /// [`Self::forward`], reporting every conv with its pre-activation output
    /// in execution order.
    pub fn forward_observed<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        observe: &mut dyn FnMut(&ConvParams, Var),
    ) -> Result<[FeaturePyramid; 3]> {
        let (_, c, h, w) = g.value(x).dims4()?;
        let m = self.config.input_multiple();
        if c != 3 || h % m != 0 || w % m != 0 {
            return Err(Error::Geometry(format!(
                "backbone input must be [N, 3, H, W] with H, W multiples of {m}, got [_, {c}, {h}, {w}]"
            )));
        }
        let mut y = x;
        for conv in &self.stem {
            let z = conv.forward(g, p, y)?;
            observe(conv, z);
            y = g.relu(z)?;
        }
        let z = self.stage1.forward(g, p, y)?;
        observe(&self.stage1, z);
        let mut branches = vec![g.relu(z)?];
        let mut out = Vec::with_capacity(3);
        for stage in &self.stages {
            branches = stage_forward(g, p, stage, &branches, observe)?;
            out.push(branches.clone());
        }
        Ok(out.try_into().expect("three stages"))
    }

    /// Rescales every conv, in execution order, so that its pre-activation
    /// output on `x` has unit RMS; convs with an all-zero output are left
    /// unchanged. Without normalization layers the
    /// output scale of a fan-in initialised stack on smooth images varies
    /// by orders of magnitude between seeds.
    pub fn calibrate<T: Real>(&self, store: &mut ParamStore<T>, x: &Tensor<T>) -> Result<()> {
        let mut order = Vec::new();
        {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            let xv = g.input(x.clone());
            self.forward_observed(&mut g, &p, xv, &mut |conv, _| order.push((conv.weight, conv.bias)))?;
        }
        for (k, &(weight, bias)) in order.iter().enumerate() {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            let xv = g.input(x.clone());
            let (mut seen, mut target) = (0, None);
            self.forward_observed(&mut g, &p, xv, &mut |_, z| {
                if seen == k {
                    target = Some(z);
                }
                seen += 1;
            })?;
            let z = g.value(target.expect("conv visited"));
            let rms = (z.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / z.numel().max(1) as f64).sqrt();
            if !(rms.is_finite() && rms > 0.0) {
                continue;
            }
            let scale = T::from_f64(1.0 / rms);
            for id in [weight, bias] {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = *v * scale);
            }
        }
        Ok(())
    }
}

fn stage_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    stage: &Stage,
    prev: &[Var],
    observe: &mut dyn FnMut(&ConvParams, Var),
) -> Result<Vec<Var>> {
    let z = stage.new_branch.forward(g, p, *prev.last().expect("non-empty"))?;
    observe(&stage.new_branch, z);
    let fresh = g.relu(z)?;
    let mut blocks = Vec::with_capacity(stage.blocks.len());
    for (conv, &input) in stage.blocks.iter().zip(prev.iter().chain([&fresh])) {
        let z = conv.forward(g, p, input)?;
        observe(conv, z);
        blocks.push(g.relu(z)?);
    }
    let mut out = Vec::with_capacity(blocks.len());
    for (j, row) in stage.exchange.iter().enumerate() {
        let (_, _, hj, wj) = g.value(blocks[j]).dims4()?;
        let mut terms = Vec::with_capacity(row.len());
        for (i, transfer) in row.iter().enumerate() {
            let v = match transfer {
                Transfer::Identity => blocks[i],
                Transfer::Up(conv) => {
                    let z = conv.forward(g, p, blocks[i])?;
                    observe(conv, z);
                    g.bilinear_upsample(z, hj, wj)?
                }
                Transfer::Down(chain) => {
                    let mut v = blocks[i];
                    for (step, conv) in chain.iter().enumerate() {
                        v = conv.forward(g, p, v)?;
                        observe(conv, v);
                        if step + 1 < chain.len() {
                            v = g.relu(v)?;
                        }
                    }
                    v
                }
            };
            terms.push((v, 1.0));
        }
        let sum = g.linear_comb(&terms)?;
        out.push(g.relu(sum)?);
    }
    Ok(out)
}
