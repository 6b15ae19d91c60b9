#![allow(dead_code)]

use boostnet_autodiff::{Bound, Graph, InitSpec, LabelMap, ParamId, StreamRng, Tensor, Var};
use boostnet_core::boostnet::{boostnet_loss, BoostNet, StageOutputs};
use boostnet_core::model_config::{BackboneConfig, HeadConfig, ModelConfig};
use boostnet_core::Error;

/// Two channels per branch, one stem conv, 16×16 inputs and 8×8 outputs.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        stages: 2,
        loss_weights: [1.0, 1.0, 1.0],
        backbone: BackboneConfig {
            stem_convs: 1,
            stem_channels: 2,
            stage2: vec![2, 2],
            stage3: vec![2, 2, 2],
            stage4: vec![2, 2, 2, 2],
        },
        heads: HeadConfig {
            dc_channels: 2,
            dc_kernel: 3,
            fuse_channels: 3,
            residual_init_std: 0.5,
            output_stride: 2,
        },
    }
}

/// Redraws every parameter from a zero-mean gaussian, offsets included, so
/// no sampling position sits on an integer grid point.
pub fn randomize(net: &mut BoostNet<f64>, seed: u64, std: f64) {
    for e in net.params.entries_mut() {
        e.value = Tensor::init_named(e.value.shape(), InitSpec::Gaussian { mean: 0.0, std }, seed, &e.name).unwrap();
    }
}

pub fn input(seed: u64, n: usize, side: usize) -> Tensor<f64> {
    Tensor::init_named(&[n, 3, side, side], InitSpec::Gaussian { mean: 0.0, std: 1.0 }, seed, "input").unwrap()
}

pub fn labels(seed: u64, n: usize, side: usize) -> LabelMap {
    let mut rng = StreamRng::new(seed, "labels");
    LabelMap::new(n, side, side, (0..n * side * side).map(|_| rng.below(3) as u8).collect()).unwrap()
}

pub fn set_au(net: &mut BoostNet<f64>, stage: usize, prev: f64, cur: f64) {
    let fc = net.aus[stage - 1].fc;
    let w = net.params.get_mut(fc.weight).data_mut();
    w.fill(0.0);
    for o in 0..3 {
        w[o * 6 + o] = prev;
        w[o * 6 + 3 + o] = cur;
    }
    net.params.get_mut(fc.bias).data_mut().fill(0.0);
}

/// Forward pass with parameter `id` replaced by the probe variable `w`.
pub fn forward_with(net: &BoostNet<f64>, g: &mut Graph<f64>, x: &Tensor<f64>, id: ParamId, w: Var) -> Result<StageOutputs, Error> {
    let mut vars = net.params.bind_frozen(g).vars().to_vec();
    vars[id.index()] = w;
    let p = Bound::from_vars(vars);
    let xv = g.input(x.clone());
    let (_, _, h, wd) = x.dims4()?;
    net.forward(g, &p, xv, (h, wd))
}

pub fn loss_with(
    net: &BoostNet<f64>,
    g: &mut Graph<f64>,
    x: &Tensor<f64>,
    labels: &LabelMap,
    id: ParamId,
    w: Var,
) -> Result<Var, Error> {
    let out = forward_with(net, g, x, id, w)?;
    Ok(boostnet_loss(g, &out, labels, &net.config.loss_weights)?.total)
}
