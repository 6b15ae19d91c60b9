//! End-to-end training of all units under one SGD optimizer.
//!
//! Epoch `e` visits the training samples in the order of a permutation drawn
//! from the stream `shuffle/{e}`; the last partial batch is kept. Sample `i`
//! of epoch `e` is augmented from the stream `augment/{e}/{i}`.

use boostnet_autodiff::{sgd_step, Graph, OptimizerState, Real, StreamRng, Tensor};
use serde::Serialize;

use crate::boostnet::{boostnet_loss, pad_to_multiple, BoostNet};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::pipeline::{batch_tensor, downsample_labels, label_map, prepare_eval, prepare_train};
use crate::synth::LabeledSample;

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iter: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Cross-entropies of `DOP_0, BOP_1, …, BOP_M`.
    pub head_ce: Vec<f64>,
    /// Global L2 norm of the loss gradient before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    pub config: RunConfig,
    pub model: BoostNet<T>,
    pub optim: OptimizerState<T>,
    /// Completed optimizer steps.
    pub iteration: u64,
}

pub fn total_iterations(config: &RunConfig, n_train: usize) -> u64 {
    (config.train.epochs * config.iterations_per_epoch(n_train)) as u64
}

impl<T: Real> Trainer<T> {
    pub fn new(config: &RunConfig, n_train: usize) -> Result<Self> {
        config.validate()?;
        if n_train == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        let model = BoostNet::new(&config.model, config.seed)?;
        let optim = OptimizerState::new(config.optim.sgd(total_iterations(config, n_train)), &model.params)?;
        Ok(Self {
            config: config.clone(),
            model,
            optim,
            iteration: 0,
        })
    }

    /// Forward, loss, backward and one SGD update on prepared polar samples.
    pub fn step(&mut self, batch: &[(Image, Mask)], epoch: usize) -> Result<TrainRecord> {
        let stride = self.config.model.heads.output_stride;
        let images: Vec<_> = batch.iter().map(|(img, _)| img).collect();
        let labels = batch
            .iter()
            .map(|(_, m)| downsample_labels(m, stride))
            .collect::<Result<Vec<_>>>()?;
        let (h, w) = (images[0].height, images[0].width);
        let x = pad_to_multiple(&batch_tensor::<T>(&images)?, self.config.model.backbone.input_multiple())?;
        let iteration = self.iteration;
        let located = |e: Error| match e {
            Error::Tensor(boostnet_autodiff::Error::NonFinite { op }) => Error::Numeric(format!(
                "non-finite value from `{op}` at iteration {iteration} (epoch {epoch})"
            )),
            other => other,
        };
        let (value, head_ce, grads) = self.loss_and_grads(x, (h, w), &labels).map_err(located)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {value} at iteration {iteration} (epoch {epoch}); head cross-entropies {head_ce:?}"
            )));
        }
        if let Some((e, _)) = self.model.params.entries().iter().zip(&grads).find(|(_, gr)| !gr.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for `{}` at iteration {iteration} (epoch {epoch})",
                e.name
            )));
        }
        let grad_norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt();
        let max = self.config.optim.max_grad_norm;
        let mut grads = grads;
        if max > 0.0 && grad_norm > max {
            let s = T::from_f64(max / grad_norm);
            grads.iter_mut().flat_map(|g| g.data_mut()).for_each(|v| *v = *v * s);
        }
        let lr = sgd_step(&mut self.model.params, &grads, &mut self.optim, self.iteration)?;
        let record = TrainRecord {
            iter: self.iteration,
            epoch,
            lr,
            loss: value,
            head_ce,
            grad_norm,
        };
        self.iteration += 1;
        Ok(record)
    }

    fn loss_and_grads(
        &self,
        x: Tensor<T>,
        valid: (usize, usize),
        labels: &[Mask],
    ) -> Result<(f64, Vec<f64>, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let xv = g.input(x);
        let out = self.model.forward(&mut g, &p, xv, valid)?;
        let loss = boostnet_loss(&mut g, &out, &label_map(labels)?, &self.config.model.loss_weights)?;
        let value = g.value(loss.total).item()?.as_f64();
        let head_ce = loss
            .heads
            .iter()
            .map(|&v| g.value(v).item().map(Real::as_f64))
            .collect::<boostnet_autodiff::Result<Vec<_>>>()?;
        if !value.is_finite() {
            return Ok((value, head_ce, Vec::new()));
        }
        g.backward(loss.total)?;
        let grads = p.grads(&g, &self.model.params)?;
        Ok((value, head_ce, grads))
    }

    /// One pass over `samples` in the seeded order of `epoch`.
    pub fn run_epoch(
        &mut self,
        samples: &[LabeledSample],
        epoch: usize,
        log: &mut dyn FnMut(&TrainRecord) -> Result<()>,
    ) -> Result<()> {
        let order = StreamRng::new(self.config.seed, &format!("shuffle/{epoch}")).permutation(samples.len());
        for chunk in order.chunks(self.config.train.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let mut rng = StreamRng::new(self.config.seed, &format!("augment/{epoch}/{i}"));
                    prepare_train(&samples[i], &self.config.polar, &self.config.augment, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let record = self.step(&batch, epoch)?;
            log(&record)?;
        }
        Ok(())
    }

    /// Backbone calibration on the first `batch_size` samples in index order,
    /// unaugmented.
    pub fn calibrate(&mut self, samples: &[LabeledSample]) -> Result<()> {
        let n = self.config.train.batch_size.min(samples.len());
        let windows = samples[..n]
            .iter()
            .map(|s| prepare_eval(s, &self.config.polar))
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<_> = windows.iter().map(|w| &w.polar).collect();
        let x = pad_to_multiple(&batch_tensor::<T>(&images)?, self.config.model.backbone.input_multiple())?;
        self.model.backbone.calibrate(&mut self.model.params, &x)
    }

    /// All configured epochs; `on_epoch` runs after each completed epoch.
    /// A fresh model is calibrated first when `train.calibrate_init` is set.
    pub fn fit(
        &mut self,
        samples: &[LabeledSample],
        log: &mut dyn FnMut(&TrainRecord) -> Result<()>,
        on_epoch: &mut dyn FnMut(&Self, usize) -> Result<()>,
    ) -> Result<()> {
        if self.iteration == 0 && self.config.train.calibrate_init {
            self.calibrate(samples)?;
        }
        for epoch in 0..self.config.train.epochs {
            self.run_epoch(samples, epoch, log)?;
            on_epoch(self, epoch)?;
        }
        Ok(())
    }
}
