//! Held-out evaluation: segment every disc window in polar space, map the
//! masks back to the Cartesian window and score them against ground truth.

use boostnet_autodiff::Real;

use crate::boostnet::{decode_masks, BoostNet};
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::metrics::{score, EvalFrame, EvalReport, SampleScore};
use crate::pipeline::{batch_tensor, prepare_eval, PreparedSample};
use crate::polar::{from_polar_mask, PolarGeometry};
use crate::synth::LabeledSample;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Class map at `A × R`.
    pub polar: Mask,
    /// Class map of the `S × S` disc window.
    pub cartesian: Mask,
}

pub trait Segmenter {
    fn segment(&self, batch: &[&PreparedSample]) -> Result<Vec<Prediction>>;
}

/// A trained network with its polar geometry and flip-averaging switch.
pub struct ModelSegmenter<'a, T: Real> {
    pub model: &'a BoostNet<T>,
    pub geometry: PolarGeometry,
    pub tta: bool,
}

impl<T: Real> Segmenter for ModelSegmenter<'_, T> {
    fn segment(&self, batch: &[&PreparedSample]) -> Result<Vec<Prediction>> {
        let images: Vec<_> = batch.iter().map(|s| &s.polar).collect();
        let probs = self.model.predict_probs(&batch_tensor::<T>(&images)?, self.tta)?;
        decode_masks(&probs, self.geometry.angles, self.geometry.radii)?
            .into_iter()
            .map(|polar| {
                let cartesian = from_polar_mask(&polar, &self.geometry)?;
                Ok(Prediction { polar, cartesian })
            })
            .collect()
    }
}

/// Windows evaluated per forward pass.
pub const EVAL_BATCH: usize = 8;

/// Scores `samples` in input order; errors are taken in `frame`.
pub fn evaluate(
    segmenter: &dyn Segmenter,
    samples: &[LabeledSample],
    geometry: &PolarGeometry,
    frame: EvalFrame,
    tta: bool,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let prepared = chunk.iter().map(|s| prepare_eval(s, geometry)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = prepared.iter().collect();
        let preds = segmenter.segment(&refs)?;
        for (p, pred) in prepared.iter().zip(&preds) {
            let errors = match frame {
                EvalFrame::Cartesian => score(&pred.cartesian, p.window_mask.as_ref().expect("labelled"))?,
                EvalFrame::Polar => score(&pred.polar, p.polar_mask.as_ref().expect("labelled"))?,
            };
            scores.push(SampleScore { id: p.id.clone(), errors });
        }
    }
    EvalReport::from_scores(scores, tta, frame)
}
