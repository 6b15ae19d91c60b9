//! Architecture hyperparameters shared by the backbone and the boosting heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Number of stride-2 3×3 stem convolutions (`s0`).
    pub stem_convs: usize,
    pub stem_channels: usize,
    pub stage2: Vec<usize>,
    pub stage3: Vec<usize>,
    pub stage4: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stem_convs: 2,
            stem_channels: 8,
            stage2: vec![8, 16],
            stage3: vec![8, 16, 24],
            stage4: vec![8, 16, 24, 32],
        }
    }
}

impl BackboneConfig {
    /// Branch channels of stages 2, 3 and 4.
    pub fn stages(&self) -> [&[usize]; 3] {
        [&self.stage2, &self.stage3, &self.stage4]
    }

    /// Input sides must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        1 << (self.stem_convs + 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_convs == 0 || self.stem_channels == 0 {
            return Err(Error::Config("backbone needs at least one stem conv with non-zero width".into()));
        }
        for (t, chans) in self.stages().iter().enumerate() {
            if chans.len() != t + 2 {
                return Err(Error::Config(format!(
                    "stage{} must list {} branch widths, got {}",
                    t + 2,
                    t + 2,
                    chans.len()
                )));
            }
            if chans.contains(&0) {
                return Err(Error::Config(format!("stage{} has a zero-width branch", t + 2)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Output channels of each per-branch deformable convolution.
    pub dc_channels: usize,
    pub dc_kernel: usize,
    /// Width of the fuse fc inside each side-output unit.
    pub fuse_channels: usize,
    /// Standard deviation of the zero-mean gaussian residual fc init.
    pub residual_init_std: f64,
    /// Network input side over output side.
    pub output_stride: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            dc_channels: 8,
            dc_kernel: 3,
            fuse_channels: 64,
            residual_init_std: 0.001,
            output_stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Boosting stages `M`: `M + 1` side-output units and `M` aggregation units.
    pub stages: usize,
    /// Deep-supervision weights of `DOP_0, BOP_1, BOP_2`.
    pub loss_weights: [f64; 3],
    pub backbone: BackboneConfig,
    pub heads: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 2,
            loss_weights: [1.0, 1.0, 1.0],
            backbone: BackboneConfig::default(),
            heads: HeadConfig::default(),
        }
    }
}

pub const MAX_STAGES: usize = 2;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.stages > MAX_STAGES {
            return Err(Error::Config(format!("boosting stages must be 0, 1 or 2, got {}", self.stages)));
        }
        if self.loss_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        let h = &self.heads;
        if h.dc_channels == 0 || h.fuse_channels == 0 || h.dc_kernel % 2 == 0 {
            return Err(Error::Config("head widths must be non-zero and the dc kernel odd".into()));
        }
        if !(h.residual_init_std.is_finite() && h.residual_init_std >= 0.0) {
            return Err(Error::Config("residual_init_std must be finite and non-negative".into()));
        }
        if h.output_stride == 0 || h.output_stride > 1 << self.backbone.stem_convs {
            return Err(Error::Config(format!(
                "output_stride must lie in 1..={}, got {}",
                1 << self.backbone.stem_convs,
                h.output_stride
            )));
        }
        Ok(())
    }
}
