//! Boosting ablation: for every seed, models that differ only in the number
//! of boosting stages are trained on the same data order and evaluated.

use boostnet_autodiff::Real;
use serde::Serialize;

use crate::config::{config_diff, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ModelSegmenter};
use crate::metrics::{format_row, EvalReport, Errors};
use crate::synth::LabeledSample;
use crate::train::{TrainRecord, Trainer};

pub fn method_label(stages: usize) -> &'static str {
    match stages {
        0 => "without boosting",
        1 => "boosting once",
        _ => "boosting twice",
    }
}

/// The configuration of one arm: `base` with its seed and stage count replaced.
pub fn arm_config(base: &RunConfig, seed: u64, stages: usize) -> RunConfig {
    let mut c = base.clone();
    c.seed = seed;
    c.model.stages = stages;
    c
}

pub fn train_and_evaluate<T: Real>(
    config: &RunConfig,
    train: &[LabeledSample],
    test: &[LabeledSample],
    log: &mut dyn FnMut(&TrainRecord) -> Result<()>,
) -> Result<(Trainer<T>, EvalReport)> {
    let mut trainer = Trainer::<T>::new(config, train.len())?;
    trainer.fit(train, log, &mut |_, _| Ok(()))?;
    let segmenter = ModelSegmenter {
        model: &trainer.model,
        geometry: config.polar.clone(),
        tta: config.eval.tta,
    };
    let mut report = evaluate(&segmenter, test, &config.polar, config.eval.frame, config.eval.tta)?;
    report.config_hash = Some(config.hash());
    Ok((trainer, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub seed: u64,
    pub stages: usize,
    pub config_hash: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmProvenance {
    pub seed: u64,
    pub stages: usize,
    pub config_hash: String,
    /// Leaf settings that differ from the first arm of the same seed.
    pub differs_from_first_arm: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub base_config_hash: String,
    pub arms: Vec<ArmProvenance>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ablation {
    pub arms: Vec<ArmResult>,
    pub provenance: Provenance,
}

/// Runs every `(seed, M)` arm of `base.ablation`; `on_arm` sees each result
/// as soon as it is available.
pub fn run_ablation<T: Real>(
    base: &RunConfig,
    train: &[LabeledSample],
    test: &[LabeledSample],
    log: &mut dyn FnMut(u64, usize, &TrainRecord) -> Result<()>,
    on_arm: &mut dyn FnMut(&ArmResult) -> Result<()>,
) -> Result<Ablation> {
    base.validate()?;
    let (seeds, stages) = (&base.ablation.seeds, &base.ablation.stages);
    if seeds.is_empty() || stages.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one stage count".into()));
    }
    let mut arms = Vec::new();
    let mut prov = Vec::new();
    for &seed in seeds {
        let first = arm_config(base, seed, stages[0]);
        for &m in stages {
            let cfg = arm_config(base, seed, m);
            let (_, report) = train_and_evaluate::<T>(&cfg, train, test, &mut |r| log(seed, m, r))?;
            let arm = ArmResult {
                seed,
                stages: m,
                config_hash: cfg.hash(),
                report,
            };
            on_arm(&arm)?;
            prov.push(ArmProvenance {
                seed,
                stages: m,
                config_hash: arm.config_hash.clone(),
                differs_from_first_arm: config_diff(&first, &cfg),
            });
            arms.push(arm);
        }
    }
    Ok(Ablation {
        arms,
        provenance: Provenance {
            base_config_hash: base.hash(),
            arms: prov,
        },
    })
}

impl Ablation {
    /// Mean errors of every stage count over seeds, in configured order.
    pub fn means(&self, stage_order: &[usize]) -> Vec<(usize, Errors)> {
        stage_order
            .iter()
            .map(|&m| {
                let rows: Vec<&Errors> = self.arms.iter().filter(|a| a.stages == m).map(|a| &a.report.mean).collect();
                let n = rows.len().max(1) as f64;
                let avg = |f: fn(&Errors) -> f64| rows.iter().map(|e| f(e)).sum::<f64>() / n;
                (
                    m,
                    Errors {
                        e_disc: avg(|e| e.e_disc),
                        e_cup: avg(|e| e.e_cup),
                        e_rim: avg(|e| e.e_rim),
                    },
                )
            })
            .collect()
    }

    /// `seed,method,E_disc,E_cup,E_rim`: one row per arm, then one `mean` row
    /// per stage count.
    pub fn to_csv(&self, stage_order: &[usize]) -> String {
        let mut out = String::from("seed,method,E_disc,E_cup,E_rim\n");
        for a in &self.arms {
            out += &format!("{},{}\n", a.seed, format_row(method_label(a.stages), &a.report.mean));
        }
        for (m, e) in self.means(stage_order) {
            out += &format!("mean,{}\n", format_row(method_label(m), &e));
        }
        out
    }
}
