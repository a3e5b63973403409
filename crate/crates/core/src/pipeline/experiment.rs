use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Alignment, ExperimentConfig, ModelConfig, SyntheticTaskConfig, TrainConfig};
use super::model::{assemble_model, InputShape};
use super::report::{RunFailure, RunReport};
use super::synthetic::{generate_task, Dataset};
use super::train::run_single;
use crate::error::{Error, Result};
use crate::fusion::FusionKind;

/// `runs` seeded runs on one generated task, executed in parallel and
/// reported in seed order. Failed runs are listed and left out of the
/// aggregate; the experiment fails only if every run fails.
pub fn run_experiment(name: &str, mc: &ModelConfig, tc: &TrainConfig, task: &SyntheticTaskConfig) -> Result<RunReport> {
    let config = ExperimentConfig {
        model: mc.clone(),
        train: tc.clone(),
        task: task.clone(),
    };
    config.validate()?;
    let data = generate_task(task)?;
    run_on_dataset(name, config, &data)
}

pub fn run_on_dataset(name: &str, config: ExperimentConfig, data: &Dataset) -> Result<RunReport> {
    let results: Vec<(u64, Result<_>)> = config
        .train
        .seeds()
        .into_par_iter()
        .map(|seed| (seed, run_single(&config.model, &config.train, data, seed)))
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut numerical = true;
    for (seed, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                numerical &= matches!(e, Error::Numerical(_));
                failures.push(RunFailure {
                    seed,
                    error: e.to_string(),
                })
            }
        }
    }
    if runs.is_empty() {
        let detail: Vec<String> = failures.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
        let msg = format!("every run of {name} failed: {}", detail.join("; "));
        return Err(if numerical { Error::Numerical(msg) } else { Error::Input(msg) });
    }
    RunReport::new(name, config, runs, failures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// The unmodified model.
    Full,
    /// Context gates fixed at zero, leaving plain self-attention on text.
    NoContext,
    /// Image masks fixed at one, leaving plain self-attention on images.
    NoGate,
    /// Neither the OT kernel nor the cross-modal transport.
    NoTransport,
    /// Mean image row repeated instead of the OT kernel.
    RepeatVector,
    /// Mean-pooled concatenation and a dense layer instead of the fusion head.
    NoFusion,
    /// Context layer counts 1 through 5.
    Layers,
}

impl AblationAxis {
    /// The full model and the five single-component ablations.
    pub const VARIANTS: [AblationAxis; 6] = [
        AblationAxis::Full,
        AblationAxis::NoContext,
        AblationAxis::NoGate,
        AblationAxis::NoTransport,
        AblationAxis::RepeatVector,
        AblationAxis::NoFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Full => "full",
            AblationAxis::NoContext => "no-context",
            AblationAxis::NoGate => "no-gate",
            AblationAxis::NoTransport => "no-transport",
            AblationAxis::RepeatVector => "repeat-vector",
            AblationAxis::NoFusion => "no-fusion",
            AblationAxis::Layers => "layers",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        [AblationAxis::Layers]
            .into_iter()
            .chain(Self::VARIANTS)
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown ablation axis {s:?}")))
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Named model configs for one ablation axis.
pub fn ablation_variants(base: &ModelConfig, axis: AblationAxis) -> Vec<(String, ModelConfig)> {
    let mut mc = base.clone();
    match axis {
        AblationAxis::Full => {}
        AblationAxis::NoContext => mc.context = false,
        AblationAxis::NoGate => mc.gate_masks = false,
        AblationAxis::NoTransport => {
            mc.alignment = Alignment::Identity;
            mc.transport = false;
        }
        AblationAxis::RepeatVector => mc.alignment = Alignment::Repeat,
        AblationAxis::NoFusion => mc.fusion = FusionKind::Concat,
        AblationAxis::Layers => {
            return (1..=5)
                .map(|l| {
                    let mut v = base.clone();
                    v.layers = Some(l);
                    (format!("layers-{l}"), v)
                })
                .collect()
        }
    }
    vec![(axis.name().to_string(), mc)]
}

/// Builds the model before any training and checks that all-ones image
/// masks reproduce plain self-attention exactly on every test sample.
pub fn verify_ones_mask(mc: &ModelConfig, data: &Dataset, seed: u64) -> Result<()> {
    let first = data
        .test
        .first()
        .ok_or_else(|| Error::Input("empty test split".into()))?;
    let shape = InputShape {
        n: first.x.rows(),
        t: first.y.rows(),
        d_input: first.x.cols(),
    };
    let model = assemble_model(mc, shape, &mut ChaCha8Rng::seed_from_u64(seed))?;
    for (i, s) in data.test.iter().enumerate() {
        if !model.ones_mask_matches_plain_attention(&s.y)? {
            return Err(Error::Contract(format!(
                "ones-mask attention differs from plain self-attention on test sample {i}"
            )));
        }
    }
    Ok(())
}

/// Runs every variant of `axis` as its own experiment on the same task.
pub fn ablation_harness(
    base: &ModelConfig,
    tc: &TrainConfig,
    task: &SyntheticTaskConfig,
    axis: AblationAxis,
) -> Result<Vec<RunReport>> {
    let data = generate_task(task)?;
    let mut reports = Vec::new();
    for (name, mc) in ablation_variants(base, axis) {
        let config = ExperimentConfig {
            model: mc,
            train: tc.clone(),
            task: task.clone(),
        };
        config.validate()?;
        if axis == AblationAxis::NoGate {
            verify_ones_mask(&config.model, &data, tc.base_seed)?;
        }
        reports.push(run_on_dataset(&name, config, &data)?);
    }
    Ok(reports)
}
