//! Sweeps over model size, training-set size, bin count and raw-data size on
//! the synthetic SPLOM-style dataset.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::datagen::{generate, generate_test, SamplingStrategy};
use crate::error::{Error, Result};
use crate::nn::{LossWeights, Model, ModelConfig};
use crate::synth::splom_store;
use crate::training::{train, TrainPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Values are width multipliers: towers `[8k, 4k, 2, 4k, 8k]`, regressor `[60k, 30k]`.
    ModelSize,
    /// Values are training-state counts.
    TrainingSetSize,
    /// Values are bins per attribute.
    BinCount,
    /// Values are record counts.
    RawDataSize,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "model-size" => AblationAxis::ModelSize,
            "training-set-size" => AblationAxis::TrainingSetSize,
            "bin-count" => AblationAxis::BinCount,
            "raw-data-size" => AblationAxis::RawDataSize,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown axis `{s}` (model-size, training-set-size, bin-count, raw-data-size)"
                )))
            }
        })
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::ModelSize => "model-size",
            AblationAxis::TrainingSetSize => "training-set-size",
            AblationAxis::BinCount => "bin-count",
            AblationAxis::RawDataSize => "raw-data-size",
        }
    }

    pub fn default_values(self) -> Vec<usize> {
        match self {
            AblationAxis::ModelSize => vec![1, 2, 4],
            AblationAxis::TrainingSetSize => vec![250, 500, 1000, 2000],
            AblationAxis::BinCount => vec![10, 20, 30, 40, 50],
            AblationAxis::RawDataSize => vec![1_000, 10_000, 100_000],
        }
    }
}

/// Settings held fixed while one axis varies.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSettings {
    pub rows: usize,
    pub bins: usize,
    pub states: usize,
    pub width: usize,
    pub epochs: u32,
    pub adam_epochs: u32,
    pub states_per_batch: usize,
    pub seed: u64,
    pub data_seed: u64,
    pub loss: LossWeights,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            rows: 100_000,
            bins: 10,
            states: 2000,
            width: 2,
            epochs: 100,
            adam_epochs: 100,
            states_per_batch: 8,
            seed: 1,
            data_seed: 7,
            loss: LossWeights {
                l1: 1.0,
                l2: 0.0,
                ae: 0.1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub value: usize,
    pub rows: usize,
    pub bins: usize,
    pub states: usize,
    pub params: usize,
    pub model_bytes: usize,
    pub rae: f64,
    pub seconds: f64,
}

/// Tower and regressor shapes scaled by `k`; `k = 2` is the SPLOM architecture.
pub fn scaled_config(schema: &crate::schema::Schema, k: usize) -> ModelConfig {
    let k = k.max(1);
    ModelConfig::uniform(schema, &[8 * k, 4 * k, 2, 4 * k, 8 * k], 1, &[60 * k, 30 * k])
}

/// Trains one model per value and reports its best held-out RAE.
pub fn run_ablation(
    axis: AblationAxis,
    values: &[usize],
    settings: &AblationSettings,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut out = Vec::with_capacity(values.len());
    for &value in values {
        let mut s = settings.clone();
        match axis {
            AblationAxis::ModelSize => s.width = value,
            AblationAxis::TrainingSetSize => s.states = value,
            AblationAxis::BinCount => s.bins = value,
            AblationAxis::RawDataSize => s.rows = value,
        }
        let start = Instant::now();
        let store = splom_store(s.rows, s.bins, s.data_seed)?;
        let strategy = SamplingStrategy::LengthFirst;
        let train_set = generate(&store, s.states, strategy, s.seed)?;
        let test_set = generate_test(&store, s.states, strategy, s.seed)?;
        let mut config = scaled_config(store.schema(), s.width);
        config.loss = s.loss;
        let model = Model::build(&config, store.schema(), s.seed)?;
        let plan = TrainPlan {
            epochs: s.epochs,
            adam_epochs: s.adam_epochs.min(s.epochs),
            states_per_batch: s.states_per_batch,
            seed: s.seed,
            eval_every: 10,
            ..TrainPlan::default()
        };
        let (model, reports) = train(model, &train_set, &test_set, &plan)?;
        let rae = reports.iter().map(|r| r.rae).fold(f64::INFINITY, f64::min);
        let row = AblationRow {
            value,
            rows: s.rows,
            bins: s.bins,
            states: s.states,
            params: model.param_count(),
            model_bytes: model.to_bytes().len(),
            rae,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        out.push(row);
    }
    Ok(out)
}

/// A plain-text table, one line per row.
pub fn render_table(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<18} {:>8} {:>5} {:>7} {:>8} {:>10} {:>8} {:>8}",
        axis.name(),
        "rows",
        "bins",
        "states",
        "params",
        "size_kb",
        "rae_%",
        "secs"
    );
    for r in rows {
        let _ = writeln!(
            t,
            "{:<18} {:>8} {:>5} {:>7} {:>8} {:>10.1} {:>8.2} {:>8.1}",
            r.value,
            r.rows,
            r.bins,
            r.states,
            r.params,
            r.model_bytes as f64 / 1024.0,
            r.rae,
            r.seconds
        );
    }
    t
}
