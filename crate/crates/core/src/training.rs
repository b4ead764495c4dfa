//! Epoch loop, held-out evaluation and checkpoint selection.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{TrainingSet, DEFAULT_STATES_PER_BATCH};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, Adam, LossWeights, Model};

/// Which model `train` returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointPolicy {
    /// The evaluated model with the lowest test RAE.
    #[default]
    Best,
    /// The model after the final epoch.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub epochs: u32,
    /// Epochs `0..adam_epochs` use Adam, the rest plain mini-batch SGD.
    pub adam_epochs: u32,
    pub states_per_batch: usize,
    pub seed: u64,
    pub eval_every: u32,
    pub checkpoint: CheckpointPolicy,
    /// Stop after the first epoch that ends past this budget.
    #[serde(default)]
    pub time_limit: Option<Duration>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 1000,
            adam_epochs: 15,
            states_per_batch: DEFAULT_STATES_PER_BATCH,
            seed: 0,
            eval_every: 10,
            checkpoint: CheckpointPolicy::Best,
            time_limit: None,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.adam_epochs > self.epochs {
            return Err(Error::InvalidArgument(format!(
                "adam_epochs {} exceeds epochs {}",
                self.adam_epochs, self.epochs
            )));
        }
        if self.states_per_batch == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "states_per_batch and eval_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRae {
    pub attribute: String,
    /// `None` when the attribute's group-by targets are constant.
    pub rae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Completed training epochs at evaluation time.
    pub epoch: u32,
    /// Percent.
    pub rae: f64,
    pub per_attribute: Vec<AttributeRae>,
    /// Mean test-set loss components under the model's loss weights.
    pub loss_pred: f64,
    pub loss_ae: f64,
    /// Mean training loss of the last epoch, if one ran.
    pub train_loss: Option<f64>,
    /// Wall time since training started.
    pub seconds: f64,
}

impl EvalReport {
    /// One training-log line: `{epoch, loss_pred, loss_ae, rae, seconds}`.
    pub fn log_line(&self) -> String {
        serde_json::json!({
            "epoch": self.epoch,
            "loss_pred": self.loss_pred,
            "loss_ae": self.loss_ae,
            "rae": self.rae,
            "seconds": self.seconds,
        })
        .to_string()
    }
}

/// Relative absolute error in percent: `sum|p - y| / sum|y - mean(y)| * 100`.
pub fn rae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let denom: f64 = targets.iter().map(|y| (y - mean).abs()).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateMetric);
    }
    let num: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum();
    Ok(num / denom * 100.0)
}

const EVAL_CHUNK: usize = 4096;

fn check_sets(model: &Model, sets: &[&TrainingSet]) -> Result<()> {
    for set in sets {
        set.check_schema(model.schema())?;
        if set.input_width != model.schema().input_width() {
            return Err(Error::Shape(format!(
                "set width {} != model input width {}",
                set.input_width,
                model.schema().input_width()
            )));
        }
    }
    Ok(())
}

/// Test-set RAE, per-attribute breakdown and loss components at `epoch` 0.
pub fn evaluate_rae(model: &Model, test: &TrainingSet) -> Result<EvalReport> {
    check_sets(model, &[test])?;
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let weights = model.config().loss;
    let mut predictions = Vec::with_capacity(test.len());
    let mut loss_pred = 0.0;
    let mut loss_ae = 0.0;
    for chunk in test.samples.chunks(EVAL_CHUNK) {
        let x = model.input_matrix(chunk.iter().map(|s| &s.query))?;
        let targets: Vec<f64> = chunk.iter().map(|s| s.target).collect();
        let out = model.forward_matrix(x.view())?;
        // Loss parts are batch means; re-weight so the total is a sample mean.
        let parts = model.batch_loss(x.view(), &targets, LossWeights { ae: 1.0, ..weights })?;
        loss_pred += parts.pred * chunk.len() as f64;
        loss_ae += parts.ae * chunk.len() as f64;
        predictions.extend(out.predictions);
    }
    let n = test.len() as f64;
    let targets: Vec<f64> = test.targets().collect();
    let total = rae(&predictions, &targets)?;

    let schema = model.schema();
    let mut per_attribute = Vec::with_capacity(schema.len());
    let mut start = 0;
    for spec in schema.attributes() {
        let size = spec.group_size();
        let idx = (0..test.len()).filter(|i| (start..start + size).contains(&(i % test.per_state)));
        let (p, y): (Vec<f64>, Vec<f64>) = idx.map(|i| (predictions[i], targets[i])).unzip();
        per_attribute.push(AttributeRae {
            attribute: spec.name.clone(),
            rae: rae(&p, &y).ok(),
        });
        start += size;
    }
    Ok(EvalReport {
        epoch: 0,
        rae: total,
        per_attribute,
        loss_pred: loss_pred / n,
        loss_ae: loss_ae / n,
        train_loss: None,
        seconds: 0.0,
    })
}

/// Mean of the nonzero absolute training targets, or 1 if there are none.
pub fn default_target_scale(set: &TrainingSet) -> f64 {
    let (sum, n) = set
        .targets()
        .filter(|t| *t != 0.0)
        .fold((0.0, 0usize), |(s, n), t| (s + t.abs(), n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// [`train_with`] without a progress callback.
pub fn train(
    model: Model,
    train_set: &TrainingSet,
    test_set: &TrainingSet,
    plan: &TrainPlan,
) -> Result<(Model, Vec<EvalReport>)> {
    train_with(model, train_set, test_set, plan, |_| {})
}

/// Trains `model`, evaluating before the first epoch, every `eval_every`
/// epochs and after the last one. `on_report` sees each report as it is made.
pub fn train_with(
    mut model: Model,
    train_set: &TrainingSet,
    test_set: &TrainingSet,
    plan: &TrainPlan,
    mut on_report: impl FnMut(&EvalReport),
) -> Result<(Model, Vec<EvalReport>)> {
    plan.validate()?;
    check_sets(&model, &[train_set, test_set])?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if model.config().target_scale.is_none() && model.meta.epochs == 0 {
        model.target_scale = default_target_scale(train_set);
    }
    let start = Instant::now();
    let weights = model.config().loss;
    let opt = model.config().optimizer;
    let mut adam = Adam::new(model.layers(), &opt);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    let mut reports = Vec::new();
    let mut report = evaluate_rae(&model, test_set)?;
    report.epoch = model.meta.epochs;
    report.seconds = start.elapsed().as_secs_f64();
    on_report(&report);
    let mut best = (report.rae, model.clone());
    reports.push(report);

    for e in 0..plan.epochs {
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for batch in train_set.make_batches(plan.states_per_batch, &mut rng) {
            let x = model.input_matrix(batch.samples.iter().map(|s| &s.query))?;
            let targets: Vec<f64> = batch.samples.iter().map(|s| s.target).collect();
            let (loss, grads) = model.gradients(x.view(), &targets, weights)?;
            loss_sum += loss.total * targets.len() as f64;
            count += targets.len();
            if e < plan.adam_epochs {
                adam.step(model.layers_mut(), &grads, opt.lr_adam);
            } else {
                sgd_step(model.layers_mut(), &grads, opt.lr_sgd);
            }
        }
        let mean_loss = loss_sum / count as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: e,
                loss: mean_loss,
            });
        }
        model.meta.epochs += 1;
        model.meta.seed = plan.seed;

        let done = e + 1 == plan.epochs || plan.time_limit.is_some_and(|t| start.elapsed() >= t);
        if (e + 1) % plan.eval_every == 0 || done {
            let mut report = evaluate_rae(&model, test_set)?;
            report.epoch = model.meta.epochs;
            report.train_loss = Some(mean_loss);
            report.seconds = start.elapsed().as_secs_f64();
            on_report(&report);
            log::info!(
                "epoch {} loss {:.6} test RAE {:.3}%",
                report.epoch,
                mean_loss,
                report.rae
            );
            if report.rae < best.0 {
                best = (report.rae, model.clone());
            }
            reports.push(report);
        }
        if done {
            break;
        }
    }
    let out = match plan.checkpoint {
        CheckpointPolicy::Best => best.1,
        CheckpointPolicy::Last => model,
    };
    Ok((out, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_state, SamplingStrategy, TrainingSample};
    use crate::encoding::encode_state;
    use crate::nn::ModelConfig;
    use crate::schema::{AttributeKind, AttributeSpec, Measure, Schema};
    use crate::state::Selection;

    #[test]
    fn rae_examples() {
        assert_eq!(rae(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(rae(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 100.0);
        assert_eq!(rae(&[2.0, 4.0], &[1.0, 3.0]).unwrap(), 100.0);
        assert!(matches!(rae(&[1.0, 2.0], &[5.0, 5.0]), Err(Error::DegenerateMetric)));
        assert!(rae(&[], &[]).is_err());
    }

    fn toy_schema() -> Schema {
        Schema::new(
            vec![
                AttributeSpec::numeric("a", AttributeKind::BinnedContinuous, 6, 0.0, 6.0),
                AttributeSpec::numeric("b", AttributeKind::BinnedContinuous, 6, 0.0, 6.0),
            ],
            Measure::Count,
        )
        .unwrap()
    }

    /// Every group-by query of `n` random states, target `3 len(a) + 2 len(b) + 1`.
    pub(crate) fn toy_set(n: usize, seed: u64) -> TrainingSet {
        let schema = toy_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for id in 0..n {
            let state = sample_state(&schema, SamplingStrategy::LengthFirst, &mut rng);
            for attr in 0..2 {
                for j in 0..6 {
                    let spec = &schema.attributes()[attr];
                    let st = state.with(attr, Selection::group_cell(spec, j));
                    let len = |i: usize| st.selections()[i].linear().unwrap().len() as f64;
                    samples.push(TrainingSample {
                        query: encode_state(&schema, &st),
                        target: 3.0 * len(0) + 2.0 * len(1) + 1.0,
                        state_id: id as u32,
                        empty: false,
                    });
                }
            }
        }
        TrainingSet {
            fingerprint: schema.fingerprint(),
            strategy: SamplingStrategy::LengthFirst,
            seed,
            input_width: 12,
            per_state: 12,
            samples,
        }
    }

    fn toy_model(seed: u64) -> Model {
        let s = toy_schema();
        Model::build(&ModelConfig::uniform(&s, &[12, 6, 2, 6, 12], 1, &[16]), &s, seed).unwrap()
    }

    #[test]
    fn toy_dataset_is_learned() {
        let train_set = toy_set(200, 1);
        let test_set = toy_set(40, 2);
        // Adam throughout and no autoencoder term.
        let plan = TrainPlan {
            epochs: 200,
            adam_epochs: 200,
            eval_every: 20,
            seed: 3,
            ..TrainPlan::default()
        };
        let s = toy_schema();
        let mut cfg = ModelConfig::uniform(&s, &[12, 6, 2, 6, 12], 1, &[16]);
        cfg.loss.ae = 0.0;
        let model = Model::build(&cfg, &s, 4).unwrap();
        let (model, reports) = train(model, &train_set, &test_set, &plan).unwrap();
        let best = reports.iter().map(|r| r.rae).fold(f64::INFINITY, f64::min);
        assert!(best < 1.0, "best RAE {best}");
        assert_eq!(evaluate_rae(&model, &test_set).unwrap().rae, best);
        assert_eq!(reports.len(), 11);
        assert_eq!(reports.last().unwrap().epoch, 200);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let model = toy_model(1);
        let plan = TrainPlan {
            epochs: 0,
            adam_epochs: 0,
            ..TrainPlan::default()
        };
        let set = toy_set(10, 1);
        let (out, reports) = train(model.clone(), &set, &set, &plan).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(out.towers, model.towers);
        assert_eq!(out.regressor, model.regressor);
        assert_eq!(out.target_scale, default_target_scale(&set));
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set(30, 1);
        let test = toy_set(10, 2);
        let plan = TrainPlan {
            epochs: 6,
            adam_epochs: 3,
            eval_every: 2,
            checkpoint: CheckpointPolicy::Last,
            seed: 9,
            ..TrainPlan::default()
        };
        let (a, ra) = train(toy_model(1), &set, &test, &plan).unwrap();
        let (b, rb) = train(toy_model(1), &set, &test, &plan).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let strip =
            |r: &[EvalReport]| -> Vec<(u32, f64, f64)> { r.iter().map(|r| (r.epoch, r.rae, r.loss_pred)).collect() };
        assert_eq!(strip(&ra), strip(&rb));
    }

    #[test]
    fn plan_and_set_errors() {
        let set = toy_set(5, 1);
        let bad = TrainPlan {
            epochs: 2,
            adam_epochs: 3,
            ..TrainPlan::default()
        };
        assert!(train(toy_model(1), &set, &set, &bad).is_err());
        let mut other = set.clone();
        other.fingerprint ^= 1;
        assert!(matches!(
            train(toy_model(1), &other, &set, &TrainPlan::default()),
            Err(Error::Fingerprint { .. })
        ));
        let mut flat = set.clone();
        flat.samples.iter_mut().for_each(|s| s.target = 4.0);
        assert!(matches!(
            evaluate_rae(&toy_model(1), &flat),
            Err(Error::DegenerateMetric)
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let s = toy_schema();
        let mut cfg = ModelConfig::uniform(&s, &[12, 6, 2, 6, 12], 1, &[16]);
        cfg.optimizer.lr_adam = 1e30;
        cfg.loss.l2 = 1.0;
        let model = Model::build(&cfg, &s, 1).unwrap();
        let set = toy_set(20, 1);
        let plan = TrainPlan {
            epochs: 50,
            ..TrainPlan::default()
        };
        assert!(matches!(train(model, &set, &set, &plan), Err(Error::Divergence { .. })));
    }

    #[test]
    fn logged_loss_without_ae_is_prediction_loss() {
        let s = toy_schema();
        let mut cfg = ModelConfig::uniform(&s, &[12, 6, 2, 6, 12], 1, &[16]);
        cfg.loss.ae = 0.0;
        let model = Model::build(&cfg, &s, 1).unwrap();
        let set = toy_set(20, 1);
        let x = model.input_matrix(set.samples.iter().map(|s| &s.query)).unwrap();
        let t: Vec<f64> = set.targets().collect();
        let parts = model.batch_loss(x.view(), &t, cfg.loss).unwrap();
        assert_eq!(parts.total, parts.pred);
        let report = evaluate_rae(&model, &set).unwrap();
        let line: serde_json::Value = serde_json::from_str(&report.log_line()).unwrap();
        for k in ["epoch", "loss_pred", "loss_ae", "rae", "seconds"] {
            assert!(line.get(k).is_some());
        }
    }
}
