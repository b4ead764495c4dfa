//! The multi-tower network.
//!
//! Each attribute owns a tower. Its encoder front maps the attribute's many-hot
//! segment to an embedding; the encoder back maps the embedding to a 2D
//! projection; the decoder maps the projection back to a reconstruction of the
//! segment. The embeddings of all attributes are concatenated and fed to a
//! shared regressor that outputs the aggregate.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, Dense, DenseGrad};
use super::loss::{bce, loss_pred, loss_pred_grad, LossParts, LossWeights, BCE_CLAMP};
use crate::encoding::ManyHotQuery;
use crate::error::{Error, Result};
use crate::schema::Schema;

/// Widths of one attribute's tower, excluding the input and reconstruction
/// layers (both equal to the attribute's encoding width). Exactly one entry is
/// the 2-wide projection, and the widths after it mirror those before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub attribute: String,
    pub layers: Vec<usize>,
    /// Index into `layers` of the embedding layer.
    pub embedding_index: usize,
}

impl TowerConfig {
    pub fn new(attribute: &str, layers: &[usize], embedding_index: usize) -> Self {
        TowerConfig {
            attribute: attribute.to_string(),
            layers: layers.to_vec(),
            embedding_index,
        }
    }

    pub fn projection_index(&self) -> Option<usize> {
        self.layers.iter().position(|&w| w == 2)
    }

    pub fn embedding_width(&self) -> usize {
        self.layers[self.embedding_index]
    }

    fn validate(&self) -> Result<usize> {
        let err = |layer: usize, message: String| Error::Config {
            attribute: self.attribute.clone(),
            layer,
            message,
        };
        if let Some(i) = self.layers.iter().position(|&w| w == 0) {
            return Err(err(i, "zero width".into()));
        }
        let twos: Vec<usize> = (0..self.layers.len()).filter(|&i| self.layers[i] == 2).collect();
        let proj = match twos.as_slice() {
            [p] => *p,
            [] => return Err(err(0, "tower has no 2-wide projection layer".into())),
            [_, second, ..] => return Err(err(*second, "more than one 2-wide layer".into())),
        };
        if self.embedding_index >= proj {
            return Err(err(
                self.embedding_index,
                format!("embedding layer must precede the projection layer {proj}"),
            ));
        }
        if self.layers[self.embedding_index] <= 2 {
            return Err(err(self.embedding_index, "embedding must be wider than 2".into()));
        }
        let before: Vec<usize> = self.layers[..proj].to_vec();
        let after: Vec<usize> = self.layers[proj + 1..].iter().rev().copied().collect();
        if before != after {
            return Err(err(
                proj + 1,
                format!("decoder widths {after:?} (reversed) do not mirror encoder {before:?}"),
            ));
        }
        Ok(proj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr_adam: f64,
    pub lr_sgd: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_adam: 1e-3,
            lr_sgd: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub towers: Vec<TowerConfig>,
    /// Hidden regressor widths; a final 1-wide identity layer is appended.
    pub regressor: Vec<usize>,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Targets are divided by this before the loss. `None` means "mean nonzero
    /// training target", resolved when training starts.
    #[serde(default)]
    pub target_scale: Option<f64>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The same tower shape for every attribute.
    pub fn uniform(schema: &Schema, tower: &[usize], embedding_index: usize, regressor: &[usize]) -> Self {
        ModelConfig {
            towers: schema
                .attributes()
                .iter()
                .map(|a| TowerConfig::new(&a.name, tower, embedding_index))
                .collect(),
            regressor: regressor.to_vec(),
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            target_scale: None,
        }
    }

    /// Towers `[16, 8, 2, 8, 16]` on every attribute, regressor `[120, 60]`.
    pub fn splom(schema: &Schema) -> Self {
        Self::uniform(schema, &[16, 8, 2, 8, 16], 1, &[120, 60])
    }

    /// The Brightkite architecture; the schema must be month, day-of-week, hour
    /// and a 20x20 grid (in that order).
    pub fn brightkite(schema: &Schema) -> Self {
        let shapes: [(&[usize], usize); 4] = [
            (&[8, 4, 2, 4, 8], 1),
            (&[8, 4, 2, 4, 8], 1),
            (&[12, 6, 2, 6, 12], 1),
            (&[400, 128, 2, 128, 400], 1),
        ];
        ModelConfig {
            towers: schema
                .attributes()
                .iter()
                .zip(shapes)
                .map(|(a, (l, e))| TowerConfig::new(&a.name, l, e))
                .collect(),
            regressor: vec![220],
            loss: LossWeights {
                l1: 20.0,
                l2: 0.001,
                ae: 1.0,
            },
            optimizer: OptimizerConfig::default(),
            target_scale: None,
        }
    }

    /// Loss weights following the rule of thumb: L1 weight 1; the squared-error
    /// weight chosen so its term is 1-2 orders of magnitude above the
    /// autoencoder loss; the autoencoder weight so its term is at least 2 orders
    /// below the squared-error term.
    pub fn heuristic_weights(mean_sq_error: f64, mean_ae: f64) -> LossWeights {
        let l2 = if mean_sq_error > 0.0 {
            30.0 * mean_ae.max(f64::MIN_POSITIVE) / mean_sq_error
        } else {
            0.0
        };
        let ae = if mean_ae > 0.0 {
            0.01 * l2 * mean_sq_error / mean_ae
        } else {
            0.0
        };
        LossWeights { l1: 1.0, l2, ae }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub front: Vec<Dense>,
    pub back: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Tower {
    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.front.iter().chain(&self.back).chain(&self.decoder)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.front
            .iter_mut()
            .chain(self.back.iter_mut())
            .chain(self.decoder.iter_mut())
    }

    pub fn embedding_width(&self) -> usize {
        self.front.last().map(Dense::outputs).unwrap_or(0)
    }

    /// Layers in order (front, back, decoder) with the index of the embedding
    /// layer and of the projection layer.
    pub fn flat(&self) -> (Vec<&Dense>, usize, usize) {
        let layers: Vec<&Dense> = self.layers().collect();
        let emb = self.front.len() - 1;
        let proj = emb + self.back.len();
        (layers, emb, proj)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    schema: Schema,
    config: ModelConfig,
    pub towers: Vec<Tower>,
    pub regressor: Vec<Dense>,
    pub target_scale: f64,
    pub meta: TrainingMeta,
}

/// Results of a batched forward pass, one row per query.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// In raw (unscaled) target units.
    pub predictions: Vec<f64>,
    pub embeddings: Vec<Array2<f64>>,
    pub projections: Vec<Array2<f64>>,
    pub reconstructions: Vec<Array2<f64>>,
}

/// Per-layer outputs of one stack, with the stack input at position 0.
type Trace = Vec<Array2<f64>>;

struct TowerTrace {
    front: Trace,
    back: Trace,
    decoder: Trace,
}

struct Cache {
    inputs: Vec<Array2<f64>>,
    towers: Vec<TowerTrace>,
    regressor: Trace,
}

fn run_stack(layers: &[Dense], input: Array2<f64>) -> Trace {
    let mut trace = Vec::with_capacity(layers.len() + 1);
    trace.push(input);
    for l in layers {
        let next = l.forward(trace.last().expect("non-empty").view());
        trace.push(next);
    }
    trace
}

/// Backpropagates `d_out` through a stack, pushing layer gradients in reverse order.
fn back_stack(
    layers: &[Dense],
    trace: &[Array2<f64>],
    mut d_out: Array2<f64>,
    need_input_grad: bool,
    grads: &mut Vec<DenseGrad>,
) -> Option<Array2<f64>> {
    for (i, l) in layers.iter().enumerate().rev() {
        let need = i > 0 || need_input_grad;
        let (g, dx) = l.backward(trace[i].view(), &trace[i + 1], d_out, need);
        grads.push(g);
        d_out = dx?;
    }
    Some(d_out)
}

fn stack(widths: &[usize], acts: &[Activation], rng: &mut ChaCha8Rng) -> Vec<Dense> {
    widths
        .windows(2)
        .zip(acts)
        .map(|(w, &a)| Dense::init(w[0], w[1], a, rng))
        .collect()
}

fn hidden_then(n: usize, last: Activation) -> Vec<Activation> {
    let mut acts = vec![Activation::Relu; n];
    if let Some(l) = acts.last_mut() {
        *l = last;
    }
    acts
}

impl Model {
    /// Builds a model with initial weights drawn deterministically from `seed`.
    pub fn build(config: &ModelConfig, schema: &Schema, seed: u64) -> Result<Self> {
        if config.towers.len() != schema.len() {
            return Err(Error::Config {
                attribute: String::new(),
                layer: 0,
                message: format!("{} towers for {} attributes", config.towers.len(), schema.len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut towers = Vec::with_capacity(schema.len());
        for (tc, spec) in config.towers.iter().zip(schema.attributes()) {
            if tc.attribute != spec.name {
                return Err(Error::Config {
                    attribute: tc.attribute.clone(),
                    layer: 0,
                    message: format!("tower order must follow schema; expected `{}`", spec.name),
                });
            }
            let proj = tc.validate()?;
            let m = spec.encoding_width();
            let emb = tc.embedding_index;

            let mut front_w = vec![m];
            front_w.extend(&tc.layers[..=emb]);
            let back_w = &tc.layers[emb..=proj];
            let mut dec_w = tc.layers[proj..].to_vec();
            dec_w.push(m);

            let front = stack(&front_w, &vec![Activation::Relu; front_w.len() - 1], &mut rng);
            let back = stack(back_w, &hidden_then(back_w.len() - 1, Activation::Identity), &mut rng);
            let decoder = stack(&dec_w, &hidden_then(dec_w.len() - 1, Activation::Sigmoid), &mut rng);
            towers.push(Tower { front, back, decoder });
        }
        let concat: usize = towers.iter().map(Tower::embedding_width).sum();
        let mut reg_w = vec![concat];
        reg_w.extend(&config.regressor);
        reg_w.push(1);
        if let Some(i) = reg_w.iter().position(|&w| w == 0) {
            return Err(Error::Config {
                attribute: "regressor".into(),
                layer: i,
                message: "zero width".into(),
            });
        }
        let regressor = stack(&reg_w, &hidden_then(reg_w.len() - 1, Activation::Identity), &mut rng);
        Ok(Model {
            schema: schema.clone(),
            config: config.clone(),
            towers,
            regressor,
            target_scale: config.target_scale.unwrap_or(1.0),
            meta: TrainingMeta { epochs: 0, seed },
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.schema.fingerprint()
    }

    /// Every layer in canonical order: each tower's front, back, decoder, then the regressor.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.towers.iter().flat_map(Tower::layers).chain(self.regressor.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.towers
            .iter_mut()
            .flat_map(Tower::layers_mut)
            .chain(self.regressor.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    /// Stacks queries into a `batch x input_width` matrix of 0.0/1.0.
    pub fn input_matrix<'a, I>(&self, queries: I) -> Result<Array2<f64>>
    where
        I: IntoIterator<Item = &'a ManyHotQuery>,
        I::IntoIter: ExactSizeIterator,
    {
        let queries = queries.into_iter();
        let width = self.schema.input_width();
        let mut x = Array2::zeros((queries.len(), width));
        for (mut row, q) in x.outer_iter_mut().zip(queries) {
            if q.width() != width {
                return Err(Error::Shape(format!(
                    "query width {} != model input width {width}",
                    q.width()
                )));
            }
            q.write_values(row.as_slice_mut().expect("standard layout"));
        }
        Ok(x)
    }

    fn split_inputs(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        self.schema
            .attributes()
            .iter()
            .zip(self.schema.offsets())
            .map(|(a, off)| x.slice(s![.., off..off + a.encoding_width()]).to_owned())
            .collect()
    }

    fn run(&self, x: ArrayView2<'_, f64>, with_decoder: bool) -> Cache {
        let inputs = self.split_inputs(x);
        let mut towers = Vec::with_capacity(self.towers.len());
        for (t, xi) in self.towers.iter().zip(&inputs) {
            let front = run_stack(&t.front, xi.clone());
            let (back, decoder) = if with_decoder {
                let back = run_stack(&t.back, front.last().expect("non-empty").clone());
                let decoder = run_stack(&t.decoder, back.last().expect("non-empty").clone());
                (back, decoder)
            } else {
                (Vec::new(), Vec::new())
            };
            towers.push(TowerTrace { front, back, decoder });
        }
        let embs: Vec<ArrayView2<'_, f64>> = towers
            .iter()
            .map(|t| t.front.last().expect("non-empty").view())
            .collect();
        let concat = ndarray::concatenate(Axis(1), &embs).expect("equal batch sizes");
        let regressor = run_stack(&self.regressor, concat);
        Cache {
            inputs,
            towers,
            regressor,
        }
    }

    fn check_width(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.schema.input_width() {
            return Err(Error::Shape(format!(
                "input width {} != model input width {}",
                x.ncols(),
                self.schema.input_width()
            )));
        }
        Ok(())
    }

    /// Full forward pass: predictions, embeddings, projections and reconstructions.
    pub fn forward(&self, queries: &[ManyHotQuery]) -> Result<ForwardOutput> {
        let x = self.input_matrix(queries)?;
        self.forward_matrix(x.view())
    }

    pub fn forward_matrix(&self, x: ArrayView2<'_, f64>) -> Result<ForwardOutput> {
        self.check_width(&x)?;
        let cache = self.run(x, true);
        let scale = self.target_scale;
        let predictions = cache
            .regressor
            .last()
            .expect("non-empty")
            .column(0)
            .iter()
            .map(|p| p * scale)
            .collect();
        let mut embeddings = Vec::new();
        let mut projections = Vec::new();
        let mut reconstructions = Vec::new();
        for mut t in cache.towers {
            embeddings.push(t.front.pop().expect("non-empty"));
            projections.push(t.back.pop().expect("non-empty"));
            reconstructions.push(t.decoder.pop().expect("non-empty"));
        }
        Ok(ForwardOutput {
            predictions,
            embeddings,
            projections,
            reconstructions,
        })
    }

    /// Predictions only (the decoder is skipped), in raw target units.
    pub fn predict(&self, queries: &[ManyHotQuery]) -> Result<Vec<f64>> {
        let x = self.input_matrix(queries)?;
        self.predict_matrix(x.view())
    }

    pub fn predict_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_width(&x)?;
        let cache = self.run(x, false);
        let scale = self.target_scale;
        Ok(cache
            .regressor
            .last()
            .expect("non-empty")
            .column(0)
            .iter()
            .map(|p| p * scale)
            .collect())
    }

    /// 2D projections of one attribute's segments (`batch x encoding_width`).
    pub fn project(&self, attr: usize, segments: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let t = &self.towers[attr];
        let width = self.schema.attributes()[attr].encoding_width();
        if segments.ncols() != width {
            return Err(Error::Shape(format!("segment width {} != {width}", segments.ncols())));
        }
        let emb = run_stack(&t.front, segments.to_owned()).pop().expect("non-empty");
        Ok(run_stack(&t.back, emb).pop().expect("non-empty"))
    }

    /// Mean batch loss. `targets` are in raw units.
    pub fn batch_loss(&self, x: ArrayView2<'_, f64>, targets: &[f64], weights: LossWeights) -> Result<LossParts> {
        self.check_width(&x)?;
        let cache = self.run(x, weights.ae != 0.0);
        Ok(self.loss_from_cache(&cache, targets, weights))
    }

    fn loss_from_cache(&self, cache: &Cache, targets: &[f64], w: LossWeights) -> LossParts {
        let n = targets.len() as f64;
        let preds = cache.regressor.last().expect("non-empty");
        let pred: f64 = preds
            .column(0)
            .iter()
            .zip(targets)
            .map(|(&p, &t)| loss_pred(p, t / self.target_scale, w.l1, w.l2))
            .sum::<f64>()
            / n;
        let ae = if w.ae != 0.0 {
            cache
                .towers
                .iter()
                .zip(&cache.inputs)
                .map(|(t, xi)| {
                    let rec = t.decoder.last().expect("non-empty");
                    rec.iter().zip(xi.iter()).map(|(&c, &r)| bce(c, r)).sum::<f64>()
                })
                .sum::<f64>()
                / n
        } else {
            0.0
        };
        LossParts {
            pred,
            ae,
            total: pred + w.ae * ae,
        }
    }

    /// Mean batch loss and its gradient with respect to every layer, in
    /// [`Model::layers`] order. `targets` are in raw units.
    pub fn gradients(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[f64],
        w: LossWeights,
    ) -> Result<(LossParts, Vec<DenseGrad>)> {
        self.check_width(&x)?;
        if targets.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} targets for {} queries",
                targets.len(),
                x.nrows()
            )));
        }
        let with_ae = w.ae != 0.0;
        let cache = self.run(x, with_ae);
        let loss = self.loss_from_cache(&cache, targets, w);
        let n = targets.len() as f64;

        // Regressor.
        let preds = cache.regressor.last().expect("non-empty");
        let d_pred = Array2::from_shape_fn((preds.nrows(), 1), |(i, _)| {
            loss_pred_grad(preds[[i, 0]], targets[i] / self.target_scale, w.l1, w.l2) / n
        });
        let mut reg_grads = Vec::with_capacity(self.regressor.len());
        let d_concat =
            back_stack(&self.regressor, &cache.regressor, d_pred, true, &mut reg_grads).expect("input grad requested");
        reg_grads.reverse();

        let mut grads = Vec::new();
        let mut col = 0;
        for (t, (trace, xi)) in self.towers.iter().zip(cache.towers.iter().zip(&cache.inputs)) {
            let d = t.embedding_width();
            let mut d_emb = d_concat.slice(s![.., col..col + d]).to_owned();
            col += d;

            let mut dec_grads = Vec::with_capacity(t.decoder.len());
            let mut back_grads = Vec::with_capacity(t.back.len());
            if with_ae {
                // Sigmoid + BCE: d/dz = rec - r inside the clamp window, 0 outside.
                let rec = trace.decoder.last().expect("non-empty");
                let mut dz = rec - xi;
                ndarray::Zip::from(&mut dz).and(rec).for_each(|g, &c| {
                    *g = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&c) {
                        *g * w.ae / n
                    } else {
                        0.0
                    };
                });
                let last = t.decoder.len() - 1;
                let (g, dx) = t.decoder[last].backward_pre(trace.decoder[last].view(), dz, true);
                dec_grads.push(g);
                let d_proj = back_stack(
                    &t.decoder[..last],
                    &trace.decoder[..=last],
                    dx.expect("requested"),
                    true,
                    &mut dec_grads,
                )
                .expect("requested");
                let d_from_ae = back_stack(&t.back, &trace.back, d_proj, true, &mut back_grads).expect("requested");
                d_emb += &d_from_ae;
            } else {
                dec_grads.extend(t.decoder.iter().map(DenseGrad::zeros_like));
                back_grads.extend(t.back.iter().map(DenseGrad::zeros_like));
            }
            let mut front_grads = Vec::with_capacity(t.front.len());
            back_stack(&t.front, &trace.front, d_emb, false, &mut front_grads);

            front_grads.reverse();
            if with_ae {
                back_grads.reverse();
                dec_grads.reverse();
            }
            grads.extend(front_grads);
            grads.extend(back_grads);
            grads.extend(dec_grads);
        }
        grads.extend(reg_grads);
        Ok((loss, grads))
    }
}

/// Closed-form parameter count of a config against a schema.
pub fn param_count(config: &ModelConfig, schema: &Schema) -> usize {
    let dense = |a: usize, b: usize| a * b + b;
    let mut total = 0;
    let mut concat = 0;
    for (tc, spec) in config.towers.iter().zip(schema.attributes()) {
        let m = spec.encoding_width();
        let mut widths = vec![m];
        widths.extend(&tc.layers);
        widths.push(m);
        total += widths.windows(2).map(|w| dense(w[0], w[1])).sum::<usize>();
        concat += tc.embedding_width();
    }
    let mut reg = vec![concat];
    reg.extend(&config.regressor);
    reg.push(1);
    total + reg.windows(2).map(|w| dense(w[0], w[1])).sum::<usize>()
}

#[cfg(test)]
pub(crate) fn grad_norm(grads: &[DenseGrad]) -> f64 {
    grads
        .iter()
        .map(|g| g.w.iter().chain(g.b.iter()).map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
