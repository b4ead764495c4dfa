//! Dashboard-facing operations on a trained model, and the HTTP server that
//! exposes them.

mod http;

use std::time::Instant;

use serde::Serialize;

use crate::datagen::group_query;
use crate::encoding::{encode_state, enumerate_ranges};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::oracle::ColumnStore;
use crate::schema::Measure;
use crate::state::{Range, Selection, SelectionState};

pub use http::{router, serve, AppState, ServeOptions};

/// One attribute's group-by vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeVectors {
    pub attribute: String,
    /// Predictions for display: negative counts are clamped to 0.
    pub predictions: Vec<f64>,
    /// Predictions exactly as the model produced them.
    pub raw: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<f64>>,
    /// Cells whose exact average is over zero records (shown as 0 in `oracle`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_empty: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DashboardResponse {
    pub attributes: Vec<AttributeVectors>,
    /// Predicted aggregate of the state itself.
    pub total: f64,
    /// Exact aggregate; `None` when not requested or an average over no records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_total: Option<f64>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentPoint {
    pub range: Range,
    pub xy: [f64; 2],
    pub prediction: f64,
    pub length: usize,
}

fn check_store(model: &Model, store: &ColumnStore) -> Result<()> {
    let (expected, found) = (model.fingerprint(), store.schema().fingerprint());
    if expected != found {
        return Err(Error::Fingerprint { expected, found });
    }
    Ok(())
}

fn finite(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Every group-by vector of `state` from one batched forward pass, plus the
/// state's own aggregate. With `with_oracle` the exact vectors come from `store`.
pub fn predict_dashboard(
    model: &Model,
    store: Option<&ColumnStore>,
    state: &SelectionState,
    with_oracle: bool,
) -> Result<DashboardResponse> {
    let start = Instant::now();
    let schema = model.schema();
    state.validate(schema)?;
    let oracle = if with_oracle {
        let store = store.ok_or_else(|| Error::FeatureDisabled("no data store is loaded".into()))?;
        check_store(model, store)?;
        let total = match store.aggregate(state) {
            Ok(v) => Some(v),
            Err(Error::EmptyAggregate) => None,
            Err(e) => return Err(e),
        };
        Some((store.group_by_all(state)?, total))
    } else {
        None
    };

    let mut queries = Vec::with_capacity(schema.samples_per_state() + 1);
    for (attr, spec) in schema.attributes().iter().enumerate() {
        for j in 0..spec.group_size() {
            queries.push(group_query(schema, state, attr, j));
        }
    }
    queries.push(encode_state(schema, state));
    let raw_all: Vec<f64> = model.predict(&queries)?.into_iter().map(finite).collect();

    let clamp = matches!(schema.measure(), Measure::Count);
    let mut attributes = Vec::with_capacity(schema.len());
    let mut start_idx = 0;
    for (attr, spec) in schema.attributes().iter().enumerate() {
        let raw = raw_all[start_idx..start_idx + spec.group_size()].to_vec();
        start_idx += spec.group_size();
        let predictions = if clamp {
            raw.iter().map(|v| v.max(0.0)).collect()
        } else {
            raw.clone()
        };
        let (oracle_vec, oracle_empty) = match &oracle {
            Some((groups, _)) => (Some(groups[attr].values.clone()), Some(groups[attr].empty.clone())),
            None => (None, None),
        };
        attributes.push(AttributeVectors {
            attribute: spec.name.clone(),
            predictions,
            raw,
            oracle: oracle_vec,
            oracle_empty,
        });
    }
    let total = raw_all[raw_all.len() - 1];
    Ok(DashboardResponse {
        attributes,
        total: if clamp { total.max(0.0) } else { total },
        oracle_total: oracle.and_then(|(_, t)| t),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One point per contiguous range of a 1-D attribute: its 2D projection and
/// the prediction for `context` with that range substituted.
pub fn latent_space(model: &Model, attribute: &str, context: &SelectionState) -> Result<Vec<LatentPoint>> {
    let schema = model.schema();
    context.validate(schema)?;
    let (attr, spec) = schema.attribute(attribute)?;
    let ranges = enumerate_ranges(spec)?;
    let queries: Vec<_> = ranges
        .iter()
        .map(|&r| encode_state(schema, &context.with(attr, Selection::Linear(r))))
        .collect();
    let out = model.forward(&queries)?;
    let proj = &out.projections[attr];
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(i, range)| LatentPoint {
            range,
            xy: [finite(proj[[i, 0]]), finite(proj[[i, 1]])],
            prediction: finite(out.predictions[i]),
            length: range.len(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::schema::{brightkite_like, AttributeKind, AttributeSpec, Schema};
    use crate::synth::checkin_store;

    fn bk_model() -> Model {
        let s = brightkite_like();
        let mut m = Model::build(&ModelConfig::brightkite(&s), &s, 2).unwrap();
        m.target_scale = 50.0;
        m
    }

    #[test]
    fn vector_lengths_follow_schema() {
        let m = bk_model();
        let st = SelectionState::full(m.schema());
        let r = predict_dashboard(&m, None, &st, false).unwrap();
        let lens: Vec<usize> = r.attributes.iter().map(|a| a.predictions.len()).collect();
        assert_eq!(lens, vec![12, 7, 24, 400]);
        assert!(r.attributes.iter().all(|a| a.oracle.is_none()));
        for a in &r.attributes {
            for (p, raw) in a.predictions.iter().zip(&a.raw) {
                assert_eq!(*p, raw.max(0.0));
            }
        }
    }

    #[test]
    fn oracle_total_on_full_state_is_record_count() {
        let m = bk_model();
        let store = checkin_store(3000, 1).unwrap();
        let st = SelectionState::full(m.schema());
        let r = predict_dashboard(&m, Some(&store), &st, true).unwrap();
        assert_eq!(r.oracle_total, Some(3000.0));
        let hist: f64 = r.attributes[2].oracle.as_ref().unwrap().iter().sum();
        assert_eq!(hist, 3000.0);
        assert!(matches!(
            predict_dashboard(&m, None, &st, true),
            Err(Error::FeatureDisabled(_))
        ));
    }

    #[test]
    fn vectors_match_individual_forward_passes() {
        let m = bk_model();
        let st = SelectionState::full(m.schema()).with(2, Selection::Linear(Range::new(5, 9)));
        let r = predict_dashboard(&m, None, &st, false).unwrap();
        for (attr, a) in r.attributes.iter().enumerate().take(3) {
            for (j, raw) in a.raw.iter().enumerate() {
                let q = group_query(m.schema(), &st, attr, j);
                let single = m.predict(std::slice::from_ref(&q)).unwrap()[0];
                assert!((single - raw).abs() <= 1e-9 * single.abs().max(1.0));
            }
        }
    }

    #[test]
    fn store_schema_mismatch_is_rejected() {
        let m = bk_model();
        let other = crate::synth::splom_store(10, 10, 1).unwrap();
        let st = SelectionState::full(m.schema());
        assert!(matches!(
            predict_dashboard(&m, Some(&other), &st, true),
            Err(Error::Fingerprint { .. })
        ));
    }

    #[test]
    fn latent_points() {
        let m = bk_model();
        let ctx = SelectionState::full(m.schema()).with(2, Selection::Linear(Range::new(3, 10)));
        let pts = latent_space(&m, "hour", &ctx).unwrap();
        assert_eq!(pts.len(), 300);
        let own = pts.iter().find(|p| p.range == Range::new(3, 10)).unwrap();
        assert_eq!(own.length, 7);
        let total = predict_dashboard(&m, None, &ctx, false).unwrap();
        let raw_total = m.predict(&[encode_state(m.schema(), &ctx)]).unwrap()[0];
        assert!((own.prediction - raw_total).abs() < 1e-9 * raw_total.abs().max(1.0));
        assert_eq!(total.total, raw_total.max(0.0));
        assert!(matches!(latent_space(&m, "geo", &ctx), Err(Error::Unsupported(_))));
        assert!(latent_space(&m, "nope", &ctx).is_err());
    }

    #[test]
    fn single_bin_attribute_has_one_point() {
        let s = Schema::new(
            vec![
                AttributeSpec::categorical("only", &["x"]),
                AttributeSpec::numeric("b", AttributeKind::BinnedContinuous, 4, 0.0, 1.0),
            ],
            Measure::Count,
        )
        .unwrap();
        let m = Model::build(&ModelConfig::uniform(&s, &[4, 3, 2, 3, 4], 1, &[4]), &s, 0).unwrap();
        let pts = latent_space(&m, "only", &SelectionState::full(&s)).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].range, Range::new(0, 1));
    }
}
