//! Dense networks from scratch: layers, the multi-tower model, losses,
//! backpropagation, optimizers and serialization.

mod io;
pub mod layer;
pub mod loss;
pub mod model;
pub mod optim;
pub mod portable;

pub use layer::{Activation, Dense, DenseGrad};
pub use loss::{loss_ae, loss_pred, loss_total, LossParts, LossWeights};
pub use model::{param_count, ForwardOutput, Model, ModelConfig, OptimizerConfig, Tower, TowerConfig, TrainingMeta};
pub use optim::{sgd_step, Adam};
pub use portable::PortableModel;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample_state;
    use crate::encoding::{encode_state, ManyHotQuery};
    use crate::schema::{brightkite_like, AttributeKind, AttributeSpec, Measure, Schema};
    use crate::Error;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn splom_schema(bins: usize) -> Schema {
        Schema::new(
            (0..5)
                .map(|i| AttributeSpec::numeric(&format!("a{i}"), AttributeKind::BinnedContinuous, bins, 0.0, 1.0))
                .collect(),
            Measure::Count,
        )
        .unwrap()
    }

    fn random_queries(schema: &Schema, n: usize, seed: u64) -> Vec<ManyHotQuery> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| encode_state(schema, &sample_state(schema, Default::default(), &mut rng)))
            .collect()
    }

    #[test]
    fn brightkite_architecture() {
        let s = brightkite_like();
        let cfg = ModelConfig::brightkite(&s);
        let m = Model::build(&cfg, &s, 1).unwrap();
        let concat: usize = m.towers.iter().map(Tower::embedding_width).sum();
        assert_eq!(concat, 142);
        assert_eq!(m.regressor[0].inputs(), 142);
        assert_eq!(m.regressor[0].outputs(), 220);
        let geo = &m.towers[3];
        assert_eq!(geo.front[0].inputs(), 40);
        assert_eq!(geo.front[0].outputs(), 400);
        assert_eq!(geo.decoder.last().unwrap().outputs(), 40);
        assert_eq!(m.param_count(), param_count(&cfg, &s));
    }

    #[test]
    fn splom_architecture_and_size() {
        let s = splom_schema(10);
        let cfg = ModelConfig::splom(&s);
        let m = Model::build(&cfg, &s, 1).unwrap();
        assert_eq!(m.towers.len(), 5);
        assert_eq!(
            m.regressor.iter().map(Dense::outputs).collect::<Vec<_>>(),
            vec![120, 60, 1]
        );
        let t = &m.towers[0];
        assert_eq!(t.front.len(), 2);
        assert_eq!(t.back.len(), 1);
        assert_eq!(t.decoder.len(), 3);
        assert_eq!(t.back[0].activation, Activation::Identity);
        assert_eq!(t.decoder[2].activation, Activation::Sigmoid);
        assert_eq!(m.param_count(), param_count(&cfg, &s));
        // Five towers of 668 parameters plus a 12241-parameter regressor.
        assert_eq!(m.param_count(), 5 * 668 + 12241);
    }

    #[test]
    fn build_is_deterministic() {
        let s = splom_schema(10);
        let cfg = ModelConfig::splom(&s);
        let a = Model::build(&cfg, &s, 7).unwrap();
        let b = Model::build(&cfg, &s, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = Model::build(&cfg, &s, 8).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn config_errors_name_attribute_and_layer() {
        let s = splom_schema(10);
        let mut cfg = ModelConfig::splom(&s);
        cfg.towers[2].layers = vec![16, 8, 2, 4, 16];
        match Model::build(&cfg, &s, 0).unwrap_err() {
            Error::Config { attribute, layer, .. } => {
                assert_eq!(attribute, "a2");
                assert_eq!(layer, 3);
            }
            e => panic!("unexpected {e}"),
        }
        let mut cfg = ModelConfig::splom(&s);
        cfg.towers[0].layers = vec![16, 8, 8, 16];
        assert!(Model::build(&cfg, &s, 0).is_err());
        let mut cfg = ModelConfig::splom(&s);
        cfg.towers[1].embedding_index = 2;
        assert!(Model::build(&cfg, &s, 0).is_err());
        let mut cfg = ModelConfig::splom(&s);
        cfg.towers.pop();
        assert!(Model::build(&cfg, &s, 0).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let s = brightkite_like();
        let cfg = ModelConfig::brightkite(&s);
        assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let minimal = r#"{"towers": [{"attribute": "a", "layers": [4, 3, 2, 3, 4], "embedding_index": 1}],
                          "regressor": [8]}"#;
        let cfg = ModelConfig::from_json(minimal).unwrap();
        assert_eq!(cfg.loss, LossWeights::default());
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
    }

    #[test]
    fn forward_outputs_are_finite_and_bounded() {
        let s = brightkite_like();
        let m = Model::build(&ModelConfig::brightkite(&s), &s, 3).unwrap();
        let qs = random_queries(&s, 10_000, 1);
        for chunk in qs.chunks(500) {
            let out = m.forward(chunk).unwrap();
            assert!(out.predictions.iter().all(|p| p.is_finite()));
            for rec in &out.reconstructions {
                assert!(rec.iter().all(|&r| r > 0.0 && r < 1.0));
            }
            assert!(out.projections.iter().all(|p| p.ncols() == 2));
        }
        let bad = ManyHotQuery::zeros(10);
        assert!(matches!(m.forward(&[bad]), Err(Error::Shape(_))));
    }

    #[test]
    fn batching_invariance() {
        let s = splom_schema(10);
        let m = Model::build(&ModelConfig::splom(&s), &s, 3).unwrap();
        let qs = random_queries(&s, 64, 2);
        let batch = m.forward(&qs).unwrap();
        for (i, q) in qs.iter().enumerate() {
            let single = m.forward(std::slice::from_ref(q)).unwrap();
            let (a, b) = (single.predictions[0], batch.predictions[i]);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            for attr in 0..5 {
                let pa = single.projections[attr].row(0);
                let pb = batch.projections[attr].row(i);
                assert!(pa.iter().zip(pb.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
            }
        }
        let pred_only = m.predict(&qs).unwrap();
        assert_eq!(pred_only, batch.predictions);
    }

    /// Central finite differences of the mean batch loss, one parameter at a time.
    fn numeric_gradients(model: &mut Model, x: &Array2<f64>, t: &[f64], w: LossWeights) -> Vec<Vec<f64>> {
        let h = 1e-5;
        let n_layers = model.layers().count();
        let mut out = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let len = {
                let l = model.layers().nth(li).unwrap();
                l.w.len() + l.b.len()
            };
            let mut g = Vec::with_capacity(len);
            for pi in 0..len {
                let mut eval = |delta: f64| {
                    let l = model.layers_mut().nth(li).unwrap();
                    let nw = l.w.len();
                    if pi < nw {
                        l.w.as_slice_mut().unwrap()[pi] += delta;
                    } else {
                        l.b[pi - nw] += delta;
                    }
                    model.batch_loss(x.view(), t, w).unwrap().total
                };
                let plus = eval(h);
                let minus = eval(-2.0 * h);
                eval(h);
                g.push((plus - minus) / (2.0 * h));
            }
            out.push(g);
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = Schema::new(
            vec![
                AttributeSpec::numeric("a", AttributeKind::BinnedContinuous, 5, 0.0, 1.0),
                AttributeSpec::numeric("b", AttributeKind::BinnedContinuous, 4, 0.0, 1.0),
            ],
            Measure::Count,
        )
        .unwrap();
        let cfg = ModelConfig {
            loss: LossWeights {
                l1: 0.7,
                l2: 0.3,
                ae: 0.5,
            },
            ..ModelConfig::uniform(&s, &[6, 3, 2, 3, 6], 1, &[5])
        };
        let mut m = Model::build(&cfg, &s, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for l in m.layers_mut() {
            l.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        m.target_scale = 2.0;
        let qs = random_queries(&s, 6, 5);
        let x = m.input_matrix(&qs).unwrap();
        let t: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grads) = m.gradients(x.view(), &t, cfg.loss).unwrap();
        let numeric = numeric_gradients(&mut m, &x, &t, cfg.loss);
        for (g, n) in grads.iter().zip(&numeric) {
            for (a, b) in g.w.iter().chain(g.b.iter()).zip(n) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
                assert!(rel < 1e-4, "analytic {a} numeric {b}");
            }
        }
    }

    #[test]
    fn zero_ae_weight_leaves_decoder_untouched() {
        let s = splom_schema(6);
        let mut cfg = ModelConfig::uniform(&s, &[8, 4, 2, 4, 8], 1, &[10]);
        cfg.loss.ae = 0.0;
        let m = Model::build(&cfg, &s, 2).unwrap();
        let qs = random_queries(&s, 12, 9);
        let x = m.input_matrix(&qs).unwrap();
        let t = vec![1.5; 12];
        let (loss, grads) = m.gradients(x.view(), &t, cfg.loss).unwrap();
        assert_eq!(loss.total, loss.pred);
        let mut idx = 0;
        for tower in &m.towers {
            idx += tower.front.len();
            for g in &grads[idx..idx + tower.back.len() + tower.decoder.len()] {
                assert!(g.w.iter().chain(g.b.iter()).all(|&v| v == 0.0));
            }
            idx += tower.back.len() + tower.decoder.len();
        }
        assert!(model::grad_norm(&grads) > 0.0);
    }

    #[test]
    fn native_round_trip_is_exact() {
        let s = splom_schema(10);
        let mut m = Model::build(&ModelConfig::splom(&s), &s, 5).unwrap();
        m.target_scale = 37.5;
        m.meta.epochs = 12;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ncmd");
        m.save(&path).unwrap();
        let back = Model::load_for(&path, &s).unwrap();
        assert_eq!(back, m);
        let qs = random_queries(&s, 1000, 3);
        assert_eq!(m.predict(&qs).unwrap(), back.predict(&qs).unwrap());

        assert!(matches!(
            Model::load_for(&path, &splom_schema(11)),
            Err(Error::Fingerprint { .. })
        ));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        assert!(matches!(Model::from_bytes(&bytes), Err(Error::Version { .. })));
        let size = std::fs::metadata(&path).unwrap().len();
        assert!(size <= 300 * 1024, "{size}");
    }

    #[test]
    fn portable_export_agrees() {
        let s = brightkite_like();
        let mut m = Model::build(&ModelConfig::brightkite(&s), &s, 5).unwrap();
        m.target_scale = 250.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.export_portable(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), m.portable_json());
        let p = PortableModel::load(&path).unwrap();
        assert_eq!(p.schema_fingerprint, format!("{:016x}", s.fingerprint()));
        let qs = random_queries(&s, 200, 8);
        let native = m.forward(&qs).unwrap();
        for (i, q) in qs.iter().enumerate() {
            let v = q.to_values();
            assert!((p.predict(&v).unwrap() - native.predictions[i]).abs() < 1e-4);
            let seg = &v[19..43];
            let xy = p.project(2, seg);
            assert!((xy[0] - native.projections[2][[i, 0]]).abs() < 1e-9);
            assert!((xy[1] - native.projections[2][[i, 1]]).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_micro_model_is_affine() {
        let text = r#"{"format": "neurocube-portable", "version": 1, "schema_fingerprint": "0",
            "attributes": [{"name": "a", "input_width": 3,
                "layers": [{"rows": 3, "cols": 3, "activation": "identity",
                            "w": [1,0,0, 0,1,0, 0,0,1], "b": [0,0,0]}],
                "embedding_index": 0, "projection_index": 0}],
            "regressor": [{"rows": 1, "cols": 3, "activation": "identity", "w": [2, -1, 0.5], "b": [0.25]}],
            "target_scale": 1.0}"#;
        let p = PortableModel::from_json(text).unwrap();
        assert_eq!(p.predict(&[1.0, 1.0, 0.0]).unwrap(), 2.0 - 1.0 + 0.25);
        assert_eq!(p.predict(&[0.0, 0.0, 1.0]).unwrap(), 0.5 + 0.25);
    }
}
