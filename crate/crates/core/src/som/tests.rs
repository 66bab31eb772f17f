use std::collections::BTreeMap;

use super::*;
use crate::numkernel::{gradcheck, layer_norm, DType, Graph, Gradients, RngStream};
use crate::oracle::{decode_tree, static_labels};
use crate::treebank::{binarize_left, Tree};

fn small(d_syn: usize) -> SomConfig {
    SomConfig {
        n_slots: 4,
        dim: 8,
        d_sem: 8 - d_syn,
        d_syn,
        vocab_size: 12,
        dropout: DropoutRates::none(),
        ..SomConfig::default()
    }
}

fn leaf(i: usize) -> Tree {
    Tree::Leaf(i)
}

/// ((a b)(c d e))
fn caption_tree() -> Tree {
    Tree::Node(vec![Tree::Node(vec![leaf(0), leaf(1)]), Tree::Node(vec![leaf(2), leaf(3), leaf(4)])])
}

fn random_vec(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn zero_all(model: &mut SomModel) {
    for id in model.params.ids().collect::<Vec<_>>() {
        let name = model.params.name(id).to_string();
        let fill = if name.ends_with("ln_gain") { 1.0 } else { 0.0 };
        model.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = fill);
    }
}

fn forced_loss(model: &SomModel, tokens: &[usize], tree: &Tree) -> f64 {
    forced_loss_replay(model, tokens, tree, None)
}

fn forced_loss_replay(model: &SomModel, tokens: &[usize], tree: &Tree, replay: Option<Vec<Vec<f64>>>) -> f64 {
    let mut g = Graph::new(&model.params);
    if let Some(r) = replay {
        g.replay_detached(r);
    }
    let labels = static_labels(tree, model.config.n_slots).unwrap();
    let out = model
        .run_sentence(&mut g, tokens, Supervision::Fixed(labels), Policy::Forced, None, &mut Noise::off(), None)
        .unwrap();
    let loss = model.total_loss(&mut g, &out);
    g.scalar(loss)
}

#[test]
fn config_validation() {
    assert!(small(0).validate().is_ok());
    assert!(small(3).validate().is_ok());
    let mut c = small(0);
    c.n_slots = 1;
    assert!(c.validate().is_err());
    let mut c = small(3);
    c.d_sem = 4;
    assert!(c.validate().is_err());
    let mut c = small(0);
    c.dropout.hidden = 1.0;
    assert!(c.validate().is_err());
}

#[test]
fn config_json_keys() {
    let c: SomConfig =
        serde_json::from_str(r#"{"N": 12, "D": 16, "D_sem": 12, "D_syn": 4, "V": 30, "tie_output": false}"#).unwrap();
    assert_eq!((c.n_slots, c.dim, c.d_sem, c.d_syn, c.vocab_size), (12, 16, 12, 4, 30));
    assert!(!c.tie_output);
    assert!(c.prediction_network);
}

#[test]
fn cell_shape_and_zero_weight_value() {
    let mut model = SomModel::new(small(0), 1).unwrap();
    let mut rng = RngStream::new(5);
    let h = random_vec(&mut rng, 8);
    let m = random_vec(&mut rng, 8);
    let out = model.cell(&h, &m);
    assert_eq!(out.len(), 8);
    assert!(out.iter().all(|v| v.is_finite()));

    zero_all(&mut model);
    let avg: Vec<f64> = h.iter().zip(&m).map(|(a, b)| 0.5 * (a + b)).collect();
    let expected = layer_norm(&avg, &[1.0; 8], &[0.0; 8]);
    let got = model.cell(&h, &m);
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(model.cell(&m, &h), got);
}

#[test]
fn syntactic_output_ignores_semantic_input() {
    let model = SomModel::new(small(3), 2).unwrap();
    let mut rng = RngStream::new(9);
    let h = random_vec(&mut rng, 8);
    let m = random_vec(&mut rng, 8);
    let base = model.cell(&h, &m);
    let mut h2 = h.clone();
    let mut m2 = m.clone();
    for k in 0..5 {
        h2[k] += 3.0 * rng.normal();
        m2[k] -= 2.0;
    }
    let moved = model.cell(&h2, &m2);
    assert_eq!(base[5..], moved[5..]);
    assert_ne!(base[..5], moved[..5]);

    let y = model.disentangled_linear(&h).unwrap();
    let y2 = model.disentangled_linear(&h2).unwrap();
    let (cs, _) = model.config.cell_split();
    assert_eq!(y[cs..], y2[cs..]);
    assert!(SomModel::new(small(0), 2).unwrap().disentangled_linear(&h).is_err());
}

#[test]
fn block_structure_is_exact_zero() {
    let model = SomModel::new(small(3), 3).unwrap();
    assert!(model.params.structure_violation().is_none());
    let id = model.params.id("cell.w1").unwrap();
    let mask = model.params.zero_mask(id).unwrap();
    assert!(mask.iter().any(|&z| z));
    assert!(model.params.get(id).data().iter().zip(mask).all(|(v, &z)| !z || *v == 0.0));
}

#[test]
fn transition_examples() {
    let cfg = SomConfig { n_slots: 3, ..small(0) };
    let model = SomModel::new(cfg.clone(), 4).unwrap();
    let s0 = SomState::initial(&cfg);
    let x1 = model.embed(1);
    let s1 = model.transition(&s0, &x1, 3).unwrap();
    assert_eq!(s1.cp, vec![false, false, true]);
    assert_eq!(s1.candidates[2], x1);
    assert!(s1.candidates[0].iter().chain(&s1.candidates[1]).all(|&v| v == 0.0));

    let x2 = model.embed(2);
    let s2 = model.transition(&s1, &x2, 2).unwrap();
    assert_eq!(s2.cp, vec![false, true, true]);
    assert_eq!(s2.candidates[1], x2);
    assert_eq!(s2.memory[2], x1);
    assert_eq!(s2.candidates[2], model.cell(&x1, &x2));
    assert!(s2.candidates[0].iter().all(|&v| v == 0.0));

    assert!(model.transition(&s0, &x1, 2).is_err());
    assert!(model.transition(&s1, &x2, 3).is_err());
    assert!(model.transition(&s2, &x2, 0).is_err());
}

#[test]
fn shadow_matches_decoder() {
    let cfg = SomConfig { n_slots: 3, ..small(0) };
    let model = SomModel::new(cfg.clone(), 4).unwrap();
    let mut s = SomState::initial(&cfg);
    let theta = [3, 2, 2, 1, 1];
    for (t, &th) in theta.iter().enumerate() {
        s = model.transition(&s, &model.embed(t + 1), th).unwrap();
        assert!(s.cp.iter().skip_while(|c| !**c).all(|c| *c), "cp is a suffix mask");
    }
    let decoded = decode_tree(&theta, 5, 3).unwrap();
    assert_eq!(s.candidate_tree(3).unwrap(), &decoded);
    assert_eq!(decoded, binarize_left(&caption_tree()));
}

#[test]
fn attention_masks() {
    let cfg = SomConfig { n_slots: 3, ..small(0) };
    let model = SomModel::new(cfg.clone(), 6).unwrap();
    let s1 = model.transition(&SomState::initial(&cfg), &model.embed(1), 3).unwrap();
    let p = model.one_step_attention(&model.embed(2), &s1).unwrap();
    assert_eq!(p, vec![0.0, 0.0, 1.0]);

    let s2 = model.transition(&s1, &model.embed(2), 2).unwrap();
    let s3 = model.transition(&s2, &model.embed(3), 1).unwrap();
    let p = model.one_step_attention(&model.embed(4), &s3).unwrap();
    assert_eq!(p[0], 0.0);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let q = model.zero_step_attention(&s3).unwrap();
    assert!(q.iter().all(|&v| v > 0.0));
    assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_step_uniform_and_sharpening() {
    let cfg = SomConfig { n_slots: 3, ..small(0) };
    let mut model = SomModel::new(cfg.clone(), 7).unwrap();
    let s1 = model.transition(&SomState::initial(&cfg), &model.embed(1), 3).unwrap();
    let s2 = model.transition(&s1, &model.embed(2), 2).unwrap();
    let q = model.zero_step_attention(&s2).unwrap();
    assert_eq!(q[0], 0.0);

    let w2 = model.params.id("lookahead.w2").unwrap();
    let saved = model.params.get(w2).clone();
    model.params.get_mut(w2).data_mut().iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(model.zero_step_attention(&s2).unwrap(), vec![0.0, 0.5, 0.5]);

    *model.params.get_mut(w2) = saved;
    let entropy = |q: &[f64]| -q.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    let s3 = model.transition(&s2, &model.embed(3), 1).unwrap();
    let q1 = model.zero_step_attention(&s3).unwrap();
    model.params.get_mut(w2).data_mut().iter_mut().for_each(|v| *v *= 2.0);
    let q2 = model.zero_step_attention(&s3).unwrap();
    let argmax = |q: &[f64]| (0..3).max_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap()).unwrap();
    assert_eq!(argmax(&q1), argmax(&q2));
    assert!(entropy(&q2) <= entropy(&q1));
}

#[test]
fn predict_next_at_top_slot() {
    let cfg = small(0);
    let model = SomModel::new(cfg.clone(), 8).unwrap();
    let s1 = model.transition(&SomState::initial(&cfg), &model.embed(3), 4).unwrap();
    let (h, dist) = model.predict_next(&s1, 4).unwrap();
    let mut g = Graph::new(&model.params);
    let z = g.input(vec![0.0; 8]);
    let m = g.input(model.embed(3));
    let expected = network::cell(&mut g, &cfg, &model.ids().pred, z, m, &mut Noise::off());
    assert_eq!(h, g.value(expected));
    assert_eq!(dist.len(), 12);
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(model.predict_next(&s1, 3).is_err());
}

#[test]
fn uniform_output_gives_log_v() {
    let cfg = SomConfig { tie_output: false, ..small(0) };
    let mut model = SomModel::new(cfg, 9).unwrap();
    let w = model.params.id("output.weight").unwrap();
    model.params.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let mut g = Graph::new(&model.params);
    let out = model
        .run_sentence(&mut g, &[3, 4, 5], Supervision::None, Policy::Greedy, None, &mut Noise::off(), None)
        .unwrap();
    assert_eq!(out.token_nll.len(), 4);
    for nll in &out.token_nll {
        assert!((nll - 12f64.ln()).abs() < 1e-12);
    }
    assert!(out.s_loss.is_none());
}

#[test]
fn forced_decisions_rebuild_gold_tree() {
    let cfg = SomConfig { n_slots: 3, ..small(0) };
    let model = SomModel::new(cfg, 10).unwrap();
    let tree = caption_tree();
    let labels = static_labels(&tree, 3).unwrap();
    let mut g = Graph::new(&model.params);
    let out = model
        .run_sentence(&mut g, &[1, 2, 3, 4, 5], Supervision::Fixed(labels.clone()), Policy::Forced, None, &mut Noise::off(), None)
        .unwrap();
    assert_eq!(out.decisions, labels.token_labels());
    assert_eq!(out.reads, vec![3, 3, 2, 2, 3]);
    assert_eq!(out.tree, binarize_left(&tree));
    assert_eq!(out.p_total, 4);
    assert_eq!(out.q_total, 5);
}

#[test]
fn sampled_rollouts_stay_legal() {
    let cfg = SomConfig { n_slots: 5, ..small(0) };
    let model = SomModel::new(cfg, 11).unwrap();
    let tree = caption_tree();
    let mut differs = 0;
    for s in 0..50 {
        let mut rng = RngStream::new(s);
        let mut g = Graph::new(&model.params);
        let out = model
            .run_sentence(&mut g, &[1, 2, 3, 4, 5], Supervision::Dynamic(&tree), Policy::Sample, Some(&mut rng), &mut Noise::off(), None)
            .unwrap();
        assert_eq!(out.labels.len(), 6);
        for t in 1..6 {
            assert!(out.labels[t] >= 1 && out.labels[t] + 1 >= out.decisions[t - 1]);
        }
        if out.decisions != out.labels[..5] {
            differs += 1;
        }
        assert_eq!(out.tree.num_leaves(), 5);
    }
    assert!(differs > 25, "untrained sampling should usually deviate ({differs}/50)");
}

#[test]
fn dynamic_teacher_forcing_matches_fixed_labels() {
    let cfg = SomConfig { n_slots: 4, ..small(0) };
    let model = SomModel::new(cfg, 12).unwrap();
    let tree = caption_tree();
    let labels = static_labels(&tree, 4).unwrap();
    let mut g = Graph::new(&model.params);
    let fixed = model
        .run_sentence(&mut g, &[1, 2, 3, 4, 5], Supervision::Fixed(labels.clone()), Policy::Forced, None, &mut Noise::off(), None)
        .unwrap();
    // Feeding the fixed labels as decisions gives the same dynamic labels.
    let mut o = crate::oracle::DynamicOracle::new(&tree, 4).unwrap();
    for t in 0..=5 {
        o.next_label(&fixed.decisions[..t]);
    }
    assert_eq!(o.labels(), labels.all());
}

fn gradient_check(d_syn: usize) {
    let model = SomModel::new(small(d_syn), 13 + d_syn as u64).unwrap();
    let tokens = [1, 7, 3, 11, 2];
    let tree = Tree::Node(vec![leaf(0), Tree::Node(vec![Tree::Node(vec![leaf(1), leaf(2)]), leaf(3), leaf(4)])]);
    let labels = static_labels(&tree, 4).unwrap();
    let mut g = Graph::new(&model.params);
    let out = model
        .run_sentence(&mut g, &tokens, Supervision::Fixed(labels), Policy::Forced, None, &mut Noise::off(), None)
        .unwrap();
    let loss = model.total_loss(&mut g, &out);
    let analytic = g.backward(loss).unwrap();
    let detached = g.detached_values();
    assert_eq!(detached.is_empty(), d_syn == 0);
    drop(g);
    let mut params = model.params.clone();
    let cfg = model.config.clone();
    let report = gradcheck::check(&mut params, &analytic, 1e-5, |p| {
        let m = SomModel::from_params(cfg.clone(), p.clone()).unwrap();
        forced_loss_replay(&m, &tokens, &tree, Some(detached.clone()))
    });
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.checked + count_structural(&model), model.params.num_scalars());
}

fn count_structural(model: &SomModel) -> usize {
    model.params.ids().filter_map(|id| model.params.zero_mask(id)).map(|m| m.iter().filter(|&&z| z).count()).sum()
}

#[test]
fn full_model_gradients_entangled() {
    gradient_check(0);
}

#[test]
fn full_model_gradients_disentangled() {
    gradient_check(3);
}

#[test]
fn structure_loss_never_reaches_semantic_embeddings() {
    let model = SomModel::new(small(3), 21).unwrap();
    let tree = caption_tree();
    let tokens = [1, 2, 3, 4, 5];
    let mut rng = RngStream::new(1);
    let mut g = Graph::new(&model.params);
    let out = model
        .run_sentence(&mut g, &tokens, Supervision::Dynamic(&tree), Policy::Sample, Some(&mut rng), &mut Noise::off(), None)
        .unwrap();
    let gs = g.backward(out.s_loss.unwrap()).unwrap();
    let gl = g.backward(out.lm_loss).unwrap();
    let emb = model.params.id("embedding").unwrap();
    let (es, el) = (gs.get(emb), gl.get(emb));
    let mut lm_nonzero = false;
    for &w in &tokens {
        for k in 0..8 {
            if k < 5 {
                assert_eq!(es[w * 8 + k], 0.0);
                lm_nonzero |= el[w * 8 + k] != 0.0;
            }
        }
    }
    assert!(lm_nonzero);
    assert!((0..8).any(|k| k >= 5 && es[8 + k] != 0.0), "syntactic rows do get structure gradient");
}

#[test]
fn disentangled_switch_is_live() {
    let tree = caption_tree();
    let a = forced_loss(&SomModel::new(small(0), 5).unwrap(), &[1, 2, 3, 4, 5], &tree);
    let b = forced_loss(&SomModel::new(small(3), 5).unwrap(), &[1, 2, 3, 4, 5], &tree);
    assert_ne!(a, b);
}

#[test]
fn deterministic_losses() {
    let tree = caption_tree();
    let run = || {
        let model = SomModel::new(SomConfig { dropout: DropoutRates::default(), ..small(3) }, 77).unwrap();
        let mut g = Graph::new(&model.params);
        let mut rng = RngStream::new(3);
        let mut noise = Noise::new(model.config.dropout, RngStream::new(4));
        let out = model
            .run_sentence(&mut g, &[1, 2, 3, 4, 5], Supervision::Dynamic(&tree), Policy::Sample, Some(&mut rng), &mut noise, None)
            .unwrap();
        let l = model.total_loss(&mut g, &out);
        (g.scalar(l).to_bits(), out.decisions)
    };
    assert_eq!(run(), run());
}

#[test]
fn unknown_token_is_rejected() {
    let model = SomModel::new(small(0), 1).unwrap();
    let mut g = Graph::new(&model.params);
    let err = model.run_sentence(&mut g, &[1, 12], Supervision::None, Policy::Greedy, None, &mut Noise::off(), None);
    assert!(matches!(err, Err(SomError::UnknownToken { id: 12, .. })));
}

#[test]
fn checkpoint_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let model = SomModel::new(small(3), 31).unwrap();
    let tree = caption_tree();
    let before = forced_loss(&model, &[1, 2, 3, 4, 5], &tree);
    let mut meta = BTreeMap::new();
    meta.insert("epoch".to_string(), serde_json::json!(3));
    save_checkpoint(&model, dir.path(), DType::F64, meta.clone()).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.metadata, meta);
    assert_eq!(forced_loss(&loaded.model, &[1, 2, 3, 4, 5], &tree).to_bits(), before.to_bits());

    // Same bytes on a second save.
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(&loaded.model, dir2.path(), DType::F64, meta).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(dir.path().join(&name)).unwrap(), std::fs::read(dir2.path().join(&name)).unwrap());
    }

    // Truncated blob names its tensor.
    let blob = dir2.path().join("attend.wm.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    match load_checkpoint(dir2.path()) {
        Err(SomError::Tensor { tensor, .. }) => assert_eq!(tensor, "attend.wm"),
        other => panic!("unexpected {other:?}"),
    }

    // Nonzero semantic-to-syntactic block is rejected.
    let id = model.params.id("predictor.w2").unwrap();
    let k = model.params.zero_mask(id).unwrap().iter().position(|&z| z).unwrap();
    let blob = dir.path().join("predictor.w2.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[k * 8..k * 8 + 8].copy_from_slice(&0.5f64.to_le_bytes());
    std::fs::write(&blob, bytes).unwrap();
    match load_checkpoint(dir.path()) {
        Err(SomError::Tensor { tensor, .. }) => assert_eq!(tensor, "predictor.w2"),
        other => panic!("unexpected {other:?}"),
    }

    // Unsupported version.
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(SomError::Checkpoint(m)) if m.contains("format_version")));
}

#[test]
fn f32_checkpoint_is_exact_at_stored_precision() {
    let dir = tempfile::tempdir().unwrap();
    let model = SomModel::new(small(0), 32).unwrap();
    save_checkpoint(&model, dir.path(), DType::F32, BTreeMap::new()).unwrap();
    let a = load_checkpoint(dir.path()).unwrap().model;
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(&a, dir2.path(), DType::F32, BTreeMap::new()).unwrap();
    let b = load_checkpoint(dir2.path()).unwrap().model;
    for id in a.params.ids() {
        assert_eq!(a.params.get(id).data(), b.params.get(id).data());
    }
}

#[test]
fn gradients_respect_structure() {
    let model = SomModel::new(small(3), 40).unwrap();
    let tree = caption_tree();
    let mut g = Graph::new(&model.params);
    let labels = static_labels(&tree, 4).unwrap();
    let out = model
        .run_sentence(&mut g, &[1, 2, 3, 4, 5], Supervision::Fixed(labels), Policy::Forced, None, &mut Noise::off(), None)
        .unwrap();
    let loss = model.total_loss(&mut g, &out);
    let grads: Gradients = g.backward(loss).unwrap();
    for id in model.params.ids() {
        if let Some(mask) = model.params.zero_mask(id) {
            assert!(grads.get(id).iter().zip(mask).all(|(g, &z)| !z || *g == 0.0));
        }
    }
}
