use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle::{check_transition, dynamic_labels};
use crate::som::{load_checkpoint, DropoutRates, SomConfig};
use crate::treebank::{random_tree, right_branching, Split, Tree};

fn config(vocab_size: usize, dropout: DropoutRates) -> SomConfig {
    SomConfig { n_slots: 6, dim: 12, d_sem: 8, d_syn: 4, vocab_size, dropout, ..SomConfig::default() }
}

fn corpus(n: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = 2 + i % 5;
            let tokens: Vec<usize> = (0..len).map(|k| 1 + (3 * i + 5 * k) % 14).collect();
            let surface = tokens.iter().map(|t| format!("w{t}")).collect();
            Sentence { tokens, surface, tree: Some(random_tree(len, 3, &mut rng)), split: Split::Train }
        })
        .collect()
}

fn train_config(mode: OracleMode) -> TrainConfig {
    TrainConfig { mode, lr: 3e-3, batch: 4, epochs: 5, seed: 9, ..TrainConfig::default() }
}

#[test]
fn config_defaults_and_validation() {
    let c = TrainConfig::default();
    assert_eq!((c.lr, c.beta1, c.beta2, c.eps, c.clip, c.patience), (1e-3, 0.9, 0.999, 1e-8, 1.0, 5));
    assert_eq!(c.mode, OracleMode::Dynamic);
    let c: TrainConfig = serde_json::from_str(r#"{"mode":"leftbranch","lr":0.01,"lambda_s":0.5}"#).unwrap();
    assert_eq!(c.mode, OracleMode::LeftBranch);
    assert_eq!(c.lambda_s, Some(0.5));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"mode":"greedy"}"#).is_err());
    assert!(serde_json::from_str::<TrainConfig>(r#"{"speed":1}"#).is_err());
    for bad in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { clip: 0.0, ..TrainConfig::default() },
        TrainConfig { batch: 0, ..TrainConfig::default() },
        TrainConfig { beta2: 1.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }
}

#[test]
fn static_mode_executes_gold_labels() {
    let model = SomModel::new(config(16, DropoutRates::default()), 1).unwrap();
    for (i, s) in corpus(20, 3).iter().enumerate() {
        let key = StreamKey { seed: 1, epoch: 0, sentence: i };
        let step = train_sentence(&model, s, OracleMode::Static, key, None).unwrap().unwrap();
        assert_eq!(step.decisions, step.labels[..s.len()]);
        assert_eq!(step.clamped, 0);
        assert_eq!(step.p_total, s.len() - 1);
        assert_eq!(step.q_total, s.len());
    }
}

#[test]
fn dynamic_mode_samples_legal_decisions_off_the_labels() {
    let model = SomModel::new(config(16, DropoutRates::none()), 2).unwrap();
    let n = model.config.n_slots;
    let data: Vec<Sentence> = corpus(60, 4).into_iter().filter(|s| s.len() >= 4).collect();
    let mut differ = 0;
    for (i, s) in data.iter().enumerate() {
        let key = StreamKey { seed: 5, epoch: 0, sentence: i };
        let step = train_sentence(&model, s, OracleMode::Dynamic, key, None).unwrap().unwrap();
        let mut prev = None;
        for (t, &d) in step.decisions.iter().enumerate() {
            check_transition(prev, d, n, t).unwrap();
            prev = Some(d);
        }
        let tree = s.tree.as_ref().unwrap();
        assert_eq!(step.labels, dynamic_labels(tree, &step.decisions, n).unwrap().all());
        assert!(step.labels.iter().all(|&l| (1..=n).contains(&l)));
        if step.decisions != step.labels[..s.len()] {
            differ += 1;
        }
    }
    assert!(differ * 2 > data.len(), "{differ} of {}", data.len());
}

#[test]
fn leftbranch_labels_ignore_the_tree() {
    let model = SomModel::new(config(16, DropoutRates::none()), 2).unwrap();
    let mut s = corpus(5, 1)[4].clone();
    let key = StreamKey { seed: 0, epoch: 0, sentence: 0 };
    let a = train_sentence(&model, &s, OracleMode::LeftBranch, key, None).unwrap().unwrap();
    s.tree = Some(right_branching(s.len()).into_tree());
    let b = train_sentence(&model, &s, OracleMode::LeftBranch, key, None).unwrap().unwrap();
    s.tree = None;
    let c = train_sentence(&model, &s, OracleMode::LeftBranch, key, None).unwrap().unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.labels, c.labels);
}

#[test]
fn deep_trees_are_skipped() {
    let model = SomModel::new(SomConfig { n_slots: 3, ..config(16, DropoutRates::none()) }, 2).unwrap();
    let s = Sentence {
        tokens: vec![1, 2, 3, 4, 5, 6],
        surface: vec![String::new(); 6],
        tree: Some(right_branching(6).into_tree()),
        split: Split::Train,
    };
    let key = StreamKey { seed: 0, epoch: 0, sentence: 0 };
    assert!(train_sentence(&model, &s, OracleMode::Static, key, None).unwrap().is_none());
    let mut trainer = Trainer::new(model, train_config(OracleMode::Static)).unwrap();
    let r = trainer.step(&[(0, &s)], 0, 0).unwrap();
    assert_eq!(r.totals.skipped, 1);
    assert_eq!(trainer.steps(), 0);
}

#[test]
fn missing_tree_is_a_data_error() {
    let model = SomModel::new(config(16, DropoutRates::none()), 2).unwrap();
    let mut s = corpus(1, 0)[0].clone();
    s.tree = None;
    let key = StreamKey { seed: 0, epoch: 0, sentence: 7 };
    let err = train_sentence(&model, &s, OracleMode::Dynamic, key, None).unwrap_err();
    assert!(matches!(err, TrainError::Data { sentence: 7, .. }));
}

#[test]
fn clipping_bounds_the_update_norm() {
    let model = SomModel::new(config(16, DropoutRates::default()), 3).unwrap();
    let cfg = TrainConfig { clip: 1e-3, ..train_config(OracleMode::Dynamic) };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let data = corpus(8, 2);
    let batch: Vec<(usize, &Sentence)> = data.iter().enumerate().collect();
    let r = trainer.step(&batch, 0, 0).unwrap();
    assert!(r.grad_norm > 1e-3);
    assert!(r.clipped_norm <= 1e-3 * (1.0 + 1e-12), "{}", r.clipped_norm);
}

#[test]
fn nan_parameters_abort_with_sentence_and_step() {
    let mut model = SomModel::new(config(16, DropoutRates::none()), 3).unwrap();
    let id = model.params.id("start").unwrap();
    model.params.get_mut(id).data_mut()[0] = f64::NAN;
    let mut trainer = Trainer::new(model, train_config(OracleMode::Static)).unwrap();
    let data = corpus(3, 2);
    let batch: Vec<(usize, &Sentence)> = data.iter().enumerate().skip(1).collect();
    match trainer.step(&batch, 2, 0) {
        Err(e @ TrainError::NonFinite { sentence: 1, epoch: 2, step: 0, .. }) => assert!(e.is_numeric()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn training_loss_decreases_for_five_epochs() {
    let data = corpus(10, 6);
    let model = SomModel::new(config(16, DropoutRates::none()), 4).unwrap();
    let cfg = TrainConfig { batch: 10, lr: 5e-3, ..train_config(OracleMode::Static) };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let mut losses = Vec::new();
    for epoch in 0..5 {
        let (t, _) = trainer.run_epoch(&data, epoch).unwrap();
        losses.push(t.lm_nll + t.s_nll);
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn batching_is_length_grouped_and_covers_the_corpus() {
    let data = corpus(23, 1);
    let trainer = Trainer::new(SomModel::new(config(16, DropoutRates::none()), 0).unwrap(), train_config(OracleMode::Static)).unwrap();
    let batches = trainer.batches(&data, 3);
    let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
    all.sort();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert!(batches.iter().all(|b| b.len() <= 4));
    let spread: usize = batches.iter().map(|b| {
        let lens: Vec<usize> = b.iter().map(|&i| data[i].len()).collect();
        lens.iter().max().unwrap() - lens.iter().min().unwrap()
    }).max().unwrap();
    assert!(spread <= 1);
    assert_eq!(batches, trainer.batches(&data, 3));
}

#[test]
fn fit_is_deterministic_and_worker_independent() {
    let train = corpus(12, 2);
    let valid = corpus(4, 8);
    let run = |workers: usize| {
        let dir = tempfile::tempdir().unwrap();
        let out = FitOutput { dir: dir.path().to_path_buf(), metadata: BTreeMap::new() };
        let cfg = TrainConfig { epochs: 2, workers, ..train_config(OracleMode::Dynamic) };
        let model = SomModel::new(config(16, DropoutRates::default()), 7).unwrap();
        fit(model, &train, &valid, &cfg, Some(&out)).unwrap();
        let log = fs::read_to_string(out.metrics_path()).unwrap();
        let mut blobs = Vec::new();
        let mut names: Vec<_> = fs::read_dir(out.best_dir()).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            blobs.push(fs::read(p).unwrap());
        }
        (log, blobs)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}

#[test]
fn best_checkpoint_reproduces_logged_validation_ppl() {
    let train = corpus(12, 2);
    let valid = corpus(5, 8);
    let dir = tempfile::tempdir().unwrap();
    let out = FitOutput { dir: dir.path().to_path_buf(), metadata: BTreeMap::new() };
    let cfg = TrainConfig { epochs: 3, ..train_config(OracleMode::Dynamic) };
    let model = SomModel::new(config(16, DropoutRates::default()), 7).unwrap();
    let report = fit(model, &train, &valid, &cfg, Some(&out)).unwrap();
    let logged = read_metrics(&out.metrics_path()).unwrap();
    assert_eq!(logged, report.metrics);
    let best = logged.iter().filter(|m| m.best).last().unwrap();
    assert_eq!(best.epoch, report.best_epoch);
    let ckpt = load_checkpoint(&out.best_dir()).unwrap();
    let again = perplexity(&ckpt.model, &valid, TreeSource::Predicted, 1).unwrap();
    assert!(((again.ppl - best.valid_ppl) / best.valid_ppl).abs() < 1e-6);
    assert_eq!(ckpt.metadata["epoch"], best.epoch);
}

#[test]
fn early_stop_honours_patience() {
    let train = corpus(6, 2);
    let valid = corpus(3, 8);
    // A vanishing step size cannot improve validation perplexity by much,
    // but it moves it; patience 1 stops at the first non-improvement.
    let cfg = TrainConfig { epochs: 50, patience: 1, lr: 1e-12, ..train_config(OracleMode::Static) };
    let model = SomModel::new(config(16, DropoutRates::none()), 7).unwrap();
    let r = fit(model, &train, &valid, &cfg, None).unwrap();
    if r.stopped_early {
        assert!(r.metrics.len() < 50);
        assert!(!r.metrics.last().unwrap().best);
    }
    let empty: Vec<Sentence> = Vec::new();
    let model = SomModel::new(config(16, DropoutRates::none()), 7).unwrap();
    assert!(matches!(fit(model, &empty, &valid, &cfg, None), Err(TrainError::Config(_))));
}

#[test]
fn structure_survives_many_steps() {
    let data = corpus(8, 3);
    let model = SomModel::new(config(16, DropoutRates::default()), 1).unwrap();
    let mut trainer = Trainer::new(model, TrainConfig { lr: 1e-2, ..train_config(OracleMode::Dynamic) }).unwrap();
    let batch: Vec<(usize, &Sentence)> = data.iter().enumerate().collect();
    for s in 0..20 {
        trainer.step(&batch, s, 0).unwrap();
    }
    assert_eq!(trainer.model.params.structure_violation(), None);
}

#[test]
fn learns_structure_on_a_micro_corpus() {
    // Two sentence shapes whose brackets are predictable from the words.
    let tree_a = Tree::Node(vec![Tree::Node(vec![Tree::Leaf(0), Tree::Leaf(1)]), Tree::Leaf(2), Tree::Leaf(3)]);
    let tree_b = right_branching(4).into_tree();
    let mk = |tokens: Vec<usize>, tree: &Tree| Sentence {
        surface: vec![String::new(); tokens.len()],
        tokens,
        tree: Some(tree.clone()),
        split: Split::Train,
    };
    let data = vec![mk(vec![1, 2, 3, 4], &tree_a), mk(vec![5, 6, 7, 8], &tree_b)];
    let model = SomModel::new(config(10, DropoutRates::none()), 3).unwrap();
    let cfg = TrainConfig { lr: 1e-2, batch: 2, ..train_config(OracleMode::Dynamic) };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    for epoch in 0..150 {
        trainer.run_epoch(&data, epoch).unwrap();
    }
    let r = perplexity(&trainer.model, &data, TreeSource::Predicted, 1).unwrap();
    assert!(r.p_acc > 0.9 && r.q_acc > 0.9, "{r:?}");
    assert!(r.ppl < 1.5, "{}", r.ppl);
}
