use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treecomp_core::encoder::{random_embeddings, Encoder, Vocabulary};
use treecomp_core::gradcheck::{compare, numeric_gradient};
use treecomp_core::labeling::{CompressionExample, KeepMask};
use treecomp_core::metrics::{aggregate, evaluate, score_sentence, ssa};
use treecomp_core::model::{unfold, HeadOptions, HeadRegistry, ModelParameters, OutputHead, TensorKind};
use treecomp_core::ptb::{parse_bracketed, ParseTree};
use treecomp_core::synthetic::rule_corpus;
use treecomp_core::training::{
    backward, data_gradient, grid_search, l2_penalty, leaf_targets, train, tree_loss, TrainError, Trainer,
    TrainingConfig,
};

const PLAYING_TREE: &str = "(ROOT (S (NP (PRP I)) (VP (VBP like) (S (VP (VBG playing)) (NP (NN football)) \
                    (PP (IN with) (NN (PRP you))))) (. .)))";

fn head(name: &str) -> Arc<dyn OutputHead> {
    HeadRegistry::builtin().create(name, &HeadOptions::default()).unwrap()
}

fn encoder_for(trees: &[&ParseTree], dim: usize) -> Arc<Encoder> {
    let vocab = Vocabulary::build(trees.iter().copied()).unwrap();
    let table = random_embeddings(&vocab, dim, 2).unwrap();
    Arc::new(Encoder::new(vocab, table))
}

fn perturbed(enc: &Encoder, d_h: usize, d_out: usize, seed: u64) -> ModelParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParameters::init(enc.input_dim(), d_h, d_out, 1.0, &mut rng);
    for (_, _, m) in p.tensors_mut() {
        for v in m.as_mut_slice() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    p
}

fn playing_example() -> CompressionExample {
    CompressionExample {
        id: "playing".into(),
        tree: parse_bracketed(PLAYING_TREE).unwrap(),
        mask: KeepMask::from_bits(&[1, 1, 1, 1, 0, 0, 1]).unwrap(),
        annotator: None,
    }
}

fn objective_grad(
    ex: &CompressionExample,
    enc: &Encoder,
    p: &ModelParameters,
    h: &dyn OutputHead,
    lambda: f64,
) -> (f64, ModelParameters) {
    let x = enc.encode_tree(&ex.tree).unwrap();
    let states = unfold(&ex.tree, &x, p).unwrap();
    let targets = leaf_targets(&ex.tree, &ex.mask, enc, h);
    backward(&ex.tree, &x, &states, &targets, p, h, lambda).unwrap()
}

#[test]
fn l2_enters_gradients_additively() {
    let ex = playing_example();
    let enc = encoder_for(&[&ex.tree], 5);
    for name in ["binary", "vectorial"] {
        let h = head(name);
        let p = perturbed(&enc, 4, h.output_dim(&enc), 3);
        let lambda = 1e-4;
        let (_, g0) = objective_grad(&ex, &enc, &p, &*h, 0.0);
        let (_, g1) = objective_grad(&ex, &enc, &p, &*h, lambda);
        for (((_, kind, w), (_, _, a)), (_, _, b)) in p.tensors().iter().zip(g0.tensors()).zip(g1.tensors()) {
            for ((&w, &a), &b) in w.as_slice().iter().zip(a.as_slice()).zip(b.as_slice()) {
                let expected = if *kind == TensorKind::Weight { 2.0 * lambda * w } else { 0.0 };
                assert!((b - a - expected).abs() < 1e-15, "{name}: {} vs {expected}", b - a);
            }
        }
    }
}

#[test]
fn l2_penalty_examples() {
    let mut p = ModelParameters::zeros(1, 1, 1);
    assert_eq!(l2_penalty(&p, 1e-4), 0.0);
    p.cell_mut().gates[0].w.set(0, 0, 3.0);
    p.cell_mut().gates[0].b.set(0, 0, 50.0);
    assert!((l2_penalty(&p, 1e-4) - 9e-4).abs() < 1e-18);
    assert_eq!(l2_penalty(&p, 0.0), 0.0);

    let enc = encoder_for(&[&parse_bracketed(PLAYING_TREE).unwrap()], 4);
    let p = perturbed(&enc, 3, 1, 4);
    let direct: f64 = p
        .tensors()
        .iter()
        .filter(|(_, k, _)| *k == TensorKind::Weight)
        .flat_map(|(_, _, m)| m.as_slice().iter().map(|v| v * v))
        .sum();
    assert!((l2_penalty(&p, 0.01) - 0.01 * direct).abs() < 1e-15);
}

#[test]
fn gradient_descent_never_increases_the_loss() {
    let ex = playing_example();
    let enc = encoder_for(&[&ex.tree], 6);
    for name in ["binary", "vectorial"] {
        let h = head(name);
        let mut p = perturbed(&enc, 5, h.output_dim(&enc), 11);
        let (mut last, _) = objective_grad(&ex, &enc, &p, &*h, 1e-4);
        for step in 0..50 {
            let (_, g) = objective_grad(&ex, &enc, &p, &*h, 1e-4);
            let mut update = g;
            update.scale(-0.05);
            p.add_assign(&update);
            let (loss, _) = objective_grad(&ex, &enc, &p, &*h, 1e-4);
            assert!(loss <= last, "{name} step {step}: {loss} > {last}");
            last = loss;
        }
    }
}

#[test]
fn perfect_predictions_have_zero_gradient() {
    let ex = playing_example();
    let enc = encoder_for(&[&ex.tree], 4);

    // binary: saturate towards keeping a keep-everything target
    let keep_all = CompressionExample {
        mask: KeepMask::all(7, true),
        ..ex.clone()
    };
    let h = head("binary");
    let mut p = ModelParameters::zeros(enc.input_dim(), 3, 1);
    p.head_mut().b.fill(60.0);
    let (loss, g) = objective_grad(&keep_all, &enc, &p, &*h, 0.0);
    assert!(loss <= 1e-11);
    assert!(g.max_abs() <= 1e-9);

    // vectorial: emit the NULL vector for a delete-everything target
    let delete_all = CompressionExample {
        mask: KeepMask::all(7, false),
        ..ex
    };
    let h = head("vectorial");
    let mut p = ModelParameters::zeros(enc.input_dim(), 3, 4);
    p.head_mut().b.fill(1.0);
    let (loss, g) = objective_grad(&delete_all, &enc, &p, &*h, 0.0);
    assert_eq!(loss, 0.0);
    assert!(g.max_abs() <= 1e-9);
}

#[test]
fn finite_differences_on_small_and_worked_trees() {
    let single = CompressionExample {
        id: "one".into(),
        tree: parse_bracketed("word").unwrap(),
        mask: KeepMask::new(vec![true]),
        annotator: None,
    };
    let playing = playing_example();
    let enc = encoder_for(&[&single.tree, &playing.tree], 4);
    let cases: [(&CompressionExample, &str, usize); 3] =
        [(&single, "binary", 2), (&playing, "binary", 5), (&playing, "vectorial", 5)];
    for (ex, name, d_h) in cases {
        let h = head(name);
        let p = perturbed(&enc, d_h, h.output_dim(&enc), 21);
        let x = enc.encode_tree(&ex.tree).unwrap();
        let targets = leaf_targets(&ex.tree, &ex.mask, &enc, &*h);
        for lambda in [0.0, 1e-4] {
            let (_, analytic) = objective_grad(ex, &enc, &p, &*h, lambda);
            let numeric = numeric_gradient(&ex.tree, &x, &targets, &p, &*h, lambda, 1e-5).unwrap();
            for (tensor, err) in compare(&analytic, &numeric) {
                assert!(err < 1e-4, "{name} {tensor}: {err}");
            }
        }
    }
}

#[test]
fn stale_states_are_rejected() {
    let ex = playing_example();
    let enc = encoder_for(&[&ex.tree], 4);
    let h = head("binary");
    let mut p = perturbed(&enc, 3, 1, 1);
    let x = enc.encode_tree(&ex.tree).unwrap();
    let states = unfold(&ex.tree, &x, &p).unwrap();
    let targets = leaf_targets(&ex.tree, &ex.mask, &enc, &*h);
    assert!(data_gradient(&ex.tree, &x, &states, &targets, &p, &*h).is_ok());
    p.head_mut().b.fill(0.1);
    assert!(matches!(
        data_gradient(&ex.tree, &x, &states, &targets, &p, &*h),
        Err(TrainError::StaleStates)
    ));
    let fresh = unfold(&ex.tree, &x, &p).unwrap();
    assert!(tree_loss(&ex.tree, &fresh, &targets, &p, &*h).unwrap() > 0.0);
}

fn small_setup() -> (Vec<CompressionExample>, Arc<Encoder>) {
    let corpus = rule_corpus(24, 3);
    let trees: Vec<&ParseTree> = corpus.iter().map(|e| &e.tree).collect();
    let enc = encoder_for(&trees, 8);
    (corpus, enc)
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        hidden_size: 8,
        batch_size: 4,
        max_epochs: 40,
        seed: 4,
        ..TrainingConfig::default()
    }
}

#[test]
fn patience_controls_stopping() {
    let (corpus, enc) = small_setup();
    let (tr, val) = corpus.split_at(16);
    for patience in [0, 2] {
        let config = TrainingConfig {
            patience,
            learning_rate: 2e-2,
            ..small_config()
        };
        let model = config.init_model(enc.clone(), head("binary")).unwrap();
        let out = train(model, tr, val, &config).unwrap();
        let ts: Vec<f64> = out.history.iter().map(|r| r.val_t).collect();
        // replay the stopping rule on the recorded validation scores
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0;
        let mut expected_len = ts.len();
        for (i, &t) in ts.iter().enumerate() {
            if t > best {
                best = t;
                stale = 0;
            } else {
                stale += 1;
                if stale > patience {
                    expected_len = i + 1;
                    break;
                }
            }
        }
        assert_eq!(ts.len(), expected_len);
        assert!(ts.len() < config.max_epochs, "patience {patience} never triggered");
        let best_epoch = ts.iter().enumerate().fold(0, |b, (i, &t)| if t > ts[b] { i } else { b }) + 1;
        assert_eq!(out.best_epoch, best_epoch);
        assert_eq!(out.best_report.t, ts[best_epoch - 1]);
    }
}

#[test]
fn best_params_reproduce_best_report() {
    let (corpus, enc) = small_setup();
    let (tr, val) = corpus.split_at(16);
    let config = small_config();
    let model = config.init_model(enc, head("binary")).unwrap();
    let out = train(model, tr, val, &config).unwrap();
    assert_eq!(evaluate(&out.best, val).unwrap(), out.best_report);
}

#[test]
fn validating_on_the_training_set_tracks_training_t() {
    let (corpus, enc) = small_setup();
    let config = TrainingConfig {
        max_epochs: 15,
        ..small_config()
    };
    let out = train(config.init_model(enc.clone(), head("binary")).unwrap(), &corpus, &corpus, &config).unwrap();

    let mut trainer = Trainer::new(config.init_model(enc, head("binary")).unwrap(), &config, &corpus).unwrap();
    let mut train_t = Vec::new();
    for _ in 0..out.history.len() {
        trainer.run_epoch().unwrap();
        train_t.push(evaluate(trainer.model(), &corpus).unwrap().t);
    }
    let best = train_t.iter().enumerate().fold(0, |b, (i, &t)| if t > train_t[b] { i } else { b }) + 1;
    assert_eq!(out.best_epoch, best);
}

#[test]
fn identical_runs_are_identical() {
    let (corpus, enc) = small_setup();
    let (tr, val) = corpus.split_at(16);
    let config = TrainingConfig {
        max_epochs: 5,
        ..small_config()
    };
    let run = || train(config.init_model(enc.clone(), head("vectorial")).unwrap(), tr, val, &config).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.best.params(), b.best.params());
    let bits = |p: &ModelParameters| -> Vec<u64> {
        p.tensors().iter().flat_map(|(_, _, m)| m.as_slice().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(a.best.params()), bits(b.best.params()));
}

#[test]
fn grid_search_ranks_sizes() {
    let (corpus, enc) = small_setup();
    let (tr, val) = corpus.split_at(16);
    let config = TrainingConfig {
        max_epochs: 6,
        ..small_config()
    };
    let report = grid_search("synthetic", enc.clone(), head("binary"), tr, val, &config, &[8, 16]).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].hidden_size, 8);
    assert_eq!(report.rows[1].hidden_size, 16);
    let best_t = report.best_row().outcome.best_report.t;
    assert!(report.rows.iter().all(|r| r.outcome.best_report.t <= best_t));
    let table = report.to_table();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(table.matches(" *").count(), 1);
    assert!(table.lines().next().unwrap().contains("Memory Size"));

    let single = grid_search("synthetic", enc.clone(), head("binary"), tr, val, &config, &[8]).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.best, 0);
    assert!(grid_search("synthetic", enc, head("binary"), tr, val, &config, &[]).is_err());
}

#[test]
fn saturating_on_the_worked_example_recovers_its_mask() {
    let ex = playing_example();
    let enc = encoder_for(&[&ex.tree], 8);
    let config = TrainingConfig {
        hidden_size: 16,
        batch_size: 1,
        learning_rate: 1e-2,
        ..TrainingConfig::default()
    };
    let data = std::slice::from_ref(&ex);
    let mut trainer = Trainer::new(config.init_model(enc, head("binary")).unwrap(), &config, data).unwrap();
    for _ in 0..300 {
        trainer.run_epoch().unwrap();
        if trainer.model().predict_mask(&ex.tree).unwrap() == ex.mask {
            break;
        }
    }
    assert_eq!(trainer.model().predict_mask(&ex.tree).unwrap().to_bits(), [1, 1, 1, 1, 0, 0, 1]);
}

#[test]
fn scoring_reductions() {
    let (corpus, _) = small_setup();
    let perfect: Vec<_> = corpus.iter().map(|e| score_sentence(e, &e.mask).unwrap()).collect();
    let r = aggregate(&perfect);
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.f1, 1.0);
    assert_eq!(r.compression_rate, r.gold_compression_rate);
    assert_eq!(r.leaf_accuracy, 1.0);

    let keep_all: Vec<_> = corpus
        .iter()
        .map(|e| score_sentence(e, &KeepMask::all(e.mask.len(), true)).unwrap())
        .collect();
    let r = aggregate(&keep_all);
    assert_eq!(r.compression_rate, 1.0);
    let expected = corpus
        .iter()
        // an empty gold compression scores 0 against a non-empty hypothesis
        .map(|e| ssa(&e.tree.tokens(), &e.gold_tokens()).unwrap_or(0.0))
        .sum::<f64>()
        / corpus.len() as f64;
    assert!((r.accuracy - expected).abs() < 1e-12);
    assert_eq!(r.t, r.accuracy * r.accuracy / r.compression_rate);
}

#[test]
fn invalid_configs_are_rejected() {
    let (corpus, enc) = small_setup();
    for bad in [
        TrainingConfig { batch_size: 0, ..small_config() },
        TrainingConfig { hidden_size: 0, ..small_config() },
        TrainingConfig { learning_rate: -1.0, ..small_config() },
        TrainingConfig { l2: -1e-4, ..small_config() },
    ] {
        let model = small_config().init_model(enc.clone(), head("binary")).unwrap();
        assert!(Trainer::new(model, &bad, &corpus).is_err());
    }
    let model = small_config().init_model(enc, head("binary")).unwrap();
    assert!(matches!(train(model, &corpus, &[], &small_config()), Err(TrainError::EmptySplit(_))));
}
