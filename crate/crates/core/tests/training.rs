use cnm_core::check::tiny_model_config;
use cnm_core::config::{FusionStrategy, ModelConfig};
use cnm_core::controller::GumbelNoise;
use cnm_core::corpus::{generate_corpus, Corpus, CorpusSpec, Split, BOS, EOS};
use cnm_core::eval::teacher_forced_stats;
use cnm_core::model::CnmModel;
use cnm_core::tensor::init::gaussian;
use cnm_core::tensor::optim::{adam_update, AdamConfig, AdamState};
use cnm_core::tensor::rng::Rng;
use cnm_core::tensor::Graph;
use cnm_core::train::{
    encode_tensors, load_checkpoint, save_checkpoint, scst_advantage, scst_loss, sidecar_path, teacher_forced, train,
    TrainConfig, Trainer,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn small_corpus() -> Corpus {
    generate_corpus(&CorpusSpec {
        n_scenes: 40,
        d_r: 16,
        ..CorpusSpec::default()
    })
    .unwrap()
}

fn small_model(corpus: &Corpus) -> ModelConfig {
    ModelConfig {
        d_r: 16,
        d_v: 8,
        d_c: 8,
        d_a: 8,
        heads: 2,
        units: 2,
        ..ModelConfig::desk(corpus.vocab.len())
    }
}

fn short_schedule() -> TrainConfig {
    TrainConfig {
        xe_epochs: 1,
        rl_epochs: 1,
        batch_size: 8,
        max_len: 10,
        ..TrainConfig::desk()
    }
}

fn file_bytes(p: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    (std::fs::read(p).unwrap(), std::fs::read(sidecar_path(p)).unwrap())
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let corpus = small_corpus();
    let cfg = TrainConfig {
        xe_epochs: 0,
        rl_epochs: 0,
        ..short_schedule()
    };
    let ckpt = train(small_model(&corpus), cfg.clone(), &corpus, None).unwrap();
    let fresh = Trainer::new(small_model(&corpus), cfg, &corpus).unwrap();
    assert_eq!(ckpt.meta.epoch, 0);
    assert_eq!(ckpt.meta.step, 0);
    assert!(ckpt.meta.history.is_empty());
    for (name, t) in &ckpt.tensors {
        if name.starts_with("adam.") {
            assert!(t.data().iter().all(|&x| x == 0.0));
        } else {
            assert_eq!(t, fresh.model.params.get(fresh.model.params.id(name).unwrap()));
        }
    }
}

#[test]
fn same_seed_gives_bit_identical_checkpoints() {
    let corpus = small_corpus();
    let a = train(small_model(&corpus), short_schedule(), &corpus, None).unwrap();
    let b = train(small_model(&corpus), short_schedule(), &corpus, None).unwrap();
    assert_eq!(encode_tensors(&a.tensors), encode_tensors(&b.tensors));
    assert_eq!(serde_json::to_string(&a.meta).unwrap(), serde_json::to_string(&b.meta).unwrap());
    let c = train(small_model(&corpus), TrainConfig { seed: 2, ..short_schedule() }, &corpus, None).unwrap();
    assert_ne!(encode_tensors(&a.tensors), encode_tensors(&c.tensors));
}

#[test]
fn checkpoint_round_trip_and_resume_match_uninterrupted_training() {
    let corpus = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    let full = train(small_model(&corpus), short_schedule(), &corpus, None).unwrap();

    let mut t = Trainer::new(small_model(&corpus), short_schedule(), &corpus).unwrap();
    t.run_epoch().unwrap();
    let mid = t.checkpoint();
    let p1 = dir.path().join("mid.cnmt");
    save_checkpoint(&mid, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    let p2 = dir.path().join("again.cnmt");
    save_checkpoint(&loaded, &p2).unwrap();
    assert_eq!(file_bytes(&p1), file_bytes(&p2));

    let resumed = train(small_model(&corpus), short_schedule(), &corpus, Some(&loaded)).unwrap();
    assert_eq!(encode_tensors(&resumed.tensors), encode_tensors(&full.tensors));
    assert_eq!(serde_json::to_value(&resumed.meta).unwrap(), serde_json::to_value(&full.meta).unwrap());
}

#[test]
fn resuming_against_another_corpus_is_rejected() {
    let corpus = small_corpus();
    let ckpt = Trainer::new(small_model(&corpus), short_schedule(), &corpus).unwrap().checkpoint();
    let other = generate_corpus(&CorpusSpec {
        n_scenes: 40,
        d_r: 16,
        seed: 8,
        ..CorpusSpec::default()
    })
    .unwrap();
    assert!(matches!(Trainer::from_checkpoint(&ckpt, &other), Err(cnm_core::CnmError::Data(_))));
}

#[test]
fn xe_training_cuts_train_loss_at_least_five_fold() {
    let corpus = generate_corpus(&CorpusSpec {
        n_scenes: 100,
        ..CorpusSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        xe_epochs: 6,
        rl_epochs: 0,
        ..TrainConfig::desk()
    };
    let mut t = Trainer::new(ModelConfig::desk(corpus.vocab.len()), cfg, &corpus).unwrap();
    let subset: Vec<_> = corpus.examples_in(Split::Train).take(100).collect();
    let before = teacher_forced_stats(&t.model, &subset, t.features()).unwrap().xe_per_token;
    while !t.is_done() {
        t.run_epoch().unwrap();
    }
    let after = teacher_forced_stats(&t.model, &subset, t.features()).unwrap().xe_per_token;
    assert!(before >= 5.0 * after, "before {before}, after {after}");
}

/// One policy-gradient step on a tiny f64 model; returns Σ log P of the
/// sampled tokens before and after, and the gradient norm.
fn scst_probe(advantage: f64, lr: f64) -> (f64, f64, f64) {
    let mut model = CnmModel::<f64>::new(tiny_model_config(FusionStrategy::Soft, 2), 5).unwrap();
    let mut rng = Rng::new(11);
    let r_o = gaussian::<f64>(&mut rng, &[3, 4], 1.0);
    let r_a = gaussian::<f64>(&mut rng, &[3, 4], 1.0);
    let tokens = [BOS, 4, 5, EOS];
    let sum_lp = |m: &CnmModel<f64>| {
        let mut g = Graph::new(&m.params);
        let enc = m.encode(&mut g, &r_o, &r_a).unwrap();
        let tf = teacher_forced(&mut g, m, &enc, &tokens, None, &mut GumbelNoise::Pinned).unwrap();
        -g.value(tf.xe).item()
    };
    let before = sum_lp(&model);
    let grads: Vec<Vec<f64>> = {
        let mut g = Graph::new(&model.params);
        let enc = model.encode(&mut g, &r_o, &r_a).unwrap();
        let tf = teacher_forced(&mut g, &model, &enc, &tokens, None, &mut GumbelNoise::Pinned).unwrap();
        let lp = g.neg(tf.xe);
        let loss = scst_loss(&mut g, lp, advantage);
        let gr = g.backward(loss).unwrap();
        model.params.ids().map(|id| gr.param(id).map_or(vec![0.0; model.params.get(id).len()], <[f64]>::to_vec)).collect()
    };
    let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for id in model.params.ids().collect::<Vec<_>>() {
        let mut st = AdamState::new(model.params.get(id).shape());
        let name = model.params.name(id).to_string();
        adam_update(&name, model.params.get_mut(id), &grads[id.0], &mut st, lr, &AdamConfig::default()).unwrap();
    }
    (before, sum_lp(&model), norm)
}

#[test]
fn positive_advantage_raises_sampled_log_probability() {
    let adv = scst_advantage(0.8, 0.5);
    assert!((adv - 0.3).abs() < 1e-15);
    let (before, after, norm) = scst_probe(adv, 1e-3);
    assert!(norm > 0.0);
    assert!(after > before, "{before} -> {after}");
    let (before, after, _) = scst_probe(-adv, 1e-3);
    assert!(after < before);
}

#[test]
fn zero_advantage_gives_an_exactly_zero_gradient() {
    let (before, after, norm) = scst_probe(scst_advantage(0.7, 0.7), 1e-3);
    assert_eq!(norm, 0.0);
    assert_eq!(before, after);
}

proptest! {
    #![proptest_config(Config { cases: 32, rng_seed: RngSeed::Fixed(0x5eed_0004), failure_persistence: None, ..Config::default() })]

    #[test]
    fn reward_shift_leaves_the_gradient_unchanged(rs in 0.0f64..5.0, rg in 0.0f64..5.0, c in -100.0f64..100.0) {
        let a = scst_advantage(rs, rg);
        let b = scst_advantage(rs + c, rg + c);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + c.abs()));
        // The loss is linear in the advantage, so gradients scale with it.
        let (_, _, na) = scst_probe(a, 1e-3);
        let (_, _, nb) = scst_probe(b, 1e-3);
        prop_assert!((na - nb).abs() <= 1e-9 * (1.0 + na));
    }
}
