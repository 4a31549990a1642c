use drka_core::checkpoint;
use drka_core::models::ModelKind;
use drka_core::optim::OptimizerKind;
use drka_core::retriever::DocSelector;
use drka_core::toy::{train_config, Toy, ToySpec};
use drka_core::trainer::{batch_loss, initialize, joint_step, resume, trace_csv, train, TrainConfig};
use drka_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy() -> Toy {
    ToySpec::default().build().unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        negatives_per_triple: 10,
        ..train_config()
    }
}

fn bytes(c: &drka_core::trainer::Checkpoint) -> Vec<u8> {
    checkpoint::encode(c, &serde_json::Value::Null).unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let t = toy();
    let a = train(&t.kg, &t.corpus, &quick()).unwrap();
    let b = train(&t.kg, &t.corpus, &quick()).unwrap();
    assert_eq!(bytes(&a.best), bytes(&b.best));
    assert_eq!(bytes(&a.last), bytes(&b.last));
    assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));

    let c = train(&t.kg, &t.corpus, &TrainConfig { seed: 1, ..quick() }).unwrap();
    assert_ne!(bytes(&a.last), bytes(&c.last));
}

#[test]
fn resume_after_save_matches_uninterrupted_run() {
    let t = toy();
    let cfg = TrainConfig { epochs: 4, ..quick() };
    let straight = train(&t.kg, &t.corpus, &cfg).unwrap();

    let init = initialize(&t.kg, &t.corpus, &cfg).unwrap();
    let first = resume(&t.kg, &t.corpus, init, 2).unwrap();
    let (reloaded, _) = checkpoint::decode(&bytes(&first.last)).unwrap();
    let second = resume(&t.kg, &t.corpus, reloaded, 4).unwrap();

    assert_eq!(bytes(&second.last), bytes(&straight.last));
    let mut trace = first.trace.clone();
    trace.extend(second.trace);
    assert_eq!(trace_csv(&trace), trace_csv(&straight.trace));
}

#[test]
fn zero_epochs_returns_initial_state() {
    let t = toy();
    let cfg = TrainConfig { epochs: 0, ..quick() };
    let out = train(&t.kg, &t.corpus, &cfg).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.last.epoch, 0);
    assert_eq!(bytes(&out.last), bytes(&initialize(&t.kg, &t.corpus, &cfg).unwrap()));
}

#[test]
fn untouched_rows_stay_bit_identical() {
    let t = toy();
    let cfg = TrainConfig { negatives_per_triple: 2, ..quick() };
    let mut ckpt = initialize(&t.kg, &t.corpus, &cfg).unwrap();
    let before = ckpt.clone();
    let batch = &t.kg.train[..2];
    let (_, grads) = batch_loss(&t.kg, &ckpt.model, &t.corpus, &cfg, batch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    joint_step(&t.kg, &mut ckpt.model, &mut ckpt.optimizer, &t.corpus, &cfg, batch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

    let mo = &ckpt.optimizer.moments;
    let mo0 = &before.optimizer.moments;
    let mut untouched = 0;
    for e in 0..t.kg.num_entities() {
        let same = ckpt.model.state.entities.row(e) == before.model.state.entities.row(e);
        if grads.entities.contains_key(&e) {
            assert!(!same, "entity {e} had a gradient but did not move");
        } else {
            assert!(same, "entity {e} moved without a gradient");
            assert_eq!(mo.entities.0.row(e), mo0.entities.0.row(e));
            assert_eq!(mo.entities.1.row(e), mo0.entities.1.row(e));
            untouched += 1;
        }
    }
    assert!(untouched > 0);
    for r in 0..t.kg.num_relations() {
        if !grads.relations.contains_key(&r) {
            assert_eq!(ckpt.model.state.relations.row(r), before.model.state.relations.row(r));
        }
    }
}

#[test]
fn small_step_decreases_batch_loss() {
    let t = toy();
    for (kind, optimizer) in [(ModelKind::DistMult, OptimizerKind::Adam), (ModelKind::ComplEx, OptimizerKind::Sgd)] {
        let cfg = TrainConfig { model_kind: kind, optimizer, lr: 1e-4, ..quick() };
        let mut ckpt = initialize(&t.kg, &t.corpus, &cfg).unwrap();
        let batch = &t.kg.train[..8];
        let rng = || ChaCha8Rng::seed_from_u64(4);
        let before = joint_step(&t.kg, &mut ckpt.model, &mut ckpt.optimizer, &t.corpus, &cfg, batch, &mut rng()).unwrap();
        let (after, _) = batch_loss(&t.kg, &ckpt.model, &t.corpus, &cfg, batch, &mut rng()).unwrap();
        assert!(after.total < before.total, "{kind}: {} -> {}", before.total, after.total);
    }
}

#[test]
fn alpha_zero_drops_the_retrieval_term() {
    let t = toy();
    let out = train(&t.kg, &t.corpus, &TrainConfig { alpha: 0.0, epochs: 2, ..quick() }).unwrap();
    for r in &out.trace {
        assert_eq!(r.retrieval, 0.0);
        assert_eq!(r.total, r.align);
    }
}

#[test]
fn fixed_sets_only_hold_mentioning_descriptions() {
    let t = toy();
    let cfg = TrainConfig { no_retriever: true, descs_per_entity: 2, alpha: 0.0, ..quick() };
    let ckpt = initialize(&t.kg, &t.corpus, &cfg).unwrap();
    let DocSelector::Fixed(sets) = &ckpt.model.selector else {
        panic!("expected fixed sets");
    };
    for (e, set) in sets.per_entity.iter().enumerate() {
        assert!(set.len() <= 2);
        assert_eq!(set.len(), t.corpus.mentioning(e).len().min(2));
        assert!(set.iter().all(|d| t.corpus.records[*d].mentions.contains(&e)));
    }
    let out = resume(&t.kg, &t.corpus, ckpt, 1).unwrap();
    assert!(out.trace[0].align.is_finite());
}

#[test]
fn overflowing_embeddings_are_a_numerical_error() {
    let t = toy();
    let cfg = quick();
    let mut ckpt = initialize(&t.kg, &t.corpus, &cfg).unwrap();
    let h = t.kg.train[0].head;
    ckpt.model.state.entities.row_mut(h).fill(f64::MAX);
    let err = batch_loss(&t.kg, &ckpt.model, &t.corpus, &cfg, &t.kg.train[..1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { index: 0, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn k_larger_than_corpus_is_rejected() {
    let t = toy();
    let err = initialize(&t.kg, &t.corpus, &TrainConfig { k: 61, ..quick() }).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
