mod common;

use std::collections::HashMap;

use common::synthetic_setup;
use mixedobj::checkpoint::Checkpoint;
use mixedobj::objectives::ObjectiveConfig;
use mixedobj::trainer::{MetricsRecord, TrainConfig, Trainer};

fn config(budget: usize, clip: f64) -> TrainConfig {
    TrainConfig {
        token_budget: budget,
        learning_rate: 0.01,
        max_epochs: 3,
        clip_norm: clip,
        seed: 4,
        objective: ObjectiveConfig {
            epsilon: 0.1,
            ..ObjectiveConfig::default().with_lambdas(1.0, 1.0, 1.0, 1.0)
        },
        ..TrainConfig::default()
    }
}

#[test]
fn batches_clipping_and_coverage() {
    let (model, data, _) = synthetic_setup(1, 30, 25, true);
    let budget = 25;
    let mut t = Trainer::new(model, data.clone(), config(budget, 0.05)).unwrap();
    let mut clipped = 0;
    while !t.is_finished() {
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for batch in t.epoch_plan().to_vec() {
            let tokens: usize = batch.iter().map(|&i| data.labeled[i].len()).sum();
            assert!(tokens <= budget);
            let report = t.step().unwrap();
            assert_eq!(report.labeled, batch);
            let utokens: usize = report.unlabeled.iter().map(|&i| data.unlabeled[i].len()).sum();
            assert!(utokens <= budget);
            assert!(report.post_clip_norm <= 0.05 + 1e-9, "{}", report.post_clip_norm);
            clipped += report.record.clipped as usize;
            for i in batch {
                *seen.entry(i).or_default() += 1;
            }
        }
        assert_eq!(seen.len(), data.labeled.len());
        assert!(seen.values().all(|&c| c == 1));
        t.end_epoch().unwrap();
    }
    assert!(clipped > 0);
}

#[test]
fn runs_are_reproducible() {
    let run = || {
        let (model, data, _) = synthetic_setup(2, 20, 20, true);
        let out = Trainer::new(model, data, config(30, 1.0)).unwrap().run().unwrap();
        let log: Vec<String> = out.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        (log, out.model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    for ((_, x), (_, y)) in ma.named_tensors().into_iter().zip(mb.named_tensors()) {
        assert!(x.bit_eq(y));
    }
}

#[test]
fn resume_from_checkpoint_is_exact() {
    let (model, data, vocab) = synthetic_setup(3, 20, 20, true);
    let cfg = config(30, 1.0);
    let straight = Trainer::new(model.clone(), data.clone(), cfg.clone()).unwrap().run().unwrap();

    let mut first = Trainer::new(model, data.clone(), cfg.clone()).unwrap();
    first.step().unwrap();
    first.step().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.json");
    first.checkpoint(&vocab.hash(), serde_json::Value::Null).save(&path).unwrap();
    let done: Vec<MetricsRecord> = first.records().to_vec();

    let ck = Checkpoint::<f64>::load(&path).unwrap();
    let model = ck.restore_model(Some(&vocab.hash())).unwrap();
    let resumed = Trainer::resume(model, ck.optimizer.unwrap(), ck.progress.unwrap(), data, cfg)
        .unwrap()
        .run()
        .unwrap();
    let mut joined = done;
    joined.extend(resumed.records);
    assert_eq!(joined, straight.records);
    for ((_, x), (_, y)) in resumed.model.named_tensors().into_iter().zip(straight.model.named_tensors()) {
        assert!(x.bit_eq(y));
    }
}

#[test]
fn embedding_hash_tracks_mode() {
    for finetune in [false, true] {
        let (model, data, _) = synthetic_setup(5, 20, 0, finetune);
        let before = model.embedding.hash();
        let mut cfg = config(30, 1.0);
        cfg.objective = ObjectiveConfig::default();
        cfg.max_epochs = 2;
        let out = Trainer::new(model, data, cfg).unwrap().run().unwrap();
        assert_eq!(out.model.embedding.hash() == before, !finetune);
    }
}

#[test]
fn oversized_document_is_rejected() {
    let (model, data, _) = synthetic_setup(6, 10, 0, true);
    let longest = data.labeled.iter().map(Vec::len).max().unwrap();
    let mut cfg = config(longest - 1, 1.0);
    cfg.objective = ObjectiveConfig::default();
    let err = Trainer::new(model, data, cfg).err().unwrap();
    assert!(err.to_string().contains("token budget"), "{err}");
}
