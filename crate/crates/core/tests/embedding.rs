mod common;

use proptest::prelude::*;
use sysforecast::embedding::{train_skipgram, EmbeddingTable, SgnsConfig};
use sysforecast::synth::SynthConfig;
use sysforecast::window::corpus;

fn synthetic_corpus(seed: u64, n_windows: usize) -> Vec<Vec<String>> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        seed,
        n_windows,
        ..SynthConfig::default()
    };
    let (_, windows) = common::synthetic_windows(&cfg, dir.path());
    corpus(&windows)
}

#[test]
fn training_loss_decreases() {
    for seed in [1, 2, 3] {
        let sentences = synthetic_corpus(seed, 300);
        let trained = train_skipgram(
            &sentences,
            &SgnsConfig {
                seed,
                ..SgnsConfig::default()
            },
        )
        .unwrap();
        let loss = &trained.epoch_loss;
        assert_eq!(loss.len(), 5);
        assert!(loss.iter().all(|l| l.is_finite()));
        assert!(loss.last() < loss.first(), "seed {seed}: {loss:?}");
    }
}

#[test]
fn phase_structure_is_recovered() {
    let sentences = synthetic_corpus(1, 500);
    let table = train_skipgram(
        &sentences,
        &SgnsConfig {
            seed: 1,
            ..SgnsConfig::default()
        },
    )
    .unwrap()
    .table;
    assert!(table.cosine("read", "write") > table.cosine("read", "mmap"));
    assert!(table.cosine("brk", "futex") > table.cosine("brk", "poll"));
}

#[test]
fn training_is_deterministic() {
    let sentences = synthetic_corpus(4, 200);
    let cfg = SgnsConfig {
        seed: 9,
        epochs: 2,
        ..SgnsConfig::default()
    };
    let a = train_skipgram(&sentences, &cfg).unwrap();
    let b = train_skipgram(&sentences, &cfg).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.epoch_loss, b.epoch_loss);
}

#[test]
fn table_json_round_trip_is_exact() {
    let sentences = synthetic_corpus(5, 100);
    let table = train_skipgram(
        &sentences,
        &SgnsConfig {
            epochs: 1,
            ..SgnsConfig::default()
        },
    )
    .unwrap()
    .table;
    let mut buf = Vec::new();
    table.write_json(&mut buf).unwrap();
    let back = EmbeddingTable::read_json(buf.as_slice()).unwrap();
    assert_eq!(back.names(), table.names());
    assert_eq!(back.dim(), table.dim());
    for id in 0..table.len() {
        assert_eq!(back.vector(id), table.vector(id));
    }
}

fn small_table() -> EmbeddingTable {
    let names = ["<unk>", "read", "write", "mmap", "brk"]
        .map(String::from)
        .to_vec();
    let rows = (0..5)
        .map(|k| {
            (0..4)
                .map(|j| ((k * 7 + j * 3) % 11) as f64 / 5.0 - 1.0)
                .collect()
        })
        .collect();
    EmbeddingTable::from_rows(names, rows).unwrap()
}

proptest! {
    #[test]
    fn window_embedding_ignores_order(
        names in prop::collection::vec(prop::sample::select(vec!["read", "write", "mmap", "brk", "nope"]), 0..30),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let table = small_table();
        let mut shuffled = names.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = table.embed_window(&names);
        let b = table.embed_window(&shuffled);
        prop_assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        if names.is_empty() {
            prop_assert!(a.iter().all(|&v| v == 0.0));
        }
    }
}
