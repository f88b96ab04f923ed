use reid_core::evaluator::{self, DEFAULT_K};
use reid_core::mining::{MiningStrategy, PkConfig};
use reid_core::synthetic::{make_splits, SyntheticConfig};
use reid_core::trainer::{self, LinearHead, TrainConfig};
use reid_core::RngStream;

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs,
        embed_dim: 16,
        pk: PkConfig::new(4, 4).unwrap(),
        seed: 3,
        mining: MiningStrategy::Hard,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_initial_head() {
    let s = make_splits(SyntheticConfig::separable(), 1, 8, 4, 4, 4).unwrap();
    let cfg = small_config(0);
    let (head, hist) = trainer::train(&s.train, &s.val, &cfg).unwrap();
    let init = LinearHead::init(512, 16, &mut RngStream::new(3));
    assert_eq!(head, init);
    assert!(hist.epochs.is_empty());
}

#[test]
fn training_is_deterministic_and_reduces_val_loss() {
    let s = make_splits(SyntheticConfig::separable(), 2, 20, 8, 20, 8).unwrap();
    let cfg = small_config(30);
    let (a, ha) = trainer::train(&s.train, &s.val, &cfg).unwrap();
    let (b, hb) = trainer::train(&s.train, &s.val, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha.to_csv(), hb.to_csv());
    let first = ha.epochs.first().unwrap().val_loss;
    let last = ha.epochs.last().unwrap().val_loss;
    assert!(last < first, "{first} -> {last}");

    let raw = evaluator::evaluate(&s.test, 0, DEFAULT_K).unwrap();
    let trained = evaluator::evaluate(&a.embed_set(&s.test).unwrap(), 0, DEFAULT_K).unwrap();
    assert!(trained.map_at_k > raw.map_at_k, "{} vs {}", trained.map_at_k, raw.map_at_k);
}

#[test]
fn rejects_too_few_identities() {
    let s = make_splits(SyntheticConfig::separable(), 1, 3, 4, 4, 4).unwrap();
    assert!(trainer::train(&s.train, &s.val, &small_config(1)).is_err());
}

#[test]
fn history_csv_shape() {
    let s = make_splits(SyntheticConfig::separable(), 1, 8, 4, 4, 4).unwrap();
    let (_, hist) = trainer::train(&s.train, &s.val, &small_config(3)).unwrap();
    let csv = hist.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,lr,active_triplets");
    assert_eq!(lines.len(), 4);
}
