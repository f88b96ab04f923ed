//! Trains a head on synthetic identities and prints raw vs trained metrics.
//!
//! cargo run --release -p reid-core --example synthetic_run -- [seed] [lr] [epochs] [mining] [nuisance_sigma] [instance_sigma]

use std::time::Instant;

use reid_core::evaluator::{evaluate, DEFAULT_K};
use reid_core::mining::{MiningStrategy, PkConfig};
use reid_core::synthetic::{make_splits, SyntheticConfig};
use reid_core::trainer::{train, TrainConfig};

fn main() -> reid_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(1e-3, |s| s.parse().unwrap());
    let epochs: usize = args.get(3).map_or(200, |s| s.parse().unwrap());
    let mining: MiningStrategy = args.get(4).map_or(Ok(MiningStrategy::Hard), |s| s.parse())?;
    let nuisance: f64 = args.get(5).map_or(1.2, |s| s.parse().unwrap());
    let instance: f64 = args.get(6).map_or(0.15, |s| s.parse().unwrap());
    let cfg = SyntheticConfig {
        nuisance_sigma: nuisance,
        instance_sigma: instance,
        ..Default::default()
    };
    let splits = make_splits(cfg, seed, 50, 20, 50, 20)?;
    let raw = evaluate(&splits.test, seed, DEFAULT_K)?;
    println!("raw: R1 {:.2} mAP@k {:.2}", raw.r1, raw.map_at_k);

    let tc = TrainConfig {
        learning_rate: lr,
        epochs,
        embed_dim: 64,
        pk: PkConfig::new(4, 4)?,
        seed,
        mining,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (head, hist) = train(&splits.train, &splits.val, &tc)?;
    let first = hist.epochs.first().unwrap();
    let last = hist.epochs.last().unwrap();
    println!(
        "train {:.1}s: val loss {:.4} -> {:.4}, lr {:.2e}",
        t0.elapsed().as_secs_f64(),
        first.val_loss,
        last.val_loss,
        last.lr
    );
    let report = evaluate(&head.embed_set(&splits.test)?, seed, DEFAULT_K)?;
    println!("trained: R1 {:.2} mAP@k {:.2}", report.r1, report.map_at_k);
    Ok(())
}
