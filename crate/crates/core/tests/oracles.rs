//! Quick versions of the oracle comparisons; the acceptance target runs the
//! full-size suites.

mod common;

use reid_core::evaluator;
use reid_core::mining::{self, MiningStrategy};
use reid_core::RngStream;

#[test]
fn metrics_match_naive_reference() {
    let mut rng = RngStream::new(11);
    for _ in 0..100 {
        let worst = common::metric_oracle_case(&mut rng).unwrap();
        assert!(worst <= 1e-12, "{worst}");
    }
}

#[test]
fn miners_match_exhaustive_enumeration() {
    let mut rng = RngStream::new(12);
    for _ in 0..100 {
        let (d, labels) = common::random_batch(&mut rng);
        let margin = rng.uniform_range(0.0, 1.0);
        for s in [MiningStrategy::Hard, MiningStrategy::Semihard] {
            assert_eq!(mining::mine(s, &d, &labels, margin), common::naive_mine(&d, &labels, margin, s));
        }
    }
}

#[test]
fn pairwise_matches_direct_distance() {
    let mut rng = RngStream::new(13);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..7).map(|_| rng.normal()).collect()).collect();
    let d = mining::pairwise_euclidean(&rows);
    for i in 0..rows.len() {
        assert_eq!(d.get(i, i), 0.0);
        for j in 0..rows.len() {
            let direct: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!((d.get(i, j) - direct).abs() < 1e-12);
            assert_eq!(d.get(i, j), d.get(j, i));
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = RngStream::new(14);
    let mut done = 0;
    while done < 20 {
        if let Some(case) = common::random_grad_case(&mut rng, 1e-3) {
            assert!(common::gradient_relative_error(&case, 1e-6) < 1e-4);
            done += 1;
        }
    }
}

#[test]
fn truncated_ap_uses_full_relevant_count() {
    let ap = evaluator::average_precision(&[true, false], 3).unwrap();
    assert!((ap - 1.0 / 3.0).abs() < 1e-15);
    assert!((evaluator::average_precision(&[true, false, true], 2).unwrap() - 5.0 / 6.0).abs() < 1e-12);
}
