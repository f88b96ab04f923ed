//! Shared generators and naive reference implementations for the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use reid_core::evaluator::{self, EvalReport};
use reid_core::mining::{self, MiningStrategy, PkConfig, Triplet};
use reid_core::model::{Condition, EmbeddingRecord, EmbeddingSet, Split};
use reid_core::synthetic::{make_splits, SyntheticConfig};
use reid_core::trainer::{self, LinearHead, TrainConfig};
use reid_core::RngStream;

/// Random set with `n` records, `ids` identities and dimension `dim`.
/// Coordinates sit on a coarse grid and some records copy an earlier vector,
/// so distance ties are common.
pub fn random_set(rng: &mut RngStream, n: usize, ids: usize, dim: usize) -> EmbeddingSet {
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.below(8) == 0 {
            let src = rng.below(i as u64) as usize;
            vectors.push(vectors[src].clone());
        } else {
            vectors.push((0..dim).map(|_| (rng.below(7) as f32 - 3.0) * 0.5).collect());
        }
    }
    // Shuffled record ids so that tie order is not row order.
    let mut record_ids: Vec<u64> = (0..n as u64).map(|i| 1000 + 3 * i).collect();
    rng.shuffle_in_place(&mut record_ids);
    let records = vectors
        .into_iter()
        .enumerate()
        .map(|(i, vector)| {
            let ident = if i < ids { i } else { rng.below(ids as u64) as usize };
            EmbeddingRecord {
                record_id: record_ids[i],
                fish_id: format!("fish{ident}"),
                species: format!("sp{}", ident % 3),
                condition: Condition::ALL[rng.below(4) as usize],
                split: Split::Test,
                vector,
            }
        })
        .collect();
    EmbeddingSet::new(dim, records).expect("generated set is valid")
}

fn naive_normalize(v: &[f32]) -> Vec<f64> {
    let mut sq = 0.0f64;
    for &a in v {
        sq += a as f64 * a as f64;
    }
    let norm = sq.sqrt();
    v.iter().map(|&a| a as f64 / (norm + 1e-12)).collect()
}

fn naive_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

/// Query per identity: ids sorted, instances sorted by record_id, index
/// `next() % count`.
pub fn naive_queries(set: &EmbeddingSet, seed: u64) -> Vec<usize> {
    let recs = set.records();
    let ids: BTreeSet<&str> = recs.iter().map(|r| r.fish_id.as_str()).collect();
    let mut rng = RngStream::new(seed);
    let mut queries = Vec::new();
    for id in ids {
        let mut members: Vec<usize> = (0..recs.len()).filter(|&i| recs[i].fish_id == id).collect();
        if members.len() < 2 {
            continue;
        }
        members.sort_by_key(|&i| recs[i].record_id);
        queries.push(members[(rng.next() % members.len() as u64) as usize]);
    }
    queries
}

pub struct OracleQuery {
    pub record_id: u64,
    pub relevance: Vec<bool>,
    pub precisions: Vec<f64>,
    pub ap: f64,
}

pub struct OracleReport {
    pub r1: f64,
    pub map: f64,
    pub queries: Vec<OracleQuery>,
}

/// Reference metrics straight from the definitions: full ranking by
/// (distance, record_id) by selection, precision at every rank, AP summed
/// over the first k ranks divided by the full relevant count.
pub fn naive_evaluate(set: &EmbeddingSet, seed: u64, k: usize) -> OracleReport {
    let recs = set.records();
    let vecs: Vec<Vec<f64>> = recs.iter().map(|r| naive_normalize(&r.vector)).collect();
    let queries = naive_queries(set, seed);
    let mut out = Vec::new();
    for &q in &queries {
        let mut remaining: Vec<usize> = (0..recs.len()).filter(|&g| !queries.contains(&g)).collect();
        let mut ranked = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for c in 1..remaining.len() {
                let (dc, db) = (
                    naive_distance(&vecs[q], &vecs[remaining[c]]),
                    naive_distance(&vecs[q], &vecs[remaining[best]]),
                );
                if dc < db || (dc == db && recs[remaining[c]].record_id < recs[remaining[best]].record_id) {
                    best = c;
                }
            }
            ranked.push(remaining.remove(best));
        }
        let relevance: Vec<bool> = ranked.iter().map(|&g| recs[g].fish_id == recs[q].fish_id).collect();
        let total_relevant = relevance.iter().filter(|&&r| r).count();
        if total_relevant == 0 {
            continue;
        }
        let mut precisions = Vec::new();
        for i in 1..=relevance.len() {
            let mut hits = 0;
            for &r in &relevance[..i] {
                if r {
                    hits += 1;
                }
            }
            precisions.push(hits as f64 / i as f64);
        }
        let mut ap = 0.0;
        for i in 0..k.min(relevance.len()) {
            if relevance[i] {
                ap += precisions[i];
            }
        }
        ap /= total_relevant as f64;
        out.push(OracleQuery {
            record_id: recs[q].record_id,
            relevance,
            precisions,
            ap,
        });
    }
    let n = out.len() as f64;
    OracleReport {
        r1: 100.0 * out.iter().filter(|q| q.relevance[0]).count() as f64 / n,
        map: 100.0 * out.iter().map(|q| q.ap).sum::<f64>() / n,
        queries: out,
    }
}

/// Compares the toolkit against the oracle on one random gallery; returns
/// the largest absolute metric difference, or a description of a mismatch.
pub fn metric_oracle_case(rng: &mut RngStream) -> Result<f64, String> {
    let n = 2 + rng.below(199) as usize;
    let ids = 1 + rng.below((n / 2).max(1) as u64) as usize;
    let dim = 1 + rng.below(16) as usize;
    let set = random_set(rng, n, ids, dim);
    let seed = rng.next();
    let k = 1 + rng.below(n as u64 + 5) as usize;
    let oracle = naive_evaluate(&set, seed, k);
    let report = match evaluator::evaluate(&set, seed, k) {
        Ok(r) => r,
        Err(e) if oracle.queries.is_empty() => {
            return match e {
                reid_core::ReidError::NoValidQueries => Ok(0.0),
                other => Err(format!("unexpected error {other}")),
            }
        }
        Err(e) => return Err(format!("evaluate failed: {e}")),
    };
    compare_report(&set, seed, &report, &oracle)
}

fn compare_report(set: &EmbeddingSet, seed: u64, report: &EvalReport, oracle: &OracleReport) -> Result<f64, String> {
    if report.per_query.len() != oracle.queries.len() {
        return Err(format!(
            "query count {} vs oracle {}",
            report.per_query.len(),
            oracle.queries.len()
        ));
    }
    let mut worst = (report.r1 - oracle.r1).abs().max((report.map_at_k - oracle.map).abs());
    let split = evaluator::build_query_gallery(set, seed).map_err(|e| e.to_string())?;
    let gallery_vecs: Vec<Vec<f64>> = split
        .gallery
        .iter()
        .map(|&g| set.records()[g].vector.iter().map(|&a| a as f64).collect())
        .collect();
    let gallery_ids: Vec<u64> = split.gallery.iter().map(|&g| set.records()[g].record_id).collect();
    for (got, want) in report.per_query.iter().zip(&oracle.queries) {
        if got.query_record_id != want.record_id {
            return Err(format!("query {} vs oracle {}", got.query_record_id, want.record_id));
        }
        if got.hit != want.relevance[0] {
            return Err(format!("hit mismatch for query {}", want.record_id));
        }
        worst = worst.max((got.ap - want.ap).abs());

        // Ranking and precision through the lower-level API.
        let q = set.records().iter().find(|r| r.record_id == want.record_id).unwrap();
        let qv: Vec<f64> = q.vector.iter().map(|&a| a as f64).collect();
        let ranked = evaluator::rank(&qv, &gallery_vecs, &gallery_ids).map_err(|e| e.to_string())?;
        let relevance: Vec<bool> = ranked
            .iter()
            .map(|&(g, _)| set.records()[split.gallery[g]].fish_id == q.fish_id)
            .collect();
        if relevance != want.relevance {
            return Err(format!("ranking mismatch for query {}", want.record_id));
        }
        for (i, p) in want.precisions.iter().enumerate() {
            let got = evaluator::precision_at(&relevance, i + 1).map_err(|e| e.to_string())?;
            worst = worst.max((got - p).abs());
        }
    }
    Ok(worst)
}

/// Random labelled batch on a coarse grid (ties likely) and its distances.
pub fn random_batch(rng: &mut RngStream) -> (mining::DistanceMatrix, Vec<usize>) {
    let n = 1 + rng.below(64) as usize;
    let classes = 1 + rng.below(8) as usize;
    let dim = 1 + rng.below(4) as usize;
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.below(5) as f64 * 0.25).collect())
        .collect();
    let labels = (0..n).map(|_| rng.below(classes as u64) as usize).collect();
    (mining::pairwise_euclidean(&points), labels)
}

pub fn naive_mine(d: &mining::DistanceMatrix, labels: &[usize], margin: f64, strategy: MiningStrategy) -> Vec<Triplet> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            for q in 0..n {
                if a == p || labels[a] != labels[p] || labels[a] == labels[q] {
                    continue;
                }
                let (dap, dan) = (d.get(a, p), d.get(a, q));
                let keep = match strategy {
                    MiningStrategy::Hard => dan < dap,
                    MiningStrategy::Semihard => dap < dan && dan < dap + margin,
                };
                if keep {
                    out.push(Triplet::new(a, p, q));
                }
            }
        }
    }
    out
}

/// Experiment setup shared by the end-to-end criteria: 50 training ids, 20
/// validation ids, 50 test ids, 20 instances each, 512-D features.
pub fn synthetic_config(seed: u64, mining: MiningStrategy) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs: 200,
        embed_dim: 64,
        margin: 0.5,
        pk: PkConfig::new(4, 4).unwrap(),
        seed,
        mining,
        ..Default::default()
    }
}

pub struct SyntheticOutcome {
    pub raw: EvalReport,
    pub trained: EvalReport,
    pub head: LinearHead,
    pub first_val: f64,
    pub last_val: f64,
}

pub fn run_synthetic(cfg: SyntheticConfig, seed: u64, mining: MiningStrategy) -> SyntheticOutcome {
    let splits = make_splits(cfg, seed, 50, 20, 50, 20).unwrap();
    let raw = evaluator::evaluate(&splits.test, seed, evaluator::DEFAULT_K).unwrap();
    let tc = synthetic_config(seed, mining);
    let (head, hist) = trainer::train(&splits.train, &splits.val, &tc).unwrap();
    let trained = evaluator::evaluate(&head.embed_set(&splits.test).unwrap(), seed, evaluator::DEFAULT_K).unwrap();
    SyntheticOutcome {
        raw,
        trained,
        head,
        first_val: hist.epochs.first().unwrap().val_loss,
        last_val: hist.epochs.last().unwrap().val_loss,
    }
}

/// Random loss configuration for the finite-difference check, or `None`
/// when a hinge sits within `kink` of zero (where the loss is not
/// differentiable) or nothing is active.
pub struct GradCase {
    pub head: LinearHead,
    pub x: Vec<Vec<f64>>,
    pub triplets: Vec<Triplet>,
    pub margin: f64,
}

pub fn random_grad_case(rng: &mut RngStream, kink: f64) -> Option<GradCase> {
    let d_in = 1 + rng.below(32) as usize;
    // A single output normalizes to a constant +-1, so the loss is flat there.
    let d_out = 2 + rng.below(15) as usize;
    let n = 3 + rng.below(10) as usize;
    let mut head = LinearHead::init(d_in, d_out, rng);
    for b in head.bias.iter_mut() {
        *b = rng.uniform_range(-0.3, 0.3);
    }
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d_in).map(|_| rng.normal()).collect()).collect();
    let margin = rng.uniform_range(0.1, 1.5);
    let count = 1 + rng.below(12) as usize;
    let mut triplets = Vec::new();
    for _ in 0..count {
        let a = rng.below(n as u64) as usize;
        let mut p = rng.below(n as u64) as usize;
        let mut q = rng.below(n as u64) as usize;
        if p == a {
            p = (a + 1) % n;
        }
        while q == a || q == p {
            q = (q + 1) % n;
        }
        triplets.push(Triplet::new(a, p, q));
    }
    let y = head.forward(&x).ok()?;
    let mut active = 0;
    for t in &triplets {
        let h = mining::euclidean(&y[t.anchor], &y[t.positive]) - mining::euclidean(&y[t.anchor], &y[t.negative]) + margin;
        if h.abs() < kink {
            return None;
        }
        active += (h > 0.0) as usize;
    }
    if active == 0 {
        return None;
    }
    Some(GradCase {
        head,
        x,
        triplets,
        margin,
    })
}

/// `|analytic - fd| / max(|analytic|, |fd|)` over all parameters, with
/// central differences of step `h`.
pub fn gradient_relative_error(case: &GradCase, h: f64) -> f64 {
    let loss = |head: &LinearHead| trainer::loss_backward(head, &case.x, &case.triplets, case.margin).unwrap().loss;
    let analytic = trainer::loss_backward(&case.head, &case.x, &case.triplets, case.margin).unwrap();
    let mut fd_w = vec![0.0; case.head.weight.len()];
    let mut fd_b = vec![0.0; case.head.bias.len()];
    let mut probe = case.head.clone();
    for i in 0..fd_w.len() {
        let orig = probe.weight[i];
        probe.weight[i] = orig + h;
        let up = loss(&probe);
        probe.weight[i] = orig - h;
        let down = loss(&probe);
        probe.weight[i] = orig;
        fd_w[i] = (up - down) / (2.0 * h);
    }
    for i in 0..fd_b.len() {
        let orig = probe.bias[i];
        probe.bias[i] = orig + h;
        let up = loss(&probe);
        probe.bias[i] = orig - h;
        let down = loss(&probe);
        probe.bias[i] = orig;
        fd_b[i] = (up - down) / (2.0 * h);
    }
    let a: Vec<f64> = analytic.grads.weight.iter().chain(&analytic.grads.bias).copied().collect();
    let f: Vec<f64> = fd_w.iter().chain(&fd_b).copied().collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(&f).map(|(x, y)| x - y).collect();
    let scale = norm(&a).max(norm(&f));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
