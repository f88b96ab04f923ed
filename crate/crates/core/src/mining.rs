//! Distance kernels, identity-balanced PK batches, and triplet miners.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::rng::RngStream;

/// Identities per batch (`p`) and instances per identity (`k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkConfig {
    pub p: usize,
    pub k: usize,
}

impl PkConfig {
    pub fn new(p: usize, k: usize) -> Result<Self> {
        let cfg = Self { p, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(ReidError::InvalidConfig(format!(
                "P and K must both be >= 2 (P={}, K={})",
                self.p, self.k
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self {
            anchor,
            positive,
            negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiningStrategy {
    Hard,
    Semihard,
}

impl std::str::FromStr for MiningStrategy {
    type Err = ReidError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hard" => Ok(MiningStrategy::Hard),
            "semihard" => Ok(MiningStrategy::Semihard),
            _ => Err(ReidError::InvalidConfig(format!("unknown mining strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MiningStrategy::Hard => "hard",
            MiningStrategy::Semihard => "semihard",
        })
    }
}

/// Symmetric `n x n` distances, zero diagonal, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Builds from explicit values; used by tests and callers that already
    /// hold distances.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(ReidError::DimMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Self { n, data })
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .max(0.0)
        .sqrt()
}

/// All-pairs Euclidean distances, parallel over row blocks. Only the upper
/// triangle is computed; the lower one is mirrored so symmetry is exact.
pub fn pairwise_euclidean<R: AsRef<[f64]> + Sync>(rows: &[R]) -> DistanceMatrix {
    let n = rows.len();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        let a = rows[i].as_ref();
        for j in i + 1..n {
            out[j] = euclidean(a, rows[j].as_ref());
        }
    });
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
    DistanceMatrix { n, data }
}

/// Sorted unique labels with the indices carrying each one.
fn group_by_label<L: Ord + Clone>(labels: &[L]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(i);
    }
    groups.into_values().collect()
}

/// `k` members of `group`: without replacement when the group is large
/// enough, otherwise `k` draws with replacement.
fn draw_instances(group: &[usize], k: usize, rng: &mut RngStream) -> Vec<usize> {
    if group.len() >= k {
        let perm = rng.shuffle(group.len()).expect("group is nonempty");
        perm[..k].iter().map(|&i| group[i]).collect()
    } else {
        (0..k)
            .map(|_| group[rng.below(group.len() as u64) as usize])
            .collect()
    }
}

/// One PK batch: `p` identities drawn without replacement (labels sorted,
/// then shuffled), `k` instances each, identity-major order.
pub fn pk_sample<L: Ord + Clone>(labels: &[L], cfg: PkConfig, rng: &mut RngStream) -> Result<Vec<usize>> {
    cfg.validate()?;
    let groups = group_by_label(labels);
    if groups.len() < cfg.p {
        return Err(ReidError::InsufficientIdentities {
            needed: cfg.p,
            available: groups.len(),
        });
    }
    let order = rng.shuffle(groups.len())?;
    let mut batch = Vec::with_capacity(cfg.batch_size());
    for &g in &order[..cfg.p] {
        batch.extend(draw_instances(&groups[g], cfg.k, rng));
    }
    Ok(batch)
}

/// One epoch of PK batches: every identity once in shuffled order, grouped
/// `p` at a time; a trailing group with fewer than `p` identities is dropped.
pub fn pk_epoch<L: Ord + Clone>(labels: &[L], cfg: PkConfig, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let groups = group_by_label(labels);
    if groups.len() < cfg.p {
        return Err(ReidError::InsufficientIdentities {
            needed: cfg.p,
            available: groups.len(),
        });
    }
    let order = rng.shuffle(groups.len())?;
    Ok(order
        .chunks_exact(cfg.p)
        .map(|ids| {
            ids.iter()
                .flat_map(|&g| draw_instances(&groups[g], cfg.k, rng))
                .collect()
        })
        .collect())
}

fn mine_with<L, F>(d: &DistanceMatrix, labels: &[L], keep: F) -> Vec<Triplet>
where
    L: PartialEq + Sync,
    F: Fn(f64, f64) -> bool + Sync,
{
    assert_eq!(d.len(), labels.len(), "labels must match distance matrix");
    let n = d.len();
    (0..n)
        .into_par_iter()
        .map(|a| {
            let row = d.row(a);
            let mut out = Vec::new();
            for p in 0..n {
                if p == a || labels[p] != labels[a] {
                    continue;
                }
                for nn in 0..n {
                    if labels[nn] != labels[a] && keep(row[p], row[nn]) {
                        out.push(Triplet::new(a, p, nn));
                    }
                }
            }
            out
        })
        .flatten_iter()
        .collect()
}

/// Every triplet whose negative is strictly closer to the anchor than its
/// positive, ordered by `(anchor, positive, negative)`. `margin` does not
/// enter the predicate.
pub fn mine_hard<L: PartialEq + Sync>(d: &DistanceMatrix, labels: &[L], _margin: f64) -> Vec<Triplet> {
    mine_with(d, labels, |dap, dan| dan < dap)
}

/// Every triplet with `d(a,p) < d(a,n) < d(a,p) + margin`.
pub fn mine_semihard<L: PartialEq + Sync>(d: &DistanceMatrix, labels: &[L], margin: f64) -> Vec<Triplet> {
    mine_with(d, labels, move |dap, dan| dap < dan && dan < dap + margin)
}

pub fn mine<L: PartialEq + Sync>(
    strategy: MiningStrategy,
    d: &DistanceMatrix,
    labels: &[L],
    margin: f64,
) -> Vec<Triplet> {
    match strategy {
        MiningStrategy::Hard => mine_hard(d, labels, margin),
        MiningStrategy::Semihard => mine_semihard(d, labels, margin),
    }
}

/// Mean hinge `max(0, d(a,p) - d(a,n) + margin)`; zero for no triplets.
pub fn triplet_loss<R: AsRef<[f64]>>(x: &[R], triplets: &[Triplet], margin: f64) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let total: f64 = triplets
        .iter()
        .map(|t| {
            let dap = euclidean(x[t.anchor].as_ref(), x[t.positive].as_ref());
            let dan = euclidean(x[t.anchor].as_ref(), x[t.negative].as_ref());
            (dap - dan + margin).max(0.0)
        })
        .sum();
    total / triplets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        let d = pairwise_euclidean(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!((d.get(0, 1) - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(d.get(0, 2), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
        let d = pairwise_euclidean(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
    }

    #[test]
    fn pk_table_sizes() {
        let labels: Vec<usize> = (0..400).map(|i| i / 10).collect();
        for (p, k) in [(4, 4), (4, 8), (8, 8), (32, 8)] {
            let mut rng = RngStream::new(1);
            let batch = pk_sample(&labels, PkConfig::new(p, k).unwrap(), &mut rng).unwrap();
            assert_eq!(batch.len(), p * k);
        }
    }

    #[test]
    fn small_identity_repeats() {
        let labels = vec!["a", "a", "a", "b", "b", "b", "b", "b", "b", "b", "b"];
        let mut rng = RngStream::new(3);
        let batch = pk_sample(&labels, PkConfig::new(2, 8).unwrap(), &mut rng).unwrap();
        let a_count = batch.iter().filter(|&&i| labels[i] == "a").count();
        assert_eq!(a_count, 8);
        assert_eq!(batch.len(), 16);
        let b: Vec<usize> = batch.iter().copied().filter(|&i| labels[i] == "b").collect();
        let mut uniq = b.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8, "b has exactly K instances, drawn without replacement");
    }

    #[test]
    fn insufficient_identities() {
        let labels = vec![0, 0, 1, 1];
        let err = pk_sample(&labels, PkConfig::new(3, 2).unwrap(), &mut RngStream::new(0)).unwrap_err();
        assert!(err.to_string().contains("insufficient identities"));
        assert!(PkConfig::new(1, 4).is_err());
    }

    #[test]
    fn epoch_drops_trailing_group() {
        let labels: Vec<usize> = (0..50).flat_map(|i| [i; 3]).collect();
        let batches = pk_epoch(&labels, PkConfig::new(4, 2).unwrap(), &mut RngStream::new(9)).unwrap();
        assert_eq!(batches.len(), 12);
        let mut ids: Vec<usize> = batches.iter().flatten().map(|&i| labels[i]).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 48);
    }

    #[test]
    fn hard_mining_1d_example() {
        // A at 0 and 10, B at 1 and 11
        let x = [vec![0.0], vec![10.0], vec![1.0], vec![11.0]];
        let labels = ['A', 'A', 'B', 'B'];
        let d = pairwise_euclidean(&x);
        let got = mine_hard(&d, &labels, 0.5);
        // anchor 0: d(0,1)=10; negatives 1 (d=1) and 11 (d=11) -> (0,1,2)
        // anchor 1: d(1,0)=10; negatives d=9, d=1 -> (1,0,2), (1,0,3)
        // anchor 2: d(2,3)=10; negatives d=1, d=9 -> (2,3,0), (2,3,1)
        // anchor 3: d(3,2)=10; negatives d=11, d=1 -> (3,2,1)
        let want = vec![
            Triplet::new(0, 1, 2),
            Triplet::new(1, 0, 2),
            Triplet::new(1, 0, 3),
            Triplet::new(2, 3, 0),
            Triplet::new(2, 3, 1),
            Triplet::new(3, 2, 1),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn separated_clusters_yield_nothing() {
        let x = [vec![0.0], vec![0.1], vec![100.0], vec![100.1]];
        let d = pairwise_euclidean(&x);
        assert!(mine_hard(&d, &[0, 0, 1, 1], 0.5).is_empty());
        assert!(mine_semihard(&d, &[0, 0, 1, 1], 0.5).is_empty());
    }

    #[test]
    fn all_negatives_closer_counts_every_pair() {
        // positives are far apart, every negative sits at distance 1 of everything
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, 5.0, 1.0, 1.0, 1.0],
            vec![5.0, 0.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0, 0.0],
        ])
        .unwrap();
        let labels = [0, 0, 1, 2, 3];
        // anchors 0 and 1 each have 1 positive and 3 negatives
        assert_eq!(mine_hard(&d, &labels, 0.5).len(), 2 * 3);
    }

    #[test]
    fn semihard_examples() {
        let x = [vec![0.0], vec![0.3], vec![0.4]];
        let labels = ['A', 'A', 'B'];
        let d = pairwise_euclidean(&x);
        assert!(mine_semihard(&d, &labels, 0.0).is_empty());
        let got = mine_semihard(&d, &labels, 0.5);
        assert!(got.contains(&Triplet::new(0, 1, 2)));
        for t in &got {
            assert!(d.get(t.anchor, t.negative) >= d.get(t.anchor, t.positive));
        }
    }

    #[test]
    fn loss_examples() {
        let x = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.8]];
        let t = [Triplet::new(0, 1, 2)];
        assert!((triplet_loss(&x, &t, 0.5) - 0.7).abs() < 1e-12);
        assert_eq!(triplet_loss(&x, &[], 0.5), 0.0);
        let x = [vec![0.0], vec![0.0], vec![0.6]];
        assert_eq!(triplet_loss(&x, &t, 0.5), 0.0);
    }
}
