//! Closed-world query/gallery evaluation.
//!
//! Every vector is L2-normalized before ranking. Gallery items are sorted by
//! ascending Euclidean distance, ties broken by ascending `record_id`.
//! Metrics:
//!
//! * R1: percentage of queries whose top-ranked item shares the query fish_id.
//! * AP: `(1/|R|) * sum_i precision(i) * rel(i)` over the ranked list
//!   truncated to the top `k` ranks, with `|R|` the query's full count of
//!   relevant gallery items.
//! * mAP@k: mean AP over queries, as a percentage.
//!
//! Queries without any relevant gallery item are dropped and counted in
//! `excluded_queries`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::mining::euclidean;
use crate::model::{Arrangement, Condition, EmbeddingSet, Viewpoint};
use crate::rng::RngStream;

pub const DEFAULT_K: usize = 39;
pub const KDE_GRID_POINTS: usize = 256;

const NORM_EPS: f64 = 1e-12;

/// `v / (|v| + 1e-12)`.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    l2_normalize_flagged(v).0
}

/// Normalized vector and whether the input was the zero vector.
pub fn l2_normalize_flagged(v: &[f64]) -> (Vec<f64>, bool) {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (v.iter().map(|a| a / (norm + NORM_EPS)).collect(), norm == 0.0)
}

fn normalized_vectors(set: &EmbeddingSet) -> (Vec<Vec<f64>>, usize) {
    let mut zero = 0;
    let vecs = set
        .records()
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.vector.iter().map(|&a| a as f64).collect();
            let (n, was_zero) = l2_normalize_flagged(&v);
            zero += was_zero as usize;
            n
        })
        .collect();
    (vecs, zero)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGallerySplit {
    pub queries: Vec<usize>,
    pub gallery: Vec<usize>,
    pub seed: u64,
}

/// Fish ids in lexicographic order with their record indices sorted by
/// `record_id`.
fn instances_by_id(set: &EmbeddingSet, indices: impl Iterator<Item = usize>) -> BTreeMap<String, Vec<usize>> {
    let mut by_id: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in indices {
        by_id.entry(set.records()[i].fish_id.clone()).or_default().push(i);
    }
    for v in by_id.values_mut() {
        v.sort_by_key(|&i| set.records()[i].record_id);
    }
    by_id
}

/// One query per fish_id with at least two instances, drawn as
/// `next() % count` over its instances sorted by record_id, ids visited in
/// lexicographic order. The gallery is everything else.
pub fn build_query_gallery(set: &EmbeddingSet, seed: u64) -> Result<QueryGallerySplit> {
    if set.is_empty() {
        return Err(ReidError::EmptyCollection);
    }
    let mut rng = RngStream::new(seed);
    let mut queries = Vec::new();
    for members in instances_by_id(set, 0..set.len()).values() {
        if members.len() >= 2 {
            queries.push(members[rng.below(members.len() as u64) as usize]);
        }
    }
    if queries.is_empty() {
        return Err(ReidError::NoValidQueries);
    }
    let mut is_query = vec![false; set.len()];
    for &q in &queries {
        is_query[q] = true;
    }
    let gallery = (0..set.len()).filter(|&i| !is_query[i]).collect();
    Ok(QueryGallerySplit {
        queries,
        gallery,
        seed,
    })
}

/// Gallery positions sorted by (distance, record_id), with distances.
/// Inputs are re-normalized.
pub fn rank(query: &[f64], gallery: &[Vec<f64>], gallery_ids: &[u64]) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(ReidError::EmptyGallery);
    }
    assert_eq!(gallery.len(), gallery_ids.len());
    let q = l2_normalize(query);
    let mut out: Vec<(usize, f64)> = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| (i, euclidean(&q, &l2_normalize(g))))
        .collect();
    sort_ranked(&mut out, gallery_ids);
    Ok(out)
}

fn sort_ranked(items: &mut [(usize, f64)], ids: &[u64]) {
    items.sort_by(|a, b| a.1.total_cmp(&b.1).then(ids[a.0].cmp(&ids[b.0])));
}

/// Fraction of relevant items among the top `i`.
pub fn precision_at(relevance: &[bool], i: usize) -> Result<f64> {
    if i == 0 || i > relevance.len() {
        return Err(ReidError::RankOutOfRange {
            rank: i,
            len: relevance.len(),
        });
    }
    Ok(relevance[..i].iter().filter(|&&r| r).count() as f64 / i as f64)
}

pub fn average_precision(relevance: &[bool], num_relevant: usize) -> Result<f64> {
    if num_relevant == 0 {
        return Err(ReidError::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / num_relevant as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRetrieval {
    pub query_record_id: u64,
    pub query_fish_id: String,
    pub query_species: String,
    /// Gallery record_ids, nearest first.
    pub ranked_record_ids: Vec<u64>,
    pub distances: Vec<f64>,
    pub relevance: Vec<bool>,
    pub num_relevant: usize,
    pub top1_fish_id: String,
    pub top1_species: String,
}

impl RankedRetrieval {
    pub fn hit(&self) -> bool {
        self.relevance.first().copied().unwrap_or(false)
    }

    /// AP over the top `k` ranks with the full `|R|` divisor.
    pub fn ap_at(&self, k: usize) -> f64 {
        let cut = k.min(self.relevance.len());
        average_precision(&self.relevance[..cut], self.num_relevant)
            .expect("retrievals always carry |R| >= 1")
    }
}

pub fn map_at_k(retrievals: &[RankedRetrieval], k: usize) -> Result<f64> {
    if retrievals.is_empty() {
        return Err(ReidError::NoValidQueries);
    }
    let sum: f64 = retrievals.iter().map(|r| r.ap_at(k)).sum();
    Ok(100.0 * sum / retrievals.len() as f64)
}

pub fn r1(retrievals: &[RankedRetrieval]) -> Result<f64> {
    if retrievals.is_empty() {
        return Err(ReidError::NoValidQueries);
    }
    let hits = retrievals.iter().filter(|r| r.hit()).count();
    Ok(100.0 * hits as f64 / retrievals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub query_record_id: u64,
    pub query_fish_id: String,
    pub query_species: String,
    pub top1_fish_id: String,
    pub top1_species: String,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub intra: usize,
    pub inter: usize,
    pub confusions: Vec<Confusion>,
}

/// Rank-1 misses split by whether the wrong match shares the query species.
pub fn error_analysis(retrievals: &[RankedRetrieval]) -> ErrorSummary {
    let mut out = ErrorSummary::default();
    for r in retrievals.iter().filter(|r| !r.hit()) {
        let kind = if r.top1_species == r.query_species {
            out.intra += 1;
            ErrorKind::Intra
        } else {
            out.inter += 1;
            ErrorKind::Inter
        };
        out.confusions.push(Confusion {
            query_record_id: r.query_record_id,
            query_fish_id: r.query_fish_id.clone(),
            query_species: r.query_species.clone(),
            top1_fish_id: r.top1_fish_id.clone(),
            top1_species: r.top1_species.clone(),
            kind,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_record_id: u64,
    pub fish_id: String,
    pub species: String,
    pub ap: f64,
    pub hit: bool,
    pub num_relevant: usize,
    pub top1_record_id: u64,
    pub top1_fish_id: String,
    pub top1_species: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r1: f64,
    pub map_at_k: f64,
    pub k: usize,
    pub num_queries: usize,
    pub scenario: String,
    pub errors: ErrorSummary,
    pub per_query: Vec<QueryResult>,
    #[serde(default)]
    pub excluded_queries: usize,
    #[serde(default)]
    pub zero_vectors: usize,
}

impl EvalReport {
    pub fn from_retrievals(
        retrievals: &[RankedRetrieval],
        k: usize,
        scenario: impl Into<String>,
        excluded_queries: usize,
        zero_vectors: usize,
    ) -> Result<Self> {
        let per_query = retrievals
            .iter()
            .map(|r| QueryResult {
                query_record_id: r.query_record_id,
                fish_id: r.query_fish_id.clone(),
                species: r.query_species.clone(),
                ap: r.ap_at(k),
                hit: r.hit(),
                num_relevant: r.num_relevant,
                top1_record_id: r.ranked_record_ids[0],
                top1_fish_id: r.top1_fish_id.clone(),
                top1_species: r.top1_species.clone(),
            })
            .collect();
        Ok(Self {
            r1: r1(retrievals)?,
            map_at_k: map_at_k(retrievals, k)?,
            k,
            num_queries: retrievals.len(),
            scenario: scenario.into(),
            errors: error_analysis(retrievals),
            per_query,
            excluded_queries,
            zero_vectors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Ranks each query against `gallery` (minus the query itself), in query
/// order. Returns retrievals and the number of queries without any
/// relevant gallery item.
pub fn retrieve(
    set: &EmbeddingSet,
    vectors: &[Vec<f64>],
    queries: &[usize],
    gallery: &[usize],
) -> Result<(Vec<RankedRetrieval>, usize)> {
    let recs = set.records();
    let results: Vec<Option<RankedRetrieval>> = queries
        .par_iter()
        .map(|&q| {
            let mut items: Vec<(usize, f64)> = gallery
                .iter()
                .filter(|&&g| g != q)
                .map(|&g| (g, euclidean(&vectors[q], &vectors[g])))
                .collect();
            if items.is_empty() {
                return Err(ReidError::EmptyGallery);
            }
            items.sort_by(|a, b| a.1.total_cmp(&b.1).then(recs[a.0].record_id.cmp(&recs[b.0].record_id)));
            let qrec = &recs[q];
            let relevance: Vec<bool> = items.iter().map(|&(g, _)| recs[g].fish_id == qrec.fish_id).collect();
            let num_relevant = relevance.iter().filter(|&&r| r).count();
            if num_relevant == 0 {
                return Ok(None);
            }
            let top = &recs[items[0].0];
            Ok(Some(RankedRetrieval {
                query_record_id: qrec.record_id,
                query_fish_id: qrec.fish_id.clone(),
                query_species: qrec.species.clone(),
                ranked_record_ids: items.iter().map(|&(g, _)| recs[g].record_id).collect(),
                distances: items.iter().map(|&(_, d)| d).collect(),
                relevance,
                num_relevant,
                top1_fish_id: top.fish_id.clone(),
                top1_species: top.species.clone(),
            }))
        })
        .collect::<Result<_>>()?;
    let excluded = results.iter().filter(|r| r.is_none()).count();
    Ok((results.into_iter().flatten().collect(), excluded))
}

/// Single-pool protocol: seeded query per identity, gallery = all the rest.
pub fn evaluate(set: &EmbeddingSet, seed: u64, k: usize) -> Result<EvalReport> {
    let split = build_query_gallery(set, seed)?;
    let (vectors, zero) = normalized_vectors(set);
    let (retrievals, excluded) = retrieve(set, &vectors, &split.queries, &split.gallery)?;
    EvalReport::from_retrievals(&retrievals, k, "all", excluded, zero)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    Identical,
    Viewpoint,
    Occlusion,
    Compound,
}

impl ScenarioFamily {
    pub fn of(query: Condition, gallery: Condition) -> Self {
        match (
            query.arrangement == gallery.arrangement,
            query.viewpoint == gallery.viewpoint,
        ) {
            (true, true) => ScenarioFamily::Identical,
            (true, false) => ScenarioFamily::Viewpoint,
            (false, true) => ScenarioFamily::Occlusion,
            (false, false) => ScenarioFamily::Compound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub query: Condition,
    pub gallery: Condition,
}

impl Scenario {
    pub fn new(query: Condition, gallery: Condition) -> Self {
        Self { query, gallery }
    }

    pub fn family(&self) -> ScenarioFamily {
        ScenarioFamily::of(self.query, self.gallery)
    }

    pub fn label(&self) -> String {
        format!("{} vs {}", self.query, self.gallery)
    }
}

/// The ten query/gallery rows of the subcategory study, grouped by family.
pub fn study_scenarios() -> Vec<Scenario> {
    use Arrangement::*;
    use Viewpoint::*;
    let c = Condition::new;
    vec![
        Scenario::new(c(Separated, Initial), c(Separated, Initial)),
        Scenario::new(c(Separated, Flipped), c(Separated, Flipped)),
        Scenario::new(c(Touched, Initial), c(Touched, Initial)),
        Scenario::new(c(Touched, Flipped), c(Touched, Flipped)),
        Scenario::new(c(Separated, Initial), c(Separated, Flipped)),
        Scenario::new(c(Touched, Initial), c(Touched, Flipped)),
        Scenario::new(c(Separated, Initial), c(Touched, Initial)),
        Scenario::new(c(Separated, Flipped), c(Touched, Flipped)),
        Scenario::new(c(Separated, Initial), c(Touched, Flipped)),
        Scenario::new(c(Separated, Flipped), c(Touched, Initial)),
    ]
}

/// All 16 query x gallery cells, row-major over [`Condition::ALL`].
pub fn full_grid() -> Vec<Scenario> {
    Condition::ALL
        .iter()
        .flat_map(|&q| Condition::ALL.iter().map(move |&g| Scenario::new(q, g)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub query: String,
    pub gallery: String,
    pub family: ScenarioFamily,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossConditionMatrix {
    pub seed: u64,
    pub k: usize,
    pub conditions: Vec<String>,
    pub cells: Vec<CrossCell>,
}

impl CrossConditionMatrix {
    pub fn cell(&self, query: Condition, gallery: Condition) -> Option<&CrossCell> {
        let (q, g) = (query.to_string(), gallery.to_string());
        self.cells.iter().find(|c| c.query == q && c.gallery == g)
    }

    /// Rank-1 misses per query condition, summed over its row.
    pub fn errors_by_query_condition(&self) -> Vec<(String, usize, usize)> {
        self.conditions
            .iter()
            .map(|cond| {
                let (mut intra, mut inter) = (0, 0);
                for c in self.cells.iter().filter(|c| &c.query == cond) {
                    intra += c.report.errors.intra;
                    inter += c.report.errors.inter;
                }
                (cond.clone(), intra, inter)
            })
            .collect()
    }
}

/// Per scenario: one seeded query per fish_id from the query-condition pool
/// (a fresh stream from `seed` per cell, so a row shares its queries), ranked
/// against every gallery-condition record except the query itself.
pub fn cross_condition_eval(
    set: &EmbeddingSet,
    scenarios: &[Scenario],
    seed: u64,
    k: usize,
) -> Result<CrossConditionMatrix> {
    let (vectors, zero) = normalized_vectors(set);
    let mut cells = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let scenario_err = |message: &str| ReidError::Scenario {
            scenario: sc.label(),
            message: message.into(),
        };
        let pool = (0..set.len()).filter(|&i| set.records()[i].condition == sc.query);
        let by_id = instances_by_id(set, pool);
        if by_id.is_empty() {
            return Err(scenario_err("empty query pool"));
        }
        let gallery: Vec<usize> = (0..set.len())
            .filter(|&i| set.records()[i].condition == sc.gallery)
            .collect();
        if gallery.is_empty() {
            return Err(scenario_err("empty gallery"));
        }
        let mut rng = RngStream::new(seed);
        let queries: Vec<usize> = by_id
            .values()
            .map(|m| m[rng.below(m.len() as u64) as usize])
            .collect();
        let (retrievals, excluded) = match retrieve(set, &vectors, &queries, &gallery) {
            Err(ReidError::EmptyGallery) => return Err(scenario_err("empty gallery")),
            other => other?,
        };
        if retrievals.is_empty() {
            return Err(scenario_err("no query has a match in the gallery"));
        }
        let report = EvalReport::from_retrievals(&retrievals, k, sc.label(), excluded, zero)?;
        cells.push(CrossCell {
            query: sc.query.to_string(),
            gallery: sc.gallery.to_string(),
            family: sc.family(),
            report,
        });
    }
    Ok(CrossConditionMatrix {
        seed,
        k,
        conditions: Condition::ALL.iter().map(|c| c.to_string()).collect(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub grid: Vec<f64>,
    pub density_pos: Vec<f64>,
    pub density_neg: Vec<f64>,
    pub bandwidth_pos: f64,
    pub bandwidth_neg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistributions {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub kde: Option<Kde>,
}

impl DistanceDistributions {
    /// `pair_type,distance` rows, positives first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_type,distance\n");
        for d in &self.positive {
            out.push_str(&format!("positive,{d}\n"));
        }
        for d in &self.negative {
            out.push_str(&format!("negative,{d}\n"));
        }
        out
    }

    pub fn kde_csv(&self) -> Option<String> {
        self.kde.as_ref().map(|k| {
            let mut out = String::from("x,density_pos,density_neg\n");
            for i in 0..k.grid.len() {
                out.push_str(&format!("{},{},{}\n", k.grid[i], k.density_pos[i], k.density_neg[i]));
            }
            out
        })
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9 * min(sigma, IQR / 1.34) * m^(-1/5)`, falling back
/// to sigma alone when the IQR is zero. `None` for constant or tiny samples.
pub fn silverman_bandwidth(samples: &[f64]) -> Option<f64> {
    let m = samples.len();
    if m < 2 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let sigma = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    let h = 0.9 * spread * (m as f64).powf(-0.2);
    (h > 0.0).then_some(h)
}

pub fn gaussian_kde(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.par_iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let u = (x - s) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

fn sample_pairs(mut pairs: Vec<(usize, usize)>, max_pairs: usize, rng: &mut RngStream) -> Vec<(usize, usize)> {
    if pairs.len() > max_pairs {
        rng.shuffle_in_place(&mut pairs);
        pairs.truncate(max_pairs);
    }
    pairs
}

/// Same-id and different-id distances on normalized vectors, each capped at
/// `max_pairs` by seeded sampling without replacement. The KDE grid spans
/// both samples plus four bandwidths on each side.
pub fn distance_distributions(
    set: &EmbeddingSet,
    seed: u64,
    max_pairs: usize,
    with_kde: bool,
) -> Result<DistanceDistributions> {
    if set.len() < 2 {
        return Err(ReidError::Other(format!(
            "distance distributions need at least 2 records, got {}",
            set.len()
        )));
    }
    let (vectors, _) = normalized_vectors(set);
    let recs = set.records();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..recs.len() {
        for j in i + 1..recs.len() {
            if recs[i].fish_id == recs[j].fish_id {
                pos.push((i, j));
            } else {
                neg.push((i, j));
            }
        }
    }
    let mut rng = RngStream::new(seed);
    let pos = sample_pairs(pos, max_pairs, &mut rng.child());
    let neg = sample_pairs(neg, max_pairs, &mut rng.child());
    let dist = |pairs: &[(usize, usize)]| -> Vec<f64> {
        pairs
            .par_iter()
            .map(|&(i, j)| euclidean(&vectors[i], &vectors[j]))
            .collect()
    };
    let positive = dist(&pos);
    let negative = dist(&neg);

    let kde = if with_kde {
        match (silverman_bandwidth(&positive), silverman_bandwidth(&negative)) {
            (Some(hp), Some(hn)) => {
                let all = positive.iter().chain(&negative);
                let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
                let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
                let pad = 4.0 * hp.max(hn);
                let (a, b) = (lo - pad, hi + pad);
                let grid: Vec<f64> = (0..KDE_GRID_POINTS)
                    .map(|i| a + (b - a) * i as f64 / (KDE_GRID_POINTS - 1) as f64)
                    .collect();
                Some(Kde {
                    density_pos: gaussian_kde(&positive, hp, &grid),
                    density_neg: gaussian_kde(&negative, hn, &grid),
                    grid,
                    bandwidth_pos: hp,
                    bandwidth_neg: hn,
                })
            }
            _ => None,
        }
    } else {
        None
    };
    Ok(DistanceDistributions {
        positive,
        negative,
        kde,
    })
}
