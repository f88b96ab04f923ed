//! Domain types: acquisition conditions, embedding records and sets.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrangement {
    Separated,
    Touched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viewpoint {
    Initial,
    Flipped,
}

/// Arrangement x viewpoint. Exactly four values exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub arrangement: Arrangement,
    pub viewpoint: Viewpoint,
}

impl Condition {
    pub const SEPARATED_INITIAL: Condition = Condition::new(Arrangement::Separated, Viewpoint::Initial);
    pub const SEPARATED_FLIPPED: Condition = Condition::new(Arrangement::Separated, Viewpoint::Flipped);
    pub const TOUCHED_INITIAL: Condition = Condition::new(Arrangement::Touched, Viewpoint::Initial);
    pub const TOUCHED_FLIPPED: Condition = Condition::new(Arrangement::Touched, Viewpoint::Flipped);

    /// Table order: Separated-Initial, Separated-Flipped, Touched-Initial, Touched-Flipped.
    pub const ALL: [Condition; 4] = [
        Self::SEPARATED_INITIAL,
        Self::SEPARATED_FLIPPED,
        Self::TOUCHED_INITIAL,
        Self::TOUCHED_FLIPPED,
    ];

    pub const fn new(arrangement: Arrangement, viewpoint: Viewpoint) -> Self {
        Self {
            arrangement,
            viewpoint,
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.arrangement {
            Arrangement::Separated => "Separated",
            Arrangement::Touched => "Touched",
        };
        let v = match self.viewpoint {
            Viewpoint::Initial => "Initial",
            Viewpoint::Flipped => "Flipped",
        };
        write!(f, "{a}-{v}")
    }
}

impl FromStr for Condition {
    type Err = ReidError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Condition::ALL
            .into_iter()
            .find(|c| c.to_string().to_ascii_lowercase() == lower)
            .ok_or_else(|| ReidError::Other(format!("unknown condition {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub record_id: u64,
    pub fish_id: String,
    pub species: String,
    pub condition: Condition,
    pub split: Split,
    pub vector: Vec<f32>,
}

/// Dimension-homogeneous collection. Record order is the canonical index
/// order for samplers, miners and rankers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(ReidError::ZeroDim);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (row, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(ReidError::DimMismatch {
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if let Some(col) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(ReidError::NonFinite { row, col });
            }
            if !seen.insert(r.record_id) {
                return Err(ReidError::DuplicateRecordId(r.record_id));
            }
        }
        Ok(Self { dim, records })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    /// Vectors widened to f64, in record order.
    pub fn vectors_f64(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.vector.iter().map(|&v| v as f64).collect())
            .collect()
    }

    pub fn fish_ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.fish_id.as_str()).collect()
    }

    /// Records of one split, same relative order.
    pub fn filter_split(&self, split: Split) -> EmbeddingSet {
        EmbeddingSet {
            dim: self.dim,
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    /// Replaces every vector through `f`, which must return vectors of `dim`.
    pub fn map_vectors<F>(&self, dim: usize, f: F) -> Result<EmbeddingSet>
    where
        F: Fn(&[f32]) -> Vec<f32>,
    {
        let records = self
            .records
            .iter()
            .map(|r| EmbeddingRecord {
                vector: f(&r.vector),
                ..r.clone()
            })
            .collect();
        EmbeddingSet::new(dim, records)
    }
}

/// Dense ids for string labels, in first-appearance order.
pub fn label_indices<S: AsRef<str>>(labels: &[S]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l.as_ref().to_owned()).or_insert(next)
        })
        .collect()
}
