//! Hierarchical agglomerative clustering under cosine distance.
//!
//! Clusters are identified by their smallest member index. Merges proceed in
//! order of increasing linkage distance; equal distances are resolved in
//! favour of the lexicographically smallest `(lower id, higher id)` pair, so
//! the partition does not depend on how the caller ordered its inputs beyond
//! the phrase ids themselves.

use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    #[default]
    Complete,
    Average,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::Config(format!("unknown linkage `{other}`"))),
        }
    }
}

/// Hard assignment of phrases (by index) to dense cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    /// Relabels arbitrary cluster keys densely in order of first appearance.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|&r| {
                let next = map.len();
                *map.entry(r).or_insert(next)
            })
            .collect();
        ClusterAssignment { k: map.len(), labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, phrase: usize) -> usize {
        self.labels[phrase]
    }

    pub fn num_clusters(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices per cluster, each sorted ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Cosine distance `1 - cos(a, b)` clamped to `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Condensed upper-triangular distance matrix.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn cosine_matrix(vectors: &Array2<f64>) -> Result<Condensed> {
    let n = vectors.nrows();
    let rows: Vec<Vec<f64>> = vectors.rows().into_iter().map(|r| r.to_vec()).collect();
    for (i, r) in rows.iter().enumerate() {
        let norm = r.iter().map(|x| x * x).sum::<f64>();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Hac(format!("vector {i} has zero or non-finite norm")));
        }
    }
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(cosine_distance(&rows[i], &rows[j]));
        }
    }
    Ok(Condensed { n, d })
}

/// Agglomerative clustering of the rows of `vectors`; clusters keep merging
/// while the closest pair is at most `threshold` apart.
pub fn hac_cluster(vectors: &Array2<f64>, linkage: Linkage, threshold: f64) -> Result<ClusterAssignment> {
    let n = vectors.nrows();
    if n == 0 {
        return Err(Error::Hac("no vectors to cluster".into()));
    }
    if !(threshold >= 0.0) {
        return Err(Error::Hac(format!("threshold {threshold} must be non-negative")));
    }
    let mut dist = cosine_matrix(vectors)?;
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut parent: Vec<usize> = (0..n).collect();

    // nearest later neighbor per row: (distance, column)
    let row_min = |dist: &Condensed, active: &[bool], i: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if active[j] {
                let d = dist.get(i, j);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        best
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|i| row_min(&dist, &active, i)).collect();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((d, j)) = nn[i] {
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, a, b)) = best else { break };
        if d > threshold {
            break;
        }

        // merge b into a (a < b)
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (da, db) = (dist.get(k, a), dist.get(k, b));
            let merged = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => {
                    (size[a] as f64 * da + size[b] as f64 * db) / (size[a] + size[b]) as f64
                }
            };
            dist.set(k, a, merged);
        }
        active[b] = false;
        size[a] += size[b];
        parent[b] = a;
        nn[b] = None;
        nn[a] = row_min(&dist, &active, a);
        for i in 0..a {
            if !active[i] {
                continue;
            }
            match nn[i] {
                Some((_, j)) if j == a || j == b => nn[i] = row_min(&dist, &active, i),
                Some((bd, j)) => {
                    let da = dist.get(i, a);
                    if da < bd || (da == bd && a < j) {
                        nn[i] = Some((da, a));
                    }
                }
                None => nn[i] = row_min(&dist, &active, i),
            }
        }
        for i in a + 1..b {
            if active[i] && nn[i].is_some_and(|(_, j)| j == b) {
                nn[i] = row_min(&dist, &active, i);
            }
        }
    }

    let roots: Vec<usize> = (0..n)
        .map(|mut i| {
            while parent[i] != i {
                i = parent[i];
            }
            i
        })
        .collect();
    Ok(ClusterAssignment::from_labels(&roots))
}
