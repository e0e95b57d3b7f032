//! Ward agglomeration of weighted code vectors, dendrogram cuts and segment
//! profiles.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Panel, SuppValue, VariableKind};
use crate::som::Topology;
use crate::stats::squared_distance;

#[derive(Debug, Error, PartialEq)]
pub enum WardError {
    #[error("need at least 2 units with positive weight, got {0}")]
    TooFewClusters(usize),
    #[error("{weights} weights for {points} points")]
    WeightMismatch { points: usize, weights: usize },
    #[error("k = {k} outside 1..={leaves}")]
    KOutOfRange { k: usize, leaves: usize },
    #[error("inconsistent assignment: {0}")]
    InconsistentAssignment(String),
}

/// One agglomeration step. Cluster ids follow the usual convention: leaves
/// are `0..m`, the cluster created by merge `i` is `m + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Increase of the within-cluster sum of squares caused by the merge.
    pub height: f64,
    /// Total weight of the new cluster.
    pub weight: f64,
    /// Number of leaves in the new cluster.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    /// Units of the map the dendrogram was built on, including empty ones.
    pub unit_count: usize,
    /// Original unit index of each leaf.
    pub leaves: Vec<usize>,
    pub leaf_weights: Vec<f64>,
    pub merges: Vec<Merge>,
}

/// Ward merge cost between clusters with weights `wa`, `wb` and centroid
/// squared distance `d2`.
pub fn ward_cost(wa: f64, wb: f64, d2: f64) -> f64 {
    wa * wb / (wa + wb) * d2
}

/// Minimum-variance agglomeration via the Lance–Williams recurrence. Units
/// with zero weight are left out. Ties in merge cost go to the
/// lexicographically smallest pair of cluster ids.
pub fn ward_cluster(points: ArrayView2<f64>, weights: &[f64]) -> Result<Dendrogram, WardError> {
    if points.nrows() != weights.len() {
        return Err(WardError::WeightMismatch {
            points: points.nrows(),
            weights: weights.len(),
        });
    }
    let leaves: Vec<usize> = (0..weights.len()).filter(|&u| weights[u] > 0.0).collect();
    let m = leaves.len();
    if m < 2 {
        return Err(WardError::TooFewClusters(m));
    }
    let leaf_weights: Vec<f64> = leaves.iter().map(|&u| weights[u]).collect();

    // Slot i holds the live cluster id, its weight, size and dissimilarities.
    let mut ids: Vec<usize> = (0..m).collect();
    let mut w = leaf_weights.clone();
    let mut sizes = vec![1usize; m];
    let mut alive = vec![true; m];
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        let xi = points.row(leaves[i]).to_vec();
        for j in (i + 1)..m {
            let xj = points.row(leaves[j]).to_vec();
            let d = ward_cost(w[i], w[j], squared_distance(&xi, &xj));
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }

    let mut merges = Vec::with_capacity(m - 1);
    for step in 0..m - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in (0..m).filter(|&i| alive[i]) {
            for j in ((i + 1)..m).filter(|&j| alive[j]) {
                let d = dist[i * m + j];
                let pair = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                let better = match best {
                    None => true,
                    Some((bd, bp, _, _)) => d < bd || (d == bd && pair < bp),
                };
                if better {
                    best = Some((d, pair, i, j));
                }
            }
        }
        let (height, (a, b), i, j) = best.expect("at least two live clusters");
        let wi = w[i];
        let wj = w[j];
        for k in (0..m).filter(|&k| alive[k] && k != i && k != j) {
            let wk = w[k];
            let d = ((wi + wk) * dist[i * m + k] + (wj + wk) * dist[j * m + k] - wk * height) / (wi + wj + wk);
            dist[i * m + k] = d;
            dist[k * m + i] = d;
        }
        alive[j] = false;
        w[i] = wi + wj;
        sizes[i] += sizes[j];
        ids[i] = m + step;
        merges.push(Merge {
            a,
            b,
            height,
            weight: w[i],
            size: sizes[i],
        });
    }

    Ok(Dendrogram {
        unit_count: weights.len(),
        leaves,
        leaf_weights,
        merges,
    })
}

/// Unit-to-segment labelling. Segments are numbered `1..=k` by decreasing
/// total weight; units left out of the dendrogram carry no label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub k: usize,
    pub unit_to_segment: Vec<Option<usize>>,
    /// Total leaf weight per segment, index `s - 1`.
    pub segment_weights: Vec<f64>,
}

impl Segmentation {
    /// Segment of `unit`; empty units fall back to the segment of the nearest
    /// labelled unit (by code vector, lowest index on ties).
    pub fn segment_of(&self, unit: usize, codes: ArrayView2<f64>) -> usize {
        if let Some(s) = self.unit_to_segment[unit] {
            return s;
        }
        let x = codes.row(unit).to_vec();
        let mut best = (f64::INFINITY, 1);
        for (v, label) in self.unit_to_segment.iter().enumerate() {
            if let Some(s) = label {
                let d = squared_distance(&codes.row(v).to_vec(), &x);
                if d < best.0 {
                    best = (d, *s);
                }
            }
        }
        best.1
    }

    pub fn units_of(&self, segment: usize) -> Vec<usize> {
        (0..self.unit_to_segment.len())
            .filter(|&u| self.unit_to_segment[u] == Some(segment))
            .collect()
    }
}

/// Undoes the last `k - 1` merges.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Segmentation, WardError> {
    let m = dendrogram.leaves.len();
    if k == 0 || k > m {
        return Err(WardError::KOutOfRange { k, leaves: m });
    }
    // Union-find over cluster ids 0..2m-1.
    let mut parent: Vec<usize> = (0..2 * m - 1).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, merge) in dendrogram.merges.iter().take(m - k).enumerate() {
        let id = m + step;
        let ra = root(&mut parent, merge.a);
        let rb = root(&mut parent, merge.b);
        parent[ra] = id;
        parent[rb] = id;
    }
    // Group leaves by root, remembering the first leaf for tie-breaks.
    let mut groups: BTreeMap<usize, (f64, usize, Vec<usize>)> = BTreeMap::new();
    for leaf in 0..m {
        let r = root(&mut parent, leaf);
        let g = groups.entry(r).or_insert((0.0, leaf, Vec::new()));
        g.0 += dendrogram.leaf_weights[leaf];
        g.2.push(leaf);
    }
    let mut ordered: Vec<(f64, usize, Vec<usize>)> = groups.into_values().collect();
    ordered.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut unit_to_segment = vec![None; dendrogram.unit_count];
    let mut segment_weights = Vec::with_capacity(k);
    for (s, (weight, _, members)) in ordered.into_iter().enumerate() {
        segment_weights.push(weight);
        for leaf in members {
            unit_to_segment[dendrogram.leaves[leaf]] = Some(s + 1);
        }
    }
    Ok(Segmentation {
        k,
        unit_to_segment,
        segment_weights,
    })
}

/// Distribution of one variable inside a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum VariableProfile {
    /// Counts per modality (index `m - 1`) and missing answers.
    Categorical { counts: Vec<u64>, missing: u64 },
    Numeric { count: u64, mean: f64, sd: f64, missing: u64 },
}

impl VariableProfile {
    /// Modality proportions among non-missing answers (zeros when empty).
    pub fn frequencies(&self) -> Option<Vec<f64>> {
        match self {
            VariableProfile::Categorical { counts, .. } => {
                let total: u64 = counts.iter().sum();
                Some(
                    counts
                        .iter()
                        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                        .collect(),
                )
            }
            VariableProfile::Numeric { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfile {
    pub segment: usize,
    pub members: u64,
    pub empty: bool,
    /// One entry per variable, in spec order.
    pub variables: Vec<(String, VariableProfile)>,
}

/// Per-segment frequency tables of every active and supplementary variable.
/// `assignments[r]` is the map unit of record `r`.
pub fn profile_segments(
    segmentation: &Segmentation,
    panel: &Panel,
    assignments: &[usize],
) -> Result<Vec<SegmentProfile>, WardError> {
    if assignments.len() != panel.len() {
        return Err(WardError::InconsistentAssignment(format!(
            "{} assignments for {} records",
            assignments.len(),
            panel.len()
        )));
    }
    let spec = panel.spec();
    let mut labels = Vec::with_capacity(assignments.len());
    for (r, &u) in assignments.iter().enumerate() {
        match segmentation.unit_to_segment.get(u) {
            Some(Some(s)) => labels.push(*s),
            Some(None) => {
                return Err(WardError::InconsistentAssignment(format!(
                    "record {r} assigned to unlabelled unit {u}"
                )))
            }
            None => {
                return Err(WardError::InconsistentAssignment(format!(
                    "record {r} assigned to unknown unit {u}"
                )))
            }
        }
    }

    let active: Vec<_> = spec.active().collect();
    let supp: Vec<_> = spec.supplementary().collect();
    let mut out = Vec::with_capacity(segmentation.k);
    for segment in 1..=segmentation.k {
        let rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == segment).collect();
        let records = panel.records();
        let mut variables = Vec::with_capacity(active.len() + supp.len());
        for (v, var) in active.iter().enumerate() {
            let mut counts = vec![0u64; var.modality_count().unwrap_or(0) as usize];
            for &r in &rows {
                counts[records[r].answers[v] as usize - 1] += 1;
            }
            variables.push((var.id.clone(), VariableProfile::Categorical { counts, missing: 0 }));
        }
        for (v, var) in supp.iter().enumerate() {
            let profile = match var.kind {
                VariableKind::Categorical { modalities } => {
                    let mut counts = vec![0u64; modalities as usize];
                    let mut missing = 0;
                    for &r in &rows {
                        match records[r].supplementary[v] {
                            SuppValue::Modality(m) => counts[m as usize - 1] += 1,
                            _ => missing += 1,
                        }
                    }
                    VariableProfile::Categorical { counts, missing }
                }
                VariableKind::Numeric => {
                    let values: Vec<f64> = rows
                        .iter()
                        .filter_map(|&r| match records[r].supplementary[v] {
                            SuppValue::Numeric(x) => Some(x),
                            _ => None,
                        })
                        .collect();
                    let count = values.len() as u64;
                    let mean = if count == 0 { 0.0 } else { values.iter().sum::<f64>() / count as f64 };
                    let sd = if count < 2 {
                        0.0
                    } else {
                        (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
                    };
                    VariableProfile::Numeric {
                        count,
                        mean,
                        sd,
                        missing: rows.len() as u64 - count,
                    }
                }
            };
            variables.push((var.id.clone(), profile));
        }
        out.push(SegmentProfile {
            segment,
            members: rows.len() as u64,
            empty: rows.is_empty(),
            variables,
        });
    }
    Ok(out)
}

/// Fraction of segments whose units form one edge-connected component of
/// the lattice. Unlabelled units break connectivity.
pub fn contiguity_score(segmentation: &Segmentation, topology: &Topology) -> f64 {
    if segmentation.k == 0 {
        return 1.0;
    }
    let mut connected = 0;
    for segment in 1..=segmentation.k {
        let units = segmentation.units_of(segment);
        let Some(&start) = units.first() else {
            continue;
        };
        let mut seen = vec![false; segmentation.unit_to_segment.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(u) = stack.pop() {
            reached += 1;
            for v in topology.edge_neighbors(u) {
                if !seen[v] && segmentation.unit_to_segment[v] == Some(segment) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if reached == units.len() {
            connected += 1;
        }
    }
    connected as f64 / segmentation.k as f64
}
