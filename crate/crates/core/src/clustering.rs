//! Correlation distances, average-linkage clustering, and pairwise
//! co-membership vectors.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::ctt::CorrelationMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub item_ids: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Dense symmetric matrix with zero diagonal.
    pub fn new(item_ids: Vec<String>, dense: &[Vec<f64>]) -> Result<Self> {
        let n = item_ids.len();
        if dense.len() != n || dense.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("distance matrix must be {n} x {n}")));
        }
        for i in 0..n {
            if dense[i][i] != 0.0 {
                return Err(Error::Shape(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let d = dense[i][j];
                if !d.is_finite() || d < 0.0 || d != dense[j][i] {
                    return Err(Error::Shape(format!("entry ({i}, {j}) must be finite, non-negative and symmetric")));
                }
            }
        }
        Ok(Self { item_ids, values: dense.iter().flatten().copied().collect() })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    fn permuted(&self, order: &[usize]) -> DistanceMatrix {
        let n = self.len();
        let mut values = Vec::with_capacity(n * n);
        for &i in order {
            values.extend(order.iter().map(|&j| self.get(i, j)));
        }
        DistanceMatrix { item_ids: order.iter().map(|&i| self.item_ids[i].clone()).collect(), values }
    }
}

/// Notice emitted when an undefined correlation was mapped to distance 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedDistance {
    pub item_a: String,
    pub item_b: String,
}

/// d = 1 − c, zero diagonal.
///
/// Undefined correlations are an error when `strict`; otherwise they become
/// distance 1 and are reported back.
pub fn iic_distance(c: &CorrelationMatrix, strict: bool) -> Result<(DistanceMatrix, Vec<UndefinedDistance>)> {
    let n = c.len();
    let mut dense = vec![vec![0.0; n]; n];
    let mut notices = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = match c.get(i, j) {
                Some(r) => (1.0 - r).clamp(0.0, 2.0),
                None if strict => return Err(Error::UndefinedCorrelation(c.item_ids[i].clone(), c.item_ids[j].clone())),
                None => {
                    notices.push(UndefinedDistance { item_a: c.item_ids[i].clone(), item_b: c.item_ids[j].clone() });
                    1.0
                }
            };
            dense[i][j] = d;
            dense[j][i] = d;
        }
    }
    Ok((DistanceMatrix::new(c.item_ids.clone(), &dense)?, notices))
}

/// One agglomeration step: clusters represented by their smallest item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: String,
    pub right: String,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub item_ids: Vec<String>,
    /// 1-based labels, numbered by each cluster's smallest item id.
    pub labels: Vec<usize>,
    pub k: usize,
    pub linkage: String,
    /// The complete merge sequence down to a single cluster.
    pub merges: Vec<Merge>,
}

impl ClusterAssignment {
    pub fn label_of(&self, item_id: &str) -> Option<usize> {
        self.item_ids.iter().position(|id| id == item_id).map(|i| self.labels[i])
    }
}

/// Full UPGMA merge sequence over items sorted by id, as (kept, absorbed,
/// height). Callers replay the first n−k merges to cut. Ties in linkage
/// distance go to the lexicographically smallest representative pair.
fn upgma(d: &DistanceMatrix) -> Vec<(usize, usize, f64)> {
    let n = d.len();
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| d.get(i, j)).collect()).collect();
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    // Items are pre-sorted by id, and a merged cluster keeps the lower index,
    // so index order equals representative order.
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| dist[i][j] < b) {
                    best = Some((i, j, dist[i][j]));
                }
            }
        }
        let (a, b, h) = best.expect("at least two active clusters");
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (sa * dist[a][k] + sb * dist[b][k]) / (sa + sb);
                dist[a][k] = v;
                dist[k][a] = v;
            }
        }
        size[a] += size[b];
        active[b] = false;
        steps.push((a, b, h));
    }
    steps
}

/// Average-linkage agglomerative clustering cut at exactly `k` clusters.
///
/// The result does not depend on the input item order.
pub fn agglomerate(d: &DistanceMatrix, k: usize) -> Result<ClusterAssignment> {
    let n = d.len();
    if k < 1 || k > n {
        return Err(Error::Config(format!("k = {k} outside 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d.item_ids[a].cmp(&d.item_ids[b]));
    let sorted = d.permuted(&order);
    let steps = upgma(&sorted);

    // union-find over sorted indices, replaying the first n−k merges
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    let mut sizes = vec![1usize; n];
    let mut merges = Vec::with_capacity(steps.len());
    for (s, &(a, b, h)) in steps.iter().enumerate() {
        sizes[a] += sizes[b];
        merges.push(Merge { left: sorted.item_ids[a].clone(), right: sorted.item_ids[b].clone(), height: h, size: sizes[a] });
        if s < n - k {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[rb.max(ra)] = ra.min(rb);
        }
    }
    // label clusters 1..k by smallest member (= smallest sorted index)
    let mut label_of_root = vec![0usize; n];
    let mut next = 0;
    let mut sorted_labels = vec![0usize; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if label_of_root[root] == 0 {
            next += 1;
            label_of_root[root] = next;
        }
        sorted_labels[i] = label_of_root[root];
    }
    let mut labels = vec![0usize; n];
    for (sorted_pos, &orig) in order.iter().enumerate() {
        labels[orig] = sorted_labels[sorted_pos];
    }
    Ok(ClusterAssignment { item_ids: d.item_ids.clone(), labels, k, linkage: "average".into(), merges })
}

/// Mean silhouette of a labeling; singletons score 0.
pub fn mean_silhouette(d: &DistanceMatrix, labels: &[usize]) -> f64 {
    let n = d.len();
    let k = labels.iter().copied().max().unwrap_or(0);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k + 1];
        let mut counts = vec![0usize; k + 1];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += d.get(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (1..=k).filter(|&c| c != own && counts[c] > 0).map(|c| sums[c] / counts[c] as f64).fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// k in `k_range` with the highest mean silhouette; ties go to the smaller k.
pub fn select_k(d: &DistanceMatrix, k_range: RangeInclusive<usize>) -> Result<usize> {
    let n = d.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("select_k needs >= 3 items, got {n}")));
    }
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > n - 1 || lo > hi {
        return Err(Error::Config(format!("k range {lo}..={hi} not within 2..={}", n - 1)));
    }
    let mut best = (lo, f64::NEG_INFINITY);
    for k in k_range {
        let s = mean_silhouette(d, &agglomerate(d, k)?.labels);
        if s > best.1 + 1e-12 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

/// Same-cluster indicators over item pairs (i < j by item id).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoMembership {
    pub pairs: Vec<(String, String)>,
    pub bits: Vec<u8>,
}

pub fn comembership(a: &ClusterAssignment) -> CoMembership {
    let mut items: Vec<(&String, usize)> = a.item_ids.iter().zip(a.labels.iter().copied()).collect();
    items.sort_by(|x, y| x.0.cmp(y.0));
    let n = items.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    let mut bits = Vec::with_capacity(pairs.capacity());
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((items[i].0.clone(), items[j].0.clone()));
            bits.push(u8::from(items[i].1 == items[j].1));
        }
    }
    CoMembership { pairs, bits }
}
