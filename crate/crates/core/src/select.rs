//! Diverse subset selection: greedy max-min and k-means medoids, plus splitting concept-set
//! proposals into single-concept proposals.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::par::Execution;
use crate::sampler::ProposalPool;

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Greedy,
    Kmeans,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Greedy => "greedy",
            SelectionMethod::Kmeans => "kmeans",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(SelectionMethod::Greedy),
            "kmeans" | "k-means" => Ok(SelectionMethod::Kmeans),
            other => Err(Error::Input(format!("unknown selection method {other:?}"))),
        }
    }
}

/// Where a proposal came from: a pool sample, and for single-concept proposals its column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub sample: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

/// One concept column lifted out of a posterior sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleConceptProposal {
    pub activation: Vec<f64>,
    pub origin: Origin,
}

/// The selected diverse subset, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub method: SelectionMethod,
    pub metric: MetricKind,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    /// Indices into the candidate list the selection ran over.
    pub member_ids: Vec<usize>,
    pub origins: Vec<Origin>,
    /// Set when fewer than `M` candidates were available.
    #[serde(default)]
    pub truncated: bool,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Fills `origins` for a selection made directly over pool samples.
    pub fn with_sample_origins(mut self) -> Self {
        self.origins = self.member_ids.iter().map(|&sample| Origin { sample, column: None }).collect();
        self
    }

    /// Fills `origins` for a selection made over single-concept proposals.
    pub fn with_single_origins(mut self, singles: &[SingleConceptProposal]) -> Self {
        self.origins = self.member_ids.iter().map(|&i| singles[i].origin).collect();
        self
    }
}

/// Emits one proposal per (sample, column), skipping a pinned column and exact duplicates.
pub fn split_to_singles(pool: &ProposalPool) -> Vec<SingleConceptProposal> {
    let pinned = pool.pinned.as_ref().map(|p| p.column_index);
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut out = Vec::new();
    for (sample_id, sample) in pool.samples.iter().enumerate() {
        for column in 0..sample.k() {
            if Some(column) == pinned {
                continue;
            }
            let activation = sample.activations.column(column);
            let key: Vec<u64> = activation.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                out.push(SingleConceptProposal { activation, origin: Origin { sample: sample_id, column: Some(column) } });
            }
        }
    }
    out
}

fn argmax_lowest(values: &[f64], excluded: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ex)) in values.iter().zip(excluded).enumerate() {
        if ex {
            continue;
        }
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn distances_to<V: AsRef<[f64]> + Sync>(
    items: &[V],
    from: usize,
    metric: MetricKind,
    exec: Execution,
) -> Result<Vec<f64>> {
    let anchor = items[from].as_ref();
    exec.map(items.len(), |i| metric.distance(items[i].as_ref(), anchor)).into_iter().collect()
}

pub fn greedy_select<V: AsRef<[f64]> + Sync>(
    items: &[V],
    m: usize,
    metric: MetricKind,
    seed: u64,
) -> Result<ProposalSet> {
    greedy_select_with(items, m, metric, seed, Execution::default())
}

/// Max-min greedy: a seeded random start, then repeatedly the candidate whose nearest selected
/// member is farthest. Ties go to the lowest index.
pub fn greedy_select_with<V: AsRef<[f64]> + Sync>(
    items: &[V],
    m: usize,
    metric: MetricKind,
    seed: u64,
    exec: Execution,
) -> Result<ProposalSet> {
    if items.is_empty() {
        return Err(Error::Input("cannot select from an empty pool".into()));
    }
    if m == 0 {
        return Err(Error::Input("M must be positive".into()));
    }
    let truncated = m > items.len();
    if truncated {
        log::warn!("M={m} exceeds pool size {}; returning the whole pool", items.len());
    }
    let target = m.min(items.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..items.len());
    let mut selected = vec![first];
    let mut excluded = vec![false; items.len()];
    excluded[first] = true;
    let mut min_dist = distances_to(items, first, metric, exec)?;

    while selected.len() < target {
        let next = argmax_lowest(&min_dist, &excluded).expect("candidates remain");
        selected.push(next);
        excluded[next] = true;
        let d = distances_to(items, next, metric, exec)?;
        for (m, d) in min_dist.iter_mut().zip(d) {
            *m = m.min(d);
        }
    }
    Ok(ProposalSet {
        method: SelectionMethod::Greedy,
        metric,
        m,
        seed,
        member_ids: selected,
        origins: Vec::new(),
        truncated,
    })
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn normalized_rows<V: AsRef<[f64]>>(items: &[V]) -> Result<Vec<Vec<f64>>> {
    items
        .iter()
        .map(|v| {
            let v = v.as_ref();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate("cannot normalize an all-zero activation".into()));
            }
            Ok(v.iter().map(|x| x / norm).collect())
        })
        .collect()
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means with k-means++ seeding, at most 100 Lloyd iterations or until the relative inertia
/// change drops below 1e-6.
pub fn kmeans<V: AsRef<[f64]> + Sync>(points: &[V], k: usize, seed: u64, exec: Execution) -> KmeansFit {
    let n = points.len();
    let dim = points[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = exec.map(n, |i| sq_dist(points[i].as_ref(), &centroids[0]));
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            if d2[chosen] == 0.0 {
                chosen = argmax_lowest(&d2, &vec![false; n]).unwrap_or(0);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        let nd: Vec<f64> = exec.map(n, |i| sq_dist(points[i].as_ref(), &c));
        for (a, b) in d2.iter_mut().zip(nd) {
            *a = a.min(b);
        }
        centroids.push(c);
    }

    let mut assignment = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = 0.0;
    let mut iterations = 0;
    for it in 0..KMEANS_MAX_ITER {
        iterations = it + 1;
        let nearest = exec.map(n, |i| nearest_centroid(points[i].as_ref(), &centroids));
        inertia = nearest.iter().map(|(_, d)| d).sum();
        for (a, (j, _)) in assignment.iter_mut().zip(&nearest) {
            *a = *j;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &j) in assignment.iter().enumerate() {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(points[i].as_ref()) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point worst served by its centroid.
                let far: Vec<f64> = nearest.iter().map(|(_, d)| *d).collect();
                if let Some(p) = argmax_lowest(&far, &taken) {
                    taken[p] = true;
                    centroids[j] = points[p].as_ref().to_vec();
                }
            }
        }

        let converged = prev_inertia.is_finite()
            && (prev_inertia - inertia).abs() <= KMEANS_REL_TOL * prev_inertia.abs().max(f64::MIN_POSITIVE);
        prev_inertia = inertia;
        if converged || inertia == 0.0 {
            break;
        }
    }
    let nearest = exec.map(n, |i| nearest_centroid(points[i].as_ref(), &centroids));
    for (a, (j, _)) in assignment.iter_mut().zip(&nearest) {
        *a = *j;
    }
    KmeansFit { centroids, assignment, inertia, iterations }
}

pub fn kmeans_select<V: AsRef<[f64]> + Sync>(
    items: &[V],
    m: usize,
    metric: MetricKind,
    seed: u64,
) -> Result<ProposalSet> {
    kmeans_select_with(items, m, metric, seed, Execution::default())
}

/// Clusters the candidates into `m` groups and returns, per cluster in cluster order, the member
/// nearest its centroid (ties to the lowest index). Cosine runs spherical k-means on
/// unit-normalized rows.
pub fn kmeans_select_with<V: AsRef<[f64]> + Sync>(
    items: &[V],
    m: usize,
    metric: MetricKind,
    seed: u64,
    exec: Execution,
) -> Result<ProposalSet> {
    if !matches!(metric, MetricKind::Euclidean | MetricKind::Cosine) {
        return Err(Error::UnsupportedMetric(metric));
    }
    if items.is_empty() {
        return Err(Error::Input("cannot select from an empty pool".into()));
    }
    if m == 0 {
        return Err(Error::Input("M must be positive".into()));
    }
    let dim = items[0].as_ref().len();
    if let Some(i) = items.iter().position(|v| v.as_ref().len() != dim) {
        return Err(Error::Shape(format!("candidate {i} has {} values, expected {dim}", items[i].as_ref().len())));
    }
    let truncated = m > items.len();
    let finish = |member_ids: Vec<usize>| ProposalSet {
        method: SelectionMethod::Kmeans,
        metric,
        m,
        seed,
        member_ids,
        origins: Vec::new(),
        truncated,
    };
    if truncated {
        log::warn!("M={m} exceeds pool size {}; returning the whole pool", items.len());
        return Ok(finish((0..items.len()).collect()));
    }

    let normalized;
    let points: Vec<&[f64]> = if metric == MetricKind::Cosine {
        normalized = normalized_rows(items)?;
        normalized.iter().map(Vec::as_slice).collect()
    } else {
        items.iter().map(AsRef::as_ref).collect()
    };
    let fit = kmeans(&points, m, seed, exec);

    let mut members = Vec::with_capacity(m);
    let mut used = vec![false; items.len()];
    for (j, centroid) in fit.centroids.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if fit.assignment[i] != j {
                continue;
            }
            let d = sq_dist(p, centroid);
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            members.push(i);
        }
    }
    // Only reachable with fewer distinct candidates than clusters.
    for i in 0..items.len() {
        if members.len() >= m {
            break;
        }
        if !used[i] {
            used[i] = true;
            members.push(i);
        }
    }
    Ok(finish(members))
}

/// Dispatches on `method`.
pub fn select_with<V: AsRef<[f64]> + Sync>(
    method: SelectionMethod,
    items: &[V],
    m: usize,
    metric: MetricKind,
    seed: u64,
    exec: Execution,
) -> Result<ProposalSet> {
    match method {
        SelectionMethod::Greedy => greedy_select_with(items, m, metric, seed, exec),
        SelectionMethod::Kmeans => kmeans_select_with(items, m, metric, seed, exec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    fn first_member(n: usize, seed: u64) -> usize {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
    }

    #[test]
    fn greedy_m1_is_seeded_start() {
        let items = pts(&[0.1, 0.5, 0.9, 0.3]);
        for seed in 0..5 {
            let set = greedy_select(&items, 1, MetricKind::Euclidean, seed).unwrap();
            assert_eq!(set.member_ids, vec![first_member(4, seed)]);
        }
    }

    #[test]
    fn greedy_picks_far_end() {
        let items = pts(&[0.0, 0.1, 1.0]);
        let seed = (0..100).find(|&s| first_member(3, s) == 0).unwrap();
        let set = greedy_select(&items, 2, MetricKind::Euclidean, seed).unwrap();
        assert_eq!(set.member_ids, vec![0, 2]);
    }

    #[test]
    fn greedy_whole_pool_and_truncation() {
        let items = pts(&[0.0, 0.2, 0.4]);
        let mut all = greedy_select(&items, 3, MetricKind::Absolute, 3).unwrap().member_ids;
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        let over = greedy_select(&items, 10, MetricKind::Absolute, 3).unwrap();
        assert!(over.truncated);
        assert_eq!(over.len(), 3);
        assert!(greedy_select::<Vec<f64>>(&[], 2, MetricKind::Absolute, 0).is_err());
    }

    #[test]
    fn kmeans_rejects_l1_metrics() {
        let items = pts(&[0.0, 1.0]);
        assert!(matches!(
            kmeans_select(&items, 1, MetricKind::Absolute, 0),
            Err(Error::UnsupportedMetric(MetricKind::Absolute))
        ));
        assert!(kmeans_select(&items, 1, MetricKind::PercentDisagreement, 0).is_err());
    }

    #[test]
    fn kmeans_m1_is_nearest_to_mean() {
        let items = pts(&[0.0, 0.2, 0.45, 1.0]);
        let set = kmeans_select(&items, 1, MetricKind::Euclidean, 7).unwrap();
        assert_eq!(set.member_ids, vec![2]);
    }

    #[test]
    fn kmeans_separated_clusters() {
        let mut items = Vec::new();
        for c in 0..4 {
            for j in 0..5 {
                items.push(vec![10.0 * c as f64 + 0.01 * j as f64, 0.0]);
            }
        }
        for seed in 0..10 {
            let set = kmeans_select(&items, 4, MetricKind::Euclidean, seed).unwrap();
            let mut clusters: Vec<usize> = set.member_ids.iter().map(|i| i / 5).collect();
            clusters.sort();
            assert_eq!(clusters, vec![0, 1, 2, 3], "seed {seed}");
        }
    }

    #[test]
    fn kmeans_with_duplicates_still_returns_m_members() {
        let items = pts(&[1.0, 1.0, 1.0, 2.0]);
        let set = kmeans_select(&items, 3, MetricKind::Euclidean, 0).unwrap();
        let mut ids = set.member_ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn method_names() {
        assert_eq!("kmeans".parse::<SelectionMethod>().unwrap(), SelectionMethod::Kmeans);
        assert_eq!(serde_json::to_string(&SelectionMethod::Greedy).unwrap(), "\"greedy\"");
    }
}
