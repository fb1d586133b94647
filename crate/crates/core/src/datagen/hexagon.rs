//! Six Gaussian clusters on the vertices of a regular hexagon, with the 15 contiguous-arc
//! concepts and an exhaustive oracle for which concept triples explain the labels.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{min_concepts, oracle_valid_combinations};
use crate::catalog::{GroundTruthCatalog, NamedConcept};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const N_CLUSTERS: usize = 6;
pub const REQUIRED_MIN_CONCEPTS: usize = 3;
const MIN_REALIZATION_ACCURACY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HexagonConfig {
    pub points_per_cluster: usize,
    pub radius: f64,
    pub cluster_std: f64,
    pub seed: u64,
}

impl Default for HexagonConfig {
    fn default() -> Self {
        Self { points_per_cluster: 200, radius: 1.0, cluster_std: 0.1, seed: 0 }
    }
}

impl HexagonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_cluster == 0 {
            return Err(Error::Input("hexagon config field `points_per_cluster` must be positive".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Input("hexagon config field `radius` must be positive".into()));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::Input("hexagon config field `cluster_std` must be positive".into()));
        }
        Ok(())
    }
}

/// The two cut edges of each arc split, in enumeration order. Edge `e` joins clusters `e` and `e+1`.
pub fn arc_cuts(n_clusters: usize) -> Vec<(usize, usize)> {
    let mut cuts = Vec::new();
    for i in 0..n_clusters {
        for j in i + 1..n_clusters {
            cuts.push((i, j));
        }
    }
    cuts
}

/// Cluster-level membership of the positive side of each arc split. The positive side is the
/// arc containing cluster 0.
pub fn arc_sides(n_clusters: usize) -> Vec<Vec<u8>> {
    arc_cuts(n_clusters)
        .into_iter()
        .map(|(i, j)| {
            let inner = |c: usize| c > i && c <= j;
            let zero_inside = inner(0);
            (0..n_clusters).map(|c| u8::from(inner(c) == zero_inside)).collect()
        })
        .collect()
}

/// One binary concept per contiguous-arc bipartition of cyclically placed clusters,
/// `n(n-1)/2` in total, evaluated per point.
pub fn enumerate_arc_concepts(cluster_assignment: &[usize], n_clusters: usize) -> Vec<Vec<u8>> {
    arc_sides(n_clusters)
        .into_iter()
        .map(|side| cluster_assignment.iter().map(|&c| side[c]).collect())
        .collect()
}

fn arc_name(side: &[u8]) -> String {
    let members: Vec<String> =
        side.iter().enumerate().filter(|(_, &v)| v == 1).map(|(c, _)| c.to_string()).collect();
    format!("arc{{{}}}", members.join(","))
}

/// Cluster labeling: the lexicographically smallest of the 2^6 labelings (cluster 0 most
/// significant) for which no concept pair or single concept explains the labels.
pub fn cluster_labeling() -> &'static [u8; N_CLUSTERS] {
    static LABELING: OnceLock<[u8; N_CLUSTERS]> = OnceLock::new();
    LABELING.get_or_init(|| {
        let sides = arc_sides(N_CLUSTERS);
        let clusters: Vec<usize> = (0..N_CLUSTERS).collect();
        for code in 0..(1u32 << N_CLUSTERS) {
            let labels: [u8; N_CLUSTERS] =
                std::array::from_fn(|c| u8::from(code >> (N_CLUSTERS - 1 - c) & 1 == 1));
            let concepts: Vec<Vec<u8>> = sides.iter().map(|s| clusters.iter().map(|&c| s[c]).collect()).collect();
            if min_concepts(&concepts, &labels, REQUIRED_MIN_CONCEPTS) == Some(REQUIRED_MIN_CONCEPTS) {
                return labels;
            }
        }
        unreachable!("alternating labeling always needs three arc concepts")
    })
}

fn vertex(radius: f64, c: usize) -> (f64, f64) {
    let angle = std::f64::consts::PI / 3.0 * c as f64;
    (radius * angle.cos(), radius * angle.sin())
}

/// Accuracy of the line through the midpoints of the two cut edges as a realization of the split.
fn midpoint_line_accuracy(points: &[(f64, f64)], concept: &[u8], cut: (usize, usize), radius: f64) -> f64 {
    let mid = |e: usize| {
        let (a, b) = (vertex(radius, e), vertex(radius, (e + 1) % N_CLUSTERS));
        ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0)
    };
    let (p, q) = (mid(cut.0), mid(cut.1));
    let side = |x: (f64, f64)| (q.0 - p.0) * (x.1 - p.1) - (q.1 - p.1) * (x.0 - p.0) > 0.0;
    let zero_side = side(vertex(radius, 0));
    let hits = points.iter().zip(concept).filter(|(x, &c)| (side(**x) == zero_side) == (c == 1)).count();
    hits as f64 / points.len() as f64
}

/// Generates the dataset (cluster-major order) and its oracle-certified catalog.
pub fn gen_hexagon(config: &HexagonConfig) -> Result<(Dataset, GroundTruthCatalog)> {
    config.validate()?;
    let labeling = cluster_labeling();
    let noise = Normal::new(0.0, config.cluster_std).map_err(|e| Error::Input(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let n = config.points_per_cluster * N_CLUSTERS;
    let mut points = Vec::with_capacity(n);
    let mut assignment = Vec::with_capacity(n);
    for c in 0..N_CLUSTERS {
        let (cx, cy) = vertex(config.radius, c);
        for _ in 0..config.points_per_cluster {
            let dx: f64 = noise.sample(&mut rng);
            let dy: f64 = noise.sample(&mut rng);
            points.push((cx + dx, cy + dy));
            assignment.push(c);
        }
    }
    let labels: Vec<u8> = assignment.iter().map(|&c| labeling[c]).collect();
    let concepts = enumerate_arc_concepts(&assignment, N_CLUSTERS);

    for ((concept, cut), side) in concepts.iter().zip(arc_cuts(N_CLUSTERS)).zip(arc_sides(N_CLUSTERS)) {
        let acc = midpoint_line_accuracy(&points, concept, cut, config.radius);
        if acc < MIN_REALIZATION_ACCURACY {
            return Err(Error::Generation(format!(
                "concept {} is only {:.4} linearly realizable; cluster_std {} is too large",
                arc_name(&side),
                acc,
                config.cluster_std
            )));
        }
    }

    let min = min_concepts(&concepts, &labels, REQUIRED_MIN_CONCEPTS);
    if min != Some(REQUIRED_MIN_CONCEPTS) {
        return Err(Error::Generation(format!("oracle found min_concepts {min:?}, expected 3")));
    }
    let valid = oracle_valid_combinations(&concepts, &labels, REQUIRED_MIN_CONCEPTS);

    let features: Vec<f64> = points.iter().flat_map(|&(x, y)| [x, y]).collect();
    let dataset = Dataset::new(features, n, 2, labels, vec!["x".into(), "y".into()])?;
    let catalog = GroundTruthCatalog {
        concepts: concepts
            .into_iter()
            .zip(arc_sides(N_CLUSTERS))
            .map(|(values, side)| NamedConcept { name: arc_name(&side), values })
            .collect(),
        labeling_provenance: format!(
            "cluster labels {:?}: lexicographically smallest of 64 labelings with min_concepts = 3; {} valid triples",
            labeling,
            valid.len()
        ),
        valid_combinations: valid,
        min_concepts: REQUIRED_MIN_CONCEPTS,
    };
    Ok((dataset.with_ground_truth(catalog.clone())?, catalog))
}

/// Cluster index of each point of a dataset produced by [`gen_hexagon`].
pub fn cluster_of(config: &HexagonConfig, point: usize) -> usize {
    point / config.points_per_cluster
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_concept_counts() {
        let six: Vec<usize> = (0..6).collect();
        assert_eq!(enumerate_arc_concepts(&six, 6).len(), 15);
        let four: Vec<usize> = (0..4).collect();
        assert_eq!(enumerate_arc_concepts(&four, 4).len(), 6);
    }

    #[test]
    fn arc_concepts_are_distinct_up_to_complement() {
        let six: Vec<usize> = (0..6).collect();
        let concepts = enumerate_arc_concepts(&six, 6);
        for (i, a) in concepts.iter().enumerate() {
            assert_eq!(a[0], 1, "canonical polarity puts cluster 0 on the positive side");
            for b in &concepts[i + 1..] {
                let complement: Vec<u8> = b.iter().map(|v| 1 - v).collect();
                assert_ne!(a, b);
                assert_ne!(*a, complement);
            }
        }
    }

    #[test]
    fn labeling_alternates() {
        assert_eq!(cluster_labeling(), &[0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn default_dataset_shape() {
        let (ds, cat) = gen_hexagon(&HexagonConfig::default()).unwrap();
        assert_eq!((ds.n(), ds.d()), (1200, 2));
        assert_eq!(cat.concepts.len(), 15);
        assert_eq!(cat.min_concepts, 3);
        assert_eq!(ds.ground_truth(), Some(&cat));
    }

    #[test]
    fn wide_clusters_fail_generation() {
        let cfg = HexagonConfig { cluster_std: 0.5, ..Default::default() };
        assert!(matches!(gen_hexagon(&cfg), Err(Error::Generation(_))));
        assert!(gen_hexagon(&HexagonConfig { radius: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = HexagonConfig { seed: 42, ..Default::default() };
        assert_eq!(gen_hexagon(&cfg).unwrap(), gen_hexagon(&cfg).unwrap());
        let other = HexagonConfig { seed: 43, ..Default::default() };
        assert_ne!(gen_hexagon(&cfg).unwrap().0, gen_hexagon(&other).unwrap().0);
    }
}
