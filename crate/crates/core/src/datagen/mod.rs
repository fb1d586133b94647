//! Synthetic datasets with known ground-truth concepts.

pub mod hexagon;
pub mod separability;
pub mod vitals;

use itertools::Itertools;

use crate::catalog::GroundTruthCatalog;

pub use hexagon::{gen_hexagon, HexagonConfig};
pub use separability::linearly_separable;
pub use vitals::{gen_vitals, Direction, VitalSpec, VitalsConfig};

fn combination_explains(concepts: &[Vec<u8>], combo: &[usize], labels: &[u8]) -> bool {
    let codes: Vec<Vec<u8>> = (0..labels.len()).map(|n| combo.iter().map(|&c| concepts[c][n]).collect()).collect();
    let targets: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
    linearly_separable(&codes, &targets)
}

/// All `set_size`-subsets of `concepts` (lexicographic order) from whose values the labels are
/// linearly separable.
pub fn oracle_valid_combinations(concepts: &[Vec<u8>], labels: &[u8], set_size: usize) -> Vec<Vec<usize>> {
    (0..concepts.len())
        .combinations(set_size)
        .filter(|combo| combination_explains(concepts, combo, labels))
        .collect()
}

/// [`oracle_valid_combinations`] over a catalog's concepts.
pub fn oracle_for_catalog(catalog: &GroundTruthCatalog, labels: &[u8], set_size: usize) -> Vec<Vec<usize>> {
    let concepts: Vec<Vec<u8>> = catalog.concepts.iter().map(|c| c.values.clone()).collect();
    oracle_valid_combinations(&concepts, labels, set_size)
}

/// Smallest combination size, up to `max_size`, that explains the labels.
pub fn min_concepts(concepts: &[Vec<u8>], labels: &[u8], max_size: usize) -> Option<usize> {
    (1..=max_size).find(|&s| (0..concepts.len()).combinations(s).any(|c| combination_explains(concepts, &c, labels)))
}
