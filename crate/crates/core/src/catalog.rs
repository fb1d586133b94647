use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedConcept {
    pub name: String,
    pub values: Vec<u8>,
}

/// Enumerated ground-truth concepts and the combinations of them that explain the labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthCatalog {
    pub concepts: Vec<NamedConcept>,
    pub valid_combinations: Vec<Vec<usize>>,
    pub min_concepts: usize,
    #[serde(default)]
    pub labeling_provenance: String,
}

impl GroundTruthCatalog {
    pub fn n_points(&self) -> usize {
        self.concepts.first().map_or(0, |c| c.values.len())
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        for c in &self.concepts {
            if c.values.len() != n {
                return Err(Error::Shape(format!(
                    "concept {:?} has {} values, dataset has {n} rows",
                    c.name,
                    c.values.len()
                )));
            }
            if c.values.iter().any(|&v| v > 1) {
                return Err(Error::Input(format!("concept {:?} is not binary", c.name)));
            }
        }
        for combo in &self.valid_combinations {
            if let Some(&bad) = combo.iter().find(|&&i| i >= self.concepts.len()) {
                return Err(Error::Input(format!("valid combination references unknown concept {bad}")));
            }
        }
        Ok(())
    }

    /// Index of the concept named `name`.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.name == name)
    }

    /// Concepts that appear in at least one valid combination, ascending.
    pub fn useful_concepts(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.valid_combinations.iter().flatten().copied().collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cat: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cat.check_len(cat.n_points())?;
        Ok(cat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}
