//! Semi-synthetic early-warning data: five vitals, five threshold-breach concepts, and a label
//! that fires when at least two thresholds are breached.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::catalog::{GroundTruthCatalog, NamedConcept};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const N_VITALS: usize = 5;
pub const BREACHES_FOR_ALERT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Breach when the value exceeds the cutoff.
    High,
    /// Breach when the value falls below the cutoff.
    Low,
}

/// One vital: its breach threshold and a normal sampling distribution parameterized by the
/// target probability of breaching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalSpec {
    pub name: String,
    pub direction: Direction,
    pub cutoff: f64,
    pub std: f64,
    pub exceed_probability: f64,
}

impl VitalSpec {
    fn new(name: &str, direction: Direction, cutoff: f64, std: f64, exceed_probability: f64) -> Self {
        Self { name: name.into(), direction, cutoff, std, exceed_probability }
    }

    /// Mean that makes `P(breach) = exceed_probability`.
    pub fn mean(&self) -> f64 {
        let z = StatNormal::standard().inverse_cdf(1.0 - self.exceed_probability);
        match self.direction {
            Direction::High => self.cutoff - z * self.std,
            Direction::Low => self.cutoff + z * self.std,
        }
    }

    pub fn breached(&self, value: f64) -> bool {
        match self.direction {
            Direction::High => value > self.cutoff,
            Direction::Low => value < self.cutoff,
        }
    }

    fn concept_name(&self) -> String {
        let op = match self.direction {
            Direction::High => '>',
            Direction::Low => '<',
        };
        format!("{}{op}{}", self.name, self.cutoff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitalsConfig {
    pub n_points: usize,
    pub vitals: Vec<VitalSpec>,
    pub seed: u64,
}

impl Default for VitalsConfig {
    fn default() -> Self {
        Self {
            n_points: 2252,
            vitals: vec![
                VitalSpec::new("mean_arterial_pressure", Direction::Low, 65.0, 10.0, 0.2),
                VitalSpec::new("temperature", Direction::High, 38.5, 0.6, 0.2),
                VitalSpec::new("respiratory_rate", Direction::High, 24.0, 4.0, 0.2),
                VitalSpec::new("heart_rate", Direction::High, 110.0, 15.0, 0.2),
                VitalSpec::new("oxygen_saturation", Direction::Low, 92.0, 3.0, 0.2),
            ],
            seed: 0,
        }
    }
}

impl VitalsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::Input("vitals config field `n_points` must be positive".into()));
        }
        if self.vitals.len() != N_VITALS {
            return Err(Error::Input(format!("vitals config field `vitals` must list exactly {N_VITALS} vitals")));
        }
        for (i, v) in self.vitals.iter().enumerate() {
            if !(v.exceed_probability > 0.0 && v.exceed_probability < 1.0) {
                return Err(Error::Input(format!("vitals config field `vitals[{i}].exceed_probability` must be in (0,1)")));
            }
            if !(v.std > 0.0 && v.std.is_finite()) {
                return Err(Error::Input(format!("vitals config field `vitals[{i}].std` must be positive")));
            }
            if !v.cutoff.is_finite() {
                return Err(Error::Input(format!("vitals config field `vitals[{i}].cutoff` must be finite")));
            }
        }
        Ok(())
    }
}

/// Breach indicators for every point, one vector per vital.
pub fn breach_concepts(config: &VitalsConfig, data: &Dataset) -> Vec<Vec<u8>> {
    config
        .vitals
        .iter()
        .enumerate()
        .map(|(j, v)| (0..data.n()).map(|i| u8::from(v.breached(data.row(i)[j]))).collect())
        .collect()
}

pub fn gen_vitals(config: &VitalsConfig) -> Result<(Dataset, GroundTruthCatalog)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dists: Vec<Normal<f64>> = config
        .vitals
        .iter()
        .map(|v| Normal::new(v.mean(), v.std).map_err(|e| Error::Input(e.to_string())))
        .collect::<Result<_>>()?;

    let n = config.n_points;
    let mut features = Vec::with_capacity(n * N_VITALS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut breaches = 0;
        for (v, dist) in config.vitals.iter().zip(&dists) {
            let x = dist.sample(&mut rng);
            breaches += usize::from(v.breached(x));
            features.push(x);
        }
        labels.push(u8::from(breaches >= BREACHES_FOR_ALERT));
    }
    let names = config.vitals.iter().map(|v| v.name.clone()).collect();
    let dataset = Dataset::new(features, n, N_VITALS, labels, names)?;

    let concepts = breach_concepts(config, &dataset);
    for (v, c) in config.vitals.iter().zip(&concepts) {
        let fired = c.iter().filter(|&&b| b == 1).count();
        if fired == 0 || fired == n {
            return Err(Error::Generation(format!("concept {} is constant across the generated set", v.concept_name())));
        }
    }
    let catalog = GroundTruthCatalog {
        concepts: config
            .vitals
            .iter()
            .zip(concepts)
            .map(|(v, values)| NamedConcept { name: v.concept_name(), values })
            .collect(),
        valid_combinations: vec![(0..N_VITALS).collect()],
        min_concepts: N_VITALS,
        labeling_provenance: format!("label = at least {BREACHES_FOR_ALERT} of {N_VITALS} thresholds breached"),
    };
    Ok((dataset.with_ground_truth(catalog.clone())?, catalog))
}
