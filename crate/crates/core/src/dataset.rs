//! Labeled datasets and their on-disk formats.
//!
//! The JSON layout is `{schema_version, feature_names, features, labels, ground_truth?}` with
//! `features` as a list of rows. CSV import expects a header row whose last column is the label.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::GroundTruthCatalog;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Feature matrix `[N × D]` (row-major) with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    ground_truth: Option<GroundTruthCatalog>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    feature_names: Vec<String>,
    features: Vec<Vec<f64>>,
    labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruthCatalog>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n: usize,
        d: usize,
        labels: Vec<u8>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Input(format!("dataset must have N >= 1 and D >= 1, got N={n}, D={d}")));
        }
        if features.len() != n * d {
            return Err(Error::Shape(format!(
                "feature buffer has {} entries, expected {n}x{d}",
                features.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if feature_names.len() != d {
            return Err(Error::Shape(format!("{} feature names for D={d}", feature_names.len())));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Input(format!("label at row {i} is {}, expected 0 or 1", labels[i])));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite feature at row {}, column {}", i / d, i % d)));
        }
        Ok(Self { n, d, features, labels, feature_names, ground_truth: None })
    }

    /// Builds a dataset from rows, naming features `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!("row {i} has {} columns, expected {d}", rows[i].len())));
        }
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Self::new(rows.concat(), rows.len(), d, labels, names)
    }

    pub fn with_ground_truth(mut self, catalog: GroundTruthCatalog) -> Result<Self> {
        catalog.check_len(self.n)?;
        self.ground_truth = Some(catalog);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn ground_truth(&self) -> Option<&GroundTruthCatalog> {
        self.ground_truth.as_ref()
    }

    /// Z-scores every feature column. Constant columns are centered but not scaled.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        for j in 0..self.d {
            let mean = (0..self.n).map(|i| self.features[i * self.d + j]).sum::<f64>() / self.n as f64;
            let var = (0..self.n)
                .map(|i| (self.features[i * self.d + j] - mean).powi(2))
                .sum::<f64>()
                / self.n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.n {
                out.features[i * self.d + j] = (self.features[i * self.d + j] - mean) / sd;
            }
        }
        out
    }

    /// SHA-256 over dimensions, features and labels; stable across platforms.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for v in &self.features {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.labels);
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            schema_version: SCHEMA_VERSION,
            feature_names: self.feature_names.clone(),
            features: self.features.chunks(self.d).map(<[f64]>::to_vec).collect(),
            labels: self.labels.clone(),
            ground_truth: self.ground_truth.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Input(format!("unsupported schema_version {}", file.schema_version)));
        }
        let n = file.features.len();
        let d = file.feature_names.len();
        if let Some(i) = file.features.iter().position(|r| r.len() != d) {
            return Err(Error::Shape(format!("row {i} has {} columns, expected {d}", file.features[i].len())));
        }
        let ds = Self::new(file.features.concat(), n, d, file.labels, file.feature_names)?;
        match file.ground_truth {
            Some(gt) => ds.with_ground_truth(gt),
            None => Ok(ds),
        }
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(Error::Input("CSV needs at least one feature column and a label column".into()));
        }
        let d = headers.len() - 1;
        let names = headers.iter().take(d).map(str::to_owned).collect();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for j in 0..d {
                let v: f64 = rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Input(format!("row {i}, column {j}: not a number: {:?}", &rec[j])))?;
                features.push(v);
            }
            let y: u8 = rec[d]
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("row {i}: label {:?} is not 0 or 1", &rec[d])))?;
            labels.push(y);
        }
        let n = labels.len();
        Self::new(features, n, d, labels, names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            Self::from_csv_reader(std::fs::File::open(path)?)
        } else {
            Self::from_json(&std::fs::read_to_string(path)?)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
