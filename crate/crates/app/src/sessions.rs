//! Expert sessions: pinned concepts and the proposal sets completed around them.

use std::sync::Mutex;

use cbm_proposals::pipeline::{catalog_concept_for, PipelineConfig};
use cbm_proposals::PinnedConcept;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::store::Store;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPin {
    pub pinned: PinnedConcept,
    pub label: String,
    /// Catalog concept the pinned values reproduce, when the dataset has one.
    pub concept: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub id: String,
    pub seq: u64,
    pub dataset_id: String,
    pub config: PipelineConfig,
    pub pins: Vec<SessionPin>,
    /// Proposal artifact ids, oldest first.
    pub history: Vec<String>,
    pub jobs: Vec<String>,
}

/// Pin request body: a column plus either explicit values or a catalog concept.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinRequest {
    pub column: usize,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub concept: Option<usize>,
    #[serde(default)]
    pub label: String,
}

pub struct Sessions {
    store: Store,
    lock: Mutex<u64>,
}

impl Sessions {
    pub fn open(store: Store) -> AppResult<Self> {
        let next = store.records::<SessionState>("sessions")?.iter().map(|s| s.seq + 1).max().unwrap_or(0);
        Ok(Self { store, lock: Mutex::new(next) })
    }

    pub fn create(&self, dataset_id: &str, config: PipelineConfig) -> AppResult<SessionState> {
        config.validate()?;
        self.store.dataset(dataset_id)?;
        let mut next = self.lock.lock().expect("session lock");
        let state = SessionState {
            schema_version: SCHEMA_VERSION,
            id: format!("session-{:06}", *next),
            seq: *next,
            dataset_id: dataset_id.to_string(),
            config,
            pins: Vec::new(),
            history: Vec::new(),
            jobs: Vec::new(),
        };
        self.store.put_record("sessions", &state.id, &state)?;
        *next += 1;
        Ok(state)
    }

    pub fn get(&self, id: &str) -> AppResult<SessionState> {
        self.store.record("sessions", id)
    }

    fn modify(&self, id: &str, f: impl FnOnce(&mut SessionState) -> AppResult<()>) -> AppResult<SessionState> {
        let _guard = self.lock.lock().expect("session lock");
        let mut state = self.get(id)?;
        f(&mut state)?;
        self.store.put_record("sessions", id, &state)?;
        Ok(state)
    }

    pub fn pin(&self, id: &str, req: PinRequest) -> AppResult<SessionState> {
        let data = self.store.dataset(&self.get(id)?.dataset_id)?;
        self.modify(id, |state| {
            if req.column >= state.config.k {
                return Err(AppError::unprocessable(format!("column {} is out of range for K={}", req.column, state.config.k)));
            }
            if state.pins.iter().any(|p| p.pinned.column_index == req.column) {
                return Err(AppError::conflict(format!("column {} is already pinned", req.column)));
            }
            let values = match (req.values, req.concept) {
                (Some(v), None) => v,
                (None, Some(c)) => {
                    let catalog = data.ground_truth().ok_or_else(|| AppError::unprocessable("dataset has no concept catalog"))?;
                    let concept = catalog
                        .concepts
                        .get(c)
                        .ok_or_else(|| AppError::unprocessable(format!("catalog has no concept {c}")))?;
                    concept.values.iter().map(|&v| f64::from(v)).collect()
                }
                _ => return Err(AppError::unprocessable("give exactly one of `values` or `concept`")),
            };
            let pinned = PinnedConcept { column_index: req.column, values };
            pinned.validate(data.n(), state.config.k)?;
            let concept = data.ground_truth().and_then(|cat| catalog_concept_for(cat, &pinned.values));
            let label = if req.label.is_empty() { format!("column {}", req.column) } else { req.label };
            state.pins.push(SessionPin { pinned, label, concept });
            Ok(())
        })
    }

    pub fn add_job(&self, id: &str, job_id: &str) -> AppResult<SessionState> {
        self.modify(id, |s| {
            s.jobs.push(job_id.to_string());
            Ok(())
        })
    }

    pub fn record_proposals(&self, id: &str, proposals: &str) -> AppResult<SessionState> {
        self.modify(id, |s| {
            s.history.push(proposals.to_string());
            Ok(())
        })
    }
}
