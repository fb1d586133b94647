//! Job records, their blocking executors, and the FIFO worker pool.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use cbm_proposals::pipeline::{
    candidates, catalog_concept_for, evaluate_selection, model_dataset, pinned_from_catalog, sample_pool_pinned,
    select_from, PipelineConfig, ProposalMode,
};
use cbm_proposals::{Dataset, Execution, PinnedConcept, ProposalPool, ProposalSet};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Notify;

use crate::error::{AppError, AppResult};
use crate::sessions::Sessions;
use crate::store::Store;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Sample,
    Select,
    Evaluate,
    ConditionalSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

/// Everything needed to rerun a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub kind: JobKind,
    pub dataset_id: String,
    #[serde(default)]
    pub config: PipelineConfig,
    /// Pool artifact to select from (`select`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_ref: Option<String>,
    /// Proposals artifact to score (`evaluate`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals_ref: Option<String>,
    /// Explicit pinned column for `sample` and `conditional_sample`; overrides a conditional `config.mode`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned: Option<PinnedConcept>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub seq: u64,
    pub kind: JobKind,
    pub state: JobState,
    pub request: JobRequest,
    pub progress: f64,
    pub result_ref: Option<String>,
    pub error: Option<String>,
    pub created_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Pool artifact: the filtered pool archive plus what produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub dataset_id: String,
    pub config: PipelineConfig,
    pub archive: Value,
}

/// Proposals artifact: a selection over a stored pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalsArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub dataset_id: String,
    pub pool_ref: String,
    pub config: PipelineConfig,
    pub singles: bool,
    pub set: ProposalSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub dataset_id: String,
    pub proposals_ref: String,
    pub report: cbm_proposals::eval::MatchReport,
}

pub fn validate_request(store: &Store, req: &JobRequest) -> AppResult<()> {
    req.config.validate()?;
    let data = store.dataset(&req.dataset_id)?;
    match req.kind {
        JobKind::Select if req.pool_ref.is_none() => {
            return Err(AppError::unprocessable("select jobs need `pool_ref`"));
        }
        JobKind::Evaluate if req.proposals_ref.is_none() => {
            return Err(AppError::unprocessable("evaluate jobs need `proposals_ref`"));
        }
        JobKind::Evaluate if data.ground_truth().is_none() => {
            return Err(AppError::unprocessable("evaluate jobs need a dataset with ground truth"));
        }
        JobKind::ConditionalSample if pinned_for(&data, req)?.is_none() => {
            return Err(AppError::unprocessable("conditional_sample jobs need `pinned` or a conditional `config.mode`"));
        }
        _ => {}
    }
    if let Some(p) = pinned_for(&data, req)? {
        p.validate(data.n(), req.config.k)?;
    }
    Ok(())
}

fn pinned_for(data: &Dataset, req: &JobRequest) -> AppResult<Option<PinnedConcept>> {
    if let Some(p) = &req.pinned {
        return Ok(Some(p.clone()));
    }
    match req.config.mode {
        ProposalMode::Conditional { concept, column } => {
            let catalog = data
                .ground_truth()
                .ok_or_else(|| AppError::unprocessable("a conditional `config.mode` needs a dataset with ground truth"))?;
            Ok(Some(pinned_from_catalog(catalog, concept, column)?))
        }
        _ => Ok(None),
    }
}

fn load_pool(store: &Store, pool_ref: &str) -> AppResult<(PoolArtifact, Dataset, ProposalPool)> {
    let art: PoolArtifact = store.artifact(pool_ref)?;
    let data = store.dataset(&art.dataset_id)?;
    let model_data = model_dataset(&data, art.config.standardize);
    let pool = ProposalPool::from_archive_json(&art.archive.to_string(), &model_data)?;
    Ok((art, model_data, pool))
}

/// Loads a proposals artifact with its pool and the model-space dataset it was drawn on.
pub fn load_proposals(store: &Store, id: &str) -> AppResult<(ProposalsArtifact, Dataset, ProposalPool)> {
    let props: ProposalsArtifact = store.artifact(id)?;
    let (_, model_data, pool) = load_pool(store, &props.pool_ref)?;
    Ok((props, model_data, pool))
}

fn store_pool(store: &Store, req: &JobRequest, model_data: &Dataset, pool: &ProposalPool) -> AppResult<String> {
    let archive: Value = serde_json::from_str(&pool.to_archive_json(model_data)?).map_err(AppError::internal)?;
    store.put_artifact(&PoolArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "pool".into(),
        dataset_id: req.dataset_id.clone(),
        config: req.config.clone(),
        archive,
    })
}

fn store_selection(store: &Store, req: &JobRequest, pool_ref: &str, pool: &ProposalPool) -> AppResult<String> {
    let singles = req.config.mode == ProposalMode::Singles;
    let cands = candidates(pool, singles);
    let set = select_from(&cands, req.config.method, req.config.metric, req.config.m, req.config.selection_seed, Execution::default())?;
    store.put_artifact(&ProposalsArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "proposals".into(),
        dataset_id: req.dataset_id.clone(),
        pool_ref: pool_ref.to_string(),
        config: req.config.clone(),
        singles,
        set,
    })
}

/// Coverage mode for scoring a stored selection, given the pool's pinned column if any.
pub fn report_mode(data: &Dataset, singles: bool, pinned: Option<&PinnedConcept>) -> ProposalMode {
    if singles {
        return ProposalMode::Singles;
    }
    match (pinned, data.ground_truth()) {
        (Some(p), Some(cat)) => match catalog_concept_for(cat, &p.values) {
            Some(concept) => ProposalMode::Conditional { concept, column: p.column_index },
            None => ProposalMode::Sets,
        },
        _ => ProposalMode::Sets,
    }
}

pub fn score_proposals(store: &Store, id: &str) -> AppResult<Option<cbm_proposals::eval::MatchReport>> {
    let (props, model_data, pool) = load_proposals(store, id)?;
    let Some(catalog) = model_data.ground_truth() else {
        return Ok(None);
    };
    let cands = candidates(&pool, props.singles);
    let mode = report_mode(&model_data, props.singles, pool.pinned.as_ref());
    Ok(Some(evaluate_selection(&pool, &cands, &props.set, catalog, &mode, props.config.f1_threshold)?))
}

/// Runs a job to completion on the calling thread and returns its result artifact id.
pub fn execute(store: &Store, req: &JobRequest, progress: &(dyn Fn(f64) + Sync)) -> AppResult<String> {
    let restarts = req.config.hmc.restarts.max(1) as f64;
    let on_chain = |done: usize| progress(done as f64 / restarts);
    match req.kind {
        JobKind::Sample | JobKind::ConditionalSample => {
            let data = store.dataset(&req.dataset_id)?;
            let pinned = pinned_for(&data, req)?;
            let model_data = model_dataset(&data, req.config.standardize);
            let pool = sample_pool_pinned(&model_data, &req.config, pinned.as_ref(), Execution::default(), &on_chain)?;
            let pool_ref = store_pool(store, req, &model_data, &pool)?;
            if req.kind == JobKind::Sample {
                return Ok(pool_ref);
            }
            store_selection(store, req, &pool_ref, &pool)
        }
        JobKind::Select => {
            let pool_ref = req.pool_ref.as_deref().unwrap_or_default();
            let (_, _, pool) = load_pool(store, pool_ref)?;
            store_selection(store, req, pool_ref, &pool)
        }
        JobKind::Evaluate => {
            let proposals_ref = req.proposals_ref.as_deref().unwrap_or_default();
            let report = score_proposals(store, proposals_ref)?
                .ok_or_else(|| AppError::unprocessable("dataset has no ground truth to evaluate against"))?;
            store.put_artifact(&ReportArtifact {
                schema_version: SCHEMA_VERSION,
                kind: "report".into(),
                dataset_id: req.dataset_id.clone(),
                proposals_ref: proposals_ref.to_string(),
                report,
            })
        }
    }
}

/// Synchronized in-memory view of the job records, mirrored to disk on every transition.
pub struct Registry {
    store: Store,
    jobs: Mutex<BTreeMap<String, Job>>,
    queue: Mutex<VecDeque<String>>,
    wake: Notify,
    next_seq: Mutex<u64>,
}

impl Registry {
    /// Rebuilds the registry from disk. Queued jobs are requeued in submission order; jobs that
    /// were running when the process stopped are marked failed.
    pub fn open(store: Store) -> AppResult<Arc<Self>> {
        let mut records: Vec<Job> = store.records("jobs")?;
        records.sort_by_key(|j| j.seq);
        let next_seq = records.last().map_or(0, |j| j.seq + 1);
        let mut queue = VecDeque::new();
        for job in &mut records {
            match job.state {
                JobState::Queued => queue.push_back(job.id.clone()),
                JobState::Running => {
                    job.state = JobState::Failed;
                    job.error = Some("interrupted by a service restart".into());
                    job.finished_ms = Some(now_ms());
                    store.put_record("jobs", &job.id, job)?;
                }
                _ => {}
            }
        }
        let jobs = records.into_iter().map(|j| (j.id.clone(), j)).collect();
        Ok(Arc::new(Self {
            store,
            jobs: Mutex::new(jobs),
            queue: Mutex::new(queue),
            wake: Notify::new(),
            next_seq: Mutex::new(next_seq),
        }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn submit(&self, request: JobRequest) -> AppResult<Job> {
        validate_request(&self.store, &request)?;
        let seq = {
            let mut next = self.next_seq.lock().expect("registry lock");
            let s = *next;
            *next += 1;
            s
        };
        let job = Job {
            id: format!("job-{seq:06}"),
            seq,
            kind: request.kind,
            state: JobState::Queued,
            request,
            progress: 0.0,
            result_ref: None,
            error: None,
            created_ms: now_ms(),
            started_ms: None,
            finished_ms: None,
        };
        self.store.put_record("jobs", &job.id, &job)?;
        self.jobs.lock().expect("registry lock").insert(job.id.clone(), job.clone());
        self.queue.lock().expect("registry lock").push_back(job.id.clone());
        self.wake.notify_one();
        Ok(job)
    }

    pub fn get(&self, id: &str) -> AppResult<Job> {
        self.jobs
            .lock()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| AppError::not_found(format!("no job with id {id:?}")))
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) -> AppResult<Job> {
        let job = {
            let mut jobs = self.jobs.lock().expect("registry lock");
            let job = jobs.get_mut(id).ok_or_else(|| AppError::not_found(format!("no job with id {id:?}")))?;
            f(job);
            job.clone()
        };
        self.store.put_record("jobs", id, &job)?;
        Ok(job)
    }

    fn set_progress(&self, id: &str, progress: f64) {
        if let Some(job) = self.jobs.lock().expect("registry lock").get_mut(id) {
            job.progress = progress;
        }
    }

    async fn next(&self) -> String {
        loop {
            let notified = self.wake.notified();
            if let Some(id) = self.queue.lock().expect("registry lock").pop_front() {
                return id;
            }
            notified.await;
        }
    }

    /// Runs one job: queued → running → done | failed.
    async fn run(self: &Arc<Self>, id: String, sessions: &Sessions) {
        let job = match self.update(&id, |j| {
            j.state = JobState::Running;
            j.started_ms = Some(now_ms());
        }) {
            Ok(job) => job,
            Err(e) => {
                log::error!("cannot start {id}: {e}");
                return;
            }
        };
        let this = Arc::clone(self);
        let req = job.request.clone();
        let jid = id.clone();
        let outcome = tokio::task::spawn_blocking(move || {
            let progress = |p: f64| this.set_progress(&jid, p);
            execute(&this.store, &req, &progress)
        })
        .await
        .unwrap_or_else(|e| Err(AppError::internal(format!("job panicked: {e}"))));

        let result = self.update(&id, |j| {
            j.finished_ms = Some(now_ms());
            match &outcome {
                Ok(artifact) => {
                    j.state = JobState::Done;
                    j.progress = 1.0;
                    j.result_ref = Some(artifact.clone());
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.error = Some(e.message.clone());
                }
            }
        });
        if let Err(e) = result {
            log::error!("cannot record outcome of {id}: {e}");
        }
        if let (Ok(artifact), Some(session)) = (&outcome, &job.request.session_id) {
            if job.kind == JobKind::ConditionalSample {
                if let Err(e) = sessions.record_proposals(session, artifact) {
                    log::error!("cannot append {artifact} to session {session}: {e}");
                }
            }
        }
    }
}

/// Starts `workers` tasks that drain the queue in FIFO order.
pub fn spawn_workers(registry: Arc<Registry>, sessions: Arc<Sessions>, workers: usize) {
    for _ in 0..workers.max(1) {
        let registry = Arc::clone(&registry);
        let sessions = Arc::clone(&sessions);
        tokio::spawn(async move {
            loop {
                let id = registry.next().await;
                registry.run(id, &sessions).await;
            }
        });
    }
}
