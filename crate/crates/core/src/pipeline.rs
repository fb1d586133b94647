//! The two-stage proposal pipeline: sample → filter → select → evaluate.

use serde::{Deserialize, Serialize};

use crate::catalog::GroundTruthCatalog;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{coverage_report, CoverageMode, MatchReport, Proposals, TableRow, DEFAULT_F1_THRESHOLD};
use crate::hmc::HmcConfig;
use crate::metrics::MetricKind;
use crate::model::{PinnedConcept, PriorSpec};
use crate::par::Execution;
use crate::sampler::{filter_predictive, run_restarts_with, ProposalPool, DEFAULT_T_ACC};
use crate::select::{select_with, split_to_singles, ProposalSet, SelectionMethod};

/// What the selected proposals are and how they are scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ProposalMode {
    /// Whole concept sets.
    Sets,
    /// Individual concepts split out of the sets.
    Singles,
    /// Concept sets sampled with catalog concept `concept` pinned at `column`.
    Conditional { concept: usize, column: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub prior: PriorSpec,
    pub hmc: HmcConfig,
    pub t_acc: f64,
    pub method: SelectionMethod,
    pub metric: MetricKind,
    #[serde(rename = "M")]
    pub m: usize,
    pub selection_seed: u64,
    pub mode: ProposalMode,
    /// Z-score features before sampling.
    pub standardize: bool,
    pub f1_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            prior: PriorSpec::default(),
            hmc: HmcConfig::default(),
            t_acc: DEFAULT_T_ACC,
            method: SelectionMethod::Greedy,
            metric: MetricKind::Euclidean,
            m: 20,
            selection_seed: 0,
            mode: ProposalMode::Sets,
            standardize: false,
            f1_threshold: DEFAULT_F1_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Input("pipeline config field `k` must be positive".into()));
        }
        if self.m == 0 {
            return Err(Error::Input("pipeline config field `M` must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.f1_threshold) {
            return Err(Error::Input("pipeline config field `f1_threshold` must be in [0,1]".into()));
        }
        if self.method == SelectionMethod::Kmeans && !matches!(self.metric, MetricKind::Euclidean | MetricKind::Cosine) {
            return Err(Error::UnsupportedMetric(self.metric));
        }
        if let ProposalMode::Conditional { column, .. } = self.mode {
            if column >= self.k {
                return Err(Error::Input(format!("pipeline config field `mode.column` must be < k ({})", self.k)));
            }
        }
        self.prior.validate()?;
        self.hmc.validate()
    }
}

/// Sampler settings that mix well enough on the hexagon data for chains to settle in different
/// explanations: a longer leapfrog trajectory than the library default and a wide label prior.
pub fn hexagon_preset(seed: u64) -> PipelineConfig {
    PipelineConfig {
        k: 3,
        prior: PriorSpec { std_theta: 1.0, std_phi: 10.0 },
        hmc: HmcConfig {
            step_size: 0.01,
            leapfrog_steps: 20,
            burn_in_steps: 600,
            samples_per_restart: 100,
            restarts: 10,
            seed,
            thinning: 1,
        },
        selection_seed: seed,
        ..Default::default()
    }
}

/// Five concepts on z-scored vitals, 10 draws from each of 10 restarts.
pub fn vitals_preset(seed: u64) -> PipelineConfig {
    let mut cfg = hexagon_preset(seed);
    cfg.k = 5;
    cfg.standardize = true;
    cfg.hmc.samples_per_restart = 10;
    cfg
}

pub fn model_dataset(data: &Dataset, standardize: bool) -> Dataset {
    if standardize {
        data.standardized()
    } else {
        data.clone()
    }
}

/// The pinned concept for a conditional run.
pub fn pinned_from_catalog(catalog: &GroundTruthCatalog, concept: usize, column: usize) -> Result<PinnedConcept> {
    let c = catalog
        .concepts
        .get(concept)
        .ok_or_else(|| Error::Input(format!("catalog has no concept {concept}")))?;
    Ok(PinnedConcept { column_index: column, values: c.values.iter().map(|&v| f64::from(v)).collect() })
}

/// Samples and filters a pool for `config` on an already-prepared model dataset.
pub fn sample_pool(
    model_data: &Dataset,
    config: &PipelineConfig,
    exec: Execution,
    on_chain_done: &(dyn Fn(usize) + Sync),
) -> Result<ProposalPool> {
    let pinned = match config.mode {
        ProposalMode::Conditional { concept, column } => {
            let catalog = model_data
                .ground_truth()
                .ok_or_else(|| Error::Input("conditional sampling on a catalog concept needs ground truth".into()))?;
            Some(pinned_from_catalog(catalog, concept, column)?)
        }
        _ => None,
    };
    sample_pool_pinned(model_data, config, pinned.as_ref(), exec, on_chain_done)
}

/// Like [`sample_pool`] but with an explicit pinned column, which need not come from a catalog.
/// `config.mode` is ignored.
pub fn sample_pool_pinned(
    model_data: &Dataset,
    config: &PipelineConfig,
    pinned: Option<&PinnedConcept>,
    exec: Execution,
    on_chain_done: &(dyn Fn(usize) + Sync),
) -> Result<ProposalPool> {
    let raw = run_restarts_with(model_data, config.k, &config.prior, &config.hmc, pinned, exec, on_chain_done)?;
    Ok(filter_predictive(&raw, config.t_acc))
}

/// Catalog concept whose values, or their complement, equal `values` exactly.
pub fn catalog_concept_for(catalog: &GroundTruthCatalog, values: &[f64]) -> Option<usize> {
    catalog.concepts.iter().position(|c| {
        c.values.len() == values.len()
            && (c.values.iter().zip(values).all(|(&a, &b)| f64::from(a) == b)
                || c.values.iter().zip(values).all(|(&a, &b)| f64::from(1 - a) == b))
    })
}

/// Candidates a selection runs over: whole activation matrices, or split single concepts.
pub struct Candidates {
    pub items: Vec<Vec<f64>>,
    pub singles: Option<Vec<crate::select::SingleConceptProposal>>,
}

pub fn candidates(pool: &ProposalPool, singles: bool) -> Candidates {
    if singles {
        let s = split_to_singles(pool);
        Candidates { items: s.iter().map(|p| p.activation.clone()).collect(), singles: Some(s) }
    } else {
        Candidates { items: pool.samples.iter().map(|s| s.activations.data.clone()).collect(), singles: None }
    }
}

pub fn select_from(
    cands: &Candidates,
    method: SelectionMethod,
    metric: MetricKind,
    m: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProposalSet> {
    if cands.items.is_empty() {
        return Ok(ProposalSet {
            method,
            metric,
            m,
            seed,
            member_ids: Vec::new(),
            origins: Vec::new(),
            truncated: true,
        });
    }
    let set = select_with(method, &cands.items, m, metric, seed, exec)?;
    Ok(match &cands.singles {
        Some(s) => set.with_single_origins(s),
        None => set.with_sample_origins(),
    })
}

pub fn coverage_mode(mode: &ProposalMode) -> CoverageMode {
    match *mode {
        ProposalMode::Sets => CoverageMode::Explanations,
        ProposalMode::Singles => CoverageMode::Singles,
        ProposalMode::Conditional { concept, .. } => CoverageMode::Completions { pinned: vec![concept] },
    }
}

/// Scores a selection made over `cands` from `pool`.
pub fn evaluate_selection(
    pool: &ProposalPool,
    cands: &Candidates,
    set: &ProposalSet,
    catalog: &GroundTruthCatalog,
    mode: &ProposalMode,
    threshold: f64,
) -> Result<MatchReport> {
    let proposals = match &cands.singles {
        Some(_) => Proposals::Singles(set.member_ids.iter().map(|&i| cands.items[i].as_slice()).collect()),
        None => Proposals::Sets(set.member_ids.iter().map(|&i| &pool.samples[i].activations).collect()),
    };
    coverage_report(&proposals, catalog, &coverage_mode(mode), threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub dataset_hash: String,
    pub pool_drawn: usize,
    pub pool_size: usize,
    pub proposals: ProposalSet,
    pub report: Option<MatchReport>,
}

pub struct PipelineOutput {
    pub model_data: Dataset,
    pub pool: ProposalPool,
    pub proposals: ProposalSet,
    pub report: PipelineReport,
}

pub fn run_pipeline(data: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_with(data, config, Execution::default(), &|_| {})
}

pub fn run_pipeline_with(
    data: &Dataset,
    config: &PipelineConfig,
    exec: Execution,
    on_chain_done: &(dyn Fn(usize) + Sync),
) -> Result<PipelineOutput> {
    config.validate()?;
    let model_data = model_dataset(data, config.standardize);
    let pool = sample_pool(&model_data, config, exec, on_chain_done)?;
    let cands = candidates(&pool, config.mode == ProposalMode::Singles);
    let proposals = select_from(&cands, config.method, config.metric, config.m, config.selection_seed, exec)?;
    let report = match model_data.ground_truth() {
        Some(catalog) => Some(evaluate_selection(&pool, &cands, &proposals, catalog, &config.mode, config.f1_threshold)?),
        None => None,
    };
    let report = PipelineReport {
        schema_version: crate::dataset::SCHEMA_VERSION,
        config: config.clone(),
        dataset_hash: model_data.content_hash(),
        pool_drawn: pool.provenance.drawn,
        pool_size: pool.len(),
        proposals: proposals.clone(),
        report,
    };
    Ok(PipelineOutput { model_data, pool, proposals, report })
}

/// The six method/metric pairs compared in the result tables.
pub const METHOD_GRID: [(SelectionMethod, MetricKind); 6] = [
    (SelectionMethod::Greedy, MetricKind::Absolute),
    (SelectionMethod::Greedy, MetricKind::PercentDisagreement),
    (SelectionMethod::Greedy, MetricKind::Euclidean),
    (SelectionMethod::Greedy, MetricKind::Cosine),
    (SelectionMethod::Kmeans, MetricKind::Euclidean),
    (SelectionMethod::Kmeans, MetricKind::Cosine),
];

/// Runs every method in [`METHOD_GRID`] on one pool.
pub fn evaluate_grid(
    pool: &ProposalPool,
    catalog: &GroundTruthCatalog,
    mode: &ProposalMode,
    m: usize,
    seed: u64,
    threshold: f64,
    exec: Execution,
) -> Result<Vec<(SelectionMethod, MetricKind, MatchReport)>> {
    let cands = candidates(pool, *mode == ProposalMode::Singles);
    METHOD_GRID
        .iter()
        .map(|&(method, metric)| {
            let set = select_from(&cands, method, metric, m, seed, exec)?;
            let rep = evaluate_selection(pool, &cands, &set, catalog, mode, threshold)?;
            Ok((method, metric, rep))
        })
        .collect()
}

pub fn table_rows(results: &[(SelectionMethod, MetricKind, MatchReport)], min_m: bool) -> Vec<TableRow> {
    results
        .iter()
        .map(|(method, metric, rep)| TableRow {
            method: *method,
            metric: *metric,
            value: if min_m {
                rep.min_m.map_or_else(|| "none".to_string(), |m| m.to_string())
            } else {
                rep.fraction()
            },
        })
        .collect()
}
