//! F1-based matching of proposals against ground-truth concepts and coverage reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::GroundTruthCatalog;
use crate::error::{Error, Result};
use crate::metrics::{round_activation, MetricKind};
use crate::model::Matrix;
use crate::select::SelectionMethod;

pub const DEFAULT_F1_THRESHOLD: f64 = 0.9;

/// Confusion counts with 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pred: impl IntoIterator<Item = u8>, truth: impl IntoIterator<Item = u8>) -> Self {
        let mut c = Confusion::default();
        for (p, t) in pred.into_iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    /// `2TP / (2TP + FP + FN)`; 1.0 when all three are zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// F1 of a binary prediction against a binary truth that has at least one positive.
pub fn f1_binary(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("prediction has {} entries, truth has {}", pred.len(), truth.len())));
    }
    if !truth.contains(&1) {
        return Err(Error::Degenerate("F1 is undefined for an all-negative truth vector".into()));
    }
    Ok(Confusion::from_pairs(pred.iter().copied(), truth.iter().copied()).f1())
}

pub fn round_all(activation: &[f64]) -> Vec<u8> {
    activation.iter().map(|&v| round_activation(v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatch {
    pub concept: usize,
    pub f1: f64,
    /// The complement of the proposal is what matches the concept.
    pub negated: bool,
}

/// F1 of the proposal and of its complement against every catalog concept, in
/// `(concept, negated)` order.
fn scores(rounded: &[u8], catalog: &GroundTruthCatalog) -> Vec<ConceptMatch> {
    let mut out = Vec::with_capacity(2 * catalog.concepts.len());
    for (i, c) in catalog.concepts.iter().enumerate() {
        if !c.values.contains(&1) {
            continue;
        }
        let direct = Confusion::from_pairs(rounded.iter().copied(), c.values.iter().copied()).f1();
        let flipped = Confusion::from_pairs(rounded.iter().map(|v| 1 - v), c.values.iter().copied()).f1();
        out.push(ConceptMatch { concept: i, f1: direct, negated: false });
        out.push(ConceptMatch { concept: i, f1: flipped, negated: true });
    }
    out
}

/// Best catalog match for a single activation vector if its F1 reaches `threshold`.
/// Ties go to the lower concept index, then to the non-negated match.
pub fn match_single(activation: &[f64], catalog: &GroundTruthCatalog, threshold: f64) -> Option<ConceptMatch> {
    if activation.len() != catalog.n_points() {
        return None;
    }
    let rounded = round_all(activation);
    let mut best: Option<ConceptMatch> = None;
    for m in scores(&rounded, catalog) {
        if m.f1 >= threshold && best.map_or(true, |b| m.f1 > b.f1) {
            best = Some(m);
        }
    }
    best
}

/// Catalog concepts each column matches (either polarity) at `threshold`.
fn column_candidates(activations: &Matrix, catalog: &GroundTruthCatalog, threshold: f64) -> Vec<Vec<usize>> {
    (0..activations.cols)
        .map(|k| {
            let rounded = round_all(&activations.column(k));
            let mut c: Vec<usize> =
                scores(&rounded, catalog).into_iter().filter(|m| m.f1 >= threshold).map(|m| m.concept).collect();
            c.dedup();
            c
        })
        .collect()
}

fn injective_images(candidates: &[Vec<usize>], chosen: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
    if chosen.len() == candidates.len() {
        let mut image = chosen.clone();
        image.sort_unstable();
        out.insert(image);
        return;
    }
    for &c in &candidates[chosen.len()] {
        if !chosen.contains(&c) {
            chosen.push(c);
            injective_images(candidates, chosen, out);
            chosen.pop();
        }
    }
}

/// Sorted concept sets reachable by matching every column to a distinct catalog concept.
pub fn perfect_matchings(activations: &Matrix, catalog: &GroundTruthCatalog, threshold: f64) -> BTreeSet<Vec<usize>> {
    let candidates = column_candidates(activations, catalog, threshold);
    let mut out = BTreeSet::new();
    if candidates.iter().all(|c| !c.is_empty()) {
        injective_images(&candidates, &mut Vec::new(), &mut out);
    }
    out
}

/// Lowest valid-combination id whose concepts the proposal's columns match one-to-one.
pub fn match_explanation(activations: &Matrix, catalog: &GroundTruthCatalog, threshold: f64) -> Option<usize> {
    if activations.rows != catalog.n_points() {
        return None;
    }
    let images = perfect_matchings(activations, catalog, threshold);
    catalog.valid_combinations.iter().position(|combo| {
        let mut sorted = combo.clone();
        sorted.sort_unstable();
        images.contains(&sorted)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum CoverageMode {
    Explanations,
    Singles,
    /// Valid combinations containing every pinned catalog concept.
    Completions { pinned: Vec<usize> },
}

/// Proposals in emission order.
pub enum Proposals<'a> {
    Sets(Vec<&'a Matrix>),
    Singles(Vec<&'a [f64]>),
}

impl Proposals<'_> {
    pub fn len(&self) -> usize {
        match self {
            Proposals::Sets(v) => v.len(),
            Proposals::Singles(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalMatch {
    pub proposal: usize,
    pub concept: Option<usize>,
    pub f1: Option<f64>,
    pub negated: bool,
    pub combination: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    #[serde(flatten)]
    pub mode: CoverageMode,
    pub threshold: f64,
    pub matches: Vec<ProposalMatch>,
    pub explanations_found: BTreeSet<usize>,
    pub concepts_found: BTreeSet<usize>,
    /// Smallest prefix of the proposals containing a target explanation.
    #[serde(rename = "min_M")]
    pub min_m: Option<usize>,
    /// What was found, out of `eligible`.
    pub found: usize,
    pub eligible: usize,
}

impl MatchReport {
    pub fn fraction(&self) -> String {
        format!("{}/{}", self.found, self.eligible)
    }
}

pub fn coverage_report(
    proposals: &Proposals<'_>,
    catalog: &GroundTruthCatalog,
    mode: &CoverageMode,
    threshold: f64,
) -> Result<MatchReport> {
    let eligible_combos: Vec<usize> = match mode {
        CoverageMode::Completions { pinned } => {
            if let Some(&bad) = pinned.iter().find(|&&p| p >= catalog.concepts.len()) {
                return Err(Error::Input(format!("pinned concept {bad} is not in the catalog")));
            }
            (0..catalog.valid_combinations.len())
                .filter(|&i| pinned.iter().all(|p| catalog.valid_combinations[i].contains(p)))
                .collect()
        }
        _ => (0..catalog.valid_combinations.len()).collect(),
    };

    let mut matches = Vec::with_capacity(proposals.len());
    let mut explanations_found = BTreeSet::new();
    let mut concepts_found = BTreeSet::new();
    let mut min_m = None;

    match (proposals, mode) {
        (Proposals::Singles(list), CoverageMode::Singles) => {
            for (i, act) in list.iter().enumerate() {
                let m = match_single(act, catalog, threshold);
                if let Some(m) = m {
                    concepts_found.insert(m.concept);
                }
                matches.push(ProposalMatch {
                    proposal: i,
                    concept: m.map(|m| m.concept),
                    f1: m.map(|m| m.f1),
                    negated: m.is_some_and(|m| m.negated),
                    combination: None,
                });
            }
        }
        (Proposals::Sets(list), CoverageMode::Explanations | CoverageMode::Completions { .. }) => {
            for (i, act) in list.iter().enumerate() {
                let images = perfect_matchings(act, catalog, threshold);
                let combination = eligible_combos.iter().copied().find(|&c| {
                    let mut sorted = catalog.valid_combinations[c].clone();
                    sorted.sort_unstable();
                    images.contains(&sorted)
                });
                if let Some(c) = combination {
                    explanations_found.insert(c);
                    concepts_found.extend(catalog.valid_combinations[c].iter().copied());
                    min_m.get_or_insert(i + 1);
                }
                matches.push(ProposalMatch { proposal: i, concept: None, f1: None, negated: false, combination });
            }
        }
        _ => return Err(Error::Input("singles mode needs single-concept proposals; other modes need concept sets".into())),
    }

    let (found, eligible) = match mode {
        CoverageMode::Singles => (concepts_found.len(), catalog.concepts.len()),
        _ => (explanations_found.len(), eligible_combos.len()),
    };
    Ok(MatchReport {
        mode: mode.clone(),
        threshold,
        matches,
        explanations_found,
        concepts_found,
        min_m,
        found,
        eligible,
    })
}

/// One row of a method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: SelectionMethod,
    pub metric: MetricKind,
    pub value: String,
}

fn method_label(method: SelectionMethod, metric: MetricKind) -> String {
    let m = match method {
        SelectionMethod::Greedy => "Greedy",
        SelectionMethod::Kmeans => "K-means",
    };
    let d = match metric {
        MetricKind::Euclidean => "Euclidean",
        MetricKind::Cosine => "Cosine",
        MetricKind::Absolute => "Absolute",
        MetricKind::PercentDisagreement => "Percent",
    };
    format!("{m} {d}")
}

/// Markdown table in the `Method + Distance metric | <column>` layout.
pub fn markdown_table(column: &str, rows: &[TableRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| Method + Distance metric | {column} |");
    let _ = writeln!(out, "|---|---|");
    for r in rows {
        let _ = writeln!(out, "| {} | {} |", method_label(r.method, r.metric), r.value);
    }
    out
}
