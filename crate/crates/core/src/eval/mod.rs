//! Macro-F1 scoring, sample-count sweeps and confidence triage.

mod metrics;
mod sweep;
mod triage;

pub use metrics::{f1_per_class, macro_f1_favor_against, ConfusionCounts, ABSTAIN};
pub use sweep::{sweep_sample_count, Decoding, SweepRow, SweepTable};
pub use triage::{is_rhetorical, triage_report, triage_table, TriageCategory, TriageEntry, DEFAULT_AMBIGUITY_THRESHOLD};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::StanceLabel;
use crate::reasoner::{Prediction, ReasonerError};
use crate::record::TweetRecord;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("{} predictions have no gold record: {}", ids.len(), ids.join(", "))]
    Unjoinable { ids: Vec<String> },
    #[error("prediction for ({id}, {target}) appears more than once")]
    Duplicate { id: String, target: String },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScores {
    pub f1_against: f64,
    pub f1_favor: f64,
    pub macro_f1: f64,
    /// Macro-F1 with parse failures dropped instead of scored as abstains.
    pub macro_f1_excluding_failures: f64,
    pub n: u32,
    pub n_parse_failures: u32,
    pub n_ties: u32,
    pub confusion: ConfusionCounts,
}

impl TargetScores {
    fn new(confusion: ConfusionCounts, n_ties: u32) -> Self {
        Self {
            f1_against: f1_per_class(&confusion, StanceLabel::Against),
            f1_favor: f1_per_class(&confusion, StanceLabel::Favor),
            macro_f1: macro_f1_favor_against(&confusion),
            macro_f1_excluding_failures: macro_f1_favor_against(&confusion.without_abstains()),
            n: confusion.total(),
            n_parse_failures: confusion.abstained(),
            n_ties,
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Free-form run description (strategy, model, config path).
    pub metadata: BTreeMap<String, String>,
    pub targets: BTreeMap<String, TargetScores>,
    /// Unweighted mean of per-target macro-F1.
    pub avg_macro_f1: f64,
    pub avg_macro_f1_excluding_failures: f64,
    pub avg_f1_against: f64,
    pub avg_f1_favor: f64,
    pub n_evaluated: u32,
    pub n_parse_failures: u32,
    pub n_ties: u32,
}

impl EvalReport {
    /// One row per target and a final Avg row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("target\tf1_against\tf1_favor\tmacro_f1\tmacro_f1_excl_failures\tn\tparse_failures\tties\n");
        for (t, s) in &self.targets {
            let _ = writeln!(
                out,
                "{t}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
                s.f1_against, s.f1_favor, s.macro_f1, s.macro_f1_excluding_failures, s.n, s.n_parse_failures, s.n_ties
            );
        }
        let _ = writeln!(
            out,
            "Avg\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            self.avg_f1_against,
            self.avg_f1_favor,
            self.avg_macro_f1,
            self.avg_macro_f1_excluding_failures,
            self.n_evaluated,
            self.n_parse_failures,
            self.n_ties
        );
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

type Key<'a> = (&'a str, &'a str);

/// Pairs every prediction with its gold record on (id, target).
pub(crate) fn join<'a>(
    predictions: &'a [Prediction],
    gold: &'a [TweetRecord],
) -> Result<Vec<(&'a Prediction, &'a TweetRecord)>, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let index: BTreeMap<Key, &TweetRecord> = gold
        .iter()
        .filter(|r| r.gold.is_some())
        .map(|r| ((r.id.as_str(), r.target.as_str()), r))
        .collect();
    let mut seen = BTreeSet::new();
    let mut missing = BTreeSet::new();
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        let key = (p.id.as_str(), p.target.as_str());
        if !seen.insert(key) {
            return Err(EvalError::Duplicate {
                id: p.id.clone(),
                target: p.target.clone(),
            });
        }
        match index.get(&key) {
            Some(r) => pairs.push((p, *r)),
            None => {
                missing.insert(p.id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::Unjoinable {
            ids: missing.into_iter().collect(),
        });
    }
    Ok(pairs)
}

/// Scores predictions against gold records, per target and averaged.
/// The result does not depend on the order of either input.
pub fn evaluate_per_target(predictions: &[Prediction], gold: &[TweetRecord]) -> Result<EvalReport, EvalError> {
    let pairs = join(predictions, gold)?;
    let mut cells: BTreeMap<&str, (ConfusionCounts, u32)> = BTreeMap::new();
    for (p, r) in &pairs {
        let entry = cells.entry(r.target.as_str()).or_default();
        entry.0.add(r.gold.expect("joined records have gold"), p.label);
        entry.1 += u32::from(p.tie);
    }
    let targets: BTreeMap<String, TargetScores> = cells
        .into_iter()
        .map(|(t, (c, ties))| (t.to_string(), TargetScores::new(c, ties)))
        .collect();

    let mean = |f: fn(&TargetScores) -> f64| targets.values().map(f).sum::<f64>() / targets.len() as f64;
    let strategies: BTreeSet<&str> = predictions.iter().map(|p| p.strategy.as_str()).collect();
    let mut metadata = BTreeMap::new();
    metadata.insert("strategy".to_string(), strategies.into_iter().collect::<Vec<_>>().join(","));

    Ok(EvalReport {
        metadata,
        avg_macro_f1: mean(|s| s.macro_f1),
        avg_macro_f1_excluding_failures: mean(|s| s.macro_f1_excluding_failures),
        avg_f1_against: mean(|s| s.f1_against),
        avg_f1_favor: mean(|s| s.f1_favor),
        n_evaluated: targets.values().map(|s| s.n).sum(),
        n_parse_failures: targets.values().map(|s| s.n_parse_failures).sum(),
        n_ties: targets.values().map(|s| s.n_ties).sum(),
        targets,
    })
}
