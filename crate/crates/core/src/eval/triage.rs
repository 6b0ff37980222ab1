use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{join, EvalError};
use crate::label::StanceLabel;
use crate::reasoner::Prediction;
use crate::record::TweetRecord;

pub const DEFAULT_AMBIGUITY_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageCategory {
    AnnotationErrorCandidate,
    Ambiguous,
    RhetoricalSuspect,
    Ordinary,
}

impl TriageCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TriageCategory::AnnotationErrorCandidate => "annotation_error_candidate",
            TriageCategory::Ambiguous => "ambiguous",
            TriageCategory::RhetoricalSuspect => "rhetorical_suspect",
            TriageCategory::Ordinary => "ordinary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageEntry {
    pub id: String,
    pub target: String,
    pub text: String,
    pub gold: Option<StanceLabel>,
    pub predicted: Option<StanceLabel>,
    pub confidence: f64,
    pub tie: bool,
    pub disagreement: u32,
    /// Rendered reasoning chain of every sample, in sample order.
    pub reasonings: Vec<String>,
    pub category: TriageCategory,
}

fn trailing_noise() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:\s+(?:[#@]\w+|https?://\S+))+\s*$").expect("valid regex"))
}

fn quoted_speech() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""[^"]*\S\s+\S[^"]*"|“[^”]*\S\s+\S[^”]*”"#).expect("valid regex"))
}

/// True when the tweet ends in a question (ignoring trailing hashtags,
/// mentions and links) or quotes speech of at least two words.
pub fn is_rhetorical(text: &str) -> bool {
    let body = trailing_noise().replace(text.trim(), "");
    body.trim_end().ends_with('?') || quoted_speech().is_match(text)
}

fn categorize(p: &Prediction, gold: Option<StanceLabel>, text: &str, threshold: f64) -> TriageCategory {
    let unanimous = p.n_drawn > 0 && p.votes == p.n_drawn;
    if unanimous && p.label.is_some() && p.label != gold {
        return TriageCategory::AnnotationErrorCandidate;
    }
    if p.confidence <= threshold + 1e-12 {
        return if is_rhetorical(text) {
            TriageCategory::RhetoricalSuspect
        } else {
            TriageCategory::Ambiguous
        };
    }
    TriageCategory::Ordinary
}

/// Categorizes every prediction and sorts by ascending confidence, then by
/// descending disagreement, then by (id, target).
pub fn triage_report(
    predictions: &[Prediction],
    gold: &[TweetRecord],
    threshold: f64,
) -> Result<Vec<TriageEntry>, EvalError> {
    let mut entries: Vec<TriageEntry> = join(predictions, gold)?
        .into_iter()
        .map(|(p, r)| TriageEntry {
            id: p.id.clone(),
            target: p.target.clone(),
            text: r.text.clone(),
            gold: r.gold,
            predicted: p.label,
            confidence: p.confidence,
            tie: p.tie,
            disagreement: p.disagreement(),
            reasonings: p
                .samples
                .iter()
                .map(|s| s.reasoning.as_ref().map(|c| c.render()).unwrap_or_default())
                .collect(),
            category: categorize(p, r.gold, &r.text, threshold),
        })
        .collect();
    entries.sort_by(|a, b| {
        a.confidence
            .total_cmp(&b.confidence)
            .then(b.disagreement.cmp(&a.disagreement))
            .then_with(|| (&a.id, &a.target).cmp(&(&b.id, &b.target)))
    });
    Ok(entries)
}

fn label_str(l: Option<StanceLabel>) -> &'static str {
    l.map_or("-", StanceLabel::as_str)
}

/// Tab-separated review sheet; reasonings are joined with " | ".
pub fn triage_table(entries: &[TriageEntry]) -> String {
    let mut out = String::from("id\ttarget\tcategory\tgold\tpred\tconf\ttie\ttext\treasonings\n");
    for e in entries {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.2}\t{}\t{}\t{}",
            e.id,
            e.target,
            e.category.as_str(),
            label_str(e.gold),
            label_str(e.predicted),
            e.confidence,
            e.tie,
            clean(&e.text),
            clean(&e.reasonings.join(" | "))
        );
    }
    out
}
