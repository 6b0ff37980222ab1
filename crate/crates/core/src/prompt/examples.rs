//! In-context example sets and their structural checks.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::label::StanceLabel;
use crate::record::{ExampleBlock, ExampleTag, ReasoningChain};

pub const EXAMPLES_PER_SET: usize = 6;
pub const EXAMPLES_PER_LABEL: usize = 2;

/// Which structural profile an example set is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleProfile {
    /// All stances implicit, with at least one sarcastic tweet and one rhetorical question.
    StanceReasoner,
    /// All stances explicit, no rhetorical devices.
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSet {
    pub profile: ExampleProfile,
    pub examples: Vec<ExampleBlock>,
}

#[derive(Deserialize)]
struct ExampleFile {
    profile: ExampleProfile,
    #[serde(rename = "example")]
    examples: Vec<ExampleEntry>,
}

#[derive(Deserialize)]
struct ExampleEntry {
    tweet: String,
    target: String,
    premise: String,
    #[serde(default)]
    conclusion: String,
    label: StanceLabel,
    #[serde(default)]
    tags: Vec<ExampleTag>,
}

impl ExampleSet {
    /// Parses the TOML example-set format (`profile` plus `[[example]]` tables
    /// with tweet, target, premise, conclusion, label and tags).
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let file: ExampleFile = toml::from_str(text).map_err(|e| PromptError::Asset(format!("example set: {e}")))?;
        let examples = file
            .examples
            .into_iter()
            .map(|e| ExampleBlock {
                tweet: e.tweet,
                target: e.target,
                reasoning: ReasoningChain::new(e.premise, e.conclusion),
                label: e.label,
                tags: e.tags,
            })
            .collect();
        Ok(Self {
            profile: file.profile,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.examples.iter().map(|e| e.target.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Count { expected: usize, found: usize },
    LabelBalance { label: StanceLabel, expected: usize, found: usize },
    TargetOverlap { example: usize, target: String },
    MissingTag { tag: ExampleTag },
    NotImplicit { example: usize },
    NotExplicit { example: usize },
    RhetoricalDevice { example: usize, tag: ExampleTag },
    EmptyField { example: usize, field: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Count { expected, found } => write!(f, "expected {expected} examples, found {found}"),
            Violation::LabelBalance { label, expected, found } => {
                write!(f, "expected {expected} `{label}` examples, found {found}")
            }
            Violation::TargetOverlap { example, target } => {
                write!(f, "example {example} uses evaluation target {target:?}")
            }
            Violation::MissingTag { tag } => write!(f, "no example tagged {tag:?}"),
            Violation::NotImplicit { example } => write!(f, "example {example} is not tagged implicit"),
            Violation::NotExplicit { example } => write!(f, "example {example} is not tagged explicit"),
            Violation::RhetoricalDevice { example, tag } => {
                write!(f, "example {example} uses rhetorical device {tag:?}")
            }
            Violation::EmptyField { example, field } => write!(f, "example {example} has an empty {field}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub profile: ExampleProfile,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks an example set against its profile and the evaluation targets.
/// Target comparison is case-insensitive and whitespace-trimmed.
pub fn validate_example_set<S: AsRef<str>>(set: &ExampleSet, eval_targets: &[S]) -> ValidationReport {
    let mut violations = Vec::new();

    if set.examples.len() != EXAMPLES_PER_SET {
        violations.push(Violation::Count {
            expected: EXAMPLES_PER_SET,
            found: set.examples.len(),
        });
    }
    for label in StanceLabel::ALL {
        let found = set.examples.iter().filter(|e| e.label == label).count();
        if found != EXAMPLES_PER_LABEL {
            violations.push(Violation::LabelBalance {
                label,
                expected: EXAMPLES_PER_LABEL,
                found,
            });
        }
    }

    let eval: BTreeSet<String> = eval_targets
        .iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .collect();
    for (i, ex) in set.examples.iter().enumerate() {
        if eval.contains(&ex.target.trim().to_lowercase()) {
            violations.push(Violation::TargetOverlap {
                example: i,
                target: ex.target.clone(),
            });
        }
        for (field, value) in [("tweet", &ex.tweet), ("target", &ex.target), ("premise", &ex.reasoning.premise)] {
            if value.trim().is_empty() {
                violations.push(Violation::EmptyField { example: i, field });
            }
        }
    }

    match set.profile {
        ExampleProfile::StanceReasoner => {
            for tag in [ExampleTag::Sarcasm, ExampleTag::RhetoricalQuestion] {
                if !set.examples.iter().any(|e| e.has_tag(tag)) {
                    violations.push(Violation::MissingTag { tag });
                }
            }
            for (i, ex) in set.examples.iter().enumerate() {
                if !ex.has_tag(ExampleTag::Implicit) {
                    violations.push(Violation::NotImplicit { example: i });
                }
            }
        }
        ExampleProfile::Homogeneous => {
            for (i, ex) in set.examples.iter().enumerate() {
                if !ex.has_tag(ExampleTag::Explicit) {
                    violations.push(Violation::NotExplicit { example: i });
                }
                for &tag in ex.tags.iter().filter(|t| t.is_rhetorical_device()) {
                    violations.push(Violation::RhetoricalDevice { example: i, tag });
                }
            }
        }
    }

    ValidationReport {
        profile: set.profile,
        violations,
    }
}
