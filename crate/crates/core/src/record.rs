//! Tweets, reasoning chains and in-context examples.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::label::{RawLabel, StanceLabel};

/// Separator between premise and conclusion in a reasoning line.
pub const CHAIN_SEPARATOR: &str = "->";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown split {s:?} (expected train, val or test)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<StanceLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_gold: Option<RawLabel>,
    pub split: Split,
    /// Set on test records that were drawn from the train split to fill a deficit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backfilled: bool,
}

impl TweetRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            target: target.into(),
            gold: None,
            raw_gold: None,
            split: Split::Test,
            backfilled: false,
        }
    }

    pub fn with_gold(mut self, gold: StanceLabel) -> Self {
        self.gold = Some(gold);
        self
    }
}

/// A premise → conclusion argument produced by (or written for) the model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub premise: String,
    pub conclusion: String,
    /// Verbatim reasoning text as generated.
    pub raw: String,
    /// False when no separator was found; `premise` then holds the whole text.
    pub structured: bool,
}

impl ReasoningChain {
    pub fn new(premise: impl Into<String>, conclusion: impl Into<String>) -> Self {
        let premise = premise.into();
        let conclusion = conclusion.into();
        let mut chain = Self {
            premise,
            conclusion,
            raw: String::new(),
            structured: true,
        };
        chain.raw = chain.render();
        chain
    }

    /// `premise -> conclusion`, or just the premise when the conclusion is empty.
    pub fn render(&self) -> String {
        if self.conclusion.is_empty() {
            self.premise.clone()
        } else {
            format!("{} {} {}", self.premise, CHAIN_SEPARATOR, self.conclusion)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.premise.is_empty() && self.conclusion.is_empty()
    }
}

/// Splits reasoning text on the first `->`. Never fails; text without a
/// separator becomes an unstructured chain whose premise is the whole text.
pub fn parse_reasoning_chain(raw: &str) -> ReasoningChain {
    match raw.find(CHAIN_SEPARATOR) {
        Some(at) => ReasoningChain {
            premise: raw[..at].trim().to_string(),
            conclusion: raw[at + CHAIN_SEPARATOR.len()..].trim().to_string(),
            raw: raw.to_string(),
            structured: true,
        },
        None => ReasoningChain {
            premise: raw.trim().to_string(),
            conclusion: String::new(),
            raw: raw.to_string(),
            structured: false,
        },
    }
}

/// Reasoning-strategy annotations on an in-context example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleTag {
    Implicit,
    Explicit,
    Sarcasm,
    RhetoricalQuestion,
}

impl ExampleTag {
    pub fn is_rhetorical_device(self) -> bool {
        matches!(self, ExampleTag::Sarcasm | ExampleTag::RhetoricalQuestion)
    }
}

/// One solved in-context example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleBlock {
    pub tweet: String,
    pub target: String,
    pub reasoning: ReasoningChain,
    pub label: StanceLabel,
    pub tags: Vec<ExampleTag>,
}

impl ExampleBlock {
    pub fn has_tag(&self, tag: ExampleTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_on_first_separator() {
        let c = parse_reasoning_chain("a -> b -> c");
        assert_eq!(c.premise, "a");
        assert_eq!(c.conclusion, "b -> c");
        assert!(c.structured);
    }

    #[test]
    fn empty_input_is_flagged() {
        let c = parse_reasoning_chain("");
        assert_eq!(c.premise, "");
        assert_eq!(c.conclusion, "");
        assert!(!c.structured);
    }

    #[test]
    fn annotation_error_row_parses() {
        let raw = "the author is excited about the major development of an organization that tackles climate change -> the author is in favor of climate change is a real concern";
        let c = parse_reasoning_chain(raw);
        assert_eq!(
            c.premise,
            "the author is excited about the major development of an organization that tackles climate change"
        );
        assert_eq!(c.conclusion, "the author is in favor of climate change is a real concern");
        assert_eq!(c.raw, raw);
    }

    #[test]
    fn empty_conclusion_renders_premise_only() {
        let c = ReasoningChain::new("just a premise", "");
        assert_eq!(c.render(), "just a premise");
    }

    #[test]
    fn unicode_arrow_is_not_a_separator() {
        assert!(!parse_reasoning_chain("a → b").structured);
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(
            premise in "[a-z][a-z ,.'>-]{0,40}[a-z]",
            conclusion in "[a-z][a-z ,.'>-]{0,40}[a-z]",
        ) {
            prop_assume!(!premise.contains(CHAIN_SEPARATOR));
            let chain = ReasoningChain::new(premise.clone(), conclusion.clone());
            let parsed = parse_reasoning_chain(&chain.render());
            prop_assert_eq!(parsed.premise, premise.trim());
            prop_assert_eq!(parsed.conclusion, conclusion.trim());
        }
    }
}
