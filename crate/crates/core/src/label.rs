//! Stance labels and the mappings from dataset-specific raw labels onto them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three-way stance decision every strategy produces.
///
/// Variant order matches the numbered option list used by the zero-shot
/// chain-of-thought prompt (1. against, 2. favor, 3. none).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Against,
    Favor,
    None,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Against, StanceLabel::Favor, StanceLabel::None];

    /// The two polar classes the macro-F1 metric averages over.
    pub const POLAR: [StanceLabel; 2] = [StanceLabel::Against, StanceLabel::Favor];

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Against => "against",
            StanceLabel::Favor => "favor",
            StanceLabel::None => "none",
        }
    }

    pub fn index(self) -> usize {
        match self {
            StanceLabel::Against => 0,
            StanceLabel::Favor => 1,
            StanceLabel::None => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Swaps the polar classes; `none` is fixed.
    pub fn mirrored(self) -> Self {
        match self {
            StanceLabel::Against => StanceLabel::Favor,
            StanceLabel::Favor => StanceLabel::Against,
            StanceLabel::None => StanceLabel::None,
        }
    }

    /// Parses model-generated label text: case-insensitive, trimmed, with
    /// trailing punctuation dropped ("Favor." is accepted, "strongly favor" is not).
    pub fn parse_generated(text: &str) -> Option<Self> {
        let cleaned = strip_label_noise(text);
        Self::ALL
            .into_iter()
            .find(|l| cleaned.eq_ignore_ascii_case(l.as_str()))
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_generated(s).ok_or_else(|| LabelError::Unknown(s.to_string()))
    }
}

fn strip_label_noise(text: &str) -> &str {
    text.trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .trim()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
/// Per-label tallies.
pub struct LabelCounts {
    pub against: u32,
    pub favor: u32,
    pub none: u32,
}

impl LabelCounts {
    pub fn get(&self, label: StanceLabel) -> u32 {
        match label {
            StanceLabel::Against => self.against,
            StanceLabel::Favor => self.favor,
            StanceLabel::None => self.none,
        }
    }

    pub fn add(&mut self, label: StanceLabel) {
        match label {
            StanceLabel::Against => self.against += 1,
            StanceLabel::Favor => self.favor += 1,
            StanceLabel::None => self.none += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.against + self.favor + self.none
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("unknown label {0:?}")]
    Unknown(String),
    #[error("raw label is empty")]
    Empty,
}

/// A label exactly as it appears in a dataset file, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RawLabel(String);

impl RawLabel {
    pub fn new(value: impl Into<String>) -> Result<Self, LabelError> {
        let value = value.into();
        if value.trim().is_empty() {
            return Err(LabelError::Empty);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Lowercased, trimmed form used for scheme lookups and cell grouping.
    pub fn key(&self) -> String {
        self.0.trim().to_lowercase()
    }
}

impl TryFrom<String> for RawLabel {
    type Error = LabelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<RawLabel> for String {
    fn from(value: RawLabel) -> Self {
        value.0
    }
}

impl fmt::Display for RawLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How a dataset's raw labels map onto [`StanceLabel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Raw labels already are `against` / `favor` / `none` in some casing.
    Identity,
    /// refute/support/comment/unrelated, with the two non-polar labels merged.
    Wtwt,
    /// Explicit lowercase raw label → canonical label table.
    Custom(BTreeMap<String, StanceLabel>),
}

impl LabelScheme {
    /// Every raw label the scheme accepts, lowercased.
    pub fn raw_labels(&self) -> Vec<String> {
        match self {
            LabelScheme::Identity => StanceLabel::ALL.iter().map(|l| l.as_str().to_string()).collect(),
            LabelScheme::Wtwt => ["refute", "support", "comment", "unrelated"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            LabelScheme::Custom(map) => map.keys().cloned().collect(),
        }
    }

    fn lookup(&self, key: &str) -> Option<StanceLabel> {
        match self {
            LabelScheme::Identity => StanceLabel::ALL.into_iter().find(|l| l.as_str() == key),
            LabelScheme::Wtwt => match key {
                "refute" => Some(StanceLabel::Against),
                "support" => Some(StanceLabel::Favor),
                "comment" | "unrelated" => Some(StanceLabel::None),
                _ => None,
            },
            LabelScheme::Custom(map) => map.get(key).copied(),
        }
    }
}

/// Maps a raw dataset label onto the canonical label set.
///
/// Matching is case-insensitive and whitespace-trimmed. A label the scheme
/// does not know is an error; it is never coerced to `none`.
pub fn normalize_label(raw: &RawLabel, scheme: &LabelScheme) -> Result<StanceLabel, LabelError> {
    scheme
        .lookup(&raw.key())
        .ok_or_else(|| LabelError::Unknown(raw.as_str().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(s: &str) -> RawLabel {
        RawLabel::new(s).unwrap()
    }

    #[test]
    fn wtwt_merges_non_polar_labels() {
        assert_eq!(normalize_label(&raw("comment"), &LabelScheme::Wtwt), Ok(StanceLabel::None));
        assert_eq!(normalize_label(&raw("unrelated"), &LabelScheme::Wtwt), Ok(StanceLabel::None));
        assert_eq!(normalize_label(&raw("refute"), &LabelScheme::Wtwt), Ok(StanceLabel::Against));
        assert_eq!(normalize_label(&raw("support"), &LabelScheme::Wtwt), Ok(StanceLabel::Favor));
    }

    #[test]
    fn identity_is_case_insensitive() {
        assert_eq!(normalize_label(&raw("AGAINST"), &LabelScheme::Identity), Ok(StanceLabel::Against));
        assert_eq!(normalize_label(&raw("  Favor "), &LabelScheme::Identity), Ok(StanceLabel::Favor));
    }

    #[test]
    fn unknown_label_is_an_error() {
        assert_eq!(
            normalize_label(&raw("neutral"), &LabelScheme::Identity),
            Err(LabelError::Unknown("neutral".into()))
        );
        assert!(normalize_label(&raw("against"), &LabelScheme::Wtwt).is_err());
    }

    #[test]
    fn empty_raw_label_rejected() {
        assert_eq!(RawLabel::new("  "), Err(LabelError::Empty));
    }

    #[test]
    fn schemes_are_total_and_idempotent() {
        for scheme in [LabelScheme::Identity, LabelScheme::Wtwt] {
            for r in scheme.raw_labels() {
                assert!(normalize_label(&raw(&r), &scheme).is_ok(), "{r}");
            }
        }
        for l in StanceLabel::ALL {
            let once = normalize_label(&raw(l.as_str()), &LabelScheme::Identity).unwrap();
            let twice = normalize_label(&raw(once.as_str()), &LabelScheme::Identity).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn generated_labels_tolerate_trailing_punctuation() {
        assert_eq!(StanceLabel::parse_generated("favor."), Some(StanceLabel::Favor));
        assert_eq!(StanceLabel::parse_generated(" None!"), Some(StanceLabel::None));
        assert_eq!(StanceLabel::parse_generated("strongly support"), None);
        assert_eq!(StanceLabel::parse_generated(""), None);
    }
}
