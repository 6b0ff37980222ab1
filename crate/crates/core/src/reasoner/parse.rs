use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::label::StanceLabel;
use crate::record::{parse_reasoning_chain, ReasoningChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    /// Text was produced but held no canonical label.
    NoLabel,
    /// Nothing usable came back: an empty completion or a failed sample.
    Malformed,
}

/// One parsed completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub sample_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<StanceLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<ReasoningChain>,
    pub parse_status: ParseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SamplePrediction {
    pub(crate) fn new(sample_index: u32, label: Option<StanceLabel>, reasoning: Option<ReasoningChain>, text: &str) -> Self {
        let parse_status = match label {
            Some(_) => ParseStatus::Ok,
            None if text.trim().is_empty() => ParseStatus::Malformed,
            None => ParseStatus::NoLabel,
        };
        Self {
            sample_index,
            label,
            reasoning,
            parse_status,
            error: None,
        }
    }

    pub fn failed(sample_index: u32, error: impl Into<String>) -> Self {
        Self {
            sample_index,
            label: None,
            reasoning: None,
            parse_status: ParseStatus::Malformed,
            error: Some(error.into()),
        }
    }
}

fn label_word() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(against|favor|none)\b").expect("valid label regex"))
}

fn option_number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(1|2|3)").expect("valid option regex"))
}

/// First whole-word, case-insensitive label in a zero-shot continuation.
pub fn extract_label_word(text: &str) -> Option<StanceLabel> {
    label_word()
        .find(text)
        .and_then(|m| StanceLabel::parse_generated(m.as_str()))
}

/// First option digit in a zero-shot CoT answer; 1, 2 and 3 map to the option order.
pub fn extract_option_number(text: &str) -> Option<StanceLabel> {
    option_number()
        .find(text)
        .and_then(|m| m.as_str().parse::<usize>().ok())
        .and_then(|d| StanceLabel::from_index(d - 1))
}

fn strip_field<'a>(line: &'a str, field: &str) -> Option<&'a str> {
    let line = line.trim_start();
    let head = line.get(..field.len())?;
    head.eq_ignore_ascii_case(field).then(|| &line[field.len()..])
}

/// Parses the continuation of a few-shot prompt.
///
/// With reasoning, the continuation starts inside the `reasoning:` field, so
/// everything before the first `stance:` line is the chain (a repeated
/// `reasoning:` prefix is tolerated). Without reasoning it starts inside
/// `stance:` and the first line is the label.
pub fn parse_few_shot_completion(text: &str, with_reasoning: bool, sample_index: u32) -> SamplePrediction {
    let lines: Vec<&str> = text.lines().collect();
    if !with_reasoning {
        let first = lines.iter().find(|l| !l.trim().is_empty()).copied().unwrap_or("");
        let value = strip_field(first, "stance:").unwrap_or(first);
        return SamplePrediction::new(sample_index, StanceLabel::parse_generated(value), None, text);
    }

    let stance_at = lines.iter().position(|l| strip_field(l, "stance:").is_some());
    let reasoning_lines = &lines[..stance_at.unwrap_or(lines.len())];
    let reasoning_text = reasoning_lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let reasoning_text = strip_field(&reasoning_text, "reasoning:").unwrap_or(&reasoning_text).trim().to_string();
    let chain = parse_reasoning_chain(&reasoning_text);
    let label = stance_at
        .and_then(|i| strip_field(lines[i], "stance:"))
        .and_then(StanceLabel::parse_generated);
    SamplePrediction::new(sample_index, label, Some(chain), text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shot_label_scan() {
        assert_eq!(extract_label_word(" in favor of the target."), Some(StanceLabel::Favor));
        assert_eq!(extract_label_word("none of the above"), Some(StanceLabel::None));
        assert_eq!(extract_label_word("neither for nor ... hard to say"), None);
        assert_eq!(extract_label_word("AGAINST it"), Some(StanceLabel::Against));
        assert_eq!(extract_label_word("favorable, nonetheless"), None);
    }

    #[test]
    fn option_number_scan() {
        assert_eq!(extract_option_number("2. favor, because ..."), Some(StanceLabel::Favor));
        assert_eq!(extract_option_number("The answer is 3"), Some(StanceLabel::None));
        assert_eq!(extract_option_number("options 1 and 2 both apply"), Some(StanceLabel::Against));
        assert_eq!(extract_option_number("no digits"), None);
        assert_eq!(extract_option_number("option 4 or 5"), None);
    }

    #[test]
    fn chain_and_label() {
        let p = parse_few_shot_completion(
            " the author mocks believers -> the author is against X\nstance: against",
            true,
            0,
        );
        assert_eq!(p.label, Some(StanceLabel::Against));
        assert_eq!(p.parse_status, ParseStatus::Ok);
        let chain = p.reasoning.unwrap();
        assert_eq!(chain.premise, "the author mocks believers");
        assert_eq!(chain.conclusion, "the author is against X");
    }

    #[test]
    fn repeated_reasoning_prefix_is_tolerated() {
        let p = parse_few_shot_completion("reasoning: a -> b\nstance: favor", true, 0);
        assert_eq!(p.label, Some(StanceLabel::Favor));
        assert_eq!(p.reasoning.unwrap().premise, "a");
    }

    #[test]
    fn stance_without_reasoning_flags_empty_chain() {
        let p = parse_few_shot_completion("stance: favor", true, 0);
        assert_eq!(p.label, Some(StanceLabel::Favor));
        assert!(p.reasoning.unwrap().is_empty());
    }

    #[test]
    fn non_canonical_stance_is_no_label() {
        let p = parse_few_shot_completion("a -> b\nstance: strongly support", true, 0);
        assert_eq!(p.label, None);
        assert_eq!(p.parse_status, ParseStatus::NoLabel);
        let p = parse_few_shot_completion(" a -> b", true, 0);
        assert_eq!(p.parse_status, ParseStatus::NoLabel);
    }

    #[test]
    fn empty_completion_is_malformed() {
        assert_eq!(parse_few_shot_completion("  \n", true, 0).parse_status, ParseStatus::Malformed);
        assert_eq!(parse_few_shot_completion("", false, 0).parse_status, ParseStatus::Malformed);
    }

    #[test]
    fn plain_few_shot_reads_first_line() {
        assert_eq!(parse_few_shot_completion(" none", false, 0).label, Some(StanceLabel::None));
        assert_eq!(parse_few_shot_completion(" Favor.\n", false, 0).label, Some(StanceLabel::Favor));
        assert_eq!(parse_few_shot_completion("stance: against", false, 0).label, Some(StanceLabel::Against));
        assert_eq!(parse_few_shot_completion(" maybe", false, 0).parse_status, ParseStatus::NoLabel);
    }
}
