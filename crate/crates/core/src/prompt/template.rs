use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::assets::PromptAssets;
use super::examples::ExampleSet;
use super::PromptError;
use crate::label::StanceLabel;
use crate::record::{ExampleBlock, TweetRecord};

pub const TARGET_PLACEHOLDER: &str = "{target}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    ZeroShotCot,
    FewShot,
    FewShotCot,
    StanceReasoner,
    HomogeneousCot,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ZeroShot,
        Strategy::ZeroShotCot,
        Strategy::FewShot,
        Strategy::FewShotCot,
        Strategy::StanceReasoner,
        Strategy::HomogeneousCot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::ZeroShotCot => "zero_shot_cot",
            Strategy::FewShot => "few_shot",
            Strategy::FewShotCot => "few_shot_cot",
            Strategy::StanceReasoner => "stance_reasoner",
            Strategy::HomogeneousCot => "homogeneous_cot",
        }
    }

    pub fn is_few_shot(self) -> bool {
        matches!(
            self,
            Strategy::FewShot | Strategy::FewShotCot | Strategy::StanceReasoner | Strategy::HomogeneousCot
        )
    }

    /// Few-shot strategies whose examples carry reasoning chains.
    pub fn has_reasoning(self) -> bool {
        self.is_few_shot() && self != Strategy::FewShot
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == key)
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionOrigin {
    Seed,
    Paraphrase,
}

/// A task question with `{target}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub text: String,
    pub origin: DescriptionOrigin,
    /// Index of the seed a paraphrase was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_seed: Option<usize>,
}

impl TaskDescription {
    pub fn seed(text: impl Into<String>, index: usize) -> Self {
        Self {
            text: text.into(),
            origin: DescriptionOrigin::Seed,
            source_seed: Some(index),
        }
    }

    pub fn paraphrase(text: impl Into<String>, seed: usize) -> Self {
        Self {
            text: text.into(),
            origin: DescriptionOrigin::Paraphrase,
            source_seed: Some(seed),
        }
    }

    pub fn check(&self) -> Result<(), PromptError> {
        if self.text.trim().is_empty() {
            return Err(PromptError::InvalidDescription("empty description".into()));
        }
        if !self.text.contains(TARGET_PLACEHOLDER) {
            return Err(PromptError::InvalidDescription(format!(
                "description has no {TARGET_PLACEHOLDER} placeholder: {:?}",
                self.text
            )));
        }
        Ok(())
    }

    pub fn render(&self, target: &str) -> String {
        self.text.replace(TARGET_PLACEHOLDER, target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionStyle {
    Dash,
    Numbered,
}

impl OptionStyle {
    pub fn render(self) -> String {
        StanceLabel::ALL
            .iter()
            .enumerate()
            .map(|(i, label)| match self {
                OptionStyle::Dash => format!("- {label}"),
                OptionStyle::Numbered => format!("{}. {label}", i + 1),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub strategy: Strategy,
    /// Task question; may contain `{target}`.
    pub header: String,
    pub option_style: OptionStyle,
    pub example_set: Option<ExampleSet>,
    /// Text after `Answer:` for zero-shot variants.
    pub answer_trigger: Option<String>,
}

impl PromptTemplate {
    /// The template for `strategy` built from `assets`, using the default task description.
    pub fn for_strategy(strategy: Strategy, assets: &PromptAssets) -> Self {
        match strategy {
            Strategy::ZeroShot => Self {
                strategy,
                header: assets.default_description.text.clone(),
                option_style: OptionStyle::Dash,
                example_set: None,
                answer_trigger: Some(assets.triggers.zero_shot.clone()),
            },
            Strategy::ZeroShotCot => Self {
                strategy,
                header: assets.default_description.text.clone(),
                option_style: OptionStyle::Numbered,
                example_set: None,
                answer_trigger: Some(assets.triggers.step_by_step.clone()),
            },
            Strategy::FewShot | Strategy::FewShotCot | Strategy::StanceReasoner => Self {
                strategy,
                header: assets.few_shot_header.clone(),
                option_style: OptionStyle::Dash,
                example_set: Some(assets.diverse_examples.clone()),
                answer_trigger: None,
            },
            Strategy::HomogeneousCot => Self {
                strategy,
                header: assets.few_shot_header.clone(),
                option_style: OptionStyle::Dash,
                example_set: Some(assets.homogeneous_examples.clone()),
                answer_trigger: None,
            },
        }
    }

    /// Replaces the task question of a zero-shot template.
    pub fn with_description(mut self, description: &TaskDescription) -> Self {
        self.header = description.text.clone();
        self
    }

    pub fn check(&self) -> Result<(), PromptError> {
        let expected_style = if self.strategy == Strategy::ZeroShotCot {
            OptionStyle::Numbered
        } else {
            OptionStyle::Dash
        };
        if self.option_style != expected_style {
            return Err(PromptError::InvalidTemplate(format!(
                "{} requires {expected_style:?} options",
                self.strategy
            )));
        }
        if self.strategy.is_few_shot() {
            match &self.example_set {
                Some(set) if !set.is_empty() => {}
                _ => return Err(PromptError::MissingExampleSet(self.strategy)),
            }
        } else if self.answer_trigger.is_none() {
            return Err(PromptError::InvalidTemplate(format!("{} needs an answer trigger", self.strategy)));
        }
        if self.header.trim().is_empty() {
            return Err(PromptError::InvalidTemplate("empty header".into()));
        }
        Ok(())
    }
}

/// Tweets are embedded on a single line.
fn one_line(text: &str) -> String {
    text.split(['\n', '\r']).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

pub fn render_example_block(example: &ExampleBlock, with_reasoning: bool) -> String {
    let mut out = format!("tweet: <{}>\ntarget: {}\n", one_line(&example.tweet), example.target);
    if with_reasoning {
        out.push_str(&format!("reasoning: {}\n", example.reasoning.render()));
    }
    out.push_str(&format!("stance: {}", example.label));
    out
}

fn question(template: &PromptTemplate, target: &str) -> String {
    format!(
        "Question: {}\nThe options are:\n{}",
        template.header.replace(TARGET_PLACEHOLDER, target),
        template.option_style.render()
    )
}

/// Builds the full prompt for one tweet, ending where the model should continue.
pub fn assemble_prompt(template: &PromptTemplate, tweet: &TweetRecord) -> Result<String, PromptError> {
    template.check()?;
    let text = one_line(&tweet.text);
    let head = question(template, &tweet.target);
    if !template.strategy.is_few_shot() {
        let trigger = template.answer_trigger.as_deref().unwrap_or_default();
        return Ok(format!("{head}\ntweet: <{text}>\nAnswer: {trigger}"));
    }

    let with_reasoning = template.strategy.has_reasoning();
    let mut parts = vec![head];
    if let Some(set) = &template.example_set {
        parts.extend(set.examples.iter().map(|ex| render_example_block(ex, with_reasoning)));
    }
    let cue = if with_reasoning { "reasoning:" } else { "stance:" };
    parts.push(format!("tweet: <{text}>\ntarget: {}\n{cue}", tweet.target));
    Ok(parts.join("\n\n"))
}

/// Second zero-shot CoT step: the first prompt, the generated reasoning and the answer trigger.
pub fn zero_shot_cot_answer_prompt(step_one: &str, reasoning: &str, answer_trigger: &str) -> String {
    let reasoning = one_line(reasoning);
    let reasoning = reasoning.trim().trim_end_matches('.').trim_end();
    if reasoning.is_empty() {
        format!("{step_one} {answer_trigger}")
    } else {
        format!("{step_one} {reasoning}. {answer_trigger}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweet() -> TweetRecord {
        TweetRecord::new("1", "God is not real", "Atheism")
    }

    #[test]
    fn zero_shot_layout() {
        let assets = PromptAssets::builtin();
        let t = PromptTemplate::for_strategy(Strategy::ZeroShot, &assets);
        let p = assemble_prompt(&t, &tweet()).unwrap();
        assert_eq!(
            p,
            "Question: In a conversation about \"Atheism\", what could the tweet's point of view be towards \"Atheism\"?\n\
             The options are:\n- against\n- favor\n- none\ntweet: <God is not real>\nAnswer: The tweet could be"
        );
    }

    #[test]
    fn example_block_with_and_without_reasoning() {
        let assets = PromptAssets::builtin();
        let ex = &assets.diverse_examples.examples[2];
        assert_eq!(
            render_example_block(ex, true),
            "tweet: <I love the way the sun sets every day. #Nature #Beauty>\ntarget: Taxes\n\
             reasoning: the author is in favor of nature and beauty -> the author is neutral towards taxes\nstance: none"
        );
        assert_eq!(
            render_example_block(ex, false),
            "tweet: <I love the way the sun sets every day. #Nature #Beauty>\ntarget: Taxes\nstance: none"
        );
    }

    #[test]
    fn few_shot_without_examples_is_rejected() {
        let assets = PromptAssets::builtin();
        let mut t = PromptTemplate::for_strategy(Strategy::StanceReasoner, &assets);
        t.example_set = None;
        assert!(matches!(
            assemble_prompt(&t, &tweet()),
            Err(PromptError::MissingExampleSet(Strategy::StanceReasoner))
        ));
    }

    #[test]
    fn zero_shot_cot_must_be_numbered() {
        let assets = PromptAssets::builtin();
        let mut t = PromptTemplate::for_strategy(Strategy::ZeroShotCot, &assets);
        t.option_style = OptionStyle::Dash;
        assert!(t.check().is_err());
    }

    #[test]
    fn answer_prompt_joins_reasoning() {
        assert_eq!(
            zero_shot_cot_answer_prompt("P Let's think step by step.", " The author mocks it.\n", "Therefore, the answer is"),
            "P Let's think step by step. The author mocks it. Therefore, the answer is"
        );
        assert_eq!(zero_shot_cot_answer_prompt("P", "  ", "T"), "P T");
    }

    #[test]
    fn multi_line_tweets_are_flattened() {
        let assets = PromptAssets::builtin();
        let t = PromptTemplate::for_strategy(Strategy::FewShot, &assets);
        let rec = TweetRecord::new("2", "line one\nline two", "Atheism");
        let p = assemble_prompt(&t, &rec).unwrap();
        assert!(p.ends_with("tweet: <line one line two>\ntarget: Atheism\nstance:"));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("stance-reasoner".parse::<Strategy>().unwrap(), Strategy::StanceReasoner);
        assert!("cot".parse::<Strategy>().is_err());
    }
}
