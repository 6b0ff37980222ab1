//! Prompt assets, prompt assembly, example-set checks and task-description selection.

mod assets;
mod examples;
mod selection;
mod template;

pub use assets::{ManifestEntry, PromptAssets, Triggers};
pub use examples::{
    validate_example_set, ExampleProfile, ExampleSet, ValidationReport, Violation, EXAMPLES_PER_LABEL,
    EXAMPLES_PER_SET,
};
pub use selection::{
    generate_paraphrases, parse_paraphrases, score_description, scoring_prompt, select_best_description,
    ParaphraseConfig, PerplexityScore, SelectionReport,
};
pub use template::{
    assemble_prompt, render_example_block, zero_shot_cot_answer_prompt, DescriptionOrigin, OptionStyle,
    PromptTemplate, Strategy, TaskDescription, TARGET_PLACEHOLDER,
};

use thiserror::Error;

use crate::backend::BackendError;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt asset: {0}")]
    Asset(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid task description: {0}")]
    InvalidDescription(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("strategy {0} requires an example set")]
    MissingExampleSet(Strategy),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no usable paraphrase in the completion")]
    EmptyParaphraseSet,
    #[error("backend cannot return token log-probabilities: {0}")]
    LogprobsUnsupported(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
