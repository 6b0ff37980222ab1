//! Process exit codes per error class.

use std::fmt;

use stancekit::backend::BackendError;
use stancekit::dataset::DatasetError;
use stancekit::eval::EvalError;
use stancekit::prompt::PromptError;
use stancekit::reasoner::ReasonerError;

pub const OK: u8 = 0;
pub const USAGE: u8 = 2;
pub const CONFIG: u8 = 3;
pub const IO: u8 = 4;
pub const BACKEND: u8 = 5;
pub const CACHE: u8 = 6;
pub const JOIN: u8 = 7;

/// Bad arguments that clap cannot catch.
#[derive(Debug)]
pub struct UsageError(pub String);

/// An invalid or inconsistent run configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config: {}", self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for ConfigError {}

fn backend_code(e: &BackendError) -> u8 {
    match e {
        BackendError::CacheMiss(_) | BackendError::CacheCorrupt(_) => CACHE,
        BackendError::CacheIo(_) => IO,
        _ => BACKEND,
    }
}

fn prompt_code(e: &PromptError) -> u8 {
    match e {
        PromptError::Backend(b) => backend_code(b),
        PromptError::LogprobsUnsupported(_) => BACKEND,
        PromptError::Asset(_) => IO,
        _ => CONFIG,
    }
}

fn reasoner_code(e: &ReasonerError) -> u8 {
    match e {
        ReasonerError::Backend(b) => backend_code(b),
        ReasonerError::Prompt(p) => prompt_code(p),
        ReasonerError::AllSamplesUnparseable { .. } => BACKEND,
        ReasonerError::InvalidConfig(_) => CONFIG,
    }
}

/// Maps the first recognizable error in the chain to an exit code.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::Empty | EvalError::Unjoinable { .. } | EvalError::Duplicate { .. } => JOIN,
                EvalError::InvalidSweep(_) => USAGE,
                EvalError::Reasoner(r) => reasoner_code(r),
            };
        }
        if let Some(e) = cause.downcast_ref::<ReasonerError>() {
            return reasoner_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PromptError>() {
            return prompt_code(e);
        }
        if let Some(e) = cause.downcast_ref::<BackendError>() {
            return backend_code(e);
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return match e {
                DatasetError::Config(_) => CONFIG,
                _ => IO,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return IO;
        }
    }
    1
}
