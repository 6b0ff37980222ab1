pub mod backend;
pub mod dataset;
pub mod eval;
pub mod label;
pub mod prompt;
pub mod reasoner;
pub mod record;
pub mod testing;
