//! The `privstory` command-line pipeline as a library, so stages can be
//! driven from tests and tools.

pub mod config;
pub mod pipeline;
