//! Extraction of privacy behaviors and privacy stories from software
//! documentation with large language models, plus scoring, review and
//! training-data export.

pub mod corpus;
pub mod embedding;
pub mod evaluator;
pub mod export;
pub mod gateway;
pub mod par;
pub mod parser;
pub mod prompt;
pub mod review;
pub mod run;
pub mod story;
pub mod taxonomy;
pub mod text;

/// Exact rational used for scores and credits.
pub type Rational = num_rational::BigRational;
