mod fsutil;
pub mod cli;
pub mod config;
pub mod evaluator;
pub mod grader;
pub mod ingest;
pub mod llm;
pub mod model;
pub mod prompt;
pub mod runner;
pub mod suite;
