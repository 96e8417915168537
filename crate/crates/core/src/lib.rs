//! Energy-aware coverage-guided greybox fuzzing.
//!
//! Seeds are profiled for coverage and energy, minimised by per-edge
//! cheapest champion, and scheduled with energy-scaled airtime.

pub mod coverage;
pub mod corpus;
pub mod energy;
pub mod engine;
pub mod par;
pub mod scheduler;
pub mod stats;
pub mod ablation;
pub mod report;
pub mod config;
pub mod cli;
