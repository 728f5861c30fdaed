//! Build a topic news dataset from an aggregator.
//!
//! The stages live in their own modules and work on [`store::NewsRecord`]s;
//! [`pipeline`] runs them against on-disk artifacts and a run manifest.
//! [`simnews`] is a fixture server standing in for the aggregator, the
//! publishers and the metadata model.

pub mod analyze;
pub mod config;
pub mod dedup;
pub mod enrich;
pub mod extract;
pub mod harvest;
pub mod llmmeta;
pub mod pipeline;
pub mod plan;
pub mod simnews;
pub mod store;
pub mod text;
pub mod validate;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub struct Configuration;
    #[doc = include_str!("../../../book/src/stages.md")]
    pub struct Stages;
    #[doc = include_str!("../../../book/src/fixtures.md")]
    pub struct Fixtures;
    #[doc = include_str!("../../../book/src/analysis.md")]
    pub struct Analysis;
    #[doc = include_str!("../../../book/src/records.md")]
    pub struct Records;
}
