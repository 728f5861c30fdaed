//! Fixture aggregator and publisher server.
//!
//! One HTTP server plays every role in an end-to-end run: the aggregator
//! (`/search`, `/r` redirects), every publisher host (requests arrive
//! through it as an http proxy, so the absolute request URI or the `Host`
//! header names the publisher) and a completion model at `/model/complete`.
//! Responses depend only on the corpus and the request, except that a
//! `flaky` article fails its first request.

mod corpus;
mod server;

pub use corpus::{FixtureArticle, FixtureCorpus, Item, Listing, ListingRef, NoiseItem, NoiseKind, DEFAULT_CORPUS};
pub use server::{render_listing, serve, LoggedRequest, ServerHandle, GARBAGE_MODEL, LISTING_CAP};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus does not parse: {0}")]
    Parse(String),
    #[error("listing references undefined url {0}")]
    DanglingReference(String),
    #[error("url {0} is defined more than once")]
    DuplicateUrl(String),
    #[error("item id {0} is defined more than once")]
    DuplicateId(String),
    #[error("listing for edition {edition} and query {query:?} is defined more than once")]
    DuplicateListing { edition: String, query: String },
    #[error("cannot start server on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
}
