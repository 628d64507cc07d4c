//! Annotation service: persists selection rounds as an append-only event log,
//! hands pending pairs to annotators and exports finished triplet manifests.
//!
//! All mutations go through [`AnnotationStore`], which appends one JSON line per
//! event and rebuilds its state from that log on startup. [`http::router`] puts a
//! JSON API in front of a store.

pub mod error;
pub mod http;
pub mod state;
pub mod store;

pub use error::ServiceError;
pub use state::{AnnotationRecord, Event, LoggedEvent, PairStatus, RoundState, ServiceState};
pub use store::{AnnotationStore, StoreOptions, Submission};
