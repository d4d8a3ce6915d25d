//! Blind rating studies over generated and real images.
//!
//! A [`Store`] holds studies and ratings as append-only JSON lines; the
//! [`service`] module exposes it over HTTP and [`report`] computes the
//! aggregate score tables.

mod error;
mod model;
pub mod report;
pub mod service;
mod store;

pub use error::{StudyError, StudyResult};
pub use model::{Origin, Rating, RatingInput, RosterImage, Scale, SessionImage, SessionPayload, Study, StudyRequest};
pub use report::{aggregate, AggregateReport, Band, BoundaryRule, ImageScore, OriginSummary, ThresholdCount};
pub use store::{session_order, Store, SubmitOutcome};
