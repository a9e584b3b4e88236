//! Cross-modal recipe retrieval at desk scale.
//!
//! * [`ste`]: captions to structured (title, entities, event) documents;
//! * [`text`]: hierarchical transformer over structured documents;
//! * [`vision`]: vision transformer with context-token injection;
//! * [`losses`]: triplet and image-text matching objectives;
//! * [`pipeline`]: two-stage training, checkpoints, ablations;
//! * [`retrieval`]: ranking metrics, sampled galleries, linear probe;
//! * [`data`]: corpus formats and a synthetic generator;
//! * [`reports`]: tables and plots.

pub mod data;
pub mod error;
pub mod losses;
pub mod pipeline;
pub mod reports;
pub mod retrieval;
pub mod ste;
pub mod text;
pub mod vision;

pub use error::{Error, Result};
