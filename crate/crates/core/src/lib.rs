//! Weak-supervision segmentation toolkit: turns classifier activation maps
//! into localization cues, refines them against image structure and a dense
//! CRF, and scores the resulting masks.

pub mod cues;
pub mod densecrf;
pub mod error;
pub mod imagery;
pub mod inference;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod superpixel;
pub mod synthetic;

pub use error::{Error, Result};
pub use imagery::{CueSet, ImageGray, ImageRgb, LabelMask, ScoreKind, ScoreMap, IGNORE_LABEL};
