//! Mammogram positioning quality control.
//!
//! The crate covers everything except the learned line predictor:
//!
//! * [`geometry`] – points, segments, line intersection and distances.
//! * [`imaging`] – grayscale rasters, normalisation and resampling.
//! * [`annotations`] – LabelMe-compatible PEC/PNL/tag documents.
//! * [`augmentation`] – joint image/annotation flips and rotations.
//! * [`bbdetect`] – Hough circle search for the nipple BB marker.
//! * [`decision`] – the intersection rule, the 1 cm rule and view selection.
//! * [`report`] – the plain-text technologist report.
//! * [`phantom`] – synthetic cases with exact ground truth.
//! * [`eval`] – endpoint errors, confusion matrices, detection rates.

pub mod annotations;
pub mod augmentation;
pub mod bbdetect;
pub mod decision;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod phantom;
pub mod report;
pub mod view;

pub use geometry::{Bounds, Point, Segment};
pub use imaging::GrayImage;
pub use view::{Laterality, Side, View};
