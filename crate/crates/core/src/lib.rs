//! Two-stage convolutional detection of microaneurysms in colour fundus
//! images.
//!
//! The crate covers the whole path from raw images to an FROC evaluation:
//!
//! * [`dataset`] loads images and centroid annotations and generates seeded
//!   synthetic fundus images.
//! * [`preprocess`] removes the background with a large median filter.
//! * [`patcher`] cuts labelled 101×101 patches, balancing classes for the
//!   first stage and mining hard negatives for the second.
//! * [`tensor`] and [`model`] hold the layer operations, the two network
//!   architectures and checkpoints. [`trainer`] runs momentum SGD.
//! * [`inference`] slides a network over an image to build probability
//!   maps. [`postprocess`] turns maps into scored candidates.
//! * [`evaluation`] matches candidates to lesions and computes FROC curves
//!   and the competition performance metric.
//! * [`config`] parses run configurations and writes manifests, and
//!   [`pipeline`] wires everything into cross-validated runs.
//!
//! Every random choice is drawn from a stream keyed by the run seed and a
//! stable index, so results do not depend on the number of threads.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod patcher;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod raster;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
