//! Large-scale street-view evaluation of facade visual quality and
//! street-wall continuity.
//!
//! The pipeline samples capture points along street segments, turns images
//! into fixed-length feature vectors, trains three linear SVMs
//! (qualification, quality 1–4, continuity), aggregates predictions per
//! segment, exports GeoJSON scoring maps and checks machine scores against
//! survey ratings with Spearman's rank correlation.

pub mod dataset;
pub mod features;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use dataset::{ImageRecord, LabelRecord, LabelStore, Split, Task};
pub use features::{Codebook, FeatureVector};
pub use geo::{SamplePoint, StreetSegment};
pub use model::{Hyperparams, Normalize, SvmModel};
pub use pipeline::{PipelineError, SegmentScore, SurveyRecord, ValidationReport};
