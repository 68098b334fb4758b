//! Casemix grouping for burn patients.
//!
//! Engineers ranked severity/resource classes with k-means over
//! log-transformed LOS, cost and TBSA, learns them with a cost-sensitive
//! decision tree under a class-distance loss matrix, and compares the
//! resulting groups against rule-based HRG-style groups by intra-group
//! variance.

pub mod clustering;
pub mod cost;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evaluate;
pub mod hrg;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod svg;
pub mod synth;
pub mod tree;

pub use cost::CostMatrix;
pub use dataset::{Dataset, ExtraColumn, FeatureSpec, Schema};
pub use domain::{
    validate_record, BurnSiteEntry, Depth, FeatureKind, FeatureRef, FeatureValue, PatientRecord,
    RankedClassLabel, SiteCode, Validation, Violation,
};
pub use error::{CasemixError, Result, Stage};
pub use tree::{DecisionTree, TreeParams};
