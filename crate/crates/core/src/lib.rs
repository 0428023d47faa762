//! Dataset curation and cross-lingual co-training toolkit for isolated sign
//! language recognition.

pub mod clip;
pub mod cotrain;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod grouping;
pub mod review;
pub mod schedule;
pub mod split;
pub mod synth;

pub use dataset::{
    load_manifest, save_manifest, DatasetManifest, GlossId, GlossLabel, GroupId, GroupLabel,
    LabelSpace, LanguageTag, SampleId, SampleRecord, SignerId, Subset,
};
pub use error::{Error, Result};
