//! Top-down visual search over semantic belief maps.
//!
//! The pipeline: detections (real or simulated) carry per-class score
//! vectors; a grid of Dirichlet beliefs fuses them with a subjective-logic
//! update; an attention map derived from the target-class posterior drives
//! greedy fixation selection with inhibition of return; a foveal sensor
//! model calibrated per peripheral distortion level supplies likelihoods
//! for the calibrated and predictive variants. A synthetic scene simulator
//! closes the loop for testing, and the metrics module scores scanpaths
//! against human ground truth.

pub mod belief;
pub mod detections;
pub mod dirichlet;
pub mod fovea;
pub mod metrics;
pub mod raster;
pub mod search;
pub mod sensor;
pub mod simulator;

pub use belief::{BeliefGrid, ClassCatalog, LikelihoodVector};
pub use detections::{BoundingBox, Detection, DetectorAdapter, DetectorError};
pub use dirichlet::{DirichletParams, FitConfig, ScoreSample};
pub use fovea::{FocalFrame, FoveaConfig};
pub use metrics::{BaselineDensity, HumanScanpath, MetricReport};
pub use raster::Raster;
pub use search::{
    AttentionMap, Scanpath, SearchConfig, SearchSession, SearchSubject, TerminationReason, Variant,
};
pub use sensor::SensorModel;
pub use simulator::{GroundTruthSensor, SceneSpec, SyntheticScene};
