//! Bayesian threshold test for disparities in disease testing.

pub mod data;
pub mod fit;
pub mod ingest;
pub mod model;
pub mod report;
pub mod riskdist;
pub mod special;
pub mod synth;
