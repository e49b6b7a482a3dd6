//! Synthetic cohorts: subjects, two-layer fitting, cycle synthesis, plane
//! clipping and automated quality checks.

pub mod clip;
pub mod cohort;
pub mod cycle;
pub mod fit;
pub mod qc;
pub mod subject;
