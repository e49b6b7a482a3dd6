//! Sequential recovery, the direct-fit baseline and evaluation metrics.

pub mod normalize;
pub mod sequential;
pub mod si;
pub mod direct_fit;
pub mod metrics;
pub mod ablation;
