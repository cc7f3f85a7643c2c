//! Surrogate bounds between the InfoNCE contrastive loss and the downstream
//! mean-supervised loss.
//!
//! The crate computes the closed-form bound quantities (surrogate
//! intercepts, essential minima, feasible region, competing bounds from
//! earlier analyses), evaluates both losses on finite populations exactly or
//! by deterministic Monte Carlo, trains a small MLP contrastively on a
//! synthetic dataset to record learning trajectories, and stress-tests the
//! inequalities with randomized property sweeps.

pub mod bounds;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod math;
pub mod mlp;
pub mod prior;
pub mod rng;
pub mod synth;
pub mod textfmt;
pub mod verify;

pub use bounds::{
    bounds_report, ci_relaxed_deltas, competitor_bounds, delta_lower, delta_upper,
    essential_bounds, essential_cont, essential_sup, feasible_region_contains, gap_identity_rhs,
    info_nce_value, BoundParams, BoundValue, BoundsReport, CompetitorBounds, InfoNce,
    InvalidReason, PriorKind, RegionCheck,
};
pub use data::LabeledDataset;
pub use error::{Error, Result};
pub use features::{build_mean_classifier, FeatureMap, MeanClassifier};
pub use losses::{
    contrastive_loss_exact, contrastive_loss_mc, linear_probe, mean_supervised_loss,
    EstimateMode, LossEstimate, ProbeConfig, ProbeResult,
};
pub use prior::{ClassPrior, ProbValue};
pub use synth::{gen_circle, train_contrastive, TrainConfig, TrainRun, TrajectoryRecord};
pub use verify::{
    check_lemma_lse, check_lemma_offset, check_sandwich, compare_bounds_table, CompareMode,
    CompareRow, VerificationReport,
};
