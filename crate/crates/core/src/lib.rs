//! Corpus-level segmentation objectives.
//!
//! Soft segmentations are per-pixel class distributions. The expected
//! intersection and union of a prediction with a ground truth are additive
//! over pixels, so they can be accumulated image by image and merged to give
//! corpus-level IOU and UOI objectives exactly. This crate provides those
//! objectives with analytic gradients, the matching hard metrics, coarse/fine
//! resampling, proposal re-ranking and a small full-batch trainer.

pub mod error;
pub mod format;
pub mod losses;
pub mod metrics;
pub mod proposals;
pub mod report;
pub mod rerank;
pub mod seg;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{
    combined_loss, cross_entropy, expected_overlap, finite_diff_check, grad_cross_entropy, grad_iou, grad_uoi,
    iou_objective, merge, uoi_loss, ExpectedOverlap, LossReport, Objective,
};
pub use metrics::{
    class_iou, class_uoi, confusion_counts, gradient_sweep, iou_grad_fpfn, lower_bound_gap, mean_iou, mean_uoi,
    uoi_grad_fpfn, ConfusionCounts,
};
pub use rerank::{kl_score, oracle_select, rank_select, train_ranker, ProposalSet, RankModel};
pub use seg::{
    downsample_to_soft, softmax, softmax_jacobian, upsample_naive, upsample_superpixel, GradientField, GridShape,
    HardSegmentation, ScoreMap, SoftSegmentation, SuperpixelMap,
};
