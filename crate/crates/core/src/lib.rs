//! Semantics-geometry non-maximum suppression.
//!
//! Detections carry a scalar embedding alongside their box. Two heavily
//! overlapping boxes are only merged when their embeddings are also close, so
//! adjacent objects survive suppression. The crate covers box geometry, the
//! embedding model and its training losses, the suppression variants, score
//! fusion, evaluation and the on-disk formats.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the type to one of the two.

pub mod data_io;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod scalar;
pub mod score_fusion;
pub mod suppression;

pub use embedding::{
    assign_boxes, compute_sge, group_loss, separation_loss, sge_losses, train_provider, Assignment, Embedding,
    EmbeddingLossConfig, EmbeddingScene, LinearSemanticProvider, LossBreakdown, SemanticFeature, TrainHyper,
    TrainOutcome,
};
pub use error::{Error, Result};
pub use evaluation::{
    average_precision, kitti_difficulty_filter, log_average_miss_rate, match_detections, recall_by_mmiou, EvalReport,
    GroundTruth, KittiDifficulty, Scene,
};
pub use geometry::{iou, max_mutual_iou, occlusion_level, BBox, GeometricFeature, OcclusionLevel};
pub use scalar::Scalar;
pub use score_fusion::{fuse, GridScores};
pub use suppression::{
    greedy_nms, sg_nms, soft_nms_linear, suppress_per_class, ClassId, Detection, NmsAlgorithm, PhiFunction, PhiKind,
    SuppressionResult,
};

pub type BBox64 = BBox<f64>;
pub type BBox32 = BBox<f32>;
pub type Detection64 = Detection<f64>;
pub type Detection32 = Detection<f32>;
pub type GroundTruth64 = GroundTruth<f64>;
pub type GroundTruth32 = GroundTruth<f32>;
pub type Scene64 = Scene<f64>;
pub type Scene32 = Scene<f32>;
pub type PhiFunction64 = PhiFunction<f64>;
pub type PhiFunction32 = PhiFunction<f32>;
pub type Provider64 = LinearSemanticProvider<f64>;
pub type Provider32 = LinearSemanticProvider<f32>;
