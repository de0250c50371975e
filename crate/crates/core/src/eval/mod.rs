//! Faithfulness evaluation: insertion/deletion curves, ID score and conservation reports.

pub mod conservation;
pub mod curves;

pub use conservation::{conservation_report, CheckpointDeviation, ConservationReport};
pub use curves::{
    curve, evaluate_map, id_score, mean_std, perturb, rank_pixels, rank_values, step_counts,
    trapezoid_auc, EvalCurve, FaithfulnessScores, PerturbMode, PixelRanking, DEFAULT_STEPS,
};
