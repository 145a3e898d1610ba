//! Evaluation metrics for edited images and preference studies.

mod extract;
mod similarity;
mod stats;

pub use extract::{convex_hull, difference_map, extract_edit_mask, hull_of, ExtractParams};
pub use similarity::{
    alpha_clip_edit, clip_out, cosine, directional_clip, mean_l1, EditedScore, Embedder, SyntheticEmbedder,
};
pub use stats::{
    chi_squared_sf_1df, chi_squared_yates, majority_analysis, ChiSquared, Choice, MajorityColumn, MajorityReport,
    TiedColumn, VoteRecord, VoteTotals,
};
