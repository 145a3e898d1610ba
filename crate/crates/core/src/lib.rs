//! Click-anchored dynamic mask evolution for text-guided local image edits.
//!
//! Given an image, a prompt and a click, [`engine::edit`] grows an edit mask
//! inside a blended latent diffusion loop: a Gaussian potential centered on
//! the click is cut by a rising threshold, while the gradient of a masked
//! image/prompt similarity raises the potential along the mask contour. The
//! settled mask drives a final multi-seed blended run whose best candidate is
//! feather-composited onto the input.
//!
//! Model roles live behind the traits in [`backends`]; the deterministic
//! synthetic backend makes every stage testable without model weights.

pub mod backends;
pub mod engine;
pub mod error;
pub mod fields;
pub mod latent;
pub mod masks;
pub mod metrics;

pub use error::{Error, Result};
