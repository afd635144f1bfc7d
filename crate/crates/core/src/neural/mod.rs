//! Small fully-connected networks, their optimizer, and the observation
//! featurization feeding them.

mod adam;
mod checkpoint;
mod featurize;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{checkpoint_load, checkpoint_save};
pub use featurize::{featurize, featurize_graph, FEATURE_DIM, POOLED_SIDE};
pub use mlp::{mlp_eval, mlp_eval_vec, mlp_forward, stage_mlp, Head, MlpLeaves, MlpParams};

/// Default hidden widths for every network in the pipeline.
pub const HIDDEN_DIMS: [usize; 2] = [256, 128];

/// Action dimension shared by both tasks.
pub const ACTION_DIM: usize = 3;
