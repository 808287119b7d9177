//! Toy encoders, the fusion stack and the heads.

mod forward;
mod params;

pub use forward::{fuse, plm_decode, project_predict, tau, text_encode, text_table, vision_encode, FusedRep, Slot};
pub use params::{BlockVars, Bound, ModelConfig, ModelParams};
