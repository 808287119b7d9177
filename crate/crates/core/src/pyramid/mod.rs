//! Synthetic slides, tissue masking, anchor sampling and the parent-child
//! patch quadtree.

mod index;
mod mask;
mod otsu;
mod patch;
mod synth;

pub use index::{
    expand_children, AnchorTree, Level, PatchId, PatchIndex, ANCHOR_NATIVE, BAG_SIZE, EDGES_PER_ANCHOR, PATCH,
};
pub use mask::{sample_anchors, tissue_mask, tissue_mask_from_5x, AnchorSample, TissueMask, MASK_SCALE};
pub use otsu::{between_class_variance, histogram, otsu_threshold, quantize};
pub use patch::{pool_patch, pooled_from_5x, read_patch, POOL, POOLED};
pub use synth::{draw_params, render, render_downsampled, synth_slide, GenConfig, GenParams, Raster, Slide};
