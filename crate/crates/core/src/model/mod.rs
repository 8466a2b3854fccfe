//! Network specifications for the two detection stages, their forward and
//! backward passes, and checkpoint storage.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{init_weights, Checkpoint, TrainingMeta, MAGIC};
pub use network::{
    backward, forward, init_params, loss_and_grad, predict, sample_rng, Mode, Params, Trace,
};
pub use spec::{
    build_basic_spec, build_basic_spec_with, build_final_spec, build_final_spec_with,
    infer_shapes, spatial_chain, ArchOptions, LayerSpec, NetworkSpec, MA_CLASS, PATCH_SIZE,
};
