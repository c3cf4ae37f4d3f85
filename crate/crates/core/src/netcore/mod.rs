//! Differentiable model core: a reverse-mode tape over matrices, the per-cell
//! view networks, optimizers and the `IT2M` checkpoint envelope.

mod checkpoint;
mod model;
mod optim;
mod tape;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    MODEL_MAGIC, MODEL_VERSION,
};
pub use model::{
    default_input_scale, forward_embed, forward_segment, softmax, BoundView, CellLogits, Dense,
    ModelDims, ModelState, ViewForward, ViewNet, LEAKY_SLOPE, PARAMS_PER_VIEW,
};
pub use optim::{poly_lr, sgd_step, Optimizer, OptimizerKind, POLY_POWER};
pub use tape::{softmax_rows, Gradients, Tape, Tensor, Var};
