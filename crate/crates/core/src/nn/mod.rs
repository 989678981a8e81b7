//! Small feed-forward networks with exact reverse-mode gradients, the Adam
//! optimizer and the L1 proximal operator.

mod checkpoint;
mod mlp;
mod optim;

pub use checkpoint::{read_mlp, write_mlp, CHECKPOINT_MAGIC};
pub use mlp::{elu, mlp_forward, mlp_vjp, Dense, Mlp, Tape};
pub use optim::{adam_step, prox_l1, prox_l1_weighted, AdamState};
