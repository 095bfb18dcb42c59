//! Feed-forward networks with hand-written reverse-mode gradients, Adam and
//! Polyak averaging.

mod mlp;
mod optim;

pub use mlp::{Gradient, Mlp, Tape};
pub use optim::{polyak_update, Adam, AdamConfig};
