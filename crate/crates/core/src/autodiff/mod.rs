//! Minimal dense-tensor engine with recorded operations and reverse-mode
//! gradient computation.
//!
//! Everything trainable in this crate is built on [`Graph`]: a forward pass
//! records each operation on a tape, `backward` replays the tape in reverse
//! to populate gradients, and [`adam_step`] consumes accumulated gradients
//! stored on a [`ParameterSet`]. The graph is rebuilt per batch because the
//! number of atoms varies per molecule.
//!
//! All values are 64-bit floats. Broadcasting is restricted to what the
//! message-passing/MLP stack needs: equal shapes, a broadcast row `(1, c)`,
//! a broadcast column `(r, 1)`, or a scalar. Anything else panics with both
//! shapes named.

mod adam;
mod checkpoint;
mod graph;
mod params;

#[cfg(test)]
mod tests;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Graph, NodeId};
pub use params::{ParameterSet, Tensor};
