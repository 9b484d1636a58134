//! Reverse-mode differentiation and the ADAM optimizer used to train every
//! network in the crate.

mod adam;
mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, LrSchedule};
pub use checkpoint::Checkpoint;
pub use params::{Init, ParamId, ParamSlice, ParamStore};
pub use tape::{NodeId, Op, Tape, Unary};
pub use tensor::Tensor;
