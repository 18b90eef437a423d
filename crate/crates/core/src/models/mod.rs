//! Desk-scale dual encoder and vision-only classifier built from small MLPs.
//!
//! Parameters of every model live in one [`ParamVector`]; layer structs only
//! hold indices into it. That keeps the optimizer, weight averaging and
//! gradient collectives model-agnostic.

mod checkpoint;
mod classifier;
mod dual;
mod layers;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use classifier::VisionClassifier;
pub use dual::{ClipTrainScope, DualEncoder, DualEncoderSpec};
pub use layers::{Activation, EncoderSpec, Linear, Mlp, MlpTrace};

use crate::data::Sample;
use crate::error::Result;
use crate::numerics::ParamVector;

/// A model whose objective can be evaluated on a batch of samples.
pub trait TrainableModel: Clone + Send + Sync {
    fn params(&self) -> &ParamVector;

    fn params_mut(&mut self) -> &mut ParamVector;

    /// Mean loss over `batch` at `params` and its gradient. Frozen entries
    /// receive zero gradient.
    fn loss_and_grad(&self, params: &ParamVector, batch: &[&Sample]) -> Result<(f64, ParamVector)>;
}
