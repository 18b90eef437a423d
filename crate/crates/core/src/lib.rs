//! Contrastive image-text fine-tuning at desk scale: a dual encoder trained
//! with symmetric InfoNCE, zero-shot classification, linear-probe and
//! end-to-end fine-tuning, SWA with cosine annealing, data-parallel training
//! over a ring all-reduce, and a sweep harness over distribution-shifted
//! synthetic data.

pub mod data;
pub mod distributed;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod optimize;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{ParamVector, Tensor};
