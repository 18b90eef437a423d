//! Dense tensors, parameter collections and the primitives shared by every
//! other module: cosine similarity, stabilized softmax, finite-difference
//! gradient checks.

mod gradcheck;
mod ops;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use ops::{argmax, cosine_similarity, cosine_similarity_t, log_sum_exp, softmax};
pub(crate) use ops::{normalize_rows, softmax_in_place};
pub use params::ParamVector;
pub use tensor::{dot, norm, Tensor};
