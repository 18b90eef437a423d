//! Synthetic two-modality data with disjoint in-distribution and
//! out-of-distribution domains, few-shot subsampling and NDJSON import/export.

mod io;
mod subsample;
mod synthetic;

pub use io::{read_ndjson, write_ndjson, DatasetSource, NdjsonSource, SyntheticSource};
pub use subsample::{round_half_up, subsample_fraction};
pub use synthetic::{
    class_caption, class_captions, class_prototypes, domain_transform, generate_dataset, pretext_pool,
    DatasetConfig, DomainTransform,
};

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;

/// An aligned (image, caption) pair with its class and domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image_vector: Tensor,
    pub caption_vector: Tensor,
    pub label: usize,
    pub domain_id: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<Sample>,
    pub id_test: Vec<Sample>,
    pub ood_test: Vec<Sample>,
}

impl SplitBundle {
    pub fn domains(samples: &[Sample]) -> std::collections::BTreeSet<usize> {
        samples.iter().map(|s| s.domain_id).collect()
    }
}
