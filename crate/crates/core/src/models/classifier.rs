use super::layers::{as_row, EncoderSpec, Linear, Mlp};
use super::TrainableModel;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::cross_entropy_batch;
use crate::numerics::{ParamVector, Tensor};

/// Image encoder with a linear classification head on top.
#[derive(Clone, Debug, PartialEq)]
pub struct VisionClassifier {
    encoder: Mlp,
    head: Linear,
    num_classes: usize,
    encoder_frozen: bool,
    params: ParamVector,
}

impl VisionClassifier {
    /// Fresh encoder from `spec`; the head is seeded from `head_seed`.
    pub fn new(spec: &EncoderSpec, num_classes: usize, head_seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("num_classes must be >= 1"));
        }
        let mut params = ParamVector::new();
        let encoder = Mlp::build(&mut params, "encoder", spec)?;
        let head = Linear::build(&mut params, "head", spec.output_dim, num_classes, true, head_seed, 2000)?;
        Ok(Self { encoder, head, num_classes, encoder_frozen: false, params })
    }

    /// Reuses pretrained encoder weights (names `encoder.*`), e.g. from
    /// [`DualEncoder::image_tower`](super::DualEncoder::image_tower).
    pub fn from_encoder(
        spec: &EncoderSpec,
        encoder_weights: &ParamVector,
        num_classes: usize,
        head_seed: u64,
    ) -> Result<Self> {
        let mut model = Self::new(spec, num_classes, head_seed)?;
        for (name, t) in encoder_weights.entries() {
            let idx = model
                .params
                .index_of(name)
                .ok_or_else(|| Error::shape(format!("no encoder parameter {name}")))?;
            if model.params.tensor(idx).shape() != t.shape() {
                return Err(Error::shape(format!("encoder parameter {name} has the wrong shape")));
            }
            *model.params.tensor_mut(idx) = t.clone();
        }
        Ok(model)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn encoder_frozen(&self) -> bool {
        self.encoder_frozen
    }

    /// Frozen: only the head is trainable (linear probe). Otherwise everything is.
    pub fn set_linear_probe_mode(&mut self, frozen: bool) {
        self.encoder_frozen = frozen;
        for idx in self.encoder.param_indices() {
            self.params.set_trainable(idx, !frozen);
        }
    }

    pub fn head_param_count(&self) -> usize {
        self.head.param_indices().map(|i| self.params.tensor(i).len()).sum()
    }

    pub fn encoder_param_indices(&self) -> Vec<usize> {
        self.encoder.param_indices()
    }

    pub fn classifier_logits(&self, x: &Tensor) -> Result<Tensor> {
        let l = self.logits_batch(&as_row(x)?)?;
        Ok(Tensor::vector(l.into_data()))
    }

    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.encoder.forward(&self.params, x)?;
        self.head.forward(&self.params, &f)
    }

    /// Encoder features for a batch (used to cache frozen features).
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(&self.params, x)
    }

    pub fn cross_entropy_loss_and_grad(
        &self,
        params: &ParamVector,
        images: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, ParamVector)> {
        let trace = self.encoder.forward_trace(params, images)?;
        let logits = self.head.forward(params, &trace.output)?;
        let (loss, d_logits) = cross_entropy_batch(&logits, labels)?;
        let mut grads = params.zeros_like();
        let need_encoder = self.encoder.param_indices().iter().any(|&i| params.is_trainable(i));
        if let Some(d) = self.head.backward(params, &trace.output, &d_logits, &mut grads, need_encoder)? {
            self.encoder.backward(params, &trace, d, &mut grads, false)?;
        }
        Ok((loss, grads))
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }
}

impl TrainableModel for VisionClassifier {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &[&Sample]) -> Result<(f64, ParamVector)> {
        let images = Tensor::from_rows(&batch.iter().map(|s| s.image_vector.data()).collect::<Vec<_>>())?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        self.cross_entropy_loss_and_grad(params, &images, &labels)
    }
}
