use serde::{Deserialize, Serialize};

use super::layers::{as_row, set_linear_identity, EncoderSpec, Linear, Mlp, MlpTrace};
use super::TrainableModel;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::{infonce_loss_and_grad, ContrastiveLossValue, EmbeddingBatch};
use crate::numerics::{ParamVector, Tensor};

const TEMPERATURE: &str = "temperature";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEncoderSpec {
    pub image: EncoderSpec,
    pub text: EncoderSpec,
    pub embed_dim: usize,
    pub temperature: f64,
    #[serde(default)]
    pub learn_temperature: bool,
}

/// Which parameters contrastive fine-tuning may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipTrainScope {
    /// Every encoder and projection weight.
    Full,
    /// Only the image projection; both encoders and the text side stay frozen.
    ImageProjection,
}

/// Image encoder, text encoder and the two projections into the joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder {
    spec: DualEncoderSpec,
    image_encoder: Mlp,
    text_encoder: Mlp,
    image_projection: Linear,
    text_projection: Linear,
    temperature: usize,
    params: ParamVector,
}

struct Trace {
    image: MlpTrace,
    text: MlpTrace,
}

impl DualEncoder {
    pub fn new(spec: DualEncoderSpec) -> Result<Self> {
        if !(spec.temperature > 0.0) {
            return Err(Error::config(format!("temperature must be > 0, got {}", spec.temperature)));
        }
        if spec.embed_dim == 0 {
            return Err(Error::config("embed_dim must be >= 1"));
        }
        let mut params = ParamVector::new();
        let image_encoder = Mlp::build(&mut params, "image.encoder", &spec.image)?;
        let text_encoder = Mlp::build(&mut params, "text.encoder", &spec.text)?;
        let image_projection = Linear::build(
            &mut params,
            "image.projection",
            spec.image.output_dim,
            spec.embed_dim,
            false,
            spec.image.seed,
            1000,
        )?;
        let text_projection = Linear::build(
            &mut params,
            "text.projection",
            spec.text.output_dim,
            spec.embed_dim,
            false,
            spec.text.seed,
            1000,
        )?;
        let temperature =
            params.push(TEMPERATURE, Tensor::vector(vec![spec.temperature]), spec.learn_temperature)?;
        Ok(Self {
            spec,
            image_encoder,
            text_encoder,
            image_projection,
            text_projection,
            temperature,
            params,
        })
    }

    pub fn spec(&self) -> &DualEncoderSpec {
        &self.spec
    }

    pub fn temperature(&self) -> f64 {
        self.params.tensor(self.temperature).data()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    /// Sets encoder and projection weights to the identity (all layers must be square).
    pub fn set_identity(&mut self) -> Result<()> {
        self.image_encoder.set_identity(&mut self.params)?;
        self.text_encoder.set_identity(&mut self.params)?;
        set_linear_identity(&self.image_projection, &mut self.params)?;
        set_linear_identity(&self.text_projection, &mut self.params)
    }

    pub fn set_train_scope(&mut self, scope: ClipTrainScope) {
        let full = scope == ClipTrainScope::Full;
        self.params.set_trainable_prefix("image.encoder", full);
        self.params.set_trainable_prefix("text.", full);
        self.params.set_trainable_prefix("image.projection", true);
        self.params.set_trainable(self.temperature, self.spec.learn_temperature);
    }

    /// `𝒫_I(I(x))` for one image vector.
    pub fn encode_image(&self, x: &Tensor) -> Result<Tensor> {
        let e = self.encode_images(&as_row(x)?)?;
        Ok(Tensor::vector(e.into_data()))
    }

    /// `𝒫_T(T(y))` for one caption vector.
    pub fn encode_text(&self, y: &Tensor) -> Result<Tensor> {
        let e = self.encode_texts(&as_row(y)?)?;
        Ok(Tensor::vector(e.into_data()))
    }

    pub fn encode_images(&self, x: &Tensor) -> Result<Tensor> {
        self.encode_images_with(&self.params, x)
    }

    pub fn encode_texts(&self, y: &Tensor) -> Result<Tensor> {
        self.encode_texts_with(&self.params, y)
    }

    fn encode_images_with(&self, params: &ParamVector, x: &Tensor) -> Result<Tensor> {
        let u = self.image_encoder.forward(params, x)?;
        self.image_projection.forward(params, &u)
    }

    fn encode_texts_with(&self, params: &ParamVector, y: &Tensor) -> Result<Tensor> {
        let v = self.text_encoder.forward(params, y)?;
        self.text_projection.forward(params, &v)
    }

    fn forward(&self, params: &ParamVector, images: &Tensor, texts: &Tensor) -> Result<(EmbeddingBatch, Trace)> {
        let image = self.image_encoder.forward_trace(params, images)?;
        let image_emb = self.image_projection.forward(params, &image.output)?;
        let text = self.text_encoder.forward_trace(params, texts)?;
        let text_emb = self.text_projection.forward(params, &text.output)?;
        Ok((EmbeddingBatch::new(image_emb, text_emb)?, Trace { image, text }))
    }

    /// Symmetric InfoNCE on aligned `[B, input_dim]` images and `[B, text_dim]`
    /// captions, with the gradient w.r.t. every trainable parameter.
    pub fn contrastive_loss_and_grad(
        &self,
        params: &ParamVector,
        images: &Tensor,
        texts: &Tensor,
    ) -> Result<(ContrastiveLossValue, ParamVector)> {
        let (batch, trace) = self.forward(params, images, texts)?;
        let tau = params.tensor(self.temperature).data()[0];
        let (value, g) = infonce_loss_and_grad(&batch, tau)?;
        let mut grads = params.zeros_like();
        if params.is_trainable(self.temperature) {
            grads.tensor_mut(self.temperature).data_mut()[0] = g.temperature;
        }

        let need_image = self.image_encoder.param_indices().iter().any(|&i| params.is_trainable(i));
        let d_image = self
            .image_projection
            .backward(params, &trace.image.output, &g.image, &mut grads, need_image)?;
        if let Some(d) = d_image {
            self.image_encoder.backward(params, &trace.image, d, &mut grads, false)?;
        }
        let need_text = self.text_encoder.param_indices().iter().any(|&i| params.is_trainable(i));
        let d_text = self
            .text_projection
            .backward(params, &trace.text.output, &g.text, &mut grads, need_text)?;
        if let Some(d) = d_text {
            self.text_encoder.backward(params, &trace.text, d, &mut grads, false)?;
        }
        Ok((value, grads))
    }

    pub fn contrastive_loss(&self, images: &Tensor, texts: &Tensor) -> Result<ContrastiveLossValue> {
        let (batch, _) = self.forward(&self.params, images, texts)?;
        crate::losses::infonce_loss(&batch, self.temperature())
    }

    /// The image side as a standalone encoder (its weights copied out).
    pub fn image_tower(&self) -> (EncoderSpec, ParamVector) {
        let mut out = ParamVector::new();
        for idx in self.image_encoder.param_indices() {
            let name = self.params.name(idx).replacen("image.encoder", "encoder", 1);
            out.push(name, self.params.tensor(idx).clone(), true)
                .expect("names are unique within the encoder");
        }
        (self.spec.image.clone(), out)
    }

    /// Names of the image-encoder parameters.
    pub fn image_encoder_param_names(&self) -> Vec<String> {
        self.image_encoder
            .param_indices()
            .into_iter()
            .map(|i| self.params.name(i).to_string())
            .collect()
    }
}

impl TrainableModel for DualEncoder {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn loss_and_grad(&self, params: &ParamVector, batch: &[&Sample]) -> Result<(f64, ParamVector)> {
        let images = Tensor::from_rows(&batch.iter().map(|s| s.image_vector.data()).collect::<Vec<_>>())?;
        let texts = Tensor::from_rows(&batch.iter().map(|s| s.caption_vector.data()).collect::<Vec<_>>())?;
        let (value, grads) = self.contrastive_loss_and_grad(params, &images, &texts)?;
        Ok((value.total, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Activation;

    pub(crate) fn small_spec(seed: u64, activation: Activation) -> DualEncoderSpec {
        DualEncoderSpec {
            image: EncoderSpec { input_dim: 4, hidden_dims: vec![6], output_dim: 5, activation, seed },
            text: EncoderSpec {
                input_dim: 3,
                hidden_dims: vec![4],
                output_dim: 5,
                activation,
                seed: seed + 1,
            },
            embed_dim: 3,
            temperature: 0.07,
            learn_temperature: false,
        }
    }

    #[test]
    fn identity_composition() {
        let enc = |seed| EncoderSpec {
            input_dim: 4,
            hidden_dims: vec![4],
            output_dim: 4,
            activation: Activation::Relu,
            seed,
        };
        let mut m = DualEncoder::new(DualEncoderSpec {
            image: enc(1),
            text: enc(2),
            embed_dim: 4,
            temperature: 0.07,
            learn_temperature: false,
        })
        .unwrap();
        m.set_identity().unwrap();
        let e1 = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.encode_image(&e1).unwrap(), e1);
        assert_eq!(m.encode_text(&e1).unwrap(), e1);
    }

    #[test]
    fn deterministic_and_seeded() {
        let a = DualEncoder::new(small_spec(7, Activation::Tanh)).unwrap();
        let b = DualEncoder::new(small_spec(7, Activation::Tanh)).unwrap();
        assert_eq!(a.params(), b.params());
        let x = Tensor::vector(vec![1.0; 4]);
        assert_eq!(a.encode_image(&x).unwrap(), a.encode_image(&x).unwrap());
        let c = DualEncoder::new(small_spec(8, Activation::Tanh)).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let m = DualEncoder::new(small_spec(1, Activation::Tanh)).unwrap();
        assert!(m.encode_image(&Tensor::vector(vec![1.0; 3])).is_err());
        assert!(m.encode_text(&Tensor::vector(vec![1.0; 4])).is_err());
    }

    #[test]
    fn branches_share_no_parameters() {
        let m = DualEncoder::new(small_spec(1, Activation::Tanh)).unwrap();
        let names: Vec<&str> = m.params().entries().map(|(n, _)| n).collect();
        let image: Vec<_> = names.iter().filter(|n| n.starts_with("image.")).collect();
        let text: Vec<_> = names.iter().filter(|n| n.starts_with("text.")).collect();
        assert_eq!(image.len() + text.len() + 1, names.len());
        assert!(image.iter().all(|n| !text.contains(n)));
    }

    #[test]
    fn image_projection_scope() {
        let mut m = DualEncoder::new(small_spec(1, Activation::Tanh)).unwrap();
        m.set_train_scope(ClipTrainScope::ImageProjection);
        assert_eq!(m.params().num_trainable(), 5 * 3);
        m.set_train_scope(ClipTrainScope::Full);
        assert_eq!(m.params().num_trainable(), m.params().num_params() - 1);
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut s = small_spec(1, Activation::Tanh);
        s.temperature = 0.0;
        assert!(DualEncoder::new(s).is_err());
    }
}
