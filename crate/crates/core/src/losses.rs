//! Symmetric temperature-scaled InfoNCE and softmax cross-entropy.
//!
//! The contrastive loss works on raw (unnormalized) embeddings. Cosine
//! normalization happens inside, so the returned gradients already include
//! the projection onto each embedding's tangent space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, normalize_rows, softmax_in_place, Tensor};

/// Aligned image/text embeddings: row `k` of each side is a positive pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    image: Tensor,
    text: Tensor,
}

impl EmbeddingBatch {
    pub fn new(image: Tensor, text: Tensor) -> Result<Self> {
        let (bi, di) = image.dims2()?;
        let (bt, dt) = text.dims2()?;
        if bi != bt || di != dt {
            return Err(Error::shape(format!(
                "image embeddings [{bi}, {di}] vs text embeddings [{bt}, {dt}]"
            )));
        }
        if bi == 0 {
            return Err(Error::Empty("EmbeddingBatch"));
        }
        Ok(Self { image, text })
    }

    pub fn batch_size(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn text(&self) -> &Tensor {
        &self.text
    }

    /// Swaps the roles of the two modalities.
    pub fn swapped(&self) -> Self {
        Self { image: self.text.clone(), text: self.image.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveLossValue {
    pub image_loss: f64,
    pub text_loss: f64,
    pub total: f64,
}

/// Gradient of `total` w.r.t. the raw embeddings and the temperature.
#[derive(Clone, Debug)]
pub struct InfoNceGrad {
    pub image: Tensor,
    pub text: Tensor,
    pub temperature: f64,
}

pub fn infonce_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<ContrastiveLossValue> {
    let (value, _) = infonce_forward(batch, temperature)?;
    Ok(value)
}

struct Forward {
    u: Tensor,
    v: Tensor,
    image_norms: Vec<f64>,
    text_norms: Vec<f64>,
    logits: Tensor,
}

fn infonce_forward(batch: &EmbeddingBatch, temperature: f64) -> Result<(ContrastiveLossValue, Forward)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let (u, image_norms) = normalize_rows(&batch.image, "infonce image embeddings")?;
    let (v, text_norms) = normalize_rows(&batch.text, "infonce text embeddings")?;
    let mut logits = u.matmul_t(&v)?;
    logits.scale(1.0 / temperature);

    let b = batch.batch_size();
    let mut image_loss = 0.0;
    let mut text_loss = 0.0;
    let mut column = vec![0.0; b];
    for k in 0..b {
        let row = logits.row(k);
        image_loss += log_sum_exp(row) - row[k];
        for (j, c) in column.iter_mut().enumerate() {
            *c = logits.data()[j * b + k];
        }
        text_loss += log_sum_exp(&column) - column[k];
    }
    image_loss /= b as f64;
    text_loss /= b as f64;
    let value = ContrastiveLossValue {
        image_loss,
        text_loss,
        total: 0.5 * (image_loss + text_loss),
    };
    Ok((value, Forward { u, v, image_norms, text_norms, logits }))
}

pub fn infonce_loss_and_grad(
    batch: &EmbeddingBatch,
    temperature: f64,
) -> Result<(ContrastiveLossValue, InfoNceGrad)> {
    let (value, fwd) = infonce_forward(batch, temperature)?;
    let b = batch.batch_size();
    let scale = 0.5 / b as f64;

    // dL/dlogits = ½·(rowsoftmax − I)/B + ½·(colsoftmax − I)/B
    let mut g = fwd.logits.clone();
    for k in 0..b {
        softmax_in_place(g.row_mut(k));
    }
    let mut col = vec![0.0; b];
    for j in 0..b {
        for (i, c) in col.iter_mut().enumerate() {
            *c = fwd.logits.data()[i * b + j];
        }
        softmax_in_place(&mut col);
        for (i, c) in col.iter().enumerate() {
            g.data_mut()[i * b + j] += c;
        }
    }
    for k in 0..b {
        g.data_mut()[k * b + k] -= 2.0;
    }
    g.scale(scale);

    let d_temperature = -g
        .data()
        .iter()
        .zip(fwd.logits.data())
        .map(|(gi, si)| gi * si)
        .sum::<f64>()
        / temperature;

    let mut du = g.matmul(&fwd.v)?;
    du.scale(1.0 / temperature);
    let mut dv = g.t_matmul(&fwd.u)?;
    dv.scale(1.0 / temperature);

    let image = unnormalize_grad(&fwd.u, &fwd.image_norms, du);
    let text = unnormalize_grad(&fwd.v, &fwd.text_norms, dv);
    Ok((value, InfoNceGrad { image, text, temperature: d_temperature }))
}

/// Chain rule through `u = x/‖x‖`: `dx = (du − u(u·du)) / ‖x‖`.
fn unnormalize_grad(u: &Tensor, norms: &[f64], mut du: Tensor) -> Tensor {
    for (k, &n) in norms.iter().enumerate() {
        let uk = u.row(k);
        let proj: f64 = uk.iter().zip(du.row(k)).map(|(a, b)| a * b).sum();
        for (d, &ui) in du.row_mut(k).iter_mut().zip(uk) {
            *d = (*d - ui * proj) / n;
        }
    }
    du
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("cross_entropy_loss"));
    }
    if label >= logits.len() {
        return Err(Error::OutOfRange { index: label, len: logits.len() });
    }
    Ok((log_sum_exp(logits) - logits[label]).max(0.0))
}

/// Mean cross-entropy over a `[B, C]` logit matrix and its gradient.
pub fn cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = logits.dims2()?;
    if b != labels.len() {
        return Err(Error::shape(format!("{b} logit rows for {} labels", labels.len())));
    }
    if b == 0 {
        return Err(Error::Empty("cross_entropy_batch"));
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (k, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::OutOfRange { index: label, len: c });
        }
        loss += cross_entropy_loss(logits.row(k), label)?;
        let row = grad.row_mut(k);
        softmax_in_place(row);
        row[label] -= 1.0;
    }
    grad.scale(1.0 / b as f64);
    Ok((loss / b as f64, grad))
}
