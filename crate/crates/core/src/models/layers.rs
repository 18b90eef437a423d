use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamVector, Tensor};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config(format!("encoder dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }
}

/// Dense layer `y = x Wᵀ + b` whose weights live in a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{prefix}.weight` (and `{prefix}.bias`) with uniform
    /// `±1/√fan_in` initialization.
    pub fn build(
        params: &mut ParamVector,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut rng = rng_for(seed, &[stream]);
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let weight = params.push(format!("{prefix}.weight"), Tensor::matrix(fan_out, fan_in, w)?, true)?;
        let bias = if bias {
            let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Some(params.push(format!("{prefix}.bias"), Tensor::vector(b), true)?)
        } else {
            None
        };
        Ok(Self { weight, bias, fan_in, fan_out })
    }

    pub fn forward(&self, params: &ParamVector, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.fan_in {
            return Err(Error::shape(format!(
                "layer {} expects input dim {}, got {d}",
                params.name(self.weight),
                self.fan_in
            )));
        }
        let mut y = x.matmul_t(params.tensor(self.weight))?;
        if let Some(b) = self.bias {
            let b = params.tensor(b).data();
            let rows = y.shape()[0];
            for r in 0..rows {
                for (v, bi) in y.row_mut(r).iter_mut().zip(b) {
                    *v += bi;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates weight/bias gradients (when trainable) and optionally
    /// returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &ParamVector,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut ParamVector,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        if params.is_trainable(self.weight) {
            let gw = dy.t_matmul(x)?;
            grads.tensor_mut(self.weight).axpy(1.0, &gw)?;
        }
        if let Some(b) = self.bias {
            if params.is_trainable(b) {
                let (rows, cols) = dy.dims2()?;
                let gb = grads.tensor_mut(b).data_mut();
                for r in 0..rows {
                    for c in 0..cols {
                        gb[c] += dy.data()[r * cols + c];
                    }
                }
            }
        }
        if need_input_grad {
            Ok(Some(dy.matmul(params.tensor(self.weight))?))
        } else {
            Ok(None)
        }
    }

    pub fn param_indices(&self) -> impl Iterator<Item = usize> {
        std::iter::once(self.weight).chain(self.bias)
    }
}

/// Multilayer perceptron: activation after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: EncoderSpec,
    pub layers: Vec<Linear>,
}

/// Per-layer inputs plus the final output, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    inputs: Vec<Tensor>,
    pub output: Tensor,
}

impl Mlp {
    pub fn build(params: &mut ParamVector, prefix: &str, spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(i, (fi, fo))| {
                Linear::build(params, &format!("{prefix}.layer{i}"), fi, fo, true, spec.seed, i as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn forward(&self, params: &ParamVector, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(params, x)?.output)
    }

    pub fn forward_trace(&self, params: &ParamVector, x: &Tensor) -> Result<MlpTrace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(params, &h)?;
            if i != last {
                let act = self.spec.activation;
                y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            inputs.push(std::mem::replace(&mut h, y));
        }
        Ok(MlpTrace { inputs, output: h })
    }

    /// Backpropagates `d_out`. Layers below the lowest trainable layer are
    /// skipped unless the input gradient is requested.
    pub fn backward(
        &self,
        params: &ParamVector,
        trace: &MlpTrace,
        d_out: Tensor,
        grads: &mut ParamVector,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let lowest_trainable = self
            .layers
            .iter()
            .position(|l| l.param_indices().any(|i| params.is_trainable(i)));
        let stop = match (need_input_grad, lowest_trainable) {
            (true, _) => 0,
            (false, Some(i)) => i,
            (false, None) => return Ok(None),
        };
        let mut d = d_out;
        for i in (stop..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let want_input = i > stop || need_input_grad;
            let dx = layer.backward(params, &trace.inputs[i], &d, grads, want_input)?;
            match dx {
                Some(mut dx) if i > 0 => {
                    let act = self.spec.activation;
                    for (g, &y) in dx.data_mut().iter_mut().zip(trace.inputs[i].data()) {
                        *g *= act.derivative_from_output(y);
                    }
                    d = dx;
                }
                Some(dx) => return Ok(Some(dx)),
                None => return Ok(None),
            }
        }
        Ok(None)
    }

    pub fn param_indices(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| l.param_indices()).collect()
    }

    /// Identity weights and zero biases. Every layer must be square.
    pub fn set_identity(&self, params: &mut ParamVector) -> Result<()> {
        for layer in &self.layers {
            set_linear_identity(layer, params)?;
        }
        Ok(())
    }
}

pub(crate) fn set_linear_identity(layer: &Linear, params: &mut ParamVector) -> Result<()> {
    if layer.fan_in != layer.fan_out {
        return Err(Error::shape("identity initialization needs square layers"));
    }
    *params.tensor_mut(layer.weight) = Tensor::identity(layer.fan_in);
    if let Some(b) = layer.bias {
        params.tensor_mut(b).data_mut().fill(0.0);
    }
    Ok(())
}

/// Treats a single vector as a one-row batch.
pub(crate) fn as_row(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [d] => Tensor::matrix(1, *d, x.data().to_vec()),
        [1, _] => Ok(x.clone()),
        s => Err(Error::shape(format!("expected a single vector, got shape {s:?}"))),
    }
}
