//! Multilayer perceptron encoders mapping feature rows to `r`-dimensional
//! real codes.
//!
//! Activations are kept column-major in the math sense: a batch of `n_b`
//! inputs becomes a `d x n_b` matrix, and every layer computes
//! `Z = W H + b 1^T`, `H' = act(Z)`. The encoder output is `r x n_b`, one
//! column per input row, matching the `F`/`G` layout used by the objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matstore::{row_sums, Matrix};

pub const DEFAULT_HIDDEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    layers: Vec<Dense>,
}

/// Intermediate values recorded by [`MlpEncoder::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `inputs[k]` is the input to layer `k` (`in_k x n_b`); the last entry
    /// is the network output.
    inputs: Vec<Matrix>,
    /// Pre-activations per layer.
    pre: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.inputs.last().expect("tape is never empty")
    }

    pub fn batch_size(&self) -> usize {
        self.output().cols()
    }
}

/// Parameter gradients with shapes mirroring the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(enc: &MlpEncoder) -> Self {
        Self {
            weights: enc.layers.iter().map(|l| Matrix::zeros(l.out_dim(), l.in_dim())).collect(),
            biases: enc.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

impl MlpEncoder {
    /// Assembles an encoder, checking that layer dimensions chain and that
    /// the last layer is linear.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::contract("encoder needs at least one layer"));
        };
        if last.activation != Activation::Identity {
            return Err(Error::contract("final encoder layer must use the identity activation"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::contract(format!(
                    "layer {k}: bias length {} != out dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} parameters")));
            }
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::contract(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    w[0].out_dim(),
                    k + 1,
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `dims` lists every width from
    /// input to output; hidden layers use ReLU, the last layer is linear.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::contract(format!("invalid layer widths {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit));
                Dense {
                    weight,
                    bias: vec![0.0; fan_out],
                    activation: if k + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Encodes every row of `batch`. Returns the `r x n_b` output and the tape.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "encoder forward",
                left: (self.output_dim(), self.input_dim()),
                right: batch.shape(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(batch.transpose());
        for layer in &self.layers {
            let h = inputs.last().expect("non-empty");
            let mut z = layer.weight.matmul(h)?;
            let n_b = z.cols();
            for (i, b) in layer.bias.iter().enumerate() {
                for v in &mut z.as_mut_slice()[i * n_b..(i + 1) * n_b] {
                    *v += b;
                }
            }
            let act = layer.activation;
            let out = z.map(|v| act.apply(v));
            pre.push(z);
            inputs.push(out);
        }
        let tape = Tape { inputs, pre };
        Ok((tape.output().clone(), tape))
    }

    /// Forward pass without keeping a tape.
    pub fn encode(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Reverse-mode pass. Given `d loss / d outputs` returns the parameter
    /// gradients and `d loss / d batch` (`n_b x d`, same shape as the batch).
    pub fn backward(&self, tape: &Tape, out_grad: &Matrix) -> Result<(GradBuffer, Matrix)> {
        if tape.pre.len() != self.layers.len()
            || tape
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(z, l)| z.rows() != l.out_dim())
            || tape.inputs[0].rows() != self.input_dim()
        {
            return Err(Error::contract("tape was not produced by this encoder"));
        }
        if out_grad.shape() != tape.output().shape() {
            return Err(Error::Shape {
                op: "encoder backward",
                left: tape.output().shape(),
                right: out_grad.shape(),
            });
        }

        let mut grads = GradBuffer::zeros_like(self);
        let mut upstream = out_grad.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = layer.activation;
            let dz = upstream.zip_with(&tape.pre[k], "activation grad", |g, z| g * act.derivative(z))?;
            grads.weights[k] = dz.matmul(&tape.inputs[k].transpose())?;
            grads.biases[k] = row_sums(&dz);
            upstream = layer.weight.transpose().matmul(&dz)?;
        }
        Ok((grads, upstream.transpose()))
    }

    /// `theta <- theta - lr * grad`. Rejects non-finite gradients or a
    /// negative step without touching the parameters.
    pub fn sgd_step(&mut self, grads: &GradBuffer, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::contract(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if grads.weights.len() != self.layers.len()
            || grads
                .weights
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.shape() != l.weight.shape())
        {
            return Err(Error::contract("gradient buffer does not match encoder shape"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("encoder gradient".into()));
        }
        let mut next = self.layers.clone();
        for ((layer, gw), gb) in next.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            for (w, g) in layer.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= lr * g;
            }
        }
        if next.iter().any(|l| !l.weight.is_finite() || l.bias.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("encoder parameters after SGD step".into()));
        }
        self.layers = next;
        Ok(())
    }
}

/// `d_x -> hidden (ReLU) -> r`.
pub fn default_image_encoder(d_x: usize, r: usize, seed: u64) -> Result<MlpEncoder> {
    MlpEncoder::glorot(&[d_x, DEFAULT_HIDDEN, r], seed)
}

/// `d_y -> hidden (ReLU) -> r`: two fully connected layers.
pub fn default_text_encoder(d_y: usize, r: usize, seed: u64) -> Result<MlpEncoder> {
    MlpEncoder::glorot(&[d_y, DEFAULT_HIDDEN, r], seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(weight: Matrix, bias: Vec<f64>) -> MlpEncoder {
        MlpEncoder::from_layers(vec![Dense { weight, bias, activation: Activation::Identity }]).unwrap()
    }

    #[test]
    fn identity_network() {
        let enc = linear(Matrix::identity(2), vec![0.0; 2]);
        let out = enc.encode(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let enc = linear(Matrix::zeros(3, 2), vec![0.5, -1.0, 2.0]);
        let batch = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 4.0]]).unwrap();
        let out = enc.encode(&batch).unwrap();
        for j in 0..2 {
            assert_eq!(out.column(j), vec![0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let enc = default_text_encoder(4, 2, 0).unwrap();
        assert!(matches!(enc.encode(&Matrix::zeros(1, 5)), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_layer_gradients() {
        let enc = linear(Matrix::identity(2), vec![0.0; 2]);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (_, tape) = enc.forward(&x).unwrap();
        let g = Matrix::from_rows(&[[0.5], [-1.5]]).unwrap();
        let (grads, dx) = enc.backward(&tape, &g).unwrap();
        // g x^T
        assert_eq!(grads.weights[0].as_slice(), &[0.5, 1.0, -1.5, -3.0]);
        assert_eq!(grads.biases[0], vec![0.5, -1.5]);
        assert_eq!(dx.as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let enc = MlpEncoder::glorot(&[3, 5, 2], 4).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.3);
        let (out, tape) = enc.forward(&x).unwrap();
        let (grads, dx) = enc.backward(&tape, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        assert_eq!(grads, GradBuffer::zeros_like(&enc));
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut enc = linear(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0.0]);
        let before = enc.clone();
        let grads = GradBuffer {
            weights: vec![Matrix::from_rows(&[[2.0]]).unwrap()],
            biases: vec![vec![0.0]],
        };
        enc.sgd_step(&grads, 0.0).unwrap();
        assert_eq!(enc, before);
        enc.sgd_step(&grads, 0.1).unwrap();
        assert!((enc.layers()[0].weight[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut enc = linear(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0.0]);
        let before = enc.clone();
        let grads = GradBuffer {
            weights: vec![Matrix::from_fn(1, 1, |_, _| f64::NAN)],
            biases: vec![vec![0.0]],
        };
        assert!(matches!(enc.sgd_step(&grads, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(enc, before);
    }

    #[test]
    fn default_encoders() {
        let enc = default_text_encoder(32, 16, 3).unwrap();
        assert_eq!(enc.layers().len(), 2);
        assert_eq!(enc.output_dim(), 16);
        assert_eq!(enc.layers()[0].out_dim(), DEFAULT_HIDDEN);
        assert_eq!(enc.layers()[0].activation, Activation::Relu);
        assert_eq!(enc.layers()[1].activation, Activation::Identity);
        assert_eq!(enc, default_text_encoder(32, 16, 3).unwrap());
        assert_ne!(enc, default_text_encoder(32, 16, 4).unwrap());

        let img = default_image_encoder(8, 4, 1).unwrap();
        let out = img.encode(&Matrix::zeros(3, 8)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_layers_rejects_broken_chains() {
        let a = Dense { weight: Matrix::zeros(3, 2), bias: vec![0.0; 3], activation: Activation::Relu };
        let b = Dense { weight: Matrix::zeros(1, 4), bias: vec![0.0; 1], activation: Activation::Identity };
        assert!(MlpEncoder::from_layers(vec![a.clone(), b]).is_err());
        assert!(MlpEncoder::from_layers(vec![a]).is_err());
    }
}
