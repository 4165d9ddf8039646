use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Sigmoid),
            other => Err(Error::parse(format!("unknown activation code {other}"))),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer sizes and hidden activations. The decoder mirrors the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub latent_dim: usize,
    pub encoder_activation: Activation,
    pub decoder_activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: [usize; 2], latent_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            latent_dim,
            encoder_activation: Activation::Relu,
            decoder_activation: Activation::Tanh,
        }
    }

    /// 12×12 canvases, 64/64 hidden units, 5 latent dimensions.
    pub fn desk_default() -> Self {
        Self::new(144, [64, 64], 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.latent_dim == 0 {
            return Err(Error::invalid("architecture sizes must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each parameter layer, in [`ParamLayer::ALL`] order.
    pub fn layer_shapes(&self) -> [(usize, usize); 7] {
        let [h1, h2] = self.hidden;
        let d = self.latent_dim;
        [
            (self.input_dim, h1),
            (h1, h2),
            (h2, d),
            (h2, d),
            (d, h2),
            (h2, h1),
            (h1, self.input_dim),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Parameterised layers, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamLayer {
    Enc1,
    Enc2,
    MeanHead,
    LogVarHead,
    Dec1,
    Dec2,
    Output,
}

impl ParamLayer {
    pub const ALL: [ParamLayer; 7] = [
        ParamLayer::Enc1,
        ParamLayer::Enc2,
        ParamLayer::MeanHead,
        ParamLayer::LogVarHead,
        ParamLayer::Dec1,
        ParamLayer::Dec2,
        ParamLayer::Output,
    ];
    pub const ENCODER: [ParamLayer; 4] = [
        ParamLayer::Enc1,
        ParamLayer::Enc2,
        ParamLayer::MeanHead,
        ParamLayer::LogVarHead,
    ];
    /// Decoder layers from the latent side outwards.
    pub const DECODER: [ParamLayer; 3] = [ParamLayer::Dec1, ParamLayer::Dec2, ParamLayer::Output];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamLayer::Enc1 => "enc_1",
            ParamLayer::Enc2 => "enc_2",
            ParamLayer::MeanHead => "mean_head",
            ParamLayer::LogVarHead => "log_var_head",
            ParamLayer::Dec1 => "dec_1",
            ParamLayer::Dec2 => "dec_2",
            ParamLayer::Output => "output",
        }
    }
}

impl fmt::Display for ParamLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamLayer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::parse(format!("unknown layer '{s}'")))
    }
}

/// Fully connected layer: `y = x · weights + bias`, weights stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Matrix::from_fn(fan_in, fan_out, |_, _| limit * (2.0 * rng.next_f64() - 1.0));
        Self {
            weights,
            bias: vec![0.0; fan_out],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weights)?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    /// Weights (row-major) followed by biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.data().iter().chain(self.bias.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.data_mut().iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    arch: Architecture,
    layers: Vec<Dense>,
}

impl VaeModel {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SplitMix64::derive(seed, 0);
        let layers = arch
            .layer_shapes()
            .iter()
            .map(|&(i, o)| Dense::glorot(i, o, &mut rng))
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_shapes().iter().map(|&(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self { arch, layers })
    }

    /// Rebuilds a model from parameters laid out as in [`VaeModel::flat_params`].
    pub fn from_flat(arch: Architecture, params: &[f64]) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        if params.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        for (dst, &src) in model.params_mut().zip(params) {
            *dst = src;
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn layer(&self, id: ParamLayer) -> &Dense {
        &self.layers[id.index()]
    }

    pub fn layer_mut(&mut self, id: ParamLayer) -> &mut Dense {
        &mut self.layers[id.index()]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::params_mut)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// Runs the full network on `images` with reparameterisation noise `noise`
    /// (`batch × latent_dim`).
    pub fn forward(&self, images: &Matrix, noise: &Matrix) -> Result<ForwardPass> {
        let d = self.arch.latent_dim;
        if images.cols() != self.arch.input_dim {
            return Err(Error::invalid(format!(
                "model expects {} input features, got {}",
                self.arch.input_dim,
                images.cols()
            )));
        }
        if noise.shape() != (images.rows(), d) {
            return Err(Error::invalid(format!(
                "noise must be {}x{d}, got {:?}",
                images.rows(),
                noise.shape()
            )));
        }
        let enc_act = self.arch.encoder_activation;
        let dec_act = self.arch.decoder_activation;

        let enc1 = self.layer(ParamLayer::Enc1).forward(images)?.map(|v| enc_act.apply(v));
        let enc2 = self.layer(ParamLayer::Enc2).forward(&enc1)?.map(|v| enc_act.apply(v));
        let mean = self.layer(ParamLayer::MeanHead).forward(&enc2)?;
        let log_var = self.layer(ParamLayer::LogVarHead).forward(&enc2)?;
        let sigma = log_var.map(|v| (0.5 * v).exp());
        let mut sampled = mean.clone();
        for ((z, s), e) in sampled.data_mut().iter_mut().zip(sigma.data()).zip(noise.data()) {
            *z += s * e;
        }
        let dec1 = self
            .layer(ParamLayer::Dec1)
            .forward(&sampled)?
            .map(|v| dec_act.apply(v));
        let dec2 = self.layer(ParamLayer::Dec2).forward(&dec1)?.map(|v| dec_act.apply(v));
        let logits = self.layer(ParamLayer::Output).forward(&dec2)?;
        let output = logits.map(sigmoid);

        Ok(ForwardPass {
            enc1,
            enc2,
            mean,
            log_var,
            sigma,
            noise: noise.clone(),
            sampled,
            dec1,
            dec2,
            output,
        })
    }

    /// Decoder only, from latent codes.
    pub fn decode(&self, latents: &Matrix) -> Result<Matrix> {
        let dec_act = self.arch.decoder_activation;
        let dec1 = self.layer(ParamLayer::Dec1).forward(latents)?.map(|v| dec_act.apply(v));
        let dec2 = self.layer(ParamLayer::Dec2).forward(&dec1)?.map(|v| dec_act.apply(v));
        Ok(self.layer(ParamLayer::Output).forward(&dec2)?.map(sigmoid))
    }
}

/// All intermediate activations of one forward pass (rows = examples).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub enc1: Matrix,
    pub enc2: Matrix,
    pub mean: Matrix,
    pub log_var: Matrix,
    pub sigma: Matrix,
    pub noise: Matrix,
    pub sampled: Matrix,
    pub dec1: Matrix,
    pub dec2: Matrix,
    /// Bernoulli means (sigmoid of the output logits).
    pub output: Matrix,
}
