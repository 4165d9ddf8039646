use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Matrix;

use super::model::VaeModel;

/// Captured layers, in heatmap order.
pub const LAYER_NAMES: [&str; 9] = [
    "input", "enc_1", "enc_2", "mean", "variance", "sampled", "dec_1", "dec_2", "output",
];
/// Layers on the encoder side (`input` through `sampled`).
pub const ENCODER_LAYERS: [&str; 6] = ["input", "enc_1", "enc_2", "mean", "variance", "sampled"];
pub const DECODER_LAYERS: [&str; 3] = ["dec_1", "dec_2", "output"];

/// Per-layer activations of one model on a fixed evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCapture {
    pub model_id: String,
    pub epoch: u32,
    layers: Vec<(String, Matrix)>,
    noise: Matrix,
}

impl ActivationCapture {
    /// Assembles a capture from externally loaded layers (all with equal row counts).
    pub fn from_layers(
        model_id: impl Into<String>,
        epoch: u32,
        layers: Vec<(String, Matrix)>,
        noise: Matrix,
    ) -> Result<Self> {
        let rows = noise.rows();
        if layers.iter().any(|(_, m)| m.rows() != rows) {
            return Err(Error::invalid("captured layers must share the same row count"));
        }
        Ok(Self {
            model_id: model_id.into(),
            epoch,
            layers,
            noise,
        })
    }

    pub fn layers(&self) -> &[(String, Matrix)] {
        &self.layers
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn layer(&self, name: &str) -> Option<&Matrix> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Reparameterisation noise used for the `sampled` layer.
    pub fn noise(&self) -> &Matrix {
        &self.noise
    }

    pub fn n_examples(&self) -> usize {
        self.noise.rows()
    }
}

/// Standard-normal noise for `rows` examples, reproducible from `seed`.
pub fn eval_noise(rows: usize, latent_dim: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::derive(seed, 2);
    let mut noise = Matrix::zeros(rows, latent_dim);
    rng.fill_normal(noise.data_mut());
    noise
}

/// Runs `model` on `eval_set` with noise drawn from `noise_seed` and records
/// every layer. The variance layer holds σ, not log σ².
pub fn capture_activations(model: &VaeModel, eval_set: &Matrix, noise_seed: u64) -> Result<ActivationCapture> {
    let noise = eval_noise(eval_set.rows(), model.latent_dim(), noise_seed);
    capture_with_noise(model, eval_set, &noise)
}

pub fn capture_with_noise(model: &VaeModel, eval_set: &Matrix, noise: &Matrix) -> Result<ActivationCapture> {
    if eval_set.rows() == 0 {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let pass = model.forward(eval_set, noise)?;
    let layers = LAYER_NAMES
        .iter()
        .zip([
            eval_set.clone(),
            pass.enc1,
            pass.enc2,
            pass.mean,
            pass.sigma,
            pass.sampled,
            pass.dec1,
            pass.dec2,
            pass.output,
        ])
        .map(|(name, m)| (name.to_string(), m))
        .collect();
    Ok(ActivationCapture {
        model_id: String::new(),
        epoch: 0,
        layers,
        noise: pass.noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::model::{Architecture, ParamLayer};

    #[test]
    fn prior_model_samples_equal_noise() {
        let arch = Architecture::new(4, [3, 3], 1);
        let mut model = VaeModel::new(arch, 0).unwrap();
        *model.layer_mut(ParamLayer::MeanHead) = crate::vae::model::Dense::zeros(3, 1);
        *model.layer_mut(ParamLayer::LogVarHead) = crate::vae::model::Dense::zeros(3, 1);
        let x = Matrix::from_fn(5, 4, |i, j| (i * j) as f64 / 10.0);
        let cap = capture_activations(&model, &x, 3).unwrap();
        assert_eq!(cap.layer("sampled").unwrap(), cap.noise());
        assert!(cap.layer("variance").unwrap().data().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn sampled_is_reparameterised() {
        let model = VaeModel::new(Architecture::new(4, [3, 3], 2), 4).unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| ((i + 2 * j) % 4) as f64 / 3.0);
        let cap = capture_activations(&model, &x, 8).unwrap();
        assert_eq!(cap.layer_names(), LAYER_NAMES.to_vec());
        let (mu, sigma, z) = (
            cap.layer("mean").unwrap(),
            cap.layer("variance").unwrap(),
            cap.layer("sampled").unwrap(),
        );
        for i in 0..6 {
            for j in 0..2 {
                let expect = mu.get(i, j) + sigma.get(i, j) * cap.noise().get(i, j);
                assert_eq!(z.get(i, j), expect);
            }
        }
        assert!(cap.layers().iter().all(|(_, m)| m.rows() == 6));
        assert!(capture_activations(&model, &Matrix::zeros(0, 4), 0).is_err());
    }
}
