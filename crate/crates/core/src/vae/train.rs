use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Matrix;

use super::model::{ParamLayer, VaeModel};
use super::objective::{gradients, Batch, LossOptions, ObjectiveSpec};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Snapshot every this many steps; must divide `steps`.
    pub checkpoint_interval: u64,
    pub prob_clip: f64,
    pub pixel_reduction: super::objective::PixelReduction,
}

impl Default for TrainConfig {
    /// Optimiser settings of the original full-scale protocol.
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 300_000,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            checkpoint_interval: 6_000,
            prob_clip: 1e-7,
            pixel_reduction: super::objective::PixelReduction::Sum,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: same Adam moments, a larger step size and a short run.
    pub fn desk(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            learning_rate: 1e-3,
            seed,
            checkpoint_interval: steps.max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::invalid("checkpoint interval must be positive"));
        }
        if !self.steps.is_multiple_of(self.checkpoint_interval) {
            return Err(Error::invalid(format!(
                "checkpoint interval {} does not divide {} steps",
                self.checkpoint_interval, self.steps
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return Err(Error::invalid("invalid optimiser settings"));
        }
        Ok(())
    }

    pub fn loss_options(&self, dataset_size: usize) -> LossOptions {
        LossOptions {
            prob_clip: self.prob_clip,
            pixel_reduction: self.pixel_reduction,
            dataset_size,
        }
    }
}

/// Per-layer trainable/frozen flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreezeMask {
    frozen: [bool; 7],
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { frozen: [true; 7] }
    }

    /// Everything frozen except the listed layers.
    pub fn only_trainable(layers: &[ParamLayer]) -> Self {
        let mut mask = Self::all();
        for l in layers {
            mask.frozen[l.index()] = false;
        }
        mask
    }

    pub fn freeze(mut self, layer: ParamLayer) -> Self {
        self.frozen[layer.index()] = true;
        self
    }

    pub fn is_frozen(&self, layer: ParamLayer) -> bool {
        self.frozen[layer.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub model: VaeModel,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VaeModel,
    pub checkpoints: Vec<Checkpoint>,
    /// Minibatch loss at every step, before the update.
    pub losses: Vec<f64>,
}

struct Adam {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &VaeModel) -> Self {
        let sizes: Vec<usize> = ParamLayer::ALL.iter().map(|&l| model.layer(l).param_count()).collect();
        Self {
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(
        &mut self,
        model: &mut VaeModel,
        grads: &super::objective::Gradients,
        cfg: &TrainConfig,
        mask: &FreezeMask,
    ) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t);
        for layer in ParamLayer::ALL {
            if mask.is_frozen(layer) {
                continue;
            }
            let idx = layer.index();
            let (m, v) = (&mut self.first[idx], &mut self.second[idx]);
            let params = model.layer_mut(layer).params_mut();
            for (((p, &g), m), v) in params
                .zip(grads.layer(layer).params())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
                *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Trains with Adam on minibatches drawn with replacement from `data`
/// (rows are examples). Frozen layers are left untouched to the bit.
pub fn train(
    model: &VaeModel,
    data: &Matrix,
    objective: &ObjectiveSpec,
    config: &TrainConfig,
    freeze: &FreezeMask,
) -> Result<TrainOutcome> {
    config.validate()?;
    objective.validate()?;
    if data.rows() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if data.cols() != model.architecture().input_dim {
        return Err(Error::invalid(format!(
            "training data has {} features, model expects {}",
            data.cols(),
            model.architecture().input_dim
        )));
    }
    let d = model.latent_dim();
    let opts = config.loss_options(data.rows());
    let mut model = model.clone();
    let mut adam = Adam::new(&model);
    let mut rng = SplitMix64::derive(config.seed, 1);
    let mut checkpoints = Vec::new();
    let mut losses = Vec::with_capacity(config.steps as usize);
    let mut noise = Matrix::zeros(config.batch_size, d);

    for step in 0..config.steps {
        let indices: Vec<usize> = (0..config.batch_size).map(|_| rng.below(data.rows())).collect();
        let images = data.select_rows(&indices);
        rng.fill_normal(noise.data_mut());
        let batch = Batch {
            images: &images,
            noise: &noise,
        };
        let (breakdown, grads) = match gradients(&model, batch, objective, step, &opts) {
            Ok(r) => r,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !breakdown.total.is_finite() || breakdown.total > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                loss: breakdown.total,
            });
        }
        losses.push(breakdown.total);
        adam.step(&mut model, &grads, config, freeze);
        if !model.is_finite() {
            return Err(Error::Diverged {
                step,
                loss: breakdown.total,
            });
        }
        if (step + 1) % config.checkpoint_interval == 0 {
            checkpoints.push(Checkpoint {
                step: step + 1,
                model: model.clone(),
            });
        }
    }
    Ok(TrainOutcome {
        model,
        checkpoints,
        losses,
    })
}
