//! Analytic gradients against central finite differences, for every objective.

use repsim::rng::SplitMix64;
use repsim::vae::{gradients, loss, Architecture, Batch, Dense, LossOptions, ObjectiveSpec, ParamLayer, VaeModel};
use repsim::Matrix;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so exact zeros compare absolutely.
const REL_FLOOR: f64 = 1e-6;

fn toy_problem(seed: u64) -> (VaeModel, Matrix, Matrix) {
    let arch = Architecture::new(10, [7, 6], 3);
    let model = VaeModel::new(arch, seed).unwrap();
    let mut rng = SplitMix64::new(seed + 100);
    let images = Matrix::from_fn(8, 10, |_, _| rng.next_f64());
    let noise = Matrix::from_fn(8, 3, |_, _| rng.next_normal());
    (model, images, noise)
}

fn max_relative_error(model: &VaeModel, images: &Matrix, noise: &Matrix, objective: &ObjectiveSpec, step: u64) -> f64 {
    let opts = LossOptions {
        dataset_size: 1000,
        ..LossOptions::default()
    };
    let batch = Batch { images, noise };
    let (_, grads) = gradients(model, batch, objective, step, &opts).unwrap();
    let analytic = grads.flat();
    let params = model.flat_params();
    let arch = *model.architecture();
    let eval = |p: &[f64]| {
        let m = VaeModel::from_flat(arch, p).unwrap();
        loss(&m, batch, objective, step, &opts).unwrap().total
    };
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + STEP;
        let up = eval(&p);
        p[i] = params[i] - STEP;
        let down = eval(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (numeric - analytic[i]).abs() / analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

fn objectives() -> Vec<(ObjectiveSpec, u64)> {
    vec![
        (ObjectiveSpec::vanilla(), 0),
        (ObjectiveSpec::beta(4.0), 0),
        (ObjectiveSpec::annealed(30.0, 1.0, 100), 50),
        (ObjectiveSpec::beta_tc(4.0), 0),
        (ObjectiveSpec::dip_ii(5.0, 5.0), 0),
    ]
}

#[test]
fn finite_differences_match_for_every_objective() {
    for seed in [1, 2] {
        let (model, images, noise) = toy_problem(seed);
        for (objective, step) in objectives() {
            let err = max_relative_error(&model, &images, &noise, &objective, step);
            assert!(err < REL_TOL, "{objective} seed {seed}: max relative error {err:e}");
        }
    }
}

#[test]
fn pixel_mean_reduction_gradients() {
    let (model, images, noise) = toy_problem(3);
    let opts = LossOptions {
        pixel_reduction: repsim::vae::PixelReduction::Mean,
        dataset_size: 8,
        ..LossOptions::default()
    };
    let batch = Batch {
        images: &images,
        noise: &noise,
    };
    let obj = ObjectiveSpec::beta(2.0);
    let (_, g) = gradients(&model, batch, &obj, 0, &opts).unwrap();
    let sum_opts = LossOptions {
        dataset_size: 8,
        ..LossOptions::default()
    };
    let l_mean = loss(&model, batch, &obj, 0, &opts).unwrap();
    let l_sum = loss(&model, batch, &obj, 0, &sum_opts).unwrap();
    assert!((l_mean.terms.reconstruction * 10.0 - l_sum.terms.reconstruction).abs() < 1e-12);
    // Spot-check one decoder weight by finite differences.
    let mut p = model.flat_params();
    let idx = p.len() - 3;
    let arch = *model.architecture();
    p[idx] += STEP;
    let up = loss(&VaeModel::from_flat(arch, &p).unwrap(), batch, &obj, 0, &opts)
        .unwrap()
        .total;
    p[idx] -= 2.0 * STEP;
    let down = loss(&VaeModel::from_flat(arch, &p).unwrap(), batch, &obj, 0, &opts)
        .unwrap()
        .total;
    let numeric = (up - down) / (2.0 * STEP);
    assert!((numeric - g.flat()[idx]).abs() < 1e-8);
}

#[test]
fn kl_gradient_vanishes_at_the_prior() {
    let (mut model, images, noise) = toy_problem(4);
    // Collapsed: zero latent heads, decoder ignores z.
    *model.layer_mut(ParamLayer::MeanHead) = Dense::zeros(6, 3);
    *model.layer_mut(ParamLayer::LogVarHead) = Dense::zeros(6, 3);
    model.layer_mut(ParamLayer::Dec1).weights = Matrix::zeros(3, 6);
    let batch = Batch {
        images: &images,
        noise: &noise,
    };
    for obj in [ObjectiveSpec::vanilla(), ObjectiveSpec::beta(8.0)] {
        let (l, g) = gradients(&model, batch, &obj, 0, &LossOptions::default()).unwrap();
        assert_eq!(l.terms.kl, 0.0);
        assert!(g.layer(ParamLayer::MeanHead).bias.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn beta_loss_monotone_in_beta() {
    let (model, images, noise) = toy_problem(5);
    let batch = Batch {
        images: &images,
        noise: &noise,
    };
    let opts = LossOptions::default();
    let mut last = f64::NEG_INFINITY;
    for beta in [1.0, 2.0, 4.0, 8.0, 50.0] {
        let l = loss(&model, batch, &ObjectiveSpec::beta(beta), 0, &opts).unwrap();
        assert!(l.terms.kl > 0.0);
        assert!(l.total >= last);
        last = l.total;
    }
}
