//! Latent-space diagnostics and transfer probes for trained VAEs.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::linear_cka;
use crate::tensor::Matrix;
use crate::vae::{
    capture_activations, train, ActivationCapture, FreezeMask, ObjectiveSpec, ParamLayer, TrainConfig, VaeModel,
};

/// Cut-offs deciding whether a latent dimension is passive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveThresholds {
    pub kl_max: f64,
    pub mean_abs_mu_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// A model with at most this many active dimensions is collapsed.
    pub collapse_threshold_dims: usize,
}

impl Default for PassiveThresholds {
    fn default() -> Self {
        Self {
            kl_max: 0.05,
            mean_abs_mu_max: 0.1,
            sigma_min: 0.8,
            sigma_max: 1.2,
            collapse_threshold_dims: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    HealthyPolarised,
    Collapsed,
    NoPassiveDims,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::HealthyPolarised => "healthy_polarised",
            Verdict::Collapsed => "collapsed",
            Verdict::NoPassiveDims => "no_passive_dims",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionStats {
    pub kl_nats: f64,
    pub mean_abs_mu: f64,
    pub mean_sigma: f64,
    pub passive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDiagnostics {
    pub dims: Vec<DimensionStats>,
    pub verdict: Verdict,
}

impl LatentDiagnostics {
    pub fn active_count(&self) -> usize {
        self.dims.iter().filter(|d| !d.passive).count()
    }

    pub fn passive_count(&self) -> usize {
        self.dims.len() - self.active_count()
    }

    /// One row per dimension.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,kl_nats,mean_abs_mu,mean_sigma,status\n");
        for (j, d) in self.dims.iter().enumerate() {
            let status = if d.passive { "passive" } else { "active" };
            let _ = writeln!(
                out,
                "{j},{:.6},{:.6},{:.6},{status}",
                d.kl_nats, d.mean_abs_mu, d.mean_sigma
            );
        }
        out
    }

    pub fn verdict_record(&self) -> String {
        format!(
            "verdict={} active={} passive={} d={}",
            self.verdict,
            self.active_count(),
            self.passive_count(),
            self.dims.len()
        )
    }
}

fn latent_layers(capture: &ActivationCapture) -> Result<(&Matrix, &Matrix)> {
    let mu = capture
        .layer("mean")
        .ok_or_else(|| Error::invalid("capture has no mean layer"))?;
    let sigma = capture
        .layer("variance")
        .ok_or_else(|| Error::invalid("capture has no variance layer"))?;
    if mu.shape() != sigma.shape() {
        return Err(Error::invalid("mean and variance layers differ in shape"));
    }
    Ok((mu, sigma))
}

/// Per-dimension KL to the prior, averaged over the captured examples.
pub fn per_dim_kl(capture: &ActivationCapture) -> Result<Vec<f64>> {
    let (mu, sigma) = latent_layers(capture)?;
    let mut kl = vec![0.0; mu.cols()];
    for i in 0..mu.rows() {
        for (j, k) in kl.iter_mut().enumerate() {
            let (m, s) = (mu.get(i, j), sigma.get(i, j));
            *k += 0.5 * (m * m + s * s - 1.0 - (s * s).ln());
        }
    }
    let n = mu.rows().max(1) as f64;
    Ok(kl.into_iter().map(|k| k / n).collect())
}

pub fn latent_stats(
    capture: &ActivationCapture,
    per_dim_kl: &[f64],
    thresholds: &PassiveThresholds,
) -> Result<LatentDiagnostics> {
    let (mu, sigma) = latent_layers(capture)?;
    if per_dim_kl.len() != mu.cols() {
        return Err(Error::invalid(format!(
            "{} KL values for {} latent dimensions",
            per_dim_kl.len(),
            mu.cols()
        )));
    }
    let n = mu.rows().max(1) as f64;
    let dims: Vec<DimensionStats> = per_dim_kl
        .iter()
        .enumerate()
        .map(|(j, &kl_nats)| {
            let mean_abs_mu = mu.column(j).iter().map(|v| v.abs()).sum::<f64>() / n;
            let mean_sigma = sigma.column(j).iter().sum::<f64>() / n;
            let passive = kl_nats < thresholds.kl_max
                && mean_abs_mu < thresholds.mean_abs_mu_max
                && (thresholds.sigma_min..=thresholds.sigma_max).contains(&mean_sigma);
            DimensionStats {
                kl_nats,
                mean_abs_mu,
                mean_sigma,
                passive,
            }
        })
        .collect();
    let active = dims.iter().filter(|d| !d.passive).count();
    let verdict = if active <= thresholds.collapse_threshold_dims {
        Verdict::Collapsed
    } else if active == dims.len() {
        Verdict::NoPassiveDims
    } else {
        Verdict::HealthyPolarised
    };
    Ok(LatentDiagnostics { dims, verdict })
}

/// Latent representations whose similarity signature separates collapse from polarisation.
pub const SIGNATURE_LAYERS: [&str; 3] = ["mean", "variance", "sampled"];

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureRow {
    pub b_layer: String,
    pub a_layer: String,
    pub cka: f64,
}

/// Linear CKA of `b`'s mean, variance and sampled layers against every layer of `a`.
pub fn collapse_similarity_signature(a: &ActivationCapture, b: &ActivationCapture) -> Result<Vec<SignatureRow>> {
    if a.n_examples() != b.n_examples() {
        return Err(Error::invalid("captures were not taken on the same evaluation set"));
    }
    let mut rows = Vec::new();
    for b_layer in SIGNATURE_LAYERS {
        let bm = b
            .layer(b_layer)
            .ok_or_else(|| Error::invalid(format!("capture b has no {b_layer} layer")))?;
        for (a_layer, am) in a.layers() {
            rows.push(SignatureRow {
                b_layer: b_layer.to_string(),
                a_layer: a_layer.clone(),
                cka: linear_cka(bm, am)?.value,
            });
        }
    }
    Ok(rows)
}

pub fn signature_to_csv(rows: &[SignatureRow]) -> String {
    let mut out = String::from("b_layer,a_layer,cka\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.b_layer, r.a_layer, r.cka);
    }
    out
}

fn check_canvas(model: &VaeModel, images: &Matrix) -> Result<()> {
    let expected = model.architecture().input_dim;
    if images.cols() != expected {
        return Err(Error::invalid(format!(
            "images have {} pixels, model expects {expected}",
            images.cols()
        )));
    }
    Ok(())
}

/// Decoder output for `images`, sampling latents with noise from `noise_seed`.
pub fn reconstruct(model: &VaeModel, images: &Matrix, noise_seed: u64) -> Result<Matrix> {
    check_canvas(model, images)?;
    let cap = capture_activations(model, images, noise_seed)?;
    Ok(cap.layer("output").cloned().unwrap_or_else(|| Matrix::zeros(0, 0)))
}

/// Per-pixel mean squared reconstruction error.
pub fn reconstruction_mse(model: &VaeModel, images: &Matrix, noise_seed: u64) -> Result<f64> {
    let recon = reconstruct(model, images, noise_seed)?;
    let sq: f64 = recon
        .data()
        .iter()
        .zip(images.data())
        .map(|(r, x)| (r - x) * (r - x))
        .sum();
    Ok(sq / images.data().len().max(1) as f64)
}

/// Side-by-side target inputs (left) and their reconstructions (right).
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionGrid {
    pub width: usize,
    pub n_examples: usize,
    /// `(n_examples·width) × (2·width)` pixel intensities in [0, 1].
    pub pixels: Matrix,
}

pub fn transfer_reconstruction_grid(
    source: &VaeModel,
    target: &Matrix,
    width: usize,
    n_examples: usize,
    noise_seed: u64,
) -> Result<ReconstructionGrid> {
    if width * width != target.cols() {
        return Err(Error::invalid(format!(
            "target images have {} pixels, not a {width}×{width} canvas",
            target.cols()
        )));
    }
    if n_examples == 0 || n_examples > target.rows() {
        return Err(Error::invalid(format!(
            "grid needs between 1 and {} examples, got {n_examples}",
            target.rows()
        )));
    }
    let inputs = target.select_rows(&(0..n_examples).collect::<Vec<_>>());
    let recon = reconstruct(source, &inputs, noise_seed)?;
    let pixels = Matrix::from_fn(n_examples * width, 2 * width, |r, c| {
        let (example, y) = (r / width, r % width);
        let src = if c < width { &inputs } else { &recon };
        src.get(example, y * width + c % width)
    });
    Ok(ReconstructionGrid {
        width,
        n_examples,
        pixels,
    })
}

/// Intensity-weighted centre `(x, y)` of a flattened `width × width` image.
pub fn intensity_centroid(image: &[f64], width: usize) -> Option<(f64, f64)> {
    let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, &v) in image.iter().enumerate() {
        mass += v;
        sx += v * (i % width) as f64;
        sy += v * (i / width) as f64;
    }
    (mass > 0.0).then(|| (sx / mass, sy / mass))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            iterations: 500,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Majority-class rate of the held-out split.
    pub chance: f64,
    pub n_classes: usize,
}

/// Fits a multinomial logistic regression on the first `train_fraction` of
/// the rows and reports accuracy on the rest. Weights start at zero.
pub fn latent_probe(latents: &Matrix, labels: &[usize], train_fraction: f64) -> Result<ProbeResult> {
    latent_probe_with(
        latents,
        labels,
        &ProbeConfig {
            train_fraction,
            ..ProbeConfig::default()
        },
    )
}

pub fn latent_probe_with(latents: &Matrix, labels: &[usize], config: &ProbeConfig) -> Result<ProbeResult> {
    let train_fraction = config.train_fraction;
    if latents.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} latent rows but {} labels",
            latents.rows(),
            labels.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train fraction must lie strictly between 0 and 1"));
    }
    let n_train = (latents.rows() as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == latents.rows() {
        return Err(Error::invalid("both probe splits need at least one example"));
    }
    let (train_labels, test_labels) = labels.split_at(n_train);
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut seen = vec![false; n_classes];
    train_labels.iter().for_each(|&l| seen[l] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::invalid("training split contains a single class"));
    }

    let p = latents.cols();
    // Raw features plus a constant column for the bias.
    let features = Matrix::from_fn(
        latents.rows(),
        p + 1,
        |i, j| if j == p { 1.0 } else { latents.get(i, j) },
    );
    let train_f = features.select_rows(&(0..n_train).collect::<Vec<_>>());

    let mut w = Matrix::zeros(p + 1, n_classes);
    for _ in 0..config.iterations {
        let mut probs = train_f.matmul(&w)?;
        for i in 0..n_train {
            let row = probs.row_mut(i);
            softmax_in_place(row);
            row[train_labels[i]] -= 1.0;
        }
        let grad = crate::tensor::matmul_transpose_left(&train_f, &probs)?;
        for (wv, g) in w.data_mut().iter_mut().zip(grad.data()) {
            *wv -= config.learning_rate * g / n_train as f64;
        }
    }
    let scores = features.matmul(&w)?;
    let accuracy = |range: std::ops::Range<usize>| {
        let total = range.len();
        let correct = range.filter(|&i| argmax(scores.row(i)) == labels[i]).count();
        correct as f64 / total as f64
    };
    let mut counts = vec![0usize; n_classes];
    test_labels.iter().for_each(|&l| counts[l] += 1);
    Ok(ProbeResult {
        train_accuracy: accuracy(0..n_train),
        test_accuracy: accuracy(n_train..latents.rows()),
        chance: *counts.iter().max().unwrap_or(&0) as f64 / test_labels.len() as f64,
        n_classes,
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainOrder {
    InnermostFirst,
    OutermostFirst,
}

impl RetrainOrder {
    pub fn layers(self) -> [ParamLayer; 3] {
        match self {
            RetrainOrder::InnermostFirst => [ParamLayer::Dec1, ParamLayer::Dec2, ParamLayer::Output],
            RetrainOrder::OutermostFirst => [ParamLayer::Output, ParamLayer::Dec2, ParamLayer::Dec1],
        }
    }
}

impl fmt::Display for RetrainOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrainOrder::InnermostFirst => "innermost_first",
            RetrainOrder::OutermostFirst => "outermost_first",
        })
    }
}

impl FromStr for RetrainOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "innermost_first" | "innermost-first" => Ok(RetrainOrder::InnermostFirst),
            "outermost_first" | "outermost-first" => Ok(RetrainOrder::OutermostFirst),
            other => Err(Error::parse(format!("unknown retrain order '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainStage {
    pub unfrozen: usize,
    pub mse: f64,
    pub model: VaeModel,
}

/// Stage `k` copies `source`, unfreezes the first `k` decoder layers in
/// `order` and retrains them on `target_train` for `config.steps` steps.
/// Stage 0 is the frozen transfer baseline. MSE is measured on `target_eval`.
pub fn progressive_decoder_retrain(
    source: &VaeModel,
    target_train: &Matrix,
    target_eval: &Matrix,
    order: RetrainOrder,
    stages: usize,
    objective: &ObjectiveSpec,
    config: &TrainConfig,
) -> Result<Vec<RetrainStage>> {
    let layers = order.layers();
    if stages > layers.len() {
        return Err(Error::invalid(format!(
            "{stages} stages requested but the decoder has {} layers",
            layers.len()
        )));
    }
    check_canvas(source, target_train)?;
    check_canvas(source, target_eval)?;
    let mut out = Vec::with_capacity(stages + 1);
    for k in 0..=stages {
        let model = if k == 0 {
            source.clone()
        } else {
            train(
                source,
                target_train,
                objective,
                config,
                &FreezeMask::only_trainable(&layers[..k]),
            )?
            .model
        };
        out.push(RetrainStage {
            unfrozen: k,
            mse: reconstruction_mse(&model, target_eval, config.seed)?,
            model,
        });
    }
    Ok(out)
}

pub fn retrain_to_csv(order: RetrainOrder, stages: &[RetrainStage]) -> String {
    let mut out = String::from("order,unfrozen,mse\n");
    for s in stages {
        let _ = writeln!(out, "{order},{},{:.6}", s.unfrozen, s.mse);
    }
    out
}
