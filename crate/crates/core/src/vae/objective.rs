//! Training objectives (vanilla ELBO, β-VAE, annealed capacity, β-TC, DIP-VAE II)
//! and their hand-derived gradients.
#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{matmul_transpose_left, Matrix};

use super::model::{Dense, ForwardPass, ParamLayer, VaeModel};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Vanilla,
    Beta,
    Annealed,
    BetaTc,
    DipII,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Vanilla => "vanilla",
            ObjectiveKind::Beta => "beta",
            ObjectiveKind::Annealed => "annealed",
            ObjectiveKind::BetaTc => "beta_tc",
            ObjectiveKind::DipII => "dip_ii",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => ObjectiveKind::Vanilla,
            1 => ObjectiveKind::Beta,
            2 => ObjectiveKind::Annealed,
            3 => ObjectiveKind::BetaTc,
            4 => ObjectiveKind::DipII,
            other => return Err(Error::parse(format!("unknown objective code {other}"))),
        })
    }
}

/// Which objective to optimise, with every regularisation strength it may use.
/// Fields irrelevant to `kind` are carried but ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub beta: f64,
    pub gamma: f64,
    pub c_max: f64,
    pub anneal_steps: u64,
    /// Weight on the total-correlation estimate.
    pub lambda_tc: f64,
    pub lambda_d: f64,
    pub lambda_od: f64,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Vanilla,
            beta: 1.0,
            gamma: 30.0,
            c_max: 5.0,
            anneal_steps: 2000,
            lambda_tc: 1.0,
            lambda_d: 1.0,
            lambda_od: 1.0,
        }
    }
}

impl ObjectiveSpec {
    pub fn vanilla() -> Self {
        Self::default()
    }

    pub fn beta(beta: f64) -> Self {
        Self {
            kind: ObjectiveKind::Beta,
            beta,
            ..Self::default()
        }
    }

    pub fn annealed(gamma: f64, c_max: f64, anneal_steps: u64) -> Self {
        Self {
            kind: ObjectiveKind::Annealed,
            gamma,
            c_max,
            anneal_steps,
            ..Self::default()
        }
    }

    pub fn beta_tc(lambda: f64) -> Self {
        Self {
            kind: ObjectiveKind::BetaTc,
            lambda_tc: lambda,
            ..Self::default()
        }
    }

    pub fn dip_ii(lambda_od: f64, lambda_d: f64) -> Self {
        Self {
            kind: ObjectiveKind::DipII,
            lambda_od,
            lambda_d,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |cond: bool, msg: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::invalid(msg.to_string()))
            }
        };
        ok(self.beta >= 1.0, "beta must be >= 1")?;
        ok(self.gamma > 0.0, "gamma must be > 0")?;
        ok(self.c_max >= 0.0, "c_max must be >= 0")?;
        ok(self.lambda_tc >= 0.0, "lambda must be >= 0")?;
        ok(
            self.lambda_d >= 0.0 && self.lambda_od >= 0.0,
            "lambda_d and lambda_od must be >= 0",
        )?;
        if self.kind == ObjectiveKind::Annealed {
            ok(self.anneal_steps > 0, "anneal_steps must be positive")?;
        }
        Ok(())
    }

    /// Linear capacity ramp `C_max · min(1, step / anneal_steps)`.
    pub fn capacity(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 {
            return self.c_max;
        }
        self.c_max * (step as f64 / self.anneal_steps as f64).min(1.0)
    }
}

impl fmt::Display for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ObjectiveKind::Vanilla => write!(f, "vanilla"),
            ObjectiveKind::Beta => write!(f, "beta:beta={}", self.beta),
            ObjectiveKind::Annealed => write!(
                f,
                "annealed:gamma={},c_max={},anneal_steps={}",
                self.gamma, self.c_max, self.anneal_steps
            ),
            ObjectiveKind::BetaTc => write!(f, "beta_tc:lambda={}", self.lambda_tc),
            ObjectiveKind::DipII => write!(f, "dip_ii:lambda_od={},lambda_d={}", self.lambda_od, self.lambda_d),
        }
    }
}

impl ObjectiveSpec {
    /// Parses `kind[:value | :key=value,...]`, e.g. `beta:4`,
    /// `annealed:gamma=30,c_max=5,anneal_steps=2000`, `dip_ii:5`.
    /// Parameters not named in `s` are taken from `base`.
    pub fn parse_with_base(s: &str, base: &ObjectiveSpec) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let kind = match kind.trim() {
            "vanilla" => ObjectiveKind::Vanilla,
            "beta" => ObjectiveKind::Beta,
            "annealed" => ObjectiveKind::Annealed,
            "beta_tc" => ObjectiveKind::BetaTc,
            "dip_ii" => ObjectiveKind::DipII,
            other => return Err(Error::parse(format!("unknown objective '{other}'"))),
        };
        let mut spec = ObjectiveSpec { kind, ..*base };
        if kind == ObjectiveKind::Vanilla {
            spec.beta = 1.0;
        }
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(format!("objective: bad number '{v}'")))
        };
        let (mut od_given, mut d_given) = (false, false);
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                None => {
                    let v = num(part)?;
                    match spec.kind {
                        ObjectiveKind::Beta => spec.beta = v,
                        ObjectiveKind::Annealed => spec.c_max = v,
                        ObjectiveKind::BetaTc => spec.lambda_tc = v,
                        ObjectiveKind::DipII => {
                            spec.lambda_od = v;
                            od_given = true;
                        }
                        ObjectiveKind::Vanilla => return Err(Error::parse("vanilla objective takes no parameters")),
                    }
                }
                Some((key, value)) => match key.trim() {
                    "beta" => spec.beta = num(value)?,
                    "gamma" => spec.gamma = num(value)?,
                    "c_max" => spec.c_max = num(value)?,
                    "anneal_steps" => {
                        spec.anneal_steps = value
                            .trim()
                            .parse()
                            .map_err(|_| Error::parse(format!("objective: bad step count '{value}'")))?
                    }
                    "lambda" => spec.lambda_tc = num(value)?,
                    "lambda_od" => {
                        spec.lambda_od = num(value)?;
                        od_given = true;
                    }
                    "lambda_d" => {
                        spec.lambda_d = num(value)?;
                        d_given = true;
                    }
                    other => return Err(Error::parse(format!("objective: unknown key '{other}'"))),
                },
            }
        }
        if od_given && !d_given {
            spec.lambda_d = spec.lambda_od;
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl FromStr for ObjectiveSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_base(s, &ObjectiveSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelReduction {
    Sum,
    Mean,
}

impl FromStr for PixelReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PixelReduction::Sum),
            "mean" => Ok(PixelReduction::Mean),
            other => Err(Error::parse(format!("unknown pixel reduction '{other}'"))),
        }
    }
}

impl fmt::Display for PixelReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PixelReduction::Sum => "sum",
            PixelReduction::Mean => "mean",
        })
    }
}

/// Likelihood settings shared by every objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Bernoulli means are clipped to `[clip, 1 − clip]` before the log.
    pub prob_clip: f64,
    pub pixel_reduction: PixelReduction,
    /// Total number of training examples (the `n` of the total-correlation estimator).
    pub dataset_size: usize,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            prob_clip: 1e-7,
            pixel_reduction: PixelReduction::Sum,
            dataset_size: 1,
        }
    }
}

/// One minibatch with its reparameterisation noise.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub images: &'a Matrix,
    pub noise: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboTerms {
    /// Bernoulli log-likelihood, reduced over pixels and averaged over the batch.
    pub reconstruction: f64,
    /// Closed-form Gaussian KL to the prior, averaged over the batch.
    pub kl: f64,
    /// Per-dimension contributions; sums to `kl`.
    pub kl_per_dim: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Negated objective (what the optimiser minimises).
    pub total: f64,
    pub terms: ElboTerms,
    /// Capacity at this step (annealed objective only).
    pub capacity: Option<f64>,
    /// Total-correlation estimate (β-TC) or moment penalty (DIP-II), unweighted
    /// for TC, weighted for DIP-II; 0 otherwise.
    pub regulariser: f64,
}

/// Per-example closed-form KL, `½(μ² + σ² − 1 − log σ²)`, for each dimension.
pub fn gaussian_kl(mu: f64, log_var: f64) -> f64 {
    0.5 * (mu * mu + log_var.exp() - 1.0 - log_var)
}

fn pixel_scale(opts: &LossOptions, pixels: usize) -> f64 {
    match opts.pixel_reduction {
        PixelReduction::Sum => 1.0,
        PixelReduction::Mean => 1.0 / pixels as f64,
    }
}

fn elbo_from_pass(pass: &ForwardPass, images: &Matrix, opts: &LossOptions) -> ElboTerms {
    let m = images.rows() as f64;
    let scale = pixel_scale(opts, images.cols());
    let clip = opts.prob_clip;
    let mut recon = 0.0;
    for (&x, &p) in images.data().iter().zip(pass.output.data()) {
        let p = p.clamp(clip, 1.0 - clip);
        recon += x * p.ln() + (1.0 - x) * (1.0 - p).ln();
    }
    let d = pass.mean.cols();
    let mut kl_per_dim = vec![0.0; d];
    for (i, (&mu, &lv)) in pass.mean.data().iter().zip(pass.log_var.data()).enumerate() {
        kl_per_dim[i % d] += gaussian_kl(mu, lv);
    }
    kl_per_dim.iter_mut().for_each(|k| *k /= m);
    ElboTerms {
        reconstruction: recon * scale / m,
        kl: kl_per_dim.iter().sum(),
        kl_per_dim,
    }
}

pub fn elbo_terms(model: &VaeModel, batch: Batch<'_>, opts: &LossOptions) -> Result<ElboTerms> {
    let pass = model.forward(batch.images, batch.noise)?;
    Ok(elbo_from_pass(&pass, batch.images, opts))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log q(z_ij | x_k)` for every sample `i`, conditioning example `k`, dimension `j`,
/// stored at `[(i * m + k) * d + j]`.
fn pairwise_log_density(mean: &Matrix, log_var: &Matrix, sampled: &Matrix) -> Vec<f64> {
    let (m, d) = mean.shape();
    let mut out = vec![0.0; m * m * d];
    for i in 0..m {
        let z = sampled.row(i);
        for k in 0..m {
            let (mu, lv) = (mean.row(k), log_var.row(k));
            let base = (i * m + k) * d;
            for j in 0..d {
                let diff = z[j] - mu[j];
                out[base + j] = -0.5 * (LN_2PI + lv[j] + diff * diff * (-lv[j]).exp());
            }
        }
    }
    out
}

/// Minibatch-weighted estimate of the total correlation
/// `E[log q(z)] − Σ_j E[log q(z_j)]`, where each expectation is estimated as
/// `(1/m) Σ_i log((1/(n m)) Σ_k q(z_i | x_k))` with log-sum-exp.
pub fn total_correlation(mean: &Matrix, log_var: &Matrix, sampled: &Matrix, dataset_size: usize) -> f64 {
    total_correlation_with_grad(mean, log_var, sampled, dataset_size, false).0
}

struct TcGrad {
    mean: Matrix,
    log_var: Matrix,
    sampled: Matrix,
}

fn total_correlation_with_grad(
    mean: &Matrix,
    log_var: &Matrix,
    sampled: &Matrix,
    dataset_size: usize,
    want_grad: bool,
) -> (f64, Option<TcGrad>) {
    let (m, d) = mean.shape();
    let log_nm = ((dataset_size as f64) * m as f64).ln();
    let logq = pairwise_log_density(mean, log_var, sampled);

    let mut tc = 0.0;
    // Per (i, k, j): dTC/dlog q(z_ij | x_kj).
    let mut weight = if want_grad { vec![0.0; m * m * d] } else { Vec::new() };
    let mut joint = vec![0.0; m];
    let mut marginal = vec![0.0; m];
    for i in 0..m {
        for k in 0..m {
            let base = (i * m + k) * d;
            joint[k] = logq[base..base + d].iter().sum();
        }
        let joint_lse = log_sum_exp(&joint);
        tc += joint_lse - log_nm;
        if want_grad {
            for k in 0..m {
                let w = (joint[k] - joint_lse).exp() / m as f64;
                let base = (i * m + k) * d;
                weight[base..base + d].iter_mut().for_each(|g| *g = w);
            }
        }
        for j in 0..d {
            for k in 0..m {
                marginal[k] = logq[(i * m + k) * d + j];
            }
            let lse = log_sum_exp(&marginal);
            tc -= lse - log_nm;
            if want_grad {
                for k in 0..m {
                    weight[(i * m + k) * d + j] -= (marginal[k] - lse).exp() / m as f64;
                }
            }
        }
    }
    tc /= m as f64;
    if !want_grad {
        return (tc, None);
    }

    let mut g_mean = Matrix::zeros(m, d);
    let mut g_lv = Matrix::zeros(m, d);
    let mut g_z = Matrix::zeros(m, d);
    for i in 0..m {
        for k in 0..m {
            let base = (i * m + k) * d;
            for j in 0..d {
                let w = weight[base + j];
                if w == 0.0 {
                    continue;
                }
                let precision = (-log_var.get(k, j)).exp();
                let diff = sampled.get(i, j) - mean.get(k, j);
                let dz = -diff * precision * w;
                g_z.set(i, j, g_z.get(i, j) + dz);
                g_mean.set(k, j, g_mean.get(k, j) - dz);
                g_lv.set(k, j, g_lv.get(k, j) + w * 0.5 * (diff * diff * precision - 1.0));
            }
        }
    }
    (
        tc,
        Some(TcGrad {
            mean: g_mean,
            log_var: g_lv,
            sampled: g_z,
        }),
    )
}

/// `Cov_batch[μ] + mean_batch[diag σ²]`, with the population (1/m) covariance.
pub fn dip_covariance(mean: &Matrix, log_var: &Matrix) -> Matrix {
    let (m, d) = mean.shape();
    let mu_bar = mean.column_means();
    let mut cov = Matrix::zeros(d, d);
    for k in 0..m {
        let row = mean.row(k);
        for a in 0..d {
            for b in 0..d {
                cov.set(a, b, cov.get(a, b) + (row[a] - mu_bar[a]) * (row[b] - mu_bar[b]));
            }
        }
    }
    for a in 0..d {
        let var_mean = (0..m).map(|k| log_var.get(k, a).exp()).sum::<f64>() / m as f64;
        for b in 0..d {
            let mut v = cov.get(a, b) / m as f64;
            if a == b {
                v += var_mean;
            }
            cov.set(a, b, v);
        }
    }
    cov
}

/// `λ_od Σ_{i≠j} C_ij² + λ_d Σ_i (C_ii − 1)²`.
pub fn dip_penalty(cov: &Matrix, lambda_od: f64, lambda_d: f64) -> f64 {
    let d = cov.rows();
    let mut off = 0.0;
    let mut diag = 0.0;
    for a in 0..d {
        for b in 0..d {
            if a == b {
                diag += (cov.get(a, a) - 1.0).powi(2);
            } else {
                off += cov.get(a, b).powi(2);
            }
        }
    }
    lambda_od * off + lambda_d * diag
}

/// Gradients with the same layout as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn layer(&self, id: ParamLayer) -> &Dense {
        &self.layers[id.index()]
    }

    /// Flattened in the same order as [`VaeModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Dense::params).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Dense::params).all(|v| v.is_finite())
    }
}

fn check_finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term: term.to_string() })
    }
}

fn evaluate(
    model: &VaeModel,
    batch: Batch<'_>,
    objective: &ObjectiveSpec,
    step: u64,
    opts: &LossOptions,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    objective.validate()?;
    let images = batch.images;
    if images.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let pass = model.forward(images, batch.noise)?;
    let terms = elbo_from_pass(&pass, images, opts);
    check_finite(terms.reconstruction, "reconstruction")?;
    check_finite(terms.kl, "kl")?;

    // Weight multiplying the batch-mean KL's gradient.
    let (kl_part, kl_weight, capacity) = match objective.kind {
        ObjectiveKind::Vanilla | ObjectiveKind::BetaTc | ObjectiveKind::DipII => (terms.kl, 1.0, None),
        ObjectiveKind::Beta => (objective.beta * terms.kl, objective.beta, None),
        ObjectiveKind::Annealed => {
            let c = objective.capacity(step);
            let gap = terms.kl - c;
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            (objective.gamma * gap.abs(), objective.gamma * sign, Some(c))
        }
    };

    let mut regulariser = 0.0;
    let mut reg_loss = 0.0;
    let mut tc_grad = None;
    let mut dip_cov = None;
    match objective.kind {
        ObjectiveKind::BetaTc => {
            let (tc, g) = total_correlation_with_grad(
                &pass.mean,
                &pass.log_var,
                &pass.sampled,
                opts.dataset_size.max(1),
                want_grad,
            );
            regulariser = check_finite(tc, "total_correlation")?;
            reg_loss = objective.lambda_tc * tc;
            tc_grad = g;
        }
        ObjectiveKind::DipII => {
            let cov = dip_covariance(&pass.mean, &pass.log_var);
            regulariser = check_finite(
                dip_penalty(&cov, objective.lambda_od, objective.lambda_d),
                "dip_penalty",
            )?;
            reg_loss = regulariser;
            dip_cov = Some(cov);
        }
        _ => {}
    }

    let total = check_finite(-terms.reconstruction + kl_part + reg_loss, "total")?;
    let breakdown = LossBreakdown {
        total,
        terms,
        capacity,
        regulariser,
    };
    if !want_grad {
        return Ok((breakdown, None));
    }

    let (m, d) = pass.mean.shape();
    let inv_m = 1.0 / m as f64;
    let arch = *model.architecture();
    let mut grads: Vec<Dense> = arch.layer_shapes().iter().map(|&(i, o)| Dense::zeros(i, o)).collect();

    // Output logits: d(−recon)/dlogit = −(x − p)·scale/m, zero where clipped.
    let scale = pixel_scale(opts, images.cols()) * inv_m;
    let clip = opts.prob_clip;
    let d_logits = Matrix::from_raw(
        m,
        arch.input_dim,
        images
            .data()
            .iter()
            .zip(pass.output.data())
            .map(|(&x, &p)| {
                if p < clip || p > 1.0 - clip {
                    0.0
                } else {
                    -(x - p) * scale
                }
            })
            .collect(),
    );

    let dec_act = arch.decoder_activation;
    let enc_act = arch.encoder_activation;
    let d_dec2 = backprop_dense(model, &mut grads, ParamLayer::Output, &pass.dec2, &d_logits)?;
    let d_pre2 = through_activation(&d_dec2, &pass.dec2, dec_act);
    let d_dec1 = backprop_dense(model, &mut grads, ParamLayer::Dec2, &pass.dec1, &d_pre2)?;
    let d_pre1 = through_activation(&d_dec1, &pass.dec1, dec_act);
    let mut d_z = backprop_dense(model, &mut grads, ParamLayer::Dec1, &pass.sampled, &d_pre1)?;

    let mut d_mean = Matrix::zeros(m, d);
    let mut d_lv = Matrix::zeros(m, d);
    if let Some(g) = tc_grad {
        let lam = objective.lambda_tc;
        for (dst, src) in d_z.data_mut().iter_mut().zip(g.sampled.data()) {
            *dst += lam * src;
        }
        for (dst, src) in d_mean.data_mut().iter_mut().zip(g.mean.data()) {
            *dst += lam * src;
        }
        for (dst, src) in d_lv.data_mut().iter_mut().zip(g.log_var.data()) {
            *dst += lam * src;
        }
    }
    if let Some(cov) = dip_cov {
        // dP/dC, symmetric.
        let g = Matrix::from_fn(d, d, |a, b| {
            if a == b {
                2.0 * objective.lambda_d * (cov.get(a, a) - 1.0)
            } else {
                2.0 * objective.lambda_od * cov.get(a, b)
            }
        });
        let mu_bar = pass.mean.column_means();
        for k in 0..m {
            for a in 0..d {
                let mut acc = 0.0;
                for b in 0..d {
                    acc += g.get(a, b) * (pass.mean.get(k, b) - mu_bar[b]);
                }
                d_mean.set(k, a, d_mean.get(k, a) + 2.0 * inv_m * acc);
                d_lv.set(
                    k,
                    a,
                    d_lv.get(k, a) + inv_m * g.get(a, a) * pass.log_var.get(k, a).exp(),
                );
            }
        }
    }
    for idx in 0..m * d {
        let mu = pass.mean.data()[idx];
        let lv = pass.log_var.data()[idx];
        let sigma = pass.sigma.data()[idx];
        let eps = pass.noise.data()[idx];
        let dz = d_z.data()[idx];
        d_mean.data_mut()[idx] += kl_weight * inv_m * mu + dz;
        d_lv.data_mut()[idx] += kl_weight * inv_m * 0.5 * (lv.exp() - 1.0) + dz * 0.5 * sigma * eps;
    }

    let mut d_enc2 = backprop_dense(model, &mut grads, ParamLayer::MeanHead, &pass.enc2, &d_mean)?;
    let d_enc2_lv = backprop_dense(model, &mut grads, ParamLayer::LogVarHead, &pass.enc2, &d_lv)?;
    for (a, b) in d_enc2.data_mut().iter_mut().zip(d_enc2_lv.data()) {
        *a += b;
    }
    let d_pre_e2 = through_activation(&d_enc2, &pass.enc2, enc_act);
    let d_enc1 = backprop_dense(model, &mut grads, ParamLayer::Enc2, &pass.enc1, &d_pre_e2)?;
    let d_pre_e1 = through_activation(&d_enc1, &pass.enc1, enc_act);
    accumulate_dense(&mut grads, ParamLayer::Enc1, images, &d_pre_e1)?;

    let grads = Gradients { layers: grads };
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            term: "gradients".to_string(),
        });
    }
    Ok((breakdown, Some(grads)))
}

fn through_activation(upstream: &Matrix, output: &Matrix, act: super::model::Activation) -> Matrix {
    Matrix::from_raw(
        upstream.rows(),
        upstream.cols(),
        upstream
            .data()
            .iter()
            .zip(output.data())
            .map(|(g, &y)| g * act.derivative_from_output(y))
            .collect(),
    )
}

fn accumulate_dense(grads: &mut [Dense], id: ParamLayer, input: &Matrix, d_out: &Matrix) -> Result<()> {
    let g = &mut grads[id.index()];
    g.weights = matmul_transpose_left(input, d_out)?;
    let mut bias = vec![0.0; d_out.cols()];
    for i in 0..d_out.rows() {
        for (b, v) in bias.iter_mut().zip(d_out.row(i)) {
            *b += v;
        }
    }
    g.bias = bias;
    Ok(())
}

/// Records parameter gradients of layer `id` and returns the gradient w.r.t. its input.
fn backprop_dense(
    model: &VaeModel,
    grads: &mut [Dense],
    id: ParamLayer,
    input: &Matrix,
    d_out: &Matrix,
) -> Result<Matrix> {
    accumulate_dense(grads, id, input, d_out)?;
    d_out.matmul_transpose_right(&model.layer(id).weights)
}

/// The negated objective for one batch.
pub fn loss(
    model: &VaeModel,
    batch: Batch<'_>,
    objective: &ObjectiveSpec,
    step: u64,
    opts: &LossOptions,
) -> Result<LossBreakdown> {
    evaluate(model, batch, objective, step, opts, false).map(|(l, _)| l)
}

/// The loss together with its gradient w.r.t. every parameter.
pub fn gradients(
    model: &VaeModel,
    batch: Batch<'_>,
    objective: &ObjectiveSpec,
    step: u64,
    opts: &LossOptions,
) -> Result<(LossBreakdown, Gradients)> {
    let (l, g) = evaluate(model, batch, objective, step, opts, true)?;
    Ok((l, g.expect("gradients requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::model::Architecture;

    fn tiny() -> (VaeModel, Matrix, Matrix) {
        let arch = Architecture::new(6, [5, 4], 2);
        let model = VaeModel::new(arch, 5).unwrap();
        let images = Matrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 / 4.0);
        let mut rng = crate::rng::SplitMix64::new(2);
        let noise = Matrix::from_fn(4, 2, |_, _| rng.next_normal());
        (model, images, noise)
    }

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl(0.0, 0.0), 0.0);
        assert_eq!(gaussian_kl(1.0, 0.0), 0.5);
    }

    #[test]
    fn beta_one_equals_vanilla() {
        let (model, images, noise) = tiny();
        let batch = Batch {
            images: &images,
            noise: &noise,
        };
        let opts = LossOptions::default();
        let v = loss(&model, batch, &ObjectiveSpec::vanilla(), 0, &opts).unwrap();
        let b = loss(&model, batch, &ObjectiveSpec::beta(1.0), 0, &opts).unwrap();
        assert_eq!(v.total, b.total);
        let sum: f64 = v.terms.kl_per_dim.iter().sum();
        assert!((sum - v.terms.kl).abs() < 1e-15);
    }

    #[test]
    fn annealed_step_zero() {
        let (model, images, noise) = tiny();
        let batch = Batch {
            images: &images,
            noise: &noise,
        };
        let opts = LossOptions::default();
        let obj = ObjectiveSpec::annealed(30.0, 5.0, 100);
        let l = loss(&model, batch, &obj, 0, &opts).unwrap();
        assert_eq!(l.capacity, Some(0.0));
        let expected = -(l.terms.reconstruction - 30.0 * l.terms.kl);
        assert!((l.total - expected).abs() < 1e-12);
        assert_eq!(obj.capacity(100), 5.0);
        assert_eq!(obj.capacity(50), 2.5);
        assert_eq!(obj.capacity(1000), 5.0);
    }

    #[test]
    fn objective_strings() {
        let cases = [
            ("vanilla", ObjectiveSpec::vanilla()),
            ("beta:4", ObjectiveSpec::beta(4.0)),
            ("beta_tc:lambda=2", ObjectiveSpec::beta_tc(2.0)),
            ("dip_ii:5", ObjectiveSpec::dip_ii(5.0, 5.0)),
            ("dip_ii:lambda_od=5,lambda_d=2", ObjectiveSpec::dip_ii(5.0, 2.0)),
            (
                "annealed:gamma=30,c_max=1,anneal_steps=10",
                ObjectiveSpec::annealed(30.0, 1.0, 10),
            ),
        ];
        for (s, expected) in cases {
            let parsed: ObjectiveSpec = s.parse().unwrap();
            assert_eq!(parsed, expected, "{s}");
            assert_eq!(parsed.to_string().parse::<ObjectiveSpec>().unwrap(), parsed);
        }
        assert!("beta:0.5".parse::<ObjectiveSpec>().is_err());
        assert!("vanilla:3".parse::<ObjectiveSpec>().is_err());
        assert!("beta:gamma=x".parse::<ObjectiveSpec>().is_err());
        assert!("vae".parse::<ObjectiveSpec>().is_err());
    }

    #[test]
    fn dip_penalty_zero_at_identity() {
        // Means ±1 in one dim give batch variance 1; the other dim has unit σ² and constant μ.
        let mean = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let log_var = Matrix::from_rows(&[vec![-800.0, 0.0], vec![-800.0, 0.0]]).unwrap();
        let cov = dip_covariance(&mean, &log_var);
        assert!(dip_penalty(&cov, 3.0, 3.0) < 1e-12);
        let shifted = Matrix::from_rows(&[vec![1.0, 0.5], vec![-1.0, -0.5]]).unwrap();
        assert!(dip_penalty(&dip_covariance(&shifted, &log_var), 3.0, 3.0) > 0.1);
    }

    #[test]
    fn zero_model_has_finite_gradients() {
        let arch = Architecture::new(6, [5, 4], 2);
        let model = VaeModel::zeros(arch).unwrap();
        let images = Matrix::zeros(3, 6);
        let noise = Matrix::from_fn(3, 2, |i, j| (i as f64) - j as f64);
        for obj in [
            ObjectiveSpec::vanilla(),
            ObjectiveSpec::beta(4.0),
            ObjectiveSpec::annealed(30.0, 1.0, 10),
            ObjectiveSpec::beta_tc(4.0),
            ObjectiveSpec::dip_ii(5.0, 5.0),
        ] {
            let (_, g) = gradients(
                &model,
                Batch {
                    images: &images,
                    noise: &noise,
                },
                &obj,
                3,
                &LossOptions::default(),
            )
            .unwrap();
            assert!(g.is_finite());
        }
    }
}
