//! Synthetic feature-overlap benchmark: how CKA and Procrustes react to the
//! fraction of shared features as the number of examples grows.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{linear_cka, procrustes_similarity};
use crate::rng::SplitMix64;
use crate::tensor::Matrix;

pub const DEFAULT_FEATURES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapSpec {
    pub n_examples: usize,
    pub n_features: usize,
    pub shared_fraction: f64,
    pub seed: u64,
}

impl OverlapSpec {
    /// Number of columns copied from the reference matrix.
    pub fn shared_columns(&self) -> usize {
        (self.shared_fraction * self.n_features as f64).round() as usize
    }
}

/// Generates the reference matrix and a partner sharing its leading
/// `round(shared_fraction · p)` columns; all other entries are fresh
/// standard normals.
pub fn generate_pair(spec: &OverlapSpec) -> Result<(Matrix, Matrix)> {
    if spec.n_examples < 2 || spec.n_features < 1 {
        return Err(Error::invalid("need at least 2 examples and 1 feature"));
    }
    if !(0.0..=1.0).contains(&spec.shared_fraction) {
        return Err(Error::invalid(format!(
            "shared fraction {} outside [0, 1]",
            spec.shared_fraction
        )));
    }
    let (n, p) = (spec.n_examples, spec.n_features);
    let shared = spec.shared_columns();
    let mut rng = SplitMix64::new(spec.seed);

    let mut a = vec![0.0; n * p];
    rng.fill_normal(&mut a);
    let mut b = a.clone();
    for i in 0..n {
        for v in &mut b[i * p + shared..(i + 1) * p] {
            *v = rng.next_normal();
        }
    }
    Ok((Matrix::from_raw(n, p, a), Matrix::from_raw(n, p, b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub fraction: f64,
    pub cka_mean: f64,
    pub procrustes_mean: f64,
    pub n_seeds: usize,
}

/// Mean CKA and Procrustes similarity per `(n, fraction)` cell, averaged
/// over seeds. Rows come back sorted by fraction descending, then n ascending.
pub fn run_limitation_sweep(
    n_values: &[usize],
    fractions: &[f64],
    seeds: &[u64],
    n_features: usize,
) -> Result<Vec<SweepRow>> {
    if n_values.is_empty() || fractions.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep lists must be nonempty"));
    }
    let mut rows = Vec::with_capacity(n_values.len() * fractions.len());
    for &fraction in fractions {
        for &n in n_values {
            let mut cka = 0.0;
            let mut procrustes = 0.0;
            for &seed in seeds {
                let (a, b) = generate_pair(&OverlapSpec {
                    n_examples: n,
                    n_features,
                    shared_fraction: fraction,
                    seed,
                })?;
                cka += linear_cka(&a, &b)?.value;
                procrustes += procrustes_similarity(&a, &b)?.value;
            }
            let k = seeds.len() as f64;
            rows.push(SweepRow {
                n,
                fraction,
                cka_mean: cka / k,
                procrustes_mean: procrustes / k,
                n_seeds: seeds.len(),
            });
        }
    }
    rows.sort_by(|x, y| y.fraction.total_cmp(&x.fraction).then(x.n.cmp(&y.n)));
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "n,fraction,cka_mean,procrustes_mean,n_seeds";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.n, r.fraction, r.cka_mean, r.procrustes_mean, r.n_seeds
        );
    }
    out
}
