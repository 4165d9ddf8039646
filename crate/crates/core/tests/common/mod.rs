//! Reference implementations that share no code with the library under test.
#![allow(dead_code, clippy::needless_range_loop)]

use repsim::rng::SplitMix64;
use repsim::Matrix;

pub type Rows = Vec<Vec<f64>>;

pub fn rows_of(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.next_normal())
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(p: usize, rng: &mut SplitMix64) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    while cols.len() < p {
        let mut v: Vec<f64> = (0..p).map(|_| rng.next_normal()).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Matrix::from_fn(p, p, |i, j| cols[j][i])
}

fn transpose(a: &Rows) -> Rows {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn mul(a: &Rows, b: &Rows) -> Rows {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|r| (0..cols).map(|j| (0..inner).map(|k| r[k] * b[k][j]).sum()).collect())
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations.
pub fn symmetric_eigenvalues(a: &Rows) -> Vec<f64> {
    let n = a.len();
    let mut a = a.clone();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = a.iter().flatten().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

/// Singular values as square roots of the eigenvalues of `mᵀm`, descending.
pub fn gram_singular_values(m: &Matrix) -> Vec<f64> {
    let r = rows_of(m);
    let gram = mul(&transpose(&r), &r);
    symmetric_eigenvalues(&gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// `tr(K H L H)` with `H` the centring matrix, written out element-wise.
fn hsic_gram(k: &Rows, l: &Rows) -> f64 {
    let n = k.len();
    let center = |g: &Rows| -> Rows {
        let row_mean: Vec<f64> = g.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let col_mean: Vec<f64> = (0..n).map(|j| g.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let all = row_mean.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|i| (0..n).map(|j| g[i][j] - row_mean[i] - col_mean[j] + all).collect())
            .collect()
    };
    let (kc, lc) = (center(k), center(l));
    (0..n).map(|i| (0..n).map(|j| kc[i][j] * lc[j][i]).sum::<f64>()).sum()
}

/// Linear CKA through example-by-example Gram matrices.
pub fn gram_cka(x: &Matrix, y: &Matrix) -> f64 {
    let (xr, yr) = (rows_of(x), rows_of(y));
    let k = mul(&xr, &transpose(&xr));
    let l = mul(&yr, &transpose(&yr));
    hsic_gram(&k, &l) / (hsic_gram(&k, &k) * hsic_gram(&l, &l)).sqrt()
}

fn normalized(m: &Matrix) -> Rows {
    let mut r = rows_of(m);
    let n = r.len() as f64;
    for j in 0..m.cols() {
        let mean = r.iter().map(|row| row[j]).sum::<f64>() / n;
        r.iter_mut().for_each(|row| row[j] -= mean);
    }
    let norm = r.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    r.iter_mut().flatten().for_each(|v| *v /= norm);
    r
}

/// Procrustes distance for two-column inputs by scanning every rotation and
/// reflection of the plane on a grid of `step` radians.
pub fn rotation_scan_procrustes(x: &Matrix, y: &Matrix, step: f64) -> f64 {
    assert_eq!(x.cols(), 2);
    assert_eq!(y.cols(), 2);
    let (xn, yn) = (normalized(x), normalized(y));
    let mut best = f64::INFINITY;
    let steps = (2.0 * std::f64::consts::PI / step).ceil() as usize;
    // Residual ‖ẋ − ẏQ‖² for Q = [[c, s·f], [−s, c·f]] with f = ±1.
    let mut cross = [[0.0; 2]; 2];
    for (xr, yr) in xn.iter().zip(&yn) {
        for a in 0..2 {
            for b in 0..2 {
                cross[a][b] += yr[a] * xr[b];
            }
        }
    }
    for flip in [1.0, -1.0] {
        for t in 0..steps {
            let theta = t as f64 * step;
            let (s, c) = theta.sin_cos();
            let q = [[c, s * flip], [-s, c * flip]];
            // tr(Qᵀ ẏᵀ ẋ)
            let tr: f64 = (0..2).map(|a| (0..2).map(|b| q[a][b] * cross[a][b]).sum::<f64>()).sum();
            best = best.min(2.0 - 2.0 * tr);
        }
    }
    best.clamp(0.0, 2.0)
}

/// Monte-Carlo estimate (mean, standard error) of `E_q[log q(z) − log p(z)]`
/// for a one-dimensional Gaussian posterior against the standard normal prior.
pub fn monte_carlo_kl(mu: f64, sigma: f64, samples: usize, rng: &mut SplitMix64) -> (f64, f64) {
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let eps = rng.next_normal();
        let z = mu + sigma * eps;
        let log_q = -0.5 * eps * eps - sigma.ln();
        let log_p = -0.5 * z * z;
        let v = log_q - log_p;
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `act(x · W + b)` for a single example, with `W` stored fan-in by fan-out.
pub fn dense(x: &[f64], w: &Matrix, b: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    (0..w.cols())
        .map(|o| act((0..w.rows()).map(|i| x[i] * w.get(i, o)).sum::<f64>() + b[o]))
        .collect()
}
