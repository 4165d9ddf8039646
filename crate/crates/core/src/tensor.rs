//! Dense row-major `f64` matrices and the handful of decompositions the
//! similarity metrics and the VAE need.

use crate::error::{Error, Result};

/// Sweep cap for the one-sided Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative off-diagonal tolerance for the one-sided Jacobi iteration.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting NaN/Inf and size mismatches.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for data already known to be well-formed.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Builds from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    /// Keeps the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, indices.len(), |i, j| self.get(i, indices[j]))
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_transpose_right(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::invalid(format!(
                "matmul_transpose_right shape mismatch: {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix::from_fn(self.rows, other.rows, |i, j| {
            dot(self.row(i), other.row(j))
        }))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Subtracts each column's mean.
pub fn center_columns(m: &Matrix) -> Result<Matrix> {
    if m.is_empty() {
        return Err(Error::invalid("cannot center an empty matrix"));
    }
    let means = m.column_means();
    let mut out = m.clone();
    for i in 0..out.rows {
        for (v, mean) in out.row_mut(i).iter_mut().zip(&means) {
            *v -= mean;
        }
    }
    Ok(out)
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Computes `aᵀ · b`.
pub fn matmul_transpose_left(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::invalid(format!(
            "aᵀb needs equal row counts, got {} and {}",
            a.rows, b.rows
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let b_row = b.row(k);
        for (i, &av) in a.row(k).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Singular values in descending order, via one-sided (Hestenes) Jacobi.
///
/// Columns of the taller orientation are rotated pairwise until every pair is
/// orthogonal to `JACOBI_TOLERANCE` relative to their norms; the singular
/// values are then the column norms.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Err(Error::invalid("singular values of an empty matrix"));
    }
    // Column-major working copy of the orientation with rows >= cols.
    let (len, mut columns): (usize, Vec<Vec<f64>>) = if m.rows >= m.cols {
        (m.rows, (0..m.cols).map(|j| m.column(j)).collect())
    } else {
        (m.cols, (0..m.rows).map(|i| m.row(i).to_vec()).collect())
    };
    let n = columns.len();
    let mut norms: Vec<f64> = columns.iter().map(|c| dot(c, c)).collect();
    // Columns below this energy are round-off left by earlier rotations.
    let negligible = (f64::EPSILON * len as f64).powi(2) * norms.iter().sum::<f64>();

    let mut converged = n < 2;
    let mut sweep = 0;
    while !converged {
        if sweep == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps: sweep });
        }
        sweep += 1;
        let mut rotated = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let alpha = norms[i];
                let beta = norms[j];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&columns[i], &columns[j]);
                if gamma.abs() <= JACOBI_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = columns.split_at_mut(j);
                let (ci, cj) = (&mut left[i], &mut right[0]);
                for k in 0..len {
                    let a = ci[k];
                    let b = cj[k];
                    ci[k] = c * a - s * b;
                    cj[k] = s * a + c * b;
                }
                norms[i] = dot(ci, ci);
                norms[j] = dot(cj, cj);
            }
        }
        converged = !rotated;
    }

    let mut values: Vec<f64> = norms.iter().map(|v| v.sqrt()).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.next_normal())
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn center_two_point() {
        let m = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let c = center_columns(&m).unwrap();
        assert_eq!(c.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn center_three_by_two() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = center_columns(&m).unwrap();
        assert_eq!(c.data(), &[-2.0, -2.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn center_is_idempotent_and_zero_mean() {
        let m = random(9, 4, 1);
        let once = center_columns(&m).unwrap();
        let twice = center_columns(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1e-15);
        }
        for j in 0..4 {
            let col = once.column(j);
            let max = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mean = col.iter().sum::<f64>() / 9.0;
            assert!(mean.abs() <= 1e-12 * max);
        }
    }

    #[test]
    fn center_rejects_empty() {
        assert!(matches!(
            center_columns(&Matrix::zeros(0, 3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()), 5.0);
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        let m = random(4, 3, 2);
        let mut brute = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                brute += m.get(i, j) * m.get(i, j);
            }
        }
        assert!((frobenius_norm(&m) - brute.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn transpose_left_examples() {
        let m = random(3, 3, 4);
        let id = Matrix::identity(3);
        assert_eq!(matmul_transpose_left(&id, &m).unwrap(), m);

        let u = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![3.0], vec![-1.0]]).unwrap();
        assert_eq!(matmul_transpose_left(&u, &v).unwrap().data(), &[1.0]);

        assert!(matmul_transpose_left(&random(3, 2, 1), &random(4, 2, 1)).is_err());
    }

    #[test]
    fn singular_values_simple() {
        assert_eq!(singular_values(&Matrix::identity(3)).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(
            singular_values(&Matrix::from_diagonal(&[2.0, 5.0])).unwrap(),
            vec![5.0, 2.0]
        );
        assert_eq!(nuclear_norm(&Matrix::identity(3)).unwrap(), 3.0);
        assert_eq!(nuclear_norm(&Matrix::from_diagonal(&[5.0, 2.0])).unwrap(), 7.0);
    }

    #[test]
    fn singular_values_wide_and_rank_deficient() {
        let wide = random(2, 6, 9);
        let sv = singular_values(&wide).unwrap();
        assert_eq!(sv.len(), 2);
        let energy: f64 = sv.iter().map(|s| s * s).sum();
        let f2 = frobenius_norm(&wide).powi(2);
        assert!((energy - f2).abs() <= 1e-10 * f2);

        // rank one
        let r1 = Matrix::from_fn(4, 3, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        let sv = singular_values(&r1).unwrap();
        assert!(sv[1] < 1e-12 * sv[0] && sv[2] < 1e-12 * sv[0]);

        // zero rows leave round-off columns that must not stall the sweeps
        let base = random(6, 6, 4);
        let holes = Matrix::from_fn(6, 6, |i, j| if i % 2 == 1 { 0.0 } else { base.get(i, j) });
        let sv = singular_values(&holes).unwrap();
        assert!(sv[3] < 1e-12 * sv[0]);

        assert_eq!(singular_values(&Matrix::zeros(3, 2)).unwrap(), vec![0.0, 0.0]);
        assert!(singular_values(&Matrix::zeros(0, 2)).is_err());
    }
}
