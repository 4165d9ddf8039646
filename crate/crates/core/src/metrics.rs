//! Linear CKA and orthogonal Procrustes similarity between activation matrices.
//!
//! Both metrics take raw `n × p` activations (rows are examples) and centre
//! columns internally. Scores are clamped to `[0, 1]`; the Procrustes
//! distance is clamped to `[0, 2]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{center_columns, frobenius_norm, matmul_transpose_left, nuclear_norm, Matrix};

/// A centred matrix counts as constant when its norm falls below this
/// fraction of the original max-abs entry.
pub const DEGENERACY_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Cka,
    Procrustes,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Cka => "cka",
            MetricKind::Procrustes => "procrustes",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cka" => Ok(MetricKind::Cka),
            "procrustes" => Ok(MetricKind::Procrustes),
            other => Err(Error::parse(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    pub kind: MetricKind,
    pub n_examples: usize,
}

/// Column-centred matrix scaled to unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    data: Matrix,
    original_shape: (usize, usize),
}

impl NormalizedMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn original_shape(&self) -> (usize, usize) {
        self.original_shape
    }
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::invalid(format!(
            "row counts differ: {} vs {}",
            x.rows(),
            y.rows()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::invalid("at least two examples are required"));
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(Error::invalid("activation matrix has no columns"));
    }
    Ok(())
}

/// Centres `m` and returns it with its Frobenius norm, failing on constant input.
fn centered_nonconstant(m: &Matrix, what: &str) -> Result<(Matrix, f64)> {
    let centered = center_columns(m)?;
    let norm = frobenius_norm(&centered);
    if norm <= DEGENERACY_RATIO * m.max_abs() || norm == 0.0 {
        return Err(Error::degenerate(format!("{what} is constant across examples")));
    }
    Ok((centered, norm))
}

/// Linear HSIC numerator `‖yᵀx‖_F²`. Inputs are expected to be centred already.
pub fn hsic_linear(x: &Matrix, y: &Matrix) -> Result<f64> {
    let cross = matmul_transpose_left(y, x)?;
    Ok(cross.data().iter().map(|v| v * v).sum())
}

/// Precomputed operand for repeated CKA evaluations against the same layer.
#[derive(Debug, Clone)]
pub struct CkaOperand {
    centered: Matrix,
    self_norm: f64,
}

impl CkaOperand {
    pub fn new(m: &Matrix) -> Result<Self> {
        if m.rows() < 2 {
            return Err(Error::invalid("at least two examples are required"));
        }
        let (centered, _) = centered_nonconstant(m, "activation")?;
        let self_norm = frobenius_norm(&matmul_transpose_left(&centered, &centered)?);
        Ok(Self { centered, self_norm })
    }

    pub fn rows(&self) -> usize {
        self.centered.rows()
    }

    pub fn cka(&self, other: &CkaOperand) -> Result<SimilarityScore> {
        if self.rows() != other.rows() {
            return Err(Error::invalid(format!(
                "row counts differ: {} vs {}",
                self.rows(),
                other.rows()
            )));
        }
        let numerator = hsic_linear(&self.centered, &other.centered)?;
        let value = numerator / (self.self_norm * other.self_norm);
        Ok(SimilarityScore {
            value: value.clamp(0.0, 1.0),
            kind: MetricKind::Cka,
            n_examples: self.rows(),
        })
    }
}

/// `‖yᵀx‖²_F / (‖xᵀx‖_F ‖yᵀy‖_F)` on column-centred copies.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<SimilarityScore> {
    check_pair(x, y)?;
    CkaOperand::new(x)?.cka(&CkaOperand::new(y)?)
}

/// `(x − x̄) / ‖x − x̄‖_F`.
pub fn normalize_for_procrustes(x: &Matrix) -> Result<NormalizedMatrix> {
    let (centered, norm) = centered_nonconstant(x, "activation")?;
    Ok(NormalizedMatrix {
        data: centered.scale(1.0 / norm),
        original_shape: x.shape(),
    })
}

/// `‖ẋ‖² + ‖ẏ‖² − 2‖ẏᵀẋ‖_*`, clamped to `[0, 2]`.
pub fn procrustes_distance(xn: &NormalizedMatrix, yn: &NormalizedMatrix) -> Result<f64> {
    let (x, y) = (&xn.data, &yn.data);
    if x.rows() != y.rows() {
        return Err(Error::invalid(format!(
            "row counts differ: {} vs {}",
            x.rows(),
            y.rows()
        )));
    }
    let nuclear = nuclear_norm(&matmul_transpose_left(y, x)?)?;
    let d = frobenius_norm(x).powi(2) + frobenius_norm(y).powi(2) - 2.0 * nuclear;
    Ok(d.clamp(0.0, 2.0))
}

pub fn procrustes_similarity(x: &Matrix, y: &Matrix) -> Result<SimilarityScore> {
    check_pair(x, y)?;
    let d = procrustes_distance(&normalize_for_procrustes(x)?, &normalize_for_procrustes(y)?)?;
    Ok(SimilarityScore {
        value: (1.0 - 0.5 * d).clamp(0.0, 1.0),
        kind: MetricKind::Procrustes,
        n_examples: x.rows(),
    })
}

pub fn similarity(kind: MetricKind, x: &Matrix, y: &Matrix) -> Result<SimilarityScore> {
    match kind {
        MetricKind::Cka => linear_cka(x, y),
        MetricKind::Procrustes => procrustes_similarity(x, y),
    }
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
    fn cka_self_is_one() {
        let x = random(20, 4, 1);
        assert!((linear_cka(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cka_errors() {
        let x = random(1, 3, 1);
        assert!(matches!(linear_cka(&x, &x), Err(Error::InvalidInput(_))));
        let c = Matrix::from_fn(5, 2, |_, j| j as f64);
        let y = random(5, 2, 3);
        assert!(matches!(linear_cka(&c, &y), Err(Error::Degenerate(_))));
        assert!(matches!(
            linear_cka(&random(5, 2, 1), &random(6, 2, 1)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn hsic_examples() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.0], vec![0.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(hsic_linear(&x, &y).unwrap(), 0.0);
        let g = matmul_transpose_left(&x, &x).unwrap();
        assert_eq!(hsic_linear(&x, &x).unwrap(), frobenius_norm(&g).powi(2));
    }

    #[test]
    fn normalize_two_point() {
        let m = Matrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let n = normalize_for_procrustes(&m).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((n.matrix().get(0, 0) + h).abs() < 1e-15);
        assert!((n.matrix().get(1, 0) - h).abs() < 1e-15);
        assert_eq!(n.original_shape(), (2, 1));
        let again = normalize_for_procrustes(n.matrix()).unwrap();
        for (a, b) in again.matrix().data().iter().zip(n.matrix().data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn normalize_rejects_constant() {
        let c = Matrix::from_fn(4, 3, |_, j| 2.0 + j as f64);
        assert!(matches!(normalize_for_procrustes(&c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn procrustes_self_and_negation() {
        let x = random(12, 3, 5);
        assert!((procrustes_similarity(&x, &x).unwrap().value - 1.0).abs() < 1e-10);
        let neg = x.scale(-1.0);
        assert!((procrustes_similarity(&x, &neg).unwrap().value - 1.0).abs() < 1e-10);
        let xn = normalize_for_procrustes(&x).unwrap();
        assert!(procrustes_distance(&xn, &xn).unwrap() < 1e-10);
    }

    #[test]
    fn metric_kind_parse() {
        assert_eq!("cka".parse::<MetricKind>().unwrap(), MetricKind::Cka);
        assert_eq!(MetricKind::Procrustes.to_string(), "procrustes");
        assert!("svcca".parse::<MetricKind>().is_err());
    }
}
