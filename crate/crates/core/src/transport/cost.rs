use serde::{Deserialize, Serialize};

use crate::diff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqeuclidean" | "squared-euclidean" => Ok(Metric::SquaredEuclidean),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Parameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Nonnegative `n_src x n_tgt` ground costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("cost entries must be finite and nonnegative, found {v}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Pairwise ground cost between the rows of `src` and `tgt`.
pub fn cost_matrix(src: &Matrix, tgt: &Matrix, metric: Metric) -> Result<CostMatrix> {
    if src.cols() != tgt.cols() {
        return Err(Error::dim("cost_matrix", src.shape(), tgt.shape()));
    }
    let values = Matrix::from_fn(src.rows(), tgt.rows(), |i, j| {
        let sq: f64 = src.row(i).iter().zip(tgt.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        match metric {
            Metric::SquaredEuclidean => sq,
            Metric::Euclidean => sq.sqrt(),
        }
    });
    Ok(CostMatrix(values))
}
