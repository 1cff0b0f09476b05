use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative size of a diagonal entry of R below which a column counts as
/// a linear combination of the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Classical,
    /// Heteroskedasticity-robust sandwich with the n/(n-k) correction.
    Hc1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

impl OlsFit {
    pub fn se(&self, j: usize) -> f64 {
        self.covariance[(j, j)].max(0.0).sqrt()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Least squares of `y` on the columns of `x` through a Householder QR.
///
/// Columns whose diagonal entry in R is negligible relative to the column
/// norm lie in the span of the preceding columns; they are reported by name.
pub fn ols(y: &[f64], x: &DMatrix<f64>, names: &[String], kind: CovarianceKind) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::data(format!("outcome has {} rows, design has {n}", y.len())));
    }
    if names.len() != k {
        return Err(Error::config(format!("{} column names for {k} columns", names.len())));
    }
    if n <= k {
        return Err(Error::data(format!("{n} observations for {k} coefficients")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOL * x.column(j).norm())
        .map(|j| names[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }

    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::numeric("triangular solve failed"))?;
    let fitted = x * &beta;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::numeric("triangular inverse failed"))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let dof = (n - k) as f64;
    let covariance = match kind {
        CovarianceKind::Classical => {
            let s2 = residuals.iter().map(|e| e * e).sum::<f64>() / dof;
            xtx_inv * s2
        }
        CovarianceKind::Hc1 => {
            let mut meat = DMatrix::zeros(k, k);
            for (i, e) in residuals.iter().enumerate() {
                let row = x.row(i);
                meat += row.transpose() * row * (e * e);
            }
            &xtx_inv * meat * &xtx_inv * (n as f64 / dof)
        }
    };
    Ok(OlsFit {
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        covariance,
        residuals,
    })
}
