//! Regression tools: least squares, covariate decomposition of a focal
//! coefficient, and doubly robust treatment-effect estimation.

mod aipw;
mod gelbach;
mod ols;

pub use aipw::{aipw_ate, aipw_from_predictions, AipwOptions, AipwResult, OutcomeModel, PropensityModel};
pub use gelbach::{gelbach_decompose, GelbachResult};
pub use ols::{ols, CovarianceKind, OlsFit};

use crate::error::{Error, Result};

/// A named block of covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateGroup {
    pub name: String,
    pub columns: Vec<(String, Vec<f64>)>,
}

/// Outcome, a binary focal variable and grouped covariates, all of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    outcome: Vec<f64>,
    focal: Vec<f64>,
    groups: Vec<CovariateGroup>,
}

impl Dataset {
    pub fn new(outcome: Vec<f64>, focal: Vec<f64>, groups: Vec<CovariateGroup>) -> Result<Self> {
        let n = outcome.len();
        if focal.len() != n {
            return Err(Error::data(format!(
                "focal column has {} rows, outcome has {n}",
                focal.len()
            )));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("outcome contains non-finite values"));
        }
        if let Some(i) = focal.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::data(format!(
                "focal value {} in row {i} is not 0 or 1",
                focal[i]
            )));
        }
        let mut names = std::collections::BTreeSet::new();
        for g in &groups {
            if !names.insert(g.name.as_str()) {
                return Err(Error::config(format!("duplicate covariate group `{}`", g.name)));
            }
            for (col, values) in &g.columns {
                if values.len() != n {
                    return Err(Error::data(format!(
                        "column `{col}` has {} rows, outcome has {n}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data(format!("column `{col}` contains non-finite values")));
                }
            }
        }
        Ok(Self { outcome, focal, groups })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn focal(&self) -> &[f64] {
        &self.focal
    }

    pub fn groups(&self) -> &[CovariateGroup] {
        &self.groups
    }

    /// All covariate columns in group order.
    pub fn covariates(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.groups
            .iter()
            .flat_map(|g| g.columns.iter().map(|(n, v)| (n.as_str(), v.as_slice())))
    }
}

/// Thresholds predicted probabilities into a 0/1 indicator (strictly above `cutoff`).
pub fn binarize(probs: &[f64], cutoff: f64) -> Vec<f64> {
    probs.iter().map(|&p| if p > cutoff { 1.0 } else { 0.0 }).collect()
}
