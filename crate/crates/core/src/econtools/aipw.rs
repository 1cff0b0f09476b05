use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::estimate::sigmoid;
use crate::rng::seeded;

/// Learner for the arm-specific conditional outcome means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Linear regression with an unpenalized intercept and an L2 penalty.
    Ridge { lambda: f64 },
    /// Arm mean, ignoring covariates.
    Mean,
    /// Predicts zero everywhere.
    Zero,
}

/// Learner for the treatment probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    /// Logistic regression with an unpenalized intercept and an L2 penalty.
    Logistic { lambda: f64 },
    /// A known constant probability.
    Constant { p: f64 },
    /// Treated share of the training fold.
    Share,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipwOptions {
    pub outcome: OutcomeModel,
    pub propensity: PropensityModel,
    /// Covariates used by the outcome model; all when `None`.
    pub outcome_columns: Option<Vec<String>>,
    /// Covariates used by the propensity model; all when `None`.
    pub propensity_columns: Option<Vec<String>>,
    /// Number of cross-fitting folds. With one fold the nuisances are fit
    /// and evaluated on the full sample.
    pub folds: usize,
    pub clip: f64,
    /// Seeds the fold assignment.
    pub seed: u64,
}

impl Default for AipwOptions {
    fn default() -> Self {
        Self {
            outcome: OutcomeModel::Ridge { lambda: 1.0 },
            propensity: PropensityModel::Logistic { lambda: 1.0 },
            outcome_columns: None,
            propensity_columns: None,
            folds: 5,
            clip: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AipwResult {
    pub ate: f64,
    pub se: f64,
    pub influence: Vec<f64>,
    /// Number of propensity predictions moved to the clip bounds.
    pub clip_count: usize,
}

impl AipwResult {
    pub fn n(&self) -> usize {
        self.influence.len()
    }
}

/// Combines nuisance predictions into per-unit influence values.
pub fn aipw_from_predictions(
    y: &[f64],
    w: &[f64],
    mu0: &[f64],
    mu1: &[f64],
    e: &[f64],
    clip: f64,
) -> Result<AipwResult> {
    let n = y.len();
    if [w.len(), mu0.len(), mu1.len(), e.len()].iter().any(|&l| l != n) {
        return Err(Error::data("prediction columns differ in length"));
    }
    if n < 2 {
        return Err(Error::data("need at least two units"));
    }
    if !(0.0..0.5).contains(&clip) {
        return Err(Error::config(format!("propensity clip {clip} outside [0, 0.5)")));
    }
    let mut clip_count = 0;
    let influence: Vec<f64> = (0..n)
        .map(|i| {
            let mut p = e[i];
            if p < clip || p > 1.0 - clip {
                clip_count += 1;
                p = p.clamp(clip, 1.0 - clip);
            }
            mu1[i] - mu0[i] + w[i] * (y[i] - mu1[i]) / p - (1.0 - w[i]) * (y[i] - mu0[i]) / (1.0 - p)
        })
        .collect();
    let ate = influence.iter().sum::<f64>() / n as f64;
    let var = influence.iter().map(|v| (v - ate).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !ate.is_finite() || !var.is_finite() {
        return Err(Error::numeric("influence values are not finite"));
    }
    Ok(AipwResult {
        ate,
        se: (var / n as f64).sqrt(),
        influence,
        clip_count,
    })
}

fn select_columns(d: &Dataset, names: Option<&[String]>) -> Result<DMatrix<f64>> {
    let all: Vec<(&str, &[f64])> = d.covariates().collect();
    let chosen: Vec<&[f64]> = match names {
        None => all.iter().map(|(_, v)| *v).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                all.iter()
                    .find(|(c, _)| c == n)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::config(format!("unknown covariate `{n}`")))
            })
            .collect::<Result<_>>()?,
    };
    Ok(DMatrix::from_fn(d.len(), chosen.len(), |i, j| chosen[j][i]))
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

/// Intercept and slopes of an L2-penalized regression on centered data.
fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<(f64, DVector<f64>)> {
    let n = y.len() as f64;
    let p = x.ncols();
    let ybar = y.iter().sum::<f64>() / n;
    if p == 0 {
        return Ok((ybar, DVector::zeros(0)));
    }
    let xbar = DVector::from_fn(p, |j, _| x.column(j).mean());
    let mut xc = x.clone();
    for j in 0..p {
        xc.column_mut(j).add_scalar_mut(-xbar[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ybar));
    let lhs = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
    let rhs = xc.transpose() * yc;
    let b = lhs
        .cholesky()
        .ok_or_else(|| Error::numeric("ridge system is not positive definite"))?
        .solve(&rhs);
    Ok((ybar - xbar.dot(&b), b))
}

/// Intercept and slopes of an L2-penalized logistic regression by Newton's method.
fn fit_logistic(x: &DMatrix<f64>, w: &[f64], lambda: f64) -> Result<DVector<f64>> {
    let n = w.len();
    let k = x.ncols() + 1;
    let share = w.iter().sum::<f64>() / n as f64;
    if share <= 0.0 || share >= 1.0 {
        return Err(Error::data("propensity training data contains a single treatment arm"));
    }
    let design = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut theta = DVector::zeros(k);
    theta[0] = (share / (1.0 - share)).ln();
    for _ in 0..100 {
        let eta = &design * &theta;
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let row = design.row(i);
            grad += row.transpose() * (w[i] - p);
            hess += row.transpose() * row * (p * (1.0 - p));
        }
        for j in 1..k {
            grad[j] -= lambda * theta[j];
            hess[(j, j)] += lambda;
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::numeric("propensity information is singular"))?
            .solve(&grad);
        theta += &step;
        if step.amax() < 1e-10 {
            return Ok(theta);
        }
    }
    Err(Error::numeric("propensity model did not converge"))
}

struct FoldPredictions {
    test: Vec<usize>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    e: Vec<f64>,
}

fn predict_outcome(
    model: OutcomeModel,
    x: &DMatrix<f64>,
    y: &[f64],
    train: &[usize],
    test: &[usize],
) -> Result<Vec<f64>> {
    let ys: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    match model {
        OutcomeModel::Zero => Ok(vec![0.0; test.len()]),
        OutcomeModel::Mean => Ok(vec![ys.iter().sum::<f64>() / ys.len() as f64; test.len()]),
        OutcomeModel::Ridge { lambda } => {
            let (a, b) = fit_ridge(&rows(x, train), &ys, lambda)?;
            Ok((rows(x, test) * b).iter().map(|v| v + a).collect())
        }
    }
}

fn predict_propensity(
    model: PropensityModel,
    x: &DMatrix<f64>,
    w: &[f64],
    train: &[usize],
    test: &[usize],
) -> Result<Vec<f64>> {
    let ws: Vec<f64> = train.iter().map(|&i| w[i]).collect();
    match model {
        PropensityModel::Constant { p } => Ok(vec![p; test.len()]),
        PropensityModel::Share => Ok(vec![ws.iter().sum::<f64>() / ws.len() as f64; test.len()]),
        PropensityModel::Logistic { lambda } => {
            let theta = fit_logistic(&rows(x, train), &ws, lambda)?;
            let xt = rows(x, test);
            Ok((0..test.len())
                .map(|i| sigmoid(theta[0] + (0..xt.ncols()).map(|j| theta[j + 1] * xt[(i, j)]).sum::<f64>()))
                .collect())
        }
    }
}

/// Cross-fitted augmented inverse-propensity-weighted average treatment
/// effect, with the focal column as the treatment.
pub fn aipw_ate(d: &Dataset, opts: &AipwOptions) -> Result<AipwResult> {
    let n = d.len();
    let w = d.focal();
    let y = d.outcome();
    let treated = w.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::data("a treatment arm is empty"));
    }
    if opts.folds == 0 || opts.folds > n {
        return Err(Error::config(format!("fold count {} outside 1..={n}", opts.folds)));
    }
    if let PropensityModel::Constant { p } = opts.propensity {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::config(format!("constant propensity {p} outside (0, 1)")));
        }
    }
    let x_out = select_columns(d, opts.outcome_columns.as_deref())?;
    let x_prop = select_columns(d, opts.propensity_columns.as_deref())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(opts.seed));
    let k = opts.folds;
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    let folds: Vec<FoldPredictions> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let train: Vec<usize> = if k == 1 {
                test.clone()
            } else {
                (0..n).filter(|&i| fold_of[i] != f).collect()
            };
            let (t1, t0): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| w[i] == 1.0);
            if t1.is_empty() || t0.is_empty() {
                return Err(Error::data(format!("fold {f}: training sample lacks a treatment arm")));
            }
            Ok(FoldPredictions {
                mu1: predict_outcome(opts.outcome, &x_out, y, &t1, &test)?,
                mu0: predict_outcome(opts.outcome, &x_out, y, &t0, &test)?,
                e: predict_propensity(opts.propensity, &x_prop, w, &train, &test)?,
                test,
            })
        })
        .collect::<Result<_>>()?;

    let (mut mu0, mut mu1, mut e) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for fold in folds {
        for (j, &i) in fold.test.iter().enumerate() {
            mu0[i] = fold.mu0[j];
            mu1[i] = fold.mu1[j];
            e[i] = fold.e[j];
        }
    }
    aipw_from_predictions(y, w, &mu0, &mu1, &e, opts.clip)
}
