//! Conditional-logit estimation of feature effects and profile fixed effects
//! from paired choices.
//!
//! Each record is a pair of options. With systematic utility
//! `x'theta` for each option, the probability of the observed choice is
//! `sigma((x_chosen - x_other)'theta)`, so the likelihood only involves the
//! within-pair difference of the design rows. Profile fixed effects enter as
//! indicator columns with the lexicographically first profile pinned at 0.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::choice::{simulate_choice, ChoiceOutcome, LenderPrefs, Market};
use crate::error::{Error, Result};
use crate::pool::{BorrowerId, BorrowerProfile};

pub const FEATURES: [&str; 3] = ["male", "smile", "bodyshot"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub profile_id: String,
    pub male: bool,
    pub smile: bool,
    pub bodyshot: bool,
}

impl ChoiceOption {
    fn features(&self) -> [f64; 3] {
        [
            self.male as u8 as f64,
            self.smile as u8 as f64,
            self.bodyshot as u8 as f64,
        ]
    }
}

/// One paired choice by one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub subject_id: String,
    pub pair_id: String,
    pub options: [ChoiceOption; 2],
    /// Index (0 or 1) of the chosen option.
    pub chosen: usize,
}

impl ChoiceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.chosen > 1 {
            return Err(Error::data(format!(
                "pair {}: chosen index {} is not 0 or 1",
                self.pair_id, self.chosen
            )));
        }
        if self.options[0] == self.options[1] {
            return Err(Error::data(format!(
                "pair {}: the two options are identical",
                self.pair_id
            )));
        }
        Ok(())
    }
}

/// Optional extensions of the main-effects specification.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignSpec {
    /// Subject covariates interacted with each of the three features.
    pub subject_covariates: Option<SubjectCovariates>,
    /// Profiles in the low fixed-effect group. When set, each feature is
    /// split into a high-group and a low-group column.
    pub low_fe_profiles: Option<BTreeSet<String>>,
    /// Pairs involving any of these profiles are dropped.
    pub exclude_profiles: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectCovariates {
    pub names: Vec<String>,
    pub values: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEffect {
    pub profile_id: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub terms: Vec<Term>,
    /// Every profile in the estimation sample; the first is the reference
    /// with estimate exactly 0.
    pub fixed_effects: Vec<ProfileEffect>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_records: usize,
    /// Full parameter vector: terms followed by non-reference fixed effects.
    pub params: Vec<f64>,
}

impl LogitFit {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn alpha(&self) -> Option<&Term> {
        self.term("male")
    }

    pub fn beta(&self) -> Option<&Term> {
        self.term("smile")
    }

    pub fn gamma(&self) -> Option<&Term> {
        self.term("bodyshot")
    }

    pub fn mu(&self, profile_id: &str) -> Option<f64> {
        self.fixed_effects
            .iter()
            .find(|p| p.profile_id == profile_id)
            .map(|p| p.estimate)
    }

    pub fn reference_profile(&self) -> Option<&str> {
        self.fixed_effects.first().map(|p| p.profile_id.as_str())
    }
}

/// A design prepared for likelihood evaluation.
#[derive(Debug, Clone)]
pub struct ConditionalLogit {
    term_names: Vec<String>,
    profiles: Vec<String>,
    dim: usize,
    /// Row-major `x_chosen - x_other`, `dim` columns.
    diffs: Vec<f64>,
}

impl ConditionalLogit {
    pub fn new(records: &[ChoiceRecord], spec: &DesignSpec) -> Result<Self> {
        let kept: Vec<&ChoiceRecord> = records
            .iter()
            .filter(|r| r.options.iter().all(|o| !spec.exclude_profiles.contains(&o.profile_id)))
            .collect();
        for r in &kept {
            r.validate()?;
        }
        let profiles: Vec<String> = kept
            .iter()
            .flat_map(|r| r.options.iter().map(|o| o.profile_id.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let profile_index: BTreeMap<&str, usize> = profiles.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();

        let mut term_names = Vec::new();
        match &spec.low_fe_profiles {
            Some(_) => {
                for group in ["high_fe", "low_fe"] {
                    for f in FEATURES {
                        term_names.push(format!("{f}_x_{group}"));
                    }
                }
            }
            None => term_names.extend(FEATURES.iter().map(|f| f.to_string())),
        }
        if let Some(cov) = &spec.subject_covariates {
            for f in FEATURES {
                for c in &cov.names {
                    term_names.push(format!("{f}:{c}"));
                }
            }
        }
        let n_terms = term_names.len();
        let dim = n_terms + profiles.len().saturating_sub(1);

        let row_of = |r: &ChoiceRecord, opt: &ChoiceOption| -> Result<Vec<f64>> {
            let mut row = vec![0.0; dim];
            let feats = opt.features();
            let mut col = 0;
            match &spec.low_fe_profiles {
                Some(low) => {
                    let is_low = low.contains(&opt.profile_id);
                    let offset = if is_low { 3 } else { 0 };
                    row[offset..offset + 3].copy_from_slice(&feats);
                    col += 6;
                }
                None => {
                    row[..3].copy_from_slice(&feats);
                    col += 3;
                }
            }
            if let Some(cov) = &spec.subject_covariates {
                let vals = cov
                    .values
                    .get(&r.subject_id)
                    .ok_or_else(|| Error::data(format!("no covariates for subject {}", r.subject_id)))?;
                if vals.len() != cov.names.len() {
                    return Err(Error::data(format!(
                        "subject {} has {} covariates, expected {}",
                        r.subject_id,
                        vals.len(),
                        cov.names.len()
                    )));
                }
                for f in feats {
                    for v in vals {
                        row[col] = f * v;
                        col += 1;
                    }
                }
            }
            let p = profile_index[opt.profile_id.as_str()];
            if p > 0 {
                row[n_terms + p - 1] = 1.0;
            }
            Ok(row)
        };

        let mut diffs = Vec::with_capacity(kept.len() * dim);
        for r in &kept {
            let chosen = row_of(r, &r.options[r.chosen])?;
            let other = row_of(r, &r.options[1 - r.chosen])?;
            diffs.extend(chosen.iter().zip(&other).map(|(a, b)| a - b));
        }
        Ok(Self {
            term_names,
            profiles,
            dim,
            diffs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_records(&self) -> usize {
        self.diffs.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn term_names(&self) -> &[String] {
        &self.term_names
    }

    pub fn profiles(&self) -> &[String] {
        &self.profiles
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.diffs.chunks_exact(self.dim.max(1))
    }

    /// Conditional log-likelihood and its analytic gradient.
    pub fn loglik_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(params)?;
        let mut ll = 0.0;
        let mut grad = vec![0.0; self.dim];
        for row in self.rows() {
            let s = dot(row, params);
            ll += log_sigmoid(s);
            let w = sigmoid(-s);
            for (g, x) in grad.iter_mut().zip(row) {
                *g += w * x;
            }
        }
        Ok((ll, grad))
    }

    /// Log-likelihood, gradient and observed information (negative Hessian).
    fn evaluate(&self, params: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let k = self.dim;
        let mut ll = 0.0;
        let mut grad = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for row in self.rows() {
            let s = dot(row, params);
            ll += log_sigmoid(s);
            let p = sigmoid(s);
            let w = 1.0 - p;
            let h = p * w;
            for i in 0..k {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                grad[i] += w * xi;
                for j in 0..=i {
                    info[(i, j)] += h * xi * row[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                info[(j, i)] = info[(i, j)];
            }
        }
        (ll, grad, info)
    }

    fn loglik(&self, params: &[f64]) -> f64 {
        self.rows().map(|row| log_sigmoid(dot(row, params))).sum()
    }

    fn check_dim(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.dim,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("parameters must be finite"));
        }
        Ok(())
    }

    /// Newton-Raphson with step halving.
    pub fn fit(&self, opts: &FitOptions, start: Option<&[f64]>) -> Result<LogitFit> {
        let k = self.dim;
        if self.n_records() < k {
            return Err(Error::data(format!(
                "{} records for {} parameters",
                self.n_records(),
                k
            )));
        }
        let mut theta = match start {
            Some(s) => {
                self.check_dim(s)?;
                s.to_vec()
            }
            None => vec![0.0; k],
        };
        let mut converged = false;
        let mut iterations = 0;
        let (mut ll, mut grad, mut info) = self.evaluate(&theta);
        loop {
            if grad.amax() < opts.tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            let Some(chol) = info.clone().cholesky() else {
                break;
            };
            let step = chol.solve(&grad);
            let mut t = 1.0;
            let mut candidate: Vec<f64>;
            loop {
                candidate = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
                let cand_ll = self.loglik(&candidate);
                if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || t < 1e-10 {
                    break;
                }
                t *= 0.5;
            }
            theta = candidate;
            iterations += 1;
            (ll, grad, info) = self.evaluate(&theta);
        }

        let cov = info.clone().cholesky().map(|c| c.inverse());
        // Quasi-separation drives the information towards singularity even
        // while the gradient vanishes.
        if let Some(c) = &cov {
            let max_var = c.diagonal().amax();
            if !max_var.is_finite() || max_var > 1e8 {
                converged = false;
            }
        } else {
            converged = false;
        }
        let se = |i: usize| cov.as_ref().map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt());

        let n_terms = self.term_names.len();
        let terms = self
            .term_names
            .iter()
            .enumerate()
            .map(|(i, name)| Term {
                name: name.clone(),
                estimate: theta[i],
                se: se(i),
            })
            .collect();
        let fixed_effects = self
            .profiles
            .iter()
            .enumerate()
            .map(|(p, id)| ProfileEffect {
                profile_id: id.clone(),
                estimate: if p == 0 { 0.0 } else { theta[n_terms + p - 1] },
                se: if p == 0 { 0.0 } else { se(n_terms + p - 1) },
            })
            .collect();
        Ok(LogitFit {
            terms,
            fixed_effects,
            log_likelihood: ll,
            converged,
            iterations,
            n_records: self.n_records(),
            params: theta,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn fit_conditional_logit(records: &[ChoiceRecord], spec: &DesignSpec, opts: &FitOptions) -> Result<LogitFit> {
    ConditionalLogit::new(records, spec)?.fit(opts, None)
}

/// Log-likelihood and gradient under the main-effects design. An empty
/// record set has zero likelihood and gradient for any parameters.
pub fn loglik_and_gradient(params: &[f64], records: &[ChoiceRecord]) -> Result<(f64, Vec<f64>)> {
    if records.is_empty() {
        return Ok((0.0, vec![0.0; params.len()]));
    }
    ConditionalLogit::new(records, &DesignSpec::default())?.loglik_and_gradient(params)
}

/// The `k` profiles chosen least often relative to how often they were shown.
pub fn least_chosen_profiles(records: &[ChoiceRecord], k: usize) -> BTreeSet<String> {
    let mut shown: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        for (i, o) in r.options.iter().enumerate() {
            let e = shown.entry(&o.profile_id).or_default();
            e.0 += (i == r.chosen) as usize;
            e.1 += 1;
        }
    }
    let mut rates: Vec<(f64, &str)> = shown.into_iter().map(|(p, (c, n))| (c as f64 / n as f64, p)).collect();
    rates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    rates.into_iter().take(k).map(|(_, p)| p.to_string()).collect()
}

/// Average marginal effect of one feature under several conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalEffect {
    /// Mean over observed option instances of
    /// `P(chosen | f = 1) - P(chosen | f = 0)` with the opponent held fixed.
    pub absolute: f64,
    /// `absolute` over the mean of `P(chosen | f = 0)`.
    pub relative: f64,
    /// `sigma(coef) - 1/2`: the effect against an equally attractive opponent.
    pub symmetric_absolute: f64,
    pub symmetric_relative: f64,
    /// `exp(coef) - 1`: proportional change in the odds of being chosen.
    pub odds_change: f64,
}

pub fn average_marginal_effect(fit: &LogitFit, records: &[ChoiceRecord], feature: &str) -> Result<MarginalEffect> {
    let f = FEATURES
        .iter()
        .position(|&n| n == feature)
        .ok_or_else(|| Error::config(format!("unknown feature `{feature}`")))?;
    let coefs: Vec<f64> = FEATURES
        .iter()
        .map(|n| fit.term(n).map(|t| t.estimate))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::config("marginal effects need the main-effects specification"))?;
    let mu: BTreeMap<&str, f64> = fit
        .fixed_effects
        .iter()
        .map(|p| (p.profile_id.as_str(), p.estimate))
        .collect();
    let utility = |feats: [f64; 3], profile: f64| feats.iter().zip(&coefs).map(|(x, c)| x * c).sum::<f64>() + profile;

    let (mut diff_sum, mut p0_sum, mut n) = (0.0, 0.0, 0usize);
    for r in records {
        let (Some(&m0), Some(&m1)) = (
            mu.get(r.options[0].profile_id.as_str()),
            mu.get(r.options[1].profile_id.as_str()),
        ) else {
            continue;
        };
        let ms = [m0, m1];
        for i in 0..2 {
            let other = utility(r.options[1 - i].features(), ms[1 - i]);
            let mut with = r.options[i].features();
            with[f] = 1.0;
            let mut without = with;
            without[f] = 0.0;
            let p1 = sigmoid(utility(with, ms[i]) - other);
            let p0 = sigmoid(utility(without, ms[i]) - other);
            diff_sum += p1 - p0;
            p0_sum += p0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data("no records match the fitted profiles"));
    }
    let coef = coefs[f];
    let symmetric = sigmoid(coef) - 0.5;
    Ok(MarginalEffect {
        absolute: diff_sum / n as f64,
        relative: diff_sum / p0_sum,
        symmetric_absolute: symmetric,
        symmetric_relative: symmetric / 0.5,
        odds_change: coef.exp() - 1.0,
    })
}

/// Parameters of a simulated paired-choice experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDesign {
    pub prefs: LenderPrefs,
    /// One fixed effect per profile; profile `i` is named `p{i:02}`.
    pub profile_fes: Vec<f64>,
    pub n_records: usize,
    pub pairs_per_subject: usize,
}

impl PairedDesign {
    pub fn profile_name(i: usize) -> String {
        format!("p{i:02}")
    }
}

/// Simulates paired choices: each option is a random profile with random
/// features, the two options come from different profiles, and the choice
/// is a two-option logit draw.
pub fn simulate_paired_choices<R: Rng + ?Sized>(design: &PairedDesign, rng: &mut R) -> Result<Vec<ChoiceRecord>> {
    let n_profiles = design.profile_fes.len();
    if n_profiles < 2 {
        return Err(Error::config("paired design needs at least two profiles"));
    }
    let per_subject = design.pairs_per_subject.max(1);
    let mut out = Vec::with_capacity(design.n_records);
    for r in 0..design.n_records {
        let a = rng.random_range(0..n_profiles);
        let mut b = rng.random_range(0..n_profiles - 1);
        if b >= a {
            b += 1;
        }
        let mut option = |p: usize| {
            let variant: u8 = rng.random_range(0..8);
            ChoiceOption {
                profile_id: PairedDesign::profile_name(p),
                male: variant & 1 != 0,
                smile: variant & 2 != 0,
                bodyshot: variant & 4 != 0,
            }
        };
        let options = [option(a), option(b)];
        let profiles = [a, b]
            .iter()
            .zip(&options)
            .enumerate()
            .map(|(i, (&p, o))| BorrowerProfile {
                id: BorrowerId(i as u32),
                eta: design.profile_fes[p],
                male: o.male,
                smile: o.smile,
                bodyshot: o.bodyshot,
            })
            .collect();
        let market = Market {
            profiles,
            outside_utility: None,
        };
        let chosen = match simulate_choice(&market, &design.prefs, rng) {
            ChoiceOutcome::Borrower(BorrowerId(i)) => i as usize,
            ChoiceOutcome::Outside => unreachable!("paired markets have no outside option"),
        };
        out.push(ChoiceRecord {
            subject_id: format!("s{:05}", r / per_subject),
            pair_id: format!("{r}"),
            options,
            chosen,
        });
    }
    Ok(out)
}
