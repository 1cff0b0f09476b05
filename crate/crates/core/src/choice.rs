//! Random-coefficient logit lenders.
//!
//! A lender draws `(alpha, beta, gamma)` from independent normals and picks
//! the option with the highest utility, where each borrower's utility is
//! `alpha*male + beta*smile + gamma*bodyshot + eta` plus a standard Gumbel
//! shock, and the outside option is `omega` plus its own shock.

use rand::Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{BorrowerId, BorrowerProfile};

/// Population distribution of lender preferences and the outside utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceParams {
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub gamma_mean: f64,
    pub gamma_sd: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

fn default_omega() -> f64 {
    1.0
}

impl Default for PreferenceParams {
    /// Experimental estimates: male -0.385 (0.079), smile 0.298 (0.074),
    /// body shot -0.191 (0.079); outside utility 1.
    fn default() -> Self {
        Self {
            alpha_mean: -0.385,
            alpha_sd: 0.079,
            beta_mean: 0.298,
            beta_sd: 0.074,
            gamma_mean: -0.191,
            gamma_sd: 0.079,
            omega: 1.0,
        }
    }
}

impl PreferenceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_mean", self.alpha_mean),
            ("alpha_sd", self.alpha_sd),
            ("beta_mean", self.beta_mean),
            ("beta_sd", self.beta_sd),
            ("gamma_mean", self.gamma_mean),
            ("gamma_sd", self.gamma_sd),
            ("omega", self.omega),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(Error::config(format!("prefs.{name} must be finite")));
            }
            if name.ends_with("_sd") && v < 0.0 {
                return Err(Error::config(format!("prefs.{name} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Normal samplers for the three coefficients.
    pub fn sampler(&self) -> Result<PrefSampler> {
        self.validate()?;
        let n = |m, s| Normal::new(m, s).map_err(|e| Error::config(e.to_string()));
        Ok(PrefSampler {
            alpha: n(self.alpha_mean, self.alpha_sd)?,
            beta: n(self.beta_mean, self.beta_sd)?,
            gamma: n(self.gamma_mean, self.gamma_sd)?,
        })
    }
}

/// One lender's realised preference coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LenderPrefs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PrefSampler {
    alpha: Normal<f64>,
    beta: Normal<f64>,
    gamma: Normal<f64>,
}

impl PrefSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> LenderPrefs {
        LenderPrefs {
            alpha: self.alpha.sample(rng),
            beta: self.beta.sample(rng),
            gamma: self.gamma.sample(rng),
        }
    }
}

pub fn draw_prefs<R: Rng + ?Sized>(params: &PreferenceParams, rng: &mut R) -> Result<LenderPrefs> {
    Ok(params.sampler()?.draw(rng))
}

pub fn systematic_utility(p: &BorrowerProfile, prefs: &LenderPrefs) -> f64 {
    let mut v = p.eta;
    if p.male {
        v += prefs.alpha;
    }
    if p.smile {
        v += prefs.beta;
    }
    if p.bodyshot {
        v += prefs.gamma;
    }
    v
}

/// Borrowers shown to one lender, plus the outside option when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub profiles: Vec<BorrowerProfile>,
    pub outside_utility: Option<f64>,
}

impl Market {
    pub fn new(profiles: Vec<BorrowerProfile>, outside_utility: Option<f64>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::config("market has no borrowers"));
        }
        let mut ids: Vec<_> = profiles.iter().map(|p| p.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("market contains a borrower twice"));
        }
        Ok(Self {
            profiles,
            outside_utility,
        })
    }

    /// Number of options including the outside option.
    pub fn n_options(&self) -> usize {
        self.profiles.len() + self.outside_utility.is_some() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChoiceOutcome {
    Borrower(BorrowerId),
    Outside,
}

/// Logit choice probabilities, borrowers in market order followed by the
/// outside option (if the market has one).
pub fn choice_probs(m: &Market, prefs: &LenderPrefs) -> Vec<f64> {
    let mut v: Vec<f64> = m.profiles.iter().map(|p| systematic_utility(p, prefs)).collect();
    if let Some(w) = m.outside_utility {
        v.push(w);
    }
    softmax(&v)
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Gumbel-max draw: systematic utility plus an independent standard Gumbel
/// shock for every option, outside option last.
pub fn simulate_choice<R: Rng + ?Sized>(m: &Market, prefs: &LenderPrefs, rng: &mut R) -> ChoiceOutcome {
    let shock = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut best = ChoiceOutcome::Outside;
    let mut best_u = f64::NEG_INFINITY;
    for p in &m.profiles {
        let u = systematic_utility(p, prefs) + shock.sample(rng);
        if u > best_u {
            best_u = u;
            best = ChoiceOutcome::Borrower(p.id);
        }
    }
    if let Some(w) = m.outside_utility {
        if w + shock.sample(rng) > best_u {
            best = ChoiceOutcome::Outside;
        }
    }
    best
}
