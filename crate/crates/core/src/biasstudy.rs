//! Attenuation of a treatment coefficient when the treatment indicator is
//! observed through a noisy classifier.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasStudySpec {
    /// Probability that a treated unit is recorded as untreated.
    pub fn_rate: f64,
    /// Probability that an untreated unit is recorded as treated.
    pub fp_rate: f64,
    pub n_units: usize,
    pub n_sims: usize,
    pub mean_untreated: f64,
    pub mean_treated: f64,
    pub sd: f64,
    pub treated_share: f64,
}

impl Default for BiasStudySpec {
    fn default() -> Self {
        Self {
            fn_rate: 0.34,
            fp_rate: 0.0,
            n_units: 100_000,
            n_sims: 1000,
            mean_untreated: 1.0,
            mean_treated: 1.3,
            sd: 1.0,
            treated_share: 0.5,
        }
    }
}

impl BiasStudySpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("fn_rate", self.fn_rate),
            ("fp_rate", self.fp_rate),
            ("treated_share", self.treated_share),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_sims == 0 || self.n_units < 2 {
            return Err(Error::config("n_sims must be positive and n_units at least 2"));
        }
        if !(self.sd >= 0.0 && self.sd.is_finite())
            || !self.mean_treated.is_finite()
            || !self.mean_untreated.is_finite()
        {
            return Err(Error::config("outcome means and sd must be finite with sd >= 0"));
        }
        Ok(())
    }

    pub fn true_effect(&self) -> f64 {
        self.mean_treated - self.mean_untreated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasStudyResult {
    pub mean_coef: f64,
    /// Standard error of `mean_coef`; undefined with a single usable simulation.
    pub se_of_mean: Option<f64>,
    pub relative_bias: f64,
    pub true_effect: f64,
    /// Simulations in which every unit landed in one observed arm.
    pub dropped: usize,
    /// Coefficient per simulation, `None` for dropped ones.
    pub coefs: Vec<Option<f64>>,
}

/// Slope of the outcome on the observed indicator in one simulated sample.
/// With one binary regressor and an intercept this is the difference in
/// observed-arm means.
fn simulate_once<R: Rng + ?Sized>(spec: &BiasStudySpec, rng: &mut R) -> Option<f64> {
    let noise = Normal::new(0.0, spec.sd).expect("validated sd");
    let (mut sum1, mut n1, mut sum0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for _ in 0..spec.n_units {
        let treated = rng.random::<f64>() < spec.treated_share;
        let mean = if treated {
            spec.mean_treated
        } else {
            spec.mean_untreated
        };
        let y = mean + noise.sample(rng);
        let observed = if treated {
            rng.random::<f64>() >= spec.fn_rate
        } else {
            rng.random::<f64>() < spec.fp_rate
        };
        if observed {
            sum1 += y;
            n1 += 1;
        } else {
            sum0 += y;
            n0 += 1;
        }
    }
    (n1 > 0 && n0 > 0).then(|| sum1 / n1 as f64 - sum0 / n0 as f64)
}

pub fn run_bias_study(spec: &BiasStudySpec, seed: u64) -> Result<BiasStudyResult> {
    spec.validate()?;
    let coefs: Vec<Option<f64>> = (0..spec.n_sims)
        .into_par_iter()
        .map(|i| simulate_once(spec, &mut seeded(derive_seed(seed, i as u64))))
        .collect();
    let used: Vec<f64> = coefs.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::numeric(format!(
            "all {} simulations are degenerate: every unit falls in one observed arm",
            spec.n_sims
        )));
    }
    let m = used.len() as f64;
    let mean_coef = used.iter().sum::<f64>() / m;
    let se_of_mean = (used.len() > 1).then(|| {
        let var = used.iter().map(|c| (c - mean_coef).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    });
    let true_effect = spec.true_effect();
    Ok(BiasStudyResult {
        mean_coef,
        se_of_mean,
        relative_bias: (mean_coef - true_effect) / true_effect,
        true_effect,
        dropped: spec.n_sims - used.len(),
        coefs,
    })
}
