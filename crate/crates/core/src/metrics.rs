//! Fairness and efficiency metrics, Lorenz curves, and log-normal
//! counterfactual outcome synthesis.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::choice::ChoiceOutcome;
use crate::error::{Error, Result};
use crate::pool::{BorrowerId, BorrowerPool};

/// Choice counts for every borrower in a pool, shown or not.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTally {
    pub pool: BorrowerPool,
    /// Aligned with `pool.profiles`.
    pub counts: Vec<u64>,
    pub outside_count: u64,
}

impl OutcomeTally {
    pub fn new(pool: BorrowerPool) -> Self {
        let counts = vec![0; pool.len()];
        Self {
            pool,
            counts,
            outside_count: 0,
        }
    }

    pub fn record(&mut self, outcome: ChoiceOutcome) {
        match outcome {
            ChoiceOutcome::Outside => self.outside_count += 1,
            ChoiceOutcome::Borrower(id) => {
                let i = self.index_of(id).expect("chosen borrower belongs to the pool");
                self.counts[i] += 1;
            }
        }
    }

    /// Records a choice by pool position.
    pub fn record_index(&mut self, i: usize) {
        self.counts[i] += 1;
    }

    pub fn record_outside(&mut self) {
        self.outside_count += 1;
    }

    fn index_of(&self, id: BorrowerId) -> Option<usize> {
        // ids are usually the positions themselves
        match self.pool.profiles.get(id.0 as usize) {
            Some(p) if p.id == id => Some(id.0 as usize),
            _ => self.pool.profiles.iter().position(|p| p.id == id),
        }
    }

    pub fn count_of(&self, id: BorrowerId) -> Option<u64> {
        self.index_of(id).map(|i| self.counts[i])
    }

    pub fn inside_total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn lenders(&self) -> u64 {
        self.inside_total() + self.outside_count
    }

    pub fn shares(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Fairness and efficiency of one simulated market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub gini: f64,
    pub bottom_tercile_share: f64,
    pub efficiency: f64,
    /// Undefined when the pool has no male borrowers.
    pub male_ratio: Option<f64>,
    pub raw_male_share: Option<f64>,
}

fn check_values(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::numeric("inequality metric of an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::numeric("inequality metrics need finite non-negative values"));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::numeric("inequality metric undefined for an all-zero vector"));
    }
    Ok(total)
}

/// Mean absolute pairwise difference over twice the mean, normalised by n².
///
/// Uses the sorted form `sum_i (2i - n - 1) x_(i) / (n * sum x)`.
pub fn gini(values: &[f64]) -> Result<f64> {
    let total = check_values(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    /// (cumulative population share, cumulative outcome share), from (0,0)
    /// to (1,1).
    pub points: Vec<(f64, f64)>,
}

impl LorenzCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

pub fn lorenz(values: &[f64]) -> Result<LorenzCurve> {
    let total = check_values(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut points = Vec::with_capacity(n + 1);
    points.push((0.0, 0.0));
    let mut cum = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        cum += x;
        let y = if i + 1 == n { 1.0 } else { cum / total };
        points.push(((i + 1) as f64 / n as f64, y));
    }
    Ok(LorenzCurve { points })
}

/// Share of lenders who picked a borrower over the outside option.
pub fn efficiency(t: &OutcomeTally) -> Result<f64> {
    let lenders = t.lenders();
    if lenders == 0 {
        return Err(Error::numeric("efficiency of an empty tally"));
    }
    Ok(1.0 - t.outside_count as f64 / lenders as f64)
}

/// Summed market share of the floor(n/3) least chosen borrowers; ties are
/// broken by borrower id.
pub fn bottom_tercile_share(t: &OutcomeTally) -> f64 {
    let inside = t.inside_total();
    if inside == 0 {
        return 0.0;
    }
    let mut ranked: Vec<(u64, BorrowerId)> = t.counts.iter().zip(&t.pool.profiles).map(|(&c, p)| (c, p.id)).collect();
    ranked.sort();
    let k = ranked.len() / 3;
    let bottom: u64 = ranked[..k].iter().map(|(c, _)| c).sum();
    bottom as f64 / inside as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaleSelection {
    /// `raw_share` divided by the pool's male share.
    pub ratio: f64,
    /// Male share of inside choices.
    pub raw_share: f64,
}

pub fn male_selection_ratio(t: &OutcomeTally) -> Result<MaleSelection> {
    let males = t.pool.male_count();
    if males == 0 {
        return Err(Error::numeric("pool has no male borrowers"));
    }
    let inside = t.inside_total();
    if inside == 0 {
        return Err(Error::numeric("no inside choices"));
    }
    let male_choices: u64 = t
        .counts
        .iter()
        .zip(&t.pool.profiles)
        .filter(|(_, p)| p.male)
        .map(|(c, _)| c)
        .sum();
    let raw_share = male_choices as f64 / inside as f64;
    let pool_share = males as f64 / t.pool.len() as f64;
    Ok(MaleSelection {
        ratio: raw_share / pool_share,
        raw_share,
    })
}

/// All metrics for one tally. Fails when nobody chose a borrower.
pub fn report(t: &OutcomeTally) -> Result<MetricsReport> {
    let male = match male_selection_ratio(t) {
        Ok(m) => Some(m),
        Err(_) if t.pool.male_count() == 0 => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        gini: gini(&t.shares())?,
        bottom_tercile_share: bottom_tercile_share(t),
        efficiency: efficiency(t)?,
        male_ratio: male.map(|m| m.ratio),
        raw_male_share: male.map(|m| m.raw_share),
    })
}

/// Caps values above the given upper quantile (nearest rank).
pub fn winsorize_upper(values: &[f64], quantile: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let cap = sorted[rank - 1];
    values.iter().map(|&v| v.min(cap)).collect()
}

/// Gini coefficient of a log-normal with log-scale sd `sigma`:
/// `2 Phi(sigma / sqrt 2) - 1`, which equals `erf(sigma / 2)`.
pub fn lognormal_gini(sigma: f64) -> f64 {
    erf(sigma / 2.0)
}

/// Log-scale sd whose log-normal has the given Gini, by bisection.
pub fn lognormal_sigma_for_gini(target: f64, tol: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::numeric(format!("target Gini {target} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while lognormal_gini(hi) < target {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::numeric(format!("target Gini {target} not attainable")));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if lognormal_gini(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws counterfactual outcomes from a log-normal with the baseline mean
/// and a Gini `(1 + gini_delta)` times the baseline Gini, then scales every
/// draw by `1 + eff_delta`. Deltas are fractional changes (0.1 = +10%).
pub fn synthesize_counterfactual_outcomes<R: Rng + ?Sized>(
    baseline: &[f64],
    gini_delta: f64,
    eff_delta: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let base_gini = gini(baseline)?;
    let mean = baseline.iter().sum::<f64>() / baseline.len() as f64;
    let sigma = lognormal_sigma_for_gini((1.0 + gini_delta) * base_gini, 1e-12)?;
    let mu = mean.ln() - sigma * sigma / 2.0;
    let dist = LogNormal::new(mu, sigma).map_err(|e| Error::numeric(e.to_string()))?;
    let scale = 1.0 + eff_delta;
    Ok((0..n).map(|_| dist.sample(rng) * scale).collect())
}
