//! Scenario execution: pools, policies, markets, lender choices, metrics.
//!
//! Each simulation is an independent unit of work. Its random draws come
//! from four ChaCha streams keyed by a seed derived from the master seed and
//! the simulation index: pool generation, style transform, market sampling,
//! and lender preferences with choice shocks. Results are therefore the same
//! for any thread count and any scheduling order.

use rand_distr::{Distribution, Gumbel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{systematic_utility, LenderPrefs, PreferenceParams};
use crate::error::{Error, Result};
use crate::metrics::{report, MetricsReport, OutcomeTally};
use crate::policy::{apply_style_transform, sample_market_indices, PolicyKind, PolicySpec};
use crate::pool::{draw_pool, BorrowerPool, CalibrationTable, FixedEffectSet, DEFAULT_POOL_SIZE};
use crate::rng::{derive_seed, stream_rng, SimRng};

const POOL_STREAM: u64 = 0;
const STYLE_STREAM: u64 = 1;
const MARKET_STREAM: u64 = 2;
const CHOICE_STREAM: u64 = 3;

pub const DEFAULT_N_SIMS: usize = 50;
pub const DEFAULT_N_LENDERS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub policy: PolicySpec,
    pub pool_size: usize,
    pub n_sims: usize,
    pub n_lenders: usize,
    /// Preference distribution; `prefs.omega` is the outside-option utility.
    pub prefs: PreferenceParams,
    pub fe_set: FixedEffectSet,
    pub calib: CalibrationTable,
    pub master_seed: u64,
    /// Share random streams across policies so that scenarios differing
    /// only in policy see the same pools and lenders.
    pub common_random_numbers: bool,
    /// Report Benchmark with the efficiency of the matching Baseline run.
    pub pin_benchmark_efficiency: bool,
}

impl Scenario {
    pub fn new(policy: PolicySpec, fe_set: FixedEffectSet, calib: CalibrationTable) -> Self {
        Self {
            policy,
            pool_size: DEFAULT_POOL_SIZE,
            n_sims: DEFAULT_N_SIMS,
            n_lenders: DEFAULT_N_LENDERS,
            prefs: PreferenceParams::default(),
            fe_set,
            calib,
            master_seed: 0,
            common_random_numbers: true,
            pin_benchmark_efficiency: true,
        }
    }

    pub fn with_policy(&self, kind: PolicyKind) -> Self {
        Self {
            policy: PolicySpec { kind, ..self.policy },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.n_sims == 0 {
            return Err(Error::config("pool_size and n_sims must be positive"));
        }
        self.policy.validate(self.pool_size)?;
        self.prefs.validate()?;
        self.calib.validate()
    }

    fn sim_seed(&self, kind: PolicyKind, sim_index: usize) -> u64 {
        let seed = derive_seed(self.master_seed, sim_index as u64);
        if self.common_random_numbers {
            seed
        } else {
            derive_seed(seed, kind as u64 + 1)
        }
    }
}

/// Counts of one simulated market before metrics are computed.
fn simulate_tally(s: &Scenario, kind: PolicyKind, sim_index: usize) -> Result<OutcomeTally> {
    let seed = s.sim_seed(kind, sim_index);
    let spec = PolicySpec { kind, ..s.policy };
    let pool = draw_pool(&s.fe_set, &s.calib, s.pool_size, &mut stream_rng(seed, POOL_STREAM))?;
    let pool = apply_style_transform(&pool, &spec, &mut stream_rng(seed, STYLE_STREAM));
    let mut market_rng = stream_rng(seed, MARKET_STREAM);
    let mut choice_rng = stream_rng(seed, CHOICE_STREAM);
    let sampler = s.prefs.sampler()?;
    let mut tally = OutcomeTally::new(pool);
    for _ in 0..s.n_lenders {
        let market = sample_market_indices(&tally.pool, &spec, &mut market_rng)?;
        let prefs = sampler.draw(&mut choice_rng);
        match gumbel_max(&tally.pool, &market, s.prefs.omega, &prefs, &mut choice_rng) {
            Some(i) => tally.record_index(i),
            None => tally.record_outside(),
        }
    }
    Ok(tally)
}

/// Pool index of the utility-maximising borrower among `market`, or `None`
/// for the outside option. Shocks are drawn in market order, outside last.
fn gumbel_max(
    pool: &BorrowerPool,
    market: &[usize],
    omega: f64,
    prefs: &LenderPrefs,
    rng: &mut SimRng,
) -> Option<usize> {
    let shock = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut best = None;
    let mut best_u = f64::NEG_INFINITY;
    for &i in market {
        let u = systematic_utility(&pool.profiles[i], prefs) + shock.sample(rng);
        if u > best_u {
            best_u = u;
            best = Some(i);
        }
    }
    if omega + shock.sample(rng) > best_u {
        best = None;
    }
    best
}

/// Metrics of simulation `sim_index` of the scenario.
pub fn run_simulation(s: &Scenario, sim_index: usize) -> Result<MetricsReport> {
    if s.n_lenders == 0 {
        return Err(Error::numeric("no lenders to simulate"));
    }
    let kind = s.policy.kind;
    let tally = simulate_tally(s, kind, sim_index)?;
    if tally.inside_total() == 0 {
        return Err(Error::numeric(format!(
            "simulation {sim_index}: no lender chose a borrower, metrics undefined"
        )));
    }
    let mut r = report(&tally)?;
    if kind == PolicyKind::Benchmark && s.pin_benchmark_efficiency {
        let companion = simulate_tally(s, PolicyKind::Baseline, sim_index)?;
        r.efficiency = crate::metrics::efficiency(&companion)?;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 when fewer than two values.
    pub sd: f64,
    pub n: usize,
    pub sd_defined: bool,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd_defined = n > 1;
        let sd = if sd_defined {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            sd,
            n,
            sd_defined,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub gini: Summary,
    pub bottom_tercile_share: Summary,
    pub efficiency: Summary,
    /// Averaged over simulations whose pool had male borrowers.
    pub male_ratio: Option<Summary>,
    pub raw_male_share: Option<Summary>,
}

impl Aggregate {
    pub fn from_reports(reports: &[MetricsReport]) -> Result<Self> {
        let col = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
        let opt = |f: fn(&MetricsReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(f).collect() };
        let need = |s: Option<Summary>| s.ok_or_else(|| Error::numeric("no simulations to aggregate"));
        Ok(Self {
            gini: need(Summary::of(&col(|r| r.gini)))?,
            bottom_tercile_share: need(Summary::of(&col(|r| r.bottom_tercile_share)))?,
            efficiency: need(Summary::of(&col(|r| r.efficiency)))?,
            male_ratio: Summary::of(&opt(|r| r.male_ratio)),
            raw_male_share: Summary::of(&opt(|r| r.raw_male_share)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub policy: PolicyKind,
    pub reports: Vec<MetricsReport>,
    pub aggregate: Aggregate,
}

pub fn run_scenario(s: &Scenario) -> Result<ScenarioResult> {
    s.validate()?;
    let reports = (0..s.n_sims)
        .into_par_iter()
        .map(|i| run_simulation(s, i).map_err(|e| with_context(e, s.policy.kind, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResult {
        policy: s.policy.kind,
        aggregate: Aggregate::from_reports(&reports)?,
        reports,
    })
}

fn with_context(e: Error, kind: PolicyKind, sim: usize) -> Error {
    let ctx = |m: String| format!("{kind} simulation {sim}: {m}");
    match e {
        Error::Config(m) => Error::Config(ctx(m)),
        Error::Data(m) => Error::Data(ctx(m)),
        Error::Numeric(m) => Error::Numeric(ctx(m)),
        other => other,
    }
}

pub fn run_sweep(scenarios: &[Scenario]) -> Result<Vec<ScenarioResult>> {
    scenarios.iter().map(run_scenario).collect()
}

/// One scenario per policy, identical apart from the policy kind.
pub fn policy_sweep(base: &Scenario, kinds: &[PolicyKind]) -> Vec<Scenario> {
    kinds.iter().map(|&k| base.with_policy(k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Gini,
    Efficiency,
    MaleRatio,
}

/// A directional comparison `lhs > rhs` between two policies' mean metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub metric: Metric,
    pub greater: PolicyKind,
    pub lesser: PolicyKind,
    pub greater_value: Option<f64>,
    pub lesser_value: Option<f64>,
    pub passed: bool,
}

impl OrderingCheck {
    pub fn label(&self) -> String {
        let m = match self.metric {
            Metric::Gini => "gini",
            Metric::Efficiency => "efficiency",
            Metric::MaleRatio => "male_ratio",
        };
        format!("{m}({}) > {m}({})", self.greater, self.lesser)
    }
}

/// The expected policy orderings.
pub const EXPECTED_ORDERINGS: [(Metric, PolicyKind, PolicyKind); 8] = [
    (Metric::Gini, PolicyKind::Naive, PolicyKind::Baseline),
    (Metric::Gini, PolicyKind::Baseline, PolicyKind::Benchmark),
    (Metric::Gini, PolicyKind::Baseline, PolicyKind::PartialCompliance),
    (Metric::Efficiency, PolicyKind::Naive, PolicyKind::Baseline),
    (
        Metric::Efficiency,
        PolicyKind::Baseline,
        PolicyKind::RestrictCompetition,
    ),
    (Metric::MaleRatio, PolicyKind::PartialCompliance, PolicyKind::Baseline),
    (Metric::MaleRatio, PolicyKind::Hybrid, PolicyKind::LowTypeSupport),
    (Metric::MaleRatio, PolicyKind::LowTypeSupport, PolicyKind::Baseline),
];

/// Evaluates every expected ordering whose two policies are present.
pub fn check_orderings(results: &[ScenarioResult]) -> Vec<OrderingCheck> {
    let value = |kind: PolicyKind, metric: Metric| -> Option<Option<f64>> {
        let r = results.iter().find(|r| r.policy == kind)?;
        Some(match metric {
            Metric::Gini => Some(r.aggregate.gini.mean),
            Metric::Efficiency => Some(r.aggregate.efficiency.mean),
            Metric::MaleRatio => r.aggregate.male_ratio.map(|s| s.mean),
        })
    };
    EXPECTED_ORDERINGS
        .iter()
        .filter_map(|&(metric, greater, lesser)| {
            let g = value(greater, metric)?;
            let l = value(lesser, metric)?;
            Some(OrderingCheck {
                metric,
                greater,
                lesser,
                greater_value: g,
                lesser_value: l,
                passed: matches!((g, l), (Some(a), Some(b)) if a > b),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{simulate_choice, ChoiceOutcome};
    use crate::policy::sample_market;
    use crate::pool::BorrowerId;
    use crate::rng::seeded;

    fn scenario(kind: PolicyKind) -> Scenario {
        let mut s = Scenario::new(
            PolicySpec::new(kind),
            FixedEffectSet::evenly_spaced(0.0, 0.64, 20).unwrap(),
            CalibrationTable::stylized(),
        );
        s.n_sims = 8;
        s.n_lenders = 300;
        s.master_seed = 42;
        s
    }

    #[test]
    fn gumbel_max_agrees_with_market_choice() {
        let s = scenario(PolicyKind::Baseline);
        let pool = draw_pool(&s.fe_set, &s.calib, 22, &mut seeded(1)).unwrap();
        let prefs = LenderPrefs {
            alpha: -0.4,
            beta: 0.3,
            gamma: -0.2,
        };
        for k in 0..500 {
            let market = sample_market(&pool, &s.policy, 1.0, &mut seeded(k)).unwrap();
            let idx = sample_market_indices(&pool, &s.policy, &mut seeded(k)).unwrap();
            let a = simulate_choice(&market, &prefs, &mut seeded(10_000 + k));
            let b = gumbel_max(&pool, &idx, 1.0, &prefs, &mut seeded(10_000 + k));
            let b = b.map_or(ChoiceOutcome::Outside, |i| {
                ChoiceOutcome::Borrower(BorrowerId(i as u32))
            });
            assert_eq!(a, b);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let s = scenario(PolicyKind::Hybrid);
        assert_eq!(run_simulation(&s, 3).unwrap(), run_simulation(&s, 3).unwrap());
        assert_ne!(run_simulation(&s, 3).unwrap(), run_simulation(&s, 4).unwrap());
    }

    #[test]
    fn no_lenders_is_an_error() {
        let mut s = scenario(PolicyKind::Baseline);
        s.n_lenders = 0;
        assert!(run_simulation(&s, 0).is_err());
    }

    #[test]
    fn dominated_outside_option_gives_full_efficiency() {
        let mut s = scenario(PolicyKind::Baseline);
        s.prefs.omega = -1e6;
        s.n_lenders = 1000;
        assert_eq!(run_simulation(&s, 0).unwrap().efficiency, 1.0);
    }

    #[test]
    fn dominant_outside_option_is_a_numeric_error() {
        let mut s = scenario(PolicyKind::Baseline);
        s.prefs.omega = 1e6;
        assert!(matches!(run_simulation(&s, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let s = scenario(PolicyKind::Naive);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| run_scenario(&s)).unwrap();
        let b = wide.install(|| run_scenario(&s)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregates_recompute_from_reports() {
        let r = run_scenario(&scenario(PolicyKind::PartialCompliance)).unwrap();
        assert_eq!(r.reports.len(), 8);
        let mean = r.reports.iter().map(|m| m.gini).sum::<f64>() / 8.0;
        assert!((r.aggregate.gini.mean - mean).abs() < 1e-15);
        assert_eq!(Aggregate::from_reports(&r.reports).unwrap(), r.aggregate);
    }

    #[test]
    fn single_simulation_flags_undefined_sd() {
        let mut s = scenario(PolicyKind::Baseline);
        s.n_sims = 1;
        let r = run_scenario(&s).unwrap();
        assert!(!r.aggregate.gini.sd_defined);
        assert_eq!(r.aggregate.gini.sd, 0.0);
        assert_eq!(r.aggregate.gini.mean, r.reports[0].gini);
    }

    #[test]
    fn common_random_numbers_match_pools_across_policies() {
        let base = scenario(PolicyKind::Baseline);
        let restrict = base.with_policy(PolicyKind::RestrictCompetition);
        let t1 = simulate_tally(&base, PolicyKind::Baseline, 0).unwrap();
        let t2 = simulate_tally(&restrict, PolicyKind::RestrictCompetition, 0).unwrap();
        assert_eq!(t1.pool, t2.pool);
        let mut off = base.clone();
        off.common_random_numbers = false;
        let t3 = simulate_tally(&off, PolicyKind::RestrictCompetition, 0).unwrap();
        let t4 = simulate_tally(&off, PolicyKind::Baseline, 0).unwrap();
        assert_ne!(t3.pool, t4.pool);
    }

    #[test]
    fn benchmark_reports_baseline_efficiency() {
        let base = scenario(PolicyKind::Baseline);
        let bench = base.with_policy(PolicyKind::Benchmark);
        for i in 0..4 {
            assert_eq!(
                run_simulation(&bench, i).unwrap().efficiency,
                run_simulation(&base, i).unwrap().efficiency
            );
        }
        let mut unpinned = bench.clone();
        unpinned.pin_benchmark_efficiency = false;
        let raw = run_scenario(&unpinned).unwrap().aggregate.efficiency.mean;
        let pinned = run_scenario(&bench).unwrap().aggregate.efficiency.mean;
        assert_ne!(raw, pinned);
    }

    #[test]
    fn sweep_covers_all_policies_with_bounded_metrics() {
        let base = scenario(PolicyKind::Baseline);
        let results = run_sweep(&policy_sweep(&base, &PolicyKind::ALL)).unwrap();
        assert_eq!(results.len(), 7);
        for r in &results {
            for m in &r.reports {
                for v in [m.gini, m.bottom_tercile_share, m.efficiency] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        assert_eq!(check_orderings(&results).len(), 8);
        assert_eq!(check_orderings(&results[..1]).len(), 0);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = scenario(PolicyKind::Baseline);
        s.pool_size = 5;
        assert!(matches!(run_scenario(&s), Err(Error::Config(_))));
    }
}
