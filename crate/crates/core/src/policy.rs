//! Platform policies: how a policy reshapes the style features of a pool and
//! how it samples each lender's market from the pool.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::choice::Market;
use crate::error::{Error, Result};
use crate::pool::{BorrowerPool, BorrowerProfile};

pub const DEFAULT_MARKET_SIZE: usize = 10;
pub const DEFAULT_RESTRICTED_SIZE: usize = 5;
pub const DEFAULT_COMPLIANCE_PROB: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Equal inclusion probability, untouched styles.
    Baseline,
    /// Every borrower smiles and none uses a body shot.
    Benchmark,
    /// Style-compliant borrowers are always shown first.
    Naive,
    /// Non-compliant style flags flip to compliant with a fixed probability.
    PartialCompliance,
    /// Male borrowers are always shown first.
    LowTypeSupport,
    /// Smaller markets.
    RestrictCompetition,
    /// Partial compliance styles with low-type support sampling.
    Hybrid,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Baseline,
        PolicyKind::Benchmark,
        PolicyKind::Naive,
        PolicyKind::PartialCompliance,
        PolicyKind::LowTypeSupport,
        PolicyKind::RestrictCompetition,
        PolicyKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Baseline => "Baseline",
            PolicyKind::Benchmark => "Benchmark",
            PolicyKind::Naive => "Naive",
            PolicyKind::PartialCompliance => "PartialCompliance",
            PolicyKind::LowTypeSupport => "LowTypeSupport",
            PolicyKind::RestrictCompetition => "RestrictCompetition",
            PolicyKind::Hybrid => "Hybrid",
        }
    }

    fn transforms_style(self) -> bool {
        matches!(self, PolicyKind::PartialCompliance | PolicyKind::Hybrid)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::config(format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub compliance_prob: f64,
    pub restricted_size: usize,
    pub market_size: usize,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            compliance_prob: DEFAULT_COMPLIANCE_PROB,
            restricted_size: DEFAULT_RESTRICTED_SIZE,
            market_size: DEFAULT_MARKET_SIZE,
        }
    }

    /// Number of borrowers in each market under this policy.
    pub fn effective_market_size(&self) -> usize {
        match self.kind {
            PolicyKind::RestrictCompetition => self.restricted_size,
            _ => self.market_size,
        }
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.compliance_prob) {
            return Err(Error::config(format!(
                "policy.compliance_prob = {} is not a probability",
                self.compliance_prob
            )));
        }
        if self.market_size == 0 || self.restricted_size == 0 {
            return Err(Error::config("policy market sizes must be at least 1"));
        }
        if self.restricted_size > self.market_size {
            return Err(Error::config(format!(
                "policy.restricted_size = {} exceeds market_size = {}",
                self.restricted_size, self.market_size
            )));
        }
        if self.market_size > pool_size {
            return Err(Error::config(format!(
                "market_size = {} exceeds pool_size = {pool_size}",
                self.market_size
            )));
        }
        Ok(())
    }
}

/// Applies the policy's style transform. Fixed effects and gender are never
/// changed.
pub fn apply_style_transform<R: Rng + ?Sized>(pool: &BorrowerPool, spec: &PolicySpec, rng: &mut R) -> BorrowerPool {
    let mut out = pool.clone();
    match spec.kind {
        PolicyKind::Benchmark => {
            for p in &mut out.profiles {
                p.smile = true;
                p.bodyshot = false;
            }
        }
        k if k.transforms_style() => {
            // body shot before smile, each flip an independent Bernoulli
            for p in &mut out.profiles {
                if p.bodyshot && rng.random::<f64>() < spec.compliance_prob {
                    p.bodyshot = false;
                }
                if !p.smile && rng.random::<f64>() < spec.compliance_prob {
                    p.smile = true;
                }
            }
        }
        _ => {}
    }
    out
}

/// Predicate selecting the borrowers a promoting policy always tries to
/// include; `None` for policies that sample uniformly.
fn promotion_rule(kind: PolicyKind) -> Option<fn(&BorrowerProfile) -> bool> {
    match kind {
        PolicyKind::Naive => Some(BorrowerProfile::is_style_compliant),
        PolicyKind::LowTypeSupport | PolicyKind::Hybrid => Some(|p| p.male),
        _ => None,
    }
}

/// Pool indices of the borrowers in one lender's market.
pub fn sample_market_indices<R: Rng + ?Sized>(
    pool: &BorrowerPool,
    spec: &PolicySpec,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = pool.len();
    let size = spec.effective_market_size();
    if size > n {
        return Err(Error::config(format!("market of {size} requested from a pool of {n}")));
    }
    if size == 0 {
        return Err(Error::config("market size must be at least 1"));
    }
    let Some(promote) = promotion_rule(spec.kind) else {
        return Ok(index::sample(rng, n, size).into_vec());
    };

    let (first, rest): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| promote(&pool.profiles[i]));
    if first.len() > size {
        Ok(index::sample(rng, first.len(), size)
            .into_iter()
            .map(|j| first[j])
            .collect())
    } else {
        let fill = size - first.len();
        let mut out = first;
        out.extend(index::sample(rng, rest.len(), fill).into_iter().map(|j| rest[j]));
        Ok(out)
    }
}

pub fn sample_market<R: Rng + ?Sized>(
    pool: &BorrowerPool,
    spec: &PolicySpec,
    omega: f64,
    rng: &mut R,
) -> Result<Market> {
    let idx = sample_market_indices(pool, spec, rng)?;
    Ok(Market {
        profiles: idx.into_iter().map(|i| pool.profiles[i]).collect(),
        outside_utility: Some(omega),
    })
}

/// Exact inclusion probability of every pool member in one market.
pub fn inclusion_probabilities(pool: &BorrowerPool, spec: &PolicySpec) -> Vec<f64> {
    let n = pool.len();
    let size = spec.effective_market_size().min(n);
    let uniform = size as f64 / n as f64;
    let Some(promote) = promotion_rule(spec.kind) else {
        return vec![uniform; n];
    };
    let flags: Vec<bool> = pool.profiles.iter().map(promote).collect();
    let n_first = flags.iter().filter(|&&f| f).count();
    if n_first > size {
        let p = size as f64 / n_first as f64;
        flags.iter().map(|&f| if f { p } else { 0.0 }).collect()
    } else {
        let rest = n - n_first;
        let p_rest = if rest == 0 {
            0.0
        } else {
            (size - n_first) as f64 / rest as f64
        };
        flags.iter().map(|&f| if f { 1.0 } else { p_rest }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{draw_pool, BorrowerId, CalibrationTable, FixedEffectSet};
    use crate::rng::seeded;

    fn pool_with(flags: &[(bool, bool, bool)]) -> BorrowerPool {
        BorrowerPool::new(
            flags
                .iter()
                .enumerate()
                .map(|(i, &(male, smile, bodyshot))| BorrowerProfile {
                    id: BorrowerId(i as u32),
                    eta: i as f64 * 0.01,
                    male,
                    smile,
                    bodyshot,
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_pool(seed: u64, n: usize) -> BorrowerPool {
        let fe = FixedEffectSet::evenly_spaced(0.0, 0.64, 20).unwrap();
        draw_pool(&fe, &CalibrationTable::stylized(), n, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn benchmark_makes_everyone_compliant() {
        let pool = random_pool(1, 200);
        let out = apply_style_transform(&pool, &PolicySpec::new(PolicyKind::Benchmark), &mut seeded(2));
        assert!(out.profiles.iter().all(|p| p.smile && !p.bodyshot));
    }

    #[test]
    fn transforms_keep_type_and_fixed_effect() {
        let pool = random_pool(3, 300);
        for kind in PolicyKind::ALL {
            let out = apply_style_transform(&pool, &PolicySpec::new(kind), &mut seeded(4));
            for (a, b) in pool.profiles.iter().zip(&out.profiles) {
                assert_eq!((a.id, a.eta, a.male), (b.id, b.eta, b.male));
            }
            if !matches!(
                kind,
                PolicyKind::Benchmark | PolicyKind::PartialCompliance | PolicyKind::Hybrid
            ) {
                assert_eq!(out, pool);
            }
        }
    }

    #[test]
    fn zero_compliance_is_identity() {
        let pool = random_pool(5, 100);
        let spec = PolicySpec {
            compliance_prob: 0.0,
            ..PolicySpec::new(PolicyKind::PartialCompliance)
        };
        assert_eq!(apply_style_transform(&pool, &spec, &mut seeded(6)), pool);
    }

    #[test]
    fn partial_compliance_expected_shares() {
        // initial smile share c: expect c + 0.75 (1 - c)
        let n = 100_000;
        let flags: Vec<_> = (0..n).map(|i| (false, i % 5 < 2, i % 4 == 0)).collect();
        let pool = pool_with(&flags);
        let spec = PolicySpec::new(PolicyKind::PartialCompliance);
        let out = apply_style_transform(&pool, &spec, &mut seeded(7));
        let check = |before: f64, after: f64| {
            let expected = before + 0.75 * (1.0 - before);
            let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
            assert!((after - expected).abs() < 3.0 * sigma, "{after} vs {expected}");
        };
        let share =
            |f: &dyn Fn(&BorrowerProfile) -> bool| out.profiles.iter().filter(|p| f(p)).count() as f64 / n as f64;
        check(0.4, share(&|p| p.smile));
        check(0.75, share(&|p| !p.bodyshot));
    }

    #[test]
    fn baseline_inclusion_is_hypergeometric() {
        let pool = random_pool(8, 22);
        let spec = PolicySpec::new(PolicyKind::Baseline);
        let trials = 100_000;
        let mut counts = [0usize; 22];
        let mut rng = seeded(9);
        for _ in 0..trials {
            let idx = sample_market_indices(&pool, &spec, &mut rng).unwrap();
            assert_eq!(idx.len(), 10);
            for i in idx {
                counts[i] += 1;
            }
        }
        let p = 10.0 / 22.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.5 * sigma);
        }
    }

    #[test]
    fn naive_keeps_all_compliant_and_fills_uniformly() {
        let mut flags = vec![(false, false, true); 22];
        for f in flags.iter_mut().take(4) {
            *f = (false, true, false);
        }
        let pool = pool_with(&flags);
        let spec = PolicySpec::new(PolicyKind::Naive);
        let trials = 50_000;
        let mut counts = [0usize; 22];
        let mut rng = seeded(10);
        for _ in 0..trials {
            let idx = sample_market_indices(&pool, &spec, &mut rng).unwrap();
            assert_eq!(idx.len(), 10);
            assert!((0..4).all(|i| idx.contains(&i)));
            for i in idx {
                counts[i] += 1;
            }
        }
        let p = 6.0 / 18.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts[4..] {
            assert!((c as f64 - trials as f64 * p).abs() < 3.5 * sigma);
        }
        let probs = inclusion_probabilities(&pool, &spec);
        assert_eq!(&probs[..4], &[1.0; 4]);
        assert!((probs[4] - p).abs() < 1e-15);
    }

    #[test]
    fn naive_samples_within_large_compliant_set() {
        let flags: Vec<_> = (0..22).map(|i| (false, i < 15, false)).collect();
        let pool = pool_with(&flags);
        let spec = PolicySpec::new(PolicyKind::Naive);
        let mut rng = seeded(11);
        for _ in 0..1000 {
            let idx = sample_market_indices(&pool, &spec, &mut rng).unwrap();
            assert!(idx.iter().all(|&i| i < 15));
        }
    }

    #[test]
    fn low_type_support_promotes_men() {
        let flags: Vec<_> = (0..22).map(|i| (i % 7 == 0, true, false)).collect();
        let pool = pool_with(&flags);
        let mut rng = seeded(12);
        for kind in [PolicyKind::LowTypeSupport, PolicyKind::Hybrid] {
            for _ in 0..500 {
                let idx = sample_market_indices(&pool, &PolicySpec::new(kind), &mut rng).unwrap();
                assert!([0, 7, 14, 21].iter().all(|i| idx.contains(i)));
            }
        }
    }

    #[test]
    fn restrict_competition_uses_five() {
        let pool = random_pool(13, 22);
        let m = sample_market(
            &pool,
            &PolicySpec::new(PolicyKind::RestrictCompetition),
            1.0,
            &mut seeded(14),
        )
        .unwrap();
        assert_eq!(m.profiles.len(), 5);
        assert_eq!(m.outside_utility, Some(1.0));
    }

    #[test]
    fn markets_never_repeat_borrowers() {
        let pool = random_pool(15, 22);
        let mut rng = seeded(16);
        for kind in PolicyKind::ALL {
            for _ in 0..500 {
                let m = sample_market(&pool, &PolicySpec::new(kind), 1.0, &mut rng).unwrap();
                assert!(Market::new(m.profiles.clone(), m.outside_utility).is_ok());
            }
        }
    }

    #[test]
    fn small_pool_is_a_config_error() {
        let pool = random_pool(17, 6);
        let err = sample_market(&pool, &PolicySpec::new(PolicyKind::Baseline), 1.0, &mut seeded(1));
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(PolicySpec::new(PolicyKind::Baseline).validate(6).is_err());
    }

    #[test]
    fn every_member_reachable_when_inclusion_is_positive() {
        let mut rng = seeded(18);
        let mut tested = 0;
        for seed in 0..60 {
            let pool = random_pool(1000 + seed, 22);
            for kind in PolicyKind::ALL {
                let spec = PolicySpec::new(kind);
                let pool = apply_style_transform(&pool, &spec, &mut rng);
                if inclusion_probabilities(&pool, &spec).iter().any(|&p| p <= 1e-3) {
                    continue;
                }
                tested += 1;
                let mut seen = [false; 22];
                for _ in 0..10_000 {
                    for i in sample_market_indices(&pool, &spec, &mut rng).unwrap() {
                        seen[i] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s), "{kind} left a borrower unseen");
            }
        }
        assert!(tested > 100);
    }

    #[test]
    fn policy_names_parse() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
        }
        assert_eq!(
            "partial-compliance".parse::<PolicyKind>().unwrap(),
            PolicyKind::PartialCompliance
        );
        assert!("lottery".parse::<PolicyKind>().is_err());
    }
}
