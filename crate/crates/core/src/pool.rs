//! Borrower pools and the decile-conditional calibration tables they are
//! drawn from.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DECILES: usize = 10;
pub const DEFAULT_POOL_SIZE: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BorrowerId(pub u32);

impl fmt::Display for BorrowerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One borrowing campaign: its fixed effect, type flag and style flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorrowerProfile {
    pub id: BorrowerId,
    pub eta: f64,
    pub male: bool,
    pub smile: bool,
    pub bodyshot: bool,
}

impl BorrowerProfile {
    /// Smiling and not a body shot.
    pub fn is_style_compliant(&self) -> bool {
        self.smile && !self.bodyshot
    }
}

/// The set of profile fixed effects pools are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffectSet {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl FixedEffectSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("fixed-effect set is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("fixed effect #{i} is not finite")));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { values, sorted })
    }

    /// `n` equally spaced values from `lo` to `hi` inclusive.
    pub fn evenly_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("fixed-effect set is empty"));
        }
        let values = if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rank-based decile (1..=10) of `eta` within this set.
    ///
    /// The rank is the number of set members not above `eta`; tied members
    /// take the lowest rank among them. Values below the minimum fall in
    /// decile 1, values above the maximum in decile 10.
    pub fn decile_of(&self, eta: f64) -> usize {
        let n = self.sorted.len();
        let at_or_below = self.sorted.partition_point(|&v| v <= eta);
        let below = self.sorted.partition_point(|&v| v < eta);
        let rank = at_or_below.min(below + 1).max(1);
        ((DECILES * rank).div_ceil(n)).clamp(1, DECILES)
    }
}

/// Free-function form of [`FixedEffectSet::decile_of`].
pub fn decile_of(eta: f64, fe_set: &FixedEffectSet) -> usize {
    fe_set.decile_of(eta)
}

/// Decile-conditional feature frequencies.
///
/// Rows are deciles 1..=10; the inner index of the style tables is
/// `male as usize` (0 = female, 1 = male).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub male_by_decile: [f64; DECILES],
    pub smile_by_decile_gender: [[f64; 2]; DECILES],
    pub bodyshot_by_decile_gender: [[f64; 2]; DECILES],
}

impl CalibrationTable {
    pub fn new(
        male_by_decile: [f64; DECILES],
        smile_by_decile_gender: [[f64; 2]; DECILES],
        bodyshot_by_decile_gender: [[f64; 2]; DECILES],
    ) -> Result<Self> {
        let table = Self {
            male_by_decile,
            smile_by_decile_gender,
            bodyshot_by_decile_gender,
        };
        table.validate()?;
        Ok(table)
    }

    /// Same rates in every decile.
    pub fn flat(
        male: f64,
        smile_female: f64,
        smile_male: f64,
        bodyshot_female: f64,
        bodyshot_male: f64,
    ) -> Result<Self> {
        Self::new(
            [male; DECILES],
            [[smile_female, smile_male]; DECILES],
            [[bodyshot_female, bodyshot_male]; DECILES],
        )
    }

    /// Flat table reproducing the platform's stylised gender and style
    /// rates: 19.8% male; 77% / 33% of women / men smile; 22% / 26% of
    /// women / men use a body shot.
    pub fn stylized() -> Self {
        Self::flat(0.198, 0.77, 0.33, 0.22, 0.26).expect("constant rates are valid probabilities")
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, d: usize, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "calibration {name} at decile {} = {p} is not a probability",
                    d + 1
                )))
            }
        };
        for d in 0..DECILES {
            check("male", d, self.male_by_decile[d])?;
            for g in 0..2 {
                check("smile", d, self.smile_by_decile_gender[d][g])?;
                check("bodyshot", d, self.bodyshot_by_decile_gender[d][g])?;
            }
        }
        Ok(())
    }

    pub fn male_rate(&self, decile: usize) -> f64 {
        self.male_by_decile[decile - 1]
    }

    pub fn smile_rate(&self, decile: usize, male: bool) -> f64 {
        self.smile_by_decile_gender[decile - 1][male as usize]
    }

    pub fn bodyshot_rate(&self, decile: usize, male: bool) -> f64 {
        self.bodyshot_by_decile_gender[decile - 1][male as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorrowerPool {
    pub profiles: Vec<BorrowerProfile>,
}

impl BorrowerPool {
    pub fn new(profiles: Vec<BorrowerProfile>) -> Result<Self> {
        let mut ids: Vec<_> = profiles.iter().map(|p| p.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::data("duplicate borrower id in pool"));
        }
        if profiles.iter().any(|p| !p.eta.is_finite()) {
            return Err(Error::data("borrower fixed effect is not finite"));
        }
        Ok(Self { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn male_count(&self) -> usize {
        self.profiles.iter().filter(|p| p.male).count()
    }
}

fn bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Draws a pool of `pool_size` borrowers.
///
/// Fixed effects are drawn uniformly with replacement from `fe_set`; gender
/// follows the decile rate and the style flags follow the (decile, gender)
/// cells. Draw order is all fixed effects, then genders, then body shots,
/// then smiles.
pub fn draw_pool<R: Rng + ?Sized>(
    fe_set: &FixedEffectSet,
    calib: &CalibrationTable,
    pool_size: usize,
    rng: &mut R,
) -> Result<BorrowerPool> {
    if pool_size == 0 {
        return Err(Error::config("pool size must be at least 1"));
    }
    let n_fe = fe_set.len();
    let etas: Vec<f64> = (0..pool_size)
        .map(|_| fe_set.values[rng.random_range(0..n_fe)])
        .collect();
    let deciles: Vec<usize> = etas.iter().map(|&e| fe_set.decile_of(e)).collect();
    let males: Vec<bool> = deciles.iter().map(|&d| bernoulli(rng, calib.male_rate(d))).collect();
    let bodyshots: Vec<bool> = deciles
        .iter()
        .zip(&males)
        .map(|(&d, &m)| bernoulli(rng, calib.bodyshot_rate(d, m)))
        .collect();
    let smiles: Vec<bool> = deciles
        .iter()
        .zip(&males)
        .map(|(&d, &m)| bernoulli(rng, calib.smile_rate(d, m)))
        .collect();

    let profiles = (0..pool_size)
        .map(|i| BorrowerProfile {
            id: BorrowerId(i as u32),
            eta: etas[i],
            male: males[i],
            smile: smiles[i],
            bodyshot: bodyshots[i],
        })
        .collect();
    Ok(BorrowerPool { profiles })
}

/// One observed campaign.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CampaignRecord {
    pub cash_per_day: f64,
    pub days_to_raise: f64,
    pub default: bool,
    pub loan_amount: f64,
    pub male: bool,
    pub smile: bool,
    pub bodyshot: bool,
    /// Any further columns, kept verbatim.
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StyleFeature {
    Male,
    Smile,
    Bodyshot,
}

/// How far an empty cell had to back off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backoff {
    /// Filled with the decile rate pooled over genders.
    DecilePooled,
    /// The decile itself was empty; filled with the overall rate.
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBackoff {
    pub feature: StyleFeature,
    pub decile: usize,
    /// `None` for the gender-share column.
    pub male: Option<bool>,
    pub backoff: Backoff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub table: CalibrationTable,
    pub backoffs: Vec<CellBackoff>,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    n: usize,
    hits: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.n += 1;
        self.hits += hit as usize;
    }

    fn merge(self, other: Tally) -> Tally {
        Tally {
            n: self.n + other.n,
            hits: self.hits + other.hits,
        }
    }

    fn rate(self) -> Option<f64> {
        (self.n > 0).then(|| self.hits as f64 / self.n as f64)
    }
}

/// Builds a calibration table from campaign records and their fixed-effect
/// estimates; deciles are taken over the estimates themselves.
pub fn build_calibration(records: &[CampaignRecord], fe_estimates: &[f64]) -> Result<Calibration> {
    if records.is_empty() {
        return Err(Error::data("no campaign records to calibrate on"));
    }
    if records.len() != fe_estimates.len() {
        return Err(Error::data(format!(
            "{} records but {} fixed-effect estimates",
            records.len(),
            fe_estimates.len()
        )));
    }
    let fe_set = FixedEffectSet::new(fe_estimates.to_vec()).map_err(|e| Error::data(e.to_string()))?;

    let mut male = [Tally::default(); DECILES];
    let mut smile = [[Tally::default(); 2]; DECILES];
    let mut body = [[Tally::default(); 2]; DECILES];
    for (rec, &fe) in records.iter().zip(fe_estimates) {
        let d = fe_set.decile_of(fe) - 1;
        let g = rec.male as usize;
        male[d].add(rec.male);
        smile[d][g].add(rec.smile);
        body[d][g].add(rec.bodyshot);
    }

    let overall = |cells: &[[Tally; 2]; DECILES]| {
        cells
            .iter()
            .fold(Tally::default(), |acc, row| acc.merge(row[0]).merge(row[1]))
            .rate()
    };
    let overall_male = male.iter().fold(Tally::default(), |a, &t| a.merge(t)).rate();
    let (Some(overall_male), Some(overall_smile), Some(overall_body)) = (overall_male, overall(&smile), overall(&body))
    else {
        return Err(Error::data("every calibration cell is empty"));
    };

    let mut backoffs = Vec::new();
    let mut male_by_decile = [0.0; DECILES];
    for d in 0..DECILES {
        male_by_decile[d] = male[d].rate().unwrap_or_else(|| {
            backoffs.push(CellBackoff {
                feature: StyleFeature::Male,
                decile: d + 1,
                male: None,
                backoff: Backoff::Overall,
            });
            overall_male
        });
    }

    let mut fill = |feature: StyleFeature, cells: &[[Tally; 2]; DECILES], fallback: f64| {
        let mut out = [[0.0; 2]; DECILES];
        for d in 0..DECILES {
            let pooled = cells[d][0].merge(cells[d][1]).rate();
            for g in 0..2 {
                out[d][g] = match (cells[d][g].rate(), pooled) {
                    (Some(r), _) => r,
                    (None, Some(p)) => {
                        backoffs.push(CellBackoff {
                            feature,
                            decile: d + 1,
                            male: Some(g == 1),
                            backoff: Backoff::DecilePooled,
                        });
                        p
                    }
                    (None, None) => {
                        backoffs.push(CellBackoff {
                            feature,
                            decile: d + 1,
                            male: Some(g == 1),
                            backoff: Backoff::Overall,
                        });
                        fallback
                    }
                };
            }
        }
        out
    };
    let smile_by_decile_gender = fill(StyleFeature::Smile, &smile, overall_smile);
    let bodyshot_by_decile_gender = fill(StyleFeature::Bodyshot, &body, overall_body);

    Ok(Calibration {
        table: CalibrationTable {
            male_by_decile,
            smile_by_decile_gender,
            bodyshot_by_decile_gender,
        },
        backoffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    /// Sort-and-count oracle for the rank-based decile.
    fn decile_oracle(eta: f64, values: &[f64]) -> usize {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut rank = 0;
        for (i, x) in v.iter().enumerate() {
            if *x <= eta {
                rank = i + 1;
                if *x == eta {
                    break;
                }
            }
        }
        let rank = rank.max(1);
        let n = v.len();
        (((10 * rank) as f64 / n as f64).ceil() as usize).clamp(1, 10)
    }

    fn twenty() -> FixedEffectSet {
        FixedEffectSet::new((1..=20).map(|i| i as f64 * 0.05).collect()).unwrap()
    }

    #[test]
    fn decile_extremes() {
        let fe = twenty();
        assert_eq!(fe.decile_of(0.05), 1);
        assert_eq!(fe.decile_of(1.0), 10);
        assert_eq!(fe.decile_of(-3.0), 1);
        assert_eq!(fe.decile_of(7.0), 10);
    }

    #[test]
    fn decile_between_members() {
        let fe = twenty();
        assert_eq!(fe.decile_of(0.31), 3);
        assert_eq!(decile_oracle(0.31, fe.values()), 3);
    }

    #[test]
    fn decile_boundaries_go_to_the_lower_decile() {
        let fe = twenty();
        // rank 2 of 20 is the top of decile 1, rank 3 opens decile 2
        assert_eq!(fe.decile_of(fe.values()[1]), 1);
        assert_eq!(fe.decile_of(fe.values()[2]), 2);
    }

    #[test]
    fn decile_ties_take_lowest_rank() {
        let fe = FixedEffectSet::new(vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(fe.decile_of(0.0), 1);
        assert_eq!(decile_oracle(0.0, fe.values()), 1);
    }

    #[test]
    fn decile_matches_oracle_on_random_sets() {
        let mut rng = seeded(11);
        for _ in 0..200 {
            let n = rng.random_range(10..60);
            let vals: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).round() / 10.0).collect();
            let fe = FixedEffectSet::new(vals.clone()).unwrap();
            for _ in 0..20 {
                let eta = (rng.random::<f64>() * 24.0 - 2.0).round() / 10.0;
                assert_eq!(fe.decile_of(eta), decile_oracle(eta, &vals), "eta {eta} in {vals:?}");
            }
        }
    }

    #[test]
    fn empty_fe_set_is_a_config_error() {
        assert!(matches!(FixedEffectSet::new(vec![]), Err(Error::Config(_))));
        assert!(matches!(FixedEffectSet::new(vec![f64::NAN]), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_male_rate_makes_everyone_male() {
        let calib = CalibrationTable::flat(1.0, 0.5, 0.5, 0.5, 0.5).unwrap();
        let pool = draw_pool(&twenty(), &calib, 500, &mut seeded(3)).unwrap();
        assert!(pool.profiles.iter().all(|p| p.male));
    }

    #[test]
    fn pool_is_reproducible_and_ids_unique() {
        let calib = CalibrationTable::stylized();
        let a = draw_pool(&twenty(), &calib, 22, &mut seeded(9)).unwrap();
        let b = draw_pool(&twenty(), &calib, 22, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 22);
        assert!(BorrowerPool::new(a.profiles.clone()).is_ok());
        let fe = twenty();
        assert!(a.profiles.iter().all(|p| fe.values().contains(&p.eta)));
    }

    #[test]
    fn zero_pool_size_rejected() {
        assert!(draw_pool(&twenty(), &CalibrationTable::stylized(), 0, &mut seeded(1)).is_err());
    }

    fn record(male: bool, smile: bool, bodyshot: bool) -> CampaignRecord {
        CampaignRecord {
            male,
            smile,
            bodyshot,
            ..Default::default()
        }
    }

    #[test]
    fn all_smiling_records_give_unit_smile_cells() {
        let records: Vec<_> = (0..40).map(|i| record(i % 3 == 0, true, i % 2 == 0)).collect();
        let fe: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let cal = build_calibration(&records, &fe).unwrap();
        for d in 1..=10 {
            assert_eq!(cal.table.smile_rate(d, false), 1.0);
            assert_eq!(cal.table.smile_rate(d, true), 1.0);
        }
    }

    #[test]
    fn hand_counted_four_record_table() {
        // Two fixed-effect levels tied in pairs: level 0.0 -> decile 3,
        // level 1.0 -> decile 8. Each level has one man and one woman.
        let records = vec![
            record(true, true, false),
            record(false, false, true),
            record(true, true, true),
            record(false, true, false),
        ];
        let fe = vec![0.0, 0.0, 1.0, 1.0];
        let cal = build_calibration(&records, &fe).unwrap();
        let t = &cal.table;
        assert_eq!(t.male_rate(3), 0.5);
        assert_eq!(t.male_rate(8), 0.5);
        assert_eq!(t.smile_rate(3, true), 1.0);
        assert_eq!(t.smile_rate(8, true), 1.0);
        assert_eq!(t.smile_rate(3, false), 0.0);
        assert_eq!(t.smile_rate(8, false), 1.0);
        assert_eq!(t.bodyshot_rate(3, false), 1.0);
        assert_eq!(t.bodyshot_rate(8, true), 1.0);
        // The other eight deciles are empty and fall back to overall rates.
        assert_eq!(t.male_rate(1), 0.5);
        assert_eq!(t.smile_rate(1, true), 0.75);
        assert_eq!(t.bodyshot_rate(5, false), 0.5);
        assert!(cal.backoffs.iter().all(|b| b.decile != 3 && b.decile != 8));
        assert_eq!(cal.backoffs.len(), 8 + 2 * 2 * 8);
    }

    #[test]
    fn empty_gender_cell_backs_off_to_decile_pool() {
        // Only women; male cells back off to the pooled decile rate.
        let records: Vec<_> = (0..20).map(|i| record(false, i < 10, false)).collect();
        let fe: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let cal = build_calibration(&records, &fe).unwrap();
        assert_eq!(cal.table.smile_rate(1, true), 1.0);
        assert_eq!(cal.table.smile_rate(10, true), 0.0);
        assert!(cal
            .backoffs
            .iter()
            .all(|b| b.male == Some(true) && b.backoff == Backoff::DecilePooled));
        assert_eq!(cal.backoffs.len(), 20);
    }

    #[test]
    fn calibration_input_errors() {
        assert!(matches!(build_calibration(&[], &[]), Err(Error::Data(_))));
        assert!(matches!(
            build_calibration(&[record(true, true, true)], &[0.0, 1.0]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(CalibrationTable::flat(1.2, 0.5, 0.5, 0.5, 0.5).is_err());
        assert!(CalibrationTable::flat(0.2, 0.5, -0.1, 0.5, 0.5).is_err());
    }
}
