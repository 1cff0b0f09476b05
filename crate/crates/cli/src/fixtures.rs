//! Synthetic stand-ins for the experimental and platform data.
//!
//! Every fixture is drawn from its own stream derived from the master seed,
//! so each file can be regenerated independently.

use lendsim::choice::LenderPrefs;
use lendsim::estimate::{simulate_paired_choices, PairedDesign};
use lendsim::pool::{CalibrationTable, FixedEffectSet, DECILES};
use lendsim::rng::{derive_seed, seeded, SimRng};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::error::CliResult;
use crate::io::{calibration_table, choices_table, fe_set_table};
use crate::output::{Cell, Table};

pub const CHOICES_STREAM: u64 = 1;
pub const CAMPAIGNS_STREAM: u64 = 2;
pub const ATE_STREAM: u64 = 3;
pub const DECOMPOSE_STREAM: u64 = 4;

pub const N_CHOICES: usize = 10_000;
pub const N_CAMPAIGNS: usize = 5_000;
pub const N_ATE: usize = 10_000;
pub const N_DECOMPOSE: usize = 5_000;

/// Preference means used to generate the paired-choice fixture.
pub const CHOICE_PREFS: LenderPrefs = LenderPrefs {
    alpha: -0.385,
    beta: 0.298,
    gamma: -0.191,
};

fn rng(seed: u64, stream: u64) -> SimRng {
    seeded(derive_seed(seed, stream))
}

/// The twenty profile fixed effects, evenly spaced on [0, 0.64].
pub fn default_fe_set() -> FixedEffectSet {
    FixedEffectSet::evenly_spaced(0.0, 0.64, 20).expect("non-empty")
}

pub fn choices(seed: u64, n_records: usize) -> CliResult<Table> {
    let design = PairedDesign {
        prefs: CHOICE_PREFS,
        profile_fes: default_fe_set().values().to_vec(),
        n_records,
        pairs_per_subject: 6,
    };
    let records = simulate_paired_choices(&design, &mut rng(seed, CHOICES_STREAM))?;
    Ok(choices_table(&records))
}

/// Male share by decile, falling from 0.278 to 0.118 around a mean of 0.198.
pub fn campaign_male_by_decile() -> [f64; DECILES] {
    std::array::from_fn(|d| 0.198 + 0.08 * (5.5 - (d + 1) as f64) / 4.5)
}

/// Campaigns whose feature marginals follow the platform summary
/// statistics: male 0.198, smile 0.498, body shot 0.406, cash per day with
/// mean 104.587 and sd 136.378, loan amount with mean 800.107 and sd 993.37,
/// default rate 0.05.
pub fn campaigns(seed: u64, n: usize) -> Table {
    let mut r = rng(seed, CAMPAIGNS_STREAM);
    let fe = default_fe_set();
    let male_by_decile = campaign_male_by_decile();
    let lognormal = |mean: f64, sd: f64| {
        let s2 = (1.0 + (sd / mean).powi(2)).ln();
        LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt()).expect("valid log-normal")
    };
    let cash = lognormal(104.587, 136.378);
    let loan = lognormal(800.107, 993.37);
    let mut t = Table::new(
        "campaigns",
        &[
            "cash_per_day",
            "days_to_raise",
            "default",
            "loan_amount",
            "male",
            "smile",
            "bodyshot",
            "fe",
            "week",
        ],
    );
    for i in 0..n {
        let eta = fe.values()[r.random_range(0..fe.len())];
        let male = r.random::<f64>() < male_by_decile[fe.decile_of(eta) - 1];
        let smile = r.random::<f64>() < 0.498;
        let bodyshot = r.random::<f64>() < 0.406;
        let default = r.random::<f64>() < 0.05;
        let loan_amount = (loan.sample(&mut r) / 25.0).ceil() * 25.0;
        let cash_per_day: f64 = cash.sample(&mut r);
        let days = (loan_amount / cash_per_day).ceil().clamp(1.0, 60.0);
        t.push(vec![
            cash_per_day.into(),
            days.into(),
            default.into(),
            loan_amount.into(),
            male.into(),
            smile.into(),
            bodyshot.into(),
            eta.into(),
            Cell::Int((i % 52 + 1) as i64),
        ]);
    }
    t
}

/// `y = 2 w + x1 + 0.5 x2 + e` with `P(w = 1) = sigmoid(0.8 x1 - 0.4 x2)`.
pub fn ate(seed: u64, n: usize) -> Table {
    let mut r = rng(seed, ATE_STREAM);
    let mut t = Table::new("ate", &["y", "w", "x1", "x2"]);
    for _ in 0..n {
        let x1: f64 = r.sample(StandardNormal);
        let x2: f64 = r.sample(StandardNormal);
        let p = 1.0 / (1.0 + (-(0.8 * x1 - 0.4 * x2)).exp());
        let w = r.random::<f64>() < p;
        let e: f64 = r.sample(StandardNormal);
        let y = 2.0 * w as u8 as f64 + x1 + 0.5 * x2 + e;
        t.push(vec![y.into(), w.into(), x1.into(), x2.into()]);
    }
    t
}

/// `z = 2 focal + noise` sits on the path from `focal` to `y = focal + z +
/// 0.5 u + noise`, while `u` is independent of `focal`.
pub fn decompose(seed: u64, n: usize) -> Table {
    let mut r = rng(seed, DECOMPOSE_STREAM);
    let mut t = Table::new("decompose", &["y", "focal", "z", "u"]);
    for _ in 0..n {
        let focal = r.random::<f64>() < 0.5;
        let f = focal as u8 as f64;
        let z = 2.0 * f + r.sample::<f64, _>(StandardNormal);
        let u: f64 = r.sample(StandardNormal);
        let y = f + z + 0.5 * u + r.sample::<f64, _>(StandardNormal);
        t.push(vec![y.into(), focal.into(), z.into(), u.into()]);
    }
    t
}

pub const DECOMPOSE_CONFIG: &str = r#"outcome = "y"
focal = "focal"
covariance = "hc1"

[groups]
mediator = ["z"]
independent = ["u"]
"#;

pub const SCENARIO_CONFIG: &str = r#"preset = "standard"
pool_size = 22
omega = 1.0

[policy]
kind = "Baseline"
compliance_prob = 0.75
restricted_size = 5
market_size = 10

[prefs]
alpha_mean = -0.385
alpha_sd = 0.079
beta_mean = 0.298
beta_sd = 0.074
gamma_mean = -0.191
gamma_sd = 0.079

[fe_set]
file = "fe_set.csv"

[calib]
file = "calibration.csv"
"#;

/// A configuration file: name and contents.
pub type ConfigFile = (&'static str, &'static str);

/// All fixture tables plus the two configuration files.
pub fn all(seed: u64) -> CliResult<(Vec<Table>, Vec<ConfigFile>)> {
    let tables = vec![
        choices(seed, N_CHOICES)?,
        campaigns(seed, N_CAMPAIGNS),
        ate(seed, N_ATE),
        decompose(seed, N_DECOMPOSE),
        calibration_table(&CalibrationTable::stylized()),
        fe_set_table(default_fe_set().values()),
    ];
    let configs = vec![("decompose.toml", DECOMPOSE_CONFIG), ("scenario.toml", SCENARIO_CONFIG)];
    Ok((tables, configs))
}
