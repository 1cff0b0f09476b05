//! Scenario configuration files (TOML or JSON).

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lendsim::choice::PreferenceParams;
use lendsim::policy::{PolicyKind, PolicySpec, DEFAULT_COMPLIANCE_PROB, DEFAULT_MARKET_SIZE, DEFAULT_RESTRICTED_SIZE};
use lendsim::pool::{CalibrationTable, FixedEffectSet, DEFAULT_POOL_SIZE};
use lendsim::runner::{Scenario, DEFAULT_N_LENDERS, DEFAULT_N_SIMS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{read_calibration, read_fe_set};

/// Simulation-count presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 50 simulations of 500 lenders.
    Standard,
    /// 100 simulations of 500 lenders.
    ManySims,
    /// 50 simulations of 1000 lenders.
    ManyLenders,
}

impl Preset {
    pub fn counts(self) -> (usize, usize) {
        match self {
            Preset::Standard => (50, 500),
            Preset::ManySims => (100, 500),
            Preset::ManyLenders => (50, 1000),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: Option<String>,
    pub compliance_prob: Option<f64>,
    pub restricted_size: Option<usize>,
    pub market_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum FeSetSource {
    Values { values: Vec<f64> },
    File { file: PathBuf },
    EvenlySpaced { lo: f64, hi: f64, n: usize },
}

impl Default for FeSetSource {
    /// Twenty evenly spaced values on [0, 0.64].
    fn default() -> Self {
        FeSetSource::EvenlySpaced {
            lo: 0.0,
            hi: 0.64,
            n: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CalibSource {
    File { file: PathBuf },
    Builtin { builtin: String },
    Inline(Box<CalibrationTable>),
}

impl Default for CalibSource {
    fn default() -> Self {
        CalibSource::Builtin {
            builtin: "stylized".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub pool_size: Option<usize>,
    pub n_sims: Option<usize>,
    pub n_lenders: Option<usize>,
    /// Outside-option utility; overrides `prefs.omega`.
    pub omega: Option<f64>,
    pub common_random_numbers: Option<bool>,
    pub pin_benchmark_efficiency: Option<bool>,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub prefs: Option<PreferenceParams>,
    #[serde(default)]
    pub fe_set: FeSetSource,
    #[serde(default)]
    pub calib: CalibSource,
}

/// Parses TOML or JSON by file extension (JSON for `.json`, TOML otherwise).
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub policy: Option<PolicyKind>,
    pub n_sims: Option<usize>,
    pub n_lenders: Option<usize>,
}

impl ScenarioConfig {
    /// Builds a validated scenario. Relative file references resolve
    /// against `base_dir`.
    pub fn resolve(&self, base_dir: &Path, o: &Overrides) -> CliResult<Scenario> {
        let kind = match (o.policy, &self.policy.kind) {
            (Some(k), _) => k,
            (None, Some(name)) => name
                .parse()
                .map_err(|_| CliError::Config(format!("policy.kind: unknown policy `{name}`")))?,
            (None, None) => PolicyKind::Baseline,
        };
        let policy = PolicySpec {
            kind,
            compliance_prob: self.policy.compliance_prob.unwrap_or(DEFAULT_COMPLIANCE_PROB),
            restricted_size: self.policy.restricted_size.unwrap_or(DEFAULT_RESTRICTED_SIZE),
            market_size: self.policy.market_size.unwrap_or(DEFAULT_MARKET_SIZE),
        };
        let fe_set = match &self.fe_set {
            FeSetSource::Values { values } => FixedEffectSet::new(values.clone()),
            FeSetSource::EvenlySpaced { lo, hi, n } => FixedEffectSet::evenly_spaced(*lo, *hi, *n),
            FeSetSource::File { file } => return self.finish(policy, read_fe_set(&base_dir.join(file))?, base_dir, o),
        }
        .map_err(|e| CliError::Config(format!("fe_set: {e}")))?;
        self.finish(policy, fe_set, base_dir, o)
    }

    fn finish(
        &self,
        policy: PolicySpec,
        fe_set: FixedEffectSet,
        base_dir: &Path,
        o: &Overrides,
    ) -> CliResult<Scenario> {
        let calib = match &self.calib {
            CalibSource::File { file } => read_calibration(&base_dir.join(file))?,
            CalibSource::Builtin { builtin } if builtin == "stylized" => CalibrationTable::stylized(),
            CalibSource::Builtin { builtin } => {
                return Err(CliError::Config(format!("calib.builtin: unknown table `{builtin}`")));
            }
            CalibSource::Inline(t) => (**t).clone(),
        };
        let (preset_sims, preset_lenders) = o
            .preset
            .or(self.preset)
            .map_or((DEFAULT_N_SIMS, DEFAULT_N_LENDERS), Preset::counts);
        let explicit_preset = o.preset.is_some();
        let pick = |cli: Option<usize>, file: Option<usize>, preset: usize| {
            // a preset given on the command line beats counts in the file
            cli.or(if explicit_preset { None } else { file }).unwrap_or(preset)
        };
        let mut prefs = self.prefs.unwrap_or_default();
        if let Some(w) = self.omega {
            prefs.omega = w;
        }
        let scenario = Scenario {
            policy,
            pool_size: self.pool_size.unwrap_or(DEFAULT_POOL_SIZE),
            n_sims: pick(o.n_sims, self.n_sims, preset_sims),
            n_lenders: pick(o.n_lenders, self.n_lenders, preset_lenders),
            prefs,
            fe_set,
            calib,
            master_seed: o.seed.or(self.seed).unwrap_or(0),
            common_random_numbers: self.common_random_numbers.unwrap_or(true),
            pin_benchmark_efficiency: self.pin_benchmark_efficiency.unwrap_or(true),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
