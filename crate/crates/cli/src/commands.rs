use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lendsim::biasstudy::{run_bias_study, BiasStudySpec};
use lendsim::econtools::{
    aipw_ate, binarize, gelbach_decompose, AipwOptions, CovarianceKind, CovariateGroup, Dataset, OutcomeModel,
    PropensityModel,
};
use lendsim::estimate::{
    average_marginal_effect, fit_conditional_logit, least_chosen_profiles, DesignSpec, FitOptions, FEATURES,
};
use lendsim::metrics::{gini, lorenz, synthesize_counterfactual_outcomes, winsorize_upper};
use lendsim::policy::PolicyKind;
use lendsim::pool::{build_calibration, Backoff, StyleFeature};
use lendsim::rng::{derive_seed, seeded};
use lendsim::runner::{check_orderings, policy_sweep, run_scenario, run_sweep, Scenario, ScenarioResult, Summary};
use serde::Deserialize;

use crate::config::{self, Overrides, Preset, ScenarioConfig};
use crate::error::{CliError, CliResult};
use crate::fixtures;
use crate::io::{
    calibration_table, fe_set_table, numeric_columns, read_campaigns, read_choices, read_subject_covariates, CsvFile,
};
use crate::manifest::RunManifest;
use crate::output::{Cell, Format, Table};

#[derive(Debug, Parser)]
#[command(
    name = "lendsim",
    version,
    about = "Micro-lending marketplace simulator and estimation toolkit"
)]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for output tables and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the conditional logit to paired choices.
    Calibrate(CalibrateArgs),
    /// Calibration table and inequality statistics from campaign records.
    PoolStats(PoolStatsArgs),
    /// Run one policy scenario.
    Simulate(SimulateArgs),
    /// Run a scenario under several policies with matched random streams.
    Sweep(SweepArgs),
    /// Covariate-group decomposition of a focal coefficient.
    Decompose(DecomposeArgs),
    /// Cross-fitted doubly robust average treatment effect.
    Ate(AteArgs),
    /// Attenuation from a misclassified treatment indicator.
    BiasStudy(BiasStudyArgs),
    /// Write the synthetic fixture files.
    Fixtures,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Long-form paired-choice CSV.
    pub choices: PathBuf,
    /// Split each feature into high- and low-fixed-effect profile groups.
    #[arg(long)]
    pub interact_fe_groups: bool,
    /// Size of the low group, chosen as the least chosen profiles.
    #[arg(long, default_value_t = 2)]
    pub low_fe_count: usize,
    /// Explicit low-group profiles (overrides --low-fe-count).
    #[arg(long, value_delimiter = ',')]
    pub low_fe_profiles: Vec<String>,
    /// Drop every pair that shows one of these profiles.
    #[arg(long, value_delimiter = ',')]
    pub restrict_profiles: Vec<String>,
    /// CSV with `subject_id` and numeric covariates to interact with features.
    #[arg(long)]
    pub subject_covariates: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct PoolStatsArgs {
    pub campaigns: PathBuf,
    /// Column holding each campaign's fixed-effect estimate.
    #[arg(long, default_value = "fe")]
    pub fe_column: String,
    /// Column grouping campaigns by week; used when present.
    #[arg(long, default_value = "week")]
    pub week_column: String,
    /// Cap outcomes at this upper quantile before computing inequality.
    #[arg(long)]
    pub winsorize: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML, or JSON by extension); defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub n_sims: Option<usize>,
    #[arg(long)]
    pub n_lenders: Option<usize>,
    /// Campaign CSV whose outcome column seeds a log-normal counterfactual
    /// histogram per non-Baseline policy.
    #[arg(long)]
    pub synthesize_histogram: Option<PathBuf>,
    #[arg(long, default_value = "cash_per_day")]
    pub histogram_column: String,
    #[arg(long, default_value_t = 10_000)]
    pub histogram_draws: usize,
    /// Upper quantile at which the histogram baseline is capped.
    #[arg(long)]
    pub winsorize: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Policies to run; all seven by default.
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<String>,
    /// Evaluate the expected policy orderings; exit with code 6 if any fails.
    #[arg(long)]
    pub check_ordering: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    pub data: PathBuf,
    /// TOML/JSON with `outcome`, `focal`, `[groups]` and optional
    /// `focal_threshold` and `covariance`.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutcomeModelArg {
    Ridge,
    Mean,
    Zero,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PropensityModelArg {
    Logistic,
    Share,
    Constant,
}

#[derive(Debug, Args)]
pub struct AteArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub treatment: String,
    /// Covariate columns; every other column by default.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Treat the treatment column as a probability and binarize above this.
    #[arg(long)]
    pub treatment_threshold: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.01)]
    pub clip: f64,
    #[arg(long, value_enum, default_value_t = OutcomeModelArg::Ridge)]
    pub outcome_model: OutcomeModelArg,
    #[arg(long, value_enum, default_value_t = PropensityModelArg::Logistic)]
    pub propensity_model: PropensityModelArg,
    /// Probability used by `--propensity-model constant`.
    #[arg(long, default_value_t = 0.5)]
    pub propensity_constant: f64,
    /// L2 penalty of the ridge and logistic learners.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub write_influence: bool,
}

#[derive(Debug, Args)]
pub struct BiasStudyArgs {
    #[arg(long, default_value_t = 0.34)]
    pub fn_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub fp_rate: f64,
    #[arg(long, default_value_t = 100_000)]
    pub n_units: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_sims: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mean_untreated: f64,
    #[arg(long, default_value_t = 1.3)]
    pub mean_treated: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sd: f64,
    #[arg(long, default_value_t = 0.5)]
    pub treated_share: f64,
    /// Also write every simulation's coefficient.
    #[arg(long)]
    pub per_sim: bool,
}

/// What a command produced: tables to write and files it read.
pub struct Outcome {
    pub tables: Vec<Table>,
    pub raw_files: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    pub config_path: Option<PathBuf>,
    /// Failure to report after the outputs are written.
    pub deferred_error: Option<CliError>,
}

impl Outcome {
    fn new(tables: Vec<Table>) -> Self {
        Self {
            tables,
            raw_files: Vec::new(),
            inputs: Vec::new(),
            config_path: None,
            deferred_error: None,
        }
    }

    fn with_inputs(mut self, inputs: impl IntoIterator<Item = PathBuf>) -> Self {
        self.inputs.extend(inputs);
        self
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::PoolStats(_) => "pool-stats",
            Command::Simulate(_) => "simulate",
            Command::Sweep(_) => "sweep",
            Command::Decompose(_) => "decompose",
            Command::Ate(_) => "ate",
            Command::BiasStudy(_) => "bias-study",
            Command::Fixtures => "fixtures",
        }
    }
}

/// Runs the parsed command and writes its outputs and manifest.
pub fn run(cli: &Cli, args: Vec<String>) -> CliResult<Vec<PathBuf>> {
    let outcome = match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
            pool.install(|| execute(cli))?
        }
        None => execute(cli)?,
    };
    fs::create_dir_all(&cli.out_dir).map_err(|e| CliError::io(&cli.out_dir, e))?;
    let mut manifest = RunManifest::new(cli.command.name(), args, cli.seed.unwrap_or(0));
    manifest.config_path = outcome.config_path.as_ref().map(|p| p.display().to_string());
    for input in &outcome.inputs {
        manifest.add_input(input)?;
    }
    // fixture files are inputs for other commands and stay CSV
    let format = if matches!(cli.command, Command::Fixtures) {
        Format::Csv
    } else {
        cli.format
    };
    let mut written = Vec::new();
    for t in &outcome.tables {
        written.push(t.write(&cli.out_dir, format)?);
    }
    for (name, body) in &outcome.raw_files {
        let path = cli.out_dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    manifest.outputs = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    written.push(manifest.write(&cli.out_dir)?);
    match outcome.deferred_error {
        Some(e) => Err(e),
        None => Ok(written),
    }
}

fn execute(cli: &Cli) -> CliResult<Outcome> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::PoolStats(a) => pool_stats(a),
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Sweep(a) => sweep(a, cli.seed),
        Command::Decompose(a) => decompose(a),
        Command::Ate(a) => ate(a, seed),
        Command::BiasStudy(a) => bias_study(a, seed),
        Command::Fixtures => {
            let (tables, configs) = fixtures::all(seed)?;
            let mut out = Outcome::new(tables);
            out.raw_files = configs
                .into_iter()
                .map(|(n, b)| (n.to_string(), b.to_string()))
                .collect();
            Ok(out)
        }
    }
}

fn calibrate(a: &CalibrateArgs) -> CliResult<Outcome> {
    let records = read_choices(&a.choices)?;
    let mut inputs = vec![a.choices.clone()];
    let mut spec = DesignSpec {
        exclude_profiles: a.restrict_profiles.iter().cloned().collect(),
        ..Default::default()
    };
    if a.interact_fe_groups {
        let low = if a.low_fe_profiles.is_empty() {
            least_chosen_profiles(&records, a.low_fe_count)
        } else {
            a.low_fe_profiles.iter().cloned().collect()
        };
        spec.low_fe_profiles = Some(low);
    }
    if let Some(path) = &a.subject_covariates {
        spec.subject_covariates = Some(read_subject_covariates(path)?);
        inputs.push(path.clone());
    }
    let opts = FitOptions {
        max_iter: a.max_iter,
        tol: a.tol,
    };
    let fit = fit_conditional_logit(&records, &spec, &opts)?;

    let mut coefs = Table::new("coefficients", &["term", "estimate", "se", "z"]);
    for t in &fit.terms {
        coefs.push(vec![
            t.name.as_str().into(),
            t.estimate.into(),
            t.se.into(),
            (t.estimate / t.se).into(),
        ]);
    }
    let mut fes = Table::new("fixed_effects", &["profile_id", "estimate", "se"]);
    for p in &fit.fixed_effects {
        fes.push(vec![p.profile_id.as_str().into(), p.estimate.into(), p.se.into()]);
    }
    let fe_values: Vec<f64> = fit.fixed_effects.iter().map(|p| p.estimate).collect();
    let mut summary = Table::new(
        "fit_summary",
        &[
            "n_records",
            "log_likelihood",
            "converged",
            "iterations",
            "reference_profile",
            "low_fe_profiles",
            "excluded_profiles",
        ],
    );
    let join = |s: Option<&std::collections::BTreeSet<String>>| {
        s.map_or(String::new(), |s| s.iter().cloned().collect::<Vec<_>>().join(";"))
    };
    summary.push(vec![
        fit.n_records.into(),
        fit.log_likelihood.into(),
        fit.converged.into(),
        fit.iterations.into(),
        fit.reference_profile().unwrap_or("").into(),
        join(spec.low_fe_profiles.as_ref()).into(),
        join(Some(&spec.exclude_profiles)).into(),
    ]);
    let mut tables = vec![coefs, fes, fe_set_table(&fe_values), summary];
    if spec.low_fe_profiles.is_none() && spec.subject_covariates.is_none() {
        let mut ame = Table::new(
            "marginal_effects",
            &[
                "feature",
                "absolute",
                "relative",
                "symmetric_absolute",
                "symmetric_relative",
                "odds_change",
            ],
        );
        for f in FEATURES {
            let m = average_marginal_effect(&fit, &records, f)?;
            ame.push(vec![
                f.into(),
                m.absolute.into(),
                m.relative.into(),
                m.symmetric_absolute.into(),
                m.symmetric_relative.into(),
                m.odds_change.into(),
            ]);
        }
        tables.push(ame);
    }
    let mut out = Outcome::new(tables).with_inputs(inputs);
    if !fit.converged {
        out.deferred_error = Some(lendsim::Error::numeric("conditional logit did not converge").into());
    }
    Ok(out)
}

fn pool_stats(a: &PoolStatsArgs) -> CliResult<Outcome> {
    let campaigns = read_campaigns(&a.campaigns, Some(&a.fe_column))?;
    let fe = campaigns.fe.as_deref().expect("fe column requested");
    let calib = build_calibration(&campaigns.records, fe)?;

    let mut backoffs = Table::new("calibration_backoffs", &["feature", "decile", "male", "backoff"]);
    for b in &calib.backoffs {
        let feature = match b.feature {
            StyleFeature::Male => "male",
            StyleFeature::Smile => "smile",
            StyleFeature::Bodyshot => "bodyshot",
        };
        let backoff = match b.backoff {
            Backoff::DecilePooled => "decile_pooled",
            Backoff::Overall => "overall",
        };
        backoffs.push(vec![
            feature.into(),
            b.decile.into(),
            b.male.map_or(Cell::Missing, Cell::Bool),
            backoff.into(),
        ]);
    }

    let prepare = |v: Vec<f64>| match a.winsorize {
        Some(q) => winsorize_upper(&v, q),
        None => v,
    };
    let outcomes = [
        (
            "cash_per_day",
            prepare(campaigns.records.iter().map(|r| r.cash_per_day).collect()),
        ),
        (
            "days_to_raise",
            prepare(campaigns.records.iter().map(|r| r.days_to_raise).collect()),
        ),
    ];
    let mut inequality = Table::new("inequality", &["variable", "n", "mean", "gini"]);
    let mut lorenz_t = Table::new("lorenz", &["variable", "population_share", "outcome_share"]);
    for (name, values) in &outcomes {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        inequality.push(vec![
            (*name).into(),
            values.len().into(),
            mean.into(),
            gini(values)?.into(),
        ]);
        for (x, y) in lorenz(values)?.points {
            lorenz_t.push(vec![(*name).into(), x.into(), y.into()]);
        }
    }
    let mut tables = vec![calibration_table(&calib.table), backoffs, inequality, lorenz_t];

    let has_week = campaigns
        .records
        .first()
        .is_some_and(|r| r.extra.contains_key(&a.week_column));
    if has_week {
        let mut weeks: BTreeMap<WeekKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in campaigns.records.iter().enumerate() {
            weeks.entry(WeekKey::new(&r.extra[&a.week_column])).or_default().push(i);
        }
        let mut weekly = Table::new("weekly_gini", &["week", "variable", "n", "gini"]);
        for (week, idx) in &weeks {
            for (name, values) in &outcomes {
                let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
                weekly.push(vec![
                    week.label.as_str().into(),
                    (*name).into(),
                    v.len().into(),
                    gini(&v).ok().into(),
                ]);
            }
        }
        tables.push(weekly);
    }
    Ok(Outcome::new(tables).with_inputs([a.campaigns.clone()]))
}

/// Orders week labels numerically when they parse as numbers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct WeekKey {
    numeric: Option<i64>,
    label: String,
}

impl WeekKey {
    fn new(label: &str) -> Self {
        Self {
            numeric: label.parse().ok(),
            label: label.to_string(),
        }
    }
}

fn load_scenario(
    a: &ScenarioArgs,
    seed: Option<u64>,
    policy: Option<PolicyKind>,
) -> CliResult<(Scenario, Vec<PathBuf>)> {
    let overrides = Overrides {
        seed,
        preset: a.preset,
        policy,
        n_sims: a.n_sims,
        n_lenders: a.n_lenders,
    };
    let mut inputs = Vec::new();
    let (cfg, base) = match &a.config {
        Some(path) => {
            inputs.push(path.clone());
            let cfg: ScenarioConfig = config::load(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            for file in cfg_files(&cfg) {
                inputs.push(base.join(file));
            }
            (cfg, base)
        }
        None => (ScenarioConfig::default(), PathBuf::from(".")),
    };
    Ok((cfg.resolve(&base, &overrides)?, inputs))
}

fn cfg_files(cfg: &ScenarioConfig) -> Vec<PathBuf> {
    let mut files = Vec::new();
    if let config::FeSetSource::File { file } = &cfg.fe_set {
        files.push(file.clone());
    }
    if let config::CalibSource::File { file } = &cfg.calib {
        files.push(file.clone());
    }
    files
}

fn parse_policy(name: &str) -> CliResult<PolicyKind> {
    name.parse()
        .map_err(|_| CliError::Config(format!("unknown policy `{name}`")))
}

fn simulate(a: &SimulateArgs, seed: Option<u64>) -> CliResult<Outcome> {
    let policy = a.policy.as_deref().map(parse_policy).transpose()?;
    let (scenario, inputs) = load_scenario(&a.scenario, seed, policy)?;
    let mut results = vec![run_scenario(&scenario)?];
    let mut tables = result_tables(&results);
    if let Some(path) = &a.scenario.synthesize_histogram {
        if scenario.policy.kind != PolicyKind::Baseline {
            results.insert(0, run_scenario(&scenario.with_policy(PolicyKind::Baseline))?);
        }
        tables.extend(histogram_tables(&a.scenario, path, &results, scenario.master_seed)?);
    }
    let mut out = Outcome::new(tables).with_inputs(inputs);
    out.config_path = a.scenario.config.clone();
    if let Some(p) = &a.scenario.synthesize_histogram {
        out.inputs.push(p.clone());
    }
    Ok(out)
}

fn sweep(a: &SweepArgs, seed: Option<u64>) -> CliResult<Outcome> {
    let (scenario, inputs) = load_scenario(&a.scenario, seed, None)?;
    let kinds: Vec<PolicyKind> = if a.policies.is_empty() {
        PolicyKind::ALL.to_vec()
    } else {
        a.policies.iter().map(|p| parse_policy(p)).collect::<CliResult<_>>()?
    };
    let results = run_sweep(&policy_sweep(&scenario, &kinds))?;
    let mut tables = result_tables(&results);
    if let Some(path) = &a.scenario.synthesize_histogram {
        let mut with_base = results.clone();
        if !kinds.contains(&PolicyKind::Baseline) {
            with_base.insert(0, run_scenario(&scenario.with_policy(PolicyKind::Baseline))?);
        }
        tables.extend(histogram_tables(&a.scenario, path, &with_base, scenario.master_seed)?);
    }
    let mut deferred_error = None;
    if a.check_ordering {
        let checks = check_orderings(&results);
        let mut t = Table::new(
            "orderings",
            &[
                "check",
                "greater_policy",
                "lesser_policy",
                "greater_value",
                "lesser_value",
                "passed",
            ],
        );
        for c in &checks {
            t.push(vec![
                c.label().into(),
                c.greater.name().into(),
                c.lesser.name().into(),
                c.greater_value.into(),
                c.lesser_value.into(),
                c.passed.into(),
            ]);
        }
        tables.push(t);
        let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.label()).collect();
        if !failed.is_empty() {
            deferred_error = Some(CliError::OrderingFailed(failed.join("; ")));
        }
    }
    let mut out = Outcome::new(tables).with_inputs(inputs);
    out.config_path = a.scenario.config.clone();
    if let Some(p) = &a.scenario.synthesize_histogram {
        out.inputs.push(p.clone());
    }
    out.deferred_error = deferred_error;
    Ok(out)
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "policy",
    "sim_id",
    "gini",
    "bottom_tercile_share",
    "efficiency",
    "male_ratio",
    "raw_male_share",
];

fn result_tables(results: &[ScenarioResult]) -> Vec<Table> {
    let mut metrics = Table::new("metrics", &METRICS_COLUMNS);
    let mut aggregate = Table::new(
        "aggregate",
        &[
            "policy",
            "n_sims",
            "gini_mean",
            "gini_sd",
            "bottom_tercile_share_mean",
            "bottom_tercile_share_sd",
            "efficiency_mean",
            "efficiency_sd",
            "male_ratio_mean",
            "male_ratio_sd",
            "male_ratio_n",
            "raw_male_share_mean",
            "raw_male_share_sd",
            "sd_defined",
        ],
    );
    for r in results {
        for (i, m) in r.reports.iter().enumerate() {
            metrics.push(vec![
                r.policy.name().into(),
                i.into(),
                m.gini.into(),
                m.bottom_tercile_share.into(),
                m.efficiency.into(),
                m.male_ratio.into(),
                m.raw_male_share.into(),
            ]);
        }
        let g = &r.aggregate;
        let opt = |s: Option<Summary>| (Cell::from(s.map(|s| s.mean)), Cell::from(s.map(|s| s.sd)));
        let (mr_mean, mr_sd) = opt(g.male_ratio);
        let (rs_mean, rs_sd) = opt(g.raw_male_share);
        aggregate.push(vec![
            r.policy.name().into(),
            r.reports.len().into(),
            g.gini.mean.into(),
            g.gini.sd.into(),
            g.bottom_tercile_share.mean.into(),
            g.bottom_tercile_share.sd.into(),
            g.efficiency.mean.into(),
            g.efficiency.sd.into(),
            mr_mean,
            mr_sd,
            g.male_ratio.map_or(0, |s| s.n).into(),
            rs_mean,
            rs_sd,
            g.gini.sd_defined.into(),
        ]);
    }
    vec![metrics, aggregate]
}

/// Counterfactual outcome draws for every non-Baseline policy: Gini and
/// efficiency move by the same percentage as in the simulation.
fn histogram_tables(a: &ScenarioArgs, path: &Path, results: &[ScenarioResult], seed: u64) -> CliResult<Vec<Table>> {
    let f = CsvFile::read(path)?;
    let (cols, _) = numeric_columns(&f, &[a.histogram_column.as_str()])?;
    let mut baseline = cols.into_iter().next().expect("one column");
    if let Some(q) = a.winsorize {
        baseline = winsorize_upper(&baseline, q);
    }
    let base = results
        .iter()
        .find(|r| r.policy == PolicyKind::Baseline)
        .ok_or_else(|| CliError::Config("histogram synthesis needs a Baseline run".into()))?;
    let mut params = Table::new(
        "histogram_params",
        &[
            "policy",
            "gini_delta",
            "efficiency_delta",
            "target_gini",
            "mean",
            "synthesized",
            "note",
        ],
    );
    let mut draws = Table::new("histogram", &["policy", "draw_id", "value"]);
    for (i, v) in baseline.iter().enumerate() {
        draws.push(vec!["Baseline".into(), i.into(), (*v).into()]);
    }
    let base_gini = gini(&baseline)?;
    for r in results.iter().filter(|r| r.policy != PolicyKind::Baseline) {
        let gd = r.aggregate.gini.mean / base.aggregate.gini.mean - 1.0;
        let ed = r.aggregate.efficiency.mean / base.aggregate.efficiency.mean - 1.0;
        let mut rng = seeded(derive_seed(seed, 0x4849_5354 + r.policy as u64));
        let mean = baseline.iter().sum::<f64>() / baseline.len() as f64;
        let mut row: Vec<Cell> = vec![
            r.policy.name().into(),
            gd.into(),
            ed.into(),
            ((1.0 + gd) * base_gini).into(),
            mean.into(),
        ];
        // a policy whose Gini change pushes the target outside (0, 1) has no
        // log-normal counterpart; it is reported and skipped
        match synthesize_counterfactual_outcomes(&baseline, gd, ed, a.histogram_draws, &mut rng) {
            Ok(values) => {
                row.extend([true.into(), "".into()]);
                for (i, v) in values.into_iter().enumerate() {
                    draws.push(vec![r.policy.name().into(), i.into(), v.into()]);
                }
            }
            Err(lendsim::Error::Numeric(msg)) => row.extend([false.into(), msg.into()]),
            Err(e) => return Err(e.into()),
        }
        params.push(row);
    }
    Ok(vec![params, draws])
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeConfig {
    outcome: String,
    focal: String,
    focal_threshold: Option<f64>,
    #[serde(default)]
    covariance: CovarianceKind,
    groups: BTreeMap<String, Vec<String>>,
}

fn decompose(a: &DecomposeArgs) -> CliResult<Outcome> {
    let cfg: DecomposeConfig = config::load(&a.config)?;
    if cfg.groups.is_empty() {
        return Err(CliError::Config(format!(
            "{}: groups: at least one group is required",
            a.config.display()
        )));
    }
    let f = CsvFile::read(&a.data)?;
    let mut names = vec![cfg.outcome.as_str(), cfg.focal.as_str()];
    for cols in cfg.groups.values() {
        names.extend(cols.iter().map(String::as_str));
    }
    let (cols, dropped) = numeric_columns(&f, &names)?;
    let mut cols = cols.into_iter();
    let outcome = cols.next().expect("outcome column");
    let mut focal = cols.next().expect("focal column");
    if let Some(t) = cfg.focal_threshold {
        focal = binarize(&focal, t);
    }
    let groups = cfg
        .groups
        .iter()
        .map(|(name, members)| CovariateGroup {
            name: name.clone(),
            columns: members
                .iter()
                .map(|m| (m.clone(), cols.next().expect("group column")))
                .collect(),
        })
        .collect();
    let n = outcome.len();
    let d = Dataset::new(outcome, focal, groups)?;
    let r = gelbach_decompose(&d, cfg.covariance)?;

    let mut summary = Table::new(
        "decomposition",
        &[
            "coef_base",
            "se_base",
            "coef_full",
            "se_full",
            "total_change",
            "n",
            "dropped_rows",
        ],
    );
    summary.push(vec![
        r.coef_base.into(),
        r.se_base.into(),
        r.coef_full.into(),
        r.se_full.into(),
        r.total_change().into(),
        n.into(),
        dropped.into(),
    ]);
    let mut contrib = Table::new("contributions", &["group", "contribution", "share_of_change"]);
    for (g, c) in &r.contributions {
        contrib.push(vec![g.as_str().into(), (*c).into(), (c / r.total_change()).into()]);
    }
    let mut out = Outcome::new(vec![summary, contrib]).with_inputs([a.data.clone(), a.config.clone()]);
    out.config_path = Some(a.config.clone());
    Ok(out)
}

fn ate(a: &AteArgs, seed: u64) -> CliResult<Outcome> {
    let f = CsvFile::read(&a.data)?;
    let covariates: Vec<String> = if a.covariates.is_empty() {
        f.headers
            .iter()
            .filter(|h| **h != a.outcome && **h != a.treatment)
            .cloned()
            .collect()
    } else {
        a.covariates.clone()
    };
    let mut names = vec![a.outcome.as_str(), a.treatment.as_str()];
    names.extend(covariates.iter().map(String::as_str));
    let (cols, dropped) = numeric_columns(&f, &names)?;
    let mut cols = cols.into_iter();
    let y = cols.next().expect("outcome");
    let mut w = cols.next().expect("treatment");
    if let Some(t) = a.treatment_threshold {
        w = binarize(&w, t);
    }
    let group = CovariateGroup {
        name: "covariates".into(),
        columns: covariates.iter().cloned().zip(cols).collect(),
    };
    let d = Dataset::new(y, w, vec![group])?;
    let opts = AipwOptions {
        outcome: match a.outcome_model {
            OutcomeModelArg::Ridge => OutcomeModel::Ridge { lambda: a.lambda },
            OutcomeModelArg::Mean => OutcomeModel::Mean,
            OutcomeModelArg::Zero => OutcomeModel::Zero,
        },
        propensity: match a.propensity_model {
            PropensityModelArg::Logistic => PropensityModel::Logistic { lambda: a.lambda },
            PropensityModelArg::Share => PropensityModel::Share,
            PropensityModelArg::Constant => PropensityModel::Constant {
                p: a.propensity_constant,
            },
        },
        outcome_columns: None,
        propensity_columns: None,
        folds: a.folds,
        clip: a.clip,
        seed,
    };
    let r = aipw_ate(&d, &opts)?;
    let mut t = Table::new(
        "ate",
        &["ate", "se", "ci_low", "ci_high", "n", "clip_count", "dropped_rows"],
    );
    t.push(vec![
        r.ate.into(),
        r.se.into(),
        (r.ate - 1.96 * r.se).into(),
        (r.ate + 1.96 * r.se).into(),
        r.n().into(),
        r.clip_count.into(),
        dropped.into(),
    ]);
    let mut tables = vec![t];
    if a.write_influence {
        let mut inf = Table::new("influence", &["unit", "influence"]);
        for (i, v) in r.influence.iter().enumerate() {
            inf.push(vec![i.into(), (*v).into()]);
        }
        tables.push(inf);
    }
    Ok(Outcome::new(tables).with_inputs([a.data.clone()]))
}

fn bias_study(a: &BiasStudyArgs, seed: u64) -> CliResult<Outcome> {
    let spec = BiasStudySpec {
        fn_rate: a.fn_rate,
        fp_rate: a.fp_rate,
        n_units: a.n_units,
        n_sims: a.n_sims,
        mean_untreated: a.mean_untreated,
        mean_treated: a.mean_treated,
        sd: a.sd,
        treated_share: a.treated_share,
    };
    let r = run_bias_study(&spec, seed)?;
    let mut t = Table::new(
        "bias_study",
        &[
            "fn_rate",
            "fp_rate",
            "n_units",
            "n_sims",
            "true_effect",
            "mean_coef",
            "se_of_mean",
            "relative_bias",
            "dropped",
        ],
    );
    t.push(vec![
        spec.fn_rate.into(),
        spec.fp_rate.into(),
        spec.n_units.into(),
        spec.n_sims.into(),
        r.true_effect.into(),
        r.mean_coef.into(),
        r.se_of_mean.into(),
        r.relative_bias.into(),
        r.dropped.into(),
    ]);
    let mut tables = vec![t];
    if a.per_sim {
        let mut sims = Table::new("bias_study_sims", &["sim_id", "coef"]);
        for (i, c) in r.coefs.iter().enumerate() {
            sims.push(vec![i.into(), (*c).into()]);
        }
        tables.push(sims);
    }
    Ok(Outcome::new(tables))
}
