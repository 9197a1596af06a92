//! TOML configuration. Every field has a default, so an empty file is a valid
//! config; the defaults are the settings the acceptance suite was tuned on.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mqlab_core::encoding::MicroConfig;
use mqlab_core::instance::{derive_params, DeskOverrides, Params, Profile};
use mqlab_core::optimizer::{AlgorithmSpec, StepRule};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every trial seed is derived from it.
    pub seed: u64,
    pub instance: InstanceConfig,
    pub gen: GenConfig,
    pub run: RunConfig,
    pub game: GameConfig,
    pub verify: VerifyConfig,
    /// The micro encoding run. Its `seed` is replaced by the master seed.
    pub encode: MicroConfig,
    pub frontier: FrontierConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            instance: InstanceConfig::default(),
            gen: GenConfig::default(),
            run: RunConfig::default(),
            game: GameConfig::default(),
            verify: VerifyConfig::default(),
            encode: MicroConfig::default(),
            frontier: FrontierConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// The config exactly as it will be used, with overrides applied.
    pub fn resolved(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.encode.seed = self.seed;
        self
    }

    /// One-line JSON rendering embedded in artifact headers.
    pub fn header_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Desk,
    Asymptotic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub d: usize,
    pub delta: f64,
    pub profile: ProfileKind,
    /// Logarithm base for the asymptotic profile.
    pub log_base: f64,
    /// Desk-profile overrides.
    pub overrides: DeskOverrides,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig { d: 32, delta: 0.5, profile: ProfileKind::Desk, log_base: 2.0, overrides: DeskOverrides::default() }
    }
}

impl InstanceConfig {
    pub fn profile(&self) -> Profile {
        match self.profile {
            ProfileKind::Desk => Profile::DeskScale(self.overrides.clone()),
            ProfileKind::Asymptotic => Profile::Asymptotic { log_base: self.log_base },
        }
    }

    pub fn params(&self) -> Result<Params> {
        self.params_at(self.d)
    }

    pub fn params_at(&self, d: usize) -> Result<Params> {
        Ok(derive_params(d, self.delta, &self.profile())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub file: String,
    /// A JSON export is written next to the binary file up to this dimension.
    pub text_export_max_d: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { file: "instance.mtin".into(), text_export_max_d: 16 }
    }
}

pub fn default_subgradient() -> AlgorithmSpec {
    AlgorithmSpec::Subgradient { rule: StepRule::Decreasing { scale: 0.1 }, averaging: true }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: AlgorithmSpec,
    pub t_budget: usize,
    pub trials: usize,
    /// Run every trial on this instance instead of sampling one per trial.
    pub instance_file: Option<PathBuf>,
    /// Transcripts written for the first this-many trials.
    pub transcripts: usize,
    pub min_ordered_rate: f64,
    pub min_success_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: AlgorithmSpec::Ellipsoid,
            t_budget: 20_000,
            trials: 20,
            instance_file: None,
            transcripts: 1,
            min_ordered_rate: 0.95,
            min_success_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub algorithm: AlgorithmSpec,
    pub t_budget: usize,
    /// Rows Alice may send; defaults to `2·t_budget`.
    pub n_rows: Option<usize>,
    /// 0-based; estimated from calibration runs when absent.
    pub i_star: Option<usize>,
    pub calibration_trials: usize,
    pub trials: usize,
    /// Expected message length per dimension; must equal `S/d` when given.
    pub k_msg: Option<usize>,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            algorithm: AlgorithmSpec::Ellipsoid,
            t_budget: 30_000,
            n_rows: None,
            i_star: None,
            calibration_trials: 20,
            trials: 50,
            k_msg: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub oracle_dims: Vec<usize>,
    pub oracle_points: usize,
    pub oracle_probes: usize,
    pub convexity_checks: usize,
    pub reference_d: usize,
    pub reference_seeds: usize,
    pub reference_min_rate: f64,
    pub ordering_d: usize,
    pub ordering_runs: usize,
    pub ordering_t_budget: usize,
    pub ordering_algorithms: Vec<AlgorithmSpec>,
    pub ordering_min_rate: f64,
    pub gap_d: usize,
    pub gap_runs: usize,
    pub gap_t_budget: usize,
    pub gap_min_rate: f64,
    pub khintchine_d: usize,
    pub khintchine_trials: usize,
    pub khintchine_ts: Vec<f64>,
    pub projection_d: usize,
    pub projection_rank: usize,
    pub projection_trials: usize,
    pub projection_ts: Vec<f64>,
    pub projection_min_constant: f64,
    pub rli_sequences: usize,
    pub rli_d: usize,
    pub rli_len: usize,
    pub rli_gamma: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            oracle_dims: vec![8, 32, 128],
            oracle_points: 1000,
            oracle_probes: 100,
            convexity_checks: 10_000,
            reference_d: 256,
            reference_seeds: 100,
            reference_min_rate: 0.8,
            ordering_d: 64,
            ordering_runs: 200,
            ordering_t_budget: 24_000,
            ordering_algorithms: vec![AlgorithmSpec::Ellipsoid, default_subgradient()],
            ordering_min_rate: 0.95,
            gap_d: 32,
            gap_runs: 100,
            gap_t_budget: 30_000,
            gap_min_rate: 0.5,
            khintchine_d: 16,
            khintchine_trials: 200_000,
            khintchine_ts: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            projection_d: 64,
            projection_rank: 8,
            projection_trials: 20_000,
            projection_ts: vec![0.05, 0.1, 0.15, 0.2],
            projection_min_constant: 0.01,
            rli_sequences: 100,
            rli_d: 16,
            rli_len: 8,
            rli_gamma: 0.3,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("oracle_points", self.oracle_points),
            ("oracle_probes", self.oracle_probes),
            ("convexity_checks", self.convexity_checks),
            ("reference_seeds", self.reference_seeds),
            ("ordering_runs", self.ordering_runs),
            ("gap_runs", self.gap_runs),
            ("khintchine_trials", self.khintchine_trials),
            ("projection_trials", self.projection_trials),
            ("rli_sequences", self.rli_sequences),
        ];
        for (name, n) in counts {
            if n == 0 {
                bail!("verify.{name} must be at least 1");
            }
        }
        if self.oracle_dims.is_empty() || self.ordering_algorithms.is_empty() {
            bail!("verify.oracle_dims and verify.ordering_algorithms must be nonempty");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierConfig {
    pub algorithms: Vec<AlgorithmSpec>,
    pub dims: Vec<usize>,
    pub seeds: usize,
    pub t_budget: usize,
    /// Thresholds on `(F(x_t) − F(x̂))·√d·L`.
    pub gaps: Vec<f64>,
    /// Fraction of seeds on which the ellipsoid must beat subgradient descent
    /// at the smallest threshold.
    pub min_win_rate: f64,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        FrontierConfig {
            algorithms: vec![AlgorithmSpec::Ellipsoid, default_subgradient()],
            dims: vec![64],
            seeds: 50,
            t_budget: 15_000,
            gaps: vec![0.02, 0.002],
            min_win_rate: 0.9,
        }
    }
}
