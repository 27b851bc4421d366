//! Run configuration: a JSON file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use bandit_router::bandit::LambdaRule;
use bandit_router::baselines::PolicySpec;
use bandit_router::experiment::{PipelineConfig, TABLE_BUDGETS};
use bandit_router::oful::SuiteConfig;
use bandit_router::report::SeriesKind;
use bandit_router::synthetic::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Routing dataset (JSONL or CSV).
    pub data: Option<PathBuf>,
    /// Arm manifest; defaults to the dataset's sidecar `<stem>.manifest.json`.
    pub manifest: Option<PathBuf>,
    pub preferences: Option<PathBuf>,
    /// Pretrained model; when absent the pipeline trains one from
    /// `preferences`.
    pub model: Option<PathBuf>,
    /// Learned router state for `replay-deploy`.
    pub checkpoint: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub policy: PolicySpec,
    pub policies: Vec<PolicySpec>,
    pub budgets: Vec<f64>,
    /// Single deployment budget; `None` serves unconstrained.
    pub budget: Option<f64>,
    pub shift: ShiftConfig,
    pub regret: SuiteConfig,
    /// Scenario used by `synth`, and by `shift` when no streams are given.
    pub scenario: ScenarioConfig,
    pub synth: SynthSizes,
    /// `ReplayReport` JSON files aggregated by `report`.
    pub reports: Vec<PathBuf>,
    pub series: SeriesKind,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub stream_a: Option<PathBuf>,
    pub stream_b: Option<PathBuf>,
    pub n_a: usize,
    pub n_b: usize,
    pub window: usize,
    pub alpha: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            stream_a: None,
            stream_b: None,
            n_a: 2000,
            n_b: 5000,
            window: 1000,
            alpha: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSizes {
    pub records: usize,
    pub preferences: usize,
}

impl Default for SynthSizes {
    fn default() -> Self {
        Self {
            records: 12_000,
            preferences: 2000,
        }
    }
}

fn pilot() -> PolicySpec {
    PolicySpec::Pilot {
        alpha: 1.0,
        lambda_rule: LambdaRule::InverseAccuracy,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            manifest: None,
            preferences: None,
            model: None,
            checkpoint: None,
            pipeline: PipelineConfig::default(),
            policy: pilot(),
            policies: vec![
                pilot(),
                PolicySpec::Linucb { alpha: 1.0 },
                PolicySpec::EpochGreedy { window: 50 },
                PolicySpec::Random,
            ],
            budgets: TABLE_BUDGETS.to_vec(),
            budget: None,
            shift: ShiftConfig::default(),
            regret: SuiteConfig::default(),
            scenario: ScenarioConfig::four_cluster(0),
            synth: SynthSizes::default(),
            reports: Vec::new(),
            series: SeriesKind::Regret,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::from_io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    /// Every path the config names must exist.
    pub fn check_paths(&self) -> Result<(), Failure> {
        let paths = [
            &self.data,
            &self.manifest,
            &self.preferences,
            &self.model,
            &self.checkpoint,
            &self.shift.stream_a,
            &self.shift.stream_b,
        ];
        for p in paths.into_iter().flatten().chain(&self.reports) {
            if !p.exists() {
                return Err(Failure::missing(p));
            }
        }
        Ok(())
    }

    pub fn check_ranges(&self) -> Result<(), Failure> {
        if let Some(b) = self
            .budgets
            .iter()
            .chain(&self.budget)
            .find(|b| !(**b > 0.0))
        {
            return Err(Failure::config(format!(
                "budgets must be positive, got {b}"
            )));
        }
        let p = &self.pipeline;
        if p.tuning_n == 0 || p.learn_ratio == 0 || p.deploy_ratio == 0 || p.bin_size == 0 {
            return Err(Failure::config(
                "tuning_n, ratios and bin_size must be positive",
            ));
        }
        if p.alpha_grid.iter().any(|a| !(*a >= 0.0)) {
            return Err(Failure::config("alpha grid values must be non-negative"));
        }
        if self.shift.window == 0 || self.shift.window > self.shift.n_a.min(self.shift.n_b) {
            return Err(Failure::config("shift window must be in 1..=min(n_a, n_b)"));
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, Failure> {
        field
            .as_deref()
            .ok_or_else(|| Failure::config(format!("`{name}` is required for this subcommand")))
    }
}
