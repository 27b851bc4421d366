//! End-to-end pipeline shared by the CLI and the acceptance tests:
//! pretrain, split, tune, learn, estimate cost bounds, sweep budgets.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{PolicySpec, RoutingPolicy};
use crate::cost_policy::{estimate_bounds, CostPolicyConfig, DEFAULT_BIN_SIZE};
use crate::data::{split_buckets, Buckets, Dataset, PreferenceRecord};
use crate::error::{Error, Result};
use crate::pretrain::{
    train_arm_embeddings, train_projection, ArmEmbeddings, PretrainHyperparams, Projection,
};
use crate::replay::{
    project_dataset, run_deployment, run_learning, tune_hyperparams, PolicyContext, ReplayReport,
    RewardMode,
};

pub const DEFAULT_ALPHA_GRID: [f64; 5] = [1.0, 1.5, 2.0, 5.0, 10.0];
pub const DEFAULT_WINDOW_GRID: [f64; 4] = [10.0, 50.0, 100.0, 500.0];
/// Default dollar budget grid for comparison tables.
pub const TABLE_BUDGETS: [f64; 4] = [0.25, 0.5, 1.0, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub d_m: usize,
    pub pretrain: PretrainHyperparams,
    pub tuning_n: usize,
    pub learn_ratio: usize,
    pub deploy_ratio: usize,
    pub alpha_grid: Vec<f64>,
    pub window_grid: Vec<f64>,
    pub bin_size: usize,
    pub hard_budget: bool,
    pub reward_mode: RewardMode,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_m: 8,
            pretrain: PretrainHyperparams::default(),
            tuning_n: 1000,
            learn_ratio: 10,
            deploy_ratio: 1,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            window_grid: DEFAULT_WINDOW_GRID.to_vec(),
            bin_size: DEFAULT_BIN_SIZE,
            hard_budget: true,
            reward_mode: RewardMode::Raw,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn grid_for(&self, spec: &PolicySpec) -> &[f64] {
        match spec {
            PolicySpec::EpochGreedy { .. } => &self.window_grid,
            _ => &self.alpha_grid,
        }
    }
}

/// Pretrained model plus projected buckets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub projection: Projection,
    pub embeddings: Option<ArmEmbeddings>,
    pub buckets: Buckets,
    pub tuning_ctx: Vec<DVector<f64>>,
    pub learning_ctx: Vec<DVector<f64>>,
    pub deployment_ctx: Vec<DVector<f64>>,
}

impl Prepared {
    pub fn policy_context(&self, seed: u64) -> PolicyContext<'_> {
        PolicyContext {
            num_arms: self.buckets.learning.num_arms(),
            d_m: self.projection.d_m(),
            embeddings: self.embeddings.as_ref(),
            seed,
        }
    }
}

/// Trains the projection and arm embeddings on `prefs` (identity projection
/// and no embeddings if there are none), then splits and projects `ds`.
pub fn prepare(ds: &Dataset, prefs: &[PreferenceRecord], cfg: &PipelineConfig) -> Result<Prepared> {
    let (projection, embeddings) = if prefs.is_empty() {
        (Projection::identity(ds.d_e), None)
    } else {
        let hp = PretrainHyperparams {
            seed: cfg.pretrain.seed ^ cfg.seed,
            ..cfg.pretrain
        };
        let proj = train_projection(prefs, &ds.arms, cfg.d_m, &hp)?;
        let emb = train_arm_embeddings(prefs, &proj, ds.num_arms(), &hp)?;
        (proj, Some(emb))
    };
    prepare_with_model(ds, projection, embeddings, cfg)
}

/// Splits and projects `ds` with an already trained model.
pub fn prepare_with_model(
    ds: &Dataset,
    projection: Projection,
    embeddings: Option<ArmEmbeddings>,
    cfg: &PipelineConfig,
) -> Result<Prepared> {
    if projection.d_e() != ds.d_e {
        return Err(Error::DimensionMismatch {
            expected: ds.d_e,
            actual: projection.d_e(),
        });
    }
    let buckets = split_buckets(
        ds,
        cfg.tuning_n,
        cfg.learn_ratio,
        cfg.deploy_ratio,
        cfg.seed,
    )?;
    Ok(Prepared {
        tuning_ctx: project_dataset(&projection, &buckets.tuning)?,
        learning_ctx: project_dataset(&projection, &buckets.learning)?,
        deployment_ctx: project_dataset(&projection, &buckets.deployment)?,
        projection,
        embeddings,
        buckets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: f64,
    pub performance: f64,
    pub budget_used: f64,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub spec: PolicySpec,
    pub tuning_scores: Vec<(f64, f64)>,
    pub learning: ReplayReport,
    pub ub: f64,
    pub lb: f64,
    pub unconstrained_performance: f64,
    pub budget_rows: Vec<BudgetRow>,
}

/// Tunes, learns and sweeps budgets for one policy family.
pub fn run_policy(
    prep: &Prepared,
    spec: &PolicySpec,
    budgets: &[f64],
    cfg: &PipelineConfig,
) -> Result<PolicyOutcome> {
    let ctx = prep.policy_context(cfg.seed);
    let b = &prep.buckets;
    let tuned = tune_hyperparams(
        spec,
        cfg.grid_for(spec),
        ctx,
        &prep.tuning_ctx,
        &b.tuning,
        cfg.reward_mode,
    )?;
    let mut policy = ctx.build(&tuned.spec)?;
    let learning = run_learning(
        &mut policy,
        &prep.learning_ctx,
        &b.learning,
        cfg.reward_mode,
    )?;

    let mut probe = policy.clone();
    let (ub, lb) = estimate_bounds(&b.tuning.records, |i, _| {
        probe.reward_estimates(&prep.tuning_ctx[i])
    })?;
    let unconstrained = run_deployment(
        &mut policy.clone(),
        &prep.deployment_ctx,
        &b.deployment,
        None,
    )?;

    let budget_rows = budgets
        .par_iter()
        .map(|&budget| {
            let mut cost_cfg =
                CostPolicyConfig::new(budget, b.deployment.len(), cfg.bin_size, ub, lb);
            cost_cfg.hard_budget = cfg.hard_budget;
            let rep = run_deployment(
                &mut policy.clone(),
                &prep.deployment_ctx,
                &b.deployment,
                Some(&cost_cfg),
            )?;
            Ok(BudgetRow {
                budget,
                performance: rep.deployment_performance,
                budget_used: rep.budget_used,
                terminated: rep.terminated(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PolicyOutcome {
        spec: tuned.spec,
        tuning_scores: tuned.scores,
        learning,
        ub,
        lb,
        unconstrained_performance: unconstrained.deployment_performance,
        budget_rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub oracle_performance: f64,
    pub oracle_spend: f64,
    pub outcomes: Vec<PolicyOutcome>,
}

/// Runs every policy through the same pretraining and split.
pub fn sweep_budget(
    ds: &Dataset,
    prefs: &[PreferenceRecord],
    specs: &[PolicySpec],
    budgets: &[f64],
    cfg: &PipelineConfig,
) -> Result<SweepResult> {
    if specs.is_empty() {
        return Err(Error::Config("no policies to sweep".into()));
    }
    let prep = prepare(ds, prefs, cfg)?;
    let outcomes = specs
        .iter()
        .map(|s| run_policy(&prep, s, budgets, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        oracle_performance: prep.buckets.deployment.oracle_performance(),
        oracle_spend: prep.buckets.deployment.oracle_spend(),
        outcomes,
    })
}
