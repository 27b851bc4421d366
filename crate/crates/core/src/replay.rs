//! Offline replay over logged routing data.
//!
//! Learning replays reveal only the served arm's score to the policy and
//! update it online, with no budget. Deployment replays freeze the policy,
//! rank arms by greedy reward estimates and pass them through the cost
//! policy. Regret is always measured against the record's best score, which
//! the policy never sees.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::argmax;
use crate::baselines::{Policy, PolicySpec, RoutingPolicy};
use crate::cost_policy::{CostPolicy, CostPolicyConfig, SpendRow};
use crate::data::{ArmId, Dataset};
use crate::error::{Error, Result};
use crate::pretrain::{project, ArmEmbeddings, Projection};

/// Projects and normalizes every record embedding.
pub fn project_dataset(proj: &Projection, ds: &Dataset) -> Result<Vec<DVector<f64>>> {
    if proj.d_e() != ds.d_e {
        return Err(Error::DimensionMismatch {
            expected: proj.d_e(),
            actual: ds.d_e,
        });
    }
    ds.records
        .iter()
        .map(|r| project(proj, &r.embedding))
        .collect()
}

/// How a revealed score is turned into bandit reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Raw,
    /// 1 if the score is at least the threshold, else 0.
    Binarize(f64),
}

impl RewardMode {
    pub fn reward(self, score: f64) -> f64 {
        match self {
            RewardMode::Raw => score,
            RewardMode::Binarize(tau) => f64::from(u8::from(score >= tau)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub cumulative_reward: f64,
    pub cumulative_regret: f64,
    pub regret_curve: Vec<f64>,
    pub reward_by_step: Vec<f64>,
    pub arm_counts: Vec<usize>,
    pub spend_trace: Vec<SpendRow>,
    /// Sum of served scores over the bucket size; unserved queries count 0.
    pub deployment_performance: f64,
    pub budget_used: f64,
    pub steps: usize,
    /// Index of the query that ran out of budget, if any.
    pub terminated_at: Option<usize>,
    /// Posterior std `sqrt(psi^T A^{-1} psi)` of the chosen arm, per step.
    pub exploration_width: Vec<Option<f64>>,
    /// `trace(A^{-1})` of the chosen arm, per step.
    pub covariance_trace: Vec<Option<f64>>,
}

impl ReplayReport {
    fn empty(num_arms: usize, capacity: usize) -> Self {
        Self {
            cumulative_reward: 0.0,
            cumulative_regret: 0.0,
            regret_curve: Vec::with_capacity(capacity),
            reward_by_step: Vec::with_capacity(capacity),
            arm_counts: vec![0; num_arms],
            spend_trace: Vec::new(),
            deployment_performance: 0.0,
            budget_used: 0.0,
            steps: 0,
            terminated_at: None,
            exploration_width: Vec::with_capacity(capacity),
            covariance_trace: Vec::with_capacity(capacity),
        }
    }

    fn record(&mut self, arm: ArmId, score: f64, best: f64, cost: f64) {
        self.cumulative_reward += score;
        self.cumulative_regret += best - score;
        self.regret_curve.push(self.cumulative_regret);
        self.reward_by_step.push(score);
        self.arm_counts[arm.index()] += 1;
        self.budget_used += cost;
        self.steps += 1;
    }

    pub fn terminated(&self) -> bool {
        self.terminated_at.is_some()
    }
}

fn check_inputs<P: RoutingPolicy + ?Sized>(
    policy: &P,
    contexts: &[DVector<f64>],
    ds: &Dataset,
) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if contexts.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            actual: contexts.len(),
        });
    }
    if policy.num_arms() != ds.num_arms() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_arms(),
            actual: policy.num_arms(),
        });
    }
    if let Some(d) = policy.context_dim() {
        if contexts[0].len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: contexts[0].len(),
            });
        }
    }
    Ok(())
}

/// Online learning pass: select, reveal the served score, update.
pub fn run_learning<P: RoutingPolicy + ?Sized>(
    policy: &mut P,
    contexts: &[DVector<f64>],
    ds: &Dataset,
    mode: RewardMode,
) -> Result<ReplayReport> {
    check_inputs(policy, contexts, ds)?;
    let mut rep = ReplayReport::empty(ds.num_arms(), ds.len());
    for (rec, psi) in ds.records.iter().zip(contexts) {
        let sel = policy.select(psi)?;
        let score = rec.scores[sel.arm.index()];
        policy.update(sel.arm, psi, mode.reward(score))?;
        rep.record(sel.arm, score, rec.best_score(), rec.costs[sel.arm.index()]);
        rep.exploration_width.push(sel.width);
        rep.covariance_trace.push(sel.cov_trace);
    }
    rep.deployment_performance = rep.cumulative_reward / ds.len() as f64;
    Ok(rep)
}

/// Frozen greedy serving. Without a cost config every query goes to the
/// argmax of the reward estimates. With one, the cost policy picks, and an
/// insufficient budget ends the run with `terminated_at` set.
pub fn run_deployment<P: RoutingPolicy + ?Sized>(
    policy: &mut P,
    contexts: &[DVector<f64>],
    ds: &Dataset,
    cost_cfg: Option<&CostPolicyConfig>,
) -> Result<ReplayReport> {
    check_inputs(policy, contexts, ds)?;
    let mut rep = ReplayReport::empty(ds.num_arms(), ds.len());
    let mut cost_policy = cost_cfg.map(|c| CostPolicy::new(*c)).transpose()?;
    for (t, (rec, psi)) in ds.records.iter().zip(contexts).enumerate() {
        let ests = policy.reward_estimates(psi)?;
        let arm = match cost_policy.as_mut() {
            None => argmax(&ests),
            Some(cp) => match cp.route(&ests, &rec.costs) {
                Ok((choice, row)) => {
                    rep.spend_trace.push(row);
                    choice.arm
                }
                Err(Error::InsufficientBudget { .. }) => {
                    rep.terminated_at = Some(t);
                    break;
                }
                Err(e) => return Err(e),
            },
        };
        let score = rec.scores[arm.index()];
        rep.record(arm, score, rec.best_score(), rec.costs[arm.index()]);
    }
    rep.deployment_performance = rep.cumulative_reward / ds.len() as f64;
    Ok(rep)
}

// ── Tuning ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub spec: PolicySpec,
    /// `(parameter, cumulative reward)` per grid point, ascending parameter.
    pub scores: Vec<(f64, f64)>,
}

/// Everything needed to instantiate a policy for a dataset.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub num_arms: usize,
    pub d_m: usize,
    pub embeddings: Option<&'a ArmEmbeddings>,
    pub seed: u64,
}

impl PolicyContext<'_> {
    pub fn build(&self, spec: &PolicySpec) -> Result<Policy> {
        spec.build(self.num_arms, self.d_m, self.embeddings, self.seed)
    }
}

/// Grid search over the spec's tunable parameter on the tuning bucket,
/// maximizing cumulative learning reward. Ties go to the smaller value.
/// Specs without a parameter come back unchanged.
pub fn tune_hyperparams(
    spec: &PolicySpec,
    grid: &[f64],
    ctx: PolicyContext<'_>,
    contexts: &[DVector<f64>],
    tuning: &Dataset,
    mode: RewardMode,
) -> Result<TuneResult> {
    if spec.param().is_none() {
        return Ok(TuneResult {
            spec: spec.clone(),
            scores: Vec::new(),
        });
    }
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let scores: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&v| {
            let mut policy = ctx.build(&spec.with_param(v))?;
            let rep = run_learning(&mut policy, contexts, tuning, mode)?;
            Ok((v, rep.cumulative_reward))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 {
            best = i;
        }
    }
    Ok(TuneResult {
        spec: spec.with_param(scores[best].0),
        scores,
    })
}

// ── Learning-size curve ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub learning_records: usize,
    pub performance: f64,
    pub terminated: bool,
}

/// Trains a fresh policy on the first `round(f * |learning|)` records for
/// each fraction and evaluates it on the deployment bucket.
#[allow(clippy::too_many_arguments)]
pub fn learning_size_curve(
    spec: &PolicySpec,
    ctx: PolicyContext<'_>,
    learn_ctx: &[DVector<f64>],
    learning: &Dataset,
    deploy_ctx: &[DVector<f64>],
    deployment: &Dataset,
    fractions: &[f64],
    cost_cfg: Option<&CostPolicyConfig>,
    mode: RewardMode,
) -> Result<Vec<CurvePoint>> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!(
            "learning fraction {f} outside (0, 1]"
        )));
    }
    fractions
        .par_iter()
        .map(|&f| {
            let n = ((f * learning.len() as f64).round() as usize).clamp(1, learning.len());
            let mut policy = ctx.build(spec)?;
            run_learning(&mut policy, &learn_ctx[..n], &learning.prefix(n), mode)?;
            let rep = run_deployment(&mut policy, deploy_ctx, deployment, cost_cfg)?;
            Ok(CurvePoint {
                fraction: f,
                learning_records: n,
                performance: rep.deployment_performance,
                terminated: rep.terminated(),
            })
        })
        .collect()
}

// ── Distribution shift ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean_reward: f64,
    /// Mean posterior std of the chosen arm.
    pub mean_width: Option<f64>,
    pub mean_cov_trace: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub window: usize,
    pub boundary: usize,
    /// Last `window` steps of stream A.
    pub before: WindowStats,
    /// First `window` steps of stream B.
    pub during: WindowStats,
    /// Last `window` steps of stream B.
    pub after: WindowStats,
    pub report: ReplayReport,
}

fn mean_opt(xs: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.iter().copied().collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn window_stats(rep: &ReplayReport, range: std::ops::Range<usize>) -> WindowStats {
    let rewards = &rep.reward_by_step[range.clone()];
    WindowStats {
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        mean_width: mean_opt(&rep.exploration_width[range.clone()]),
        mean_cov_trace: mean_opt(&rep.covariance_trace[range]),
    }
}

/// Learns on stream A then stream B without reset and compares reward and
/// exploration width around the boundary.
pub fn distribution_shift_replay<P: RoutingPolicy + ?Sized>(
    policy: &mut P,
    (ctx_a, stream_a): (&[DVector<f64>], &Dataset),
    (ctx_b, stream_b): (&[DVector<f64>], &Dataset),
    window: usize,
    mode: RewardMode,
) -> Result<ShiftReport> {
    if stream_a.d_e != stream_b.d_e || stream_a.arms != stream_b.arms {
        return Err(Error::Config(
            "shift streams must share the arm pool and embedding size".into(),
        ));
    }
    if window == 0 || window > stream_a.len() || window > stream_b.len() {
        return Err(Error::Config(format!(
            "window {window} must be in 1..={}",
            stream_a.len().min(stream_b.len())
        )));
    }
    let mut records = stream_a.records.clone();
    records.extend(stream_b.records.iter().cloned());
    let joined = stream_a.with_records(records);
    let contexts: Vec<DVector<f64>> = ctx_a.iter().chain(ctx_b).cloned().collect();
    let rep = run_learning(policy, &contexts, &joined, mode)?;
    let n_a = stream_a.len();
    let n = joined.len();
    Ok(ShiftReport {
        window,
        boundary: n_a,
        before: window_stats(&rep, n_a - window..n_a),
        during: window_stats(&rep, n_a..n_a + window),
        after: window_stats(&rep, n - window..n),
        report: rep,
    })
}
