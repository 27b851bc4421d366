//! Online multi-choice knapsack budget policy for deployment.
//!
//! The horizon of `Q` queries is cut into `N = ceil(Q / S)` bins, each funded
//! with `B / N`; whatever a bin leaves unspent carries over to the next. Within
//! a bin, an arm is eligible for a query when
//!
//! ```text
//!   cost <= reward_est / ((UB * e / LB)^z * (LB / e))
//! ```
//!
//! where `z` is the fraction of the bin budget already used. The best
//! eligible arm by reward estimate is served. If nothing is eligible, arms
//! costing at most `B_left / Q_left` are considered instead, and if that set
//! is also empty the run stops with [`Error::InsufficientBudget`].
//!
//! The policy only sees reward estimates and costs; it does not care which
//! learner produced the estimates.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::bandit::argmax;
use crate::data::{ArmId, ArmInfo, RoutingRecord};
use crate::error::{Error, Result};

/// Float slack allowed on utilization and budget comparisons.
pub const EPS_Z: f64 = 1e-9;

pub const DEFAULT_BIN_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPolicyConfig {
    /// Total budget `B`.
    pub budget: f64,
    /// Query horizon `Q`.
    pub horizon: usize,
    pub bin_size: usize,
    /// Upper bound on the reward-to-cost ratio.
    pub ub: f64,
    /// Lower bound on the reward-to-cost ratio.
    pub lb: f64,
    /// Drop threshold-eligible arms that cost more than the remaining budget,
    /// so total spend never exceeds `B`. Off runs the bare threshold rule,
    /// which can overspend.
    #[serde(default = "default_true")]
    pub hard_budget: bool,
}

fn default_true() -> bool {
    true
}

impl CostPolicyConfig {
    pub fn new(budget: f64, horizon: usize, bin_size: usize, ub: f64, lb: f64) -> Self {
        Self {
            budget,
            horizon,
            bin_size,
            ub,
            lb,
            hard_budget: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::Config(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        if self.horizon == 0 || self.bin_size == 0 {
            return Err(Error::Config(
                "horizon and bin size must be positive".into(),
            ));
        }
        if !(self.lb > 0.0) {
            return Err(Error::Config(format!(
                "LB must be positive, got {}",
                self.lb
            )));
        }
        if !(self.ub > self.lb && self.ub.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < LB < UB, got LB={} UB={}",
                self.lb, self.ub
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.horizon.div_ceil(self.bin_size)
    }

    pub fn bin_budget(&self) -> f64 {
        self.budget / self.num_bins() as f64
    }

    /// Number of queries in bin `bin` (0-based).
    pub fn bin_len(&self, bin: usize) -> usize {
        let start = bin * self.bin_size;
        self.bin_size.min(self.horizon.saturating_sub(start))
    }
}

/// Budget flow of one bin. `allocated + inherited - spent - passed_on == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinLedger {
    pub allocated: f64,
    pub inherited: f64,
    pub spent: f64,
    pub passed_on: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPolicyState {
    /// Utilization of the current bin, clamped to `[0, 1]` for thresholds.
    pub z: f64,
    /// Unclamped `sum(cost) / B_bin` for the current bin.
    pub z_raw: f64,
    pub b_left: f64,
    pub bin_index: usize,
    pub queries_left_in_bin: usize,
    pub spend_total: f64,
    /// Queries routed so far over the whole horizon.
    pub queries_routed: usize,
    pub ledger: Vec<BinLedger>,
}

impl CostPolicyState {
    /// State at the first query: bin 0 funded, `z = 0`.
    pub fn new(cfg: &CostPolicyConfig) -> Result<Self> {
        cfg.validate()?;
        let b_bin = cfg.bin_budget();
        Ok(Self {
            z: 0.0,
            z_raw: 0.0,
            b_left: b_bin,
            bin_index: 0,
            queries_left_in_bin: cfg.bin_len(0),
            spend_total: 0.0,
            queries_routed: 0,
            ledger: vec![BinLedger {
                allocated: b_bin,
                inherited: 0.0,
                spent: 0.0,
                passed_on: b_bin,
            }],
        })
    }
}

// ── Threshold and eligibility ───────────────────────────────────────────

/// Largest admissible cost for an arm with reward estimate `reward_est` at
/// utilization `z`.
pub fn eligibility_threshold(reward_est: f64, z: f64, ub: f64, lb: f64) -> Result<f64> {
    if !(lb > 0.0) {
        return Err(Error::Config(format!("LB must be positive, got {lb}")));
    }
    Ok(reward_est / ((ub * E / lb).powf(z) * (lb / E)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Eligible {
    /// Arms passing the utilization threshold.
    Threshold(Vec<ArmId>),
    /// Arms within the per-query share `B_left / Q_left`.
    Fallback(Vec<ArmId>),
}

impl Eligible {
    pub fn arms(&self) -> &[ArmId] {
        match self {
            Eligible::Threshold(a) | Eligible::Fallback(a) => a,
        }
    }
}

fn check_lengths(reward_ests: &[f64], costs: &[f64]) -> Result<()> {
    if reward_ests.len() != costs.len() || costs.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: reward_ests.len(),
            actual: costs.len(),
        });
    }
    Ok(())
}

pub fn filter_eligible(
    reward_ests: &[f64],
    costs: &[f64],
    state: &CostPolicyState,
    cfg: &CostPolicyConfig,
) -> Result<Eligible> {
    check_lengths(reward_ests, costs)?;
    if state.queries_left_in_bin == 0 {
        return Err(Error::CostPolicy(
            "current bin is exhausted; advance to the next bin".into(),
        ));
    }
    let z = state.z.clamp(0.0, 1.0);
    let mut primary = Vec::new();
    for (l, (&r, &c)) in reward_ests.iter().zip(costs).enumerate() {
        let th = eligibility_threshold(r, z, cfg.ub, cfg.lb)?;
        if c <= th && (!cfg.hard_budget || c <= state.b_left) {
            primary.push(ArmId(l));
        }
    }
    if !primary.is_empty() {
        return Ok(Eligible::Threshold(primary));
    }
    let share = state.b_left / state.queries_left_in_bin as f64;
    let fallback: Vec<ArmId> = costs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c <= share)
        .map(|(l, _)| ArmId(l))
        .collect();
    if fallback.is_empty() {
        return Err(Error::InsufficientBudget {
            query_index: state.queries_routed,
        });
    }
    Ok(Eligible::Fallback(fallback))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub arm: ArmId,
    pub cost: f64,
    pub via_fallback: bool,
}

/// Serves the best eligible arm and charges its cost to the current bin.
pub fn choose(
    reward_ests: &[f64],
    costs: &[f64],
    state: &mut CostPolicyState,
    cfg: &CostPolicyConfig,
) -> Result<Choice> {
    let eligible = filter_eligible(reward_ests, costs, state, cfg)?;
    let arms = eligible.arms();
    let ests: Vec<f64> = arms.iter().map(|a| reward_ests[a.index()]).collect();
    let arm = arms[argmax(&ests).index()];
    let cost = costs[arm.index()];

    state.b_left -= cost;
    state.z_raw += cost / cfg.bin_budget();
    state.z = state.z_raw.clamp(0.0, 1.0);
    state.spend_total += cost;
    state.queries_left_in_bin -= 1;
    state.queries_routed += 1;
    if let Some(entry) = state.ledger.last_mut() {
        entry.spent += cost;
        entry.passed_on = state.b_left;
    }
    Ok(Choice {
        arm,
        cost,
        via_fallback: matches!(eligible, Eligible::Fallback(_)),
    })
}

/// Moves to the next bin: adds `B_bin` to the carried-over budget and resets
/// utilization.
pub fn advance_bin(state: &mut CostPolicyState, cfg: &CostPolicyConfig) -> Result<()> {
    if state.queries_left_in_bin != 0 {
        return Err(Error::CostPolicy(format!(
            "bin {} still has {} queries",
            state.bin_index, state.queries_left_in_bin
        )));
    }
    if state.bin_index + 1 >= cfg.num_bins() {
        return Err(Error::CostPolicy("advancing past the last bin".into()));
    }
    let b_bin = cfg.bin_budget();
    state.bin_index += 1;
    state.ledger.push(BinLedger {
        allocated: b_bin,
        inherited: state.b_left,
        spent: 0.0,
        passed_on: state.b_left + b_bin,
    });
    state.b_left += b_bin;
    state.z = 0.0;
    state.z_raw = 0.0;
    state.queries_left_in_bin = cfg.bin_len(state.bin_index);
    Ok(())
}

/// One row of the spend trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendRow {
    pub t: usize,
    pub bin: usize,
    pub chosen_arm: usize,
    pub cost: f64,
    #[serde(rename = "B_left")]
    pub b_left: f64,
    pub z: f64,
}

/// Config and state together, advancing bins automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPolicy {
    pub cfg: CostPolicyConfig,
    pub state: CostPolicyState,
}

impl CostPolicy {
    pub fn new(cfg: CostPolicyConfig) -> Result<Self> {
        Ok(Self {
            state: CostPolicyState::new(&cfg)?,
            cfg,
        })
    }

    pub fn route(&mut self, reward_ests: &[f64], costs: &[f64]) -> Result<(Choice, SpendRow)> {
        if self.state.queries_routed >= self.cfg.horizon {
            return Err(Error::CostPolicy("query horizon exhausted".into()));
        }
        if self.state.queries_left_in_bin == 0 {
            advance_bin(&mut self.state, &self.cfg)?;
        }
        let t = self.state.queries_routed;
        let choice = choose(reward_ests, costs, &mut self.state, &self.cfg)?;
        let row = SpendRow {
            t,
            bin: self.state.bin_index,
            chosen_arm: choice.arm.index(),
            cost: choice.cost,
            b_left: self.state.b_left,
            z: self.state.z,
        };
        Ok((choice, row))
    }
}

// ── Bounds and token costs ──────────────────────────────────────────────

/// Linear-interpolation percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Widening applied to the percentile bounds.
pub const BOUND_WIDENING: f64 = 1.5;

/// `UB = 1.5 * p99`, `LB = p1 / 1.5` of `reward_est / cost` over every
/// (record, arm) pair with positive cost and positive estimate.
pub fn estimate_bounds<F>(records: &[RoutingRecord], mut reward_fn: F) -> Result<(f64, f64)>
where
    F: FnMut(usize, &RoutingRecord) -> Result<Vec<f64>>,
{
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ratios = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let ests = reward_fn(i, rec)?;
        check_lengths(&ests, &rec.costs)?;
        for (&r, &c) in ests.iter().zip(&rec.costs) {
            if c > 0.0 && r > 0.0 {
                ratios.push(r / c);
            }
        }
    }
    bounds_from_ratios(ratios)
}

pub fn bounds_from_ratios(mut ratios: Vec<f64>) -> Result<(f64, f64)> {
    ratios.retain(|r| r.is_finite() && *r > 0.0);
    if ratios.is_empty() {
        return Err(Error::Config(
            "no positive reward-to-cost ratios to estimate UB/LB from".into(),
        ));
    }
    ratios.sort_by(f64::total_cmp);
    let ub = percentile(&ratios, 99.0) * BOUND_WIDENING;
    let lb = percentile(&ratios, 1.0) / BOUND_WIDENING;
    Ok((ub, lb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmTokenStats {
    pub input_price: f64,
    pub output_price: f64,
    pub mean_output_tokens: f64,
}

/// Per-arm prices and mean response length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCostStats {
    pub arms: Vec<Option<ArmTokenStats>>,
}

impl TokenCostStats {
    /// Reads prices and mean output tokens from the arm manifest; arms missing
    /// any of the three fields have no stats.
    pub fn from_arms(arms: &[ArmInfo]) -> Self {
        Self {
            arms: arms
                .iter()
                .map(
                    |a| match (a.input_price, a.output_price, a.mean_output_tokens) {
                        (Some(i), Some(o), Some(m)) => Some(ArmTokenStats {
                            input_price: i,
                            output_price: o,
                            mean_output_tokens: m,
                        }),
                        _ => None,
                    },
                )
                .collect(),
        }
    }

    /// Mean output tokens per arm from tuning responses.
    pub fn from_tuning(prices: &[(f64, f64)], output_tokens: &[Vec<f64>]) -> Result<Self> {
        if prices.len() != output_tokens.len() {
            return Err(Error::DimensionMismatch {
                expected: prices.len(),
                actual: output_tokens.len(),
            });
        }
        Ok(Self {
            arms: prices
                .iter()
                .zip(output_tokens)
                .map(|(&(i, o), toks)| {
                    (!toks.is_empty()).then(|| ArmTokenStats {
                        input_price: i,
                        output_price: o,
                        mean_output_tokens: toks.iter().sum::<f64>() / toks.len() as f64,
                    })
                })
                .collect(),
        })
    }
}

/// `input_price * query_tokens + output_price * mean_output_tokens`.
pub fn estimate_query_cost(query_tokens: u64, arm: ArmId, stats: &TokenCostStats) -> Result<f64> {
    let s = stats
        .arms
        .get(arm.index())
        .copied()
        .flatten()
        .ok_or_else(|| Error::Config(format!("no token cost stats for arm {arm}")))?;
    Ok(s.input_price * query_tokens as f64 + s.output_price * s.mean_output_tokens)
}
