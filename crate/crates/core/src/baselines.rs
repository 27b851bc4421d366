//! Routing policies behind one select/update interface.
//!
//! The replay harness only ever talks to [`RoutingPolicy`]: it hands over a
//! unit context, receives an arm, and reports back that arm's reward. No
//! policy can see the scores of arms it did not pick.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{argmax, LambdaRule, PilotRouter};
use crate::data::ArmId;
use crate::error::{Error, Result};
use crate::pretrain::ArmEmbeddings;

/// An arm choice plus exploration diagnostics, when the policy has them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub arm: ArmId,
    /// `sqrt(psi^T A^{-1} psi)` of the chosen arm.
    pub width: Option<f64>,
    /// `trace(A^{-1})` of the chosen arm.
    pub cov_trace: Option<f64>,
}

impl Selection {
    fn plain(arm: ArmId) -> Self {
        Self {
            arm,
            width: None,
            cov_trace: None,
        }
    }
}

pub trait RoutingPolicy {
    fn num_arms(&self) -> usize;

    /// Context dimension the policy expects, if it uses contexts at all.
    fn context_dim(&self) -> Option<usize>;

    fn select(&mut self, psi: &DVector<f64>) -> Result<Selection>;

    /// Bandit feedback for the arm that was served.
    fn update(&mut self, arm: ArmId, psi: &DVector<f64>, reward: f64) -> Result<()>;

    /// Greedy (no exploration bonus) reward estimate for every arm; this is
    /// what the deployment cost policy ranks on.
    fn reward_estimates(&mut self, psi: &DVector<f64>) -> Result<Vec<f64>>;
}

fn router_selection(router: &PilotRouter, arm: ArmId, psi: &DVector<f64>) -> Result<Selection> {
    let state = router.arm(arm)?;
    Ok(Selection {
        arm,
        width: Some(state.width(psi)),
        cov_trace: Some(state.a_inv.trace()),
    })
}

// ── UCB policies ────────────────────────────────────────────────────────

/// PILOT or LinUCB: both are a [`PilotRouter`], differing only in the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbPolicy {
    pub router: PilotRouter,
}

impl RoutingPolicy for UcbPolicy {
    fn num_arms(&self) -> usize {
        self.router.num_arms()
    }

    fn context_dim(&self) -> Option<usize> {
        Some(self.router.dim())
    }

    fn select(&mut self, psi: &DVector<f64>) -> Result<Selection> {
        let (arm, _) = self.router.select_arm(psi)?;
        router_selection(&self.router, arm, psi)
    }

    fn update(&mut self, arm: ArmId, psi: &DVector<f64>, reward: f64) -> Result<()> {
        self.router.update(arm, psi, reward)
    }

    fn reward_estimates(&mut self, psi: &DVector<f64>) -> Result<Vec<f64>> {
        self.router.reward_estimates(psi)
    }
}

pub fn pilot_init(emb: &ArmEmbeddings, alpha: f64, rule: LambdaRule) -> Result<UcbPolicy> {
    Ok(UcbPolicy {
        router: PilotRouter::init(emb, alpha, rule)?,
    })
}

/// LinUCB: `A = I`, `b = 0` for every arm.
pub fn linucb_init(num_arms: usize, d_m: usize, alpha: f64) -> Result<UcbPolicy> {
    if d_m == 0 {
        return Err(Error::Config("d_m must be at least 1".into()));
    }
    Ok(UcbPolicy {
        router: PilotRouter::zero_prior(num_arms, d_m, alpha)?,
    })
}

// ── Epoch-Greedy ────────────────────────────────────────────────────────

/// One uniform exploration step at the start of every window of `window`
/// steps, greedy on a ridge estimator otherwise. The estimator learns from
/// every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochGreedy {
    pub router: PilotRouter,
    pub window: u64,
    step: u64,
    rng: ChaCha8Rng,
}

impl EpochGreedy {
    pub fn is_exploration_step(&self, step: u64) -> bool {
        step.is_multiple_of(self.window)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

pub fn epoch_greedy_init(
    num_arms: usize,
    d_m: usize,
    window: u64,
    seed: u64,
) -> Result<EpochGreedy> {
    if window == 0 {
        return Err(Error::Config(
            "epoch-greedy window must be at least 1".into(),
        ));
    }
    Ok(EpochGreedy {
        router: PilotRouter::zero_prior(num_arms, d_m, 0.0)?,
        window,
        step: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl RoutingPolicy for EpochGreedy {
    fn num_arms(&self) -> usize {
        self.router.num_arms()
    }

    fn context_dim(&self) -> Option<usize> {
        Some(self.router.dim())
    }

    fn select(&mut self, psi: &DVector<f64>) -> Result<Selection> {
        let arm = if self.is_exploration_step(self.step) {
            ArmId(self.rng.random_range(0..self.router.num_arms()))
        } else {
            argmax(&self.router.reward_estimates(psi)?)
        };
        self.step += 1;
        router_selection(&self.router, arm, psi)
    }

    fn update(&mut self, arm: ArmId, psi: &DVector<f64>, reward: f64) -> Result<()> {
        self.router.update(arm, psi, reward)
    }

    fn reward_estimates(&mut self, psi: &DVector<f64>) -> Result<Vec<f64>> {
        self.router.reward_estimates(psi)
    }
}

// ── Explore-Only and Random ─────────────────────────────────────────────

/// Uniform exploration forever, while still fitting an estimator so that the
/// learned router can be deployed greedily.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploreOnly {
    pub router: PilotRouter,
    rng: ChaCha8Rng,
}

impl RoutingPolicy for ExploreOnly {
    fn num_arms(&self) -> usize {
        self.router.num_arms()
    }

    fn context_dim(&self) -> Option<usize> {
        Some(self.router.dim())
    }

    fn select(&mut self, psi: &DVector<f64>) -> Result<Selection> {
        let arm = ArmId(self.rng.random_range(0..self.router.num_arms()));
        router_selection(&self.router, arm, psi)
    }

    fn update(&mut self, arm: ArmId, psi: &DVector<f64>, reward: f64) -> Result<()> {
        self.router.update(arm, psi, reward)
    }

    fn reward_estimates(&mut self, psi: &DVector<f64>) -> Result<Vec<f64>> {
        self.router.reward_estimates(psi)
    }
}

/// Uniformly random arm; ignores feedback. Its deployment estimates are
/// fresh uniform draws, i.e. a random ranking per query.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPolicy {
    pub num_arms: usize,
    rng: ChaCha8Rng,
}

impl RoutingPolicy for RandomPolicy {
    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn context_dim(&self) -> Option<usize> {
        None
    }

    fn select(&mut self, _psi: &DVector<f64>) -> Result<Selection> {
        Ok(Selection::plain(ArmId(
            self.rng.random_range(0..self.num_arms),
        )))
    }

    fn update(&mut self, arm: ArmId, _psi: &DVector<f64>, reward: f64) -> Result<()> {
        if arm.index() >= self.num_arms {
            return Err(Error::InvalidArm(arm.index()));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::RewardOutOfRange(reward));
        }
        Ok(())
    }

    fn reward_estimates(&mut self, _psi: &DVector<f64>) -> Result<Vec<f64>> {
        Ok((0..self.num_arms)
            .map(|_| self.rng.random::<f64>())
            .collect())
    }
}

/// All-to-one router.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedArm {
    pub arm: ArmId,
    pub num_arms: usize,
}

impl RoutingPolicy for FixedArm {
    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn context_dim(&self) -> Option<usize> {
        None
    }

    fn select(&mut self, _psi: &DVector<f64>) -> Result<Selection> {
        Ok(Selection::plain(self.arm))
    }

    fn update(&mut self, _arm: ArmId, _psi: &DVector<f64>, _reward: f64) -> Result<()> {
        Ok(())
    }

    fn reward_estimates(&mut self, _psi: &DVector<f64>) -> Result<Vec<f64>> {
        let mut est = vec![0.0; self.num_arms];
        est[self.arm.index()] = 1.0;
        Ok(est)
    }
}

/// Non-learning policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrivialKind {
    ExploreOnly,
    Random,
    Fixed(ArmId),
}

pub fn trivial_policy(kind: TrivialKind, num_arms: usize, d_m: usize, seed: u64) -> Result<Policy> {
    if num_arms == 0 {
        return Err(Error::Config("policy needs at least one arm".into()));
    }
    Ok(match kind {
        TrivialKind::ExploreOnly => Policy::ExploreOnly(ExploreOnly {
            router: PilotRouter::zero_prior(num_arms, d_m, 0.0)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }),
        TrivialKind::Random => Policy::Random(RandomPolicy {
            num_arms,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }),
        TrivialKind::Fixed(arm) => {
            if arm.index() >= num_arms {
                return Err(Error::InvalidArm(arm.index()));
            }
            Policy::Fixed(FixedArm { arm, num_arms })
        }
    })
}

// ── Policy spec and dispatch ────────────────────────────────────────────

/// Serializable policy description, as found in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Pilot {
        alpha: f64,
        #[serde(default = "default_lambda_rule")]
        lambda_rule: LambdaRule,
    },
    Linucb {
        alpha: f64,
    },
    EpochGreedy {
        window: u64,
    },
    ExploreOnly,
    Random,
    Fixed {
        arm: usize,
    },
}

fn default_lambda_rule() -> LambdaRule {
    LambdaRule::InverseAccuracy
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Pilot { .. } => "pilot",
            PolicySpec::Linucb { .. } => "linucb",
            PolicySpec::EpochGreedy { .. } => "epoch_greedy",
            PolicySpec::ExploreOnly => "explore_only",
            PolicySpec::Random => "random",
            PolicySpec::Fixed { .. } => "fixed",
        }
    }

    /// The tunable parameter (alpha or window), if any.
    pub fn param(&self) -> Option<f64> {
        match self {
            PolicySpec::Pilot { alpha, .. } | PolicySpec::Linucb { alpha } => Some(*alpha),
            PolicySpec::EpochGreedy { window } => Some(*window as f64),
            _ => None,
        }
    }

    pub fn with_param(&self, value: f64) -> Self {
        match self {
            PolicySpec::Pilot { lambda_rule, .. } => PolicySpec::Pilot {
                alpha: value,
                lambda_rule: *lambda_rule,
            },
            PolicySpec::Linucb { .. } => PolicySpec::Linucb { alpha: value },
            PolicySpec::EpochGreedy { .. } => PolicySpec::EpochGreedy {
                window: value.round().max(1.0) as u64,
            },
            other => other.clone(),
        }
    }

    /// Instantiates the policy. PILOT needs pretrained arm embeddings.
    pub fn build(
        &self,
        num_arms: usize,
        d_m: usize,
        embeddings: Option<&ArmEmbeddings>,
        seed: u64,
    ) -> Result<Policy> {
        match *self {
            PolicySpec::Pilot { alpha, lambda_rule } => {
                let emb = embeddings.ok_or_else(|| {
                    Error::Config("pilot policy requires pretrained arm embeddings".into())
                })?;
                if emb.num_arms() != num_arms {
                    return Err(Error::DimensionMismatch {
                        expected: num_arms,
                        actual: emb.num_arms(),
                    });
                }
                Ok(Policy::Pilot(pilot_init(emb, alpha, lambda_rule)?))
            }
            PolicySpec::Linucb { alpha } => Ok(Policy::LinUcb(linucb_init(num_arms, d_m, alpha)?)),
            PolicySpec::EpochGreedy { window } => Ok(Policy::EpochGreedy(epoch_greedy_init(
                num_arms, d_m, window, seed,
            )?)),
            PolicySpec::ExploreOnly => {
                trivial_policy(TrivialKind::ExploreOnly, num_arms, d_m, seed)
            }
            PolicySpec::Random => trivial_policy(TrivialKind::Random, num_arms, d_m, seed),
            PolicySpec::Fixed { arm } => {
                trivial_policy(TrivialKind::Fixed(ArmId(arm)), num_arms, d_m, seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Pilot(UcbPolicy),
    LinUcb(UcbPolicy),
    EpochGreedy(EpochGreedy),
    ExploreOnly(ExploreOnly),
    Random(RandomPolicy),
    Fixed(FixedArm),
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            Policy::Pilot($p) | Policy::LinUcb($p) => $body,
            Policy::EpochGreedy($p) => $body,
            Policy::ExploreOnly($p) => $body,
            Policy::Random($p) => $body,
            Policy::Fixed($p) => $body,
        }
    };
}

impl RoutingPolicy for Policy {
    fn num_arms(&self) -> usize {
        dispatch!(self, p => p.num_arms())
    }

    fn context_dim(&self) -> Option<usize> {
        dispatch!(self, p => p.context_dim())
    }

    fn select(&mut self, psi: &DVector<f64>) -> Result<Selection> {
        dispatch!(self, p => p.select(psi))
    }

    fn update(&mut self, arm: ArmId, psi: &DVector<f64>, reward: f64) -> Result<()> {
        dispatch!(self, p => p.update(arm, psi, reward))
    }

    fn reward_estimates(&mut self, psi: &DVector<f64>) -> Result<Vec<f64>> {
        dispatch!(self, p => p.reward_estimates(psi))
    }
}

impl Policy {
    /// The underlying ridge router, for policies that have one.
    pub fn router(&self) -> Option<&PilotRouter> {
        match self {
            Policy::Pilot(p) | Policy::LinUcb(p) => Some(&p.router),
            Policy::EpochGreedy(p) => Some(&p.router),
            Policy::ExploreOnly(p) => Some(&p.router),
            Policy::Random(_) | Policy::Fixed(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn unit_ctx(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        &v / v.norm()
    }

    #[test]
    fn fresh_linucb_scores_alpha() {
        let p = linucb_init(3, 4, 1.7).unwrap();
        assert_eq!(
            p.router.point_estimate(ArmId(2)).unwrap(),
            DVector::zeros(4)
        );
        let psi = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(p.router.ucb_scores(&psi).unwrap(), vec![1.7; 3]);
    }

    #[test]
    fn epoch_greedy_schedule() {
        let mut eg = epoch_greedy_init(3, 2, 1, 0).unwrap();
        assert!((0..50).all(|t| eg.is_exploration_step(t)));
        eg = epoch_greedy_init(3, 2, 10, 0).unwrap();
        for start in 0..40u64 {
            let explores = (start..start + 10)
                .filter(|&t| eg.is_exploration_step(t))
                .count();
            assert_eq!(explores, 1);
        }
    }

    /// Straight-line epoch-greedy: own RNG draws, own ridge estimator with a
    /// dense inverse each step.
    #[test]
    fn epoch_greedy_matches_reference_schedule() {
        let (k, d, window, seed) = (3usize, 3usize, 4u64, 99u64);
        let mut policy = epoch_greedy_init(k, d, window, seed).unwrap();

        let mut ref_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d); k];
        let mut b: Vec<DVector<f64>> = vec![DVector::zeros(d); k];

        let mut ctx_rng = ChaCha8Rng::seed_from_u64(1234);
        for t in 0..200u64 {
            let psi = unit_ctx(&mut ctx_rng, d);
            let reward = ctx_rng.random::<f64>();
            let expected = if t % window == 0 {
                ref_rng.random_range(0..k)
            } else {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for arm in 0..k {
                    let theta = a[arm].clone().try_inverse().unwrap() * &b[arm];
                    let val = if theta.norm() < 1e-9 {
                        0.0
                    } else {
                        psi.dot(&theta) / theta.norm()
                    };
                    if val > best_val {
                        best_val = val;
                        best = arm;
                    }
                }
                best
            };
            let got = policy.select(&psi).unwrap().arm;
            assert_eq!(got, ArmId(expected), "step {t}");
            policy.update(got, &psi, reward).unwrap();
            a[expected] += &psi * psi.transpose();
            b[expected] += &psi * reward;
        }
    }

    #[test]
    fn explore_only_is_near_uniform() {
        let k = 4;
        let n = 10_000;
        let mut p = trivial_policy(TrivialKind::ExploreOnly, k, 2, 5).unwrap();
        let psi = DVector::from_vec(vec![1.0, 0.0]);
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let s = p.select(&psi).unwrap();
            counts[s.arm.index()] += 1;
            p.update(s.arm, &psi, 0.5).unwrap();
        }
        // binomial(n, 1/k): mean 2500, sigma = sqrt(n p (1-p)) = 43.3
        let mean = n as f64 / k as f64;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{c}");
        }
        // explore-only feeds its estimator; random does not
        assert_eq!(
            p.router()
                .unwrap()
                .arms
                .iter()
                .map(|s| s.t_updates)
                .sum::<u64>(),
            n as u64
        );
    }

    #[test]
    fn random_is_reproducible() {
        let psi = DVector::from_vec(vec![1.0, 0.0]);
        let trace = |seed| {
            let mut p = trivial_policy(TrivialKind::Random, 5, 2, seed).unwrap();
            (0..100)
                .map(|_| p.select(&psi).unwrap().arm)
                .collect::<Vec<_>>()
        };
        assert_eq!(trace(3), trace(3));
        assert_ne!(trace(3), trace(4));
    }

    #[test]
    fn fixed_arm_validation_and_estimates() {
        assert!(trivial_policy(TrivialKind::Fixed(ArmId(3)), 3, 2, 0).is_err());
        let mut p = trivial_policy(TrivialKind::Fixed(ArmId(1)), 3, 2, 0).unwrap();
        let psi = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(p.select(&psi).unwrap().arm, ArmId(1));
        assert_eq!(p.reward_estimates(&psi).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn spec_roundtrip_and_param() {
        let s: PolicySpec = serde_json::from_str(r#"{"kind":"pilot","alpha":2.0}"#).unwrap();
        assert_eq!(
            s,
            PolicySpec::Pilot {
                alpha: 2.0,
                lambda_rule: LambdaRule::InverseAccuracy
            }
        );
        let s: PolicySpec = serde_json::from_str(r#"{"kind":"epoch_greedy","window":50}"#).unwrap();
        assert_eq!(s.with_param(100.0), PolicySpec::EpochGreedy { window: 100 });
        let s: PolicySpec =
            serde_json::from_str(r#"{"kind":"pilot","alpha":1.0,"lambda_rule":{"fixed":3.0}}"#)
                .unwrap();
        assert_eq!(s.param(), Some(1.0));
        assert!(PolicySpec::Pilot {
            alpha: 1.0,
            lambda_rule: LambdaRule::InverseAccuracy
        }
        .build(2, 2, None, 0)
        .is_err());
    }
}
