//! Preference-prior informed LinUCB.
//!
//! Every arm keeps a ridge-regression state over unit-normalized query
//! contexts `psi`:
//!
//! ```text
//!   A_0 = lambda I,  b_0 = lambda theta_pref
//!   A_t = A_{t-1} + psi psi^T,  b_t = b_{t-1} + r_t psi
//!   theta_t = A_t^{-1} b_t
//!   ucb(psi) = cos(psi, theta_t) + alpha sqrt(psi^T A_t^{-1} psi)
//! ```
//!
//! Before any update `theta_t` is exactly the prior, so the router starts from
//! the pretrained arm embeddings and moves toward the online evidence at a
//! rate set by `lambda`. With a zero prior and `lambda = 1` this is LinUCB.
//!
//! `A^{-1}` is maintained with Sherman–Morrison rank-one updates and
//! recomputed from `A` every [`RECOMPUTE_EVERY`] updates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ArmId;
use crate::error::{Error, Result};
use crate::linalg::{cosine, from_rows, spd_inverse, to_rows, unit};
use crate::pretrain::{ArmEmbeddings, ACCURACY_FLOOR};

/// Exact inverse recomputation period, in updates per arm.
pub const RECOMPUTE_EVERY: u64 = 512;

// ── Per-arm state ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub a: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lambda: f64,
    pub theta_prior: DVector<f64>,
    pub t_updates: u64,
}

impl ArmState {
    pub fn new(theta_prior: DVector<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        let d = theta_prior.len();
        if d == 0 {
            return Err(Error::Config("arm dimension must be positive".into()));
        }
        Ok(Self {
            a: DMatrix::identity(d, d) * lambda,
            a_inv: DMatrix::identity(d, d) * (1.0 / lambda),
            b: &theta_prior * lambda,
            lambda,
            theta_prior,
            t_updates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Ridge point estimate `A^{-1} b`.
    pub fn point_estimate(&self) -> DVector<f64> {
        &self.a_inv * &self.b
    }

    /// Posterior standard deviation along `psi`: `sqrt(psi^T A^{-1} psi)`.
    pub fn width(&self, psi: &DVector<f64>) -> f64 {
        psi.dot(&(&self.a_inv * psi)).max(0.0).sqrt()
    }

    /// Cosine between `psi` and the point estimate; `None` if the estimate is
    /// (numerically) zero.
    pub fn mean(&self, psi: &DVector<f64>) -> Option<f64> {
        cosine(psi, &self.point_estimate())
    }

    fn update(&mut self, psi: &DVector<f64>, reward: f64) -> Result<()> {
        let u = &self.a_inv * psi;
        let denom = 1.0 + psi.dot(&u);
        self.a_inv -= &u * u.transpose() / denom;
        self.a += psi * psi.transpose();
        self.b += psi * reward;
        self.t_updates += 1;
        if self.t_updates.is_multiple_of(RECOMPUTE_EVERY) {
            self.a_inv = spd_inverse(&self.a)?;
        }
        Ok(())
    }
}

// ── Router ──────────────────────────────────────────────────────────────

/// How per-arm prior strength is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// `1 / clamp(accuracy, 0.05, 1)`, so `lambda` lies in `[1, 20]`.
    InverseAccuracy,
    Fixed(f64),
}

impl LambdaRule {
    pub fn lambda(&self, accuracy: f64) -> f64 {
        match *self {
            LambdaRule::InverseAccuracy => {
                let acc = if accuracy.is_finite() {
                    accuracy
                } else {
                    ACCURACY_FLOOR
                };
                1.0 / acc.clamp(ACCURACY_FLOOR, 1.0)
            }
            LambdaRule::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotRouter {
    pub arms: Vec<ArmState>,
    pub alpha: f64,
}

impl PilotRouter {
    /// Builds the router from pretrained arm embeddings.
    pub fn init(emb: &ArmEmbeddings, alpha: f64, rule: LambdaRule) -> Result<Self> {
        let priors = emb
            .theta_pref
            .iter()
            .map(|t| unit(t).unwrap_or_else(|| DVector::zeros(t.len())))
            .collect();
        let lambdas = emb.accuracy.iter().map(|&acc| rule.lambda(acc)).collect();
        Self::from_priors(priors, lambdas, alpha)
    }

    pub fn from_priors(priors: Vec<DVector<f64>>, lambdas: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        if priors.is_empty() {
            return Err(Error::Config("router needs at least one arm".into()));
        }
        if priors.len() != lambdas.len() {
            return Err(Error::DimensionMismatch {
                expected: priors.len(),
                actual: lambdas.len(),
            });
        }
        let d = priors[0].len();
        let arms = priors
            .into_iter()
            .zip(lambdas)
            .map(|(p, l)| {
                if p.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: p.len(),
                    });
                }
                ArmState::new(p, l)
            })
            .collect::<Result<_>>()?;
        Ok(Self { arms, alpha })
    }

    /// Plain LinUCB: zero prior, unit ridge.
    pub fn zero_prior(num_arms: usize, dim: usize, alpha: f64) -> Result<Self> {
        Self::from_priors(
            vec![DVector::zeros(dim); num_arms],
            vec![1.0; num_arms],
            alpha,
        )
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.arms[0].dim()
    }

    pub fn arm(&self, a: ArmId) -> Result<&ArmState> {
        self.arms.get(a.index()).ok_or(Error::InvalidArm(a.index()))
    }

    fn check_context(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: psi.len(),
            });
        }
        Ok(())
    }

    pub fn point_estimate(&self, a: ArmId) -> Result<DVector<f64>> {
        Ok(self.arm(a)?.point_estimate())
    }

    /// `cos(psi, theta_a)`; errors when the arm estimate has no direction.
    pub fn expected_reward(&self, a: ArmId, psi: &DVector<f64>) -> Result<f64> {
        self.check_context(psi)?;
        self.arm(a)?
            .mean(psi)
            .ok_or(Error::DegenerateEstimate(a.index()))
    }

    /// Greedy reward estimate per arm; arms without a direction score 0.
    pub fn reward_estimates(&self, psi: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_context(psi)?;
        Ok(self
            .arms
            .iter()
            .map(|s| s.mean(psi).unwrap_or(0.0))
            .collect())
    }

    /// UCB score per arm. A zero point estimate contributes a mean of 0, so a
    /// fresh zero-prior arm scores exactly `alpha`.
    pub fn ucb_scores(&self, psi: &DVector<f64>) -> Result<Vec<f64>> {
        self.check_context(psi)?;
        Ok(self
            .arms
            .iter()
            .map(|s| s.mean(psi).unwrap_or(0.0) + self.alpha * s.width(psi))
            .collect())
    }

    /// Arm with the highest UCB score; ties go to the lowest index.
    pub fn select_arm(&self, psi: &DVector<f64>) -> Result<(ArmId, Vec<f64>)> {
        let scores = self.ucb_scores(psi)?;
        Ok((argmax(&scores), scores))
    }

    pub fn update(&mut self, a: ArmId, psi: &DVector<f64>, reward: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::RewardOutOfRange(reward));
        }
        self.check_context(psi)?;
        let idx = a.index();
        self.arms
            .get_mut(idx)
            .ok_or(Error::InvalidArm(idx))?
            .update(psi, reward)
    }

    /// Gaussian posterior `(A^{-1} b, A^{-1})` of the arm parameters.
    pub fn posterior(&self, a: ArmId) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = self.arm(a)?;
        Ok((s.point_estimate(), s.a_inv.clone()))
    }

    pub fn checkpoint(&self) -> RouterCheckpoint {
        RouterCheckpoint {
            alpha: self.alpha,
            arms: self
                .arms
                .iter()
                .map(|s| ArmCheckpoint {
                    a: to_rows(&s.a),
                    b: s.b.iter().copied().collect(),
                    lambda: s.lambda,
                    theta_prior: s.theta_prior.iter().copied().collect(),
                    t_updates: s.t_updates,
                })
                .collect(),
        }
    }

    /// Restores a router; `A^{-1}` is recomputed exactly from `A`.
    pub fn from_checkpoint(cp: &RouterCheckpoint) -> Result<Self> {
        let mut arms = Vec::with_capacity(cp.arms.len());
        for c in &cp.arms {
            let a = from_rows(&c.a)?;
            let d = c.b.len();
            if a.nrows() != d || a.ncols() != d || c.theta_prior.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: a.nrows(),
                });
            }
            arms.push(ArmState {
                a_inv: spd_inverse(&a)?,
                a,
                b: DVector::from_vec(c.b.clone()),
                lambda: c.lambda,
                theta_prior: DVector::from_vec(c.theta_prior.clone()),
                t_updates: c.t_updates,
            });
        }
        if arms.is_empty() {
            return Err(Error::Config("checkpoint has no arms".into()));
        }
        Ok(Self {
            arms,
            alpha: cp.alpha,
        })
    }
}

/// Index of the maximum; ties and NaNs resolve to the lowest index.
pub fn argmax(scores: &[f64]) -> ArmId {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    ArmId(best)
}

// ── Checkpoint file ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCheckpoint {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub theta_prior: Vec<f64>,
    pub t_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterCheckpoint {
    pub alpha: f64,
    pub arms: Vec<ArmCheckpoint>,
}

impl RouterCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
