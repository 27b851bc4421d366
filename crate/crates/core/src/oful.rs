//! OFUL and its preference-informed variant on synthetic linear bandits.
//!
//! Both keep `A_t = lambda I + sum x x^T` and `b_t = b_0 + sum r x`, where
//! OFUL starts from `b_0 = 0` and PI-OFUL from `b_0 = lambda * theta_pref`.
//! The optimistic action maximizes `theta_hat . x + beta_t ||x||_{A^-1}` with
//!
//! ```text
//!   beta_t = sqrt(lambda) S + R sqrt(2 log(1/delta) + log(det A_t / det(lambda I)))
//! ```
//!
//! where `S` bounds the distance from the prior center to `theta*`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::argmax;
use crate::error::{Error, Result};

/// Where each round's action set comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSource {
    /// `m` fresh contexts per round, uniform on the unit sphere.
    UniformSphere { m: usize },
    /// The same actions every round.
    Fixed(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBanditInstance {
    pub theta_star: DVector<f64>,
    pub contexts: ContextSource,
    /// Noise scale `R`; noise is Gaussian with this standard deviation.
    pub noise: f64,
    pub horizon: usize,
    pub delta: f64,
    pub lambda: f64,
}

impl LinearBanditInstance {
    /// The standard suite: `d = 8`, 10 actions per round, `sigma = 0.1`,
    /// `T = 2000`, `delta = 0.05`, `lambda = 1`.
    pub fn standard(theta_star: DVector<f64>) -> Self {
        Self {
            theta_star,
            contexts: ContextSource::UniformSphere { m: 10 },
            noise: 0.1,
            horizon: 2000,
            delta: 0.05,
            lambda: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Config("theta* must be non-empty".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.lambda > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config(
                "lambda must be positive and noise non-negative".into(),
            ));
        }
        match &self.contexts {
            ContextSource::UniformSphere { m } if *m == 0 => {
                Err(Error::Config("need at least one action per round".into()))
            }
            ContextSource::Fixed(xs) if xs.is_empty() => {
                Err(Error::Config("empty fixed action set".into()))
            }
            ContextSource::Fixed(xs) => {
                for x in xs {
                    if x.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            actual: x.len(),
                        });
                    }
                    if x.norm() > 1.0 + 1e-12 {
                        return Err(Error::Config("contexts must have norm at most 1".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn action_set(&self, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
        match &self.contexts {
            ContextSource::Fixed(xs) => xs.clone(),
            ContextSource::UniformSphere { m } => {
                (0..*m).map(|_| sphere_point(self.dim(), rng)).collect()
            }
        }
    }
}

/// Uniform point on the unit sphere in `d` dimensions.
pub fn sphere_point<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `theta* + ratio * ||theta*|| * u` for a uniform unit direction `u`.
pub fn perturbed_prior<R: Rng>(theta_star: &DVector<f64>, ratio: f64, rng: &mut R) -> DVector<f64> {
    theta_star + sphere_point(theta_star.len(), rng) * (ratio * theta_star.norm())
}

/// Ellipsoid `{theta : ||theta - center||_A <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub center: DVector<f64>,
    pub a: DMatrix<f64>,
    pub radius: f64,
    pub s_param: f64,
}

impl ConfidenceSet {
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        let diff = theta - &self.center;
        (diff.transpose() * &self.a * &diff)[(0, 0)] <= self.radius * self.radius
    }
}

/// Radius with the log-determinant term.
pub fn confidence_radius(
    a: &DMatrix<f64>,
    lambda: f64,
    s_param: f64,
    noise: f64,
    delta: f64,
) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("design matrix is not positive definite".into()))?;
    let log_det_a: f64 = chol.l().diagonal().iter().map(|l| 2.0 * l.ln()).sum();
    let log_ratio = log_det_a - a.nrows() as f64 * lambda.ln();
    Ok(lambda.sqrt() * s_param + noise * (2.0 * (1.0 / delta).ln() + log_ratio).sqrt())
}

/// Closed-form regret bound
/// `4 sqrt(T d log(lambda + T/d)) (sqrt(lambda) S + R sqrt(2 log(1/delta) + d log(1 + T/(lambda d))))`.
pub fn bound_value(s_param: f64, inst: &LinearBanditInstance) -> Result<f64> {
    if !(s_param >= 0.0) || !(inst.noise > 0.0) || !(inst.lambda > 0.0) || inst.horizon == 0 {
        return Err(Error::Config("bound parameters must be positive".into()));
    }
    if !(inst.delta > 0.0 && inst.delta < 1.0) {
        return Err(Error::Config(format!(
            "delta must be in (0, 1), got {}",
            inst.delta
        )));
    }
    let t = inst.horizon as f64;
    let d = inst.dim() as f64;
    let lam = inst.lambda;
    let lead = 4.0 * (t * d * (lam + t / d).ln()).sqrt();
    let tail = inst.noise * (2.0 * (1.0 / inst.delta).ln() + d * (1.0 + t / (lam * d)).ln()).sqrt();
    Ok(lead * (lam.sqrt() * s_param + tail))
}

/// Which `S` the radius uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SMode {
    /// The true distance from the prior center to `theta*`.
    Oracle,
    /// A fixed, possibly wrong, value.
    Given(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRun {
    /// Cumulative pseudo-regret after each round.
    pub curve: Vec<f64>,
    pub chosen: Vec<usize>,
    pub s_param: f64,
}

impl RegretRun {
    pub fn total(&self) -> f64 {
        self.curve.last().copied().unwrap_or(0.0)
    }
}

fn run_optimistic(
    inst: &LinearBanditInstance,
    prior: &DVector<f64>,
    s_mode: SMode,
    seed: u64,
) -> Result<RegretRun> {
    inst.validate()?;
    let d = inst.dim();
    if prior.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: prior.len(),
        });
    }
    let s_param = match s_mode {
        SMode::Oracle => (&inst.theta_star - prior).norm(),
        SMode::Given(s) => s,
    };
    let mut ctx_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);

    let mut a = DMatrix::identity(d, d) * inst.lambda;
    let mut a_inv = DMatrix::identity(d, d) / inst.lambda;
    let mut b = prior * inst.lambda;
    let mut regret = 0.0;
    let mut curve = Vec::with_capacity(inst.horizon);
    let mut chosen = Vec::with_capacity(inst.horizon);

    for _ in 0..inst.horizon {
        let actions = inst.action_set(&mut ctx_rng);
        let eps: f64 = StandardNormal.sample(&mut noise_rng);
        let theta_hat = &a_inv * &b;
        let beta = confidence_radius(&a, inst.lambda, s_param, inst.noise, inst.delta)?;
        let ucb: Vec<f64> = actions
            .iter()
            .map(|x| theta_hat.dot(x) + beta * (x.transpose() * &a_inv * x)[(0, 0)].max(0.0).sqrt())
            .collect();
        let l = argmax(&ucb).index();
        let x = &actions[l];

        let means: Vec<f64> = actions.iter().map(|x| inst.theta_star.dot(x)).collect();
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        regret += best - means[l];
        curve.push(regret);
        chosen.push(l);

        let r = means[l] + inst.noise * eps;
        a += x * x.transpose();
        let ax = &a_inv * x;
        let denom = 1.0 + x.dot(&ax);
        a_inv -= &ax * ax.transpose() / denom;
        b += x * r;
    }
    Ok(RegretRun {
        curve,
        chosen,
        s_param,
    })
}

/// OFUL with `b_0 = 0`.
pub fn run_oful(inst: &LinearBanditInstance, s_mode: SMode, seed: u64) -> Result<RegretRun> {
    run_optimistic(inst, &DVector::zeros(inst.dim()), s_mode, seed)
}

/// PI-OFUL with `b_0 = lambda * theta_pref`. Shares the context and noise
/// streams of [`run_oful`] at equal seeds.
pub fn run_pi_oful(
    inst: &LinearBanditInstance,
    theta_pref: &DVector<f64>,
    s_mode: SMode,
    seed: u64,
) -> Result<RegretRun> {
    run_optimistic(inst, theta_pref, s_mode, seed)
}

/// The confidence set after replaying `history` from `prior`.
pub fn confidence_set(
    inst: &LinearBanditInstance,
    prior: &DVector<f64>,
    s_param: f64,
    history: &[(DVector<f64>, f64)],
) -> Result<ConfidenceSet> {
    let d = inst.dim();
    let mut a = DMatrix::identity(d, d) * inst.lambda;
    let mut b = prior * inst.lambda;
    for (x, r) in history {
        a += x * x.transpose();
        b += x * *r;
    }
    let center = crate::linalg::spd_inverse(&a)? * b;
    let radius = confidence_radius(&a, inst.lambda, s_param, inst.noise, inst.delta)?;
    Ok(ConfidenceSet {
        center,
        a,
        radius,
        s_param,
    })
}

// ── Seed suite ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub dim: usize,
    pub actions: usize,
    pub noise: f64,
    pub horizon: usize,
    pub delta: f64,
    pub lambda: f64,
    /// `||theta_pref - theta*|| / ||theta*||`.
    pub prior_ratio: f64,
    pub seeds: u64,
    pub base_seed: u64,
    pub s_mode: SMode,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            actions: 10,
            noise: 0.1,
            horizon: 2000,
            delta: 0.05,
            lambda: 1.0,
            prior_ratio: 0.25,
            seeds: 50,
            base_seed: 0,
            s_mode: SMode::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub config: SuiteConfig,
    pub oful: CurveStats,
    pub pi_oful: CurveStats,
    /// Seed mean of `R_OFUL(T) - R_PI(T)`, and its standard error.
    pub mean_gap: f64,
    pub gap_stderr: f64,
    pub bound_oful: f64,
    pub bound_pi_oful: f64,
}

/// Mean and standard error (n - 1 denominator) of each column.
pub fn curve_stats(curves: &[Vec<f64>]) -> CurveStats {
    let n = curves.len() as f64;
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let mut mean = vec![0.0; len];
    let mut stderr = vec![0.0; len];
    for t in 0..len {
        let m = curves.iter().map(|c| c[t]).sum::<f64>() / n;
        let var = if n > 1.0 {
            curves.iter().map(|c| (c[t] - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean[t] = m;
        stderr[t] = (var / n).sqrt();
    }
    CurveStats { mean, stderr }
}

/// Per seed: unit `theta*`, a prior at `prior_ratio` relative distance, then
/// OFUL and PI-OFUL on the same context and noise streams.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteSummary> {
    if cfg.seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let runs: Vec<(RegretRun, RegretRun, f64, f64)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let theta_star = sphere_point(cfg.dim, &mut rng);
            let prior = perturbed_prior(&theta_star, cfg.prior_ratio, &mut rng);
            let inst = LinearBanditInstance {
                theta_star,
                contexts: ContextSource::UniformSphere { m: cfg.actions },
                noise: cfg.noise,
                horizon: cfg.horizon,
                delta: cfg.delta,
                lambda: cfg.lambda,
            };
            let o = run_oful(&inst, cfg.s_mode, seed)?;
            let p = run_pi_oful(&inst, &prior, cfg.s_mode, seed)?;
            let (so, sp) = (o.s_param, p.s_param);
            Ok((o, p, so, sp))
        })
        .collect::<Result<_>>()?;

    let oful = curve_stats(&runs.iter().map(|r| r.0.curve.clone()).collect::<Vec<_>>());
    let pi_oful = curve_stats(&runs.iter().map(|r| r.1.curve.clone()).collect::<Vec<_>>());
    let gaps: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| vec![r.0.total() - r.1.total()])
        .collect();
    let gap = curve_stats(&gaps);

    let n = runs.len() as f64;
    let s_oful = runs.iter().map(|r| r.2).sum::<f64>() / n;
    let s_pi = runs.iter().map(|r| r.3).sum::<f64>() / n;
    let reference = LinearBanditInstance {
        theta_star: DVector::zeros(cfg.dim),
        contexts: ContextSource::UniformSphere { m: cfg.actions },
        noise: cfg.noise,
        horizon: cfg.horizon,
        delta: cfg.delta,
        lambda: cfg.lambda,
    };
    Ok(SuiteSummary {
        config: *cfg,
        oful,
        pi_oful,
        mean_gap: gap.mean[0],
        gap_stderr: gap.stderr[0],
        bound_oful: bound_value(s_oful, &reference)?,
        bound_pi_oful: bound_value(s_pi, &reference)?,
    })
}
