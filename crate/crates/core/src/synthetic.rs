//! Synthetic routing data with a known best arm per latent query cluster.
//!
//! Each cluster has a unit center in `d_e` dimensions and queries are noisy
//! copies of it. One arm per cluster scores `best_score`, the rest
//! `base_score`, both with Gaussian jitter clipped to `[0, 1]`. Arm costs
//! scale with size rank from `cost_levels`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ArmId, ArmInfo, Dataset, Manifest, PreferenceRecord, RoutingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub d_e: usize,
    pub num_clusters: usize,
    /// Mean cost of each arm; arm `l` gets size rank `l`.
    pub cost_levels: Vec<f64>,
    /// Best arm of each cluster.
    pub best_arm: Vec<usize>,
    pub best_score: f64,
    pub base_score: f64,
    pub score_noise: f64,
    /// Std of the isotropic query noise around a cluster center.
    pub embed_noise: f64,
    /// Relative per-query cost jitter.
    pub cost_jitter: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Four arms and four clusters; each arm is best on one cluster with a
    /// 0.3 score margin and costs spread 10x.
    pub fn four_cluster(seed: u64) -> Self {
        Self {
            d_e: 16,
            num_clusters: 4,
            cost_levels: vec![1.0, 8.0, 9.0, 10.0],
            best_arm: vec![0, 1, 2, 3],
            best_score: 0.8,
            base_score: 0.5,
            score_noise: 0.05,
            embed_noise: 0.1,
            cost_jitter: 0.1,
            seed,
        }
    }

    pub fn num_arms(&self) -> usize {
        self.cost_levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_e == 0 || self.num_clusters == 0 || self.cost_levels.is_empty() {
            return Err(Error::Config(
                "scenario needs d_e, clusters and arms".into(),
            ));
        }
        if self.best_arm.len() != self.num_clusters {
            return Err(Error::Config("best_arm needs one entry per cluster".into()));
        }
        if let Some(&a) = self.best_arm.iter().find(|&&a| a >= self.num_arms()) {
            return Err(Error::InvalidArm(a));
        }
        if self.cost_levels.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("cost levels must be positive".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            d_e: self.d_e,
            arms: (0..self.num_arms())
                .map(|l| ArmInfo::new(format!("m{l}"), l as i64))
                .collect(),
        }
    }
}

/// Fixed cluster geometry plus the sampling state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub centers: Vec<DVector<f64>>,
    rng: ChaCha8Rng,
}

/// Records with the latent cluster of each.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dataset: Dataset,
    pub clusters: Vec<usize>,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let centers = orthonormal_centers(cfg.num_clusters, cfg.d_e, &mut rng);
        Ok(Self { cfg, centers, rng })
    }

    /// Mean score of `arm` on `cluster` under a best-arm assignment.
    pub fn mean_score(&self, best_arm: &[usize], cluster: usize, arm: usize) -> f64 {
        if best_arm[cluster] == arm {
            self.cfg.best_score
        } else {
            self.cfg.base_score
        }
    }

    fn query(&mut self, cluster: usize) -> Vec<f64> {
        let noise = self.cfg.embed_noise;
        let c = &self.centers[cluster];
        (0..self.cfg.d_e)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                c[i] + noise * z
            })
            .collect()
    }

    fn noisy(&mut self, mean: f64, sd: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + sd * z
    }

    /// `n` records with uniformly drawn clusters under `best_arm`.
    pub fn sample_with(&mut self, n: usize, best_arm: &[usize], prefix: &str) -> Result<Sample> {
        if best_arm.len() != self.cfg.num_clusters {
            return Err(Error::Config("best_arm needs one entry per cluster".into()));
        }
        let k = self.cfg.num_arms();
        let mut records = Vec::with_capacity(n);
        let mut clusters = Vec::with_capacity(n);
        for i in 0..n {
            let c = self.rng.random_range(0..self.cfg.num_clusters);
            let embedding = self.query(c);
            let scores = (0..k)
                .map(|l| {
                    let m = self.mean_score(best_arm, c, l);
                    self.noisy(m, self.cfg.score_noise).clamp(0.0, 1.0)
                })
                .collect();
            let costs = (0..k)
                .map(|l| {
                    let base = self.cfg.cost_levels[l];
                    (base * self.noisy(1.0, self.cfg.cost_jitter)).max(0.05 * base)
                })
                .collect();
            records.push(RoutingRecord {
                query_id: format!("{prefix}{i}"),
                embedding,
                scores,
                costs,
                task_tag: Some(format!("cluster{c}")),
            });
            clusters.push(c);
        }
        Ok(Sample {
            dataset: Dataset::new(records, &self.cfg.manifest())?,
            clusters,
        })
    }

    pub fn sample(&mut self, n: usize) -> Result<Sample> {
        let best = self.cfg.best_arm.clone();
        self.sample_with(n, &best, "q")
    }

    /// Pairwise preferences on fresh queries: a random pair of arms, the
    /// winner being the one with the higher noisy score.
    pub fn preferences(&mut self, n: usize) -> Result<Vec<PreferenceRecord>> {
        let k = self.cfg.num_arms();
        if k < 2 {
            return Err(Error::Config("preferences need at least two arms".into()));
        }
        let best = self.cfg.best_arm.clone();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let c = self.rng.random_range(0..self.cfg.num_clusters);
            let embedding = self.query(c);
            let mut pair: Vec<usize> = (0..k).collect();
            pair.shuffle(&mut self.rng);
            let (a, b) = (pair[0], pair[1]);
            let sa = self.noisy(self.mean_score(&best, c, a), self.cfg.score_noise);
            let sb = self.noisy(self.mean_score(&best, c, b), self.cfg.score_noise);
            let winner = if sa >= sb { a } else { b };
            out.push(PreferenceRecord {
                query_id: format!("p{i}"),
                embedding,
                arm_i: ArmId(a),
                arm_j: ArmId(b),
                winner: ArmId(winner),
            });
        }
        Ok(out)
    }

    /// Two streams over the same clusters; stream B rotates every cluster's
    /// best arm by one, so each arm loses its cluster to its neighbor.
    pub fn shift_streams(&mut self, n_a: usize, n_b: usize) -> Result<(Sample, Sample)> {
        let before = self.cfg.best_arm.clone();
        let k = self.cfg.num_arms();
        let after: Vec<usize> = before.iter().map(|&a| (a + 1) % k).collect();
        let a = self.sample_with(n_a, &before, "a")?;
        let b = self.sample_with(n_b, &after, "b")?;
        Ok((a, b))
    }
}

/// `n` orthonormal directions (Gram-Schmidt on Gaussian draws), or random
/// unit vectors when `n > d`.
fn orthonormal_centers(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = DVector::from_fn(d, |_, _| normal.sample(rng));
        if out.len() < d {
            for u in &out {
                let p = v.dot(u);
                v -= u * p;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            out.push(v / norm);
        }
    }
    out
}
