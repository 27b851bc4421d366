//! Offline pretraining of the shared query/arm embedding space from pairwise
//! preferences.
//!
//! Training runs in two phases. Phase one fits a linear query projection
//! `psi(x) = W x + bias` with a cosine-distance triplet loss. Positives for an
//! anchor are queries won by the same arm. Negatives are queries where that
//! arm lost to a strictly smaller model. Phase two freezes the projection and
//! fits one embedding per arm with binary cross-entropy on
//! `p_i = exp(cos(theta_i, psi)) / (exp(cos(theta_i, psi)) + exp(cos(theta_j, psi)))`.
//!
//! Both phases use plain SGD and are deterministic for a given seed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ArmId, ArmInfo, PreferenceRecord};
use crate::error::{Error, Result};
use crate::linalg::{cosine, cosine_grad, from_rows, to_rows, unit, EPS_NORM};

/// Accuracy assigned to arms with no preference data, and the floor applied
/// before taking reciprocals.
pub const ACCURACY_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainHyperparams {
    pub lr: f64,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for PretrainHyperparams {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 30,
            margin: 0.2,
            seed: 0,
        }
    }
}

// ── Projection ──────────────────────────────────────────────────────────

/// Linear map from the raw embedding space (`d_e`) to the shared space (`d_m`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Projection {
    /// Square identity map; used when embeddings already live in the shared space.
    pub fn identity(d: usize) -> Self {
        Self {
            w: DMatrix::identity(d, d),
            bias: DVector::zeros(d),
        }
    }

    /// `W ~ U[-1/sqrt(d_e), 1/sqrt(d_e)]`, zero bias.
    pub fn random_init<R: Rng>(d_m: usize, d_e: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_e as f64).sqrt();
        let w = DMatrix::from_fn(d_m, d_e, |_, _| rng.random_range(-bound..=bound));
        Self {
            w,
            bias: DVector::zeros(d_m),
        }
    }

    pub fn d_m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_e(&self) -> usize {
        self.w.ncols()
    }

    /// Unnormalized `W x + bias`.
    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.d_e() {
            return Err(Error::DimensionMismatch {
                expected: self.d_e(),
                actual: x.len(),
            });
        }
        Ok(&self.w * DVector::from_column_slice(x) + &self.bias)
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Projects a raw embedding and normalizes it to unit length.
pub fn project(proj: &Projection, x: &[f64]) -> Result<DVector<f64>> {
    let v = proj.apply(x)?;
    unit(&v).ok_or(Error::DegenerateProjection)
}

// ── Pools ───────────────────────────────────────────────────────────────

/// Positive and negative pools for one anchor, as indices into the preference list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pools {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

fn size_rank(arms: &[ArmInfo], a: ArmId) -> i64 {
    arms[a.index()].size_rank
}

/// Pools for the preference at `anchor`.
///
/// Positives share the anchor's winner. Negatives are preferences where the
/// anchor's winner took part and lost to a strictly smaller model.
pub fn build_pools(anchor: usize, all: &[PreferenceRecord], arms: &[ArmInfo]) -> Pools {
    let win = all[anchor].winner;
    let win_rank = size_rank(arms, win);
    let mut pools = Pools::default();
    for (idx, rec) in all.iter().enumerate() {
        if idx == anchor {
            continue;
        }
        if rec.winner == win {
            pools.positives.push(idx);
        } else if rec.involves(win) && size_rank(arms, rec.winner) < win_rank {
            pools.negatives.push(idx);
        }
    }
    pools
}

/// Pool membership grouped by winning arm, so every anchor's pools are
/// available without a pass over the whole list.
struct PoolIndex {
    by_winner: HashMap<ArmId, Vec<usize>>,
    beaten_by_smaller: HashMap<ArmId, Vec<usize>>,
}

impl PoolIndex {
    fn new(prefs: &[PreferenceRecord], arms: &[ArmInfo]) -> Self {
        let mut by_winner: HashMap<ArmId, Vec<usize>> = HashMap::new();
        let mut beaten_by_smaller: HashMap<ArmId, Vec<usize>> = HashMap::new();
        for (idx, p) in prefs.iter().enumerate() {
            by_winner.entry(p.winner).or_default().push(idx);
            if let Some(loser) = p.opponent(p.winner) {
                if size_rank(arms, p.winner) < size_rank(arms, loser) {
                    beaten_by_smaller.entry(loser).or_default().push(idx);
                }
            }
        }
        Self {
            by_winner,
            beaten_by_smaller,
        }
    }

    fn pools(&self, anchor: usize, prefs: &[PreferenceRecord]) -> (Vec<usize>, &[usize]) {
        let win = prefs[anchor].winner;
        let pos = self
            .by_winner
            .get(&win)
            .map(|v| v.iter().copied().filter(|&i| i != anchor).collect())
            .unwrap_or_default();
        let neg = self
            .beaten_by_smaller
            .get(&win)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        (pos, neg)
    }
}

// ── Phase one: triplet loss ─────────────────────────────────────────────

/// Loss and parameter gradients for a single triplet.
#[derive(Debug, Clone)]
pub struct TripletGrad {
    pub loss: f64,
    pub w: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// `max(0, cosdist(psi(a), psi(p)) - cosdist(psi(a), psi(n)) + margin)` with
/// `cosdist = 1 - cos`, and its gradient in `(W, bias)`.
pub fn triplet_loss_grad(
    proj: &Projection,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<TripletGrad> {
    let ua = proj.apply(anchor)?;
    let up = proj.apply(positive)?;
    let un = proj.apply(negative)?;
    let cos_or_zero = |u: &DVector<f64>, v: &DVector<f64>| cosine(u, v).unwrap_or(0.0);
    let loss = cos_or_zero(&ua, &un) - cos_or_zero(&ua, &up) + margin;

    let mut w = DMatrix::zeros(proj.d_m(), proj.d_e());
    let mut bias = DVector::zeros(proj.d_m());
    if loss <= 0.0 {
        return Ok(TripletGrad { loss: 0.0, w, bias });
    }
    let ga = cosine_grad(&ua, &un) - cosine_grad(&ua, &up);
    let gp = -cosine_grad(&up, &ua);
    let gn = cosine_grad(&un, &ua);
    for (g, x) in [(&ga, anchor), (&gp, positive), (&gn, negative)] {
        w += g * DVector::from_column_slice(x).transpose();
        bias += g;
    }
    Ok(TripletGrad { loss, w, bias })
}

/// Samples one (positive, negative) pair for every anchor that has both pools
/// non-empty, in the given anchor order.
fn sample_triplets<R: Rng>(
    anchors: &[usize],
    index: &PoolIndex,
    prefs: &[PreferenceRecord],
    rng: &mut R,
) -> Vec<(usize, usize, usize)> {
    anchors
        .iter()
        .filter_map(|&a| {
            let (pos, neg) = index.pools(a, prefs);
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            let p = pos[rng.random_range(0..pos.len())];
            let n = neg[rng.random_range(0..neg.len())];
            Some((a, p, n))
        })
        .collect()
}

fn usable_anchors(index: &PoolIndex, prefs: &[PreferenceRecord]) -> Vec<usize> {
    (0..prefs.len())
        .filter(|&a| {
            let (pos, neg) = index.pools(a, prefs);
            !pos.is_empty() && !neg.is_empty()
        })
        .collect()
}

fn check_prefs(prefs: &[PreferenceRecord], arms: &[ArmInfo]) -> Result<usize> {
    let d_e = prefs
        .first()
        .map(|p| p.embedding.len())
        .ok_or(Error::EmptyDataset)?;
    for (i, p) in prefs.iter().enumerate() {
        crate::data::validate_preference(p, d_e, i + 1)?;
        for a in [p.arm_i, p.arm_j] {
            if a.index() >= arms.len() {
                return Err(Error::InvalidArm(a.index()));
            }
        }
    }
    Ok(d_e)
}

/// Result of phase one with the per-epoch mean loss over sampled triplets.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub projection: Projection,
    pub epoch_losses: Vec<f64>,
}

pub fn train_projection(
    prefs: &[PreferenceRecord],
    arms: &[ArmInfo],
    d_m: usize,
    hp: &PretrainHyperparams,
) -> Result<Projection> {
    fit_projection(prefs, arms, d_m, hp).map(|f| f.projection)
}

pub fn fit_projection(
    prefs: &[PreferenceRecord],
    arms: &[ArmInfo],
    d_m: usize,
    hp: &PretrainHyperparams,
) -> Result<ProjectionFit> {
    if prefs.len() < 2 {
        return Err(Error::Config("need at least two preference records".into()));
    }
    if d_m < 2 {
        return Err(Error::Config(format!("d_m must be at least 2, got {d_m}")));
    }
    if !(hp.margin > 0.0) {
        return Err(Error::Config("triplet margin must be positive".into()));
    }
    let d_e = check_prefs(prefs, arms)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut proj = Projection::random_init(d_m, d_e, &mut rng);
    let index = PoolIndex::new(prefs, arms);
    let mut anchors = usable_anchors(&index, prefs);
    if anchors.is_empty() {
        return Err(Error::NoUsableTriplets);
    }

    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    for _ in 0..hp.epochs {
        anchors.shuffle(&mut rng);
        let triplets = sample_triplets(&anchors, &index, prefs, &mut rng);
        let mut total = 0.0;
        for &(a, p, n) in &triplets {
            let g = triplet_loss_grad(
                &proj,
                &prefs[a].embedding,
                &prefs[p].embedding,
                &prefs[n].embedding,
                hp.margin,
            )?;
            total += g.loss;
            if hp.lr != 0.0 && g.loss > 0.0 {
                proj.w -= g.w * hp.lr;
                proj.bias -= g.bias * hp.lr;
            }
        }
        epoch_losses.push(total / triplets.len() as f64);
    }
    if !proj.is_finite() {
        return Err(Error::Config(
            "projection diverged; lower the learning rate".into(),
        ));
    }
    Ok(ProjectionFit {
        projection: proj,
        epoch_losses,
    })
}

/// Mean triplet loss of `proj` over one triplet per usable anchor, sampled
/// with `seed`. The same seed yields the same triplets for any projection.
pub fn mean_triplet_loss(
    proj: &Projection,
    prefs: &[PreferenceRecord],
    arms: &[ArmInfo],
    margin: f64,
    seed: u64,
) -> Result<f64> {
    let index = PoolIndex::new(prefs, arms);
    let anchors = usable_anchors(&index, prefs);
    if anchors.is_empty() {
        return Err(Error::NoUsableTriplets);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triplets = sample_triplets(&anchors, &index, prefs, &mut rng);
    let mut total = 0.0;
    for &(a, p, n) in &triplets {
        total += triplet_loss_grad(
            proj,
            &prefs[a].embedding,
            &prefs[p].embedding,
            &prefs[n].embedding,
            margin,
        )?
        .loss;
    }
    Ok(total / triplets.len() as f64)
}

// ── Phase two: arm embeddings ───────────────────────────────────────────

/// Per-arm preference embeddings in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmEmbeddings {
    /// Unit-normalized embedding per arm.
    pub theta_pref: Vec<DVector<f64>>,
    /// Pairwise prediction accuracy per arm on the training preferences.
    pub accuracy: Vec<f64>,
}

impl ArmEmbeddings {
    pub fn num_arms(&self) -> usize {
        self.theta_pref.len()
    }
}

/// Probability that `theta_i` beats `theta_j` on query `psi`.
pub fn win_probability(theta_i: &DVector<f64>, theta_j: &DVector<f64>, psi: &DVector<f64>) -> f64 {
    let ci = cosine(theta_i, psi).unwrap_or(0.0);
    let cj = cosine(theta_j, psi).unwrap_or(0.0);
    1.0 / (1.0 + (cj - ci).exp())
}

#[derive(Debug, Clone)]
pub struct BceGrad {
    pub loss: f64,
    pub theta_i: DVector<f64>,
    pub theta_j: DVector<f64>,
    /// Gradient with respect to the projected query; not used in training
    /// (the projection is frozen) but exposed for checking.
    pub psi: DVector<f64>,
}

/// Binary cross-entropy of `p_i` against `i_won`, with gradients.
pub fn bce_loss_grad(
    theta_i: &DVector<f64>,
    theta_j: &DVector<f64>,
    psi: &DVector<f64>,
    i_won: bool,
) -> BceGrad {
    let ci = cosine(theta_i, psi).unwrap_or(0.0);
    let cj = cosine(theta_j, psi).unwrap_or(0.0);
    let d = ci - cj;
    let p = 1.0 / (1.0 + (-d).exp());
    let y = if i_won { 1.0 } else { 0.0 };
    let softplus = |x: f64| {
        if x > 0.0 {
            x + (-x).exp().ln_1p()
        } else {
            x.exp().ln_1p()
        }
    };
    let loss = if i_won { softplus(-d) } else { softplus(d) };
    let g = p - y;
    BceGrad {
        loss,
        theta_i: cosine_grad(theta_i, psi) * g,
        theta_j: cosine_grad(theta_j, psi) * (-g),
        psi: (cosine_grad(psi, theta_i) - cosine_grad(psi, theta_j)) * g,
    }
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(u) = unit(&v) {
            return u;
        }
    }
}

/// Fits one embedding per arm against the frozen projection.
///
/// Arms that never appear in `prefs` get the normalized mean of the projected
/// training queries and the accuracy floor.
pub fn train_arm_embeddings(
    prefs: &[PreferenceRecord],
    proj: &Projection,
    num_arms: usize,
    hp: &PretrainHyperparams,
) -> Result<ArmEmbeddings> {
    if prefs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d_m = proj.d_m();
    let psis: Vec<DVector<f64>> = prefs
        .iter()
        .map(|p| proj.apply(&p.embedding))
        .collect::<Result<_>>()?;
    for p in prefs {
        for a in [p.arm_i, p.arm_j] {
            if a.index() >= num_arms {
                return Err(Error::InvalidArm(a.index()));
            }
        }
    }

    // Separate stream from phase one so the two phases can be rerun independently.
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut theta: Vec<DVector<f64>> = (0..num_arms).map(|_| random_unit(d_m, &mut rng)).collect();

    let mut order: Vec<usize> = (0..prefs.len()).collect();
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        if hp.lr == 0.0 {
            continue;
        }
        for &idx in &order {
            let p = &prefs[idx];
            let psi = &psis[idx];
            if psi.norm() < EPS_NORM {
                continue;
            }
            let (i, j) = (p.arm_i.index(), p.arm_j.index());
            let g = bce_loss_grad(&theta[i], &theta[j], psi, p.winner == p.arm_i);
            theta[i] -= g.theta_i * hp.lr;
            theta[j] -= g.theta_j * hp.lr;
        }
    }

    let mut seen = vec![false; num_arms];
    for p in prefs {
        seen[p.arm_i.index()] = true;
        seen[p.arm_j.index()] = true;
    }
    let fallback = {
        let mut sum = DVector::zeros(d_m);
        for psi in &psis {
            if let Some(u) = unit(psi) {
                sum += u;
            }
        }
        unit(&sum).unwrap_or_else(|| {
            let mut e = DVector::zeros(d_m);
            e[0] = 1.0;
            e
        })
    };

    let mut theta_pref = Vec::with_capacity(num_arms);
    for (a, t) in theta.into_iter().enumerate() {
        let v = if seen[a] { unit(&t) } else { None };
        theta_pref.push(v.unwrap_or_else(|| fallback.clone()));
    }
    let accuracy = arm_accuracy(prefs, &psis, &theta_pref, num_arms);
    Ok(ArmEmbeddings {
        theta_pref,
        accuracy,
    })
}

/// Fraction of preferences involving each arm whose outcome is predicted by
/// the sign of `cos(theta_a, psi) - cos(theta_other, psi)`.
fn arm_accuracy(
    prefs: &[PreferenceRecord],
    psis: &[DVector<f64>],
    theta: &[DVector<f64>],
    num_arms: usize,
) -> Vec<f64> {
    let mut hits = vec![0usize; num_arms];
    let mut total = vec![0usize; num_arms];
    for (p, psi) in prefs.iter().zip(psis) {
        for (arm, other) in [(p.arm_i, p.arm_j), (p.arm_j, p.arm_i)] {
            let a = arm.index();
            let diff = cosine(&theta[a], psi).unwrap_or(0.0)
                - cosine(&theta[other.index()], psi).unwrap_or(0.0);
            total[a] += 1;
            if (diff > 0.0) == (p.winner == arm) {
                hits[a] += 1;
            }
        }
    }
    hits.iter()
        .zip(&total)
        .map(|(&h, &t)| {
            if t == 0 {
                ACCURACY_FLOOR
            } else {
                h as f64 / t as f64
            }
        })
        .collect()
}

// ── Model artifact ──────────────────────────────────────────────────────

/// On-disk pretrained model: projection, arm embeddings and the arm pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub d_m: usize,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub theta_pref: Vec<Vec<f64>>,
    pub accuracy: Vec<f64>,
    pub arms: Vec<ArmInfo>,
}

impl ModelArtifact {
    pub fn new(proj: &Projection, emb: &ArmEmbeddings, arms: &[ArmInfo]) -> Self {
        Self {
            d_m: proj.d_m(),
            w: to_rows(&proj.w),
            bias: proj.bias.iter().copied().collect(),
            theta_pref: emb
                .theta_pref
                .iter()
                .map(|t| t.iter().copied().collect())
                .collect(),
            accuracy: emb.accuracy.clone(),
            arms: arms.to_vec(),
        }
    }

    pub fn projection(&self) -> Result<Projection> {
        let w = from_rows(&self.w)?;
        if w.nrows() != self.d_m || self.bias.len() != self.d_m {
            return Err(Error::DimensionMismatch {
                expected: self.d_m,
                actual: w.nrows(),
            });
        }
        Ok(Projection {
            w,
            bias: DVector::from_vec(self.bias.clone()),
        })
    }

    pub fn embeddings(&self) -> Result<ArmEmbeddings> {
        if self.theta_pref.len() != self.arms.len() || self.accuracy.len() != self.arms.len() {
            return Err(Error::DimensionMismatch {
                expected: self.arms.len(),
                actual: self.theta_pref.len(),
            });
        }
        let theta_pref = self
            .theta_pref
            .iter()
            .map(|t| {
                if t.len() == self.d_m {
                    Ok(DVector::from_vec(t.clone()))
                } else {
                    Err(Error::DimensionMismatch {
                        expected: self.d_m,
                        actual: t.len(),
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(ArmEmbeddings {
            theta_pref,
            accuracy: self.accuracy.clone(),
        })
    }

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
