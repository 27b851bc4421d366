//! Routing and preference datasets.
//!
//! A routing dataset is a JSONL (or CSV) file of [`RoutingRecord`]s plus a
//! sidecar manifest declaring the embedding dimension and the arm pool:
//!
//! ```text
//! data.jsonl            {"query_id": "q1", "embedding": [...], "scores": [...], "costs": [...]}
//! data.manifest.json    {"d_e": 4, "arms": [{"name": "gpt-4", "size_rank": 3}, ...]}
//! ```
//!
//! Score and cost vectors are indexed by arm position in the manifest.
//! Datasets are immutable once loaded.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ── Arms ────────────────────────────────────────────────────────────────

/// Dense index of an arm (model) within the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(pub usize);

impl ArmId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for ArmId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Static description of one model in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmInfo {
    pub name: String,
    /// Rank of model size; smaller means a smaller (cheaper) model.
    pub size_rank: i64,
    /// Price per input token, when per-query costs are estimated from tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_output_tokens: Option<f64>,
}

impl ArmInfo {
    pub fn new(name: impl Into<String>, size_rank: i64) -> Self {
        Self {
            name: name.into(),
            size_rank,
            input_price: None,
            output_price: None,
            mean_output_tokens: None,
        }
    }
}

/// Sidecar manifest: embedding dimension plus the arm pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d_e: usize,
    pub arms: Vec<ArmInfo>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.d_e == 0 {
            return Err(Error::Manifest("d_e must be positive".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Manifest("arm pool is empty".into()));
        }
        let mut names = HashSet::new();
        let mut ranks = HashSet::new();
        for arm in &self.arms {
            if !names.insert(arm.name.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate arm name {:?}",
                    arm.name
                )));
            }
            if !ranks.insert(arm.size_rank) {
                return Err(Error::Manifest(format!(
                    "size_rank {} is not unique (arm {:?})",
                    arm.size_rank, arm.name
                )));
            }
        }
        Ok(())
    }

    pub fn arm_index(&self, name: &str) -> Result<ArmId> {
        self.arms
            .iter()
            .position(|a| a.name == name)
            .map(ArmId)
            .ok_or_else(|| Error::UnknownArm(name.to_string()))
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `data.jsonl` -> `data.manifest.json`.
pub fn sidecar_manifest_path(data_path: &Path) -> PathBuf {
    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data_path.with_file_name(format!("{stem}.manifest.json"))
}

// ── Records ─────────────────────────────────────────────────────────────

/// One query with full-information scores and costs for every arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub query_id: String,
    pub embedding: Vec<f64>,
    pub scores: Vec<f64>,
    pub costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_tag: Option<String>,
}

impl RoutingRecord {
    pub fn best_score(&self) -> f64 {
        self.scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index arm attaining the best score.
    pub fn best_arm(&self) -> ArmId {
        let best = self.best_score();
        ArmId(self.scores.iter().position(|&s| s == best).unwrap_or(0))
    }

    fn validate(&self, d_e: usize, k: usize, line: usize) -> Result<()> {
        if self.embedding.len() != d_e {
            return Err(Error::schema(
                line,
                format!("embedding length {} != d_e {}", self.embedding.len(), d_e),
            ));
        }
        if self.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::schema(line, "non-finite embedding value"));
        }
        if self.scores.len() != k {
            return Err(Error::schema(
                line,
                format!("scores length {} != arm count {}", self.scores.len(), k),
            ));
        }
        if self.costs.len() != k {
            return Err(Error::schema(
                line,
                format!("costs length {} != arm count {}", self.costs.len(), k),
            ));
        }
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::schema(line, "score out of range"));
        }
        if self.costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::schema(line, "negative or non-finite cost"));
        }
        Ok(())
    }
}

/// One pairwise human preference between two arms on a query.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub query_id: String,
    pub embedding: Vec<f64>,
    pub arm_i: ArmId,
    pub arm_j: ArmId,
    pub winner: ArmId,
}

impl PreferenceRecord {
    pub fn involves(&self, arm: ArmId) -> bool {
        self.arm_i == arm || self.arm_j == arm
    }

    /// The other participant, if `arm` took part.
    pub fn opponent(&self, arm: ArmId) -> Option<ArmId> {
        if self.arm_i == arm {
            Some(self.arm_j)
        } else if self.arm_j == arm {
            Some(self.arm_i)
        } else {
            None
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PreferenceLine {
    query_id: String,
    embedding: Vec<f64>,
    arm_i: String,
    arm_j: String,
    winner: String,
}

// ── Dataset ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<RoutingRecord>,
    pub arms: Vec<ArmInfo>,
    pub d_e: usize,
    /// Seed of the split that produced this bucket, if any.
    pub split_seed: Option<u64>,
}

impl Dataset {
    pub fn new(records: Vec<RoutingRecord>, manifest: &Manifest) -> Result<Self> {
        manifest.validate()?;
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = manifest.arms.len();
        for (i, r) in records.iter().enumerate() {
            r.validate(manifest.d_e, k, i + 1)?;
        }
        Ok(Self {
            records,
            arms: manifest.arms.clone(),
            d_e: manifest.d_e,
            split_seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            d_e: self.d_e,
            arms: self.arms.clone(),
        }
    }

    /// Same arm pool, different records.
    pub fn with_records(&self, records: Vec<RoutingRecord>) -> Self {
        Self {
            records,
            arms: self.arms.clone(),
            d_e: self.d_e,
            split_seed: self.split_seed,
        }
    }

    pub fn prefix(&self, n: usize) -> Self {
        self.with_records(self.records[..n.min(self.len())].to_vec())
    }

    /// Mean of the per-query best score.
    pub fn oracle_performance(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records
            .iter()
            .map(RoutingRecord::best_score)
            .sum::<f64>()
            / self.len() as f64
    }

    /// Spend when every query goes to its best-scoring arm.
    pub fn oracle_spend(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.costs[r.best_arm().index()])
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// Loads and validates a routing dataset, preserving file order.
///
/// Errors name the 1-based line of the offending record.
pub fn load_routing_dataset(
    path: &Path,
    manifest: &Manifest,
    format: DataFormat,
) -> Result<Dataset> {
    manifest.validate()?;
    let records = match format {
        DataFormat::Jsonl => read_jsonl_records(path, manifest)?,
        DataFormat::Csv => read_csv_records(path, manifest)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        records,
        arms: manifest.arms.clone(),
        d_e: manifest.d_e,
        split_seed: None,
    })
}

fn read_jsonl_records(path: &Path, manifest: &Manifest) -> Result<Vec<RoutingRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let k = manifest.arms.len();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RoutingRecord =
            serde_json::from_str(&line).map_err(|e| Error::schema(line_no, e.to_string()))?;
        rec.validate(manifest.d_e, k, line_no)?;
        out.push(rec);
    }
    Ok(out)
}

/// CSV columns: `query_id`, optional `task_tag`, `emb_0..emb_{d_e-1}`,
/// `score:<arm>` and `cost:<arm>` for every arm in the manifest.
fn read_csv_records(path: &Path, manifest: &Manifest) -> Result<Vec<RoutingRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::schema(1, format!("{other:?}")),
        })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::schema(1, format!("missing column {name:?}"));

    let qid_col = col("query_id").ok_or_else(|| missing("query_id"))?;
    let tag_col = col("task_tag");
    let emb_cols = (0..manifest.d_e)
        .map(|i| {
            let name = format!("emb_{i}");
            col(&name).ok_or_else(|| missing(&name))
        })
        .collect::<Result<Vec<_>>>()?;
    let score_cols = manifest
        .arms
        .iter()
        .map(|a| {
            let name = format!("score:{}", a.name);
            col(&name).ok_or_else(|| missing(&name))
        })
        .collect::<Result<Vec<_>>>()?;
    let cost_cols = manifest
        .arms
        .iter()
        .map(|a| {
            let name = format!("cost:{}", a.name);
            col(&name).ok_or_else(|| missing(&name))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line_no = i + 2;
        let row = row.map_err(|e| Error::schema(line_no, e.to_string()))?;
        let field = |c: usize| -> Result<f64> {
            let raw = row.get(c).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| {
                Error::schema(
                    line_no,
                    format!("bad number {raw:?} in column {:?}", &headers[c]),
                )
            })
        };
        let rec = RoutingRecord {
            query_id: row.get(qid_col).unwrap_or("").to_string(),
            embedding: emb_cols.iter().map(|&c| field(c)).collect::<Result<_>>()?,
            scores: score_cols
                .iter()
                .map(|&c| field(c))
                .collect::<Result<_>>()?,
            costs: cost_cols.iter().map(|&c| field(c)).collect::<Result<_>>()?,
            task_tag: tag_col
                .and_then(|c| row.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        };
        rec.validate(manifest.d_e, manifest.arms.len(), line_no)?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records as JSONL, one object per line.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &ds.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_preferences(path: &Path, manifest: &Manifest) -> Result<Vec<PreferenceRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PreferenceLine =
            serde_json::from_str(&line).map_err(|e| Error::schema(line_no, e.to_string()))?;
        let resolve = |name: &str| {
            manifest
                .arm_index(name)
                .map_err(|_| Error::schema(line_no, format!("unknown arm {name:?}")))
        };
        let rec = PreferenceRecord {
            query_id: raw.query_id,
            embedding: raw.embedding,
            arm_i: resolve(&raw.arm_i)?,
            arm_j: resolve(&raw.arm_j)?,
            winner: resolve(&raw.winner)?,
        };
        validate_preference(&rec, manifest.d_e, line_no)?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn write_preferences(
    prefs: &[PreferenceRecord],
    manifest: &Manifest,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let name = |a: ArmId| manifest.arms[a.index()].name.clone();
    for p in prefs {
        let line = PreferenceLine {
            query_id: p.query_id.clone(),
            embedding: p.embedding.clone(),
            arm_i: name(p.arm_i),
            arm_j: name(p.arm_j),
            winner: name(p.winner),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn validate_preference(p: &PreferenceRecord, d_e: usize, line: usize) -> Result<()> {
    if p.arm_i == p.arm_j {
        return Err(Error::schema(line, "arm_i equals arm_j"));
    }
    if p.winner != p.arm_i && p.winner != p.arm_j {
        return Err(Error::schema(line, "winner is neither arm_i nor arm_j"));
    }
    if p.embedding.len() != d_e {
        return Err(Error::schema(
            line,
            format!("embedding length {} != d_e {}", p.embedding.len(), d_e),
        ));
    }
    Ok(())
}

// ── Splitting ───────────────────────────────────────────────────────────

/// Tuning, learning and deployment buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct Buckets {
    pub tuning: Dataset,
    pub learning: Dataset,
    pub deployment: Dataset,
}

/// Shuffles with `seed`, takes `tuning_n` records for tuning, then splits the
/// rest `learn_ratio : deploy_ratio`. The deployment bucket gets
/// `floor(rest * deploy_ratio / (learn_ratio + deploy_ratio))` records and the
/// learning bucket keeps the remainder.
pub fn split_buckets(
    d: &Dataset,
    tuning_n: usize,
    learn_ratio: usize,
    deploy_ratio: usize,
    seed: u64,
) -> Result<Buckets> {
    if tuning_n >= d.len() {
        return Err(Error::InvalidSplit(format!(
            "tuning_n {} must be smaller than the dataset size {}",
            tuning_n,
            d.len()
        )));
    }
    if learn_ratio == 0 || deploy_ratio == 0 {
        return Err(Error::InvalidSplit("ratios must be positive".into()));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let rest = d.len() - tuning_n;
    let n_deploy = rest * deploy_ratio / (learn_ratio + deploy_ratio);
    let n_learn = rest - n_deploy;

    let take = |idx: &[usize]| -> Dataset {
        let mut bucket = d.with_records(idx.iter().map(|&i| d.records[i].clone()).collect());
        bucket.split_seed = Some(seed);
        bucket
    };
    Ok(Buckets {
        tuning: take(&order[..tuning_n]),
        learning: take(&order[tuning_n..tuning_n + n_learn]),
        deployment: take(&order[tuning_n + n_learn..]),
    })
}
