//! Deterministic CSV emission for replay series, spend traces, budget tables
//! and regret-validation curves. Each file starts with a `# columns:` comment
//! row followed by the CSV header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost_policy::SpendRow;
use crate::error::{Error, Result};
use crate::experiment::SweepResult;
use crate::oful::{curve_stats, SuiteSummary};
use crate::replay::ReplayReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    /// Cumulative regret.
    Regret,
    /// Per-step served score.
    Reward,
    /// Chosen arm's posterior std; blank for policies without one.
    Width,
}

impl SeriesKind {
    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::Regret => "regret",
            SeriesKind::Reward => "reward",
            SeriesKind::Width => "width",
        }
    }

    fn series(self, rep: &ReplayReport) -> Vec<f64> {
        match self {
            SeriesKind::Regret => rep.regret_curve.clone(),
            SeriesKind::Reward => rep.reward_by_step.clone(),
            SeriesKind::Width => rep
                .exploration_width
                .iter()
                .map(|w| w.unwrap_or(f64::NAN))
                .collect(),
        }
    }
}

fn render(columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    let body = String::from_utf8(body).map_err(|e| Error::Config(format!("csv utf-8: {e}")))?;
    Ok(format!("# columns: {}\n{body}", columns.join(",")))
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

/// Seed-aggregated series: `t, mean, stderr, n`. All reports must have the
/// same number of steps.
pub fn render_series(reports: &[ReplayReport], kind: SeriesKind) -> Result<String> {
    let first = reports.first().ok_or(Error::EmptyDataset)?;
    if let Some(bad) = reports.iter().find(|r| r.steps != first.steps) {
        return Err(Error::DimensionMismatch {
            expected: first.steps,
            actual: bad.steps,
        });
    }
    let series: Vec<Vec<f64>> = reports.iter().map(|r| kind.series(r)).collect();
    let stats = curve_stats(&series);
    let n = reports.len();
    let cols = ["t", "mean", "stderr", "n"];
    render(
        &cols,
        stats
            .mean
            .iter()
            .zip(&stats.stderr)
            .enumerate()
            .map(|(t, (m, s))| vec![(t + 1).to_string(), num(*m), num(*s), n.to_string()]),
    )
}

pub fn render_spend_trace(rows: &[SpendRow]) -> Result<String> {
    render(
        &["t", "bin", "chosen_arm", "cost", "B_left", "z"],
        rows.iter().map(|r| {
            vec![
                r.t.to_string(),
                r.bin.to_string(),
                r.chosen_arm.to_string(),
                num(r.cost),
                num(r.b_left),
                num(r.z),
            ]
        }),
    )
}

/// One row per (policy, budget).
pub fn render_budget_table(sweep: &SweepResult) -> Result<String> {
    if sweep.outcomes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    for o in &sweep.outcomes {
        for r in &o.budget_rows {
            rows.push(vec![
                o.spec.name().to_string(),
                o.spec.param().map(num).unwrap_or_default(),
                num(r.budget),
                num(r.performance),
                num(r.performance / sweep.oracle_performance),
                num(r.budget_used),
                r.terminated.to_string(),
            ]);
        }
    }
    render(
        &[
            "policy",
            "param",
            "budget",
            "performance",
            "fraction_of_oracle",
            "budget_used",
            "terminated",
        ],
        rows,
    )
}

/// `t, regret_oful_mean, regret_oful_stderr, regret_pioful_mean, regret_pioful_stderr`.
pub fn render_regret_validation(s: &SuiteSummary) -> Result<String> {
    if s.oful.mean.is_empty() {
        return Err(Error::EmptyDataset);
    }
    render(
        &[
            "t",
            "regret_oful_mean",
            "regret_oful_stderr",
            "regret_pioful_mean",
            "regret_pioful_stderr",
        ],
        (0..s.oful.mean.len()).map(|t| {
            vec![
                (t + 1).to_string(),
                num(s.oful.mean[t]),
                num(s.oful.stderr[t]),
                num(s.pi_oful.mean[t]),
                num(s.pi_oful.stderr[t]),
            ]
        }),
    )
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Writes `<dir>/<kind>.csv` for the given seed-replicated reports.
pub fn emit_report(
    reports: &[ReplayReport],
    kind: SeriesKind,
    dir: &Path,
) -> Result<std::path::PathBuf> {
    let text = render_series(reports, kind)?;
    let path = dir.join(format!("{}.csv", kind.name()));
    write_text(&path, &text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(rewards: &[f64]) -> ReplayReport {
        let mut cum = 0.0;
        let regret_curve = rewards
            .iter()
            .map(|r| {
                cum += 1.0 - r;
                cum
            })
            .collect();
        ReplayReport {
            cumulative_reward: rewards.iter().sum(),
            cumulative_regret: cum,
            regret_curve,
            reward_by_step: rewards.to_vec(),
            arm_counts: vec![rewards.len()],
            spend_trace: Vec::new(),
            deployment_performance: 0.0,
            budget_used: 0.0,
            steps: rewards.len(),
            terminated_at: None,
            exploration_width: vec![Some(0.5); rewards.len()],
            covariance_trace: vec![None; rewards.len()],
        }
    }

    #[test]
    fn one_report_one_row_per_point() {
        let text = render_series(&[rep(&[0.5, 1.0, 0.25])], SeriesKind::Reward).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# columns: t,mean,stderr,n");
        assert_eq!(lines[1], "t,mean,stderr,n");
        assert_eq!(lines.len(), 2 + 3);
        assert_eq!(lines[2], "1,0.5,0,1");
    }

    #[test]
    fn aggregates_mean_and_stderr() {
        let text = render_series(&[rep(&[0.0]), rep(&[1.0])], SeriesKind::Reward).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "1,0.5,0.5,2");
    }

    #[test]
    fn empty_and_ragged_inputs_fail() {
        assert!(render_series(&[], SeriesKind::Regret).is_err());
        assert!(render_series(&[rep(&[0.1]), rep(&[0.1, 0.2])], SeriesKind::Regret).is_err());
    }

    #[test]
    fn emission_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let reps = [rep(&[0.3, 0.7]), rep(&[0.9, 0.1])];
        let p = emit_report(&reps, SeriesKind::Regret, dir.path()).unwrap();
        let first = fs::read(&p).unwrap();
        emit_report(&reps, SeriesKind::Regret, dir.path()).unwrap();
        assert_eq!(first, fs::read(&p).unwrap());
    }
}
