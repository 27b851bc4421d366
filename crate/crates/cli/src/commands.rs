use std::fs;
use std::path::{Path, PathBuf};

use bandit_router::bandit::{PilotRouter, RouterCheckpoint};
use bandit_router::baselines::{Policy, RoutingPolicy, UcbPolicy};
use bandit_router::cost_policy::{estimate_bounds, CostPolicyConfig};
use bandit_router::data::{
    load_manifest, load_preferences, load_routing_dataset, sidecar_manifest_path, write_dataset,
    write_manifest, write_preferences, DataFormat, Dataset, Manifest, PreferenceRecord,
};
use bandit_router::experiment::{prepare, prepare_with_model, run_policy, Prepared, SweepResult};
use bandit_router::oful::run_suite;
use bandit_router::pretrain::{
    train_arm_embeddings, train_projection, ModelArtifact, PretrainHyperparams,
};
use bandit_router::replay::{
    distribution_shift_replay, project_dataset, run_deployment, run_learning, tune_hyperparams,
    ReplayReport,
};
use bandit_router::report::{
    emit_report, render_budget_table, render_regret_validation, render_spend_trace, write_text,
    SeriesKind,
};
use bandit_router::synthetic::Scenario;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::Command;

type Res<T> = Result<T, Failure>;

const SERIES: [SeriesKind; 3] = [SeriesKind::Regret, SeriesKind::Reward, SeriesKind::Width];

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> Res<&'static str> {
    fs::create_dir_all(&cfg.out).map_err(|e| Failure::from_io(&cfg.out, e))?;
    Ok(match cmd {
        Command::Synth => {
            synth(cfg)?;
            "synth"
        }
        Command::Pretrain(_) => {
            pretrain(cfg)?;
            "pretrain"
        }
        Command::Tune(_) => {
            tune(cfg)?;
            "tune"
        }
        Command::ReplayLearn(_) => {
            replay_learn(cfg)?;
            "replay-learn"
        }
        Command::ReplayDeploy { .. } => {
            replay_deploy(cfg)?;
            "replay-deploy"
        }
        Command::SweepBudget { .. } => {
            sweep(cfg)?;
            "sweep-budget"
        }
        Command::Shift { .. } => {
            shift(cfg)?;
            "shift"
        }
        Command::Report { .. } => {
            report(cfg)?;
            "report"
        }
        Command::ValidateRegret { .. } => {
            validate_regret(cfg)?;
            "validate-regret"
        }
    })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
}

/// The embedded config is the fully resolved one, so it alone replays the run.
pub fn write_run_manifest(command: &str, cfg: &RunConfig) -> Res<()> {
    let canonical = serde_json::to_vec(cfg).map_err(|e| Failure::config(e.to_string()))?;
    let m = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_sha256: hex::encode(Sha256::digest(&canonical)),
        config: cfg,
    };
    write_json(&cfg.out.join("run_manifest.json"), &m)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    text.push('\n');
    Ok(write_text(path, &text)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

// ── Loading ─────────────────────────────────────────────────────────────

fn manifest_for(cfg: &RunConfig, data: &Path) -> Res<Manifest> {
    let path = cfg
        .manifest
        .clone()
        .unwrap_or_else(|| sidecar_manifest_path(data));
    if !path.exists() {
        return Err(Failure::missing(&path));
    }
    Ok(load_manifest(&path)?)
}

fn load_data(cfg: &RunConfig, path: &Path) -> Res<(Dataset, Manifest)> {
    let manifest = manifest_for(cfg, path)?;
    let ds = load_routing_dataset(path, &manifest, DataFormat::from_path(path))?;
    Ok((ds, manifest))
}

fn load_prefs(cfg: &RunConfig, manifest: &Manifest) -> Res<Vec<PreferenceRecord>> {
    match &cfg.preferences {
        Some(p) => Ok(load_preferences(p, manifest)?),
        None => Ok(Vec::new()),
    }
}

fn load_model(path: &Path, manifest: &Manifest) -> Res<ModelArtifact> {
    let model = ModelArtifact::load(path)?;
    if model.arms != manifest.arms {
        return Err(Failure::config(format!(
            "{}: model arms do not match the dataset manifest",
            path.display()
        )));
    }
    Ok(model)
}

/// Dataset split and projected with the configured model, or one trained
/// from the preferences, or the identity when there is neither.
fn prepared(cfg: &RunConfig) -> Res<Prepared> {
    let data = cfg.require(&cfg.data, "data")?;
    let (ds, manifest) = load_data(cfg, data)?;
    match &cfg.model {
        Some(p) => {
            let m = load_model(p, &manifest)?;
            Ok(prepare_with_model(
                &ds,
                m.projection()?,
                Some(m.embeddings()?),
                &cfg.pipeline,
            )?)
        }
        None => Ok(prepare(&ds, &load_prefs(cfg, &manifest)?, &cfg.pipeline)?),
    }
}

fn emit_series(reports: &[ReplayReport], dir: &Path) -> Res<()> {
    for kind in SERIES {
        emit_report(reports, kind, dir)?;
    }
    Ok(())
}

fn hyperparams(cfg: &RunConfig) -> PretrainHyperparams {
    PretrainHyperparams {
        seed: cfg.pipeline.pretrain.seed ^ cfg.seed,
        ..cfg.pipeline.pretrain
    }
}

// ── Subcommands ─────────────────────────────────────────────────────────

fn synth(cfg: &RunConfig) -> Res<()> {
    let mut sc = Scenario::new(cfg.scenario.clone())?;
    let ds = sc.sample(cfg.synth.records)?.dataset;
    let prefs = sc.preferences(cfg.synth.preferences)?;
    let manifest = cfg.scenario.manifest();
    let data = cfg.out.join("data.jsonl");
    write_dataset(&ds, &data)?;
    write_manifest(&manifest, &sidecar_manifest_path(&data))?;
    write_preferences(&prefs, &manifest, &cfg.out.join("prefs.jsonl"))?;
    Ok(())
}

fn pretrain(cfg: &RunConfig) -> Res<()> {
    let prefs_path = cfg.require(&cfg.preferences, "preferences")?;
    let manifest = match (&cfg.manifest, &cfg.data) {
        (Some(m), _) => load_manifest(m)?,
        (None, Some(d)) => manifest_for(cfg, d)?,
        (None, None) => {
            return Err(Failure::config(
                "`manifest` or `data` is required for pretrain",
            ))
        }
    };
    let prefs = load_preferences(prefs_path, &manifest)?;
    let hp = hyperparams(cfg);
    let proj = train_projection(&prefs, &manifest.arms, cfg.pipeline.d_m, &hp)?;
    let emb = train_arm_embeddings(&prefs, &proj, manifest.arms.len(), &hp)?;
    ModelArtifact::new(&proj, &emb, &manifest.arms).save(&cfg.out.join("model.json"))?;
    Ok(())
}

fn tune(cfg: &RunConfig) -> Res<()> {
    let prep = prepared(cfg)?;
    let p = &cfg.pipeline;
    let res = tune_hyperparams(
        &cfg.policy,
        p.grid_for(&cfg.policy),
        prep.policy_context(cfg.seed),
        &prep.tuning_ctx,
        &prep.buckets.tuning,
        p.reward_mode,
    )?;
    write_json(&cfg.out.join("best_hyperparams.json"), &res)
}

fn replay_learn(cfg: &RunConfig) -> Res<()> {
    let prep = prepared(cfg)?;
    let mut policy = prep.policy_context(cfg.seed).build(&cfg.policy)?;
    let rep = run_learning(
        &mut policy,
        &prep.learning_ctx,
        &prep.buckets.learning,
        cfg.pipeline.reward_mode,
    )?;
    write_json(&cfg.out.join("learn_report.json"), &rep)?;
    emit_series(std::slice::from_ref(&rep), &cfg.out)?;
    if let Some(router) = policy.router() {
        router.checkpoint().save(&cfg.out.join("checkpoint.json"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DeploySummary {
    budget: Option<f64>,
    ub: f64,
    lb: f64,
    deployment_performance: f64,
    budget_used: f64,
    terminated_at: Option<usize>,
}

fn replay_deploy(cfg: &RunConfig) -> Res<()> {
    let prep = prepared(cfg)?;
    let b = &prep.buckets;
    let mut policy = match &cfg.checkpoint {
        Some(p) => {
            let router = PilotRouter::from_checkpoint(&RouterCheckpoint::load(p)?)?;
            if router.dim() != prep.projection.d_m() || router.num_arms() != b.deployment.num_arms()
            {
                return Err(Failure::config(format!(
                    "{}: checkpoint shape does not match the model and dataset",
                    p.display()
                )));
            }
            Policy::Pilot(UcbPolicy { router })
        }
        None => {
            let mut policy = prep.policy_context(cfg.seed).build(&cfg.policy)?;
            run_learning(
                &mut policy,
                &prep.learning_ctx,
                &b.learning,
                cfg.pipeline.reward_mode,
            )?;
            policy
        }
    };
    let mut probe = policy.clone();
    let (ub, lb) = estimate_bounds(&b.tuning.records, |i, _| {
        probe.reward_estimates(&prep.tuning_ctx[i])
    })?;
    let cost_cfg = cfg.budget.map(|budget| {
        let mut c =
            CostPolicyConfig::new(budget, b.deployment.len(), cfg.pipeline.bin_size, ub, lb);
        c.hard_budget = cfg.pipeline.hard_budget;
        c
    });
    let rep = run_deployment(
        &mut policy,
        &prep.deployment_ctx,
        &b.deployment,
        cost_cfg.as_ref(),
    )?;
    write_json(&cfg.out.join("deploy_report.json"), &rep)?;
    write_text(
        &cfg.out.join("spend_trace.csv"),
        &render_spend_trace(&rep.spend_trace)?,
    )?;
    write_json(
        &cfg.out.join("deploy_summary.json"),
        &DeploySummary {
            budget: cfg.budget,
            ub,
            lb,
            deployment_performance: rep.deployment_performance,
            budget_used: rep.budget_used,
            terminated_at: rep.terminated_at,
        },
    )
}

fn sweep(cfg: &RunConfig) -> Res<()> {
    if cfg.policies.is_empty() {
        return Err(Failure::config("`policies` is empty"));
    }
    let prep = prepared(cfg)?;
    let outcomes = cfg
        .policies
        .iter()
        .map(|s| run_policy(&prep, s, &cfg.budgets, &cfg.pipeline))
        .collect::<Result<Vec<_>, _>>()?;
    let res = SweepResult {
        oracle_performance: prep.buckets.deployment.oracle_performance(),
        oracle_spend: prep.buckets.deployment.oracle_spend(),
        outcomes,
    };
    write_text(
        &cfg.out.join("budget_table.csv"),
        &render_budget_table(&res)?,
    )?;
    write_json(&cfg.out.join("sweep.json"), &res)
}

fn shift(cfg: &RunConfig) -> Res<()> {
    let s = &cfg.shift;
    let (a, b, manifest, prefs) = match (&s.stream_a, &s.stream_b) {
        (Some(pa), Some(pb)) => {
            let (a, manifest) = load_data(cfg, pa)?;
            let b = load_routing_dataset(pb, &manifest, DataFormat::from_path(pb))?;
            let prefs = load_prefs(cfg, &manifest)?;
            (a, b, manifest, prefs)
        }
        (None, None) => {
            let mut sc = Scenario::new(cfg.scenario.clone())?;
            let prefs = sc.preferences(cfg.synth.preferences)?;
            let (a, b) = sc.shift_streams(s.n_a, s.n_b)?;
            (a.dataset, b.dataset, cfg.scenario.manifest(), prefs)
        }
        _ => {
            return Err(Failure::config(
                "shift needs both `stream_a` and `stream_b`, or neither",
            ))
        }
    };
    let (proj, emb) = match &cfg.model {
        Some(p) => {
            let m = load_model(p, &manifest)?;
            (m.projection()?, m.embeddings()?)
        }
        None => {
            if prefs.is_empty() {
                return Err(Failure::config(
                    "shift on data files needs `preferences` or `model`",
                ));
            }
            let hp = hyperparams(cfg);
            let proj = train_projection(&prefs, &manifest.arms, cfg.pipeline.d_m, &hp)?;
            let emb = train_arm_embeddings(&prefs, &proj, manifest.arms.len(), &hp)?;
            (proj, emb)
        }
    };
    let spec = cfg.policy.with_param(s.alpha);
    let mut policy = spec.build(manifest.arms.len(), proj.d_m(), Some(&emb), cfg.seed)?;
    let ca = project_dataset(&proj, &a)?;
    let cb = project_dataset(&proj, &b)?;
    let rep = distribution_shift_replay(
        &mut policy,
        (&ca, &a),
        (&cb, &b),
        s.window,
        cfg.pipeline.reward_mode,
    )?;
    emit_series(std::slice::from_ref(&rep.report), &cfg.out)?;
    write_json(&cfg.out.join("shift.json"), &rep)
}

fn report(cfg: &RunConfig) -> Res<()> {
    if cfg.reports.is_empty() {
        return Err(Failure::config("`report` needs at least one --input"));
    }
    let reports = cfg
        .reports
        .iter()
        .map(|p: &PathBuf| read_json::<ReplayReport>(p))
        .collect::<Res<Vec<_>>>()?;
    emit_report(&reports, cfg.series, &cfg.out)?;
    Ok(())
}

fn validate_regret(cfg: &RunConfig) -> Res<()> {
    let summary = run_suite(&cfg.regret)?;
    write_text(
        &cfg.out.join("regret_validation.csv"),
        &render_regret_validation(&summary)?,
    )?;
    #[derive(Serialize)]
    struct Brief {
        mean_gap: f64,
        gap_stderr: f64,
        final_regret_oful: f64,
        final_regret_pi_oful: f64,
        bound_oful: f64,
        bound_pi_oful: f64,
    }
    write_json(
        &cfg.out.join("regret_summary.json"),
        &Brief {
            mean_gap: summary.mean_gap,
            gap_stderr: summary.gap_stderr,
            final_regret_oful: *summary.oful.mean.last().unwrap_or(&0.0),
            final_regret_pi_oful: *summary.pi_oful.mean.last().unwrap_or(&0.0),
            bound_oful: summary.bound_oful,
            bound_pi_oful: summary.bound_pi_oful,
        },
    )
}
