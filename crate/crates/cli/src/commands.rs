use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde_json::json;
use txrl_core::data::{write_csv, write_jsonl};
use txrl_core::eval::{action_distribution_by_label, qvalue_mortality_curve};
use txrl_core::mdp::greedy_policy;
use txrl_core::sim::write_truth_csv;
use txrl_core::uncertainty::{episode_report, rejection_fraction, verdict_table, write_episode_report_csv, write_verdicts_csv};
use txrl_core::{
    bootstrap_ensemble, build_ground_truth, fit_pipeline, homogeneity_comparison, refit_with_reward, simulate_cohort,
    validate_dataset, BootstrapEnsemble, GridChoice, ModelBundle, PipelineConfig, RewardMode, N_ACTIONS,
};

use crate::config::{self, FileConfig, Resolved};
use crate::io::{read_dataset, read_json, usage, write_json, write_with};
use crate::reports::{self, write_sidecar, Table};
use crate::Common;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridArg {
    Fit,
    Reference,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Strength of the severity-to-dose confound in [0, 1].
    #[arg(long)]
    confound: Option<f64>,
    /// Emit the phenotype-separating feature dimensions.
    #[arg(long)]
    observable: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Transition log (CSV, or JSONL by extension).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k_cca: Option<usize>,
    /// Fixed number of states; omit to select by the AIC elbow.
    #[arg(long)]
    k_states: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `terminal` or `intermediate`.
    #[arg(long)]
    reward: Option<String>,
    #[arg(long, value_enum)]
    grid: Option<GridArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// `model.json` written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// `ensemble.json` written by `bootstrap`.
    #[arg(long)]
    ensemble: PathBuf,
    /// Number of Q-value bins for the mortality curve.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ensemble: PathBuf,
    /// Episodes to annotate, in the transition-log format.
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// Loads the config file, prepares the output directory and the thread pool.
fn setup(common: &Common) -> anyhow::Result<config::Loaded> {
    let mut loaded = config::load(common.config.as_deref())?;
    if let Some(n) = common.threads {
        loaded.config.threads = Some(n);
    }
    if let Some(n) = loaded.config.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // A second initialisation only happens in-process (tests) and is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&common.out)
        .map_err(txrl_core::Error::from)
        .with_context(|| format!("creating {}", common.out.display()))?;
    Ok(loaded)
}

fn load_bundle(path: &Path) -> anyhow::Result<ModelBundle> {
    read_json(path)
}

fn load_ensemble(path: &Path, bundle: &ModelBundle) -> anyhow::Result<BootstrapEnsemble> {
    let ens: BootstrapEnsemble = read_json(path)?;
    if ens.n_states != bundle.n_states() || ens.n_actions != N_ACTIONS {
        return Err(txrl_core::Error::InvalidData(format!(
            "ensemble has {} states, model has {}",
            ens.n_states,
            bundle.n_states()
        ))
        .into());
    }
    Ok(ens)
}

/// Pipeline settings for stages that consume a bundle: the config file's
/// pipeline section if present, else the settings the bundle was fitted with.
fn bundle_pipeline(loaded: &config::Loaded, bundle: &ModelBundle) -> PipelineConfig {
    if loaded.has_pipeline {
        loaded.config.pipeline.clone()
    } else {
        bundle.config.clone()
    }
}

pub fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let loaded = setup(&args.common)?;
    let mut cfg = loaded.config;
    let sim = &mut cfg.sim;
    if let Some(n) = args.patients {
        sim.n_patients = n;
    }
    if let Some(n) = args.max_steps {
        sim.max_steps = n;
    }
    if let Some(c) = args.confound {
        sim.confound = c;
    }
    if let Some(o) = args.observable {
        sim.observable = o;
    }
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    sim.validate()?;
    if !loaded.has_pipeline {
        cfg.pipeline = PipelineConfig::simulated(cfg.sim.seed);
    }

    let out = &args.common.out;
    let hash = config::write_resolved(
        out,
        &Resolved {
            command: "simulate",
            inputs: BTreeMap::new(),
            config: &cfg,
        },
    )?;
    let gt = build_ground_truth(&cfg.sim)?;
    let cohort = simulate_cohort(&gt, &cfg.sim)?;
    match args.format {
        Format::Csv => write_with(&out.join("cohort.csv"), |w| write_csv(&cohort.dataset, w))?,
        Format::Jsonl => write_with(&out.join("cohort.jsonl"), |w| write_jsonl(&cohort.dataset, w))?,
    }
    write_with(&out.join("truth.csv"), |w| write_truth_csv(&cohort.truth, w))?;
    write_json(
        &out.join("pipeline.json"),
        &FileConfig {
            sim: cfg.sim.clone(),
            pipeline: cfg.pipeline.clone(),
            threads: None,
        },
    )?;
    eprintln!(
        "simulated {} patients, {} transitions (config {})",
        cohort.dataset.n_patients(),
        cohort.dataset.n_transitions(),
        &hash[..12]
    );
    Ok(())
}

pub fn fit(args: FitArgs) -> anyhow::Result<()> {
    let loaded = setup(&args.common)?;
    let mut cfg = loaded.config;
    let p = &mut cfg.pipeline;
    if let Some(k) = args.k_cca {
        p.state.k_cca = k;
    }
    if let Some(k) = args.k_states {
        p.state.k_states = Some(k);
    }
    if let Some(g) = args.gamma {
        p.solver.gamma = g;
    }
    if let Some(r) = &args.reward {
        p.reward.mode = r.parse::<RewardMode>()?;
    }
    if let Some(g) = args.grid {
        p.action_grid = match g {
            GridArg::Fit => GridChoice::Fit,
            GridArg::Reference => GridChoice::Reference,
        };
    }
    if let Some(s) = args.seed {
        p.seed = s;
        p.state.seed = s;
        p.bootstrap.seed = s;
    }
    p.validate()?;

    let out = &args.common.out;
    let hash = config::write_resolved(
        out,
        &Resolved {
            command: "fit",
            inputs: BTreeMap::from([("data", path_string(&args.data))]),
            config: &cfg,
        },
    )?;
    let ds = read_dataset(&args.data)?;
    let fit = fit_pipeline(&ds, &cfg.pipeline)?;
    let b = &fit.bundle;
    write_json(&out.join("model.json"), b)?;
    write_json(
        &out.join("fit_summary.json"),
        &json!({
            "patients": ds.n_patients(),
            "transitions": ds.n_transitions(),
            "n_states": b.n_states(),
            "k_selected_by_elbow": b.aic_curve.is_some(),
            "fluid_cutoffs": b.action_grid.fluid_cutoffs(),
            "vis_cutoffs": b.action_grid.vis_cutoffs(),
            "solver_iterations": b.q.iterations,
            "solver_residual": b.q.residual,
        }),
    )?;
    if let Some(curve) = &b.aic_curve {
        let mut t = Table::new("aic_curve", &["k", "aic"]);
        for &(k, aic) in curve {
            t.push(vec![k.to_string(), reports::num(aic)]);
        }
        t.write(out, &hash, json!({ "selected_k": b.n_states() }))?;
    }
    if let Some(m) = &b.risk_metrics {
        write_json(&out.join("risk_metrics.json"), m)?;
        let mut roc = Table::new("roc_curve", &["threshold", "fpr", "tpr"]);
        for pt in &m.roc_points {
            roc.push(vec![reports::num(pt.threshold), reports::num(pt.fpr), reports::num(pt.tpr)]);
        }
        let mut pr = Table::new("pr_curve", &["threshold", "precision", "recall"]);
        for pt in &m.pr_points {
            pr.push(vec![reports::num(pt.threshold), reports::num(pt.precision), reports::num(pt.recall)]);
        }
        let summary = json!({ "auc": m.auc, "threshold": m.threshold });
        roc.write(out, &hash, summary.clone())?;
        pr.write(out, &hash, summary)?;
    }
    eprintln!("fitted {} states on {} transitions", b.n_states(), ds.n_transitions());
    Ok(())
}

pub fn bootstrap(args: BootstrapArgs) -> anyhow::Result<()> {
    let loaded = setup(&args.common)?;
    let bundle = load_bundle(&args.model)?;
    let mut cfg = loaded.config.clone();
    cfg.pipeline = bundle_pipeline(&loaded, &bundle);
    let p = &mut cfg.pipeline;
    if let Some(b) = args.iterations {
        p.bootstrap.iterations = b;
    }
    if let Some(a) = args.alpha {
        p.alpha = a;
    }
    if let Some(s) = args.seed {
        p.bootstrap.seed = s;
    }
    p.validate()?;

    let out = &args.common.out;
    let hash = config::write_resolved(
        out,
        &Resolved {
            command: "bootstrap",
            inputs: BTreeMap::from([("data", path_string(&args.data)), ("model", path_string(&args.model))]),
            config: &cfg,
        },
    )?;
    let ds = read_dataset(&args.data)?;
    let tagged = bundle.tag(&ds)?;
    let p = &cfg.pipeline;
    let ens = bootstrap_ensemble(&tagged, bundle.n_states(), N_ACTIONS, &p.solver, &p.bootstrap)?;
    let table = verdict_table(&ens, p.alpha)?;
    write_json(&out.join("ensemble.json"), &ens)?;
    write_with(&out.join("verdicts.csv"), |w| write_verdicts_csv(&table, w))?;
    let visited = table.iter().filter(|v| v.is_some()).count();
    write_sidecar(
        out,
        "verdicts",
        &hash,
        &["state", "action", "fluid_bin", "vaso_bin", "status", "p_value", "ci_low", "ci_high", "q_point"],
        visited * N_ACTIONS,
        json!({
            "iterations": p.bootstrap.iterations,
            "replicates_kept": ens.replicates.len(),
            "replicates_discarded": ens.discarded,
            "alpha": p.alpha,
            "visited_states": visited,
            "clinician_rejection_fraction": rejection_fraction(&table, &tagged),
        }),
    )?;
    eprintln!(
        "bootstrap kept {} of {} replicates",
        ens.replicates.len(),
        p.bootstrap.iterations
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let loaded = setup(&args.common)?;
    if args.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let bundle = load_bundle(&args.model)?;
    let ens = load_ensemble(&args.ensemble, &bundle)?;
    let mut cfg = loaded.config.clone();
    cfg.pipeline = bundle_pipeline(&loaded, &bundle);
    cfg.pipeline.validate()?;

    let out = &args.common.out;
    let hash = config::write_resolved(
        out,
        &Resolved {
            command: "evaluate",
            inputs: BTreeMap::from([
                ("data", path_string(&args.data)),
                ("ensemble", path_string(&args.ensemble)),
                ("model", path_string(&args.model)),
            ]),
            config: &cfg,
        },
    )?;
    let ds = read_dataset(&args.data)?;
    let tagged = bundle.tag(&ds)?;

    let (cmp, values) = reports::policy_comparison(&ens)?;
    let names: Vec<&str> = cmp.policies.iter().map(|p| p.policy.as_str()).collect();
    values.write(
        out,
        &hash,
        json!({ "policies": names, "p_adjusted": cmp.p_adjusted, "n_comparisons": cmp.n_comparisons }),
    )?;
    write_json(&out.join("policy_comparison.json"), &cmp)?;

    let curve = qvalue_mortality_curve(&bundle.q, &tagged, args.bins)?;
    reports::qvalue_mortality(&curve).write(out, &hash, json!({ "spearman": curve.spearman }))?;

    let greedy = greedy_policy(&bundle.q);
    let clinician = action_distribution_by_label(None, &tagged)?;
    let ai = action_distribution_by_label(Some(&greedy), &tagged)?;
    reports::action_marginals("action_marginals", &[("clinician", &clinician), ("ai", &ai)]).write(
        out,
        &hash,
        json!({ "ai_vs_clinician_tv": reports::marginal_shift(&ai, &clinician) }),
    )?;

    let mode = bundle.config.reward.mode;
    let other_mode = match mode {
        RewardMode::TerminalOnly => RewardMode::TerminalPlusIntermediate,
        RewardMode::TerminalPlusIntermediate => RewardMode::TerminalOnly,
    };
    let other = refit_with_reward(&ds, &bundle, other_mode)?;
    let other_ai = action_distribution_by_label(Some(&greedy_policy(&other.bundle.q)), &other.tagged)?;
    let mode_name = |m: RewardMode| match m {
        RewardMode::TerminalOnly => "terminal",
        RewardMode::TerminalPlusIntermediate => "intermediate",
    };
    reports::action_marginals(
        "reward_modes",
        &[(mode_name(mode), &ai), (mode_name(other_mode), &other_ai)],
    )
    .write(out, &hash, json!({ "total_variation": reports::marginal_shift(&ai, &other_ai) }))?;

    let variants = homogeneity_comparison(&ds, &bundle, &tagged)?;
    let (top, occ) = reports::homogeneity(&variants);
    let summary = reports::homogeneity_summary(&variants);
    top.write(out, &hash, summary.clone())?;
    occ.write(out, &hash, summary)?;

    for p in &cmp.policies {
        eprintln!("{:<10} {:.4}", p.policy, p.value);
    }
    Ok(())
}

pub fn recommend(args: RecommendArgs) -> anyhow::Result<()> {
    let loaded = setup(&args.common)?;
    let bundle = load_bundle(&args.model)?;
    let ens = load_ensemble(&args.ensemble, &bundle)?;
    let mut cfg = loaded.config.clone();
    cfg.pipeline = bundle_pipeline(&loaded, &bundle);
    if let Some(a) = args.alpha {
        cfg.pipeline.alpha = a;
    }
    cfg.pipeline.validate()?;

    let out = &args.common.out;
    let hash = config::write_resolved(
        out,
        &Resolved {
            command: "recommend",
            inputs: BTreeMap::from([
                ("ensemble", path_string(&args.ensemble)),
                ("episodes", path_string(&args.episodes)),
                ("model", path_string(&args.model)),
            ]),
            config: &cfg,
        },
    )?;
    let ds = read_dataset(&args.episodes)?;
    let tagged = bundle.tag(&ds)?;
    let table = verdict_table(&ens, cfg.pipeline.alpha)?;
    let mut rows = Vec::new();
    for ep in &tagged {
        rows.extend(episode_report(&table, ep)?);
    }
    write_with(&out.join("recommendations.csv"), |w| write_episode_report_csv(&rows, w))?;
    let unvisited = rows.iter().filter(|r| r.state.is_none()).count();
    let mut columns = vec![
        "patient_id",
        "step",
        "state",
        "clinician_action",
        "clinician_fluid_bin",
        "clinician_vaso_bin",
        "status",
        "p_value",
        "recommended_action",
        "accepted_fluid_bins",
        "accepted_vaso_bins",
    ];
    let margin_cols: Vec<String> = (1..=txrl_core::N_FLUID_BINS)
        .map(|f| format!("fluid_{f}_min_p"))
        .chain((1..=txrl_core::N_VASO_BINS).map(|v| format!("vaso_{v}_min_p")))
        .collect();
    columns.extend(margin_cols.iter().map(String::as_str));
    write_sidecar(
        out,
        "recommendations",
        &hash,
        &columns,
        rows.len(),
        json!({ "episodes": tagged.len(), "alpha": cfg.pipeline.alpha, "unvisited_rows": unvisited }),
    )?;
    eprintln!("{} rows for {} episodes", rows.len(), tagged.len());
    Ok(())
}

pub fn validate(args: ValidateArgs) -> anyhow::Result<()> {
    let loaded = setup(&args.common)?;
    let out = &args.common.out;
    config::write_resolved(
        out,
        &Resolved {
            command: "validate",
            inputs: BTreeMap::from([("data", path_string(&args.data))]),
            config: &loaded.config,
        },
    )?;
    let ds = read_dataset(&args.data)?;
    let report = validate_dataset(&ds);
    write_json(&out.join("validation.json"), &report)?;
    eprintln!(
        "{} episodes, {} transitions, {} errors, {} warnings",
        report.episodes,
        report.transitions,
        report.error_count(),
        report.warning_count()
    );
    if report.error_count() > 0 {
        return Err(txrl_core::Error::InvalidData(format!("{} validation errors", report.error_count())).into());
    }
    Ok(())
}
