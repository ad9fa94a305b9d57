//! Patient-level bootstrap of the action-value function and per-action
//! accept/reject verdicts against the recommended action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionId, N_FLUID_BINS, N_VASO_BINS};
use crate::error::{Error, Result};
use crate::eval::{standard_policy_values, start_distribution, PolicyValues};
use crate::mdp::{estimate_mdp, flatten, solve_q_optimal, QTable, SolverConfig, TaggedEpisode};
use crate::state::StateId;
use crate::stats::{percentile_sorted, rank_sum_test};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Fail when more than this fraction of replicates is unusable.
    pub max_discard_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: 100,
            seed: 0,
            max_discard_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    /// Resampled episode indices, with repetition.
    pub patients: Vec<usize>,
    pub q: QTable,
    /// Policy values on this replicate's MDP and start distribution.
    pub policy_values: PolicyValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub point: QTable,
    pub point_policy_values: PolicyValues,
    pub replicates: Vec<Replicate>,
    /// Replicate indices dropped because no start state had an observed action.
    pub discarded: Vec<usize>,
}

impl BootstrapEnsemble {
    /// Values of `q(s, a)` across replicates where the pair was observed.
    pub fn samples(&self, s: StateId, a: usize) -> Vec<f64> {
        self.replicates.iter().filter_map(|r| r.q.get(s, a)).collect()
    }
}

fn resample(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

enum ReplicateOutcome {
    Kept(Replicate),
    Discarded(usize),
}

fn run_replicate(
    episodes: &[TaggedEpisode],
    n_states: usize,
    n_actions: usize,
    solver: &SolverConfig,
    seed: u64,
    b: usize,
) -> Result<ReplicateOutcome> {
    let patients = resample(episodes.len(), seed, b);
    let sample: Vec<TaggedEpisode> = patients.iter().map(|&i| episodes[i].clone()).collect();
    let mdp = estimate_mdp(flatten(&sample), n_states, n_actions)?;
    let start = start_distribution(&sample, n_states)?;
    let supported = start
        .probs
        .iter()
        .enumerate()
        .any(|(s, &p)| p > 0.0 && mdp.observed_actions(s).next().is_some());
    if !supported {
        return Ok(ReplicateOutcome::Discarded(b));
    }
    let q = solve_q_optimal(&mdp, solver)?;
    let policy_values = standard_policy_values(&mdp, &q, &sample, &start, solver)?;
    Ok(ReplicateOutcome::Kept(Replicate {
        index: b,
        patients,
        q,
        policy_values,
    }))
}

/// Resamples whole episodes with replacement `cfg.iterations` times and
/// re-solves the MDP on each resample. State, action and reward tags are
/// held fixed. Replicate `b` draws from stream `b` of a ChaCha8 generator
/// seeded with `cfg.seed`, so the result does not depend on thread count.
pub fn bootstrap_ensemble(
    episodes: &[TaggedEpisode],
    n_states: usize,
    n_actions: usize,
    solver: &SolverConfig,
    cfg: &BootstrapConfig,
) -> Result<BootstrapEnsemble> {
    if cfg.iterations < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 iterations".into()));
    }
    if episodes.is_empty() {
        return Err(Error::InvalidData("bootstrap needs at least one patient".into()));
    }
    let mdp = estimate_mdp(flatten(episodes), n_states, n_actions)?;
    let point = solve_q_optimal(&mdp, solver)?;
    let start = start_distribution(episodes, n_states)?;
    let point_policy_values = standard_policy_values(&mdp, &point, episodes, &start, solver)?;

    let outcomes: Vec<ReplicateOutcome> = (0..cfg.iterations)
        .into_par_iter()
        .map(|b| run_replicate(episodes, n_states, n_actions, solver, cfg.seed, b))
        .collect::<Result<_>>()?;
    let mut replicates = Vec::with_capacity(cfg.iterations);
    let mut discarded = Vec::new();
    for o in outcomes {
        match o {
            ReplicateOutcome::Kept(r) => replicates.push(r),
            ReplicateOutcome::Discarded(b) => discarded.push(b),
        }
    }
    if discarded.len() as f64 > cfg.max_discard_fraction * cfg.iterations as f64 || replicates.len() < 2 {
        return Err(Error::Numerical(format!(
            "{} of {} bootstrap replicates discarded",
            discarded.len(),
            cfg.iterations
        )));
    }
    Ok(BootstrapEnsemble {
        seed: cfg.seed,
        n_states,
        n_actions,
        point,
        point_policy_values,
        replicates,
        discarded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Recommended,
    Accepted,
    Rejected,
    Unobserved,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictStatus::Recommended => "recommended",
            VerdictStatus::Accepted => "accepted",
            VerdictStatus::Rejected => "rejected",
            VerdictStatus::Unobserved => "unobserved",
        }
    }

    pub fn is_acceptable(self) -> bool {
        matches!(self, VerdictStatus::Recommended | VerdictStatus::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub state: StateId,
    pub action: ActionId,
    pub status: VerdictStatus,
    pub p_value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub q_point: Option<f64>,
    pub n_replicates: usize,
}

/// Verdict for every action in `state`. Each observed non-recommended
/// action's replicate values are tested against the recommendation's with
/// a one-sided rank-sum test at level `alpha / (observed - 1)`.
pub fn action_verdicts(ens: &BootstrapEnsemble, state: StateId, alpha: f64) -> Result<Vec<Verdict>> {
    if state >= ens.n_states {
        return Err(Error::InvalidArgument(format!("state {state} is not a transient state")));
    }
    let Some((rec, _)) = ens.point.best(state) else {
        return Err(Error::InvalidArgument(format!("state {state} was never visited")));
    };
    let observed = ens.point.observed_actions(state).count();
    let threshold = alpha / (observed - 1).max(1) as f64;
    let rec_samples = ens.samples(state, rec);
    let mut out = Vec::with_capacity(ens.n_actions);
    for a in 0..ens.n_actions {
        let action = ActionId::new(a)?;
        let q_point = ens.point.get(state, a);
        if q_point.is_none() {
            out.push(Verdict {
                state,
                action,
                status: VerdictStatus::Unobserved,
                p_value: None,
                ci_low: None,
                ci_high: None,
                q_point: None,
                n_replicates: 0,
            });
            continue;
        }
        let mut samples = ens.samples(state, a);
        let (status, p_value) = if a == rec {
            (VerdictStatus::Recommended, None)
        } else if samples.is_empty() || rec_samples.is_empty() {
            (VerdictStatus::Accepted, None)
        } else {
            let p = rank_sum_test(&samples, &rec_samples)?;
            let status = if p < threshold {
                VerdictStatus::Rejected
            } else {
                VerdictStatus::Accepted
            };
            (status, Some(p))
        };
        samples.sort_by(f64::total_cmp);
        out.push(Verdict {
            state,
            action,
            status,
            p_value,
            ci_low: percentile_sorted(&samples, 0.5),
            ci_high: percentile_sorted(&samples, 99.5),
            q_point,
            n_replicates: samples.len(),
        });
    }
    Ok(out)
}

/// Verdicts for every visited state; `None` for unvisited ones.
pub fn verdict_table(ens: &BootstrapEnsemble, alpha: f64) -> Result<Vec<Option<Vec<Verdict>>>> {
    (0..ens.n_states)
        .into_par_iter()
        .map(|s| {
            if ens.point.best(s).is_some() {
                action_verdicts(ens, s, alpha).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Best verdict over a set of actions sharing one margin bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginVerdict {
    pub status: VerdictStatus,
    pub min_p: Option<f64>,
}

fn margin(verdicts: &[Verdict], pick: impl Fn(&ActionId) -> bool) -> MarginVerdict {
    let mut status = VerdictStatus::Unobserved;
    let mut min_p: Option<f64> = None;
    for v in verdicts.iter().filter(|v| pick(&v.action)) {
        status = status.min(v.status);
        if let Some(p) = v.p_value {
            min_p = Some(min_p.map_or(p, |m| m.min(p)));
        }
    }
    MarginVerdict { status, min_p }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub patient_id: String,
    pub step: usize,
    /// `None` when the state has no observed actions in the fitted model.
    pub state: Option<StateId>,
    pub clinician_action: ActionId,
    pub status: Option<VerdictStatus>,
    pub p_value: Option<f64>,
    pub recommended_action: Option<ActionId>,
    pub fluid_margins: Vec<MarginVerdict>,
    pub vaso_margins: Vec<MarginVerdict>,
}

impl EpisodeRow {
    pub fn accepted_fluid_bins(&self) -> Vec<usize> {
        acceptable_bins(&self.fluid_margins)
    }

    pub fn accepted_vaso_bins(&self) -> Vec<usize> {
        acceptable_bins(&self.vaso_margins)
    }
}

fn acceptable_bins(m: &[MarginVerdict]) -> Vec<usize> {
    m.iter()
        .enumerate()
        .filter(|(_, v)| v.status.is_acceptable())
        .map(|(i, _)| i + 1)
        .collect()
}

/// One row per transition of `episode`, judging the clinician's action.
/// Margin bins take the best status and the smallest p-value over the
/// actions sharing that bin.
pub fn episode_report(table: &[Option<Vec<Verdict>>], episode: &TaggedEpisode) -> Result<Vec<EpisodeRow>> {
    let mut rows = Vec::with_capacity(episode.steps.len());
    for (i, t) in episode.steps.iter().enumerate() {
        let clinician_action = ActionId::new(t.a)?;
        let verdicts = table.get(t.s).and_then(|v| v.as_ref());
        let row = match verdicts {
            None => EpisodeRow {
                patient_id: episode.patient_id.clone(),
                step: i,
                state: None,
                clinician_action,
                status: None,
                p_value: None,
                recommended_action: None,
                fluid_margins: Vec::new(),
                vaso_margins: Vec::new(),
            },
            Some(v) => EpisodeRow {
                patient_id: episode.patient_id.clone(),
                step: i,
                state: Some(t.s),
                clinician_action,
                status: Some(v[t.a].status),
                p_value: v[t.a].p_value,
                recommended_action: v.iter().find(|x| x.status == VerdictStatus::Recommended).map(|x| x.action),
                fluid_margins: (1..=N_FLUID_BINS).map(|f| margin(v, |a| a.fluid_bin() == f)).collect(),
                vaso_margins: (1..=N_VASO_BINS).map(|b| margin(v, |a| a.vaso_bin() == b)).collect(),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Fraction of clinician actions (in visited states) that are rejected.
pub fn rejection_fraction(table: &[Option<Vec<Verdict>>], episodes: &[TaggedEpisode]) -> f64 {
    let (mut rejected, mut total) = (0usize, 0usize);
    for t in flatten(episodes) {
        if let Some(Some(v)) = table.get(t.s) {
            total += 1;
            if v[t.a].status == VerdictStatus::Rejected {
                rejected += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        rejected as f64 / total as f64
    }
}

pub fn write_verdicts_csv<W: std::io::Write>(table: &[Option<Vec<Verdict>>], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "state", "action", "fluid_bin", "vaso_bin", "status", "p_value", "ci_low", "ci_high", "q_point",
    ])?;
    for v in table.iter().flatten().flatten() {
        wtr.write_record([
            v.state.to_string(),
            v.action.index().to_string(),
            v.action.fluid_bin().to_string(),
            v.action.vaso_bin().to_string(),
            v.status.as_str().to_string(),
            opt(v.p_value),
            opt(v.ci_low),
            opt(v.ci_high),
            opt(v.q_point),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn join(bins: &[usize]) -> String {
    bins.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn status_str(s: Option<VerdictStatus>) -> &'static str {
    s.map_or("unvisited state", VerdictStatus::as_str)
}

pub fn write_episode_report_csv<W: std::io::Write>(rows: &[EpisodeRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
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
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=N_FLUID_BINS).map(|f| format!("fluid_{f}_min_p")));
    header.extend((1..=N_VASO_BINS).map(|v| format!("vaso_{v}_min_p")));
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.patient_id.clone(),
            r.step.to_string(),
            r.state.map(|s| s.to_string()).unwrap_or_default(),
            r.clinician_action.index().to_string(),
            r.clinician_action.fluid_bin().to_string(),
            r.clinician_action.vaso_bin().to_string(),
            status_str(r.status).to_string(),
            opt(r.p_value),
            r.recommended_action.map(|a| a.index().to_string()).unwrap_or_default(),
            join(&r.accepted_fluid_bins()),
            join(&r.accepted_vaso_bins()),
        ];
        let pad = |m: &[MarginVerdict], n: usize| -> Vec<String> {
            (0..n).map(|i| m.get(i).map(|v| opt(v.min_p)).unwrap_or_default()).collect()
        };
        rec.extend(pad(&r.fluid_margins, N_FLUID_BINS));
        rec.extend(pad(&r.vaso_margins, N_VASO_BINS));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClinicalLabel, Outcome};
    use crate::mdp::TaggedTransition;

    fn ep(id: &str, steps: Vec<(usize, usize, usize, f64)>) -> TaggedEpisode {
        let n = steps.len();
        TaggedEpisode {
            patient_id: id.into(),
            outcome: if steps.last().unwrap().2 == 2 {
                Outcome::Discharge
            } else {
                Outcome::Death
            },
            steps: steps
                .into_iter()
                .map(|(s, a, s_next, r)| TaggedTransition { s, a, s_next, r })
                .collect(),
            labels: vec![ClinicalLabel::NonSepsis; n],
            vis: vec![0.0; n],
        }
    }

    /// Two transient states; absorbing ids are 2 (discharge) and 3 (death).
    fn cohort() -> Vec<TaggedEpisode> {
        let mut eps = Vec::new();
        for i in 0..40 {
            let good = i % 4 != 0;
            eps.push(ep(
                &format!("a{i}"),
                vec![(0, 1, if good { 2 } else { 3 }, if good { 1.0 } else { -1.0 })],
            ));
            let bad = i % 4 != 0;
            eps.push(ep(
                &format!("b{i}"),
                vec![(0, 0, 1, 0.0), (1, 0, if bad { 3 } else { 2 }, if bad { -1.0 } else { 1.0 })],
            ));
        }
        eps
    }

    #[test]
    fn deterministic_and_partitioned() {
        let eps = cohort();
        let cfg = BootstrapConfig {
            iterations: 30,
            seed: 5,
            ..Default::default()
        };
        let solver = SolverConfig::default();
        let a = bootstrap_ensemble(&eps, 2, 30, &solver, &cfg).unwrap();
        let b = bootstrap_ensemble(&eps, 2, 30, &solver, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let v = action_verdicts(&a, 0, 0.01).unwrap();
        assert_eq!(v.len(), 30);
        assert_eq!(v.iter().filter(|x| x.status == VerdictStatus::Recommended).count(), 1);
        assert_eq!(v[1].status, VerdictStatus::Recommended);
        assert_eq!(v[1].p_value, None);
        assert_eq!(v[0].status, VerdictStatus::Rejected);
        assert!(v[2..].iter().all(|x| x.status == VerdictStatus::Unobserved));
        assert!(action_verdicts(&a, 5, 0.01).is_err());
    }

    #[test]
    fn single_patient_gives_zero_width() {
        let eps = vec![ep("x", vec![(0, 0, 1, 0.0), (1, 2, 2, 1.0)])];
        let e = bootstrap_ensemble(&eps, 2, 30, &SolverConfig::default(), &BootstrapConfig::default()).unwrap();
        let v = action_verdicts(&e, 0, 0.01).unwrap();
        assert_eq!(v[0].ci_low, v[0].ci_high);
    }

    #[test]
    fn episode_rows_and_margins() {
        let eps = cohort();
        let e = bootstrap_ensemble(&eps, 2, 30, &SolverConfig::default(), &BootstrapConfig::default()).unwrap();
        let table = verdict_table(&e, 0.01).unwrap();
        let rows = episode_report(&table, &eps[1]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, Some(VerdictStatus::Rejected));
        assert_eq!(rows[0].recommended_action, Some(ActionId::new(1).unwrap()));
        assert_eq!(rows[0].accepted_fluid_bins(), vec![2]);
        assert_eq!(rows[0].accepted_vaso_bins(), vec![1]);
        let f = rejection_fraction(&table, &eps);
        assert!((0.0..=1.0).contains(&f));
    }
}
