//! Policy values over the empirical start distribution and the comparative
//! reports built on them.

use serde::{Deserialize, Serialize};

use crate::action::{ActionId, N_FLUID_BINS, N_VASO_BINS};
use crate::data::ClinicalLabel;
use crate::error::{Error, Result};
use crate::mdp::{
    behavior_policy, flatten, greedy_policy, random_policy, solve_q_policy, zero_intervention_policy, MdpEstimate,
    PolicyKind, PolicySpec, QTable, SolverConfig, TaggedEpisode,
};
use crate::state::StateId;
use crate::stats::{median, percentile_sorted, rank_sum_test, spearman};
use crate::uncertainty::BootstrapEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartDistribution {
    pub probs: Vec<f64>,
}

impl StartDistribution {
    pub fn support(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.probs.iter().copied().enumerate().filter(|e| e.1 > 0.0)
    }
}

/// Normalised frequencies of each episode's first state.
pub fn start_distribution(episodes: &[TaggedEpisode], n_states: usize) -> Result<StartDistribution> {
    let mut probs = vec![0.0; n_states];
    let mut n = 0usize;
    for ep in episodes {
        let Some(first) = ep.steps.first() else { continue };
        if first.s >= n_states {
            return Err(Error::InvalidArgument(format!("start state {} out of range", first.s)));
        }
        probs[first.s] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidData("no episodes to take start states from".into()));
    }
    for p in &mut probs {
        *p /= n as f64;
    }
    Ok(StartDistribution { probs })
}

/// `sum_s start(s) sum_a pi(a|s) q(s, a)`.
pub fn policy_value(q: &QTable, policy: &PolicySpec, start: &StartDistribution) -> Result<f64> {
    let mut total = 0.0;
    for (s, p) in start.support() {
        let v = q
            .state_value(s, policy)
            .ok_or_else(|| Error::InvalidArgument(format!("policy has no action distribution for start state {s}")))?;
        if v.is_nan() {
            return Err(Error::InvalidArgument(format!("policy uses a masked action in state {s}")));
        }
        total += p * v;
    }
    Ok(total)
}

/// Values of the four compared policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValues {
    pub ai: f64,
    pub clinician: f64,
    pub random: f64,
    pub zero: f64,
}

pub const COMPARED_POLICIES: [PolicyKind; 4] = [
    PolicyKind::Greedy,
    PolicyKind::Behavior,
    PolicyKind::Random,
    PolicyKind::ZeroIntervention,
];

impl PolicyValues {
    pub fn as_array(&self) -> [f64; 4] {
        [self.ai, self.clinician, self.random, self.zero]
    }
}

/// Greedy value from the optimal `q`; the fixed policies are evaluated by
/// their own Bellman equations on the same MDP.
pub fn standard_policy_values(
    mdp: &MdpEstimate,
    q_opt: &QTable,
    episodes: &[TaggedEpisode],
    start: &StartDistribution,
    solver: &SolverConfig,
) -> Result<PolicyValues> {
    let eval = |pi: &PolicySpec| -> Result<f64> {
        let q = solve_q_policy(mdp, pi, solver)?;
        policy_value(&q, pi, start)
    };
    Ok(PolicyValues {
        ai: policy_value(q_opt, &greedy_policy(q_opt), start)?,
        clinician: eval(&behavior_policy(flatten(episodes), mdp.n_states, mdp.n_actions)?)?,
        random: eval(&random_policy(mdp))?,
        zero: eval(&zero_intervention_policy(mdp))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueResult {
    pub policy: String,
    pub value: f64,
    pub replicate_values: Vec<f64>,
    /// 2.5th / 97.5th replicate percentiles.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub policies: Vec<PolicyValueResult>,
    /// `p_values[i][j]`: one-sided rank-sum p-value for "policy i has higher
    /// value than policy j"; `None` on the diagonal.
    pub p_values: Vec<Vec<Option<f64>>>,
    /// Bonferroni-adjusted over the unordered pairs.
    pub p_adjusted: Vec<Vec<Option<f64>>>,
    pub n_comparisons: usize,
}

/// Pairwise one-sided tests of replicate policy values.
pub fn compare_policies(ens: &BootstrapEnsemble) -> Result<PolicyComparison> {
    if ens.replicates.len() < 2 {
        return Err(Error::InvalidArgument("policy comparison needs at least 2 replicates".into()));
    }
    let point = ens.point_policy_values.as_array();
    let samples: Vec<Vec<f64>> = (0..4)
        .map(|i| ens.replicates.iter().map(|r| r.policy_values.as_array()[i]).collect())
        .collect();
    let k = COMPARED_POLICIES.len();
    let m = k * (k - 1) / 2;
    let mut p_values = vec![vec![None; k]; k];
    let mut p_adjusted = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let p = rank_sum_test(&samples[j], &samples[i])?;
                p_values[i][j] = Some(p);
                p_adjusted[i][j] = Some((p * m as f64).min(1.0));
            }
        }
    }
    let policies = COMPARED_POLICIES
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut sorted = samples[i].clone();
            sorted.sort_by(f64::total_cmp);
            PolicyValueResult {
                policy: kind.as_str().to_string(),
                value: point[i],
                ci_low: percentile_sorted(&sorted, 2.5).unwrap_or(f64::NAN),
                ci_high: percentile_sorted(&sorted, 97.5).unwrap_or(f64::NAN),
                replicate_values: samples[i].clone(),
            }
        })
        .collect();
    Ok(PolicyComparison {
        policies,
        p_values,
        p_adjusted,
        n_comparisons: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBin {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub n: usize,
    pub deaths: usize,
    pub mortality: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMortalityCurve {
    pub bins: Vec<QBin>,
    /// Rank correlation of bin center with mortality over nonempty bins.
    pub spearman: Option<f64>,
}

const Z95: f64 = 1.959963984540054;

/// 95% binomial interval: Wald when both expected counts reach 5,
/// Agresti-Coull otherwise.
pub fn binomial_ci(x: usize, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let p = x as f64 / nf;
    let (center, half) = if nf * p >= 5.0 && nf * (1.0 - p) >= 5.0 {
        (p, Z95 * (p * (1.0 - p) / nf).sqrt())
    } else {
        let nt = nf + Z95 * Z95;
        let pt = (x as f64 + Z95 * Z95 / 2.0) / nt;
        (pt, Z95 * (pt * (1.0 - pt) / nt).sqrt())
    };
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Mortality of observed clinician `(s, a)` occurrences binned by `q(s, a)`
/// into `n_bins` equal-width bins over the observed q range.
pub fn qvalue_mortality_curve(q: &QTable, episodes: &[TaggedEpisode], n_bins: usize) -> Result<QMortalityCurve> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let mut points = Vec::new();
    for ep in episodes {
        for t in &ep.steps {
            if let Some(v) = q.get(t.s, t.a) {
                points.push((v, ep.outcome.is_death()));
            }
        }
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if points.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let width = (hi - lo) / n_bins as f64;
    let mut n = vec![0usize; n_bins];
    let mut deaths = vec![0usize; n_bins];
    for &(v, died) in &points {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        n[b] += 1;
        deaths[b] += died as usize;
    }
    let bins: Vec<QBin> = (0..n_bins)
        .map(|b| {
            let (blo, bhi) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
            let (mortality, ci) = if n[b] > 0 {
                (Some(deaths[b] as f64 / n[b] as f64), Some(binomial_ci(deaths[b], n[b])))
            } else {
                (None, None)
            };
            QBin {
                lo: blo,
                hi: bhi,
                center: (blo + bhi) / 2.0,
                n: n[b],
                deaths: deaths[b],
                mortality,
                ci_low: ci.map(|c| c.0),
                ci_high: ci.map(|c| c.1),
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter_map(|b| b.mortality.map(|m| (b.center, m)))
        .unzip();
    Ok(QMortalityCurve {
        spearman: spearman(&xs, &ys),
        bins,
    })
}

/// Fluid- and vaso-bin marginals of an action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMarginals {
    pub label: ClinicalLabel,
    pub observations: usize,
    pub fluid: [f64; N_FLUID_BINS],
    pub vaso: [f64; N_VASO_BINS],
}

/// Per-label histograms of the clinician's actions (`policy = None`) or of
/// `policy`'s action mass at each observed state occurrence.
pub fn action_distribution_by_label(
    policy: Option<&PolicySpec>,
    episodes: &[TaggedEpisode],
) -> Result<Vec<ActionMarginals>> {
    let mut out: Vec<ActionMarginals> = ClinicalLabel::ALL
        .iter()
        .map(|&label| ActionMarginals {
            label,
            observations: 0,
            fluid: [0.0; N_FLUID_BINS],
            vaso: [0.0; N_VASO_BINS],
        })
        .collect();
    for ep in episodes {
        for (t, label) in ep.steps.iter().zip(&ep.labels) {
            let h = &mut out[label.index()];
            let mass: Vec<(usize, f64)> = match policy {
                None => vec![(t.a, 1.0)],
                Some(pi) => pi
                    .dist(t.s)
                    .ok_or_else(|| Error::InvalidArgument(format!("policy undefined in state {}", t.s)))?
                    .to_vec(),
            };
            h.observations += 1;
            for (a, p) in mass {
                let id = ActionId::new(a)?;
                h.fluid[id.fluid_bin() - 1] += p;
                h.vaso[id.vaso_bin() - 1] += p;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVisSamples {
    pub state: StateId,
    pub n_shock: usize,
    pub n_non_shock: usize,
    pub shock_fraction: f64,
    pub shock_vis: Vec<f64>,
    pub non_shock_vis: Vec<f64>,
    pub median_vis_shock: Option<f64>,
    pub median_vis_non_shock: Option<f64>,
    /// Absolute median difference; 0 when one group is absent.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityVariant {
    pub name: String,
    pub n_states: usize,
    /// `P(state | shock)`; `None` without shock observations.
    pub occupancy_shock: Option<Vec<f64>>,
    pub occupancy_non_shock: Option<Vec<f64>>,
    pub top_states: Vec<StateVisSamples>,
    /// Mean gap over `top_states`.
    pub median_gap: Option<f64>,
    pub notes: Vec<String>,
}

pub const HOMOGENEITY_TOP_STATES: usize = 15;

/// Shock vs non-shock occupancy and within-state VIS disagreement for one
/// state space. The top states are those with the highest fraction of
/// shock observations (ties to the lower id).
pub fn state_homogeneity(name: &str, episodes: &[TaggedEpisode], n_states: usize) -> HomogeneityVariant {
    let mut shock: Vec<Vec<f64>> = vec![Vec::new(); n_states];
    let mut other: Vec<Vec<f64>> = vec![Vec::new(); n_states];
    for ep in episodes {
        for ((t, label), &vis) in ep.steps.iter().zip(&ep.labels).zip(&ep.vis) {
            if label.is_shock() {
                shock[t.s].push(vis);
            } else {
                other[t.s].push(vis);
            }
        }
    }
    let occupancy = |groups: &[Vec<f64>]| -> Option<Vec<f64>> {
        let total: usize = groups.iter().map(Vec::len).sum();
        (total > 0).then(|| groups.iter().map(|g| g.len() as f64 / total as f64).collect())
    };
    let mut notes = Vec::new();
    let occupancy_shock = occupancy(&shock);
    if occupancy_shock.is_none() {
        notes.push("no septic-shock observations; shock conditional is empty".to_string());
    }
    let mut candidates: Vec<StateId> = (0..n_states).filter(|&s| !shock[s].is_empty()).collect();
    let frac = |s: usize| shock[s].len() as f64 / (shock[s].len() + other[s].len()) as f64;
    candidates.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    if candidates.len() < HOMOGENEITY_TOP_STATES && occupancy_shock.is_some() {
        notes.push(format!(
            "only {} states contain shock observations; using all of them",
            candidates.len()
        ));
    }
    candidates.truncate(HOMOGENEITY_TOP_STATES);
    let top_states: Vec<StateVisSamples> = candidates
        .into_iter()
        .map(|s| {
            let ms = median(&shock[s]);
            let mo = median(&other[s]);
            StateVisSamples {
                state: s,
                n_shock: shock[s].len(),
                n_non_shock: other[s].len(),
                shock_fraction: frac(s),
                shock_vis: shock[s].clone(),
                non_shock_vis: other[s].clone(),
                median_vis_shock: ms,
                median_vis_non_shock: mo,
                gap: match (ms, mo) {
                    (Some(a), Some(b)) => (a - b).abs(),
                    _ => 0.0,
                },
            }
        })
        .collect();
    let median_gap = (!top_states.is_empty())
        .then(|| top_states.iter().map(|t| t.gap).sum::<f64>() / top_states.len() as f64);
    HomogeneityVariant {
        name: name.to_string(),
        n_states,
        occupancy_shock,
        occupancy_non_shock: occupancy(&other),
        top_states,
        median_gap,
        notes,
    }
}

/// Homogeneity summaries for several state spaces fitted on the same data.
pub fn state_homogeneity_report(variants: &[(&str, &[TaggedEpisode], usize)]) -> Vec<HomogeneityVariant> {
    variants
        .iter()
        .map(|&(name, eps, n)| state_homogeneity(name, eps, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Outcome;
    use crate::mdp::TaggedTransition;

    fn ep(start: usize, label: ClinicalLabel, a: usize, died: bool) -> TaggedEpisode {
        TaggedEpisode {
            patient_id: "p".into(),
            outcome: if died { Outcome::Death } else { Outcome::Discharge },
            steps: vec![TaggedTransition {
                s: start,
                a,
                s_next: if died { 5 } else { 4 },
                r: if died { -1.0 } else { 1.0 },
            }],
            labels: vec![label],
            vis: vec![a as f64],
        }
    }

    #[test]
    fn start_counts() {
        let eps: Vec<_> = [1, 1, 2, 3]
            .iter()
            .map(|&s| ep(s, ClinicalLabel::Sepsis, 0, false))
            .collect();
        let d = start_distribution(&eps, 4).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn zero_policy_histograms() {
        let eps: Vec<_> = (0..6)
            .map(|i| ep(i % 2, ClinicalLabel::ALL[i % 3], 0, false))
            .collect();
        let mdp = crate::mdp::estimate_mdp(flatten(&eps), 4, 30).unwrap();
        let z = zero_intervention_policy(&mdp);
        for h in action_distribution_by_label(Some(&z), &eps).unwrap() {
            assert_eq!(h.fluid[0], h.observations as f64);
            assert_eq!(h.vaso[0], h.observations as f64);
        }
    }

    #[test]
    fn all_discharge_curve() {
        let eps: Vec<_> = (0..10).map(|i| ep(i % 3, ClinicalLabel::Sepsis, i % 2, false)).collect();
        let mdp = crate::mdp::estimate_mdp(flatten(&eps), 4, 30).unwrap();
        let q = crate::mdp::solve_q_optimal(&mdp, &SolverConfig::default()).unwrap();
        let c = qvalue_mortality_curve(&q, &eps, 20).unwrap();
        assert_eq!(c.bins.len(), 20);
        assert!(c.bins.iter().all(|b| b.mortality.is_none_or(|m| m == 0.0)));
        assert_eq!(c.bins.iter().map(|b| b.n).sum::<usize>(), 10);
    }

    #[test]
    fn homogeneity_without_shock() {
        let eps = vec![ep(0, ClinicalLabel::Sepsis, 0, false)];
        let h = state_homogeneity("cca", &eps, 2);
        assert!(h.occupancy_shock.is_none());
        assert!(!h.notes.is_empty());
        assert_eq!(h.occupancy_non_shock.unwrap().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn binomial_intervals() {
        let (lo, hi) = binomial_ci(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        let (lo, hi) = binomial_ci(0, 3);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi <= 1.0);
    }
}
