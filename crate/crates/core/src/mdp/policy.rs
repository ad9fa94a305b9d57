use serde::{Deserialize, Serialize};

use super::solver::QTable;
use super::{MdpEstimate, TaggedTransition};
use crate::error::{Error, Result};
use crate::state::StateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Greedy,
    Behavior,
    Random,
    ZeroIntervention,
    Explicit,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Greedy => "ai",
            PolicyKind::Behavior => "clinician",
            PolicyKind::Random => "random",
            PolicyKind::ZeroIntervention => "zero",
            PolicyKind::Explicit => "explicit",
        }
    }
}

/// Per-state action distribution as sparse `(action, probability)` pairs
/// sorted by action. States without a distribution are outside the policy's
/// support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub n_actions: usize,
    pub dists: Vec<Option<Vec<(usize, f64)>>>,
}

impl PolicySpec {
    pub fn explicit(n_actions: usize, dists: Vec<Option<Vec<(usize, f64)>>>) -> Result<Self> {
        for (s, d) in dists.iter().enumerate() {
            let Some(d) = d else { continue };
            let total: f64 = d.iter().map(|e| e.1).sum();
            if (total - 1.0).abs() > 1e-9 || d.iter().any(|e| e.0 >= n_actions || e.1 < 0.0) {
                return Err(Error::InvalidArgument(format!("state {s}: invalid action distribution")));
            }
        }
        Ok(PolicySpec {
            kind: PolicyKind::Explicit,
            n_actions,
            dists,
        })
    }

    pub fn n_states(&self) -> usize {
        self.dists.len()
    }

    pub fn dist(&self, s: StateId) -> Option<&[(usize, f64)]> {
        self.dists.get(s).and_then(|d| d.as_deref())
    }

    /// The most probable action (lowest id on ties).
    pub fn mode(&self, s: StateId) -> Option<usize> {
        let d = self.dist(s)?;
        let mut best = d[0];
        for &e in &d[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        Some(best.0)
    }
}

/// Deterministic argmax over observed actions, ties to the lower id.
pub fn greedy_policy(q: &QTable) -> PolicySpec {
    PolicySpec {
        kind: PolicyKind::Greedy,
        n_actions: q.n_actions,
        dists: (0..q.n_states).map(|s| q.best(s).map(|(a, _)| vec![(a, 1.0)])).collect(),
    }
}

/// Empirical `N(s, a) / N(s)`.
pub fn behavior_policy<'a>(
    tagged: impl IntoIterator<Item = &'a TaggedTransition>,
    n_states: usize,
    n_actions: usize,
) -> Result<PolicySpec> {
    let mut counts = vec![0u64; n_states * n_actions];
    for t in tagged {
        if t.s >= n_states || t.a >= n_actions {
            return Err(Error::InvalidArgument("tagged transition out of range".into()));
        }
        counts[t.s * n_actions + t.a] += 1;
    }
    let dists = counts
        .chunks(n_actions)
        .map(|row| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| {
                row.iter()
                    .enumerate()
                    .filter(|e| *e.1 > 0)
                    .map(|(a, &c)| (a, c as f64 / total as f64))
                    .collect()
            })
        })
        .collect();
    Ok(PolicySpec {
        kind: PolicyKind::Behavior,
        n_actions,
        dists,
    })
}

/// Uniform over each state's observed actions.
pub fn random_policy(mdp: &MdpEstimate) -> PolicySpec {
    let dists = (0..mdp.n_states)
        .map(|s| {
            let acts: Vec<usize> = mdp.observed_actions(s).collect();
            (!acts.is_empty()).then(|| {
                let p = 1.0 / acts.len() as f64;
                acts.into_iter().map(|a| (a, p)).collect()
            })
        })
        .collect();
    PolicySpec {
        kind: PolicyKind::Random,
        n_actions: mdp.n_actions,
        dists,
    }
}

/// Always action 0 (lowest fluid bin, no vasopressor). Where action 0 was
/// never observed the lowest observed action id stands in, since masked
/// actions cannot be evaluated.
pub fn zero_intervention_policy(mdp: &MdpEstimate) -> PolicySpec {
    let dists = (0..mdp.n_states)
        .map(|s| mdp.observed_actions(s).next().map(|a| vec![(a, 1.0)]))
        .collect();
    PolicySpec {
        kind: PolicyKind::ZeroIntervention,
        n_actions: mdp.n_actions,
        dists,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::estimate_mdp;
    use crate::mdp::solver::{solve_q_optimal, SolverConfig};

    fn tt(s: usize, a: usize) -> TaggedTransition {
        TaggedTransition { s, a, s_next: 2, r: 0.0 }
    }

    #[test]
    fn behavior_frequencies() {
        let t = [tt(0, 0), tt(0, 0), tt(0, 0), tt(0, 5)];
        let p = behavior_policy(&t, 2, 30).unwrap();
        assert_eq!(p.dist(0).unwrap(), &[(0, 0.75), (5, 0.25)]);
        assert!(p.dist(1).is_none());
    }

    #[test]
    fn greedy_tie_goes_low() {
        let mut rows = vec![vec![]; 10];
        rows[3] = vec![(1, 1.0, 1.0)];
        rows[7] = vec![(1, 1.0, 1.0)];
        rows[2] = vec![(2, 1.0, -1.0)];
        let m = MdpEstimate::from_probabilities(1, 10, rows).unwrap();
        let q = solve_q_optimal(&m, &SolverConfig::default()).unwrap();
        assert_eq!(greedy_policy(&q).mode(0), Some(3));
    }

    #[test]
    fn random_and_zero_respect_mask() {
        let t = [tt(0, 4), tt(0, 9), tt(1, 0)];
        let m = estimate_mdp(&t, 2, 30).unwrap();
        let r = random_policy(&m);
        assert_eq!(r.dist(0).unwrap(), &[(4, 0.5), (9, 0.5)]);
        let z = zero_intervention_policy(&m);
        assert_eq!(z.dist(1).unwrap(), &[(0, 1.0)]);
        assert_eq!(z.dist(0).unwrap(), &[(4, 1.0)]);
    }
}
