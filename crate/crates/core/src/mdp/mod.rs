//! Count-based MDP estimation over discrete states and actions, Bellman
//! solvers and the policies the pipeline compares.

pub mod policy;
pub mod solver;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::action::ActionGrid;
use crate::data::{ClinicalLabel, Dataset, Outcome};
use crate::error::{Error, Result};
use crate::state::{episode_features, StateId, StateModel};

pub use policy::{behavior_policy, greedy_policy, random_policy, zero_intervention_policy, PolicyKind, PolicySpec};
pub use solver::{solve_q_optimal, solve_q_policy, QTable, SolverConfig};

/// One observed step: `s` is never absorbing, `s_next` may be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedTransition {
    pub s: StateId,
    pub a: usize,
    pub s_next: StateId,
    pub r: f64,
}

/// A patient's trajectory after state/action/reward tagging, with the
/// per-step context the reports need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedEpisode {
    pub patient_id: String,
    pub outcome: Outcome,
    pub steps: Vec<TaggedTransition>,
    pub labels: Vec<ClinicalLabel>,
    pub vis: Vec<f64>,
}

/// Maps every transition to `(s, a, s', r)`. `rewards` is in dataset order.
pub fn tag_dataset(ds: &Dataset, model: &StateModel, grid: &ActionGrid, rewards: &[f64]) -> Result<Vec<TaggedEpisode>> {
    if rewards.len() != ds.n_transitions() {
        return Err(Error::dim(ds.n_transitions(), rewards.len(), "reward list vs transitions"));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(ds.n_patients());
    for ep in &ds.episodes {
        let states: Vec<StateId> = episode_features(ep)
            .iter()
            .map(|f| model.assign_state(f))
            .collect::<Result<_>>()?;
        let n = ep.transitions.len();
        let mut steps = Vec::with_capacity(n);
        for (i, t) in ep.transitions.iter().enumerate() {
            let s_next = if i + 1 < n {
                states[i + 1]
            } else {
                model.absorbing_id(ep.outcome)
            };
            steps.push(TaggedTransition {
                s: states[i],
                a: grid.discretize(t.fluid_ml, t.vis)?.index(),
                s_next,
                r: rewards[offset + i],
            });
        }
        offset += n;
        out.push(TaggedEpisode {
            patient_id: ep.patient_id.clone(),
            outcome: ep.outcome,
            steps,
            labels: ep.transitions.iter().map(|t| t.clinical_label).collect(),
            vis: ep.transitions.iter().map(|t| t.vis).collect(),
        });
    }
    Ok(out)
}

pub fn flatten(episodes: &[TaggedEpisode]) -> impl Iterator<Item = &TaggedTransition> {
    episodes.iter().flat_map(|e| e.steps.iter())
}

/// One successor of an observed `(s, a)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub next: StateId,
    pub count: u64,
    pub prob: f64,
    /// Mean observed reward over `(s, a, next)`.
    pub reward: f64,
}

/// Maximum-likelihood MDP. States `0..n_states` are transient; any id
/// `>= n_states` is absorbing and has no outgoing rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpEstimate {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major over `(s, a)`; empty when unobserved.
    pub rows: Vec<Vec<Edge>>,
    pub sa_counts: Vec<u64>,
}

impl MdpEstimate {
    /// Builds an MDP from explicit successor distributions (counts are unset).
    pub fn from_probabilities(n_states: usize, n_actions: usize, rows: Vec<Vec<(StateId, f64, f64)>>) -> Result<Self> {
        if rows.len() != n_states * n_actions {
            return Err(Error::dim(n_states * n_actions, rows.len(), "MDP rows"));
        }
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let total: f64 = row.iter().map(|e| e.1).sum();
            if !row.is_empty() && (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("transition row sums to {total}")));
            }
            if row.iter().any(|e| e.1 < 0.0 || e.0 >= n_states + 2) {
                return Err(Error::InvalidArgument("invalid transition entry".into()));
            }
            out.push(
                row.into_iter()
                    .map(|(next, prob, reward)| Edge {
                        next,
                        count: 0,
                        prob,
                        reward,
                    })
                    .collect(),
            );
        }
        let sa_counts = out.iter().map(|r: &Vec<Edge>| r.len() as u64).collect();
        Ok(MdpEstimate {
            n_states,
            n_actions,
            rows: out,
            sa_counts,
        })
    }

    #[inline]
    pub fn row(&self, s: StateId, a: usize) -> &[Edge] {
        &self.rows[s * self.n_actions + a]
    }

    #[inline]
    pub fn observed(&self, s: StateId, a: usize) -> bool {
        !self.row(s, a).is_empty()
    }

    pub fn observed_actions(&self, s: StateId) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.observed(s, a))
    }

    pub fn mask(&self) -> Vec<bool> {
        self.rows.iter().map(|r| !r.is_empty()).collect()
    }

    /// Multiplies every expected reward by `c`.
    pub fn scale_rewards(&mut self, c: f64) {
        for e in self.rows.iter_mut().flatten() {
            e.reward *= c;
        }
    }
}

/// Counts `N(s, a, s')`, normalises rows and averages rewards per triple.
pub fn estimate_mdp<'a>(
    tagged: impl IntoIterator<Item = &'a TaggedTransition>,
    n_states: usize,
    n_actions: usize,
) -> Result<MdpEstimate> {
    let mut acc: Vec<BTreeMap<StateId, (u64, f64)>> = vec![BTreeMap::new(); n_states * n_actions];
    let mut any = false;
    for t in tagged {
        if t.s >= n_states || t.a >= n_actions || t.s_next >= n_states + 2 {
            return Err(Error::InvalidArgument(format!(
                "tagged transition ({}, {}, {}) outside {n_states} states x {n_actions} actions",
                t.s, t.a, t.s_next
            )));
        }
        let e = acc[t.s * n_actions + t.a].entry(t.s_next).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += t.r;
        any = true;
    }
    if !any {
        return Err(Error::InvalidData("no tagged transitions".into()));
    }
    let mut rows = Vec::with_capacity(acc.len());
    let mut sa_counts = Vec::with_capacity(acc.len());
    for m in acc {
        let total: u64 = m.values().map(|v| v.0).sum();
        sa_counts.push(total);
        rows.push(
            m.into_iter()
                .map(|(next, (count, rsum))| Edge {
                    next,
                    count,
                    prob: count as f64 / total as f64,
                    reward: rsum / count as f64,
                })
                .collect(),
        );
    }
    Ok(MdpEstimate {
        n_states,
        n_actions,
        rows,
        sa_counts,
    })
}
