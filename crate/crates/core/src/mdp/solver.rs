//! Synchronous value iteration for the Bellman optimality and policy
//! evaluation operators, restricted to observed actions.

use serde::{Deserialize, Serialize};

use super::policy::PolicySpec;
use super::MdpEstimate;
use crate::error::{Error, Result};
use crate::state::StateId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma: 0.99,
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Action values for every transient state; masked entries are unobserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "QTableJson", try_from = "QTableJson")]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major; `NaN` where masked.
    pub q: Vec<f64>,
    pub mask: Vec<bool>,
    pub gamma: f64,
    /// Final sup-norm change between iterates.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change at each iteration.
    pub residual_history: Vec<f64>,
}

impl QTable {
    #[inline]
    pub fn get(&self, s: StateId, a: usize) -> Option<f64> {
        let i = s * self.n_actions + a;
        self.mask[i].then(|| self.q[i])
    }

    pub fn observed(&self, s: StateId, a: usize) -> bool {
        self.mask[s * self.n_actions + a]
    }

    pub fn observed_actions(&self, s: StateId) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.observed(s, a))
    }

    /// `max_a q(s, a)` over observed actions, with the lowest maximising id.
    pub fn best(&self, s: StateId) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for a in self.observed_actions(s) {
            let v = self.q[s * self.n_actions + a];
            if best.is_none_or(|b| v > b.1) {
                best = Some((a, v));
            }
        }
        best
    }

    /// `sum_a pi(a|s) q(s, a)`; `None` where the policy has no distribution.
    pub fn state_value(&self, s: StateId, policy: &PolicySpec) -> Option<f64> {
        let dist = policy.dist(s)?;
        Some(dist.iter().map(|&(a, p)| p * self.q[s * self.n_actions + a]).sum())
    }
}

#[derive(Serialize, Deserialize)]
struct QTableJson {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    residual: f64,
    iterations: usize,
    q: Vec<Vec<Option<f64>>>,
}

impl From<QTable> for QTableJson {
    fn from(t: QTable) -> Self {
        let q = (0..t.n_states)
            .map(|s| (0..t.n_actions).map(|a| t.get(s, a)).collect())
            .collect();
        QTableJson {
            n_states: t.n_states,
            n_actions: t.n_actions,
            gamma: t.gamma,
            residual: t.residual,
            iterations: t.iterations,
            q,
        }
    }
}

impl TryFrom<QTableJson> for QTable {
    type Error = String;

    fn try_from(j: QTableJson) -> std::result::Result<Self, String> {
        if j.q.len() != j.n_states || j.q.iter().any(|r| r.len() != j.n_actions) {
            return Err("q matrix does not match declared dimensions".into());
        }
        let flat: Vec<Option<f64>> = j.q.into_iter().flatten().collect();
        Ok(QTable {
            n_states: j.n_states,
            n_actions: j.n_actions,
            mask: flat.iter().map(Option::is_some).collect(),
            q: flat.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            gamma: j.gamma,
            residual: j.residual,
            iterations: j.iterations,
            residual_history: Vec::new(),
        })
    }
}

/// Iterates `q <- T(q)` where `T` uses `next_value` to back up successor
/// states, until the sup-norm change drops below `tol`.
fn iterate(
    mdp: &MdpEstimate,
    cfg: &SolverConfig,
    next_value: impl Fn(&[f64], StateId) -> f64,
) -> Result<QTable> {
    cfg.validate()?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mask = mdp.mask();
    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns + 2];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        for (s, vs) in v.iter_mut().enumerate().take(ns) {
            *vs = next_value(&q, s);
        }
        let mut residual = 0.0f64;
        for (i, qi) in q.iter_mut().enumerate() {
            if !mask[i] {
                continue;
            }
            let new: f64 = mdp.rows[i]
                .iter()
                .map(|e| e.prob * (e.reward + cfg.gamma * v[e.next]))
                .sum();
            residual = residual.max((new - *qi).abs());
            *qi = new;
        }
        iterations += 1;
        history.push(residual);
        if residual < cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter || !residual.is_finite() {
            return Err(Error::NotConverged { iterations, residual });
        }
    }
    for (qi, &m) in q.iter_mut().zip(&mask) {
        if !m {
            *qi = f64::NAN;
        }
    }
    Ok(QTable {
        n_states: ns,
        n_actions: na,
        q,
        mask,
        gamma: cfg.gamma,
        residual: *history.last().expect("at least one iteration"),
        iterations,
        residual_history: history,
    })
}

/// Fixed point of the optimality operator over observed actions. States
/// without observed actions and absorbing states have value 0.
pub fn solve_q_optimal(mdp: &MdpEstimate, cfg: &SolverConfig) -> Result<QTable> {
    let na = mdp.n_actions;
    let mask = mdp.mask();
    iterate(mdp, cfg, |q, s| {
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            if mask[s * na + a] {
                best = best.max(q[s * na + a]);
            }
        }
        if best == f64::NEG_INFINITY {
            0.0
        } else {
            best
        }
    })
}

/// Fixed point of the evaluation operator for `policy`.
pub fn solve_q_policy(mdp: &MdpEstimate, policy: &PolicySpec, cfg: &SolverConfig) -> Result<QTable> {
    let na = mdp.n_actions;
    if policy.n_states() != mdp.n_states || policy.n_actions != na {
        return Err(Error::InvalidArgument("policy dimensions do not match the MDP".into()));
    }
    for s in 0..mdp.n_states {
        match policy.dist(s) {
            Some(dist) => {
                if let Some(&(a, _)) = dist.iter().find(|&&(a, p)| p > 0.0 && !mdp.observed(s, a)) {
                    return Err(Error::InvalidArgument(format!(
                        "policy puts mass on unobserved action {a} in state {s}"
                    )));
                }
            }
            None if mdp.observed_actions(s).next().is_some() => {
                return Err(Error::InvalidArgument(format!(
                    "policy has no distribution for observed state {s}"
                )));
            }
            None => {}
        }
    }
    iterate(mdp, cfg, |q, s| match policy.dist(s) {
        Some(dist) => dist.iter().map(|&(a, p)| p * q[s * na + a]).sum(),
        None => 0.0,
    })
}
