//! Per-transition rewards: terminal +1/-1, optionally shaped by the negative
//! change in a fitted mortality-risk score.

pub mod gbdt;
pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Episode, Outcome};
use crate::error::{Error, Result};
use crate::state::{episode_features, StateFeatures};

pub use gbdt::{GbdtClassifier, GbdtConfig};
pub use metrics::{classification_metrics, ClassificationMetrics, PrPoint, RocPoint};

pub const DISCHARGE_REWARD: f64 = 1.0;
pub const DEATH_REWARD: f64 = -1.0;

/// Anything that maps state features to a probability of death.
pub trait RiskScorer: Send + Sync {
    fn risk_score(&self, x: &StateFeatures) -> Result<f64>;
}

/// Reference risk model: boosted shallow trees on the full state features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub kind: String,
    pub model: GbdtClassifier,
}

impl RiskModel {
    pub fn feature_importances(&self) -> &[f64] {
        &self.model.importances
    }
}

impl RiskScorer for RiskModel {
    fn risk_score(&self, x: &StateFeatures) -> Result<f64> {
        self.model.predict_proba(&x.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    TerminalOnly,
    TerminalPlusIntermediate,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal" | "terminal_only" => Ok(RewardMode::TerminalOnly),
            "intermediate" | "terminal_plus_intermediate" => Ok(RewardMode::TerminalPlusIntermediate),
            other => Err(Error::InvalidArgument(format!("unknown reward mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardSpec {
    pub mode: RewardMode,
}

impl RewardSpec {
    pub fn terminal_reward(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Discharge => DISCHARGE_REWARD,
            Outcome::Death => DEATH_REWARD,
        }
    }
}

/// Every transition labelled with its episode's outcome (death = positive).
pub fn risk_training_rows(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut x = Vec::with_capacity(ds.n_transitions());
    let mut y = Vec::with_capacity(ds.n_transitions());
    for ep in &ds.episodes {
        let died = ep.outcome.is_death();
        for f in episode_features(ep) {
            x.push(f.to_vec());
            y.push(died);
        }
    }
    (x, y)
}

pub fn fit_risk_model(train: &Dataset, cfg: &GbdtConfig) -> Result<RiskModel> {
    let (x, y) = risk_training_rows(train);
    Ok(RiskModel {
        kind: "gbdt".into(),
        model: GbdtClassifier::fit(&x, &y, cfg)?,
    })
}

/// One reward per transition. Terminal transitions get the outcome reward
/// only; in intermediate mode transition `t` otherwise gets
/// `risk(x_t) - risk(x_{t+1})`.
pub fn compute_rewards(episode: &Episode, model: Option<&dyn RiskScorer>, spec: &RewardSpec) -> Result<Vec<f64>> {
    let n = episode.transitions.len();
    let mut rewards = vec![0.0; n];
    if spec.mode == RewardMode::TerminalPlusIntermediate {
        let model = model.ok_or_else(|| {
            Error::InvalidArgument("intermediate reward mode requires a fitted risk model".into())
        })?;
        let risk: Vec<f64> = episode_features(episode)
            .iter()
            .map(|f| model.risk_score(f))
            .collect::<Result<_>>()?;
        for t in 0..n.saturating_sub(1) {
            rewards[t] = -(risk[t + 1] - risk[t]);
        }
    }
    if let Some(last) = rewards.last_mut() {
        *last = spec.terminal_reward(episode.outcome);
    }
    Ok(rewards)
}

/// Rewards for all transitions in dataset order.
pub fn dataset_rewards(ds: &Dataset, model: Option<&dyn RiskScorer>, spec: &RewardSpec) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ds.n_transitions());
    for ep in &ds.episodes {
        out.extend(compute_rewards(ep, model, spec)?);
    }
    Ok(out)
}

pub fn evaluate_risk_model(model: &dyn RiskScorer, test: &Dataset) -> Result<ClassificationMetrics> {
    let mut scores = Vec::with_capacity(test.n_transitions());
    let mut labels = Vec::with_capacity(test.n_transitions());
    for ep in &test.episodes {
        for f in episode_features(ep) {
            scores.push(model.risk_score(&f)?);
            labels.push(ep.outcome.is_death());
        }
    }
    classification_metrics(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClinicalLabel, Terminal, Transition};

    /// Risk equal to the first physiological feature.
    struct FirstFeature;

    impl RiskScorer for FirstFeature {
        fn risk_score(&self, x: &StateFeatures) -> Result<f64> {
            Ok(x.physio[0])
        }
    }

    fn episode(risks: &[f64], outcome: Terminal) -> Episode {
        let n = risks.len();
        let transitions = risks
            .iter()
            .enumerate()
            .map(|(i, &r)| Transition {
                patient_id: "p".into(),
                step_index: i as u32,
                features: vec![r],
                fluid_ml: 0.0,
                vis: 0.0,
                clinical_label: ClinicalLabel::NonSepsis,
                terminal: if i + 1 == n { outcome } else { Terminal::None },
            })
            .collect();
        Episode::new(transitions).unwrap()
    }

    #[test]
    fn terminal_only() {
        let ep = episode(&[0.4, 0.3, 0.2], Terminal::Death);
        let r = compute_rewards(&ep, None, &RewardSpec::default()).unwrap();
        assert_eq!(r, vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn intermediate_sign_and_telescoping() {
        let ep = episode(&[0.4, 0.3, 0.35, 0.1], Terminal::Discharge);
        let spec = RewardSpec {
            mode: RewardMode::TerminalPlusIntermediate,
        };
        let r = compute_rewards(&ep, Some(&FirstFeature), &spec).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-15);
        assert_eq!(r[3], 1.0);
        let sum: f64 = r[..3].iter().sum();
        assert!((sum - (0.4 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn intermediate_requires_model() {
        let ep = episode(&[0.4], Terminal::Discharge);
        let spec = RewardSpec {
            mode: RewardMode::TerminalPlusIntermediate,
        };
        assert!(compute_rewards(&ep, None, &spec).is_err());
    }
}
