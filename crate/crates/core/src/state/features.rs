use serde::{Deserialize, Serialize};

use crate::data::Episode;
use crate::error::{Error, Result};

/// Number of preceding windows carried as treatment history (3 x 4 h = 12 h).
pub const HISTORY_WINDOWS: usize = 3;
pub const HISTORY_LEN: usize = 2 * HISTORY_WINDOWS;

/// Physiological features plus the doses of the preceding windows.
///
/// `history[2j]` / `history[2j + 1]` hold the fluid / VIS of step `t - 1 - j`,
/// zero before the start of the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    pub physio: Vec<f64>,
    pub history: [f64; HISTORY_LEN],
}

impl StateFeatures {
    pub fn dim(&self) -> usize {
        self.physio.len() + HISTORY_LEN
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.physio);
        v.extend_from_slice(&self.history);
        v
    }

    pub fn history_fluids(&self) -> [f64; HISTORY_WINDOWS] {
        std::array::from_fn(|j| self.history[2 * j])
    }

    pub fn history_vis(&self) -> [f64; HISTORY_WINDOWS] {
        std::array::from_fn(|j| self.history[2 * j + 1])
    }
}

/// Feature vector for the transition at position `step` of `episode`.
pub fn build_feature_vector(episode: &Episode, step: usize) -> Result<StateFeatures> {
    let t = episode.transitions.get(step).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "step {step} outside episode of length {}",
            episode.len()
        ))
    })?;
    let mut history = [0.0; HISTORY_LEN];
    for j in 0..HISTORY_WINDOWS {
        if let Some(prev) = step.checked_sub(1 + j) {
            let p = &episode.transitions[prev];
            history[2 * j] = p.fluid_ml;
            history[2 * j + 1] = p.vis;
        }
    }
    Ok(StateFeatures {
        physio: t.features.clone(),
        history,
    })
}

/// Feature vectors for every transition of an episode, in order.
pub fn episode_features(episode: &Episode) -> Vec<StateFeatures> {
    (0..episode.len())
        .map(|i| build_feature_vector(episode, i).expect("index in range"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClinicalLabel, Terminal, Transition};

    fn episode(fluids: &[f64]) -> Episode {
        let n = fluids.len();
        let ts = fluids
            .iter()
            .enumerate()
            .map(|(i, &f)| Transition {
                patient_id: "p".into(),
                step_index: i as u32,
                features: vec![i as f64],
                fluid_ml: f,
                vis: f / 100.0,
                clinical_label: ClinicalLabel::Sepsis,
                terminal: if i + 1 == n { Terminal::Discharge } else { Terminal::None },
            })
            .collect();
        Episode::new(ts).unwrap()
    }

    #[test]
    fn history_windows() {
        let ep = episode(&[100.0, 200.0, 300.0, 400.0, 500.0, 600.0]);
        let f0 = build_feature_vector(&ep, 0).unwrap();
        assert_eq!(f0.history, [0.0; 6]);
        let f2 = build_feature_vector(&ep, 2).unwrap();
        assert_eq!(f2.history_fluids(), [200.0, 100.0, 0.0]);
        assert_eq!(f2.history_vis(), [2.0, 1.0, 0.0]);
        let f5 = build_feature_vector(&ep, 5).unwrap();
        assert_eq!(f5.history_fluids(), [500.0, 400.0, 300.0]);
        assert_eq!(f5.physio, vec![5.0]);
        assert_eq!(f5.to_vec().len(), 7);
        assert!(build_feature_vector(&ep, 6).is_err());
    }
}
