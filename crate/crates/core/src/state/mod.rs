//! Discrete state space: feature construction, CCA embedding, k-means states.

pub mod cca;
pub mod features;
pub mod kmeans;

use serde::{Deserialize, Serialize};

use crate::action::ActionGrid;
use crate::data::{Dataset, Outcome};
use crate::error::{Error, Result};
use crate::matrix::{rows_to_dmatrix, RowMatrix};

pub use cca::{fit_cca, CcaModel};
pub use features::{build_feature_vector, episode_features, StateFeatures, HISTORY_LEN};
pub use kmeans::{aic_curve, fit_kmeans, kmeans_aic, select_k_elbow, KMeansConfig, KMeansFit};

/// Non-absorbing states are `0..n_states`; `n_states` is discharge and
/// `n_states + 1` is death.
pub type StateId = usize;

/// Number of CCA target columns: fluid bin, vaso bin, mortality, label one-hot.
pub const CCA_TARGET_DIM: usize = 6;

/// Space in which k-means runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Embedding {
    Cca(CcaModel),
    /// z-scored raw features, no projection.
    Standardized { mean: Vec<f64>, std: Vec<f64> },
}

impl Embedding {
    pub fn input_dim(&self) -> usize {
        match self {
            Embedding::Cca(m) => m.input_dim(),
            Embedding::Standardized { mean, .. } => mean.len(),
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Embedding::Cca(m) => m.project(x),
            Embedding::Standardized { mean, std } => {
                if x.len() != mean.len() {
                    return Err(Error::dim(mean.len(), x.len(), "state features"));
                }
                Ok(x.iter()
                    .zip(mean.iter().zip(std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub embedding: Embedding,
    /// `n_states x embedding dim`.
    pub centroids: RowMatrix,
    pub n_states: usize,
}

impl StateModel {
    pub fn discharge_id(&self) -> StateId {
        self.n_states
    }

    pub fn death_id(&self) -> StateId {
        self.n_states + 1
    }

    /// Total id space including the two absorbing states.
    pub fn n_total(&self) -> usize {
        self.n_states + 2
    }

    pub fn absorbing_id(&self, outcome: Outcome) -> StateId {
        match outcome {
            Outcome::Discharge => self.discharge_id(),
            Outcome::Death => self.death_id(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.input_dim()
    }

    /// Nearest centroid in the embedded space; ties go to the lowest id.
    pub fn assign_embedded(&self, z: &[f64]) -> StateId {
        let mut best = (0, f64::INFINITY);
        for s in 0..self.n_states {
            let d = kmeans::sq_dist(self.centroids.row(s), z);
            if d < best.1 {
                best = (s, d);
            }
        }
        best.0
    }

    pub fn assign_state(&self, x: &StateFeatures) -> Result<StateId> {
        let z = self.embedding.embed(&x.to_vec())?;
        Ok(self.assign_embedded(&z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Cca,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateSpaceConfig {
    pub embedding: EmbeddingKind,
    pub k_cca: usize,
    pub ridge: f64,
    /// Fixed number of states; `None` selects k by the AIC elbow over `k_grid`.
    pub k_states: Option<usize>,
    pub k_grid: Vec<usize>,
    pub seed: u64,
    pub kmeans: KMeansConfig,
}

impl Default for StateSpaceConfig {
    fn default() -> Self {
        StateSpaceConfig {
            embedding: EmbeddingKind::Cca,
            k_cca: cca::DEFAULT_K_CCA,
            ridge: cca::DEFAULT_RIDGE,
            k_states: None,
            k_grid: vec![5, 10, 20, 50, 100, 150, 200, 300, 400],
            seed: 0,
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateFit {
    pub model: StateModel,
    /// `(k, AIC)` pairs when k was selected automatically.
    pub aic_curve: Option<Vec<(usize, f64)>>,
    /// State of each transition, in dataset order.
    pub labels: Vec<StateId>,
}

/// Feature rows for every transition, in dataset order.
pub fn dataset_features(ds: &Dataset) -> Vec<StateFeatures> {
    ds.episodes.iter().flat_map(episode_features).collect()
}

/// CCA target rows aligned with [`dataset_features`].
pub fn cca_targets(ds: &Dataset, grid: &ActionGrid) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(ds.n_transitions());
    for ep in &ds.episodes {
        let died = if ep.outcome.is_death() { 1.0 } else { 0.0 };
        for t in &ep.transitions {
            let a = grid.discretize(t.fluid_ml, t.vis)?;
            let mut row = vec![a.fluid_bin() as f64, a.vaso_bin() as f64, died, 0.0, 0.0, 0.0];
            row[3 + t.clinical_label.index()] = 1.0;
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Learns the state space on `ds`.
pub fn fit_state_model(ds: &Dataset, grid: &ActionGrid, cfg: &StateSpaceConfig) -> Result<StateFit> {
    let feats = dataset_features(ds);
    if feats.is_empty() {
        return Err(Error::InvalidData("no transitions to cluster".into()));
    }
    let x_rows: Vec<Vec<f64>> = feats.iter().map(StateFeatures::to_vec).collect();
    let x = rows_to_dmatrix(&x_rows);
    let embedding = match cfg.embedding {
        EmbeddingKind::Cca => {
            let y = rows_to_dmatrix(&cca_targets(ds, grid)?);
            Embedding::Cca(fit_cca(&x, &y, cfg.k_cca, cfg.ridge)?)
        }
        EmbeddingKind::Raw => {
            let (mean, std) = cca::column_stats(&x);
            Embedding::Standardized { mean, std }
        }
    };
    let points: Vec<Vec<f64>> = x_rows
        .iter()
        .map(|r| embedding.embed(r))
        .collect::<Result<_>>()?;

    let (k, curve) = match cfg.k_states {
        Some(k) => (k, None),
        None => {
            let ks: Vec<usize> = cfg.k_grid.iter().copied().filter(|&k| k <= points.len()).collect();
            let curve = aic_curve(&points, &ks, cfg.seed, cfg.kmeans)?;
            (select_k_elbow(&curve)?, Some(curve))
        }
    };
    let fit = fit_kmeans(&points, k, cfg.seed, cfg.kmeans)?;
    let model = StateModel {
        embedding,
        centroids: RowMatrix::from_rows(&fit.centroids),
        n_states: k,
    };
    let labels = points.iter().map(|z| model.assign_embedded(z)).collect();
    Ok(StateFit {
        model,
        aic_curve: curve,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> StateModel {
        StateModel {
            embedding: Embedding::Standardized {
                mean: vec![0.0; 2],
                std: vec![1.0; 2],
            },
            centroids: RowMatrix::from_rows(&[
                vec![10.0, 10.0],
                vec![5.0, 5.0],
                vec![-1.0, 0.0],
                vec![3.0, 3.0],
                vec![9.0, 9.0],
                vec![1.0, 0.0],
                vec![6.0, 6.0],
                vec![2.0, -7.0],
            ]),
            n_states: 8,
        }
    }

    #[test]
    fn assign_exact_and_ties() {
        let m = toy_model();
        let at = |z: &[f64]| m.assign_embedded(z);
        assert_eq!(at(&[2.0, -7.0]), 7);
        // Equidistant from states 2 and 5.
        assert_eq!(at(&[0.0, 0.0]), 2);
        assert_eq!((m.discharge_id(), m.death_id()), (8, 9));
    }
}
