//! End-to-end fit: action grid, state space, rewards, MDP, Q.

use serde::{Deserialize, Serialize};

use crate::action::{fit_action_grid, ActionGrid, N_ACTIONS};
use crate::data::{split_by_patient, Dataset};
use crate::error::{Error, Result};
use crate::mdp::{estimate_mdp, flatten, solve_q_optimal, tag_dataset, MdpEstimate, QTable, SolverConfig, TaggedEpisode};
use crate::reward::{
    dataset_rewards, evaluate_risk_model, fit_risk_model, ClassificationMetrics, GbdtConfig, RewardMode, RewardSpec,
    RiskModel, RiskScorer,
};
use crate::eval::{state_homogeneity_report, HomogeneityVariant};
use crate::state::{fit_state_model, EmbeddingKind, StateModel, StateSpaceConfig};
use crate::uncertainty::BootstrapConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridChoice {
    /// Quintiles of the observed nonzero doses.
    #[default]
    Fit,
    /// The published fluid/VIS cutoffs.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub action_grid: GridChoice,
    pub state: StateSpaceConfig,
    pub reward: RewardSpec,
    pub risk_model: GbdtConfig,
    /// Patient fraction held out to evaluate the risk model.
    pub risk_holdout: f64,
    pub solver: SolverConfig,
    pub bootstrap: BootstrapConfig,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            action_grid: GridChoice::Fit,
            state: StateSpaceConfig::default(),
            reward: RewardSpec::default(),
            risk_model: GbdtConfig::default(),
            risk_holdout: 0.2,
            solver: SolverConfig::default(),
            bootstrap: BootstrapConfig::default(),
            alpha: 0.01,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Settings for simulated cohorts. Doses are emitted on the reference
    /// grid, and the simulator's targets carry only two independent latent
    /// directions, so the remaining correlates would be pure noise for
    /// k-means.
    pub fn simulated(seed: u64) -> Self {
        let mut cfg = PipelineConfig {
            action_grid: GridChoice::Reference,
            seed,
            ..Default::default()
        };
        cfg.state.k_cca = 2;
        cfg.state.k_states = Some(30);
        cfg.state.seed = seed;
        cfg.bootstrap.seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.risk_holdout > 0.0 && self.risk_holdout < 1.0) {
            return Err(Error::InvalidArgument("risk_holdout must be in (0, 1)".into()));
        }
        if self.bootstrap.iterations < 2 {
            return Err(Error::InvalidArgument("bootstrap needs at least 2 iterations".into()));
        }
        Ok(())
    }
}

/// Everything later stages need to re-tag data and issue recommendations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub action_grid: ActionGrid,
    pub state_model: StateModel,
    pub risk_model: Option<RiskModel>,
    pub risk_metrics: Option<ClassificationMetrics>,
    pub aic_curve: Option<Vec<(usize, f64)>>,
    pub q: QTable,
}

impl ModelBundle {
    pub fn n_states(&self) -> usize {
        self.state_model.n_states
    }

    pub fn risk_scorer(&self) -> Option<&dyn RiskScorer> {
        self.risk_model.as_ref().map(|m| m as &dyn RiskScorer)
    }

    /// Tags a dataset with this bundle's fixed state, action and reward models.
    pub fn tag(&self, ds: &Dataset) -> Result<Vec<TaggedEpisode>> {
        let rewards = dataset_rewards(ds, self.risk_scorer(), &self.config.reward)?;
        tag_dataset(ds, &self.state_model, &self.action_grid, &rewards)
    }
}

pub struct FitOutput {
    pub bundle: ModelBundle,
    pub tagged: Vec<TaggedEpisode>,
    pub mdp: MdpEstimate,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidData(m) => Error::InvalidData(format!("{name}: {m}")),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{name}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{name}: {m}")),
        other => other,
    })
}

pub fn choose_grid(ds: &Dataset, choice: GridChoice) -> Result<ActionGrid> {
    match choice {
        GridChoice::Reference => Ok(ActionGrid::reference()),
        GridChoice::Fit => {
            let doses: Vec<(f64, f64)> = ds.transitions().map(|t| (t.fluid_ml, t.vis)).collect();
            fit_action_grid(&doses)
        }
    }
}

/// Risk model on a patient-level split; returns the model and its holdout
/// metrics.
pub fn fit_risk_stage(ds: &Dataset, cfg: &PipelineConfig) -> Result<(RiskModel, ClassificationMetrics)> {
    let (train, test) = split_by_patient(ds, cfg.risk_holdout, cfg.seed)?;
    let model = fit_risk_model(&train, &cfg.risk_model)?;
    let metrics = evaluate_risk_model(&model, &test)?;
    Ok((model, metrics))
}

/// Rewards, MDP and Q for a fixed state space and grid.
pub fn solve_stage(
    ds: &Dataset,
    state_model: &StateModel,
    grid: &ActionGrid,
    risk: Option<&dyn RiskScorer>,
    cfg: &PipelineConfig,
) -> Result<(Vec<TaggedEpisode>, MdpEstimate, QTable)> {
    let rewards = stage("reward", dataset_rewards(ds, risk, &cfg.reward))?;
    let tagged = stage("tagging", tag_dataset(ds, state_model, grid, &rewards))?;
    let mdp = stage("mdp", estimate_mdp(flatten(&tagged), state_model.n_states, N_ACTIONS))?;
    let q = stage("solver", solve_q_optimal(&mdp, &cfg.solver))?;
    Ok((tagged, mdp, q))
}

pub fn fit_pipeline(ds: &Dataset, cfg: &PipelineConfig) -> Result<FitOutput> {
    stage("config", cfg.validate())?;
    let grid = stage("action grid", choose_grid(ds, cfg.action_grid))?;
    let state_fit = stage("state space", fit_state_model(ds, &grid, &cfg.state))?;
    let (risk_model, risk_metrics) = match cfg.reward.mode {
        RewardMode::TerminalOnly => (None, None),
        RewardMode::TerminalPlusIntermediate => {
            let (m, metrics) = stage("risk model", fit_risk_stage(ds, cfg))?;
            (Some(m), Some(metrics))
        }
    };
    let risk = risk_model.as_ref().map(|m| m as &dyn RiskScorer);
    let (tagged, mdp, q) = solve_stage(ds, &state_fit.model, &grid, risk, cfg)?;
    Ok(FitOutput {
        bundle: ModelBundle {
            config: cfg.clone(),
            action_grid: grid,
            state_model: state_fit.model,
            risk_model,
            risk_metrics,
            aic_curve: state_fit.aic_curve,
            q,
        },
        tagged,
        mdp,
    })
}

/// Re-solves with a different reward mode while keeping the bundle's grid
/// and state space. A risk model is fitted only if the new mode needs one
/// and the bundle lacks it.
pub fn refit_with_reward(ds: &Dataset, bundle: &ModelBundle, mode: RewardMode) -> Result<FitOutput> {
    let mut cfg = bundle.config.clone();
    cfg.reward = RewardSpec { mode };
    let (risk_model, risk_metrics) = match (mode, &bundle.risk_model) {
        (RewardMode::TerminalOnly, _) => (None, None),
        (RewardMode::TerminalPlusIntermediate, Some(m)) => (Some(m.clone()), bundle.risk_metrics.clone()),
        (RewardMode::TerminalPlusIntermediate, None) => {
            let (m, metrics) = stage("risk model", fit_risk_stage(ds, &cfg))?;
            (Some(m), Some(metrics))
        }
    };
    let risk = risk_model.as_ref().map(|m| m as &dyn RiskScorer);
    let (tagged, mdp, q) = solve_stage(ds, &bundle.state_model, &bundle.action_grid, risk, &cfg)?;
    Ok(FitOutput {
        bundle: ModelBundle {
            config: cfg,
            action_grid: bundle.action_grid.clone(),
            state_model: bundle.state_model.clone(),
            risk_model,
            risk_metrics,
            aic_curve: bundle.aic_curve.clone(),
            q,
        },
        tagged,
        mdp,
    })
}

/// Homogeneity of the bundle's states against a raw-feature k-means with
/// the same number of states and seed. Returns `[bundle, raw]`.
pub fn homogeneity_comparison(ds: &Dataset, bundle: &ModelBundle, tagged: &[TaggedEpisode]) -> Result<Vec<HomogeneityVariant>> {
    let k = bundle.n_states();
    let raw_cfg = StateSpaceConfig {
        embedding: EmbeddingKind::Raw,
        k_states: Some(k),
        ..bundle.config.state.clone()
    };
    let raw = stage("raw state space", fit_state_model(ds, &bundle.action_grid, &raw_cfg))?;
    let rewards = dataset_rewards(ds, None, &RewardSpec::default())?;
    let raw_tagged = tag_dataset(ds, &raw.model, &bundle.action_grid, &rewards)?;
    let name = match bundle.config.state.embedding {
        EmbeddingKind::Cca => "cca",
        EmbeddingKind::Raw => "model",
    };
    Ok(state_homogeneity_report(&[(name, tagged, k), ("raw", &raw_tagged, k)]))
}
