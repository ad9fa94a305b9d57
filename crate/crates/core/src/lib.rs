//! Offline reinforcement learning for treatment policies on episodic logs:
//! discrete action and state spaces, tabular MDP estimation and solving,
//! bootstrap verdicts per action, policy evaluation and a confounded
//! cohort simulator.

// `!(x >= 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod data;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod mdp;
pub mod pipeline;
pub mod reward;
pub mod sim;
pub mod state;
pub mod stats;
pub mod uncertainty;

pub use action::{action_components, fit_action_grid, ActionGrid, ActionId, N_ACTIONS, N_FLUID_BINS, N_VASO_BINS};
pub use data::{
    parse_transition_log, split_by_patient, validate_dataset, ClinicalLabel, Dataset, Episode, LogFormat, Outcome,
    Terminal, Transition, ValidationReport,
};
pub use error::{Error, Result};
pub use eval::{compare_policies, policy_value, start_distribution, PolicyValues, StartDistribution};
pub use mdp::{
    estimate_mdp, solve_q_optimal, solve_q_policy, tag_dataset, MdpEstimate, PolicyKind, PolicySpec, QTable,
    SolverConfig, TaggedEpisode, TaggedTransition,
};
pub use pipeline::{fit_pipeline, homogeneity_comparison, refit_with_reward, GridChoice, ModelBundle, PipelineConfig};
pub use reward::{compute_rewards, RewardMode, RewardSpec, RiskModel, RiskScorer};
pub use sim::{build_ground_truth, oracle_solution, simulate_cohort, GroundTruthMdp, SimConfig};
pub use state::{StateFeatures, StateId, StateModel, StateSpaceConfig};
pub use stats::rank_sum_test;
pub use uncertainty::{action_verdicts, bootstrap_ensemble, BootstrapConfig, BootstrapEnsemble, Verdict, VerdictStatus};
