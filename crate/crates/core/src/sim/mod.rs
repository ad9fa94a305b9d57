//! Synthetic cohorts from a known latent MDP with a severity-to-treatment
//! confound. Two response phenotypes times three severity levels; the
//! refractory phenotype only recovers under the highest dose, while the
//! clinician (behavior) policy doses by acuity.
//!
//! Scenario constants live in `scenario.json`.

// Kernels are indexed [latent][dose][latent]; explicit index loops read closest to the math.
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionGrid, ActionId};
use crate::data::{ClinicalLabel, Dataset, Episode, Terminal, Transition};
use crate::error::{Error, Result};

pub const N_SEVERITY: usize = 3;
pub const N_DOSES: usize = 4;
const DEFAULT_SCENARIO: &str = include_str!("scenario.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeSpec {
    pub name: String,
    pub prevalence: f64,
    pub initial_severity: [f64; N_SEVERITY],
    /// Dose level each severity needs to be treated adequately.
    pub required_dose: [usize; N_SEVERITY],
    /// Clinician-perceived acuity in [0, 1]; drives the behavior policy.
    pub acuity: [f64; N_SEVERITY],
    /// One-step improvement / worsening probabilities under adequate dosing.
    pub improve: f64,
    pub worsen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub kernel_width: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSpec {
    pub severity_dims: usize,
    pub severity_step: f64,
    pub phenotype_dims: usize,
    pub phenotype_separation: f64,
    pub nuisance_dims: usize,
    pub nuisance_sd: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub phenotypes: Vec<PhenotypeSpec>,
    /// Probability moved from improvement to worsening per dose level short.
    pub under_dose_shift: f64,
    /// Same, per dose level in excess.
    pub over_dose_shift: f64,
    pub min_improve: f64,
    /// Action id emitted for each dose level.
    pub dose_actions: [usize; N_DOSES],
    pub behavior: BehaviorSpec,
    pub emission: EmissionSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SCENARIO).expect("embedded scenario is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_patients: usize,
    pub max_steps: usize,
    /// Confound strength in [0, 1].
    pub confound: f64,
    /// Emit the phenotype-separating feature dimensions.
    pub observable: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_patients: 2000,
            max_steps: 30,
            confound: 1.0,
            observable: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidArgument("n_patients must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.confound) {
            return Err(Error::InvalidArgument(format!("confound must be in [0, 1], got {}", self.confound)));
        }
        Ok(())
    }
}

/// Latent state `phenotype * 3 + (severity - 1)`; `discharge()` and
/// `death()` are absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMdp {
    pub scenario: Scenario,
    pub confound: f64,
    /// `kernel[l][d][l']` over `n_latent + 2` successors.
    pub kernel: Vec<[Vec<f64>; N_DOSES]>,
    /// `behavior[l][d]`.
    pub behavior: Vec<[f64; N_DOSES]>,
    pub initial: Vec<f64>,
}

impl GroundTruthMdp {
    pub fn n_latent(&self) -> usize {
        self.kernel.len()
    }

    pub fn discharge(&self) -> usize {
        self.n_latent()
    }

    pub fn death(&self) -> usize {
        self.n_latent() + 1
    }

    pub fn phenotype(&self, l: usize) -> usize {
        l / N_SEVERITY
    }

    /// 1-based severity level.
    pub fn severity(&self, l: usize) -> usize {
        l % N_SEVERITY + 1
    }

    pub fn acuity(&self, l: usize) -> f64 {
        self.scenario.phenotypes[self.phenotype(l)].acuity[self.severity(l) - 1]
    }

    pub fn required_dose(&self, l: usize) -> usize {
        self.scenario.phenotypes[self.phenotype(l)].required_dose[self.severity(l) - 1]
    }

    /// Phenotype 1 (refractory) presents as septic shock; the other as
    /// sepsis, or non-sepsis at the lowest severity.
    pub fn label(&self, l: usize) -> ClinicalLabel {
        match (self.phenotype(l), self.severity(l)) {
            (0, 1) => ClinicalLabel::NonSepsis,
            (0, _) => ClinicalLabel::Sepsis,
            _ => ClinicalLabel::SepticShock,
        }
    }

    pub fn dose_action(&self, d: usize) -> ActionId {
        ActionId::new(self.scenario.dose_actions[d]).expect("validated dose action")
    }

    /// Dose level of an action id, if it is one the scenario emits.
    pub fn dose_of_action(&self, a: usize) -> Option<usize> {
        self.scenario.dose_actions.iter().position(|&x| x == a)
    }

    /// Expected immediate reward: +1 on discharge, -1 on death.
    pub fn reward(&self, l: usize, d: usize) -> f64 {
        self.kernel[l][d][self.discharge()] - self.kernel[l][d][self.death()]
    }

    /// Feature dimension of simulated cohorts.
    pub fn feature_dim(&self, observable: bool) -> usize {
        let e = &self.scenario.emission;
        e.severity_dims + if observable { e.phenotype_dims } else { 0 } + e.nuisance_dims
    }

    fn feature_names(&self, observable: bool) -> Vec<String> {
        let e = &self.scenario.emission;
        let mut names = Vec::new();
        names.extend((0..e.severity_dims).map(|i| format!("severity_{i}")));
        if observable {
            names.extend((0..e.phenotype_dims).map(|i| format!("phenotype_{i}")));
        }
        names.extend((0..e.nuisance_dims).map(|i| format!("nuisance_{i}")));
        names
    }

    fn emit(&self, l: usize, observable: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let e = &self.scenario.emission;
        let mut x = Vec::with_capacity(self.feature_dim(observable));
        let sev_mean = e.severity_step * (self.severity(l) as f64 - 2.0);
        let noise = |rng: &mut ChaCha8Rng| -> f64 { rng.sample::<f64, _>(StandardNormal) };
        for _ in 0..e.severity_dims {
            x.push(sev_mean + e.noise_sd * noise(rng));
        }
        if observable {
            let ph_mean = e.phenotype_separation * (self.phenotype(l) as f64 - 0.5);
            for _ in 0..e.phenotype_dims {
                x.push(ph_mean + e.noise_sd * noise(rng));
            }
        }
        for _ in 0..e.nuisance_dims {
            x.push(e.nuisance_sd * noise(rng));
        }
        x
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{what} must be a probability vector")));
    }
    Ok(())
}

/// Instantiates the scenario's kernel, behavior policy and initial
/// distribution.
pub fn build_ground_truth_with(scenario: &Scenario, cfg: &SimConfig) -> Result<GroundTruthMdp> {
    cfg.validate()?;
    let n_ph = scenario.phenotypes.len();
    if n_ph == 0 {
        return Err(Error::InvalidArgument("scenario needs at least one phenotype".into()));
    }
    if scenario.dose_actions.iter().any(|&a| a >= crate::action::N_ACTIONS) {
        return Err(Error::InvalidArgument("dose action out of range".into()));
    }
    let b = &scenario.behavior;
    if !(b.kernel_width > 0.0) || !(0.0..=1.0).contains(&b.epsilon) {
        return Err(Error::InvalidArgument("invalid behavior parameters".into()));
    }
    let prevalence: Vec<f64> = scenario.phenotypes.iter().map(|p| p.prevalence).collect();
    check_distribution(&prevalence, "phenotype prevalence")?;

    let n_latent = n_ph * N_SEVERITY;
    let (discharge, death) = (n_latent, n_latent + 1);
    let mut kernel = Vec::with_capacity(n_latent);
    let mut behavior = Vec::with_capacity(n_latent);
    let mut initial = Vec::with_capacity(n_latent);
    for (ph, spec) in scenario.phenotypes.iter().enumerate() {
        check_distribution(&spec.initial_severity, "initial severity")?;
        if spec.improve + spec.worsen > 1.0 || spec.required_dose.iter().any(|&d| d >= N_DOSES) {
            return Err(Error::InvalidArgument(format!("phenotype {} is inconsistent", spec.name)));
        }
        for sev in 0..N_SEVERITY {
            let l = ph * N_SEVERITY + sev;
            initial.push(spec.prevalence * spec.initial_severity[sev]);
            let rows: [Vec<f64>; N_DOSES] = std::array::from_fn(|d| {
                let gap = d as f64 - spec.required_dose[sev] as f64;
                let shift = if gap < 0.0 {
                    -gap * scenario.under_dose_shift
                } else {
                    gap * scenario.over_dose_shift
                };
                let improve = (spec.improve - shift).max(scenario.min_improve.min(spec.improve));
                let worsen = (spec.worsen + shift).min(1.0 - improve);
                let mut row = vec![0.0; n_latent + 2];
                let up = if sev == 0 { discharge } else { l - 1 };
                let down = if sev == N_SEVERITY - 1 { death } else { l + 1 };
                row[up] += improve;
                row[down] += worsen;
                row[l] += 1.0 - improve - worsen;
                row
            });
            kernel.push(rows);
            let target = cfg.confound * (N_DOSES - 1) as f64 * spec.acuity[sev]
                + (1.0 - cfg.confound) * (N_DOSES - 1) as f64 / 2.0;
            let w: [f64; N_DOSES] =
                std::array::from_fn(|d| (-(d as f64 - target).powi(2) / (2.0 * b.kernel_width.powi(2))).exp());
            let total: f64 = w.iter().sum();
            behavior.push(std::array::from_fn(|d| {
                (1.0 - b.epsilon) * w[d] / total + b.epsilon / N_DOSES as f64
            }));
        }
    }
    Ok(GroundTruthMdp {
        scenario: scenario.clone(),
        confound: cfg.confound,
        kernel,
        behavior,
        initial,
    })
}

pub fn build_ground_truth(cfg: &SimConfig) -> Result<GroundTruthMdp> {
    build_ground_truth_with(&Scenario::default(), cfg)
}

/// Latent state behind one simulated transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub patient_id: String,
    pub step_index: u32,
    pub latent_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCohort {
    pub dataset: Dataset,
    /// In dataset transition order.
    pub truth: Vec<TruthRow>,
}

pub fn patient_id(i: usize) -> String {
    format!("p{i:06}")
}

/// Samples episodes under the behavior policy. Patient `i` draws from its
/// own ChaCha8 stream, so the cohort is independent of thread count. An
/// episode still running at `max_steps` is closed by sampling its outcome
/// from the exact death probability of the next latent state under the
/// behavior policy.
pub fn simulate_cohort(gt: &GroundTruthMdp, cfg: &SimConfig) -> Result<SimulatedCohort> {
    cfg.validate()?;
    let grid = ActionGrid::reference();
    let death_prob = absorption_death_probability(gt, &gt.behavior)?;
    let init = WeightedIndex::new(&gt.initial).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let behavior: Vec<WeightedIndex<f64>> = gt
        .behavior
        .iter()
        .map(|w| WeightedIndex::new(w).expect("behavior weights are positive"))
        .collect();
    let kernels: Vec<Vec<WeightedIndex<f64>>> = gt
        .kernel
        .iter()
        .map(|rows| rows.iter().map(|r| WeightedIndex::new(r).expect("kernel row")).collect())
        .collect();

    let per_patient: Vec<(Episode, Vec<TruthRow>)> = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let pid = patient_id(i);
            let mut l = init.sample(&mut rng);
            let mut transitions = Vec::new();
            let mut truth = Vec::new();
            for step in 0..cfg.max_steps {
                let features = gt.emit(l, cfg.observable, &mut rng);
                let d = behavior[l].sample(&mut rng);
                let (fluid_ml, vis) = grid.representative_doses(gt.dose_action(d));
                let next = kernels[l][d].sample(&mut rng);
                let terminal = if next == gt.discharge() {
                    Terminal::Discharge
                } else if next == gt.death() {
                    Terminal::Death
                } else if step + 1 == cfg.max_steps {
                    if rng.random::<f64>() < death_prob[next] {
                        Terminal::Death
                    } else {
                        Terminal::Discharge
                    }
                } else {
                    Terminal::None
                };
                transitions.push(Transition {
                    patient_id: pid.clone(),
                    step_index: step as u32,
                    features,
                    fluid_ml,
                    vis,
                    clinical_label: gt.label(l),
                    terminal,
                });
                truth.push(TruthRow {
                    patient_id: pid.clone(),
                    step_index: step as u32,
                    latent_state: l,
                });
                if terminal != Terminal::None {
                    break;
                }
                l = next;
            }
            (Episode::new(transitions).expect("simulated episode is valid"), truth)
        })
        .collect();

    let (episodes, truth): (Vec<Episode>, Vec<Vec<TruthRow>>) = per_patient.into_iter().unzip();
    let dataset = Dataset::new(episodes, gt.feature_names(cfg.observable))?;
    Ok(SimulatedCohort {
        dataset,
        truth: truth.into_iter().flatten().collect(),
    })
}

pub fn write_truth_csv<W: std::io::Write>(truth: &[TruthRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in truth {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: std::io::Read>(r: R) -> Result<Vec<TruthRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Exact quantities on the latent MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub gamma: f64,
    /// `q[l][d]` under the optimal policy.
    pub q: Vec<[f64; N_DOSES]>,
    /// Optimal dose per latent state (lowest on ties).
    pub optimal_dose: Vec<usize>,
    pub optimal_value: Vec<f64>,
    pub behavior_value: Vec<f64>,
    pub behavior_death_probability: Vec<f64>,
}

impl OracleSolution {
    pub fn optimal_action(&self, gt: &GroundTruthMdp, l: usize) -> ActionId {
        gt.dose_action(self.optimal_dose[l])
    }
}

/// State values of a stochastic latent policy `pi[l][d]`, by direct solve
/// of `(I - gamma P_pi) v = r_pi`.
pub fn latent_policy_values(gt: &GroundTruthMdp, pi: &[[f64; N_DOSES]], gamma: f64) -> Result<Vec<f64>> {
    let n = gt.n_latent();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for l in 0..n {
        for d in 0..N_DOSES {
            r[l] += pi[l][d] * gt.reward(l, d);
            for m in 0..n {
                a[(l, m)] -= gamma * pi[l][d] * gt.kernel[l][d][m];
            }
        }
    }
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Numerical("singular policy-evaluation system".into()))?;
    Ok(v.iter().copied().collect())
}

/// Probability of eventually dying from each latent state under `pi`.
pub fn absorption_death_probability(gt: &GroundTruthMdp, pi: &[[f64; N_DOSES]]) -> Result<Vec<f64>> {
    let n = gt.n_latent();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for l in 0..n {
        for d in 0..N_DOSES {
            b[l] += pi[l][d] * gt.kernel[l][d][gt.death()];
            for m in 0..n {
                a[(l, m)] -= pi[l][d] * gt.kernel[l][d][m];
            }
        }
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("policy never absorbs".into()))?;
    Ok(v.iter().copied().collect())
}

/// Dense value iteration on the true kernel to a 1e-14 residual.
pub fn oracle_solution(gt: &GroundTruthMdp, gamma: f64) -> Result<OracleSolution> {
    let n = gt.n_latent();
    let mut v = vec![0.0; n + 2];
    let mut q = vec![[0.0; N_DOSES]; n];
    for it in 0.. {
        let mut residual = 0.0f64;
        for l in 0..n {
            for d in 0..N_DOSES {
                let new = gt.reward(l, d)
                    + gamma * (0..n).map(|m| gt.kernel[l][d][m] * v[m]).sum::<f64>();
                residual = residual.max((new - q[l][d]).abs());
                q[l][d] = new;
            }
        }
        for l in 0..n {
            v[l] = q[l].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        if residual < 1e-14 {
            break;
        }
        if it > 10_000_000 {
            return Err(Error::NotConverged {
                iterations: it,
                residual,
            });
        }
    }
    let optimal_dose: Vec<usize> = q
        .iter()
        .map(|row| {
            let mut best = 0;
            for d in 1..N_DOSES {
                if row[d] > row[best] {
                    best = d;
                }
            }
            best
        })
        .collect();
    let pi_opt: Vec<[f64; N_DOSES]> = optimal_dose
        .iter()
        .map(|&d| std::array::from_fn(|k| if k == d { 1.0 } else { 0.0 }))
        .collect();
    Ok(OracleSolution {
        gamma,
        optimal_value: latent_policy_values(gt, &pi_opt, gamma)?,
        behavior_value: latent_policy_values(gt, &gt.behavior, gamma)?,
        behavior_death_probability: absorption_death_probability(gt, &gt.behavior)?,
        q,
        optimal_dose,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_and_behavior_rows_are_distributions() {
        let gt = build_ground_truth(&SimConfig::default()).unwrap();
        for l in 0..gt.n_latent() {
            assert!((gt.behavior[l].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for d in 0..N_DOSES {
                assert!((gt.kernel[l][d].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!((gt.initial.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_confound_means_one_behavior() {
        let gt = build_ground_truth(&SimConfig {
            confound: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(gt.behavior.iter().all(|b| b == &gt.behavior[0]));
    }

    #[test]
    fn oracle_prefers_high_dose_for_refractory() {
        let gt = build_ground_truth(&SimConfig::default()).unwrap();
        let o = oracle_solution(&gt, 0.99).unwrap();
        for l in 3..6 {
            assert_eq!(o.optimal_dose[l], N_DOSES - 1);
        }
        for l in 0..6 {
            assert!(o.behavior_value[l] <= o.optimal_value[l] + 1e-12);
        }
        // Refractory patients die more often under the clinician policy.
        let mort = |ph: usize| -> f64 {
            let ls = ph * 3..ph * 3 + 3;
            let w: f64 = ls.clone().map(|l| gt.initial[l]).sum();
            ls.map(|l| gt.initial[l] * o.behavior_death_probability[l]).sum::<f64>() / w
        };
        assert!(mort(1) > mort(0));
    }

    #[test]
    fn cohort_is_deterministic_and_terminal() {
        let cfg = SimConfig {
            n_patients: 50,
            ..Default::default()
        };
        let gt = build_ground_truth(&cfg).unwrap();
        let a = simulate_cohort(&gt, &cfg).unwrap();
        let b = simulate_cohort(&gt, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.n_patients(), 50);
        assert_eq!(a.truth.len(), a.dataset.n_transitions());
        let grid = ActionGrid::reference();
        for t in a.dataset.transitions() {
            let id = grid.discretize(t.fluid_ml, t.vis).unwrap().index();
            assert!(gt.dose_of_action(id).is_some());
        }
    }

    #[test]
    fn unobservable_drops_phenotype_dims() {
        let cfg = SimConfig {
            n_patients: 3,
            observable: false,
            ..Default::default()
        };
        let gt = build_ground_truth(&cfg).unwrap();
        let c = simulate_cohort(&gt, &cfg).unwrap();
        assert_eq!(c.dataset.feature_dim(), gt.feature_dim(false));
        assert!(c.dataset.feature_names.iter().all(|n| !n.starts_with("phenotype")));
    }
}
