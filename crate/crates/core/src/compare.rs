//! Side-by-side predictions of three gravity models on one scenario: the
//! covariant frame-change pipeline, mean-field (semi-classical) gravity, and
//! instantaneous collapse of the mass superposition.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geodesic::Trajectory;
use crate::potential::PotentialModel;
use crate::semiclassical::{evolve_semiclassical, EvolveError, PhaseMode};
use crate::state::{BranchState, StateError, DEFAULT_POS_TOL};
use crate::transforms::{to_mass_frame, AffineMap, TransformError};
use crate::units::UnitSystem;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error("probability weights sum to {0}, expected 1")]
    BadWeights(f64),
}

pub type CompareResult<T> = Result<T, CompareError>;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum GravityModel {
    Covariant,
    Semiclassical,
    Collapse,
}

impl GravityModel {
    pub fn name(&self) -> &'static str {
        match self {
            GravityModel::Covariant => "covariant",
            GravityModel::Semiclassical => "semiclassical",
            GravityModel::Collapse => "collapse",
        }
    }
}

/// One branch or collapse-outcome trajectory with its probability weight.
#[derive(Clone, Debug)]
pub struct WeightedTrajectory {
    pub weight: f64,
    pub trajectory: Trajectory,
}

/// Prediction of one model: per-branch (or per-outcome) probe trajectories
/// in the frame of the input state, an entanglement flag, and the final
/// state. For the collapse model the final state encodes the classical
/// outcome ensemble: one tagged branch per outcome with amplitude
/// `sqrt(weight)`.
#[derive(Clone, Debug)]
pub struct ModelPrediction {
    pub model: GravityModel,
    pub trajectories: Vec<WeightedTrajectory>,
    pub entanglement_flag: bool,
    pub final_state: BranchState,
}

impl ModelPrediction {
    fn check_weights(self) -> CompareResult<Self> {
        let total: f64 = self.trajectories.iter().map(|w| w.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CompareError::BadWeights(total));
        }
        Ok(self)
    }
}

fn probe_entangled(state: &BranchState) -> bool {
    let probe_label = state
        .registry()
        .probe_index()
        .map(|i| state.registry().id(i).label.clone());
    match probe_label {
        Some(label) => !state
            .is_definite(&[label.as_str()], DEFAULT_POS_TOL)
            .unwrap_or(true),
        None => false,
    }
}

/// Mean-field prediction: the probe of every branch evolves in the single
/// amplitude-weighted average potential of all branch configurations. No
/// probe-mass entanglement arises by construction.
pub fn predict_semiclassical(
    state: &BranchState,
    t: f64,
    dt: f64,
    units: &UnitSystem,
) -> CompareResult<ModelPrediction> {
    let mean = PotentialModel::mean_field(state, *units);
    let (final_state, trajs) =
        evolve_semiclassical(state, &[mean], t, dt, units, PhaseMode::OmitRest)?;
    let trajectories = trajs
        .into_iter()
        .zip(state.branches())
        .map(|(trajectory, b)| WeightedTrajectory {
            weight: b.amplitude.norm_sqr(),
            trajectory,
        })
        .collect();
    ModelPrediction {
        model: GravityModel::Semiclassical,
        trajectories,
        entanglement_flag: false,
        final_state,
    }
    .check_weights()
}

/// Branch groups sharing one mass configuration within `pos_tol`.
fn mass_configuration_groups(state: &BranchState, pos_tol: f64) -> Vec<usize> {
    let masses = state.registry().mass_indices();
    let mut group_of = Vec::with_capacity(state.branch_count());
    let mut representatives: Vec<usize> = Vec::new();
    for (bi, branch) in state.branches().iter().enumerate() {
        let found = representatives.iter().position(|&ri| {
            let rep = &state.branches()[ri];
            masses
                .iter()
                .all(|&mi| (branch.position(mi) - rep.position(mi)).norm() <= pos_tol)
        });
        match found {
            Some(g) => group_of.push(g),
            None => {
                representatives.push(bi);
                group_of.push(representatives.len() - 1);
            }
        }
    }
    group_of
}

/// Collapse prediction: the superposition of *mass configurations* reduces
/// at t = 0 with Born weights, and the probe evolves in the collapsed
/// classical potential per outcome. Branches sharing a mass configuration
/// stay coherent; distinct configurations become tagged classical sectors.
/// When the masses are already definite (e.g. in the mass frame) nothing
/// collapses and the prediction is ordinary coherent evolution.
pub fn predict_collapse(
    state: &BranchState,
    t: f64,
    dt: f64,
    units: &UnitSystem,
) -> CompareResult<ModelPrediction> {
    let groups = mass_configuration_groups(state, DEFAULT_POS_TOL);
    let n_groups = groups.iter().copied().max().unwrap_or(0) + 1;
    let pots: Vec<PotentialModel> = (0..state.branch_count())
        .map(|bi| PotentialModel::from_branch(state, bi, *units))
        .collect();
    let (evolved, trajs) = evolve_semiclassical(state, &pots, t, dt, units, PhaseMode::OmitRest)?;

    // Outcome register: tag each decohered sector when a collapse happened.
    let final_state = if n_groups > 1 {
        let mut branches = Vec::with_capacity(evolved.branch_count());
        for (bi, b) in evolved.branches().iter().enumerate() {
            branches.push(b.clone().with_tag(groups[bi] as u32));
        }
        let axis_len = evolved.stored_axis_len;
        evolved.rebuild(branches, evolved.frame_index(), axis_len)?
    } else {
        evolved
    };

    let trajectories: Vec<WeightedTrajectory> = trajs
        .into_iter()
        .zip(state.branches())
        .map(|(trajectory, b)| WeightedTrajectory {
            weight: b.amplitude.norm_sqr(),
            trajectory,
        })
        .collect();
    let entangled = n_groups == 1 && probe_entangled(&final_state);
    ModelPrediction {
        model: GravityModel::Collapse,
        trajectories,
        entanglement_flag: entangled,
        final_state,
    }
    .check_weights()
}

/// Collapse-outcome frequencies over `trials` seeded Born-rule samples;
/// returns the count per collapse outcome (distinct mass configuration).
pub fn sample_collapse(state: &BranchState, seed: u64, trials: usize) -> Vec<usize> {
    let groups = mass_configuration_groups(state, DEFAULT_POS_TOL);
    let n_groups = groups.iter().copied().max().unwrap_or(0) + 1;
    let mut weights = vec![0.0; n_groups];
    for (bi, b) in state.branches().iter().enumerate() {
        weights[groups[bi]] += b.amplitude.norm_sqr();
    }
    let dist = WeightedIndex::new(&weights).expect("normalized state has positive weights");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..trials {
        counts[dist.sample(&mut rng)] += 1;
    }
    counts
}

/// Covariant prediction: change into the mass frame, evolve there, change
/// back. Trajectories are returned in the input frame; the entanglement flag
/// reports whether the probe ends branch-dependent.
pub fn predict_covariant(
    state: &BranchState,
    t: f64,
    dt: f64,
    units: &UnitSystem,
) -> CompareResult<ModelPrediction> {
    let masses = state.registry().mass_indices();
    let already_mass_frame = !masses.is_empty() && state.frame_index() == masses[0];

    let (mass_frame, fwd_maps) = to_mass_frame(state)?;
    let pot = PotentialModel::from_branch(&mass_frame, 0, *units);
    let (evolved, trajs) =
        evolve_semiclassical(&mass_frame, &[pot], t, dt, units, PhaseMode::OmitRest)?;

    let final_state = if already_mass_frame {
        evolved
    } else {
        crate::transforms::from_mass_frame(&evolved)?.0
    };

    let mut trajectories = Vec::with_capacity(trajs.len());
    for (traj, branch) in trajs.into_iter().zip(state.branches()) {
        let back = fwd_maps[traj.branch_index].inverse()?;
        trajectories.push(WeightedTrajectory {
            weight: branch.amplitude.norm_sqr(),
            trajectory: map_trajectory(&traj, &back),
        });
    }

    let entangled = probe_entangled(&final_state);
    ModelPrediction {
        model: GravityModel::Covariant,
        trajectories,
        entanglement_flag: entangled,
        final_state,
    }
    .check_weights()
}

/// Applies an affine coordinate map to every sample of a trajectory
/// (velocities see only the linear part).
pub fn map_trajectory(traj: &Trajectory, map: &AffineMap) -> Trajectory {
    Trajectory {
        times: traj.times.clone(),
        positions: traj.positions.iter().map(|p| map.apply(p)).collect(),
        velocities: traj.velocities.iter().map(|v| &map.linear * v).collect(),
        phases: traj.phases.clone(),
        branch_index: traj.branch_index,
    }
}

/// Disagreement of one model with its own mass-frame round trip.
#[derive(Clone, Debug)]
pub struct ModelViolation {
    pub model: GravityModel,
    /// Max branchwise distance of the final probe positions (m).
    pub positional_discrepancy: f64,
    /// `|<direct | roundtrip>|` of the final states; one for a model whose
    /// predictions commute with the frame change, below one when the round
    /// trip disagrees in positions or coherence structure.
    pub final_fidelity: f64,
}

/// Per-model disagreement between predicting directly in the input frame
/// and predicting through the mass-frame round trip.
#[derive(Clone, Debug)]
pub struct ViolationReport {
    pub violations: Vec<ModelViolation>,
}

impl ViolationReport {
    pub fn entry(&self, model: GravityModel) -> &ModelViolation {
        self.violations
            .iter()
            .find(|v| v.model == model)
            .expect("all three models are present")
    }

    pub fn discrepancy(&self, model: GravityModel) -> f64 {
        self.entry(model).positional_discrepancy
    }
}

fn predict(
    model: GravityModel,
    state: &BranchState,
    t: f64,
    dt: f64,
    units: &UnitSystem,
) -> CompareResult<ModelPrediction> {
    match model {
        GravityModel::Covariant => predict_covariant(state, t, dt, units),
        GravityModel::Semiclassical => predict_semiclassical(state, t, dt, units),
        GravityModel::Collapse => predict_collapse(state, t, dt, units),
    }
}

/// For each model, evolves the scenario directly in the input frame and via
/// the mass-frame round trip, and reports the maximal branchwise distance of
/// the final probe positions. A model respecting covariance of the dynamics
/// under the frame change scores at integrator-noise level; the mean-field
/// and collapse models do not.
pub fn covariance_violation_report(
    state: &BranchState,
    t: f64,
    dt: f64,
    units: &UnitSystem,
) -> CompareResult<ViolationReport> {
    let models = [
        GravityModel::Covariant,
        GravityModel::Semiclassical,
        GravityModel::Collapse,
    ];
    let violations: CompareResult<Vec<ModelViolation>> = models
        .par_iter()
        .map(|&model| {
            let direct = predict(model, state, t, dt, units)?;
            let (mass_frame, fwd_maps) = to_mass_frame(state)?;
            let roundtrip = predict(model, &mass_frame, t, dt, units)?;

            let probe = state
                .registry()
                .probe_index()
                .ok_or(EvolveError::NoProbe)
                .map_err(CompareError::from)?;
            let mut worst: f64 = 0.0;
            for bi in 0..state.branch_count() {
                let direct_final = direct.final_state.branches()[bi].position(probe);
                let through = fwd_maps[bi]
                    .inverse()?
                    .apply(roundtrip.final_state.branches()[bi].position(probe));
                worst = worst.max((direct_final - &through).norm());
            }

            // State-level agreement: map the round-trip state back and
            // overlap with the direct prediction. A collapse in the input
            // frame decoheres sectors the mass-frame route keeps coherent,
            // which shows up here even when the positions agree.
            let mapped_back = if state.frame_index() == mass_frame.frame_index() {
                roundtrip.final_state.clone()
            } else {
                crate::transforms::from_mass_frame(&roundtrip.final_state)?.0
            };
            let final_fidelity = direct.final_state.fidelity(&mapped_back, DEFAULT_POS_TOL)?;

            Ok(ModelViolation {
                model,
                positional_discrepancy: worst,
                final_fidelity,
            })
        })
        .collect();
    Ok(ViolationReport {
        violations: violations?,
    })
}

/// Convenience for tests and reports: final probe displacement of a
/// prediction's branch relative to the input state.
pub fn probe_displacement(
    state: &BranchState,
    prediction: &ModelPrediction,
    branch: usize,
) -> DVector<f64> {
    let probe = state
        .registry()
        .probe_index()
        .expect("scenario registers a probe");
    prediction.final_state.branches()[branch].position(probe)
        - state.branches()[branch].position(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Branch, SystemId, SystemKind, SystemRegistry};
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use std::sync::Arc;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x])
    }

    fn desk_units() -> UnitSystem {
        UnitSystem::new(1.0, 1e6, 1.0).unwrap()
    }

    /// Probe exactly midway between the two superposed mass positions.
    fn midpoint_state(w1: f64, w2: f64) -> BranchState {
        let reg = Arc::new(
            SystemRegistry::new(vec![
                (SystemId::new("R", SystemKind::Reference), None),
                (SystemId::new("M", SystemKind::Mass), Some(1.0)),
                (SystemId::new("S", SystemKind::Probe), Some(1e-6)),
            ])
            .unwrap(),
        );
        let branches = vec![
            Branch::new(
                Complex64::new(w1.sqrt(), 0.0),
                vec![v1(0.0), v1(4.0), v1(5.0)],
            ),
            Branch::new(
                Complex64::new(w2.sqrt(), 0.0),
                vec![v1(0.0), v1(6.0), v1(5.0)],
            ),
        ];
        BranchState::new(reg, branches, "R").unwrap()
    }

    #[test]
    fn semiclassical_midpoint_probe_is_stationary() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let pred = predict_semiclassical(&state, 0.4, 1e-3, &units).unwrap();
        assert!(!pred.entanglement_flag);
        for bi in 0..2 {
            let disp = probe_displacement(&state, &pred, bi).norm();
            assert!(disp <= 1e-10, "displacement {disp:e}");
        }
    }

    #[test]
    fn semiclassical_asymmetric_weights_pull_toward_the_heavier_side() {
        let units = desk_units();
        let state = midpoint_state(0.9, 0.1);
        let pred = predict_semiclassical(&state, 0.4, 1e-3, &units).unwrap();
        // Mass position 4.0 carries weight 0.9: the probe accelerates toward
        // it (negative displacement from 5.0).
        let disp = probe_displacement(&state, &pred, 0);
        assert!(disp[0] < -1e-6, "displacement {:e}", disp[0]);
    }

    #[test]
    fn single_branch_semiclassical_equals_covariant() {
        let units = desk_units();
        let reg = Arc::new(
            SystemRegistry::new(vec![
                (SystemId::new("R", SystemKind::Reference), None),
                (SystemId::new("M", SystemKind::Mass), Some(1.0)),
                (SystemId::new("S", SystemKind::Probe), Some(1e-6)),
            ])
            .unwrap(),
        );
        let state = BranchState::new(
            reg,
            vec![Branch::new(
                Complex64::new(1.0, 0.0),
                vec![v1(0.0), v1(4.0), v1(5.0)],
            )],
            "R",
        )
        .unwrap();
        let a = predict_semiclassical(&state, 0.4, 1e-3, &units).unwrap();
        let b = predict_covariant(&state, 0.4, 1e-3, &units).unwrap();
        let c = predict_collapse(&state, 0.4, 1e-3, &units).unwrap();
        let pa = a.final_state.branches()[0].position(2);
        let pb = b.final_state.branches()[0].position(2);
        let pc = c.final_state.branches()[0].position(2);
        assert!((pa - pb).norm() < 1e-8);
        assert!((pa - pc).norm() < 1e-8);
        assert!(!b.entanglement_flag);
    }

    #[test]
    fn collapse_enumerates_mirror_outcomes() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let pred = predict_collapse(&state, 0.4, 1e-3, &units).unwrap();
        assert_eq!(pred.trajectories.len(), 2);
        for wt in &pred.trajectories {
            assert_relative_eq!(wt.weight, 0.5, epsilon = 1e-15);
        }
        let d0 = probe_displacement(&state, &pred, 0)[0];
        let d1 = probe_displacement(&state, &pred, 1)[0];
        // Outcome 1 falls left, outcome 2 falls right, mirror images.
        assert!(d0 < 0.0 && d1 > 0.0);
        assert_relative_eq!(d0, -d1, epsilon = 1e-10);
        // Outcome register present and mass state definite per outcome.
        assert_eq!(pred.final_state.branches()[0].ancilla_tag, Some(0));
        assert_eq!(pred.final_state.branches()[1].ancilla_tag, Some(1));
    }

    #[test]
    fn collapse_single_branch_is_one_outcome() {
        let units = desk_units();
        let reg = Arc::new(
            SystemRegistry::new(vec![
                (SystemId::new("R", SystemKind::Reference), None),
                (SystemId::new("M", SystemKind::Mass), Some(1.0)),
                (SystemId::new("S", SystemKind::Probe), Some(1e-6)),
            ])
            .unwrap(),
        );
        let state = BranchState::new(
            reg,
            vec![Branch::new(
                Complex64::new(1.0, 0.0),
                vec![v1(0.0), v1(4.0), v1(5.0)],
            )],
            "R",
        )
        .unwrap();
        let pred = predict_collapse(&state, 0.4, 1e-3, &units).unwrap();
        assert_eq!(pred.trajectories.len(), 1);
        assert_relative_eq!(pred.trajectories[0].weight, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sampled_outcome_frequencies_match_born_weights() {
        let state = midpoint_state(0.5, 0.5);
        let trials = 10_000;
        let counts = sample_collapse(&state, 12345, trials);
        assert_eq!(counts.iter().sum::<usize>(), trials);
        // Within 3 sigma of the binomial expectation.
        let sigma = (trials as f64 * 0.25).sqrt();
        let dev = (counts[0] as f64 - trials as f64 * 0.5).abs();
        assert!(
            dev <= 3.0 * sigma,
            "deviation {dev} vs 3 sigma {}",
            3.0 * sigma
        );
        // Determinism: same seed, same counts.
        assert_eq!(counts, sample_collapse(&state, 12345, trials));
    }

    #[test]
    fn covariant_midpoint_branches_mirror_and_entangle() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let pred = predict_covariant(&state, 0.4, 1e-3, &units).unwrap();
        assert!(pred.entanglement_flag);
        let d0 = probe_displacement(&state, &pred, 0)[0];
        let d1 = probe_displacement(&state, &pred, 1)[0];
        // Branch 1 slides toward the branch-1 mass (left), branch 2 right.
        assert!(d0 < 0.0 && d1 > 0.0);
        assert!((d0 + d1).abs() <= 1e-10, "asymmetry {:e}", (d0 + d1).abs());
        // Trajectories returned in the input frame: they start at the
        // midpoint position.
        for wt in &pred.trajectories {
            assert_relative_eq!(wt.trajectory.positions[0][0], 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_time_covariant_prediction_is_the_input() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let pred = predict_covariant(&state, 1e-9, 1e-10, &units).unwrap();
        assert!(!pred.entanglement_flag);
        for bi in 0..2 {
            assert!(probe_displacement(&state, &pred, bi).norm() < 1e-9);
        }
    }

    #[test]
    fn all_models_agree_in_the_mass_frame() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let (mass_frame, _) = to_mass_frame(&state).unwrap();
        let t = 0.4;
        let cov = predict_covariant(&mass_frame, t, 1e-3, &units).unwrap();
        let sc = predict_semiclassical(&mass_frame, t, 1e-3, &units).unwrap();
        let col = predict_collapse(&mass_frame, t, 1e-3, &units).unwrap();
        for bi in 0..2 {
            let pc = cov.final_state.branches()[bi].position(2);
            let ps = sc.final_state.branches()[bi].position(2);
            let pl = col.final_state.branches()[bi].position(2);
            assert!((pc - ps).norm() < 1e-10);
            assert!((pc - pl).norm() < 1e-10);
        }
    }

    #[test]
    fn violation_report_separates_the_models() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let t = 0.4;
        let report = covariance_violation_report(&state, t, 1e-3, &units).unwrap();
        let cov = report.discrepancy(GravityModel::Covariant);
        let sc = report.discrepancy(GravityModel::Semiclassical);
        let col = report.discrepancy(GravityModel::Collapse);
        assert!(cov <= 1e-8, "covariant discrepancy {cov:e}");
        assert!(
            sc >= 1e3 * cov.max(1e-12),
            "semiclassical {sc:e} vs covariant {cov:e}"
        );
        assert!(col > 0.0);
        // The mean-field probe stands still directly but falls through the
        // round trip; the discrepancy is the fall distance, which grows
        // with t.
        let longer = covariance_violation_report(&state, 2.0 * t, 1e-3, &units).unwrap();
        assert!(longer.discrepancy(GravityModel::Semiclassical) > sc);
    }

    #[test]
    fn covariant_prediction_commutes_in_positions_and_phases() {
        // Predict directly in the input frame vs. transform, predict in the
        // mass frame, and map back: positions and branch amplitude phases
        // must agree.
        let units = desk_units();
        let state = midpoint_state(0.3, 0.7);
        let t = 0.4;
        let direct = predict_covariant(&state, t, 1e-3, &units).unwrap();
        let (mass_frame, fwd_maps) = to_mass_frame(&state).unwrap();
        let through = predict_covariant(&mass_frame, t, 1e-3, &units).unwrap();
        for bi in 0..2 {
            let pd = direct.final_state.branches()[bi].position(2);
            let pt = fwd_maps[bi]
                .inverse()
                .unwrap()
                .apply(through.final_state.branches()[bi].position(2));
            assert!((pd - pt).norm() <= 1e-8, "branch {bi} positions");
            let ad = direct.final_state.branches()[bi].amplitude;
            let at = through.final_state.branches()[bi].amplitude;
            let dphase = (ad.arg() - at.arg()).rem_euclid(2.0 * std::f64::consts::PI);
            let dphase = dphase.min(2.0 * std::f64::consts::PI - dphase);
            assert!(dphase <= 1e-8, "branch {bi} phase difference {dphase:e}");
        }
    }

    #[test]
    fn collapse_decoherence_shows_in_the_fidelity_column() {
        // Collapsing in the input frame tags classical sectors that the
        // mass-frame route keeps coherent: positions agree, the states do
        // not. The covariant model agrees in both respects.
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let report = covariance_violation_report(&state, 0.4, 1e-3, &units).unwrap();
        let cov = report.entry(GravityModel::Covariant);
        assert!(cov.final_fidelity > 1.0 - 1e-9, "{}", cov.final_fidelity);
        let col = report.entry(GravityModel::Collapse);
        assert!(col.positional_discrepancy < 1e-10);
        assert!(col.final_fidelity < 0.5, "{}", col.final_fidelity);
        let sc = report.entry(GravityModel::Semiclassical);
        assert!(sc.final_fidelity < 0.9, "{}", sc.final_fidelity);
    }

    #[test]
    fn collapse_in_the_mass_frame_stays_coherent() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let (mass_frame, _) = to_mass_frame(&state).unwrap();
        let pred = predict_collapse(&mass_frame, 0.4, 1e-3, &units).unwrap();
        // Masses definite: nothing collapses, no outcome register.
        assert!(pred
            .final_state
            .branches()
            .iter()
            .all(|b| b.ancilla_tag.is_none()));
        assert!(pred.entanglement_flag);
    }

    #[test]
    fn two_mass_family_with_non_unit_axis_round_trips() {
        // Exercises the N-mass operator inside the prediction pipeline,
        // including the stored reference-axis length (|e1| = 1.5 here).
        let units = desk_units();
        let reg = Arc::new(
            SystemRegistry::new(vec![
                (SystemId::new("R1", SystemKind::Reference), None),
                (SystemId::new("R2", SystemKind::Reference), None),
                (SystemId::new("M1", SystemKind::Mass), Some(1.0)),
                (SystemId::new("M2", SystemKind::Mass), Some(2.0)),
                (SystemId::new("S", SystemKind::Probe), Some(1e-6)),
            ])
            .unwrap(),
        );
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let v2 = |x: f64, y: f64| DVector::from_row_slice(&[x, y]);
        // Branch 2: branch 1's masses rotated by 90 degrees about the origin.
        let b1 = Branch::new(
            amp,
            vec![v2(0.0, 0.0), v2(1.5, 0.0), v2(4.0, 0.0), v2(6.0, 0.0), v2(5.0, 1.0)],
        );
        let b2 = Branch::new(
            amp,
            vec![v2(0.0, 0.0), v2(1.5, 0.0), v2(0.0, 4.0), v2(0.0, 6.0), v2(5.0, 1.0)],
        );
        let state = BranchState::new(reg, vec![b1, b2], "R1").unwrap();

        let pred = predict_covariant(&state, 0.3, 1e-3, &units).unwrap();
        assert!(pred.entanglement_flag);
        // Trajectories come back in the input frame: branch starts at the
        // original probe position.
        for wt in &pred.trajectories {
            assert!((wt.trajectory.positions[0].clone() - v2(5.0, 1.0)).norm() < 1e-12);
        }

        let report = covariance_violation_report(&state, 0.3, 1e-3, &units).unwrap();
        let cov = report.entry(GravityModel::Covariant);
        assert!(cov.positional_discrepancy <= 1e-8);
        assert!(cov.final_fidelity > 1.0 - 1e-9, "{}", cov.final_fidelity);
    }

    #[test]
    fn zero_time_all_models_coincide() {
        let units = desk_units();
        let state = midpoint_state(0.5, 0.5);
        let report = covariance_violation_report(&state, 1e-9, 1e-10, &units).unwrap();
        for v in &report.violations {
            assert!(v.positional_discrepancy < 1e-9);
        }
    }
}
