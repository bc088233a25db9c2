//! Orchestration of the CLI subcommands: frame change, evolution, inverse
//! change, validity gating, and file emission.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::clocks::ClockError;
use crate::compare::{
    covariance_violation_report, map_trajectory, predict_collapse, predict_covariant,
    predict_semiclassical, CompareError, GravityModel, ModelPrediction,
};
use crate::geodesic::DynamicsError;
use crate::grid::{transform_hamiltonian_check, GridWavefunction};
use crate::potential::PotentialModel;
use crate::scenario::{DynamicsMode, Scenario, ScenarioError};
use crate::semiclassical::{evolve_semiclassical, EvolveError};
use crate::state::StateError;
use crate::transforms::{
    ancilla_transform, ancilla_transform_inverse, derive_rigid_branch_maps, from_mass_frame,
    to_mass_frame, TransformError,
};
use crate::{csv_out, validity};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("io error writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario registers no probe system for this command")]
    NoProbe,
}

pub type PipelineResult<T> = Result<T, PipelineError>;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything a subcommand produced: written files plus the validity verdict
/// when one was computed. `validity_failed` drives the strict-mode exit
/// code.
#[derive(Debug, Default)]
pub struct CommandOutcome {
    pub files: Vec<PathBuf>,
    pub validity_failed: bool,
    pub summary: Vec<String>,
}

fn run_validity(
    scenario: &Scenario,
    out_dir: &Path,
    outcome: &mut CommandOutcome,
    strict: bool,
) -> PipelineResult<bool> {
    if scenario.validity.is_none() {
        return Ok(true);
    }
    let report = validity::validate_far_frame(scenario)?;
    let path = out_dir.join(format!("{}_validity.csv", scenario.name));
    csv_out::emit_validity(&path, &report).map_err(io_at(&path))?;
    outcome.files.push(path);
    if !report.all_pass() {
        outcome.validity_failed = true;
        outcome
            .summary
            .push("far-frame validity conditions failed".to_string());
        if strict {
            return Ok(false);
        }
    }
    Ok(true)
}

fn all_branches_tagged(state: &crate::state::BranchState) -> bool {
    state.branches().iter().all(|b| b.ancilla_tag.is_some())
}

/// `transform`: change the initial state into a description with a definite
/// mass configuration and write both states. Scenarios whose branches all
/// carry ancilla tags go through the ancilla-controlled operator with
/// alignment-derived rigid maps; everything else goes through the
/// reference-to-mass frame change.
pub fn cmd_transform(scenario: &Scenario, out_dir: &Path) -> PipelineResult<CommandOutcome> {
    let mut outcome = CommandOutcome::default();
    let state = scenario.initial_state()?;
    let initial_path = out_dir.join(format!("{}_state_initial.csv", scenario.name));
    csv_out::emit_state(&initial_path, &state).map_err(io_at(&initial_path))?;
    outcome.files.push(initial_path);

    let transformed = if all_branches_tagged(&state) {
        let maps = derive_rigid_branch_maps(&state, 0, scenario.tolerances.definite_tol)?;
        ancilla_transform(&state, &maps)?
    } else {
        to_mass_frame(&state)?.0
    };
    let path = out_dir.join(format!("{}_state_transformed.csv", scenario.name));
    csv_out::emit_state(&path, &transformed).map_err(io_at(&path))?;
    outcome.files.push(path);
    outcome.summary.push(format!(
        "frame changed to `{}`; masses definite: {}",
        transformed.frame_id(),
        transformed.masses_definite(scenario.tolerances.definite_tol)
    ));
    Ok(outcome)
}

/// `run`: validity gate, frame change, evolution in the mass frame, inverse
/// change, trajectory and state emission.
pub fn cmd_run(
    scenario: &Scenario,
    out_dir: &Path,
    strict: bool,
) -> PipelineResult<CommandOutcome> {
    let mut outcome = CommandOutcome::default();
    if !run_validity(scenario, out_dir, &mut outcome, strict)? {
        return Ok(outcome);
    }
    match scenario.dynamics {
        DynamicsMode::Semiclassical => run_semiclassical(scenario, out_dir, &mut outcome)?,
        DynamicsMode::Grid => run_grid(scenario, out_dir, &mut outcome)?,
    }
    Ok(outcome)
}

fn run_semiclassical(
    scenario: &Scenario,
    out_dir: &Path,
    outcome: &mut CommandOutcome,
) -> PipelineResult<()> {
    let state = scenario.initial_state()?;
    if all_branches_tagged(&state) {
        return run_semiclassical_ancilla(scenario, out_dir, outcome, &state);
    }
    let (mass_frame, maps) = to_mass_frame(&state)?;
    let pot = PotentialModel::from_branch(&mass_frame, 0, scenario.units);
    let (evolved, trajs) = evolve_semiclassical(
        &mass_frame,
        &[pot],
        scenario.duration,
        scenario.dt,
        &scenario.units,
        scenario.rest_phase,
    )?;
    let (final_state, _) = from_mass_frame(&evolved)?;

    // Trajectories back in the original frame.
    let mut weighted = Vec::with_capacity(trajs.len());
    let mut mapped = Vec::with_capacity(trajs.len());
    for traj in &trajs {
        let back = maps[traj.branch_index].inverse()?;
        mapped.push(map_trajectory(traj, &back));
    }
    for (traj, branch) in mapped.iter().zip(state.branches()) {
        weighted.push((branch.amplitude.norm_sqr(), traj));
    }
    let traj_path = out_dir.join(format!("{}_trajectories.csv", scenario.name));
    csv_out::emit_trajectories(&traj_path, &weighted).map_err(io_at(&traj_path))?;
    outcome.files.push(traj_path);

    let state_path = out_dir.join(format!("{}_state_final.csv", scenario.name));
    csv_out::emit_state(&state_path, &final_state).map_err(io_at(&state_path))?;
    outcome.files.push(state_path);
    outcome.summary.push(format!(
        "evolved {} branches for {} s in the mass frame",
        state.branch_count(),
        scenario.duration
    ));
    Ok(())
}

/// Tagged-scenario evolution: the ancilla-controlled operator makes the
/// masses definite, the probe evolves there, and the stored inverse maps
/// carry everything back.
fn run_semiclassical_ancilla(
    scenario: &Scenario,
    out_dir: &Path,
    outcome: &mut CommandOutcome,
    state: &crate::state::BranchState,
) -> PipelineResult<()> {
    let maps = derive_rigid_branch_maps(state, 0, scenario.tolerances.definite_tol)?;
    let definite = ancilla_transform(state, &maps)?;
    let pot = PotentialModel::from_branch(&definite, 0, scenario.units);
    let (evolved, trajs) = evolve_semiclassical(
        &definite,
        &[pot],
        scenario.duration,
        scenario.dt,
        &scenario.units,
        scenario.rest_phase,
    )?;
    let final_state = ancilla_transform_inverse(&evolved, &maps)?;

    let mut mapped = Vec::with_capacity(trajs.len());
    for traj in &trajs {
        let tag = state.branches()[traj.branch_index]
            .ancilla_tag
            .expect("tagged scenario");
        let back = maps[&tag].inverse()?;
        mapped.push(crate::compare::map_trajectory(traj, &back));
    }
    let weighted: Vec<(f64, &crate::geodesic::Trajectory)> = mapped
        .iter()
        .zip(state.branches())
        .map(|(traj, branch)| (branch.amplitude.norm_sqr(), traj))
        .collect();
    let traj_path = out_dir.join(format!("{}_trajectories.csv", scenario.name));
    csv_out::emit_trajectories(&traj_path, &weighted).map_err(io_at(&traj_path))?;
    outcome.files.push(traj_path);

    let state_path = out_dir.join(format!("{}_state_final.csv", scenario.name));
    csv_out::emit_state(&state_path, &final_state).map_err(io_at(&state_path))?;
    outcome.files.push(state_path);
    outcome.summary.push(format!(
        "evolved {} tagged branches for {} s behind the ancilla-controlled maps",
        state.branch_count(),
        scenario.duration
    ));
    Ok(())
}

fn run_grid(
    scenario: &Scenario,
    out_dir: &Path,
    outcome: &mut CommandOutcome,
) -> PipelineResult<()> {
    let state = scenario.initial_state()?;
    let grid_cfg = scenario
        .grid
        .as_ref()
        .expect("validated grid scenarios carry a [grid] section");
    let registry = state.registry();
    let probe = registry.probe_index().ok_or(PipelineError::NoProbe)?;
    let m_s = registry.mass_of(probe).ok_or(PipelineError::NoProbe)?;

    // The probe packet starts at the (definite) branch-0 probe position.
    let center: Vec<f64> = state.branches()[0]
        .position(probe)
        .iter()
        .copied()
        .collect();
    let psi0 = GridWavefunction::gaussian(
        grid_cfg.ranges.clone(),
        grid_cfg.points.clone(),
        m_s,
        &center,
        grid_cfg.sigma,
        &grid_cfg.k0,
    )?;

    // Covariance check doubles as the grid pipeline: route A is the
    // mass-frame evolution shifted back, per branch.
    let report = transform_hamiltonian_check(
        &state,
        &psi0,
        scenario.duration,
        scenario.dt,
        &scenario.units,
        grid_cfg.softening,
    )?;
    let cov_path = out_dir.join(format!("{}_grid_covariance.csv", scenario.name));
    csv_out::emit_grid_covariance(&cov_path, &report).map_err(io_at(&cov_path))?;
    outcome.files.push(cov_path);

    // Also emit the evolved branch wavefunctions themselves (route B).
    let masses = registry.mass_indices();
    let mut finals = Vec::with_capacity(state.branch_count());
    for branch in state.branches() {
        let mass_list: Vec<(nalgebra::DVector<f64>, f64)> = masses
            .iter()
            .map(|&mi| {
                (
                    branch.position(mi).clone(),
                    registry.mass_of(mi).expect("mass systems carry a mass"),
                )
            })
            .collect();
        let mut pot = PotentialModel::new(mass_list, scenario.units);
        if let Some(eps) = grid_cfg.softening {
            pot = pot.with_softening(eps);
        }
        finals.push(crate::grid::hamiltonian_evolve(
            &psi0,
            &pot,
            scenario.duration,
            scenario.dt,
        )?);
    }
    let grid_path = out_dir.join(format!("{}_grid_final.csv", scenario.name));
    csv_out::emit_grid(&grid_path, &finals).map_err(io_at(&grid_path))?;
    outcome.files.push(grid_path);
    outcome.summary.push(format!(
        "grid covariance max L2 distance: {:e}",
        report.max_l2
    ));
    Ok(())
}

/// `clock`: the superposed time-dilation pipeline.
pub fn cmd_clock(
    scenario: &Scenario,
    out_dir: &Path,
    strict: bool,
) -> PipelineResult<CommandOutcome> {
    let mut outcome = CommandOutcome::default();
    if !run_validity(scenario, out_dir, &mut outcome, strict)? {
        return Ok(outcome);
    }
    let state = scenario.initial_state()?;
    let spec = scenario.clock_spec();
    let (final_state, report) =
        crate::clocks::run_clock_scenario(&state, &spec, scenario.duration, &scenario.units)?;

    let report_path = out_dir.join(format!("{}_clock_report.csv", scenario.name));
    csv_out::emit_clock_report(&report_path, &report).map_err(io_at(&report_path))?;
    outcome.files.push(report_path);

    let state_path = out_dir.join(format!("{}_state_final.csv", scenario.name));
    csv_out::emit_state(&state_path, &final_state).map_err(io_at(&state_path))?;
    outcome.files.push(state_path);
    outcome
        .summary
        .push(format!("delta_tau = {} s", report.delta_tau));
    Ok(outcome)
}

/// `compare`: the requested model predictions plus the covariance-violation
/// report.
pub fn cmd_compare(
    scenario: &Scenario,
    out_dir: &Path,
    strict: bool,
) -> PipelineResult<CommandOutcome> {
    let mut outcome = CommandOutcome::default();
    if !run_validity(scenario, out_dir, &mut outcome, strict)? {
        return Ok(outcome);
    }
    let state = scenario.initial_state()?;
    let mut predictions: Vec<ModelPrediction> = Vec::new();
    for model in &scenario.models {
        let pred = match model {
            GravityModel::Covariant => {
                predict_covariant(&state, scenario.duration, scenario.dt, &scenario.units)?
            }
            GravityModel::Semiclassical => {
                predict_semiclassical(&state, scenario.duration, scenario.dt, &scenario.units)?
            }
            GravityModel::Collapse => {
                predict_collapse(&state, scenario.duration, scenario.dt, &scenario.units)?
            }
        };
        predictions.push(pred);
    }
    let pred_path = out_dir.join(format!("{}_predictions.csv", scenario.name));
    csv_out::emit_predictions(&pred_path, &predictions).map_err(io_at(&pred_path))?;
    outcome.files.push(pred_path);

    // Seeded Born-rule sampling of the collapse outcomes.
    if scenario.models.contains(&GravityModel::Collapse) {
        let trials = 10_000;
        let counts = crate::compare::sample_collapse(&state, scenario.seed, trials);
        let samples_path = out_dir.join(format!("{}_collapse_samples.csv", scenario.name));
        csv_out::emit_collapse_samples(&samples_path, &counts, trials)
            .map_err(io_at(&samples_path))?;
        outcome.files.push(samples_path);
    }

    let report =
        covariance_violation_report(&state, scenario.duration, scenario.dt, &scenario.units)?;
    let viol_path = out_dir.join(format!("{}_violation.csv", scenario.name));
    csv_out::emit_violation(&viol_path, &report).map_err(io_at(&viol_path))?;
    outcome.files.push(viol_path);

    for pred in &predictions {
        outcome.summary.push(format!(
            "{}: entangled = {}",
            pred.model.name(),
            pred.entanglement_flag
        ));
    }
    Ok(outcome)
}

/// `validate`: far-frame conditions only.
pub fn cmd_validate(scenario: &Scenario, out_dir: &Path) -> PipelineResult<CommandOutcome> {
    let mut outcome = CommandOutcome::default();
    let report = validity::validate_far_frame(scenario)?;
    let path = out_dir.join(format!("{}_validity.csv", scenario.name));
    csv_out::emit_validity(&path, &report).map_err(io_at(&path))?;
    outcome.files.push(path);
    outcome.validity_failed = !report.all_pass();
    for (name, ok) in report.verdicts() {
        outcome
            .summary
            .push(format!("{name}: {}", if ok { "pass" } else { "fail" }));
    }
    Ok(outcome)
}
