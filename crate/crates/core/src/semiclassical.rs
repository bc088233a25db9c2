//! Branchwise semi-classical time evolution: the probe of every branch falls
//! along its geodesic while the branch amplitude picks up the accumulated
//! action phase.

use num_complex::Complex64;
use thiserror::Error;

use crate::geodesic::{geodesic_integrate, DynamicsError, Trajectory};
use crate::phase::{attach_phase_series, PhaseError};
use crate::potential::PotentialModel;
use crate::state::{BranchState, StateError};
use crate::units::UnitSystem;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("state registers no probe system")]
    NoProbe,
    #[error("expected one shared potential or one per branch, got {got} for {branches} branches")]
    PotentialCountMismatch { got: usize, branches: usize },
}

pub type EvolveResult<T> = Result<T, EvolveError>;

/// Handling of the branch-independent rest phase `m c^2 t / hbar`.
///
/// The full phase is the honest action value but is numerically meaningless
/// once it exceeds ~1e16 rad; comparison outputs subtract the common rest
/// part and keep only the branch-resolving remainder.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PhaseMode {
    Full,
    OmitRest,
}

/// Evolves the probe of every branch for time `t` in the supplied potential
/// (one shared model, or one per branch), starting from rest. Amplitudes are
/// multiplied by `exp(-i Phi)` with the phase accumulated along each path;
/// every non-probe system stays where it is.
///
/// In the canonical pipeline the state is in the mass frame, where the mass
/// configuration is definite and a single potential serves every branch. The
/// per-branch form is what the model-comparison predictions use.
pub fn evolve_semiclassical(
    state: &BranchState,
    pots: &[PotentialModel],
    t: f64,
    dt: f64,
    units: &UnitSystem,
    mode: PhaseMode,
) -> EvolveResult<(BranchState, Vec<Trajectory>)> {
    let registry = state.registry();
    let probe = registry.probe_index().ok_or(EvolveError::NoProbe)?;
    let m_s = registry.mass_of(probe).ok_or(EvolveError::NoProbe)?;
    if pots.len() != 1 && pots.len() != state.branch_count() {
        return Err(EvolveError::PotentialCountMismatch {
            got: pots.len(),
            branches: state.branch_count(),
        });
    }

    let mut branches = Vec::with_capacity(state.branch_count());
    let mut trajectories = Vec::with_capacity(state.branch_count());
    for (bi, branch) in state.branches().iter().enumerate() {
        let pot = &pots[bi.min(pots.len() - 1)];
        let x0 = branch.position(probe).clone();
        let v0 = nalgebra::DVector::zeros(x0.len());
        let mut traj = geodesic_integrate(pot, &x0, &v0, t, dt)?;
        traj.branch_index = bi;
        attach_phase_series(&mut traj, pot, m_s, units, mode == PhaseMode::Full)?;

        let phi = *traj.phases.last().expect("trajectory is non-empty");
        let mut nb = branch.clone();
        nb.amplitude *= Complex64::new(0.0, -phi).exp();
        nb.set_position(probe, traj.final_position().clone());
        branches.push(nb);
        trajectories.push(traj);
    }
    let out = state.rebuild(branches, state.frame_index(), state.stored_axis_len)?;
    Ok((out, trajectories))
}
