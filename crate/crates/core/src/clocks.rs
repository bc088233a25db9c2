//! Two-level clocks in the weak field: branch-dependent proper time,
//! internal-state evolution, and the superposed time-dilation pipeline.

use num_complex::Complex64;
use thiserror::Error;

use crate::phase::PhaseError;
use crate::potential::PotentialModel;
use crate::state::{BranchState, ClockQubit, StateError, SystemKind};
use crate::transforms::{from_mass_frame, to_mass_frame, TransformError};
use crate::units::UnitSystem;

/// Weak-field validity bound on `|V|/c^2`.
pub const WEAK_FIELD_BOUND: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum ClockError {
    #[error("field too strong for the weak-field clock model: |V|/c^2 = {0:.3e}")]
    StrongField(f64),
    #[error("state registers no clock system")]
    NoClock,
    #[error("branch {0} carries no internal clock state")]
    NoInternalState(usize),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
}

pub type ClockResult<T> = Result<T, ClockError>;

/// Internal structure of a two-level clock: energy eigenvalues and the
/// initial internal state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClockSpec {
    /// J
    pub e0: f64,
    /// J
    pub e1: f64,
    pub initial: ClockQubit,
}

impl ClockSpec {
    pub fn new(e0: f64, e1: f64, initial: ClockQubit) -> Self {
        assert!(e0 != e1, "clock levels must be distinct");
        Self { e0, e1, initial }
    }

    /// Levels split so one full oscillation fits the given duration.
    pub fn default_for_duration(t: f64, units: &UnitSystem) -> Self {
        Self::new(
            0.0,
            2.0 * std::f64::consts::PI * units.hbar / t,
            ClockQubit::plus(),
        )
    }
}

/// Proper time elapsed at a fixed weak-field position over coordinate time
/// `t`: `tau = t (1 + V(x)/c^2)`.
///
/// At laboratory parameters the deficit sits far below the `f64` resolution
/// of `t` itself; use [`proper_time_deficit`] wherever branch differences
/// matter.
pub fn proper_time(
    pot: &PotentialModel,
    x: &nalgebra::DVector<f64>,
    t: f64,
    units: &UnitSystem,
) -> ClockResult<f64> {
    Ok(t - proper_time_deficit(pot, x, t, units)?)
}

/// Amount by which the proper time at `x` lags the coordinate time over `t`:
/// `t - tau = -t V(x)/c^2` (non-negative). Carries full relative precision
/// however weak the field.
pub fn proper_time_deficit(
    pot: &PotentialModel,
    x: &nalgebra::DVector<f64>,
    t: f64,
    units: &UnitSystem,
) -> ClockResult<f64> {
    let v = pot.v(x);
    let ratio = v.abs() / units.c_squared();
    if ratio > WEAK_FIELD_BOUND {
        return Err(ClockError::StrongField(ratio));
    }
    Ok(-t * v / units.c_squared())
}

/// Internal evolution for proper time `tau`: phases `exp(-i E_k tau/hbar)`
/// on the two energy eigenstates.
pub fn evolve_clock(
    spec: &ClockSpec,
    state: &ClockQubit,
    tau: f64,
    units: &UnitSystem,
) -> ClockQubit {
    let p0 = Complex64::new(0.0, -spec.e0 * tau / units.hbar).exp();
    let p1 = Complex64::new(0.0, -spec.e1 * tau / units.hbar).exp();
    ClockQubit([state.0[0] * p0, state.0[1] * p1])
}

/// Internal evolution for `tau = t - deficit`, factored so the common
/// coordinate-time rotation and the tiny branch-dependent counter-rotation
/// are applied as separate phase factors. Mathematically identical to
/// [`evolve_clock`], but branch-relative phases keep full precision when the
/// deficit is below the `f64` resolution of `t`.
pub fn evolve_clock_split(
    spec: &ClockSpec,
    state: &ClockQubit,
    t: f64,
    deficit: f64,
    units: &UnitSystem,
) -> ClockQubit {
    let common = evolve_clock(spec, state, t, units);
    let p0 = Complex64::new(0.0, spec.e0 * deficit / units.hbar).exp();
    let p1 = Complex64::new(0.0, spec.e1 * deficit / units.hbar).exp();
    ClockQubit([common.0[0] * p0, common.0[1] * p1])
}

/// Probability of finding a clock initialized in `|+>` again in `|+>` after
/// coordinate time `t` at distance `x` from a point mass `M`:
/// `cos^2( (E0-E1)/(2 hbar) (1 - G M/(c^2 x)) t )`.
pub fn p_plus(spec: &ClockSpec, mass: f64, x: f64, t: f64, units: &UnitSystem) -> ClockResult<f64> {
    let ratio = units.g * mass / (units.c_squared() * x);
    if ratio > WEAK_FIELD_BOUND {
        return Err(ClockError::StrongField(ratio));
    }
    let arg = (spec.e0 - spec.e1) / (2.0 * units.hbar) * (1.0 - ratio) * t;
    Ok(arg.cos().powi(2))
}

/// Squared overlap of the internal states of two branches with proper times
/// differing by `delta_tau`, for a `|+>`-initialized clock:
/// `cos^2((E0 - E1) delta_tau / (2 hbar))`.
pub fn visibility_from_delta_tau(spec: &ClockSpec, delta_tau: f64, units: &UnitSystem) -> f64 {
    ((spec.e0 - spec.e1) * delta_tau / (2.0 * units.hbar))
        .cos()
        .powi(2)
}

/// Outcome of the superposed time-dilation pipeline.
#[derive(Clone, Debug)]
pub struct ClockReport {
    /// Elapsed proper time per branch (s); numerically collapses onto the
    /// coordinate time once the deficit drops below its resolution.
    pub taus: Vec<f64>,
    /// Proper-time deficit `t - tau` per branch (s), at full precision.
    pub tau_deficits: Vec<f64>,
    /// `tau_2 - tau_1` for two branches, else the full spread.
    pub delta_tau: f64,
    /// Squared overlap of the evolved internal states (min over pairs).
    pub visibility: f64,
    /// Branch gravitational phases attached to the amplitudes (rad).
    pub grav_phases: Vec<f64>,
}

/// Runs the clock scenario: change into the mass frame, read off the branch
/// proper times at the fixed clock positions, evolve the internal states and
/// attach the static-path gravitational phase, change back.
///
/// The clock is trapped: its external position is definite before and after.
/// The branch-independent rest phase is omitted from the attached amplitude
/// phase (it is common to all branches and numerically meaningless at
/// laboratory scales).
pub fn run_clock_scenario(
    state: &BranchState,
    spec: &ClockSpec,
    t: f64,
    units: &UnitSystem,
) -> ClockResult<(BranchState, ClockReport)> {
    let registry = state.registry();
    let clock = registry.clock_index().ok_or(ClockError::NoClock)?;
    let clock_mass = registry.mass_of(clock);

    let (mass_frame, _maps) = to_mass_frame(state)?;

    let mut taus = Vec::with_capacity(mass_frame.branch_count());
    let mut tau_deficits = Vec::with_capacity(mass_frame.branch_count());
    let mut grav_phases = Vec::with_capacity(mass_frame.branch_count());
    let mut branches = Vec::with_capacity(mass_frame.branch_count());
    let pot = PotentialModel::from_branch(&mass_frame, 0, *units);
    for (bi, branch) in mass_frame.branches().iter().enumerate() {
        let x_c = branch.position(clock);
        let deficit = proper_time_deficit(&pot, x_c, t, units)?;
        taus.push(t - deficit);
        tau_deficits.push(deficit);

        let internal = branch
            .clock_internal
            .as_ref()
            .ok_or(ClockError::NoInternalState(bi))?;
        let evolved = evolve_clock_split(spec, internal, t, deficit, units);

        // Static-path gravitational phase of the clock's external state;
        // the special-relativistic part vanishes for a held clock and the
        // rest part is branch-independent.
        let phi = match clock_mass {
            Some(m_c) => m_c * pot.v(x_c) * t / units.hbar,
            None => 0.0,
        };
        grav_phases.push(phi);

        let mut nb = branch.clone();
        nb.clock_internal = Some(evolved);
        nb.amplitude *= Complex64::new(0.0, -phi).exp();
        branches.push(nb);
    }
    let evolved_mass_frame = mass_frame.rebuild(
        branches,
        mass_frame.frame_index(),
        mass_frame.stored_axis_len,
    )?;
    let (final_state, _) = from_mass_frame(&evolved_mass_frame)?;

    // Branch differences come from the deficits, which carry the precision.
    let delta_tau = if tau_deficits.len() == 2 {
        tau_deficits[0] - tau_deficits[1]
    } else {
        tau_deficits.iter().cloned().fold(f64::MIN, f64::max)
            - tau_deficits.iter().cloned().fold(f64::MAX, f64::min)
    };
    let mut visibility: f64 = 1.0;
    for i in 0..tau_deficits.len() {
        for j in i + 1..tau_deficits.len() {
            let a = evolve_clock_split(spec, &spec.initial, t, tau_deficits[i], units);
            let b = evolve_clock_split(spec, &spec.initial, t, tau_deficits[j], units);
            visibility = visibility.min(a.overlap(&b).norm_sqr());
        }
    }

    Ok((
        final_state,
        ClockReport {
            taus,
            tau_deficits,
            delta_tau,
            visibility,
            grav_phases,
        },
    ))
}

/// Kinds that hold a fixed position during a clock run; used for the
/// factorization check in tests and reports.
pub fn clock_position_definite(state: &BranchState, tol: f64) -> bool {
    let registry = state.registry();
    match registry.clock_index() {
        Some(ci) => {
            let label = registry.id(ci).label.clone();
            matches!(registry.id(ci).kind, SystemKind::Clock)
                && state.is_definite(&[label.as_str()], tol).unwrap_or(false)
        }
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Branch, SystemId, SystemRegistry};
    use crate::units::CODATA;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x])
    }

    /// The estimate scenario: a 1e-8 kg sphere superposed at two distances
    /// from a trapped clock, CODATA constants.
    fn microsphere_clock_state(l1: f64, l2: f64) -> BranchState {
        let reg = Arc::new(
            SystemRegistry::new(vec![
                (SystemId::new("R", SystemKind::Reference), None),
                (SystemId::new("M", SystemKind::Mass), Some(1e-8)),
                (SystemId::new("C", SystemKind::Clock), None),
            ])
            .unwrap(),
        );
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let x_c = 1.0;
        let branches = vec![
            Branch::new(amp, vec![v1(0.0), v1(x_c + l1), v1(x_c)]).with_clock(ClockQubit::plus()),
            Branch::new(amp, vec![v1(0.0), v1(x_c + l2), v1(x_c)]).with_clock(ClockQubit::plus()),
        ];
        BranchState::new(reg, branches, "R").unwrap()
    }

    #[test]
    fn proper_time_without_gravity_is_coordinate_time() {
        let units = CODATA;
        let pot = PotentialModel::new(vec![], units);
        let tau = proper_time(&pot, &v1(1.0), 2.5, &units).unwrap();
        assert_eq!(tau, 2.5);
    }

    #[test]
    fn proper_time_microsphere_parameters() {
        // M = 1e-8 kg at 5.0e-5 m for 1 s: deficit GM/(c^2 x). The deficit
        // sits ~15 orders below the f64 resolution of tau itself, so it is
        // asserted through the deficit form.
        let units = CODATA;
        let pot = PotentialModel::new(vec![(v1(0.0), 1e-8)], units);
        let deficit = proper_time_deficit(&pot, &v1(5.0e-5), 1.0, &units).unwrap();
        let expected = units.g * 1e-8 / (units.c_squared() * 5.0e-5);
        assert_relative_eq!(deficit, expected, max_relative = 1e-12);
        // Magnitude check of the evaluated deficit.
        assert_relative_eq!(deficit, 1.48524e-31, max_relative = 1e-4);
        // tau itself collapses onto t in f64.
        assert_eq!(proper_time(&pot, &v1(5.0e-5), 1.0, &units).unwrap(), 1.0);
        // In desk units the same formula resolves directly.
        let desk = UnitSystem::new(1.0, 100.0, 1.0).unwrap();
        let pot = PotentialModel::new(vec![(v1(0.0), 1.0)], desk);
        let tau = proper_time(&pot, &v1(2.0), 3.0, &desk).unwrap();
        assert_relative_eq!(tau, 3.0 * (1.0 - 0.5 / 1e4), epsilon = 1e-15);
    }

    #[test]
    fn deeper_potential_dilates_more() {
        let units = CODATA;
        let pot = PotentialModel::new(vec![(v1(0.0), 1e-8)], units);
        let def_near = proper_time_deficit(&pot, &v1(5.0e-5), 1.0, &units).unwrap();
        let def_far = proper_time_deficit(&pot, &v1(5.5e-5), 1.0, &units).unwrap();
        assert!(def_near > def_far);
    }

    #[test]
    fn strong_field_rejected() {
        let units = UnitSystem::new(1.0, 10.0, 1.0).unwrap();
        let pot = PotentialModel::new(vec![(v1(0.0), 1e4)], units);
        assert!(matches!(
            proper_time(&pot, &v1(1.0), 1.0, &units),
            Err(ClockError::StrongField(_))
        ));
    }

    #[test]
    fn clock_evolution_identity_and_periodicity() {
        let units = UnitSystem::new(1.0, 1.0, 1.0).unwrap();
        let spec = ClockSpec::new(0.0, 2.0, ClockQubit::plus());
        let s0 = spec.initial;
        let same = evolve_clock(&spec, &s0, 0.0, &units);
        assert_eq!(same, s0);
        // After one full period the relative phase returns (global phase aside).
        let period = 2.0 * std::f64::consts::PI * units.hbar / (spec.e1 - spec.e0);
        let cycled = evolve_clock(&spec, &s0, period, &units);
        assert_relative_eq!(cycled.overlap(&s0).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn plus_state_overlap_follows_cosine() {
        let units = UnitSystem::new(1.0, 1.0, 1.0).unwrap();
        let spec = ClockSpec::new(0.3, 1.7, ClockQubit::plus());
        for tau in [0.1, 0.7, 2.3] {
            let evolved = evolve_clock(&spec, &spec.initial, tau, &units);
            let overlap = spec.initial.overlap(&evolved).norm_sqr();
            let expected = ((spec.e0 - spec.e1) * tau / (2.0 * units.hbar))
                .cos()
                .powi(2);
            assert_relative_eq!(overlap, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn p_plus_limits() {
        let units = CODATA;
        let spec = ClockSpec::new(0.0, 1e-30, ClockQubit::plus());
        assert_relative_eq!(
            p_plus(&spec, 1e-8, 5e-5, 0.0, &units).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        // Flat spacetime: plain two-level ticking.
        let t = 0.37;
        let flat = p_plus(&spec, 0.0, 5e-5, t, &units).unwrap();
        let expected = ((spec.e0 - spec.e1) * t / (2.0 * units.hbar)).cos().powi(2);
        assert_relative_eq!(flat, expected, epsilon = 1e-12);
    }

    #[test]
    fn branch_positions_tick_at_different_rates() {
        // Two distances give different oscillation frequencies: the P_+
        // curves must separate at a quarter period. A planet-scale mass
        // keeps GM/(c^2 x) ~ 1e-3, inside the weak-field bound but large
        // enough that the rate shift is visible in f64.
        let units = CODATA;
        let mass = 5e22;
        let spec = ClockSpec::new(
            0.0,
            2.0 * std::f64::consts::PI * units.hbar,
            ClockQubit::plus(),
        );
        let t = 0.25;
        let p1 = p_plus(&spec, mass, 5.0e-2, t, &units).unwrap();
        let p2 = p_plus(&spec, mass, 5.5e-2, t, &units).unwrap();
        assert!((p1 - p2).abs() > 1e-12);
    }

    #[test]
    fn microsphere_delta_tau_estimate() {
        let units = CODATA;
        let state = microsphere_clock_state(5.0e-5, 5.5e-5);
        let spec = ClockSpec::default_for_duration(1.0, &units);
        let (_, report) = run_clock_scenario(&state, &spec, 1.0, &units).unwrap();
        let delta = report.delta_tau.abs();
        assert!(delta > 1e-32 && delta < 2e-32, "delta_tau = {delta:e}");
        // Exact value of t (GM/c^2)(1/l1 - 1/l2).
        let expected = units.g * 1e-8 / units.c_squared() * (1.0 / 5.0e-5 - 1.0 / 5.5e-5);
        assert_relative_eq!(delta, expected, max_relative = 1e-3);
        // Far above the Planck time.
        assert!(delta > 5.31e-44);
    }

    #[test]
    fn equal_distances_factorize_the_clock() {
        let units = CODATA;
        let state = microsphere_clock_state(5.0e-5, 5.0e-5);
        let spec = ClockSpec::default_for_duration(1.0, &units);
        let (final_state, report) = run_clock_scenario(&state, &spec, 1.0, &units).unwrap();
        assert_eq!(report.delta_tau, 0.0);
        assert_relative_eq!(report.visibility, 1.0, epsilon = 1e-12);
        // Internal states equal across branches.
        let c0 = final_state.branches()[0].clock_internal.unwrap();
        let c1 = final_state.branches()[1].clock_internal.unwrap();
        assert_eq!(c0, c1);
    }

    #[test]
    fn clock_position_stays_definite_through_the_pipeline() {
        let units = CODATA;
        let state = microsphere_clock_state(5.0e-5, 5.5e-5);
        assert!(clock_position_definite(&state, 1e-12));
        let spec = ClockSpec::default_for_duration(1.0, &units);
        let (final_state, _) = run_clock_scenario(&state, &spec, 1.0, &units).unwrap();
        assert!(clock_position_definite(&final_state, 1e-12));
    }

    #[test]
    fn visibility_matches_the_cosine_formula() {
        let units = CODATA;
        let state = microsphere_clock_state(5.0e-5, 5.5e-5);
        // A large splitting makes the overlap change measurable.
        let spec = ClockSpec::new(0.0, 1e-2, ClockQubit::plus());
        let (_, report) = run_clock_scenario(&state, &spec, 1.0, &units).unwrap();
        let expected = visibility_from_delta_tau(&spec, report.delta_tau, &units);
        assert_relative_eq!(report.visibility, expected, epsilon = 1e-12);
    }

    #[test]
    fn delta_tau_linear_in_time() {
        let units = CODATA;
        let state = microsphere_clock_state(5.0e-5, 5.5e-5);
        let spec = ClockSpec::default_for_duration(1.0, &units);
        let (_, r1) = run_clock_scenario(&state, &spec, 1.0, &units).unwrap();
        let (_, r2) = run_clock_scenario(&state, &spec, 2.0, &units).unwrap();
        assert_relative_eq!(r2.delta_tau, 2.0 * r1.delta_tau, max_relative = 1e-12);
    }
}
