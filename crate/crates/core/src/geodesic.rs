//! Geodesic motion in the weak-field limit: fourth-order Runge-Kutta
//! integration of `x'' = -grad V(x)` plus the closed-form radial solution.

use nalgebra::DVector;
use thiserror::Error;

use crate::potential::PotentialModel;
use crate::units::UnitSystem;

/// Fraction of the initial probe-mass distance used as the singularity guard
/// radius when no explicit guard is supplied.
pub const R_MIN_FRACTION: f64 = 1e-3;

/// Relative energy drift allowed per integration step.
pub const STEP_ENERGY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("time {t} reaches or passes the central singularity at t_sing = {t_sing}")]
    PastSingularity { t: f64, t_sing: f64 },
    #[error("trajectory entered the guard radius {r_min} around a mass at t = {t}")]
    SingularityApproach { t: f64, r_min: f64 },
    #[error("relative energy drift {drift:.3e} in one step at t = {t}; reduce dt")]
    StepTooLarge { t: f64, drift: f64 },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("initial position must be strictly positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("sample speed {v} exceeds the weak-field bound 0.1 c = {bound}")]
    RelativisticVelocity { v: f64, bound: f64 },
    #[error("sample speed {v} is not below c = {c}")]
    SuperluminalSample { v: f64, c: f64 },
    #[error("grid too coarse: fraction {tail:.3e} of the norm sits above a quarter of the Nyquist wavenumber")]
    GridTooCoarse { tail: f64 },
    #[error("mass at distance {dist} lies inside the grid without softening")]
    MassOnGrid { dist: f64 },
    #[error("grid shift of {shift} m is not an integer number of cells (dx = {dx})")]
    MisalignedShift { shift: f64, dx: f64 },
    #[error("wavefunction norm is {0}, expected 1 within 1e-10")]
    NotNormalized(f64),
}

pub type DynamicsResult<T> = Result<T, DynamicsError>;

/// Time series of one branch's probe motion in a stated frame. `phases[k]` is
/// the action phase accumulated up to `times[k]`; it starts at zero and is
/// filled in by the evolution drivers.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    pub phases: Vec<f64>,
    pub branch_index: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_position(&self) -> &DVector<f64> {
        self.positions.last().expect("trajectory is non-empty")
    }

    /// Kinetic-plus-potential energy per unit mass at sample `k`.
    pub fn energy(&self, pot: &PotentialModel, k: usize) -> f64 {
        0.5 * self.velocities[k].norm_squared() + pot.v(&self.positions[k])
    }
}

/// Time to reach the center along the zero-energy radial solution.
pub fn t_singularity(x0: f64, mass: f64, units: &UnitSystem) -> f64 {
    x0.powf(1.5) / (3.0 * (mass * units.g / 2.0).sqrt())
}

/// Closed-form radial coordinate of the infalling zero-energy solution,
/// `x(t) = (x0^{3/2} - 3 sqrt(MG/2) t)^{2/3}`.
///
/// Note the implied initial speed: `x'(0) = -sqrt(2 M G / x0)`, the
/// zero-total-energy value, not zero. Oracle comparisons against a numerical
/// integration must use that initial condition.
pub fn radial_freefall(x0: f64, mass: f64, t: f64, units: &UnitSystem) -> DynamicsResult<f64> {
    if !(x0 > 0.0) {
        return Err(DynamicsError::NonPositiveRadius(x0));
    }
    let t_sing = t_singularity(x0, mass, units);
    if t >= t_sing {
        return Err(DynamicsError::PastSingularity { t, t_sing });
    }
    let u = x0.powf(1.5) - 3.0 * (mass * units.g / 2.0).sqrt() * t;
    Ok(u.powf(2.0 / 3.0))
}

/// Initial radial speed implied by [`radial_freefall`] at `x0` (directed
/// inward, returned as a positive magnitude).
pub fn radial_freefall_speed(x0: f64, mass: f64, units: &UnitSystem) -> f64 {
    (2.0 * mass * units.g / x0).sqrt()
}

fn acceleration(pot: &PotentialModel, x: &DVector<f64>) -> DVector<f64> {
    -pot.grad_v(x)
}

/// RK4 integration of `x'' = -grad V` from `(x0, v0)` to `t_end`.
///
/// The step is adjusted downward so the grid is exactly uniform. Steps that
/// drift more than [`STEP_ENERGY_TOL`] in relative energy or that enter the
/// guard radius `r_min` (default [`R_MIN_FRACTION`] of the initial closest
/// mass distance) abort the integration.
pub fn geodesic_integrate(
    pot: &PotentialModel,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> DynamicsResult<Trajectory> {
    geodesic_integrate_guarded(pot, x0, v0, t_end, dt, None)
}

pub fn geodesic_integrate_guarded(
    pot: &PotentialModel,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    r_min: Option<f64>,
) -> DynamicsResult<Trajectory> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let r_min = r_min.unwrap_or_else(|| {
        if pot.is_empty() {
            0.0
        } else {
            R_MIN_FRACTION * pot.min_distance(x0)
        }
    });
    if !pot.is_empty() && pot.min_distance(x0) <= r_min {
        return Err(DynamicsError::SingularityApproach { t: 0.0, r_min });
    }

    let n_steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / n_steps as f64;

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut positions = Vec::with_capacity(n_steps + 1);
    let mut velocities = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    positions.push(x0.clone());
    velocities.push(v0.clone());

    let mut x = x0.clone();
    let mut v = v0.clone();
    let mut energy = 0.5 * v.norm_squared() + pot.v(&x);
    let energy_scale = energy.abs().max(v.norm_squared()).max(pot.v(&x).abs());

    for k in 0..n_steps {
        let t = k as f64 * h;

        let k1x = v.clone();
        let k1v = acceleration(pot, &x);
        let k2x = &v + &k1v * (h / 2.0);
        let k2v = acceleration(pot, &(&x + &k1x * (h / 2.0)));
        let k3x = &v + &k2v * (h / 2.0);
        let k3v = acceleration(pot, &(&x + &k2x * (h / 2.0)));
        let k4x = &v + &k3v * h;
        let k4v = acceleration(pot, &(&x + &k3x * h));

        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        let t_next = t + h;

        if !pot.is_empty() && pot.min_distance(&x) <= r_min {
            return Err(DynamicsError::SingularityApproach { t: t_next, r_min });
        }
        let e_next = 0.5 * v.norm_squared() + pot.v(&x);
        if energy_scale > 0.0 {
            let drift = (e_next - energy).abs() / energy_scale;
            if drift > STEP_ENERGY_TOL {
                return Err(DynamicsError::StepTooLarge { t: t_next, drift });
            }
        }
        energy = e_next;

        times.push(t_next);
        positions.push(x.clone());
        velocities.push(v.clone());
    }

    let phases = vec![0.0; times.len()];
    Ok(Trajectory {
        times,
        positions,
        velocities,
        phases,
        branch_index: 0,
    })
}

/// Trajectory of a motionless probe, sampled on the same uniform grid the
/// integrator would use.
pub fn static_trajectory(x0: &DVector<f64>, t_end: f64, dt: f64) -> DynamicsResult<Trajectory> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let n_steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * h).collect();
    let zero = DVector::zeros(x0.len());
    Ok(Trajectory {
        positions: vec![x0.clone(); times.len()],
        velocities: vec![zero; times.len()],
        phases: vec![0.0; times.len()],
        times,
        branch_index: 0,
    })
}
