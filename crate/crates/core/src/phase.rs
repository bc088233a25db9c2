//! Action phases accumulated along semi-classical paths in the weak-field
//! metric, split into rest, special-relativistic, and gravitational parts.
//!
//! All quadratures are composite Simpson rules on the integrator's own
//! uniform time grid (a 3/8 closing rule absorbs an odd interval count).
//! The integrands are evaluated in forms that avoid the `1 + tiny`
//! cancellation, so the split identity holds to full relative precision even
//! when `|V|/c^2` is many orders below one.

use thiserror::Error;

use crate::geodesic::{DynamicsError, Trajectory};
use crate::potential::PotentialModel;
use crate::units::UnitSystem;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("trajectory holds {0} samples; at least two are required")]
    TooFewSamples(usize),
}

pub type PhaseResult<T> = Result<T, PhaseError>;

/// Composite Simpson quadrature on a uniform grid. Handles any number of
/// intervals >= 1 (trapezoid for a single interval, 3/8 rule to close an odd
/// count).
pub fn composite_simpson(h: f64, f: &[f64]) -> f64 {
    let n = f.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => h * (f[0] + f[1]) / 2.0,
        _ => {
            let (even_part, tail) = if n % 2 == 0 {
                (n, 0.0)
            } else {
                // Simpson 3/8 on the last three intervals.
                let k = n - 3;
                let tail = 3.0 * h / 8.0 * (f[k] + 3.0 * f[k + 1] + 3.0 * f[k + 2] + f[k + 3]);
                (k, tail)
            };
            let mut acc = 0.0;
            if even_part >= 2 {
                acc += f[0] + f[even_part];
                let mut k = 1;
                while k < even_part {
                    acc += 4.0 * f[k];
                    if k + 1 < even_part {
                        acc += 2.0 * f[k + 1];
                    }
                    k += 2;
                }
                acc *= h / 3.0;
            }
            acc + tail
        }
    }
}

/// Cumulative quadrature on a uniform grid: local quadratic (Simpson-style)
/// increments, matching the composite rule to fourth order.
pub fn cumulative_simpson(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = h * (f[0] + f[1]) / 2.0;
        return out;
    }
    for k in 0..n - 1 {
        let inc = if k + 2 < n {
            // Integral over [k, k+1] from the parabola through k, k+1, k+2.
            h / 12.0 * (5.0 * f[k] + 8.0 * f[k + 1] - f[k + 2])
        } else {
            // Last interval: parabola through the trailing triplet.
            h / 12.0 * (-f[k - 1] + 8.0 * f[k] + 5.0 * f[k + 1])
        };
        out[k + 1] = out[k] + inc;
    }
    out
}

fn grid_step(traj: &Trajectory) -> PhaseResult<f64> {
    if traj.times.len() < 2 {
        return Err(PhaseError::TooFewSamples(traj.times.len()));
    }
    Ok(traj.times[1] - traj.times[0])
}

/// `sqrt(1 + eps) - 1` without cancellation for small `eps`.
fn sqrt1p_m1(eps: f64) -> f64 {
    eps / (1.0 + (1.0 + eps).sqrt())
}

/// Rest phase `m c^2 t / hbar`, common to every branch of equal duration.
pub fn rest_phase(m_s: f64, t: f64, units: &UnitSystem) -> f64 {
    m_s * units.c_squared() * t / units.hbar
}

/// Special-relativistic phase `(m c^2/hbar) int sqrt(1 - v^2/c^2) dt`.
pub fn sr_phase(traj: &Trajectory, m_s: f64, units: &UnitSystem) -> PhaseResult<f64> {
    Ok(
        rest_phase(m_s, traj.times.last().copied().unwrap_or(0.0), units)
            + sr_phase_minus_rest(traj, m_s, units)?,
    )
}

/// The velocity-dependent part of [`sr_phase`], with the rest phase removed:
/// `(m c^2/hbar) int [sqrt(1 - v^2/c^2) - 1] dt`.
pub fn sr_phase_minus_rest(traj: &Trajectory, m_s: f64, units: &UnitSystem) -> PhaseResult<f64> {
    let h = grid_step(traj)?;
    let c2 = units.c_squared();
    let mut f = Vec::with_capacity(traj.len());
    for v in &traj.velocities {
        let beta2 = v.norm_squared() / c2;
        if beta2 >= 1.0 {
            return Err(PhaseError::Dynamics(DynamicsError::SuperluminalSample {
                v: v.norm(),
                c: units.c,
            }));
        }
        f.push(sqrt1p_m1(-beta2));
    }
    Ok(m_s * c2 / units.hbar * composite_simpson(h, &f))
}

/// Gravitational phase `(m/hbar) int V(x(t)) dt` along the path (negative in
/// an attractive potential).
pub fn grav_phase(
    pot: &PotentialModel,
    traj: &Trajectory,
    m_s: f64,
    units: &UnitSystem,
) -> PhaseResult<f64> {
    let h = grid_step(traj)?;
    let f: Vec<f64> = traj.positions.iter().map(|x| pot.v(x)).collect();
    Ok(m_s / units.hbar * composite_simpson(h, &f))
}

/// Proper-time action phase along the path in the weak-field metric,
/// `(m c^2/hbar) int sqrt(1 + 2V/c^2 - v^2/c^2) dt`, including the rest
/// part. Rejects samples faster than a tenth of `c`, where the weak-field
/// form stops being trustworthy.
pub fn stodolsky_phase(
    pot: &PotentialModel,
    traj: &Trajectory,
    m_s: f64,
    units: &UnitSystem,
) -> PhaseResult<f64> {
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    Ok(rest_phase(m_s, t_end, units) + stodolsky_phase_minus_rest(pot, traj, m_s, units)?)
}

/// [`stodolsky_phase`] with the rest phase removed; this is the part that
/// differs between branches and stays numerically resolvable at laboratory
/// scales.
pub fn stodolsky_phase_minus_rest(
    pot: &PotentialModel,
    traj: &Trajectory,
    m_s: f64,
    units: &UnitSystem,
) -> PhaseResult<f64> {
    let h = grid_step(traj)?;
    let c2 = units.c_squared();
    let mut f = Vec::with_capacity(traj.len());
    for (x, v) in traj.positions.iter().zip(&traj.velocities) {
        let beta2 = v.norm_squared() / c2;
        if beta2 > 0.01 {
            return Err(PhaseError::Dynamics(DynamicsError::RelativisticVelocity {
                v: v.norm(),
                bound: 0.1 * units.c,
            }));
        }
        let eps = 2.0 * pot.v(x) / c2 - beta2;
        f.push(sqrt1p_m1(eps));
    }
    Ok(m_s * c2 / units.hbar * composite_simpson(h, &f))
}

/// Closed-form gravitational phase along the zero-energy radial infall path:
/// `(m/hbar) sqrt(2MG) [ (x0^{3/2} - 3 sqrt(MG/2) t)^{1/3} - sqrt(x0) ]`.
///
/// This is the antiderivative of `m V(x(t))/hbar` along the closed-form
/// radial solution (its time derivative is exactly `m V(x(t))/hbar`), so it
/// is negative for `t > 0`.
pub fn grav_phase_closed(
    x0: f64,
    mass: f64,
    m_s: f64,
    t: f64,
    units: &UnitSystem,
) -> PhaseResult<f64> {
    if !(x0 > 0.0) {
        return Err(PhaseError::Dynamics(DynamicsError::NonPositiveRadius(x0)));
    }
    let t_sing = crate::geodesic::t_singularity(x0, mass, units);
    if t >= t_sing {
        return Err(PhaseError::Dynamics(DynamicsError::PastSingularity {
            t,
            t_sing,
        }));
    }
    let mg = mass * units.g;
    let u = x0.powf(1.5) - 3.0 * (mg / 2.0).sqrt() * t;
    Ok(m_s / units.hbar * (2.0 * mg).sqrt() * (u.powf(1.0 / 3.0) - x0.sqrt()))
}

/// Fills the phase series of a trajectory with the cumulative
/// rest-subtracted (or full) action phase.
pub fn attach_phase_series(
    traj: &mut Trajectory,
    pot: &PotentialModel,
    m_s: f64,
    units: &UnitSystem,
    include_rest: bool,
) -> PhaseResult<()> {
    let h = grid_step(traj)?;
    let c2 = units.c_squared();
    let mut f = Vec::with_capacity(traj.len());
    for (x, v) in traj.positions.iter().zip(&traj.velocities) {
        let beta2 = v.norm_squared() / c2;
        let eps = 2.0 * pot.v(x) / c2 - beta2;
        let base = if include_rest {
            1.0 + sqrt1p_m1(eps)
        } else {
            sqrt1p_m1(eps)
        };
        f.push(base);
    }
    let series = cumulative_simpson(h, &f);
    let scale = m_s * c2 / units.hbar;
    traj.phases = series.into_iter().map(|p| scale * p).collect();
    Ok(())
}
