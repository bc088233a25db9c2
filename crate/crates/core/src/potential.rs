//! Newtonian point-mass potentials and the weak-field metric component.

use nalgebra::DVector;

use crate::state::BranchState;
use crate::units::UnitSystem;

/// Superposition of point-mass Newtonian potentials,
/// `V(x) = -sum_i G M_i / |x - x_i|` (J/kg), with analytic gradient and the
/// weak-field time-time metric component `g00 = -1 - 2 V / c^2`.
///
/// An optional Plummer softening length regularizes the potential for grid
/// evolution; the semi-classical integrator instead guards a minimum radius.
#[derive(Clone, Debug)]
pub struct PotentialModel {
    masses: Vec<(DVector<f64>, f64)>,
    units: UnitSystem,
    /// Plummer softening length (m); `None` for the bare point-mass form.
    pub softening: Option<f64>,
}

impl PotentialModel {
    pub fn new(masses: Vec<(DVector<f64>, f64)>, units: UnitSystem) -> Self {
        Self {
            masses,
            units,
            softening: None,
        }
    }

    pub fn with_softening(mut self, epsilon: f64) -> Self {
        self.softening = Some(epsilon);
        self
    }

    /// Masses and their (definite) positions read off one branch of a state.
    pub fn from_branch(state: &BranchState, branch: usize, units: UnitSystem) -> Self {
        let registry = state.registry();
        let masses = registry
            .mass_indices()
            .into_iter()
            .map(|mi| {
                let m = registry.mass_of(mi).expect("mass systems carry a mass");
                (state.branches()[branch].position(mi).clone(), m)
            })
            .collect();
        Self::new(masses, units)
    }

    /// Mean-field potential: each branch's configuration weighted by its
    /// squared amplitude.
    pub fn mean_field(state: &BranchState, units: UnitSystem) -> Self {
        let registry = state.registry();
        let mut masses = Vec::new();
        for branch in state.branches() {
            let w = branch.amplitude.norm_sqr();
            for mi in registry.mass_indices() {
                let m = registry.mass_of(mi).expect("mass systems carry a mass");
                masses.push((branch.position(mi).clone(), w * m));
            }
        }
        Self::new(masses, units)
    }

    pub fn masses(&self) -> &[(DVector<f64>, f64)] {
        &self.masses
    }

    pub fn units(&self) -> &UnitSystem {
        &self.units
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    fn effective_r(&self, r2: f64) -> f64 {
        match self.softening {
            Some(eps) => (r2 + eps * eps).sqrt(),
            None => r2.sqrt(),
        }
    }

    /// Potential per unit probe mass (J/kg). Negative everywhere, vanishing
    /// at infinity.
    pub fn v(&self, x: &DVector<f64>) -> f64 {
        let g = self.units.g;
        self.masses
            .iter()
            .map(|(xm, m)| {
                let r = self.effective_r((x - xm).norm_squared());
                -g * m / r
            })
            .sum()
    }

    /// Gradient of `v` (m/s^2); the acceleration of a test particle is
    /// `-grad_v`.
    pub fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.units.g;
        let mut out = DVector::zeros(x.len());
        for (xm, m) in &self.masses {
            let d = x - xm;
            let r = self.effective_r(d.norm_squared());
            out += d * (g * m / (r * r * r));
        }
        out
    }

    /// Weak-field metric component `g00(x) = -1 - 2 V(x) / c^2`.
    pub fn g00(&self, x: &DVector<f64>) -> f64 {
        -1.0 - 2.0 * self.v(x) / self.units.c_squared()
    }

    /// Distance from `x` to the closest mass.
    pub fn min_distance(&self, x: &DVector<f64>) -> f64 {
        self.masses
            .iter()
            .map(|(xm, _)| (x - xm).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn two_mass_pot() -> PotentialModel {
        let units = UnitSystem::new(2.0, 10.0, 1.0).unwrap();
        PotentialModel::new(vec![(v(&[1.0, 0.0]), 3.0), (v(&[-2.0, 1.0]), 0.5)], units)
    }

    #[test]
    fn potential_negative_and_decaying() {
        let pot = two_mass_pot();
        let near = pot.v(&v(&[0.5, 0.0]));
        let far = pot.v(&v(&[100.0, 100.0]));
        assert!(near < 0.0);
        assert!(far < 0.0);
        assert!(far.abs() < near.abs());
        assert!(far.abs() < 1e-1);
    }

    #[test]
    fn g00_reduces_to_minkowski_far_away() {
        let pot = two_mass_pot();
        let g = pot.g00(&v(&[1e6, 0.0]));
        assert_relative_eq!(g, -1.0, epsilon = 1e-6);
    }

    /// Analytic gradient against central finite differences at random points
    /// away from the singularities.
    #[test]
    fn gradient_matches_finite_differences() {
        let pot = two_mass_pot();
        let mut rng = StdRng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let x = v(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            if pot.min_distance(&x) < 0.3 {
                continue;
            }
            let grad = pot.grad_v(&x);
            let h = 1e-6;
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (pot.v(&xp) - pot.v(&xm)) / (2.0 * h);
                assert_relative_eq!(grad[k], fd, max_relative = 1e-6, epsilon = 1e-9);
            }
            checked += 1;
        }
    }

    #[test]
    fn softening_bounds_the_potential() {
        let units = UnitSystem::new(1.0, 10.0, 1.0).unwrap();
        let pot = PotentialModel::new(vec![(v(&[0.0]), 1.0)], units).with_softening(0.1);
        let at_mass = pot.v(&v(&[0.0]));
        assert!(at_mass.is_finite());
        assert_relative_eq!(at_mass, -10.0, epsilon = 1e-12);
    }
}
