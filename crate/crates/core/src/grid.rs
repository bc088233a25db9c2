//! Grid-based probe wavefunctions and second-order split-operator spectral
//! evolution under `H = pi^2/(2 m) + m V(x)`, for one- and two-dimensional
//! grids.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geodesic::{DynamicsError, DynamicsResult};
use crate::potential::PotentialModel;
use crate::state::BranchState;
use crate::units::UnitSystem;

/// Largest admissible fraction of the norm above a quarter of the Nyquist
/// wavenumber (eight grid points per de Broglie wavelength).
pub const MOMENTUM_TAIL_TOL: f64 = 1e-6;

const GRID_NORM_TOL: f64 = 1e-10;

/// Complex amplitudes on a uniform periodic grid, row-major over the axes.
#[derive(Clone, Debug)]
pub struct GridWavefunction {
    ranges: Vec<(f64, f64)>,
    shape: Vec<usize>,
    psi: Vec<Complex64>,
    /// Probe mass (kg).
    pub mass: f64,
}

impl GridWavefunction {
    pub fn new(
        ranges: Vec<(f64, f64)>,
        shape: Vec<usize>,
        psi: Vec<Complex64>,
        mass: f64,
    ) -> DynamicsResult<Self> {
        assert_eq!(ranges.len(), shape.len(), "one range per axis");
        assert_eq!(
            psi.len(),
            shape.iter().product::<usize>(),
            "amplitude count must match the grid shape"
        );
        let wf = Self {
            ranges,
            shape,
            psi,
            mass,
        };
        let norm = wf.norm_sq();
        if (norm - 1.0).abs() > GRID_NORM_TOL {
            return Err(DynamicsError::NotNormalized(norm));
        }
        Ok(wf)
    }

    /// Normalized Gaussian packet `exp(-(x-c)^2/(4 sigma^2) + i k0.x)`.
    pub fn gaussian(
        ranges: Vec<(f64, f64)>,
        shape: Vec<usize>,
        mass: f64,
        center: &[f64],
        sigma: f64,
        k0: &[f64],
    ) -> DynamicsResult<Self> {
        let dim = ranges.len();
        let mut psi = Vec::with_capacity(shape.iter().product());
        let mut idx = vec![0usize; dim];
        let total: usize = shape.iter().product();
        for _ in 0..total {
            let mut arg = Complex64::new(0.0, 0.0);
            for (ax, &i) in idx.iter().enumerate() {
                let x = ranges[ax].0 + i as f64 * (ranges[ax].1 - ranges[ax].0) / shape[ax] as f64;
                let d = x - center[ax];
                arg += Complex64::new(-d * d / (4.0 * sigma * sigma), k0[ax] * x);
            }
            psi.push(arg.exp());
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let mut wf = Self {
            ranges,
            shape,
            psi,
            mass,
        };
        let norm = wf.norm_sq().sqrt();
        if norm == 0.0 {
            return Err(DynamicsError::NotNormalized(0.0));
        }
        for a in &mut wf.psi {
            *a /= norm;
        }
        Ok(wf)
    }

    pub fn dimension(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.psi
    }

    pub fn dx(&self, axis: usize) -> f64 {
        (self.ranges[axis].1 - self.ranges[axis].0) / self.shape[axis] as f64
    }

    /// Volume element of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dimension()).map(|ax| self.dx(ax)).product()
    }

    /// Coordinate of grid point `i` along `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.ranges[axis].0 + i as f64 * self.dx(axis)
    }

    pub fn norm_sq(&self) -> f64 {
        let dv = self.cell_volume();
        self.psi.iter().map(|a| a.norm_sqr()).sum::<f64>() * dv
    }

    /// L2 distance `||psi - other||` (grids must match).
    pub fn l2_distance(&self, other: &GridWavefunction) -> f64 {
        assert_eq!(self.shape, other.shape);
        let dv = self.cell_volume();
        (self
            .psi
            .iter()
            .zip(&other.psi)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * dv)
            .sqrt()
    }

    /// Position expectation value.
    pub fn centroid(&self) -> DVector<f64> {
        let dim = self.dimension();
        let dv = self.cell_volume();
        let mut acc = DVector::zeros(dim);
        let mut idx = vec![0usize; dim];
        for a in &self.psi {
            let w = a.norm_sqr() * dv;
            for ax in 0..dim {
                acc[ax] += w * self.coord(ax, idx[ax]);
            }
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        acc
    }

    /// Circular shift by whole cells per axis (exact on the periodic grid).
    pub fn roll(&self, cells: &[i64]) -> GridWavefunction {
        let dim = self.dimension();
        assert_eq!(cells.len(), dim);
        let mut out = self.clone();
        let total: usize = self.shape.iter().product();
        let mut idx = vec![0usize; dim];
        for flat in 0..total {
            let mut src_flat = 0usize;
            for ax in 0..dim {
                let n = self.shape[ax] as i64;
                let s = ((idx[ax] as i64 - cells[ax]) % n + n) % n;
                src_flat = src_flat * self.shape[ax] + s as usize;
            }
            out.psi[flat] = self.psi[src_flat];
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }

    /// Shift by a physical displacement that must be a whole number of cells
    /// on every axis.
    pub fn shift_by(&self, displacement: &[f64]) -> DynamicsResult<GridWavefunction> {
        let mut cells = Vec::with_capacity(self.dimension());
        for (ax, &d) in displacement.iter().enumerate() {
            let dx = self.dx(ax);
            let c = d / dx;
            let rounded = c.round();
            if (c - rounded).abs() > 1e-9 {
                return Err(DynamicsError::MisalignedShift { shift: d, dx });
            }
            cells.push(rounded as i64);
        }
        Ok(self.roll(&cells))
    }

    /// Fraction of the norm carried by wavenumbers at or above a quarter of
    /// the Nyquist wavenumber on any axis.
    pub fn momentum_tail_fraction(&self) -> f64 {
        let spectrum = fft_all_axes(self, FftDirection::Forward);
        let dim = self.dimension();
        let mut tail = 0.0;
        let mut total = 0.0;
        let mut idx = vec![0usize; dim];
        for a in &spectrum {
            let p = a.norm_sqr();
            total += p;
            let mut high = false;
            for ax in 0..dim {
                let n = self.shape[ax];
                let j = idx[ax];
                let freq = if j <= n / 2 {
                    j as f64
                } else {
                    j as f64 - n as f64
                };
                if freq.abs() >= n as f64 / 8.0 {
                    high = true;
                }
            }
            if high {
                tail += p;
            }
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// Samples a scalar field on the grid, row-major.
    pub fn sample_field<F>(&self, mut f: F) -> Vec<f64>
    where
        F: FnMut(&DVector<f64>) -> f64,
    {
        let dim = self.dimension();
        let total: usize = self.shape.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        let mut x = DVector::zeros(dim);
        for _ in 0..total {
            for ax in 0..dim {
                x[ax] = self.coord(ax, idx[ax]);
            }
            out.push(f(&x));
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        out
    }
}

enum FftDirection {
    Forward,
}

/// Forward FFT along every axis (unnormalized).
fn fft_all_axes(wf: &GridWavefunction, _direction: FftDirection) -> Vec<Complex64> {
    let mut data = wf.psi.clone();
    let dim = wf.dimension();
    let mut planner = FftPlanner::new();
    for ax in 0..dim {
        let n = wf.shape[ax];
        let fft: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
        apply_fft_along_axis(&mut data, &wf.shape, ax, fft.as_ref());
    }
    data
}

fn apply_fft_along_axis(data: &mut [Complex64], shape: &[usize], axis: usize, fft: &dyn Fft<f64>) {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let block = n * stride;
    let total: usize = shape.iter().product();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for block_start in (0..total).step_by(block) {
        for offset in 0..stride {
            for k in 0..n {
                line[k] = data[block_start + offset + k * stride];
            }
            fft.process(&mut line);
            for k in 0..n {
                data[block_start + offset + k * stride] = line[k];
            }
        }
    }
}

fn wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let freq = if j <= (n - 1) / 2 {
                j as f64
            } else {
                j as f64 - n as f64
            };
            2.0 * std::f64::consts::PI * freq / (n as f64 * dx)
        })
        .collect()
}

/// Second-order split-operator evolution under sampled potential values
/// (J/kg, multiplied internally by the probe mass): half potential kick,
/// full spectral kinetic step, half potential kick.
pub fn evolve_sampled(
    psi: &GridWavefunction,
    v_samples: &[f64],
    t: f64,
    dt: f64,
    units: &UnitSystem,
) -> DynamicsResult<GridWavefunction> {
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    assert_eq!(v_samples.len(), psi.amplitudes().len());
    let tail = psi.momentum_tail_fraction();
    if tail > MOMENTUM_TAIL_TOL {
        return Err(DynamicsError::GridTooCoarse { tail });
    }

    let n_steps = (t / dt).round().max(1.0) as usize;
    let h = t / n_steps as f64;
    let hbar = units.hbar;
    let m = psi.mass;

    let half_v: Vec<Complex64> = v_samples
        .iter()
        .map(|&v| (Complex64::new(0.0, -1.0) * (m * v * h / (2.0 * hbar))).exp())
        .collect();
    let dim = psi.dimension();
    let axis_k: Vec<Vec<f64>> = (0..dim)
        .map(|ax| wavenumbers(psi.shape()[ax], psi.dx(ax)))
        .collect();
    let total: usize = psi.shape().iter().product();
    let mut kinetic = Vec::with_capacity(total);
    {
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let k2: f64 = (0..dim).map(|ax| axis_k[ax][idx[ax]].powi(2)).sum();
            kinetic.push((Complex64::new(0.0, -1.0) * (hbar * k2 * h / (2.0 * m))).exp());
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < psi.shape()[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
    }

    let mut planner = FftPlanner::new();
    let forward: Vec<Arc<dyn Fft<f64>>> = (0..dim)
        .map(|ax| planner.plan_fft_forward(psi.shape()[ax]))
        .collect();
    let inverse: Vec<Arc<dyn Fft<f64>>> = (0..dim)
        .map(|ax| planner.plan_fft_inverse(psi.shape()[ax]))
        .collect();
    let inv_scale = 1.0 / total as f64;

    let shape = psi.shape().to_vec();
    let mut out = psi.clone();
    for _ in 0..n_steps {
        for (a, p) in out.psi.iter_mut().zip(&half_v) {
            *a *= p;
        }
        for ax in 0..dim {
            apply_fft_along_axis(&mut out.psi, &shape, ax, forward[ax].as_ref());
        }
        for (a, p) in out.psi.iter_mut().zip(&kinetic) {
            *a *= p;
        }
        for ax in 0..dim {
            apply_fft_along_axis(&mut out.psi, &shape, ax, inverse[ax].as_ref());
        }
        for a in out.psi.iter_mut() {
            *a *= inv_scale;
        }
        for (a, p) in out.psi.iter_mut().zip(&half_v) {
            *a *= p;
        }
    }
    Ok(out)
}

/// Split-operator evolution in a point-mass potential. Masses must lie
/// outside the grid bounding box unless the potential carries a softening
/// length.
pub fn hamiltonian_evolve(
    psi: &GridWavefunction,
    pot: &PotentialModel,
    t: f64,
    dt: f64,
) -> DynamicsResult<GridWavefunction> {
    if pot.softening.is_none() {
        for (xm, _) in pot.masses() {
            let inside = (0..psi.dimension()).all(|ax| {
                let (lo, hi) = psi.ranges()[ax];
                xm[ax] >= lo && xm[ax] <= hi
            });
            if inside {
                let center = DVector::from_iterator(
                    psi.dimension(),
                    (0..psi.dimension()).map(|ax| {
                        let (lo, hi) = psi.ranges()[ax];
                        0.5 * (lo + hi)
                    }),
                );
                return Err(DynamicsError::MassOnGrid {
                    dist: (xm - center).norm(),
                });
            }
        }
    }
    let v = psi.sample_field(|x| pot.v(x));
    evolve_sampled(psi, &v, t, dt, pot.units())
}

/// Result of the Hamiltonian covariance check: branchwise L2 distances
/// between the mass-frame route (shift, evolve at the definite
/// configuration, shift back) and the direct route (evolve under the
/// branch's own potential).
#[derive(Clone, Debug)]
pub struct HamiltonianCovarianceReport {
    pub branch_l2: Vec<f64>,
    pub max_l2: f64,
}

/// Evolves a grid probe through both routes of the covariance statement and
/// reports their branchwise L2 distances.
///
/// Route A changes into the mass frame (an exact cell shift per branch),
/// evolves under the definite-configuration Hamiltonian, and shifts back.
/// Route B evolves directly under the branch's own potential. Mass branch
/// offsets must be whole grid cells so the frame change is exact on the
/// grid.
pub fn transform_hamiltonian_check(
    state: &BranchState,
    psi0: &GridWavefunction,
    t: f64,
    dt: f64,
    units: &UnitSystem,
    softening: Option<f64>,
) -> DynamicsResult<HamiltonianCovarianceReport> {
    let registry = state.registry();
    let masses = registry.mass_indices();
    assert!(
        !masses.is_empty(),
        "covariance check needs at least one mass"
    );
    let dim = psi0.dimension();

    let mut branch_l2 = Vec::with_capacity(state.branch_count());
    for branch in state.branches() {
        let anchor = branch.position(masses[0]);

        // Route A: to the mass frame and back.
        let shift: Vec<f64> = (0..dim).map(|ax| -anchor[ax]).collect();
        let shifted = psi0.shift_by(&shift)?;
        let mass_frame: Vec<(DVector<f64>, f64)> = masses
            .iter()
            .map(|&mi| {
                (
                    branch.position(mi) - anchor,
                    registry.mass_of(mi).expect("mass systems carry a mass"),
                )
            })
            .collect();
        let mut pot_m = PotentialModel::new(mass_frame, *units);
        if let Some(eps) = softening {
            pot_m = pot_m.with_softening(eps);
        }
        let evolved_m = hamiltonian_evolve(&shifted, &pot_m, t, dt)?;
        let back: Vec<f64> = (0..dim).map(|ax| anchor[ax]).collect();
        let route_a = evolved_m.shift_by(&back)?;

        // Route B: directly under the branch potential.
        let lab_frame: Vec<(DVector<f64>, f64)> = masses
            .iter()
            .map(|&mi| {
                (
                    branch.position(mi).clone(),
                    registry.mass_of(mi).expect("mass systems carry a mass"),
                )
            })
            .collect();
        let mut pot_r = PotentialModel::new(lab_frame, *units);
        if let Some(eps) = softening {
            pot_r = pot_r.with_softening(eps);
        }
        let route_b = hamiltonian_evolve(psi0, &pot_r, t, dt)?;

        branch_l2.push(route_a.l2_distance(&route_b));
    }
    let max_l2 = branch_l2.iter().copied().fold(0.0, f64::max);
    Ok(HamiltonianCovarianceReport { branch_l2, max_l2 })
}
