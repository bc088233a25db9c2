//! Branch-superposition states over a registry of physical systems.
//!
//! A state is a finite list of semi-classical branches. Each branch carries a
//! complex amplitude and one definite position per registered system; phases
//! live inside the amplitudes. One registered system serves as the frame and
//! sits at the origin of every branch.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

/// Branches of the same state whose positions all agree within this distance
/// are treated as the same position eigenstate. Far below the scenario length
/// scales used here, far above `f64` noise.
pub const DEFAULT_POS_TOL: f64 = 1e-9;

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("every branch amplitude is zero; cannot normalize")]
    AllZeroAmplitudes,
    #[error("unknown system `{0}`")]
    UnknownSystem(String),
    #[error("branch index {index} out of range ({len} branches)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("states do not share a registry: {0}")]
    RegistryMismatch(String),
    #[error("duplicate system label `{0}` in registry")]
    DuplicateLabel(String),
    #[error("system `{0}` requires a strictly positive mass, got {1:?}")]
    InvalidMass(String, Option<f64>),
    #[error("position for `{label}` has dimension {got}, expected {expected}")]
    DimensionMismatch {
        label: String,
        got: usize,
        expected: usize,
    },
    #[error("branch {0} is missing a position for system `{1}`")]
    MissingPosition(usize, String),
    #[error("amplitudes have squared norm {0}, expected 1 within 1e-12")]
    NotNormalized(f64),
    #[error("frame system `{label}` sits away from the origin in branch {branch}")]
    FrameNotAtOrigin { label: String, branch: usize },
    #[error("clock internal state has squared norm {0}, expected 1 within 1e-12")]
    ClockNotUnitNorm(f64),
    #[error("branch list is empty")]
    EmptyBranchList,
    #[error("registry holds more than one clock system")]
    MultipleClocks,
}

/// Role a registered system plays in a scenario.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemKind {
    Reference,
    Mass,
    Probe,
    Clock,
    Ancilla,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SystemKind::Reference => "reference",
            SystemKind::Mass => "mass",
            SystemKind::Probe => "probe",
            SystemKind::Clock => "clock",
            SystemKind::Ancilla => "ancilla",
        };
        f.write_str(s)
    }
}

/// Identity of one registered system: a unique label plus its role.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SystemId {
    pub label: String,
    pub kind: SystemKind,
}

impl SystemId {
    pub fn new(label: impl Into<String>, kind: SystemKind) -> Self {
        Self {
            label: label.into(),
            kind,
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct SystemEntry {
    id: SystemId,
    /// kg; required for mass and probe systems, optional for clocks.
    mass: Option<f64>,
}

/// Ordered collection of the systems a state describes.
///
/// Registry order is meaningful: it fixes which mass serves as the origin of
/// the mass frame (the first mass listed) and which reference particle fixes
/// the frame axis (the second reference listed).
#[derive(Clone, Debug, PartialEq)]
pub struct SystemRegistry {
    entries: Vec<SystemEntry>,
}

impl SystemRegistry {
    pub fn new(systems: Vec<(SystemId, Option<f64>)>) -> Result<Self, StateError> {
        let mut clocks = 0usize;
        for (i, (id, mass)) in systems.iter().enumerate() {
            for (other, _) in systems.iter().skip(i + 1) {
                if other.label == id.label {
                    return Err(StateError::DuplicateLabel(id.label.clone()));
                }
            }
            match id.kind {
                SystemKind::Mass | SystemKind::Probe => {
                    if !matches!(mass, Some(m) if *m > 0.0) {
                        return Err(StateError::InvalidMass(id.label.clone(), *mass));
                    }
                }
                SystemKind::Clock => {
                    clocks += 1;
                    if let Some(m) = mass {
                        if !(*m > 0.0) {
                            return Err(StateError::InvalidMass(id.label.clone(), *mass));
                        }
                    }
                }
                _ => {}
            }
        }
        if clocks > 1 {
            return Err(StateError::MultipleClocks);
        }
        Ok(Self {
            entries: systems
                .into_iter()
                .map(|(id, mass)| SystemEntry { id, mass })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &SystemId> {
        self.entries.iter().map(|e| &e.id)
    }

    pub fn id(&self, index: usize) -> &SystemId {
        &self.entries[index].id
    }

    pub fn index_of(&self, label: &str) -> Result<usize, StateError> {
        self.entries
            .iter()
            .position(|e| e.id.label == label)
            .ok_or_else(|| StateError::UnknownSystem(label.to_string()))
    }

    pub fn mass_of(&self, index: usize) -> Option<f64> {
        self.entries[index].mass
    }

    /// Registry indices of all mass systems, in registry order.
    pub fn mass_indices(&self) -> Vec<usize> {
        self.indices_of_kind(SystemKind::Mass)
    }

    /// Registry indices of all reference particles, in registry order.
    pub fn reference_indices(&self) -> Vec<usize> {
        self.indices_of_kind(SystemKind::Reference)
    }

    pub fn probe_index(&self) -> Option<usize> {
        self.indices_of_kind(SystemKind::Probe).first().copied()
    }

    pub fn clock_index(&self) -> Option<usize> {
        self.indices_of_kind(SystemKind::Clock).first().copied()
    }

    fn indices_of_kind(&self, kind: SystemKind) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.id.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Two-level internal clock state.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ClockQubit(pub [Complex64; 2]);

impl ClockQubit {
    /// (|0> + |1>)/sqrt(2)
    pub fn plus() -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self([a, a])
    }

    pub fn norm_sq(&self) -> f64 {
        self.0[0].norm_sqr() + self.0[1].norm_sqr()
    }

    pub fn overlap(&self, other: &ClockQubit) -> Complex64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }
}

/// One semi-classical branch: an amplitude and a definite position for every
/// registered system, in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub amplitude: Complex64,
    positions: Vec<DVector<f64>>,
    pub clock_internal: Option<ClockQubit>,
    /// Discrete branch marker used by the ancilla-controlled transformation.
    pub ancilla_tag: Option<u32>,
}

impl Branch {
    pub fn new(amplitude: Complex64, positions: Vec<DVector<f64>>) -> Self {
        Self {
            amplitude,
            positions,
            clock_internal: None,
            ancilla_tag: None,
        }
    }

    pub fn with_clock(mut self, clock: ClockQubit) -> Self {
        self.clock_internal = Some(clock);
        self
    }

    pub fn with_tag(mut self, tag: u32) -> Self {
        self.ancilla_tag = Some(tag);
        self
    }

    pub fn position(&self, index: usize) -> &DVector<f64> {
        &self.positions[index]
    }

    pub fn positions(&self) -> &[DVector<f64>] {
        &self.positions
    }

    pub(crate) fn set_position(&mut self, index: usize, pos: DVector<f64>) {
        self.positions[index] = pos;
    }

    pub(crate) fn map_positions<F>(&mut self, mut f: F)
    where
        F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
    {
        for i in 0..self.positions.len() {
            self.positions[i] = f(i, &self.positions[i]);
        }
    }
}

/// Superposition of branches over a shared registry, described relative to the
/// frame system (which sits at the origin in every branch).
#[derive(Clone, Debug)]
pub struct BranchState {
    registry: Arc<SystemRegistry>,
    branches: Vec<Branch>,
    frame: usize,
    /// Length of the reference axis vector e1 before a frame change into the
    /// mass frame; kept so the inverse restores the axis exactly.
    pub(crate) stored_axis_len: Option<f64>,
}

impl BranchState {
    /// Builds a state and checks every invariant: unit total norm, complete
    /// positions of a common dimension, frame at the origin, unit-norm clocks.
    pub fn new(
        registry: Arc<SystemRegistry>,
        branches: Vec<Branch>,
        frame_label: &str,
    ) -> Result<Self, StateError> {
        let frame = registry.index_of(frame_label)?;
        let state = Self {
            registry,
            branches,
            frame,
            stored_axis_len: None,
        };
        state.validate()?;
        Ok(state)
    }

    /// As [`BranchState::new`] but rescales the amplitudes to unit total norm
    /// first.
    pub fn new_normalized(
        registry: Arc<SystemRegistry>,
        branches: Vec<Branch>,
        frame_label: &str,
    ) -> Result<Self, StateError> {
        let frame = registry.index_of(frame_label)?;
        let mut state = Self {
            registry,
            branches,
            frame,
            stored_axis_len: None,
        };
        let norm = state.total_norm_sq();
        if norm <= 0.0 {
            return Err(StateError::AllZeroAmplitudes);
        }
        let scale = norm.sqrt().recip();
        for b in &mut state.branches {
            b.amplitude *= scale;
        }
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<(), StateError> {
        if self.branches.is_empty() {
            return Err(StateError::EmptyBranchList);
        }
        let n_sys = self.registry.len();
        let dim = self
            .branches
            .first()
            .and_then(|b| b.positions.first())
            .map(|p| p.len())
            .unwrap_or(0);
        for (bi, branch) in self.branches.iter().enumerate() {
            if branch.positions.len() != n_sys {
                let label = self
                    .registry
                    .ids()
                    .nth(branch.positions.len())
                    .map(|id| id.label.clone())
                    .unwrap_or_default();
                return Err(StateError::MissingPosition(bi, label));
            }
            for (si, pos) in branch.positions.iter().enumerate() {
                if pos.len() != dim {
                    return Err(StateError::DimensionMismatch {
                        label: self.registry.id(si).label.clone(),
                        got: pos.len(),
                        expected: dim,
                    });
                }
            }
            if branch.positions[self.frame]
                .iter()
                .any(|x| x.abs() > NORM_TOL)
            {
                return Err(StateError::FrameNotAtOrigin {
                    label: self.registry.id(self.frame).label.clone(),
                    branch: bi,
                });
            }
            if let Some(clock) = &branch.clock_internal {
                let n = clock.norm_sq();
                if (n - 1.0).abs() > NORM_TOL {
                    return Err(StateError::ClockNotUnitNorm(n));
                }
            }
        }
        let norm = self.total_norm_sq();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(StateError::NotNormalized(norm));
        }
        Ok(())
    }

    pub fn registry(&self) -> &SystemRegistry {
        &self.registry
    }

    pub fn registry_arc(&self) -> Arc<SystemRegistry> {
        Arc::clone(&self.registry)
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn frame_index(&self) -> usize {
        self.frame
    }

    pub fn frame_id(&self) -> &SystemId {
        self.registry.id(self.frame)
    }

    /// Spatial dimension shared by every position vector.
    pub fn dimension(&self) -> usize {
        self.branches[0].positions[0].len()
    }

    pub fn position(&self, branch: usize, label: &str) -> Result<&DVector<f64>, StateError> {
        let si = self.registry.index_of(label)?;
        let b = self
            .branches
            .get(branch)
            .ok_or(StateError::IndexOutOfRange {
                index: branch,
                len: self.branches.len(),
            })?;
        Ok(b.position(si))
    }

    fn total_norm_sq(&self) -> f64 {
        self.branches.iter().map(|b| b.amplitude.norm_sqr()).sum()
    }

    /// Rescales the amplitudes by a common positive real so that the total
    /// squared norm is one. Relative phases are untouched. States already at
    /// unit norm to machine precision pass through bit-identically, which
    /// makes the operation exactly idempotent.
    pub fn normalize(&self) -> Result<Self, StateError> {
        let norm = self.total_norm_sq();
        if norm <= 0.0 {
            return Err(StateError::AllZeroAmplitudes);
        }
        if (norm - 1.0).abs() <= 16.0 * f64::EPSILON {
            return Ok(self.clone());
        }
        let scale = norm.sqrt().recip();
        let mut out = self.clone();
        for b in &mut out.branches {
            b.amplitude *= scale;
        }
        Ok(out)
    }

    /// True iff every listed system has the same position in all branches,
    /// componentwise within `tol`.
    pub fn is_definite(&self, labels: &[&str], tol: f64) -> Result<bool, StateError> {
        let indices: Vec<usize> = labels
            .iter()
            .map(|l| self.registry.index_of(l))
            .collect::<Result<_, _>>()?;
        let first = &self.branches[0];
        for branch in &self.branches[1..] {
            for &si in &indices {
                let a = first.position(si);
                let b = branch.position(si);
                if a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > tol) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Convenience: definiteness of every registered mass system.
    pub fn masses_definite(&self, tol: f64) -> bool {
        let labels: Vec<&str> = self
            .registry
            .mass_indices()
            .into_iter()
            .map(|i| self.registry.id(i).label.as_str())
            .collect();
        let refs: Vec<&str> = labels.to_vec();
        self.is_definite(&refs, tol).unwrap_or(false)
    }

    /// Euclidean distance for every unordered pair of systems (self pairs
    /// included, trivially zero) in the given branch.
    pub fn relative_distances(
        &self,
        branch_index: usize,
    ) -> Result<BTreeMap<(SystemId, SystemId), f64>, StateError> {
        let branch = self
            .branches
            .get(branch_index)
            .ok_or(StateError::IndexOutOfRange {
                index: branch_index,
                len: self.branches.len(),
            })?;
        let mut out = BTreeMap::new();
        for i in 0..self.registry.len() {
            for j in i..self.registry.len() {
                let d = (branch.position(i) - branch.position(j)).norm();
                out.insert(
                    (self.registry.id(i).clone(), self.registry.id(j).clone()),
                    d,
                );
            }
        }
        Ok(out)
    }

    /// Inner product treating position eigenstates as orthonormal once any
    /// system is separated beyond `pos_tol`.
    ///
    /// Within each state, branches that coincide (all positions within
    /// `pos_tol`, same ancilla tag, same clock state) are first merged by
    /// amplitude addition; cross terms then pick up the clock overlap.
    pub fn inner_product(
        &self,
        other: &BranchState,
        pos_tol: f64,
    ) -> Result<Complex64, StateError> {
        if self.registry.as_ref() != other.registry.as_ref() {
            return Err(StateError::RegistryMismatch(
                "system registries differ".into(),
            ));
        }
        if self.dimension() != other.dimension() {
            return Err(StateError::RegistryMismatch(format!(
                "dimensions differ: {} vs {}",
                self.dimension(),
                other.dimension()
            )));
        }
        let a = merge_branches(&self.branches, pos_tol);
        let b = merge_branches(&other.branches, pos_tol);
        let mut acc = Complex64::new(0.0, 0.0);
        for ba in &a {
            for bb in &b {
                if !branches_coincide(ba, bb, pos_tol) {
                    continue;
                }
                let clock = match (&ba.clock_internal, &bb.clock_internal) {
                    (Some(ca), Some(cb)) => ca.overlap(cb),
                    (None, None) => Complex64::new(1.0, 0.0),
                    // One side lacks an internal state: treat as orthogonal
                    // sectors.
                    _ => Complex64::new(0.0, 0.0),
                };
                acc += ba.amplitude.conj() * bb.amplitude * clock;
            }
        }
        Ok(acc)
    }

    /// Fidelity |<self|other>|.
    pub fn fidelity(&self, other: &BranchState, pos_tol: f64) -> Result<f64, StateError> {
        Ok(self.inner_product(other, pos_tol)?.norm())
    }

    /// Rebuilds the state with new branches, keeping registry and frame.
    /// Used by the transformation operators; invariants are re-checked.
    pub(crate) fn rebuild(
        &self,
        branches: Vec<Branch>,
        frame: usize,
        stored_axis_len: Option<f64>,
    ) -> Result<Self, StateError> {
        let state = Self {
            registry: Arc::clone(&self.registry),
            branches,
            frame,
            stored_axis_len,
        };
        state.validate()?;
        Ok(state)
    }

    /// Rebuild without invariant checks, for the interior stages of composite
    /// operators where the frame system legitimately sits off the origin.
    pub(crate) fn rebuild_unchecked(
        &self,
        branches: Vec<Branch>,
        frame: usize,
        stored_axis_len: Option<f64>,
    ) -> Self {
        Self {
            registry: Arc::clone(&self.registry),
            branches,
            frame,
            stored_axis_len,
        }
    }
}

fn positions_coincide(a: &Branch, b: &Branch, pos_tol: f64) -> bool {
    a.positions
        .iter()
        .zip(b.positions.iter())
        .all(|(x, y)| (x - y).norm() <= pos_tol)
}

fn branches_coincide(a: &Branch, b: &Branch, pos_tol: f64) -> bool {
    a.ancilla_tag == b.ancilla_tag && positions_coincide(a, b, pos_tol)
}

fn clocks_equal(a: &Option<ClockQubit>, b: &Option<ClockQubit>, tol: f64) -> bool {
    match (a, b) {
        (Some(ca), Some(cb)) => {
            ca.0.iter()
                .zip(cb.0.iter())
                .all(|(x, y)| (x - y).norm() <= tol)
        }
        (None, None) => true,
        _ => false,
    }
}

fn merge_branches(branches: &[Branch], pos_tol: f64) -> Vec<Branch> {
    let mut merged: Vec<Branch> = Vec::with_capacity(branches.len());
    for branch in branches {
        if let Some(existing) = merged.iter_mut().find(|m| {
            branches_coincide(m, branch, pos_tol)
                && clocks_equal(&m.clock_internal, &branch.clock_internal, pos_tol)
        }) {
            existing.amplitude += branch.amplitude;
        } else {
            merged.push(branch.clone());
        }
    }
    merged
}
