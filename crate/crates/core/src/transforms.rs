//! Frame-change operators on branch states.
//!
//! Three families are provided, all unitary branchwise maps:
//!
//! * the one-mass controlled shift with parity swap (and its generalization to
//!   an arbitrary new frame system),
//! * the four-stage N-mass operator built from a change to relative mass
//!   coordinates, a controlled shift-and-rotation, a generalized parity swap,
//!   and the inverse coordinate change,
//! * the ancilla-controlled operator applying a caller-supplied invertible
//!   coordinate map per branch tag.
//!
//! Positions are eigenvalue labels, so amplitudes pass through unchanged: the
//! continuous-measure Jacobian factors are unity for finitely many branches.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Unit, Vector3};
use thiserror::Error;

use crate::state::{Branch, BranchState, StateError, SystemKind};

/// Relative deviation of inter-mass distances across branches above which a
/// configuration family is rejected as not rigidly related.
pub const DEFAULT_RIGID_TOL: f64 = 1e-9;

/// Definiteness tolerance applied to the mass positions after a frame change.
pub const DEFAULT_DEFINITE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("state is already described relative to `{0}`")]
    SameFrame(String),
    #[error("zero-length vector where a direction is required")]
    ZeroVector,
    #[error("mass configurations are not rigidly related: {0}")]
    NotRigidlyRelated(String),
    #[error("relative-coordinate decomposition is singular (|det| = {det:.3e}, threshold {threshold:.3e})")]
    SingularDecomposition { det: f64, threshold: f64 },
    #[error("state has no mass systems to serve as the new frame")]
    NoMasses,
    #[error(
        "frame change needs a second reference particle with a definite nonzero axis position"
    )]
    MissingReferenceAxis,
    #[error("branch {branch}: {}", match .tag {
        Some(t) => format!("no coordinate map supplied for ancilla tag {t}"),
        None => "branch carries no ancilla tag".to_string(),
    })]
    TagMissing { branch: usize, tag: Option<u32> },
    #[error(
        "supplied maps do not send the masses to a common configuration (max spread {0:.3e} m)"
    )]
    NonDefiniteResult(f64),
    #[error("coordinate map is not invertible")]
    NonInvertibleMap,
    #[error("coordinate map is not distance-preserving (deviation {0:.3e})")]
    NotIsometric(f64),
    #[error("configurations are not congruent; best rigid alignment leaves residual {0:.3e} m")]
    AlignmentFailed(f64),
}

pub type TransformResult<T> = Result<T, TransformError>;

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

/// Axis of a rotation specification.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum RotationAxis {
    /// Planar rotation about the implicit out-of-plane axis (D = 2).
    /// `ccw` picks the orientation.
    Planar { ccw: bool },
    /// Explicit unit axis (D = 3).
    Spatial(Unit<Vector3<f64>>),
}

/// Rotation by `angle` about `axis`, with `angle` the unsigned angle between
/// the generating directions (in `[0, pi]`).
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct RotationSpec {
    pub angle: f64,
    pub axis: RotationAxis,
}

/// Deterministic unit vector orthogonal to `e`, used when the rotation axis
/// is otherwise undefined (antiparallel generators): the lexicographically
/// smallest unit vector orthogonal to `e`.
fn orthogonal_axis(e: &Unit<Vector3<f64>>) -> Unit<Vector3<f64>> {
    for basis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        let proj = basis - e.as_ref() * basis.dot(e);
        if proj.norm() > 1e-9 {
            let u = proj.normalize();
            // Of u and -u, the lexicographically smaller.
            let neg = -u;
            let smaller = if lex_less(&neg, &u) { neg } else { u };
            return Unit::new_unchecked(smaller);
        }
    }
    unreachable!("some standard basis vector is non-parallel to any unit vector");
}

fn lex_less(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    for i in 0..3 {
        if a[i] < b[i] {
            return true;
        }
        if a[i] > b[i] {
            return false;
        }
    }
    false
}

/// The rotation taking the direction of `a` onto the direction of `e1`.
///
/// In two dimensions the axis is the implicit out-of-plane one; in three it
/// is the normalized cross product `a x e1`. Antiparallel generators in 3D
/// resolve to a half-turn about a deterministic axis orthogonal to `e1`.
pub fn rotation_from_vectors(e1: &DVector<f64>, a: &DVector<f64>) -> TransformResult<RotationSpec> {
    let (ne, na) = (e1.norm(), a.norm());
    if ne == 0.0 || na == 0.0 {
        return Err(TransformError::ZeroVector);
    }
    let cosine = (a.dot(e1) / (na * ne)).clamp(-1.0, 1.0);
    let angle = cosine.acos();
    match e1.len() {
        2 => {
            // Orientation: rotating `a` counterclockwise by `angle` reaches
            // `e1` iff the planar cross product a x e1 is non-negative.
            let cross = a[0] * e1[1] - a[1] * e1[0];
            Ok(RotationSpec {
                angle,
                axis: RotationAxis::Planar { ccw: cross >= 0.0 },
            })
        }
        3 => {
            let av = Vector3::new(a[0], a[1], a[2]) / na;
            let ev = Vector3::new(e1[0], e1[1], e1[2]) / ne;
            let cross = av.cross(&ev);
            let axis = if cross.norm() > 1e-14 {
                Unit::new_normalize(cross)
            } else {
                orthogonal_axis(&Unit::new_unchecked(ev))
            };
            Ok(RotationSpec {
                angle,
                axis: RotationAxis::Spatial(axis),
            })
        }
        d => {
            if d == 1 {
                // One-dimensional states admit no proper rotation besides the
                // identity.
                if cosine < 0.0 {
                    return Err(TransformError::NotRigidlyRelated(
                        "1D axis vectors point in opposite directions".into(),
                    ));
                }
                Ok(RotationSpec {
                    angle: 0.0,
                    axis: RotationAxis::Planar { ccw: true },
                })
            } else {
                Err(TransformError::ZeroVector)
            }
        }
    }
}

/// Dense rotation matrix realizing a [`RotationSpec`].
///
/// For a spec produced by [`rotation_from_vectors`], `R a / |a| = e1 / |e1|`.
pub fn rotation_matrix(spec: &RotationSpec) -> DMatrix<f64> {
    match spec.axis {
        RotationAxis::Planar { ccw } => {
            let theta = if ccw { spec.angle } else { -spec.angle };
            let (s, c) = theta.sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        }
        RotationAxis::Spatial(u) => {
            let (s, c) = spec.angle.sin_cos();
            let t = 1.0 - c;
            let (x, y, z) = (u[0], u[1], u[2]);
            DMatrix::from_row_slice(
                3,
                3,
                &[
                    c + x * x * t,
                    x * y * t - z * s,
                    x * z * t + y * s,
                    y * x * t + z * s,
                    c + y * y * t,
                    y * z * t - x * s,
                    z * x * t - y * s,
                    z * y * t + x * s,
                    c + z * z * t,
                ],
            )
        }
    }
}

fn identity_matrix(dim: usize) -> DMatrix<f64> {
    DMatrix::identity(dim, dim)
}

/// Rotation matrix of the appropriate dimension taking `a`'s direction onto
/// `e1`'s direction; identity in 1D (where the sign compatibility of the two
/// axes is still checked).
fn alignment_matrix(e1: &DVector<f64>, a: &DVector<f64>) -> TransformResult<DMatrix<f64>> {
    let spec = rotation_from_vectors(e1, a)?;
    if e1.len() == 1 {
        return Ok(identity_matrix(1));
    }
    Ok(rotation_matrix(&spec))
}

// ---------------------------------------------------------------------------
// Invertible coordinate maps
// ---------------------------------------------------------------------------

/// Affine coordinate map `x -> L x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            linear: identity_matrix(dim),
            offset: DVector::zeros(dim),
        }
    }

    pub fn translation(offset: DVector<f64>) -> Self {
        Self {
            linear: identity_matrix(offset.len()),
            offset,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.offset
    }

    pub fn inverse(&self) -> TransformResult<AffineMap> {
        let inv = self
            .linear
            .clone()
            .try_inverse()
            .ok_or(TransformError::NonInvertibleMap)?;
        let offset = -(&inv * &self.offset);
        Ok(AffineMap {
            linear: inv,
            offset,
        })
    }

    /// Deviation of the linear part from orthogonality, `max |L^T L - I|`.
    pub fn isometry_defect(&self) -> f64 {
        let gram = self.linear.transpose() * &self.linear;
        let eye = identity_matrix(self.linear.nrows());
        (gram - eye).abs().max()
    }
}

/// The rigid map (proper rotation plus translation) aligning `src` onto
/// `dst`, via Kabsch alignment of the two point sets.
///
/// The configurations must be congruent and non-degenerate enough to pin the
/// rotation; the residual of the best alignment is checked against `tol`.
pub fn rigid_map_between(
    src: &[DVector<f64>],
    dst: &[DVector<f64>],
    tol: f64,
) -> TransformResult<AffineMap> {
    assert_eq!(src.len(), dst.len(), "point sets must pair up");
    if src.is_empty() {
        return Err(TransformError::ZeroVector);
    }
    let dim = src[0].len();
    let n = src.len() as f64;
    let mut cs = DVector::zeros(dim);
    let mut cd = DVector::zeros(dim);
    for (s, d) in src.iter().zip(dst) {
        cs += s;
        cd += d;
    }
    cs /= n;
    cd /= n;

    let mut h = DMatrix::zeros(dim, dim);
    for (s, d) in src.iter().zip(dst) {
        h += (s - &cs) * (d - &cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(TransformError::NonInvertibleMap)?;
    let vt = svd.v_t.ok_or(TransformError::NonInvertibleMap)?;
    let mut rot = vt.transpose() * u.transpose();
    if rot.determinant() < 0.0 {
        // Flip the least-significant singular direction to stay proper.
        let mut v = vt.transpose();
        let last = dim - 1;
        for r in 0..dim {
            v[(r, last)] = -v[(r, last)];
        }
        rot = v * u.transpose();
    }
    let offset = &cd - &rot * &cs;
    let map = AffineMap {
        linear: rot,
        offset,
    };
    let residual = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (map.apply(s) - d).norm())
        .fold(0.0, f64::max);
    if residual > tol {
        return Err(TransformError::AlignmentFailed(residual));
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Controlled shift (one mass / Supplementary-note base case)
// ---------------------------------------------------------------------------

/// Frame change by controlled shift: in every branch, every system position
/// is shifted by minus the new frame's position there, and the frame label
/// moves to `new_frame`. The old frame appears at minus the new frame's
/// former coordinate, which realizes the parity swap.
pub fn qrf_controlled_shift(state: &BranchState, new_frame: &str) -> TransformResult<BranchState> {
    let target = state.registry().index_of(new_frame)?;
    if target == state.frame_index() {
        return Err(TransformError::SameFrame(new_frame.to_string()));
    }
    let branches = state
        .branches()
        .iter()
        .map(|b| {
            let shift = b.position(target).clone();
            let mut nb = b.clone();
            nb.map_positions(|_, p| p - &shift);
            nb
        })
        .collect();
    Ok(state.rebuild(branches, target, None)?)
}

/// One-mass frame change of the main construction: the controlled shift into
/// the (single) mass system's frame. Pedagogically distinct from
/// [`qrf_controlled_shift`] but mechanically the same map.
pub fn qrf_shift_one_mass(state: &BranchState, new_frame: &str) -> TransformResult<BranchState> {
    qrf_controlled_shift(state, new_frame)
}

// ---------------------------------------------------------------------------
// Relative mass coordinates
// ---------------------------------------------------------------------------

/// Relative-coordinate data of one branch: the origin mass position, up to D
/// axis vectors, and decomposition coefficients for the remaining masses.
#[derive(Clone, Debug, PartialEq)]
pub struct RelCoords {
    pub origin: DVector<f64>,
    pub axes: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
}

fn axis_matrix(axes: &[DVector<f64>]) -> DMatrix<f64> {
    let dim = axes[0].len();
    let mut m = DMatrix::zeros(dim, axes.len());
    for (j, a) in axes.iter().enumerate() {
        for i in 0..dim {
            m[(i, j)] = a[i];
        }
    }
    m
}

fn decomposition_scale(axes: &[DVector<f64>]) -> f64 {
    axes.iter().map(|a| a.norm()).fold(0.0, f64::max)
}

/// Re-expresses the mass positions of every branch in relative coordinates:
/// the first mass keeps its position (origin), the next D masses become axis
/// vectors relative to it, and any further mass becomes the coefficient
/// vector of its decomposition along those axes. Other systems are untouched.
pub fn t_rel(state: &BranchState) -> TransformResult<(BranchState, Vec<RelCoords>)> {
    let masses = state.registry().mass_indices();
    if masses.is_empty() {
        return Err(TransformError::NoMasses);
    }
    let dim = state.dimension();
    let n_axes = (masses.len() - 1).min(dim);
    let mut rel = Vec::with_capacity(state.branch_count());
    let mut branches = Vec::with_capacity(state.branch_count());
    for branch in state.branches() {
        let origin = branch.position(masses[0]).clone();
        let axes: Vec<DVector<f64>> = (0..n_axes)
            .map(|k| branch.position(masses[k + 1]) - &origin)
            .collect();
        let mut residuals = Vec::new();
        let mut nb = branch.clone();
        if masses.len() > 1 + n_axes {
            let a = axis_matrix(&axes);
            let det = a.determinant();
            let scale = decomposition_scale(&axes);
            let threshold = 1e-12 * scale.powi(dim as i32);
            if det.abs() <= threshold {
                return Err(TransformError::SingularDecomposition {
                    det: det.abs(),
                    threshold,
                });
            }
            let lu = a.lu();
            for &mi in &masses[1 + n_axes..] {
                let rhs = branch.position(mi) - &origin;
                let coeff = lu
                    .solve(&rhs)
                    .ok_or(TransformError::SingularDecomposition {
                        det: det.abs(),
                        threshold,
                    })?;
                nb.set_position(mi, coeff.clone());
                residuals.push(coeff);
            }
        }
        for (k, ax) in axes.iter().enumerate() {
            nb.set_position(masses[k + 1], ax.clone());
        }
        rel.push(RelCoords {
            origin,
            axes,
            residuals,
        });
        branches.push(nb);
    }
    let out = rebuild_loose(state, branches, state.frame_index(), state.stored_axis_len);
    Ok((out, rel))
}

/// Inverse of [`t_rel`]: rebuilds absolute mass positions from the origin,
/// axis vectors, and residual coefficients currently stored in the state.
pub fn t_rel_inverse(state: &BranchState) -> TransformResult<BranchState> {
    let masses = state.registry().mass_indices();
    if masses.is_empty() {
        return Err(TransformError::NoMasses);
    }
    let dim = state.dimension();
    let n_axes = (masses.len() - 1).min(dim);
    let mut branches = Vec::with_capacity(state.branch_count());
    for branch in state.branches() {
        let origin = branch.position(masses[0]).clone();
        let axes: Vec<DVector<f64>> = (0..n_axes)
            .map(|k| branch.position(masses[k + 1]).clone())
            .collect();
        let mut nb = branch.clone();
        for (k, ax) in axes.iter().enumerate() {
            nb.set_position(masses[k + 1], &origin + ax);
        }
        if masses.len() > 1 + n_axes {
            let a = axis_matrix(&axes);
            for &mi in &masses[1 + n_axes..] {
                let coeff = branch.position(mi);
                nb.set_position(mi, &origin + &a * coeff);
            }
        }
        branches.push(nb);
    }
    Ok(rebuild_loose(
        state,
        branches,
        state.frame_index(),
        state.stored_axis_len,
    ))
}

/// Rebuild that skips the frame-at-origin invariant: interior stages of the
/// composite operators hold intermediate coordinates where the frame system
/// is displaced. End results always go back through the checked rebuild.
fn rebuild_loose(
    state: &BranchState,
    branches: Vec<Branch>,
    frame: usize,
    stored_axis_len: Option<f64>,
) -> BranchState {
    state.rebuild_unchecked(branches, frame, stored_axis_len)
}

// ---------------------------------------------------------------------------
// The N-mass frame change
// ---------------------------------------------------------------------------

fn reflect_across(v: &DVector<f64>, axis_dir: &DVector<f64>) -> DVector<f64> {
    // Keep the component along the axis, negate the rest.
    let proj = axis_dir * v.dot(axis_dir);
    &proj * 2.0 - v
}

fn rigidity_defect(state: &BranchState) -> f64 {
    let masses = state.registry().mass_indices();
    let mut worst: f64 = 0.0;
    let first = &state.branches()[0];
    for bi in 1..state.branch_count() {
        let b = &state.branches()[bi];
        for (k, &i) in masses.iter().enumerate() {
            for &j in &masses[k + 1..] {
                let d0 = (first.position(i) - first.position(j)).norm();
                let d1 = (b.position(i) - b.position(j)).norm();
                let scale = d0.max(d1).max(f64::MIN_POSITIVE);
                worst = worst.max((d0 - d1).abs() / scale);
            }
        }
    }
    worst
}

/// Frame change into the mass frame for an N-mass configuration family
/// related by rigid motions, together with the per-branch coordinate map
/// applied to the spectator systems (useful to carry trajectories back).
///
/// Stages: change to relative mass coordinates; branchwise controlled
/// rotation (aligning the branch's first axis with the reference axis) and
/// shift, with the second reference particle rescaled to the axis length;
/// generalized parity swap (reflect the origin mass through the origin, the
/// axis mass across the reference axis, swap the mass and reference labels);
/// undo the relative coordinates.
pub fn s_r_to_m_with_maps(
    state: &BranchState,
    rigid_tol: f64,
    definite_tol: f64,
) -> TransformResult<(BranchState, Vec<AffineMap>)> {
    let registry = state.registry();
    if state.frame_id().kind != SystemKind::Reference {
        return Err(TransformError::NotRigidlyRelated(format!(
            "frame `{}` is not a reference system",
            state.frame_id()
        )));
    }
    let masses = registry.mass_indices();
    if masses.is_empty() {
        return Err(TransformError::NoMasses);
    }

    // Single mass: the construction reduces to the controlled shift.
    if masses.len() == 1 {
        let label = registry.id(masses[0]).label.clone();
        let out = qrf_shift_one_mass(state, &label)?;
        let maps = state
            .branches()
            .iter()
            .map(|b| AffineMap::translation(-b.position(masses[0])))
            .collect();
        return Ok((out, maps));
    }

    let defect = rigidity_defect(state);
    if defect > rigid_tol {
        return Err(TransformError::NotRigidlyRelated(format!(
            "inter-mass distance deviation {defect:.3e} exceeds {rigid_tol:.3e}"
        )));
    }

    // Reference axis e1 from the second reference particle; must be definite.
    let refs = registry.reference_indices();
    let r1 = state.frame_index();
    let r2 = refs
        .into_iter()
        .find(|&i| i != r1)
        .ok_or(TransformError::MissingReferenceAxis)?;
    let e1 = state.branches()[0].position(r2).clone();
    if e1.norm() == 0.0 {
        return Err(TransformError::MissingReferenceAxis);
    }
    for b in state.branches() {
        if (b.position(r2) - &e1).norm() > definite_tol.max(1e-12) {
            return Err(TransformError::MissingReferenceAxis);
        }
    }

    let (rel_state, rel) = t_rel(state)?;
    let m1 = masses[0];
    let m2 = masses[1];
    let e1_dir = &e1 / e1.norm();

    let mut branches = Vec::with_capacity(state.branch_count());
    let mut maps = Vec::with_capacity(state.branch_count());
    for (branch, coords) in rel_state.branches().iter().zip(&rel) {
        let a = coords.axes[0].clone();
        if a.norm() == 0.0 {
            return Err(TransformError::ZeroVector);
        }
        let w = alignment_matrix(&e1, &a)?;
        let x1 = coords.origin.clone();
        let wx1 = &w * &x1;
        let wa = &w * &a;

        let mut nb = branch.clone();
        // Controlled shift and rotation.
        nb.set_position(m1, wx1.clone());
        for (k, _) in coords.axes.iter().enumerate().skip(1) {
            let mi = masses[k + 1];
            nb.set_position(mi, &w * branch.position(mi));
        }
        for si in 0..registry.len() {
            let kind = registry.id(si).kind;
            if kind == SystemKind::Mass || kind == SystemKind::Reference {
                continue;
            }
            nb.set_position(si, &w * branch.position(si) - &wx1);
        }
        nb.set_position(r2, branch.position(r2) + &wa - &e1);

        // Generalized parity swap.
        let m1_val = -nb.position(m1).clone();
        let m2_val = reflect_across(nb.position(m2), &e1_dir);
        let r1_val = nb.position(r1).clone();
        let r2_val = nb.position(r2).clone();
        nb.set_position(r1, m1_val);
        nb.set_position(r2, m2_val);
        nb.set_position(m1, r1_val);
        nb.set_position(m2, r2_val);

        branches.push(nb);
        // Spectator map: x -> W (x - x1).
        maps.push(AffineMap {
            linear: w.clone(),
            offset: -(&w * &x1),
        });
    }

    let swapped = rebuild_loose(&rel_state, branches, rel_state.frame_index(), None);
    let restored = t_rel_inverse(&swapped)?;
    let out = restored.rebuild(restored.branches().to_vec(), m1, Some(e1.norm()))?;

    let mass_labels: Vec<&str> = masses
        .iter()
        .map(|&i| registry.id(i).label.as_str())
        .collect();
    if !out.is_definite(&mass_labels, definite_tol)? {
        return Err(TransformError::NotRigidlyRelated(
            "mass configuration is not definite after the frame change; the branch family \
             is outside the operator's single-rotation domain (e.g. related by a reflection)"
                .into(),
        ));
    }
    Ok((out, maps))
}

/// Frame change into the mass frame with default tolerances.
pub fn s_r_to_m(state: &BranchState) -> TransformResult<BranchState> {
    Ok(s_r_to_m_with_maps(state, DEFAULT_RIGID_TOL, DEFAULT_DEFINITE_TOL)?.0)
}

/// Exact inverse of [`s_r_to_m`]: restores the description relative to the
/// reference system. The stored axis length is used to rebuild the reference
/// axis exactly; unit length is assumed for states of compatible shape that
/// were not produced by the forward map.
pub fn s_r_to_m_inverse(state: &BranchState) -> TransformResult<BranchState> {
    Ok(s_r_to_m_inverse_with_maps(state)?.0)
}

pub fn s_r_to_m_inverse_with_maps(
    state: &BranchState,
) -> TransformResult<(BranchState, Vec<AffineMap>)> {
    let registry = state.registry();
    let masses = registry.mass_indices();
    if masses.is_empty() {
        return Err(TransformError::NoMasses);
    }
    if state.frame_index() != masses[0] {
        return Err(TransformError::NotRigidlyRelated(format!(
            "inverse expects the frame at the first mass, found `{}`",
            state.frame_id()
        )));
    }
    if masses.len() == 1 {
        let refs = registry.reference_indices();
        let r1 = *refs.first().ok_or(TransformError::MissingReferenceAxis)?;
        let label = registry.id(r1).label.clone();
        let maps = state
            .branches()
            .iter()
            .map(|b| AffineMap::translation(-b.position(r1)))
            .collect();
        return Ok((qrf_controlled_shift(state, &label)?, maps));
    }

    let m1 = masses[0];
    let m2 = masses[1];
    let refs = registry.reference_indices();
    let r1 = *refs.first().ok_or(TransformError::MissingReferenceAxis)?;
    let r2 = refs
        .into_iter()
        .find(|&i| i != r1)
        .ok_or(TransformError::MissingReferenceAxis)?;

    // Reference axis: direction from the definite axis-mass position, length
    // from the forward transform.
    let f1 = state.branches()[0].position(m2).clone();
    if f1.norm() == 0.0 {
        return Err(TransformError::MissingReferenceAxis);
    }
    let e1_dir = &f1 / f1.norm();
    let e1 = &e1_dir * state.stored_axis_len.unwrap_or(1.0);

    let (rel_state, _) = t_rel(state)?;

    let mut branches = Vec::with_capacity(state.branch_count());
    let mut maps = Vec::with_capacity(state.branch_count());
    for branch in rel_state.branches() {
        let mut nb = branch.clone();

        // Undo the parity swap: swap labels back, then undo the reflections.
        let m1_val = nb.position(m1).clone();
        let m2_val = nb.position(m2).clone();
        let r1_val = -nb.position(r1).clone();
        let r2_val = reflect_across(nb.position(r2), &e1_dir);
        nb.set_position(m1, r1_val);
        nb.set_position(m2, r2_val);
        nb.set_position(r1, m1_val);
        nb.set_position(r2, m2_val);

        // Undo the controlled shift and rotation, conditioning on the
        // restored axis vector.
        let a = nb.position(m2).clone();
        if a.norm() == 0.0 {
            return Err(TransformError::ZeroVector);
        }
        let w = alignment_matrix(&e1, &a)?;
        let wt = w.transpose();
        let x1 = &wt * nb.position(m1);
        nb.set_position(m1, x1.clone());
        let n_axes = (masses.len() - 1).min(state.dimension());
        for k in 2..=n_axes {
            let mi = masses[k];
            nb.set_position(mi, &wt * nb.position(mi));
        }
        for si in 0..registry.len() {
            let kind = registry.id(si).kind;
            if kind == SystemKind::Mass || kind == SystemKind::Reference {
                continue;
            }
            nb.set_position(si, &wt * nb.position(si) + &x1);
        }
        let wa = &w * &a;
        nb.set_position(r2, nb.position(r2) - &wa + &e1);

        branches.push(nb);
        // Spectator map back: y -> W^T y + x1.
        let offset = x1.clone();
        maps.push(AffineMap { linear: wt, offset });
    }

    let unswapped = rebuild_loose(&rel_state, branches, rel_state.frame_index(), None);
    let restored = t_rel_inverse(&unswapped)?;
    let out = restored.rebuild(restored.branches().to_vec(), r1, None)?;
    Ok((out, maps))
}

// ---------------------------------------------------------------------------
// Frame dispatch used by the pipelines
// ---------------------------------------------------------------------------

/// Moves a reference-frame state into the frame of its mass configuration:
/// the controlled shift for a single mass, the full N-mass operator
/// otherwise. Also returns the per-branch spectator coordinate maps.
pub fn to_mass_frame(state: &BranchState) -> TransformResult<(BranchState, Vec<AffineMap>)> {
    let masses = state.registry().mass_indices();
    if masses.is_empty() {
        return Err(TransformError::NoMasses);
    }
    if state.frame_index() == masses[0] {
        // Already in the mass frame.
        let maps = vec![AffineMap::identity(state.dimension()); state.branch_count()];
        return Ok((state.clone(), maps));
    }
    s_r_to_m_with_maps(state, DEFAULT_RIGID_TOL, DEFAULT_DEFINITE_TOL)
}

/// Inverse of [`to_mass_frame`].
pub fn from_mass_frame(state: &BranchState) -> TransformResult<(BranchState, Vec<AffineMap>)> {
    s_r_to_m_inverse_with_maps(state)
}

/// Derives the per-tag rigid coordinate maps that align every branch's mass
/// configuration onto the configuration of `target_branch`, via Kabsch
/// alignment. The first branch carrying each tag serves as that tag's
/// representative; congruence is required.
pub fn derive_rigid_branch_maps(
    state: &BranchState,
    target_branch: usize,
    tol: f64,
) -> TransformResult<BTreeMap<u32, AffineMap>> {
    let masses = state.registry().mass_indices();
    if masses.is_empty() {
        return Err(TransformError::NoMasses);
    }
    let target: Vec<DVector<f64>> = masses
        .iter()
        .map(|&mi| state.branches()[target_branch].position(mi).clone())
        .collect();
    let mut maps = BTreeMap::new();
    for (bi, branch) in state.branches().iter().enumerate() {
        let tag = branch.ancilla_tag.ok_or(TransformError::TagMissing {
            branch: bi,
            tag: None,
        })?;
        if maps.contains_key(&tag) {
            continue;
        }
        let src: Vec<DVector<f64>> = masses
            .iter()
            .map(|&mi| branch.position(mi).clone())
            .collect();
        maps.insert(tag, rigid_map_between(&src, &target, tol)?);
    }
    Ok(maps)
}

// ---------------------------------------------------------------------------
// Ancilla-controlled transformation
// ---------------------------------------------------------------------------

fn ancilla_exempt(kind: SystemKind) -> bool {
    matches!(kind, SystemKind::Ancilla)
}

fn apply_tagged_maps(
    state: &BranchState,
    maps: &BTreeMap<u32, AffineMap>,
    invert: bool,
) -> TransformResult<Vec<Branch>> {
    let registry = state.registry();
    let frame = state.frame_index();
    let mut out = Vec::with_capacity(state.branch_count());
    for (bi, branch) in state.branches().iter().enumerate() {
        let tag = branch.ancilla_tag.ok_or(TransformError::TagMissing {
            branch: bi,
            tag: None,
        })?;
        let supplied = maps.get(&tag).ok_or(TransformError::TagMissing {
            branch: bi,
            tag: Some(tag),
        })?;
        let defect = supplied.isometry_defect();
        if defect > 1e-9 {
            return Err(TransformError::NotIsometric(defect));
        }
        let map = if invert {
            supplied.inverse()?
        } else {
            supplied.clone()
        };
        let mut nb = branch.clone();
        nb.map_positions(|si, p| {
            if si == frame || ancilla_exempt(registry.id(si).kind) {
                p.clone()
            } else {
                map.apply(p)
            }
        });
        out.push(nb);
    }
    Ok(out)
}

/// Branchwise application of the tag-selected coordinate maps `f_k` to every
/// non-frame system. The maps must be invertible isometries and must send
/// the masses of every tag to a common target configuration; the operator
/// refuses rather than produce an indefinite mass state.
pub fn ancilla_transform(
    state: &BranchState,
    frame_maps: &BTreeMap<u32, AffineMap>,
) -> TransformResult<BranchState> {
    let branches = apply_tagged_maps(state, frame_maps, false)?;
    let out = rebuild_loose(state, branches, state.frame_index(), None);

    let masses = state.registry().mass_indices();
    let mut spread: f64 = 0.0;
    let first = &out.branches()[0];
    for b in out.branches() {
        for &mi in &masses {
            spread = spread.max((b.position(mi) - first.position(mi)).norm());
        }
    }
    if spread > DEFAULT_DEFINITE_TOL {
        return Err(TransformError::NonDefiniteResult(spread));
    }
    Ok(out)
}

/// Inverse of [`ancilla_transform`]: applies the stored `f_k^{-1}` per tag.
pub fn ancilla_transform_inverse(
    state: &BranchState,
    frame_maps: &BTreeMap<u32, AffineMap>,
) -> TransformResult<BranchState> {
    let branches = apply_tagged_maps(state, frame_maps, true)?;
    Ok(rebuild_loose(state, branches, state.frame_index(), None))
}
