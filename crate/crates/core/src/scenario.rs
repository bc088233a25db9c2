//! Scenario files: a TOML key-value tree in which every physical quantity
//! carries its unit, e.g. `duration = "1.0 s"` or `positions = { M = "1e-5 m" }`.
//! Unknown keys are rejected; parsing yields a fully validated [`Scenario`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

use crate::clocks::ClockSpec;
use crate::compare::GravityModel;
use crate::semiclassical::PhaseMode;
use crate::state::{
    Branch, BranchState, ClockQubit, StateError, SystemId, SystemKind, SystemRegistry,
};
use crate::units::UnitSystem;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("unit error in `{field}`: {msg}")]
    Unit { field: String, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("scenario supplies no reference position uncertainty ([validity] delta_x_r)")]
    MissingUncertainty,
    #[error(transparent)]
    State(#[from] StateError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type ScenarioResult<T> = Result<T, ScenarioError>;

/// Evolution backend requested by the scenario.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DynamicsMode {
    Semiclassical,
    Grid,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Tolerances {
    /// Branch-merge / definiteness position tolerance (m).
    pub pos_tol: f64,
    /// Relative inter-mass distance deviation admitted across branches.
    pub rigid_tol: f64,
    /// Post-transform mass definiteness tolerance (m).
    pub definite_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pos_tol: crate::state::DEFAULT_POS_TOL,
            rigid_tol: crate::transforms::DEFAULT_RIGID_TOL,
            definite_tol: crate::transforms::DEFAULT_DEFINITE_TOL,
        }
    }
}

/// Far-frame validity thresholds.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ValidityParams {
    /// Position uncertainty of the reference system (m).
    pub delta_x_r: f64,
    /// "Much less than" factor for the tracking condition.
    pub track_ratio: f64,
    /// Admitted shortfall of the clock overlap from one.
    pub overlap_eps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub ranges: Vec<(f64, f64)>,
    pub points: Vec<usize>,
    pub sigma: f64,
    pub k0: Vec<f64>,
    pub softening: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub label: String,
    pub kind: SystemKind,
    pub mass: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchConfig {
    pub amplitude: Complex64,
    pub positions: BTreeMap<String, DVector<f64>>,
    pub tag: Option<u32>,
}

/// Parsed and validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dimension: usize,
    pub duration: f64,
    pub dt: f64,
    pub dynamics: DynamicsMode,
    pub seed: u64,
    pub models: Vec<GravityModel>,
    pub rest_phase: PhaseMode,
    pub units: UnitSystem,
    pub tolerances: Tolerances,
    pub validity: Option<ValidityParams>,
    pub clock: Option<ClockSpec>,
    pub grid: Option<GridConfig>,
    pub systems: Vec<SystemConfig>,
    pub branches: Vec<BranchConfig>,
}

// -- raw deserialization ----------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    dimension: usize,
    duration: String,
    dt: String,
    dynamics: String,
    seed: Option<u64>,
    models: Option<Vec<String>>,
    rest_phase: Option<String>,
    units: Option<RawUnits>,
    tolerances: Option<RawTolerances>,
    validity: Option<RawValidity>,
    clock: Option<RawClock>,
    grid: Option<RawGrid>,
    output: Option<RawOutput>,
    #[serde(default, rename = "system")]
    systems: Vec<RawSystem>,
    #[serde(default, rename = "branch")]
    branches: Vec<RawBranch>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUnits {
    #[serde(rename = "G")]
    g: String,
    c: String,
    hbar: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    pos_tol: Option<String>,
    rigid_tol: Option<f64>,
    definite_tol: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidity {
    delta_x_r: String,
    track_ratio: Option<f64>,
    overlap_eps: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClock {
    e0: String,
    e1: String,
    init: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    ranges: Vec<String>,
    points: Vec<usize>,
    sigma: String,
    k0: Option<Vec<String>>,
    softening: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    stem: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    label: String,
    kind: String,
    mass: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBranch {
    amplitude: Vec<f64>,
    positions: BTreeMap<String, String>,
    tag: Option<u32>,
}

// -- quantity parsing ---------------------------------------------------------

fn parse_numbers_with_unit(
    field: &str,
    text: &str,
    expected_unit: &str,
    count: usize,
) -> ScenarioResult<Vec<f64>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() < count + 1 {
        return Err(ScenarioError::Unit {
            field: field.to_string(),
            msg: format!("expected {count} value(s) followed by `{expected_unit}`, got `{text}`"),
        });
    }
    let unit = tokens[count..].join(" ");
    if unit != expected_unit {
        return Err(ScenarioError::Unit {
            field: field.to_string(),
            msg: format!("expected unit `{expected_unit}`, got `{unit}`"),
        });
    }
    tokens[..count]
        .iter()
        .map(|t| {
            t.parse::<f64>().map_err(|e| ScenarioError::Unit {
                field: field.to_string(),
                msg: format!("bad number `{t}`: {e}"),
            })
        })
        .collect()
}

fn parse_quantity(field: &str, text: &str, expected_unit: &str) -> ScenarioResult<f64> {
    Ok(parse_numbers_with_unit(field, text, expected_unit, 1)?[0])
}

fn parse_vector(
    field: &str,
    text: &str,
    expected_unit: &str,
    dim: usize,
) -> ScenarioResult<DVector<f64>> {
    Ok(DVector::from_vec(parse_numbers_with_unit(
        field,
        text,
        expected_unit,
        dim,
    )?))
}

fn parse_range(field: &str, text: &str) -> ScenarioResult<(f64, f64)> {
    let v = parse_numbers_with_unit(field, text, "m", 2)?;
    if v[1] <= v[0] {
        return Err(ScenarioError::Validation(format!(
            "{field}: range upper bound must exceed the lower bound"
        )));
    }
    Ok((v[0], v[1]))
}

fn offset_to_line_col(text: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, ch) in text.char_indices() {
        if i >= offset {
            break;
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

// -- parsing -----------------------------------------------------------------

/// Parses a scenario file. Returns the scenario plus any non-fatal warnings
/// (for now: amplitude renormalization).
pub fn parse_scenario(text: &str) -> ScenarioResult<(Scenario, Vec<String>)> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, col) = e
            .span()
            .map(|s| offset_to_line_col(text, s.start))
            .unwrap_or((0, 0));
        ScenarioError::Parse {
            line,
            col,
            msg: e.message().to_string(),
        }
    })?;
    let mut warnings = Vec::new();

    let dimension = raw.dimension;
    if !(1..=3).contains(&dimension) {
        return Err(ScenarioError::Validation(format!(
            "dimension must be 1, 2, or 3, got {dimension}"
        )));
    }
    let duration = parse_quantity("duration", &raw.duration, "s")?;
    if !(duration > 0.0) {
        return Err(ScenarioError::Validation(
            "duration must be strictly positive".into(),
        ));
    }
    let dt = parse_quantity("dt", &raw.dt, "s")?;
    if !(dt > 0.0) {
        return Err(ScenarioError::Validation(
            "dt must be strictly positive".into(),
        ));
    }
    let dynamics = match raw.dynamics.as_str() {
        "semiclassical" => DynamicsMode::Semiclassical,
        "grid" => DynamicsMode::Grid,
        other => {
            return Err(ScenarioError::Validation(format!(
                "dynamics must be `semiclassical` or `grid`, got `{other}`"
            )))
        }
    };
    let models = match &raw.models {
        None => vec![
            GravityModel::Covariant,
            GravityModel::Semiclassical,
            GravityModel::Collapse,
        ],
        Some(list) => list
            .iter()
            .map(|m| match m.as_str() {
                "covariant" => Ok(GravityModel::Covariant),
                "semiclassical" => Ok(GravityModel::Semiclassical),
                "collapse" => Ok(GravityModel::Collapse),
                other => Err(ScenarioError::Validation(format!(
                    "unknown model `{other}`"
                ))),
            })
            .collect::<ScenarioResult<_>>()?,
    };
    let rest_phase = match raw.rest_phase.as_deref() {
        None | Some("subtract") => PhaseMode::OmitRest,
        Some("retain") => PhaseMode::Full,
        Some(other) => {
            return Err(ScenarioError::Validation(format!(
                "rest_phase must be `retain` or `subtract`, got `{other}`"
            )))
        }
    };

    let units = match &raw.units {
        None => UnitSystem::default(),
        Some(u) => {
            let g = parse_quantity("units.G", &u.g, "m^3 kg^-1 s^-2")?;
            let c = parse_quantity("units.c", &u.c, "m/s")?;
            let hbar = parse_quantity("units.hbar", &u.hbar, "J s")?;
            UnitSystem::new(g, c, hbar).map_err(|e| ScenarioError::Validation(e.to_string()))?
        }
    };

    let mut tolerances = Tolerances::default();
    if let Some(t) = &raw.tolerances {
        if let Some(p) = &t.pos_tol {
            tolerances.pos_tol = parse_quantity("tolerances.pos_tol", p, "m")?;
        }
        if let Some(r) = t.rigid_tol {
            tolerances.rigid_tol = r;
        }
        if let Some(d) = &t.definite_tol {
            tolerances.definite_tol = parse_quantity("tolerances.definite_tol", d, "m")?;
        }
    }

    let validity = match &raw.validity {
        None => None,
        Some(v) => Some(ValidityParams {
            delta_x_r: parse_quantity("validity.delta_x_r", &v.delta_x_r, "m")?,
            track_ratio: v.track_ratio.unwrap_or(100.0),
            overlap_eps: v.overlap_eps.unwrap_or(1e-6),
        }),
    };

    let clock = match &raw.clock {
        None => None,
        Some(c) => {
            let e0 = parse_quantity("clock.e0", &c.e0, "J")?;
            let e1 = parse_quantity("clock.e1", &c.e1, "J")?;
            if e0 == e1 {
                return Err(ScenarioError::Validation(
                    "clock levels e0 and e1 must differ".into(),
                ));
            }
            let init = match c.init.as_deref() {
                None | Some("plus") => ClockQubit::plus(),
                Some(other) => {
                    return Err(ScenarioError::Validation(format!(
                        "clock.init must be `plus`, got `{other}`"
                    )))
                }
            };
            Some(ClockSpec::new(e0, e1, init))
        }
    };

    let grid = match &raw.grid {
        None => None,
        Some(g) => {
            if g.ranges.len() != g.points.len() {
                return Err(ScenarioError::Validation(
                    "grid.ranges and grid.points must have the same length".into(),
                ));
            }
            if g.ranges.is_empty() || g.ranges.len() > 2 {
                return Err(ScenarioError::Validation(
                    "grid evolution supports one or two axes".into(),
                ));
            }
            let ranges = g
                .ranges
                .iter()
                .map(|r| parse_range("grid.ranges", r))
                .collect::<ScenarioResult<Vec<_>>>()?;
            let k0 = match &g.k0 {
                None => vec![0.0; ranges.len()],
                Some(ks) => ks
                    .iter()
                    .map(|k| parse_quantity("grid.k0", k, "1/m"))
                    .collect::<ScenarioResult<Vec<_>>>()?,
            };
            if k0.len() != ranges.len() {
                return Err(ScenarioError::Validation(
                    "grid.k0 must supply one wavenumber per axis".into(),
                ));
            }
            Some(GridConfig {
                ranges,
                points: g.points.clone(),
                sigma: parse_quantity("grid.sigma", &g.sigma, "m")?,
                k0,
                softening: match &g.softening {
                    None => None,
                    Some(s) => Some(parse_quantity("grid.softening", s, "m")?),
                },
            })
        }
    };
    if dynamics == DynamicsMode::Grid && grid.is_none() {
        return Err(ScenarioError::Validation(
            "dynamics = \"grid\" requires a [grid] section".into(),
        ));
    }

    if raw.systems.is_empty() {
        return Err(ScenarioError::Validation("no [[system]] entries".into()));
    }
    let mut systems = Vec::with_capacity(raw.systems.len());
    for s in &raw.systems {
        let kind = match s.kind.as_str() {
            "reference" => SystemKind::Reference,
            "mass" => SystemKind::Mass,
            "probe" => SystemKind::Probe,
            "clock" => SystemKind::Clock,
            "ancilla" => SystemKind::Ancilla,
            other => {
                return Err(ScenarioError::Validation(format!(
                    "unknown system kind `{other}` for `{}`",
                    s.label
                )))
            }
        };
        let mass = match &s.mass {
            None => None,
            Some(m) => Some(parse_quantity(
                &format!("system.{}.mass", s.label),
                m,
                "kg",
            )?),
        };
        match kind {
            SystemKind::Probe if mass.is_none() => {
                return Err(ScenarioError::Validation("probe mass required".into()))
            }
            SystemKind::Mass if mass.is_none() => {
                return Err(ScenarioError::Validation(format!(
                    "mass value required for `{}`",
                    s.label
                )))
            }
            _ => {}
        }
        systems.push(SystemConfig {
            label: s.label.clone(),
            kind,
            mass,
        });
    }
    if !systems.iter().any(|s| s.kind == SystemKind::Reference) {
        return Err(ScenarioError::Validation(
            "at least one reference system is required".into(),
        ));
    }

    if raw.branches.is_empty() {
        return Err(ScenarioError::Validation("no [[branch]] entries".into()));
    }
    let mut branches = Vec::with_capacity(raw.branches.len());
    let mut norm_sq = 0.0;
    for (bi, b) in raw.branches.iter().enumerate() {
        if b.amplitude.len() != 2 {
            return Err(ScenarioError::Validation(format!(
                "branch {bi}: amplitude must be [re, im]"
            )));
        }
        let amplitude = Complex64::new(b.amplitude[0], b.amplitude[1]);
        norm_sq += amplitude.norm_sqr();
        let mut positions = BTreeMap::new();
        for sys in &systems {
            let text = b.positions.get(&sys.label).ok_or_else(|| {
                ScenarioError::Validation(format!(
                    "branch {bi}: missing position for system `{}`",
                    sys.label
                ))
            })?;
            positions.insert(
                sys.label.clone(),
                parse_vector(
                    &format!("branch.{bi}.positions.{}", sys.label),
                    text,
                    "m",
                    dimension,
                )?,
            );
        }
        for key in b.positions.keys() {
            if !systems.iter().any(|s| &s.label == key) {
                return Err(ScenarioError::Validation(format!(
                    "branch {bi}: position given for unregistered system `{key}`"
                )));
            }
        }
        branches.push(BranchConfig {
            amplitude,
            positions,
            tag: b.tag,
        });
    }
    if norm_sq <= 0.0 {
        return Err(ScenarioError::Validation(
            "branch amplitudes are all zero".into(),
        ));
    }
    if (norm_sq - 1.0).abs() > 1e-9 {
        warnings.push(format!(
            "amplitudes had squared norm {norm_sq}; renormalized to 1"
        ));
    }
    if (norm_sq - 1.0).abs() > 16.0 * f64::EPSILON {
        let scale = norm_sq.sqrt().recip();
        for b in &mut branches {
            b.amplitude *= scale;
        }
    }

    let name = raw
        .output
        .map(|o| o.stem)
        .unwrap_or_else(|| "scenario".to_string());

    let scenario = Scenario {
        name,
        dimension,
        duration,
        dt,
        dynamics,
        seed: raw.seed.unwrap_or(0),
        models,
        rest_phase,
        units,
        tolerances,
        validity,
        clock,
        grid,
        systems,
        branches,
    };
    Ok((scenario, warnings))
}

impl Scenario {
    /// First reference system: the frame of the initial description.
    pub fn frame_label(&self) -> &str {
        self.systems
            .iter()
            .find(|s| s.kind == SystemKind::Reference)
            .map(|s| s.label.as_str())
            .expect("validated scenarios register a reference system")
    }

    pub fn registry(&self) -> ScenarioResult<Arc<SystemRegistry>> {
        let entries = self
            .systems
            .iter()
            .map(|s| (SystemId::new(s.label.clone(), s.kind), s.mass))
            .collect();
        Ok(Arc::new(SystemRegistry::new(entries)?))
    }

    /// Builds the initial branch state (amplitudes already normalized).
    pub fn initial_state(&self) -> ScenarioResult<BranchState> {
        let registry = self.registry()?;
        let mut branches = Vec::with_capacity(self.branches.len());
        let has_clock = self.systems.iter().any(|s| s.kind == SystemKind::Clock);
        for cfg in &self.branches {
            let positions = self
                .systems
                .iter()
                .map(|s| cfg.positions[&s.label].clone())
                .collect();
            let mut branch = Branch::new(cfg.amplitude, positions);
            if has_clock {
                let init = self
                    .clock
                    .as_ref()
                    .map(|c| c.initial)
                    .unwrap_or_else(ClockQubit::plus);
                branch = branch.with_clock(init);
            }
            if let Some(tag) = cfg.tag {
                branch = branch.with_tag(tag);
            }
            branches.push(branch);
        }
        Ok(BranchState::new(registry, branches, self.frame_label())?)
    }

    /// Clock specification, defaulting to one oscillation per duration.
    pub fn clock_spec(&self) -> ClockSpec {
        self.clock
            .clone()
            .unwrap_or_else(|| ClockSpec::default_for_duration(self.duration, &self.units))
    }

    /// Serializes back to scenario text. Values round-trip exactly: floats
    /// print in shortest form that reparses to the same bits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dimension = {}", self.dimension);
        let _ = writeln!(s, "duration = \"{} s\"", self.duration);
        let _ = writeln!(s, "dt = \"{} s\"", self.dt);
        let _ = writeln!(
            s,
            "dynamics = \"{}\"",
            match self.dynamics {
                DynamicsMode::Semiclassical => "semiclassical",
                DynamicsMode::Grid => "grid",
            }
        );
        let _ = writeln!(s, "seed = {}", self.seed);
        let model_list: Vec<String> = self
            .models
            .iter()
            .map(|m| format!("\"{}\"", m.name()))
            .collect();
        let _ = writeln!(s, "models = [{}]", model_list.join(", "));
        let _ = writeln!(
            s,
            "rest_phase = \"{}\"",
            match self.rest_phase {
                PhaseMode::Full => "retain",
                PhaseMode::OmitRest => "subtract",
            }
        );
        let _ = writeln!(s, "\n[output]\nstem = \"{}\"", self.name);
        let _ = writeln!(
            s,
            "\n[units]\nG = \"{} m^3 kg^-1 s^-2\"\nc = \"{} m/s\"\nhbar = \"{} J s\"",
            self.units.g, self.units.c, self.units.hbar
        );
        let _ = writeln!(
            s,
            "\n[tolerances]\npos_tol = \"{} m\"\nrigid_tol = {}\ndefinite_tol = \"{} m\"",
            self.tolerances.pos_tol, self.tolerances.rigid_tol, self.tolerances.definite_tol
        );
        if let Some(v) = &self.validity {
            let _ = writeln!(
                s,
                "\n[validity]\ndelta_x_r = \"{} m\"\ntrack_ratio = {}\noverlap_eps = {}",
                v.delta_x_r, v.track_ratio, v.overlap_eps
            );
        }
        if let Some(c) = &self.clock {
            let _ = writeln!(
                s,
                "\n[clock]\ne0 = \"{} J\"\ne1 = \"{} J\"\ninit = \"plus\"",
                c.e0, c.e1
            );
        }
        if let Some(g) = &self.grid {
            let ranges: Vec<String> = g
                .ranges
                .iter()
                .map(|(lo, hi)| format!("\"{lo} {hi} m\""))
                .collect();
            let points: Vec<String> = g.points.iter().map(|p| p.to_string()).collect();
            let k0: Vec<String> = g.k0.iter().map(|k| format!("\"{k} 1/m\"")).collect();
            let _ = writeln!(
                s,
                "\n[grid]\nranges = [{}]\npoints = [{}]\nsigma = \"{} m\"\nk0 = [{}]",
                ranges.join(", "),
                points.join(", "),
                g.sigma,
                k0.join(", ")
            );
            if let Some(eps) = g.softening {
                let _ = writeln!(s, "softening = \"{eps} m\"");
            }
        }
        for sys in &self.systems {
            let _ = writeln!(s, "\n[[system]]");
            let _ = writeln!(s, "label = \"{}\"", sys.label);
            let kind = match sys.kind {
                SystemKind::Reference => "reference",
                SystemKind::Mass => "mass",
                SystemKind::Probe => "probe",
                SystemKind::Clock => "clock",
                SystemKind::Ancilla => "ancilla",
            };
            let _ = writeln!(s, "kind = \"{kind}\"");
            if let Some(m) = sys.mass {
                let _ = writeln!(s, "mass = \"{m} kg\"");
            }
        }
        for branch in &self.branches {
            let _ = writeln!(s, "\n[[branch]]");
            let _ = writeln!(
                s,
                "amplitude = [{}, {}]",
                branch.amplitude.re, branch.amplitude.im
            );
            if let Some(tag) = branch.tag {
                let _ = writeln!(s, "tag = {tag}");
            }
            let positions: Vec<String> = branch
                .positions
                .iter()
                .map(|(label, pos)| {
                    let comps: Vec<String> = pos.iter().map(|x| x.to_string()).collect();
                    format!("{} = \"{} m\"", label, comps.join(" "))
                })
                .collect();
            let _ = writeln!(s, "positions = {{ {} }}", positions.join(", "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_MASS: &str = r#"
dimension = 1
duration = "1.0 s"
dt = "0.001 s"
dynamics = "semiclassical"
seed = 42

[[system]]
label = "R"
kind = "reference"

[[system]]
label = "M"
kind = "mass"
mass = "1e-8 kg"

[[system]]
label = "S"
kind = "probe"
mass = "1e-17 kg"

[[branch]]
amplitude = [0.7071067811865476, 0.0]
positions = { R = "0 m", M = "1.0e-5 m", S = "2.0e-5 m" }

[[branch]]
amplitude = [0.7071067811865476, 0.0]
positions = { R = "0 m", M = "1.2e-5 m", S = "2.0e-5 m" }
"#;

    #[test]
    fn one_mass_fixture_parses() {
        let (scenario, warnings) = parse_scenario(ONE_MASS).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(scenario.systems.len(), 3);
        assert_eq!(scenario.branches.len(), 2);
        assert_eq!(scenario.dimension, 1);
        let state = scenario.initial_state().unwrap();
        assert_eq!(state.branch_count(), 2);
        assert_eq!(state.frame_id().label, "R");
        assert_eq!(state.position(1, "M").unwrap()[0], 1.2e-5);
    }

    #[test]
    fn unnormalized_amplitudes_warn_and_normalize() {
        let text = ONE_MASS.replace("0.7071067811865476", "1.0");
        let (scenario, warnings) = parse_scenario(&text).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("renormalized"));
        let a = scenario.branches[0].amplitude;
        assert!((a.re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        scenario.initial_state().unwrap();
    }

    #[test]
    fn missing_probe_mass_is_a_validation_error() {
        let text = ONE_MASS.replace("mass = \"1e-17 kg\"\n", "");
        let err = parse_scenario(&text).unwrap_err();
        match err {
            ScenarioError::Validation(msg) => assert!(msg.contains("probe mass required")),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = format!("{ONE_MASS}\nbogus_key = 1\n");
        let err = parse_scenario(&text).unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert!(line > 0),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn wrong_unit_is_a_unit_error() {
        let text = ONE_MASS.replace("\"1.0 s\"", "\"1.0 kg\"");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Unit { .. }));
    }

    #[test]
    fn round_trip_preserves_all_values() {
        let (scenario, _) = parse_scenario(ONE_MASS).unwrap();
        let text = scenario.to_text();
        let (reparsed, warnings) = parse_scenario(&text).unwrap();
        assert!(
            warnings.is_empty(),
            "round trip must not warn: {warnings:?}"
        );
        assert_eq!(scenario, reparsed);
    }

    #[test]
    fn grid_mode_requires_grid_section() {
        let text = ONE_MASS.replace("\"semiclassical\"", "\"grid\"");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)));
    }

    #[test]
    fn branch_position_for_unknown_system_rejected() {
        let text = ONE_MASS.replace(
            "positions = { R = \"0 m\", M = \"1.0e-5 m\", S = \"2.0e-5 m\" }\n\n[[branch]]",
            "positions = { R = \"0 m\", M = \"1.0e-5 m\", S = \"2.0e-5 m\", X = \"0 m\" }\n\n[[branch]]",
        );
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)));
    }

    #[test]
    fn dimension_mismatch_in_positions_rejected() {
        let text = ONE_MASS.replace("S = \"2.0e-5 m\"", "S = \"2.0e-5 1.0 m\"");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Unit { .. }));
    }
}
