//! Deterministic CSV emission. Floats print with `Display`, the shortest
//! decimal that round-trips to the same bits; row order is fixed
//! (time-major, branch-minor), so identical runs produce byte-identical
//! files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::clocks::ClockReport;
use crate::compare::{ModelPrediction, ViolationReport};
use crate::geodesic::Trajectory;
use crate::grid::{GridWavefunction, HamiltonianCovarianceReport};
use crate::state::BranchState;
use crate::validity::ValidityReport;

pub type IoResult<T> = std::io::Result<T>;

fn axis_headers(prefix: &str, suffix: &str, dim: usize) -> String {
    (1..=dim)
        .map(|k| format!("{prefix}{k}_{suffix}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn join_components(v: &nalgebra::DVector<f64>) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Trajectories of all branches (or outcomes) on a shared time grid:
/// `t_s,branch,x1_m[,..],v1_mps[,..],phase_rad,weight`, time-major then
/// branch-minor. An empty list yields a header-only file (1D headers).
pub fn emit_trajectories(path: &Path, weighted: &[(f64, &Trajectory)]) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = weighted
        .first()
        .map(|(_, t)| t.positions[0].len())
        .unwrap_or(1);
    writeln!(
        w,
        "t_s,branch,{},{},phase_rad,weight",
        axis_headers("x", "m", dim),
        axis_headers("v", "mps", dim)
    )?;
    let n_times = weighted.first().map(|(_, t)| t.len()).unwrap_or(0);
    for k in 0..n_times {
        for (weight, traj) in weighted {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                traj.times[k],
                traj.branch_index,
                join_components(&traj.positions[k]),
                join_components(&traj.velocities[k]),
                traj.phases[k],
                weight
            )?;
        }
    }
    w.flush()
}

/// Branch-state dump: `branch,system,amp_re,amp_im,tag,x1_m[,..]` plus clock
/// columns when any branch carries an internal clock state.
pub fn emit_state(path: &Path, state: &BranchState) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = state.dimension();
    let any_clock = state.branches().iter().any(|b| b.clock_internal.is_some());
    let clock_cols = if any_clock {
        ",c0_re,c0_im,c1_re,c1_im"
    } else {
        ""
    };
    writeln!(
        w,
        "branch,system,amp_re,amp_im,tag,{}{}",
        axis_headers("x", "m", dim),
        clock_cols
    )?;
    for (bi, branch) in state.branches().iter().enumerate() {
        for (si, id) in state.registry().ids().enumerate() {
            let tag = branch
                .ancilla_tag
                .map(|t| t.to_string())
                .unwrap_or_default();
            let mut line = format!(
                "{},{},{},{},{},{}",
                bi,
                id.label,
                branch.amplitude.re,
                branch.amplitude.im,
                tag,
                join_components(branch.position(si))
            );
            if any_clock {
                match &branch.clock_internal {
                    Some(c) => {
                        line.push_str(&format!(
                            ",{},{},{},{}",
                            c.0[0].re, c.0[0].im, c.0[1].re, c.0[1].im
                        ));
                    }
                    None => line.push_str(",,,,"),
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()
}

/// Key-value clock report, including the branch proper-time deficits that
/// carry the precision at laboratory scales.
pub fn emit_clock_report(path: &Path, report: &ClockReport) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "quantity,value")?;
    writeln!(w, "delta_tau_s,{}", report.delta_tau)?;
    writeln!(w, "visibility,{}", report.visibility)?;
    for (bi, tau) in report.taus.iter().enumerate() {
        writeln!(w, "tau_{bi}_s,{tau}")?;
    }
    for (bi, d) in report.tau_deficits.iter().enumerate() {
        writeln!(w, "tau_deficit_{bi}_s,{d}")?;
    }
    for (bi, p) in report.grav_phases.iter().enumerate() {
        writeln!(w, "grav_phase_{bi}_rad,{p}")?;
    }
    w.flush()
}

/// Far-frame validity report: quantities then one verdict row per condition.
pub fn emit_validity(path: &Path, report: &ValidityReport) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "quantity,value")?;
    writeln!(w, "delta_r_R_m,{}", report.delta_r_r)?;
    writeln!(w, "delta_x_R_m,{}", report.delta_x_r)?;
    writeln!(w, "probe_displacement_m,{}", report.probe_displacement)?;
    writeln!(
        w,
        "branch_pull_difference_m,{}",
        report.branch_pull_difference
    )?;
    writeln!(w, "clock_overlap,{}", report.clock_overlap)?;
    for (name, ok) in report.verdicts() {
        writeln!(w, "{name},{}", if ok { "pass" } else { "fail" })?;
    }
    writeln!(
        w,
        "all_conditions,{}",
        if report.all_pass() { "pass" } else { "fail" }
    )?;
    w.flush()
}

/// Per-model trajectory blocks:
/// `model,entangled,t_s,outcome,x1_m[,..],v1_mps[,..],phase_rad,weight`.
pub fn emit_predictions(path: &Path, predictions: &[ModelPrediction]) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = predictions
        .first()
        .and_then(|p| p.trajectories.first())
        .map(|wt| wt.trajectory.positions[0].len())
        .unwrap_or(1);
    writeln!(
        w,
        "model,entangled,t_s,outcome,{},{},phase_rad,weight",
        axis_headers("x", "m", dim),
        axis_headers("v", "mps", dim)
    )?;
    for pred in predictions {
        let n_times = pred.trajectories.first().map(|wt| wt.trajectory.len());
        for k in 0..n_times.unwrap_or(0) {
            for wt in &pred.trajectories {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    pred.model.name(),
                    pred.entanglement_flag,
                    wt.trajectory.times[k],
                    wt.trajectory.branch_index,
                    join_components(&wt.trajectory.positions[k]),
                    join_components(&wt.trajectory.velocities[k]),
                    wt.trajectory.phases[k],
                    wt.weight
                )?;
            }
        }
    }
    w.flush()
}

/// Covariance-violation summary: one row per model.
pub fn emit_violation(path: &Path, report: &ViolationReport) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "model,max_discrepancy_m,final_fidelity")?;
    for v in &report.violations {
        writeln!(
            w,
            "{},{},{}",
            v.model.name(),
            v.positional_discrepancy,
            v.final_fidelity
        )?;
    }
    w.flush()
}

/// Grid probability density per branch, flattened row-major:
/// `branch,x1_m[,x2_m],re,im,prob`.
pub fn emit_grid(path: &Path, branches: &[GridWavefunction]) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = branches.first().map(|g| g.dimension()).unwrap_or(1);
    writeln!(w, "branch,{},re,im,prob", axis_headers("x", "m", dim))?;
    for (bi, wf) in branches.iter().enumerate() {
        let shape = wf.shape().to_vec();
        let mut idx = vec![0usize; dim];
        for a in wf.amplitudes() {
            let coords: Vec<String> = (0..dim)
                .map(|ax| wf.coord(ax, idx[ax]).to_string())
                .collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                bi,
                coords.join(","),
                a.re,
                a.im,
                a.norm_sqr()
            )?;
            for ax in (0..dim).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
    }
    w.flush()
}

/// Sampled collapse-outcome frequencies.
pub fn emit_collapse_samples(path: &Path, counts: &[usize], trials: usize) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "outcome,count,frequency")?;
    for (k, count) in counts.iter().enumerate() {
        writeln!(w, "{k},{count},{}", *count as f64 / trials as f64)?;
    }
    w.flush()
}

/// Branchwise L2 distances of the Hamiltonian covariance check.
pub fn emit_grid_covariance(path: &Path, report: &HamiltonianCovarianceReport) -> IoResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "branch,l2_distance")?;
    for (bi, l2) in report.branch_l2.iter().enumerate() {
        writeln!(w, "{bi},{l2}")?;
    }
    writeln!(w, "max,{}", report.max_l2)?;
    w.flush()
}
