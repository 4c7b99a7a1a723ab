//! Command implementations behind the CLI subcommands.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use opinf_sfom::burgers::{initial_condition, simulate_reference};
use opinf_sfom::couple::{decompose, infer_coupled, CoupledReport, DomainDecomposition};
use opinf_sfom::costmodel::{
    offline_costs, offline_ratios, online_costs, online_speedup, CostParams,
};
use opinf_sfom::data::{
    read_csv_matrix, read_fmat, split_train_test, write_csv_matrix, write_fmat, SnapshotSet,
    TimeGrid,
};
use opinf_sfom::diagnostics::{
    disks_to_matrices, gershgorin_disks, relative_error_frobenius, relative_error_per_step,
    stability_check, StabilityVerdict,
};
use opinf_sfom::model_io;
use opinf_sfom::pod::{compute_basis, gap_indicator, project};
use opinf_sfom::regression::{LCurvePoint, RegReport};
use opinf_sfom::sfom::{infer_sfom, AdjacencyGraph, PoolingPolicy};
use opinf_sfom::simulate::{simulate_coupled, simulate_reduced, simulate_sparse, Trajectory};
use opinf_sfom::opinf::{infer_opinf_coupled, CoupledReducedModel};

use crate::config::{DataSection, DecompositionSection, PipelineConfig, SimulationSection};
use crate::CliError;

/// Which model family a pipeline trains and simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Coupled,
    GlobalOpinf,
    GlobalSfom,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coupled" => Ok(Mode::Coupled),
            "global-opinf" => Ok(Mode::GlobalOpinf),
            "global-sfom" => Ok(Mode::GlobalSfom),
            other => Err(format!(
                "unknown mode '{other}' (expected coupled, global-opinf, or global-sfom)"
            )),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Loaded problem: snapshots plus the adjacency of the state layout.
pub struct Problem {
    pub snapshots: SnapshotSet,
    pub graph: AdjacencyGraph,
    /// 1D grid geometry (dz, length) when the data came from the reference
    /// solver; split-coordinate decompositions need it.
    pub grid_1d: Option<(f64, f64)>,
}

/// Materializes the data section: runs the reference solver or loads files.
pub fn load_problem(cfg: &PipelineConfig) -> Result<Problem, CliError> {
    match &cfg.data {
        DataSection::Burgers(b) => {
            let snapshots = simulate_reference(b).map_err(CliError::Numerical)?;
            let n = snapshots.n_states();
            Ok(Problem {
                snapshots,
                graph: AdjacencyGraph::cycle(n),
                grid_1d: Some((b.dz, b.length)),
            })
        }
        DataSection::Files(f) => {
            let states = read_fmat(&f.states).map_err(CliError::Numerical)?;
            let times_mat = read_csv_matrix(&f.times).map_err(CliError::Numerical)?;
            let times: Vec<f64> = times_mat.iter().copied().collect();
            let inputs = f
                .inputs
                .as_ref()
                .map(|p| read_fmat(p))
                .transpose()
                .map_err(CliError::Numerical)?;
            let derivatives = f
                .derivatives
                .as_ref()
                .map(|p| read_fmat(p))
                .transpose()
                .map_err(CliError::Numerical)?;
            let snapshots = SnapshotSet::new(states, inputs, times, derivatives)
                .map_err(CliError::Numerical)?;
            let graph = match &f.adjacency {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    let lists: Vec<Vec<usize>> = serde_json::from_str(&text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    AdjacencyGraph::new(lists).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => AdjacencyGraph::path(snapshots.n_states()),
            };
            Ok(Problem {
                snapshots,
                graph,
                grid_1d: None,
            })
        }
    }
}

/// Resolves the decomposition section against the problem geometry.
pub fn build_decomposition(
    cfg: &PipelineConfig,
    problem: &Problem,
) -> Result<DomainDecomposition, CliError> {
    let section = cfg.decomposition.as_ref().ok_or_else(|| {
        CliError::Config("this command needs a decomposition section".into())
    })?;
    match section {
        DecompositionSection::Split {
            split_coordinate,
            overlap_width,
        } => decompose_at_split(problem, *split_coordinate, *overlap_width),
        DecompositionSection::Explicit {
            fom_ids,
            overlap_ids,
        } => decompose(&problem.graph, fom_ids, overlap_ids)
            .map_err(|e| CliError::Config(e.to_string())),
    }
}

/// 1D split: FOM subdomain covers every grid point with coordinate at or
/// beyond the split, the overlap strip sits just right of the boundary.
pub fn decompose_at_split(
    problem: &Problem,
    split: f64,
    overlap_width: usize,
) -> Result<DomainDecomposition, CliError> {
    let (dz, length) = problem.grid_1d.ok_or_else(|| {
        CliError::Config("split-coordinate decomposition needs 1D reference data".into())
    })?;
    if !(split > 0.0 && split < length) {
        return Err(CliError::Config(format!(
            "split coordinate {split} outside the domain (0, {length})"
        )));
    }
    let n = problem.snapshots.n_states();
    // Guard against rounding when the split falls exactly on a grid point.
    let first = (split / dz - 1e-9).ceil() as usize;
    let fom_ids: Vec<usize> = (first..n).collect();
    let overlap: Vec<usize> = (first..(first + overlap_width).min(n)).collect();
    decompose(&problem.graph, &fom_ids, &overlap).map_err(|e| CliError::Config(e.to_string()))
}

/// Training window: everything at or before the split time. Derivatives are
/// estimated on the training window only.
pub fn training_window(
    cfg: &PipelineConfig,
    problem: &Problem,
) -> Result<(SnapshotSet, Option<SnapshotSet>), CliError> {
    match cfg.train_split {
        Some(t_split) => {
            let (train, test) =
                split_train_test(&problem.snapshots, t_split).map_err(CliError::Numerical)?;
            Ok((train, Some(test)))
        }
        None => Ok((problem.snapshots.clone(), None)),
    }
}

fn initial_state(
    cfg: &PipelineConfig,
    sim: &SimulationSection,
    problem: &Problem,
) -> Result<DVector<f64>, CliError> {
    if let Some(path) = &sim.initial_state {
        let m = read_fmat(path).map_err(CliError::Numerical)?;
        return Ok(DVector::from_column_slice(m.as_slice()));
    }
    match &cfg.data {
        DataSection::Burgers(b) => Ok(initial_condition(b)),
        DataSection::Files(_) => Ok(problem.snapshots.states.column(0).into_owned()),
    }
}

pub fn cmd_generate(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let DataSection::Burgers(b) = &cfg.data else {
        return Err(CliError::Config(
            "generate requires a burgers data section".into(),
        ));
    };
    ensure_dir(out)?;
    let set = simulate_reference(b).map_err(CliError::Numerical)?;
    write_fmat(&out.join("snapshots.fmat"), &set.states).map_err(CliError::Numerical)?;
    let times = DMatrix::from_fn(set.times.len(), 1, |i, _| set.times[i]);
    write_csv_matrix(&out.join("times.csv"), &times).map_err(CliError::Numerical)?;
    write_json(&out.join("config_echo.json"), b)?;
    log::info!(
        "wrote {} x {} snapshot matrix to {}",
        set.n_states(),
        set.n_snapshots(),
        out.display()
    );
    Ok(())
}

pub fn cmd_decompose(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let problem = load_problem(cfg)?;
    let dd = build_decomposition(cfg, &problem)?;
    model_io::save_decomposition(&out.join("dd.json"), &dd).map_err(CliError::Numerical)?;
    log::info!(
        "decomposition: {} ROM / {} FOM / {} interface DOFs",
        dd.n_rom(),
        dd.n_fom(),
        dd.n_interface()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct StabilityReport {
    stable: bool,
    max_real_part: f64,
}

impl From<StabilityVerdict> for StabilityReport {
    fn from(v: StabilityVerdict) -> Self {
        Self {
            stable: v.stable,
            max_real_part: v.max_real_part,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChosenEtas {
    eta1: f64,
    eta2: f64,
}

#[derive(Debug, Serialize)]
struct InferReport {
    mode: Mode,
    seed: u64,
    config: serde_json::Value,
    chosen_opinf: Option<ChosenEtas>,
    chosen_sfom: Option<ChosenEtas>,
    basis_rank: Option<usize>,
    basis_energy: Option<f64>,
    gap_indicator: Option<GapReport>,
    stability: std::collections::BTreeMap<String, StabilityReport>,
    underdetermined_opinf: Option<bool>,
    underdetermined_sfom: Option<bool>,
    training_seconds: f64,
}

#[derive(Debug, Serialize)]
struct GapReport {
    decay_rom: f64,
    decay_fom: f64,
    ratio: f64,
    saturated: bool,
}

fn write_singular_values_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<(), CliError> {
    let sigma = matrix.clone().singular_values();
    let mut values: Vec<f64> = sigma.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let column = DMatrix::from_fn(values.len(), 1, |i, _| values[i]);
    write_csv_matrix(path, &column).map_err(CliError::Numerical)
}

fn write_lcurve_csv(path: &Path, points: &[LCurvePoint]) -> Result<(), CliError> {
    let mut text = String::from("eta1,eta2,fit_error,solution_norm\n");
    for p in points {
        text.push_str(&format!(
            "{},{},{},{}\n",
            p.eta1, p.eta2, p.fit_error, p.solution_norm
        ));
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn reg_chosen(report: &RegReport) -> ChosenEtas {
    ChosenEtas {
        eta1: report.eta1,
        eta2: report.eta2,
    }
}

/// Trains the configured model and writes the bundle plus a provenance
/// report with the chosen weights, L-curve points, gap indicator, and
/// stability verdicts.
pub fn cmd_infer(cfg: &PipelineConfig, out: &Path, mode: Mode, seed: u64) -> Result<(), CliError> {
    ensure_dir(out)?;
    let problem = load_problem(cfg)?;
    let (train, _) = training_window(cfg, &problem)?;
    let reg_rom = cfg.regularization.opinf.to_reg_config();
    let reg_fom = cfg.regularization.sfom.to_reg_config();
    let pooling = PoolingPolicy::new(cfg.pooling.count, seed);
    let structure = cfg.structure;
    let config_echo = serde_json::to_value(cfg)
        .map_err(|e| CliError::Io(format!("config echo serialization: {e}")))?;
    let started = Instant::now();
    let mut stability = std::collections::BTreeMap::new();

    match mode {
        Mode::Coupled => {
            let dd = build_decomposition(cfg, &problem)?;
            let (model, report): (_, CoupledReport) = infer_coupled(
                &train,
                &problem.graph,
                &dd,
                cfg.basis.to_rule(),
                structure,
                &reg_rom,
                &reg_fom,
                &pooling,
            )
            .map_err(CliError::Numerical)?;
            let training_seconds = started.elapsed().as_secs_f64();

            let bundle = out.join("model");
            model_io::save_coupled_model(&bundle, &model, Some(seed))
                .map_err(CliError::Numerical)?;
            write_lcurve_csv(&out.join("lcurve_opinf.csv"), &report.opinf.l_curve)?;
            write_lcurve_csv(&out.join("lcurve_sfom.csv"), &report.sfom.l_curve)?;

            let select_rows = |ids: &[usize]| {
                DMatrix::from_fn(ids.len(), train.n_snapshots(), |i, j| {
                    train.states[(ids[i], j)]
                })
            };
            let x_rom = select_rows(&dd.rom_ids);
            let x_fom = select_rows(&dd.fom_ids);
            let gap =
                gap_indicator(&x_rom, &x_fom, model.basis.rank).map_err(CliError::Numerical)?;
            write_singular_values_csv(&out.join("singular_values_rom.csv"), &x_rom)?;
            write_singular_values_csv(&out.join("singular_values_fom.csv"), &x_fom)?;

            stability.insert(
                "a_rr".to_string(),
                stability_check(&model.rom.core.linear, 0.0)
                    .map_err(CliError::Numerical)?
                    .into(),
            );
            stability.insert(
                "a_ff".to_string(),
                stability_check(&model.fom.assemble_linear(), 0.0)
                    .map_err(CliError::Numerical)?
                    .into(),
            );

            write_json(
                &out.join("report.json"),
                &InferReport {
                    mode,
                    seed,
                    config: config_echo,
                    chosen_opinf: Some(reg_chosen(&report.opinf)),
                    chosen_sfom: Some(reg_chosen(&report.sfom)),
                    basis_rank: Some(report.basis_rank),
                    basis_energy: Some(report.basis_energy),
                    gap_indicator: Some(GapReport {
                        decay_rom: gap.decay_rom,
                        decay_fom: gap.decay_fom,
                        ratio: gap.ratio,
                        saturated: gap.saturated,
                    }),
                    stability,
                    underdetermined_opinf: Some(report.opinf.underdetermined),
                    underdetermined_sfom: Some(report.sfom.underdetermined),
                    training_seconds,
                },
            )
        }
        Mode::GlobalOpinf => {
            let derivatives = train.derivatives_or_estimate().map_err(CliError::Numerical)?;
            let basis =
                compute_basis(&train.states, cfg.basis.to_rule()).map_err(CliError::Numerical)?;
            let xhat = project(&train.states, &basis).map_err(CliError::Numerical)?;
            let dxhat = project(&derivatives, &basis).map_err(CliError::Numerical)?;
            let empty = DMatrix::zeros(0, train.n_snapshots());
            let (model, report) = infer_opinf_coupled(
                &xhat,
                &empty,
                &train.inputs,
                &dxhat,
                &[],
                structure,
                &reg_rom,
            )
            .map_err(CliError::Numerical)?;
            let training_seconds = started.elapsed().as_secs_f64();
            model_io::save_reduced_bundle(&out.join("model"), &model, &basis)
                .map_err(CliError::Numerical)?;
            write_lcurve_csv(&out.join("lcurve_opinf.csv"), &report.l_curve)?;
            write_singular_values_csv(&out.join("singular_values.csv"), &train.states)?;
            stability.insert(
                "a_hat".to_string(),
                stability_check(&model.core.linear, 0.0)
                    .map_err(CliError::Numerical)?
                    .into(),
            );
            write_json(
                &out.join("report.json"),
                &InferReport {
                    mode,
                    seed,
                    config: config_echo,
                    chosen_opinf: Some(reg_chosen(&report)),
                    chosen_sfom: None,
                    basis_rank: Some(basis.rank),
                    basis_energy: Some(basis.retained_energy()),
                    gap_indicator: None,
                    stability,
                    underdetermined_opinf: Some(report.underdetermined),
                    underdetermined_sfom: None,
                    training_seconds,
                },
            )
        }
        Mode::GlobalSfom => {
            let derivatives = train.derivatives_or_estimate().map_err(CliError::Numerical)?;
            let (model, report) = infer_sfom(
                &problem.graph,
                &train.states,
                None,
                &derivatives,
                &[],
                structure,
                &reg_fom,
                &pooling,
            )
            .map_err(CliError::Numerical)?;
            let training_seconds = started.elapsed().as_secs_f64();
            model_io::save_sparse_bundle(&out.join("model"), &model, Some(seed))
                .map_err(CliError::Numerical)?;
            write_lcurve_csv(&out.join("lcurve_sfom.csv"), &report.l_curve)?;
            stability.insert(
                "a_ff".to_string(),
                stability_check(&model.assemble_linear(), 0.0)
                    .map_err(CliError::Numerical)?
                    .into(),
            );
            write_json(
                &out.join("report.json"),
                &InferReport {
                    mode,
                    seed,
                    config: config_echo,
                    chosen_opinf: None,
                    chosen_sfom: Some(reg_chosen(&report)),
                    basis_rank: None,
                    basis_energy: None,
                    gap_indicator: None,
                    stability,
                    underdetermined_opinf: None,
                    underdetermined_sfom: Some(report.underdetermined),
                    training_seconds,
                },
            )
        }
    }
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    diverged_at: Option<f64>,
    columns: usize,
    frobenius_error_full: Option<f64>,
    frobenius_error_test: Option<f64>,
    simulation_seconds: f64,
}

/// Pairs trajectory columns with reference columns that share a time stamp.
fn paired_columns(
    trajectory: &Trajectory,
    reference: &SnapshotSet,
    tol: f64,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let mut pred_cols = Vec::new();
    let mut ref_cols = Vec::new();
    let mut times = Vec::new();
    let mut cursor = 0;
    for (j, &t) in trajectory.times.iter().enumerate() {
        while cursor < reference.times.len() && reference.times[cursor] < t - tol {
            cursor += 1;
        }
        if cursor < reference.times.len() && (reference.times[cursor] - t).abs() <= tol {
            pred_cols.push(trajectory.states.column(j).into_owned());
            ref_cols.push(reference.states.column(cursor).into_owned());
            times.push(t);
        }
    }
    if pred_cols.is_empty() {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), times);
    }
    (
        DMatrix::from_columns(&pred_cols),
        DMatrix::from_columns(&ref_cols),
        times,
    )
}

/// Simulates a stored model bundle and, when reference data is available,
/// writes per-step and summary error reports.
pub fn cmd_simulate(cfg: &PipelineConfig, model_dir: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate requires a simulation section".into()))?;
    let grid = TimeGrid::new(sim.t0, sim.dt, sim.steps).map_err(|e| CliError::Config(e.to_string()))?;
    let problem = load_problem(cfg)?;
    let x0 = initial_state(cfg, sim, &problem)?;

    let kind = model_io::bundle_kind(model_dir).map_err(CliError::Numerical)?;
    let started = Instant::now();
    let trajectory = match kind.as_str() {
        "coupled" => {
            let model = model_io::load_coupled_model(model_dir).map_err(CliError::Numerical)?;
            simulate_coupled(&model, &x0, &grid, None).map_err(CliError::Numerical)?
        }
        "reduced" => {
            let (model, basis) =
                model_io::load_reduced_bundle(model_dir).map_err(CliError::Numerical)?;
            let xhat0 = basis.basis.transpose() * &x0;
            let reduced = simulate_reduced(&model.core, &xhat0, &grid, None)
                .map_err(CliError::Numerical)?;
            // Reconstruct full states through the basis.
            Trajectory {
                states: &basis.basis * &reduced.states,
                reduced_states: Some(reduced.states),
                times: reduced.times,
                diverged_at: reduced.diverged_at,
            }
        }
        "sparse" => {
            let model = model_io::load_sparse_bundle(model_dir).map_err(CliError::Numerical)?;
            simulate_sparse(&model, &x0, &grid, None).map_err(CliError::Numerical)?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown bundle kind '{other}' in {}",
                model_dir.display()
            )))
        }
    };
    let simulation_seconds = started.elapsed().as_secs_f64();

    model_io::save_trajectory(out, &trajectory).map_err(CliError::Numerical)?;

    let (pred, reference, paired_times) =
        paired_columns(&trajectory, &problem.snapshots, 1e-9 + 1e-9 * sim.dt.abs());
    let mut frobenius_error_full = None;
    let mut frobenius_error_test = None;
    if pred.ncols() > 0 {
        frobenius_error_full =
            Some(relative_error_frobenius(&pred, &reference).map_err(CliError::Numerical)?);
        if let Some(t_split) = cfg.train_split {
            let first_test = paired_times.iter().position(|t| *t > t_split);
            if let Some(k) = first_test {
                let cols = pred.ncols() - k;
                frobenius_error_test = Some(
                    relative_error_frobenius(
                        &pred.columns(k, cols).into_owned(),
                        &reference.columns(k, cols).into_owned(),
                    )
                    .map_err(CliError::Numerical)?,
                );
            }
        }
        let per_step = relative_error_per_step(&pred, &reference).map_err(CliError::Numerical)?;
        let mut text = String::from("time,relative_error\n");
        for (t, e) in paired_times.iter().zip(&per_step) {
            text.push_str(&format!("{t},{e}\n"));
        }
        let path = out.join("error_per_step.csv");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }

    write_json(
        &out.join("simulate_report.json"),
        &SimulateReport {
            diverged_at: trajectory.diverged_at,
            columns: trajectory.states.ncols(),
            frobenius_error_full,
            frobenius_error_test,
            simulation_seconds,
        },
    )
}

/// Writes spectra and Gershgorin disks of the linear operators in a bundle.
pub fn cmd_diagnose(model_dir: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let kind = model_io::bundle_kind(model_dir).map_err(CliError::Numerical)?;
    let mut operators: Vec<(String, DMatrix<f64>)> = Vec::new();
    match kind.as_str() {
        "coupled" => {
            let model = model_io::load_coupled_model(model_dir).map_err(CliError::Numerical)?;
            operators.push(("a_rr".into(), model.rom.core.linear.clone()));
            operators.push(("a_ff".into(), model.fom.assemble_linear()));
        }
        "reduced" => {
            let (model, _): (CoupledReducedModel, _) =
                model_io::load_reduced_bundle(model_dir).map_err(CliError::Numerical)?;
            operators.push(("a_hat".into(), model.core.linear.clone()));
        }
        "sparse" => {
            let model = model_io::load_sparse_bundle(model_dir).map_err(CliError::Numerical)?;
            operators.push(("a_ff".into(), model.assemble_linear()));
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown bundle kind '{other}' in {}",
                model_dir.display()
            )))
        }
    }
    let mut verdicts = std::collections::BTreeMap::new();
    for (name, a) in &operators {
        let set = gershgorin_disks(a).map_err(CliError::Numerical)?;
        let (disks, eigs) = disks_to_matrices(&set);
        write_csv_matrix(&out.join(format!("{name}_disks.csv")), &disks)
            .map_err(CliError::Numerical)?;
        write_csv_matrix(&out.join(format!("{name}_spectrum.csv")), &eigs)
            .map_err(CliError::Numerical)?;
        let verdict: StabilityReport = stability_check(a, 0.0)
            .map_err(CliError::Numerical)?
            .into();
        verdicts.insert(name.clone(), verdict);
    }
    write_json(&out.join("stability.json"), &verdicts)
}

/// Point evaluation plus optional speedup grids of the cost expressions.
pub fn cmd_cost(params: &CostParams, grid_out: Option<&Path>) -> Result<String, CliError> {
    let report = serde_json::json!({
        "params": params,
        "offline_costs": offline_costs(params).map_err(CliError::Numerical)?,
        "offline_ratios": offline_ratios(params).map_err(CliError::Numerical)?,
        "online_costs": online_costs(params).map_err(CliError::Numerical)?,
        "online_speedup": online_speedup(params).map_err(CliError::Numerical)?,
    });
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Io(format!("cost report: {e}")))?;
    if let Some(dir) = grid_out {
        ensure_dir(dir)?;
        // Online speedup over (n_F/n, r/n).
        let mut online = String::from("n_fom_fraction,rom_fraction,online_speedup\n");
        let mut vs_sfom = String::from("n_fom_fraction,rom_fraction,offline_ratio_vs_global_sfom\n");
        for i in 1..=20 {
            let frac_f = i as f64 / 20.0;
            for j in 1..=20 {
                let frac_r = j as f64 / 100.0;
                let mut p = *params;
                p.n_fom = ((params.n_total as f64 * frac_f).round() as usize).max(1);
                p.rom_dim = ((params.n_total as f64 * frac_r).round() as usize).max(1);
                if let Ok(s) = online_speedup(&p) {
                    online.push_str(&format!("{frac_f},{frac_r},{s}\n"));
                }
                if let Ok(r) = offline_ratios(&p) {
                    vs_sfom.push_str(&format!("{frac_f},{frac_r},{}\n", r.vs_global_sfom));
                }
            }
        }
        // Offline ratio vs a global reduced model over (n_F/n, r_g/r).
        let mut vs_opinf = String::from("n_fom_fraction,global_rom_over_rom,offline_ratio_vs_global_opinf\n");
        for i in 1..=20 {
            let frac_f = i as f64 / 20.0;
            for j in 1..=20 {
                let factor = j as f64 / 4.0;
                let mut p = *params;
                p.n_fom = ((params.n_total as f64 * frac_f).round() as usize).max(1);
                p.global_rom_dim = ((params.rom_dim as f64 * factor).round() as usize).max(1);
                if let Ok(r) = offline_ratios(&p) {
                    vs_opinf.push_str(&format!("{frac_f},{factor},{}\n", r.vs_global_opinf));
                }
            }
        }
        for (name, text) in [
            ("online_speedup.csv", online),
            ("offline_vs_global_sfom.csv", vs_sfom),
            ("offline_vs_global_opinf.csv", vs_opinf),
        ] {
            let path = dir.join(name);
            fs::write(&path, text)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(text)
}
