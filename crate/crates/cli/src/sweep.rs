//! Interface-position sweep: retrain and resimulate the coupled model for a
//! range of 1D split coordinates, recording error, simulation time, and
//! stability per position.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use opinf_sfom::data::TimeGrid;
use opinf_sfom::diagnostics::{relative_error_frobenius, stability_check};
use opinf_sfom::couple::infer_coupled;
use opinf_sfom::sfom::PoolingPolicy;
use opinf_sfom::simulate::simulate_coupled;

use crate::commands::{decompose_at_split, load_problem, training_window, Problem};
use crate::config::{DataSection, PipelineConfig};
use crate::CliError;

/// Aggregated statistics of all repeats at one interface position.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub position: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_sim_seconds: f64,
    pub std_sim_seconds: f64,
    /// True when every repeat produced stable operators and a finite run.
    pub stable_flag: bool,
    pub stable_runs: usize,
    pub total_runs: usize,
}

struct RunOutcome {
    error: Option<f64>,
    sim_seconds: f64,
    stable: bool,
}

fn run_once(
    cfg: &PipelineConfig,
    problem: &Problem,
    position: f64,
    seed: u64,
) -> Result<RunOutcome, CliError> {
    let overlap_width = match cfg.decomposition {
        Some(crate::config::DecompositionSection::Split { overlap_width, .. }) => overlap_width,
        _ => 0,
    };
    let dd = decompose_at_split(problem, position, overlap_width)?;
    let (train, test) = training_window(cfg, problem)?;
    let test = test.ok_or_else(|| {
        CliError::Config("the interface sweep needs a train_split to measure test error".into())
    })?;
    let (model, _) = infer_coupled(
        &train,
        &problem.graph,
        &dd,
        cfg.basis.to_rule(),
        cfg.structure,
        &cfg.regularization.opinf.to_reg_config(),
        &cfg.regularization.sfom.to_reg_config(),
        &PoolingPolicy::new(cfg.pooling.count, seed),
    )
    .map_err(CliError::Numerical)?;

    let operators_stable = stability_check(&model.rom.core.linear, 0.0)
        .map_err(CliError::Numerical)?
        .stable
        && stability_check(&model.fom.assemble_linear(), 0.0)
            .map_err(CliError::Numerical)?
            .stable;

    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("the sweep needs a simulation section".into()))?;
    let grid =
        TimeGrid::new(sim.t0, sim.dt, sim.steps).map_err(|e| CliError::Config(e.to_string()))?;
    let x0 = match &cfg.data {
        DataSection::Burgers(b) => opinf_sfom::burgers::initial_condition(b),
        DataSection::Files(_) => problem.snapshots.states.column(0).into_owned(),
    };
    let started = Instant::now();
    let trajectory = simulate_coupled(&model, &x0, &grid, None).map_err(CliError::Numerical)?;
    let sim_seconds = started.elapsed().as_secs_f64();

    let stable = operators_stable && !trajectory.diverged();
    // Test-window error: trajectory columns after the split time, aligned
    // with the test snapshots.
    let error = if trajectory.diverged() {
        None
    } else {
        let t_split = cfg.train_split.expect("checked above");
        let cols: Vec<usize> = trajectory
            .times
            .iter()
            .enumerate()
            .filter(|(_, t)| **t > t_split)
            .map(|(j, _)| j)
            .collect();
        if cols.len() != test.n_snapshots() {
            None
        } else {
            let pred = nalgebra::DMatrix::from_fn(trajectory.states.nrows(), cols.len(), |i, k| {
                trajectory.states[(i, cols[k])]
            });
            relative_error_frobenius(&pred, &test.states).ok()
        }
    };
    Ok(RunOutcome {
        error,
        sim_seconds,
        stable,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Runs `repeats` train/simulate cycles per interface position, reseeding
/// the pooling each repeat. Unstable runs are recorded, never fatal.
pub fn sweep_interface(
    cfg: &PipelineConfig,
    positions: &[f64],
    repeats: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<SweepRow>, CliError> {
    if positions.is_empty() {
        return Err(CliError::Config("empty sweep position list".into()));
    }
    if repeats == 0 {
        return Err(CliError::Config("sweep needs at least one repeat".into()));
    }
    let problem = load_problem(cfg)?;
    let jobs: Vec<(usize, f64, u64)> = positions
        .iter()
        .enumerate()
        .flat_map(|(ai, &a)| {
            (0..repeats).map(move |rep| (ai, a, seed.wrapping_add((ai * 1000 + rep) as u64)))
        })
        .collect();

    let run = |&(ai, a, job_seed): &(usize, f64, u64)| -> Result<(usize, RunOutcome), CliError> {
        run_once(cfg, &problem, a, job_seed).map(|o| (ai, o))
    };
    let outcomes: Vec<(usize, RunOutcome)> = if parallel {
        jobs.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    };

    let mut rows = Vec::with_capacity(positions.len());
    for (ai, &a) in positions.iter().enumerate() {
        let mine: Vec<&RunOutcome> = outcomes
            .iter()
            .filter(|(idx, _)| *idx == ai)
            .map(|(_, o)| o)
            .collect();
        let errors: Vec<f64> = mine.iter().filter_map(|o| o.error).collect();
        let times: Vec<f64> = mine.iter().map(|o| o.sim_seconds).collect();
        let stable_runs = mine.iter().filter(|o| o.stable).count();
        let (mean_error, std_error) = mean_std(&errors);
        let (mean_sim_seconds, std_sim_seconds) = mean_std(&times);
        rows.push(SweepRow {
            position: a,
            mean_error,
            std_error,
            mean_sim_seconds,
            std_sim_seconds,
            stable_flag: stable_runs == mine.len(),
            stable_runs,
            total_runs: mine.len(),
        });
    }
    Ok(rows)
}

/// Expands [from, to] with the given step into a position list; a step
/// larger than the range yields the single starting position.
pub fn sweep_positions(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if step <= 0.0 || step.is_nan() {
        return Err(CliError::Config("sweep step must be positive".into()));
    }
    if to < from {
        return Err(CliError::Config("sweep range end precedes start".into()));
    }
    let mut out = Vec::new();
    let count = ((to - from) / step).floor() as usize;
    for k in 0..=count {
        out.push(from + step * k as f64);
    }
    Ok(out)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut text = String::from(
        "a,mean_error,std_error,mean_wall_time_s,std_wall_time_s,stable_flag,stable_runs,total_runs\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.position,
            r.mean_error,
            r.std_error,
            r.mean_sim_seconds,
            r.std_sim_seconds,
            r.stable_flag,
            r.stable_runs,
            r.total_runs
        ));
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
