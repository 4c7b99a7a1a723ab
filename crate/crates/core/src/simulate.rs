//! Time integration of inferred models and full-state reconstruction.
//!
//! All models advance with the classical fourth-order Runge-Kutta scheme.
//! Divergence (a non-finite stage value) is not an error: the trajectory is
//! truncated and the divergence time recorded, so parameter sweeps can keep
//! unstable runs as data points.

use nalgebra::{DMatrix, DVector};

use crate::couple::{reconstruct_full, CoupledModel};
use crate::data::TimeGrid;
use crate::error::{Error, Result};
use crate::opinf::{evaluate_reduced_rhs, QuadModel};
use crate::sfom::{evaluate_sparse_rhs, SparseQuadModel};

/// Time-dependent input signal evaluated at the integration stage times.
pub type InputFn<'a> = dyn Fn(f64) -> DVector<f64> + 'a;

/// Signal that an integration stage produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged {
    /// Runge-Kutta stage (1..=4) that failed.
    pub stage: usize,
}

/// Simulated states on a time grid. `states` holds one reconstructed column
/// per entry of `times`; on divergence both are truncated and `diverged_at`
/// records the time of the failed step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub reduced_states: Option<DMatrix<f64>>,
    pub diverged_at: Option<f64>,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// One classical RK4 step with stages at t, t+dt/2, t+dt/2, t+dt.
pub fn rk4_step<F>(rhs: F, x: &DVector<f64>, t: f64, dt: f64) -> std::result::Result<DVector<f64>, Diverged>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
    let k1 = rhs(x, t);
    if !finite(&k1) {
        return Err(Diverged { stage: 1 });
    }
    let k2 = rhs(&(x + &k1 * (dt / 2.0)), t + dt / 2.0);
    if !finite(&k2) {
        return Err(Diverged { stage: 2 });
    }
    let k3 = rhs(&(x + &k2 * (dt / 2.0)), t + dt / 2.0);
    if !finite(&k3) {
        return Err(Diverged { stage: 3 });
    }
    let k4 = rhs(&(x + &k3 * dt), t + dt);
    if !finite(&k4) {
        return Err(Diverged { stage: 4 });
    }
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if !finite(&next) {
        return Err(Diverged { stage: 4 });
    }
    Ok(next)
}

/// Integrates a generic right-hand side, collecting one column per step.
fn integrate<F, G>(
    dim: usize,
    x0: DVector<f64>,
    grid: &TimeGrid,
    rhs: F,
    mut record: G,
) -> Trajectory
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
    G: FnMut(&DVector<f64>) -> (DVector<f64>, Option<DVector<f64>>),
{
    let mut x = x0;
    let mut times = Vec::with_capacity(grid.count);
    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(grid.count);
    let mut reduced_columns: Vec<DVector<f64>> = Vec::new();
    let mut diverged_at = None;
    for step in 1..=grid.count {
        let t_prev = grid.t0 + grid.dt * (step - 1) as f64;
        match rk4_step(&rhs, &x, t_prev, grid.dt) {
            Ok(next) => {
                x = next;
                let (full, reduced) = record(&x);
                columns.push(full);
                if let Some(r) = reduced {
                    reduced_columns.push(r);
                }
                times.push(grid.t0 + grid.dt * step as f64);
            }
            Err(_) => {
                diverged_at = Some(t_prev + grid.dt);
                break;
            }
        }
    }
    let states = if columns.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    let reduced_states = if reduced_columns.is_empty() {
        None
    } else {
        Some(DMatrix::from_columns(&reduced_columns))
    };
    Trajectory {
        times,
        states,
        reduced_states,
        diverged_at,
    }
}

/// Integrates the coupled model from a full-order initial state. The reduced
/// half reads the interface values of the current full-order state; the
/// full-order half reads the current reduced coordinates. Output columns are
/// reconstructed full states with the overlap blended.
pub fn simulate_coupled(
    model: &CoupledModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    input: Option<&InputFn>,
) -> Result<Trajectory> {
    let dd = &model.dd;
    if x0.len() != dd.n {
        return Err(Error::shape("initial state length", dd.n, x0.len()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial state contains non-finite values".into(),
        ));
    }
    let r = model.basis.rank;
    let n_fom = dd.n_fom();
    // Interface DOFs as positions within the local FOM state.
    let interface_local: Vec<usize> = dd
        .interface_ids
        .iter()
        .map(|&g| dd.fom_ids.binary_search(&g).expect("interface is in fom_ids"))
        .collect();

    let x0_rom = DVector::from_fn(dd.n_rom(), |i, _| x0[dd.rom_ids[i]]);
    let xhat0 = model.basis.basis.transpose() * x0_rom;
    let xf0 = DVector::from_fn(n_fom, |i, _| x0[dd.fom_ids[i]]);
    let mut z0 = DVector::zeros(r + n_fom);
    z0.rows_mut(0, r).copy_from(&xhat0);
    z0.rows_mut(r, n_fom).copy_from(&xf0);

    let rhs = |z: &DVector<f64>, t: f64| -> DVector<f64> {
        let xhat = z.rows(0, r).into_owned();
        let xf = z.rows(r, n_fom).into_owned();
        let x_i = DVector::from_fn(interface_local.len(), |k, _| xf[interface_local[k]]);
        let u = input.map(|f| f(t));
        let drom = match evaluate_reduced_rhs(&model.rom, &xhat, &x_i, u.as_ref()) {
            Ok(v) => v,
            Err(_) => DVector::from_element(r, f64::NAN),
        };
        let dfom = match evaluate_sparse_rhs(&model.fom, &xf, Some(&xhat), u.as_ref()) {
            Ok(v) => v,
            Err(_) => DVector::from_element(n_fom, f64::NAN),
        };
        let mut out = DVector::zeros(r + n_fom);
        out.rows_mut(0, r).copy_from(&drom);
        out.rows_mut(r, n_fom).copy_from(&dfom);
        out
    };

    let record = |z: &DVector<f64>| {
        let xhat = z.rows(0, r).into_owned();
        let xf = z.rows(r, n_fom).into_owned();
        let full = reconstruct_full(model, &xhat, &xf).expect("state dimensions are fixed");
        (full, Some(xhat))
    };

    Ok(integrate(dd.n, z0, grid, rhs, record))
}

/// Integrates a standalone quadratic model; `x0` lives at model order.
pub fn simulate_reduced(
    model: &QuadModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    input: Option<&InputFn>,
) -> Result<Trajectory> {
    let p = model.order();
    if x0.len() != p {
        return Err(Error::shape("initial state length", p, x0.len()));
    }
    let rhs = |x: &DVector<f64>, t: f64| {
        let u = input.map(|f| f(t));
        model.rhs(x, u.as_ref())
    };
    Ok(integrate(p, x0.clone(), grid, rhs, |x| (x.clone(), None)))
}

/// Integrates a standalone sparse model. The model must be uncoupled; a
/// coupled sparse model only evolves inside [`simulate_coupled`].
pub fn simulate_sparse(
    model: &SparseQuadModel,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    input: Option<&InputFn>,
) -> Result<Trajectory> {
    if model.has_coupling() {
        return Err(Error::InvalidArgument(
            "sparse model carries coupling blocks; simulate it as part of a coupled model".into(),
        ));
    }
    if x0.len() != model.n {
        return Err(Error::shape("initial state length", model.n, x0.len()));
    }
    let rhs = |x: &DVector<f64>, t: f64| {
        let u = input.map(|f| f(t));
        match evaluate_sparse_rhs(model, x, None, u.as_ref()) {
            Ok(v) => v,
            Err(_) => DVector::from_element(model.n, f64::NAN),
        }
    };
    Ok(integrate(model.n, x0.clone(), grid, rhs, |x| (x.clone(), None)))
}
