//! Finite-difference reference solver for the 1D periodic viscous Burgers
//! equation.
//!
//! The semi-discretization uses central differences on a uniform periodic
//! grid: the advection term in skew-symmetric split form (which conserves
//! the discrete mass exactly for the semi-discrete system) and the standard
//! 3-point stencil for diffusion. Time integration is classical RK4; one
//! snapshot column is stored after every step, so a horizon of T with step
//! dt yields round(T/dt) columns at times dt, 2 dt, ..., T.
//!
//! The advection sign is chosen so that a positive hump travels toward
//! z = L.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SnapshotSet;
use crate::error::{Error, Result};
use crate::simulate::rk4_step;

/// Initial condition: a Gaussian bump plus two cosine disturbances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialCondition {
    /// Center of the Gaussian; domain midpoint when absent.
    pub gauss_center: Option<f64>,
    /// Denominator of the Gaussian exponent.
    pub gauss_width: f64,
    /// Amplitudes of the cos(2 pi z / L) and cos(4 pi z / L) terms.
    pub cos_amps: (f64, f64),
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            gauss_center: None,
            gauss_width: 1.2,
            cos_amps: (0.1, 0.1),
        }
    }
}

/// Discretization and physics parameters of the reference run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurgersConfig {
    /// Advection coefficient c.
    pub advection: f64,
    /// Kinematic viscosity.
    pub viscosity: f64,
    /// Domain length L.
    pub length: f64,
    /// Grid spacing; must divide L.
    pub dz: f64,
    /// Time step.
    pub dt: f64,
    /// Simulation horizon T.
    pub horizon: f64,
    pub ic: InitialCondition,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            advection: 0.5,
            viscosity: 1e-2,
            length: 10.0,
            dz: 2e-2,
            dt: 2.5e-2,
            horizon: 18.0,
            ic: InitialCondition::default(),
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.dz > 0.0 && self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidArgument(
                "length, dz, dt, and horizon must be positive".into(),
            ));
        }
        if self.viscosity < 0.0 {
            return Err(Error::InvalidArgument(
                "viscosity must be nonnegative".into(),
            ));
        }
        let cells = self.length / self.dz;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "dz = {} does not divide the domain length {}",
                self.dz, self.length
            )));
        }
        Ok(())
    }

    /// Number of grid points (z = L is identified with z = 0).
    pub fn grid_size(&self) -> usize {
        (self.length / self.dz).round() as usize
    }

    /// Number of stored snapshots.
    pub fn step_count(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.grid_size()).map(|j| j as f64 * self.dz).collect()
    }
}

/// Samples the initial profile on the periodic grid.
pub fn initial_condition(cfg: &BurgersConfig) -> DVector<f64> {
    let center = cfg.ic.gauss_center.unwrap_or(cfg.length / 2.0);
    let (a1, a2) = cfg.ic.cos_amps;
    let tau = std::f64::consts::TAU;
    DVector::from_iterator(
        cfg.grid_size(),
        cfg.grid_points().iter().map(|&z| {
            (-(z - center).powi(2) / cfg.ic.gauss_width).exp()
                + a1 * (tau * z / cfg.length).cos()
                + a2 * (2.0 * tau * z / cfg.length).cos()
        }),
    )
}

/// Semi-discrete right-hand side: skew-split advection plus diffusion, with
/// periodic index wrap.
pub fn semi_discrete_rhs(w: &DVector<f64>, cfg: &BurgersConfig) -> DVector<f64> {
    let n = w.len();
    let c = cfg.advection;
    let nu = cfg.viscosity;
    let inv_2dz = 1.0 / (2.0 * cfg.dz);
    let inv_dz2 = 1.0 / (cfg.dz * cfg.dz);
    DVector::from_fn(n, |i, _| {
        let ip = (i + 1) % n;
        let im = (i + n - 1) % n;
        let grad = (w[ip] - w[im]) * inv_2dz;
        let grad_sq = (w[ip] * w[ip] - w[im] * w[im]) * inv_2dz;
        let advection = (w[i] * grad + grad_sq) / 3.0;
        let diffusion = (w[ip] - 2.0 * w[i] + w[im]) * inv_dz2;
        -c * advection + nu * diffusion
    })
}

/// Advisory advection CFL number dt * c * max|w| / dz.
pub fn cfl_number(cfg: &BurgersConfig, w: &DVector<f64>) -> f64 {
    let max_w = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    cfg.dt * cfg.advection.abs() * max_w / cfg.dz
}

/// Runs the reference simulation and assembles the snapshot set. Divergence
/// truncates the snapshot matrix at the last finite column.
pub fn simulate_reference(cfg: &BurgersConfig) -> Result<SnapshotSet> {
    cfg.validate()?;
    let mut w = initial_condition(cfg);
    let cfl = cfl_number(cfg, &w);
    if cfl > 1.0 {
        log::warn!("advective CFL number {cfl:.3} exceeds 1; the reference run may be unstable");
    }
    let steps = cfg.step_count();
    let mut columns = Vec::with_capacity(steps);
    let mut times = Vec::with_capacity(steps);
    for step in 1..=steps {
        match rk4_step(
            |w, _| semi_discrete_rhs(w, cfg),
            &w,
            (step - 1) as f64 * cfg.dt,
            cfg.dt,
        ) {
            Ok(next) => {
                w = next;
                columns.push(w.clone());
                times.push(step as f64 * cfg.dt);
            }
            Err(_) => {
                log::warn!("reference run diverged at step {step}; truncating snapshots");
                break;
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::DegenerateData(
            "reference run diverged before the first snapshot".into(),
        ));
    }
    SnapshotSet::new(DMatrix::from_columns(&columns), None, times, None)
}
