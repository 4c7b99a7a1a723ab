//! Asymptotic offline/online cost expressions and speedup ratios for
//! planning a decomposition. Costs are relative units with constant factors
//! dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem sizes entering the cost expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    /// Total DOF count n.
    pub n_total: usize,
    /// FOM-subdomain DOF count n_F.
    pub n_fom: usize,
    /// Interface DOF count n_I.
    pub n_interface: usize,
    /// Training snapshot count n_T.
    pub n_train: usize,
    /// Online time step count n_t.
    pub n_steps: usize,
    /// Reduced dimension r of the coupled model.
    pub rom_dim: usize,
    /// Reduced dimension r_g of a global reduced model.
    pub global_rom_dim: usize,
    /// Stencil size s.
    pub stencil: usize,
    /// Polynomial order k of the model structure.
    pub poly_order: usize,
    /// Spatial dimension d.
    pub spatial_dim: usize,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.n_total,
            self.n_fom,
            self.n_train,
            self.n_steps,
            self.rom_dim,
            self.global_rom_dim,
            self.stencil,
            self.poly_order,
            self.spatial_dim,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument(
                "all cost parameters except n_interface must be positive".into(),
            ));
        }
        if self.n_fom > self.n_total {
            return Err(Error::InvalidArgument(
                "the FOM subdomain cannot exceed the total DOF count".into(),
            ));
        }
        Ok(())
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Leading-order unknown count of one polynomial LS row: s^k / k!.
fn poly_unknowns(s: f64, k: usize) -> f64 {
    s.powi(k as i32) / factorial(k)
}

/// Offline training costs of the four model variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineCosts {
    pub sfom: f64,
    pub opinf: f64,
    pub global_opinf: f64,
    pub global_sfom: f64,
}

pub fn offline_costs(p: &CostParams) -> Result<OfflineCosts> {
    p.validate()?;
    let k = p.poly_order;
    let n_t = p.n_train as f64;
    let per_row = poly_unknowns(p.stencil as f64, k);
    let opinf_row = poly_unknowns((p.rom_dim + p.n_interface) as f64, k);
    Ok(OfflineCosts {
        sfom: p.n_fom as f64 * per_row * per_row * n_t,
        opinf: p.rom_dim as f64 * opinf_row * opinf_row * n_t,
        global_opinf: (p.global_rom_dim as f64).powi(2 * k as i32 + 1) / factorial(k).powi(2)
            * n_t,
        global_sfom: p.n_total as f64 * per_row * per_row * n_t,
    })
}

/// Offline cost of the coupled approach relative to the global baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineRatios {
    pub vs_global_opinf: f64,
    pub vs_global_sfom: f64,
}

pub fn offline_ratios(p: &CostParams) -> Result<OfflineRatios> {
    p.validate()?;
    let k = p.poly_order as i32;
    let (n, n_f) = (p.n_total as f64, p.n_fom as f64);
    let (r, r_g) = (p.rom_dim as f64, p.global_rom_dim as f64);
    let (s, n_i) = (p.stencil as f64, p.n_interface as f64);
    let vs_global_opinf = ((n_f / r) * (s / r).powi(2 * k) + (1.0 + n_i / r).powi(2 * k))
        * (r_g / r).powi(-2 * k - 1);
    let vs_global_sfom =
        n_f / n + (r / n) * (1.0 + n_i / r).powi(2 * k) * (s / r).powi(-2 * k);
    Ok(OfflineRatios {
        vs_global_opinf,
        vs_global_sfom,
    })
}

/// Online evaluation costs per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineCosts {
    pub sfom: f64,
    pub opinf: f64,
    pub fom: f64,
}

pub fn online_costs(p: &CostParams) -> Result<OnlineCosts> {
    p.validate()?;
    let k = p.poly_order;
    let n_t = p.n_steps as f64;
    Ok(OnlineCosts {
        sfom: p.n_fom as f64 * poly_unknowns(p.stencil as f64, k) * n_t,
        opinf: p.rom_dim as f64 * poly_unknowns((p.rom_dim + p.n_interface) as f64, k) * n_t,
        fom: p.n_total as f64 * poly_unknowns(p.stencil as f64, k) * n_t,
    })
}

/// Online speedup of the coupled model over the full-order evaluation:
/// the reciprocal of (r/n)((r + n_I)/s)^k + n_F/n.
pub fn online_speedup(p: &CostParams) -> Result<f64> {
    p.validate()?;
    let k = p.poly_order as i32;
    let (n, n_f) = (p.n_total as f64, p.n_fom as f64);
    let r = p.rom_dim as f64;
    let ratio = (r / n) * ((r + p.n_interface as f64) / p.stencil as f64).powi(k) + n_f / n;
    Ok(1.0 / ratio)
}

/// How the interface count scales with the FOM subdomain size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceScaling {
    /// Surface-to-volume estimate n_F^((d-1)/d); the default.
    SurfaceToVolume,
    /// Plain n_F^(d-1) exponent.
    VolumeExponent,
}

/// Estimates n_I from the FOM subdomain size and the spatial dimension.
pub fn estimate_interface_count(n_fom: usize, spatial_dim: usize, rule: InterfaceScaling) -> usize {
    let n_f = n_fom as f64;
    let d = spatial_dim as f64;
    let value = match rule {
        InterfaceScaling::SurfaceToVolume => n_f.powf((d - 1.0) / d),
        InterfaceScaling::VolumeExponent => n_f.powf(d - 1.0),
    };
    value.round().max(1.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn burgers_params() -> CostParams {
        CostParams {
            n_total: 500,
            n_fom: 250,
            n_interface: 2,
            n_train: 360,
            n_steps: 720,
            rom_dim: 10,
            global_rom_dim: 10,
            stencil: 3,
            poly_order: 2,
            spatial_dim: 1,
        }
    }

    #[test]
    fn offline_cost_arithmetic() {
        let mut p = burgers_params();
        p.poly_order = 1;
        p.n_fom = 100;
        p.n_train = 10;
        let c = offline_costs(&p).unwrap();
        assert_abs_diff_eq!(c.sfom, 100.0 * 9.0 * 10.0, epsilon = 1e-9);

        let c = offline_costs(&burgers_params()).unwrap();
        assert_abs_diff_eq!(c.sfom, 250.0 * 4.5 * 4.5 * 360.0, epsilon = 1e-6);
        assert_abs_diff_eq!(c.sfom, 1_822_500.0, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_decomposition_matches_global() {
        let mut p = burgers_params();
        p.n_fom = p.n_total;
        let c = offline_costs(&p).unwrap();
        assert_abs_diff_eq!(c.sfom, c.global_sfom, epsilon = 1e-9);
        let r = offline_ratios(&p).unwrap();
        assert!(r.vs_global_sfom >= 1.0);
    }

    #[test]
    fn ratio_substitution_example() {
        // r_g = r, n_I = 0, n_F = r, s = r, k = 1 -> ratio vs global OpInf = 2.
        let p = CostParams {
            n_total: 100,
            n_fom: 10,
            n_interface: 0,
            n_train: 50,
            n_steps: 50,
            rom_dim: 10,
            global_rom_dim: 10,
            stencil: 10,
            poly_order: 1,
            spatial_dim: 1,
        };
        let r = offline_ratios(&p).unwrap();
        assert_abs_diff_eq!(r.vs_global_opinf, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ratios_are_train_size_free() {
        let p1 = burgers_params();
        let mut p2 = p1;
        p2.n_train *= 2;
        let r1 = offline_ratios(&p1).unwrap();
        let r2 = offline_ratios(&p2).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn ratios_agree_with_cost_quotients() {
        for (n_f, n_i, r, rg, s, k) in [
            (250usize, 2usize, 10usize, 12usize, 3usize, 2usize),
            (100, 8, 6, 20, 5, 1),
            (400, 1, 15, 15, 9, 3),
        ] {
            let p = CostParams {
                n_total: 500,
                n_fom: n_f,
                n_interface: n_i,
                n_train: 360,
                n_steps: 100,
                rom_dim: r,
                global_rom_dim: rg,
                stencil: s,
                poly_order: k,
                spatial_dim: 2,
            };
            let c = offline_costs(&p).unwrap();
            let ratios = offline_ratios(&p).unwrap();
            let coupled = c.sfom + c.opinf;
            assert_relative_eq!(
                ratios.vs_global_opinf,
                coupled / c.global_opinf,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                ratios.vs_global_sfom,
                coupled / c.global_sfom,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn online_speedup_pins() {
        let s = online_speedup(&burgers_params()).unwrap();
        assert_abs_diff_eq!(s, 1.0 / 0.82, epsilon = 1e-9);
        assert!((s - 1.22).abs() <= 0.01);

        let p = CostParams {
            n_total: 10_000,
            n_fom: 1_000,
            n_interface: 32,
            n_train: 100,
            n_steps: 100,
            rom_dim: 10,
            global_rom_dim: 10,
            stencil: 9,
            poly_order: 1,
            spatial_dim: 2,
        };
        let s = online_speedup(&p).unwrap();
        assert!((s - 9.55).abs() <= 0.01, "speedup {s:.4}");
    }

    #[test]
    fn no_reduction_means_no_speedup() {
        let mut p = burgers_params();
        p.n_fom = p.n_total;
        let s = online_speedup(&p).unwrap();
        assert!(s <= 1.0);
    }

    #[test]
    fn speedup_decreases_with_fom_share() {
        let mut last = f64::INFINITY;
        for n_fom in [50, 100, 200, 300, 400, 500] {
            let mut p = burgers_params();
            p.n_fom = n_fom;
            let s = online_speedup(&p).unwrap();
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn interface_estimates() {
        assert_eq!(
            estimate_interface_count(250, 1, InterfaceScaling::SurfaceToVolume),
            1
        );
        assert_eq!(
            estimate_interface_count(10_000, 2, InterfaceScaling::SurfaceToVolume),
            100
        );
        assert_eq!(
            estimate_interface_count(100, 2, InterfaceScaling::VolumeExponent),
            100
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = burgers_params();
        p.rom_dim = 0;
        assert!(offline_costs(&p).is_err());
        let mut p = burgers_params();
        p.n_fom = p.n_total + 1;
        assert!(online_speedup(&p).is_err());
    }
}
