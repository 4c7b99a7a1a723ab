//! Truncated orthonormal bases from snapshot data and singular-value decay
//! diagnostics for subdomain selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-14;

/// Orthonormal column basis with the full singular value sequence of the
/// snapshot matrix it was computed from.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// Basis matrix (n x r), columns orthonormal.
    pub basis: DMatrix<f64>,
    /// All min(n, n_T) singular values, nonincreasing.
    pub singular_values: DVector<f64>,
    /// Number of retained columns.
    pub rank: usize,
}

impl ReducedBasis {
    /// Fraction of squared singular values captured by the retained columns.
    pub fn retained_energy(&self) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 0.0;
        }
        let kept: f64 = self
            .singular_values
            .iter()
            .take(self.rank)
            .map(|s| s * s)
            .sum();
        kept / total
    }
}

/// Truncation rule for [`compute_basis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationRule {
    /// Keep exactly this many leading singular vectors.
    FixedRank(usize),
    /// Keep the minimal rank whose cumulative squared singular values reach
    /// this fraction of the total.
    Energy(f64),
}

/// Computes the leading left singular vectors of the raw (uncentered)
/// snapshot matrix.
pub fn compute_basis(snapshots: &DMatrix<f64>, rule: TruncationRule) -> Result<ReducedBasis> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("empty snapshot matrix".into()));
    }
    let max_rank = snapshots.nrows().min(snapshots.ncols());
    let svd = snapshots.clone().svd(true, false);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| {
        svd.singular_values[*b]
            .partial_cmp(&svd.singular_values[*a])
            .unwrap()
    });
    let sigma = DVector::from_fn(order.len(), |i, _| svd.singular_values[order[i]]);
    if sigma[0] <= 0.0 {
        return Err(Error::DegenerateData(
            "snapshot matrix is identically zero".into(),
        ));
    }
    let u = svd.u.expect("left singular vectors requested");

    let rank = match rule {
        TruncationRule::FixedRank(r) => {
            if r < 1 {
                return Err(Error::InvalidArgument("rank must be at least 1".into()));
            }
            if r > max_rank {
                return Err(Error::Rank(format!(
                    "requested rank {r} exceeds min(n, n_T) = {max_rank}"
                )));
            }
            r
        }
        TruncationRule::Energy(fraction) => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "energy fraction must lie in (0, 1], got {fraction}"
                )));
            }
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            let mut cumulative = 0.0;
            let mut r = max_rank;
            for (i, s) in sigma.iter().enumerate() {
                cumulative += s * s;
                if cumulative >= fraction * total {
                    r = i + 1;
                    break;
                }
            }
            r
        }
    };

    let basis = DMatrix::from_fn(snapshots.nrows(), rank, |i, j| u[(i, order[j])]);
    Ok(ReducedBasis {
        basis,
        singular_values: sigma,
        rank,
    })
}

/// Projects full-order snapshots onto the reduced basis: returns Vᵀ X.
pub fn project(snapshots: &DMatrix<f64>, basis: &ReducedBasis) -> Result<DMatrix<f64>> {
    if snapshots.nrows() != basis.basis.nrows() {
        return Err(Error::shape(
            "projection rows",
            basis.basis.nrows(),
            snapshots.nrows(),
        ));
    }
    Ok(basis.basis.transpose() * snapshots)
}

/// Reconstructs full-order snapshots from reduced coordinates: returns V X̂.
pub fn reconstruct(reduced: &DMatrix<f64>, basis: &ReducedBasis) -> Result<DMatrix<f64>> {
    if reduced.nrows() != basis.rank {
        return Err(Error::shape("reconstruction rows", basis.rank, reduced.nrows()));
    }
    Ok(&basis.basis * reduced)
}

/// Singular-value decay comparison between two candidate subdomains.
///
/// `decay_* = sigma_r / sigma_1` of the respective snapshot matrix; a ratio
/// above one indicates slower decay (sFOM-appropriate) in the second matrix.
#[derive(Debug, Clone, Copy)]
pub struct GapIndicator {
    pub decay_rom: f64,
    pub decay_fom: f64,
    /// decay_fom / decay_rom; +inf when the first matrix saturates at zero.
    pub ratio: f64,
    /// True when either matrix has fewer than r+1 nonzero singular values.
    pub saturated: bool,
}

pub fn gap_indicator(
    x_rom: &DMatrix<f64>,
    x_fom: &DMatrix<f64>,
    r: usize,
) -> Result<GapIndicator> {
    if r < 1 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    let decay_of = |x: &DMatrix<f64>| -> Result<(f64, usize)> {
        let sv = x.clone().singular_values();
        let mut sigma: Vec<f64> = sv.iter().copied().collect();
        sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sigma.len() < r {
            return Err(Error::Rank(format!(
                "r = {r} exceeds the {} singular values available",
                sigma.len()
            )));
        }
        if sigma[0] <= 0.0 {
            return Err(Error::DegenerateData("zero snapshot matrix".into()));
        }
        let nonzero = sigma.iter().filter(|s| **s > RANK_TOL * sigma[0]).count();
        Ok((sigma[r - 1] / sigma[0], nonzero))
    };
    let (decay_rom, nz_rom) = decay_of(x_rom)?;
    let (decay_fom, nz_fom) = decay_of(x_fom)?;
    let saturated = nz_rom < r + 1 || nz_fom < r + 1;
    let ratio = if decay_rom == 0.0 {
        f64::INFINITY
    } else {
        decay_fom / decay_rom
    };
    Ok(GapIndicator {
        decay_rom,
        decay_fom,
        ratio,
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one_data_yields_rank_one_basis() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let x = DMatrix::from_fn(3, 3, |i, _| v[i]);
        let b = compute_basis(&x, TruncationRule::Energy(0.999)).unwrap();
        assert_eq!(b.rank, 1);
        let unit = &v / v.norm();
        let got = b.basis.column(0);
        let aligned = got.dot(&unit).signum();
        for i in 0..3 {
            assert_abs_diff_eq!(got[i] * aligned, unit[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn orthonormality_invariant() {
        let mut rng = StdRng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 20, 35);
        let b = compute_basis(&x, TruncationRule::FixedRank(8)).unwrap();
        let gram = b.basis.transpose() * &b.basis;
        let err = (&gram - DMatrix::identity(8, 8)).abs().max();
        assert!(err <= 1e-10, "orthonormality defect {err:.2e}");
    }

    #[test]
    fn energy_rule_counts_equal_singular_values() {
        // Orthogonal columns of equal norm: m equal singular values, so
        // energy(0.5) must keep ceil(m/2).
        let m = 7;
        let x = DMatrix::<f64>::identity(m, m) * 3.0;
        let b = compute_basis(&x, TruncationRule::Energy(0.5)).unwrap();
        assert_eq!(b.rank, m.div_ceil(2));
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let x = DMatrix::<f64>::zeros(4, 5);
        assert!(matches!(
            compute_basis(&x, TruncationRule::FixedRank(1)),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn project_identity_basis() {
        let mut rng = StdRng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 5, 9);
        let b = ReducedBasis {
            basis: DMatrix::identity(5, 5),
            singular_values: DVector::from_element(5, 1.0),
            rank: 5,
        };
        let p = project(&x, &b).unwrap();
        assert_abs_diff_eq!((p - &x).abs().max(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = StdRng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 20, 50);
        let b = compute_basis(&x, TruncationRule::FixedRank(20)).unwrap();
        let recon = reconstruct(&project(&x, &b).unwrap(), &b).unwrap();
        let rel = (&recon - &x).norm() / x.norm();
        assert!(rel <= 1e-10, "reconstruction error {rel:.2e}");
    }

    #[test]
    fn projection_dimension_mismatch() {
        let b = ReducedBasis {
            basis: DMatrix::identity(4, 2),
            singular_values: DVector::from_element(4, 1.0),
            rank: 2,
        };
        assert!(project(&DMatrix::zeros(5, 3), &b).is_err());
    }

    #[test]
    fn gap_indicator_identical_inputs() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 10, 14);
        let g = gap_indicator(&x, &x, 4).unwrap();
        assert_abs_diff_eq!(g.ratio, 1.0, epsilon = 1e-12);
        assert!(!g.saturated);
    }

    #[test]
    fn gap_indicator_saturation() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let rank_one = DMatrix::from_fn(3, 3, |i, _| v[i]);
        let full = DMatrix::<f64>::identity(3, 3);
        let g = gap_indicator(&rank_one, &full, 2).unwrap();
        assert_eq!(g.decay_rom, 0.0);
        assert!(g.ratio.is_infinite());
        assert!(g.saturated);
    }

    #[test]
    fn gap_indicator_rank_error() {
        let x = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            gap_indicator(&x, &x, 4),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn fixed_rank_beyond_available_rejected() {
        let x = DMatrix::<f64>::identity(3, 5);
        assert!(matches!(
            compute_basis(&x, TruncationRule::FixedRank(4)),
            Err(Error::Rank(_))
        ));
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 8, 12);
            let b = compute_basis(&x, TruncationRule::FixedRank(3)).unwrap();
            let p1 = project(&x, &b).unwrap();
            let p2 = project(&reconstruct(&p1, &b).unwrap(), &b).unwrap();
            prop_assert!((p1 - p2).abs().max() <= 1e-12);
        }

        #[test]
        fn energy_rule_is_monotone(seed in 0u64..500, f1 in 0.05f64..0.95, df in 0.0f64..0.05) {
            let mut rng = StdRng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 8, 12);
            let lo = compute_basis(&x, TruncationRule::Energy(f1)).unwrap();
            let hi = compute_basis(&x, TruncationRule::Energy(f1 + df)).unwrap();
            prop_assert!(hi.rank >= lo.rank);
        }

        #[test]
        fn gap_indicator_scale_invariant(seed in 0u64..200, scale in 0.001f64..1000.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 6, 9);
            let b = random_matrix(&mut rng, 6, 9);
            let base = gap_indicator(&a, &b, 3).unwrap();
            let scaled = gap_indicator(&(a * scale), &b, 3).unwrap();
            prop_assert!((base.decay_rom - scaled.decay_rom).abs() <= 1e-9 * base.decay_rom.abs().max(1e-30));
            prop_assert!((base.ratio - scaled.ratio).abs() <= 1e-9 * base.ratio.abs().max(1e-30));
        }
    }
}
