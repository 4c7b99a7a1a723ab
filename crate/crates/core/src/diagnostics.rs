//! Eigenvalue and Gershgorin-disk analysis, stability verdicts, and error
//! metrics against reference data.

use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pod::ReducedBasis;

/// One Gershgorin disk: center at the diagonal entry, radius the absolute
/// off-diagonal row sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center: f64,
    pub radius: f64,
}

/// Disks of every matrix row plus computed eigenvalues.
#[derive(Debug, Clone)]
pub struct DiskSet {
    pub disks: Vec<Disk>,
    pub eigenvalues: Vec<Complex<f64>>,
    /// True when the eigenvalues come from a sampled principal submatrix
    /// instead of the full operator.
    pub sampled: bool,
    /// Failure note of the eigensolver, if any; disks are still valid.
    pub eigen_error: Option<String>,
}

/// Controls the eigenvalue computation of [`gershgorin_disks_with`].
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Largest dimension solved densely; above it a random principal
    /// submatrix of dimension `sample_dim` is analyzed instead. Submatrix
    /// eigenvalues still lie inside the full disk union.
    pub dense_limit: usize,
    pub sample_dim: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            dense_limit: 2000,
            sample_dim: 512,
            seed: 0,
        }
    }
}

const SCHUR_MAX_ITER: usize = 75_000;

fn dense_eigenvalues(a: &DMatrix<f64>) -> std::result::Result<Vec<Complex<f64>>, String> {
    match nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => Ok(schur.complex_eigenvalues().iter().copied().collect()),
        None => Err("Schur decomposition did not converge".into()),
    }
}

/// Computes the Gershgorin disks and the spectrum of a square matrix.
pub fn gershgorin_disks(a: &DMatrix<f64>) -> Result<DiskSet> {
    gershgorin_disks_with(a, &EigenOptions::default())
}

pub fn gershgorin_disks_with(a: &DMatrix<f64>, opts: &EigenOptions) -> Result<DiskSet> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::shape("square matrix", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let disks: Vec<Disk> = (0..n)
        .map(|i| {
            let radius = (0..n)
                .filter(|&j| j != i)
                .map(|j| a[(i, j)].abs())
                .sum();
            Disk {
                center: a[(i, i)],
                radius,
            }
        })
        .collect();

    let (eig_result, sampled) = if n <= opts.dense_limit {
        (dense_eigenvalues(a), false)
    } else {
        let dim = opts.sample_dim.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, n, dim).into_vec();
        keep.sort_unstable();
        let sub = DMatrix::from_fn(dim, dim, |i, j| a[(keep[i], keep[j])]);
        (dense_eigenvalues(&sub), true)
    };
    let (eigenvalues, eigen_error) = match eig_result {
        Ok(e) => (e, None),
        Err(msg) => (Vec::new(), Some(msg)),
    };
    Ok(DiskSet {
        disks,
        eigenvalues,
        sampled,
        eigen_error,
    })
}

/// Asymptotic stability verdict of a linear operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub max_real_part: f64,
}

/// Stable iff every eigenvalue satisfies Re(lambda) < -margin.
pub fn stability_check(a: &DMatrix<f64>, margin: f64) -> Result<StabilityVerdict> {
    if margin < 0.0 {
        return Err(Error::InvalidArgument("margin must be nonnegative".into()));
    }
    let disks = gershgorin_disks_with(
        a,
        &EigenOptions {
            dense_limit: usize::MAX,
            ..EigenOptions::default()
        },
    )?;
    if let Some(msg) = disks.eigen_error {
        return Err(Error::Eigensolver(msg));
    }
    let max_real_part = disks
        .eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityVerdict {
        stable: max_real_part < -margin,
        max_real_part,
    })
}

/// Relative Frobenius error ||P - R||_F / ||R||_F.
pub fn relative_error_frobenius(prediction: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if prediction.shape() != reference.shape() {
        return Err(Error::shape(
            "error matrices",
            format!("{}x{}", reference.nrows(), reference.ncols()),
            format!("{}x{}", prediction.nrows(), prediction.ncols()),
        ));
    }
    let denom = reference.norm();
    if denom == 0.0 {
        return Err(Error::UndefinedNormalization(
            "reference matrix has zero norm".into(),
        ));
    }
    Ok((prediction - reference).norm() / denom)
}

/// Per-column error: mean absolute deviation normalized by the mean
/// absolute reference value of the same column.
pub fn relative_error_per_step(
    prediction: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if prediction.shape() != reference.shape() {
        return Err(Error::shape(
            "error matrices",
            format!("{}x{}", reference.nrows(), reference.ncols()),
            format!("{}x{}", prediction.nrows(), prediction.ncols()),
        ));
    }
    let n = reference.nrows() as f64;
    (0..reference.ncols())
        .map(|j| {
            let mean_ref: f64 =
                reference.column(j).iter().map(|v| v.abs()).sum::<f64>() / n;
            if mean_ref == 0.0 {
                return Err(Error::UndefinedNormalization(format!(
                    "reference column {j} has zero mean magnitude"
                )));
            }
            let mean_err: f64 = prediction
                .column(j)
                .iter()
                .zip(reference.column(j).iter())
                .map(|(p, r)| (p - r).abs())
                .sum::<f64>()
                / n;
            Ok(mean_err / mean_ref)
        })
        .collect()
}

/// Best-possible relative error of any method confined to the basis span:
/// ||X - V Vᵀ X||_F / ||X||_F.
pub fn projection_baseline(x_test: &DMatrix<f64>, basis: &ReducedBasis) -> Result<f64> {
    if x_test.nrows() != basis.basis.nrows() {
        return Err(Error::shape(
            "projection baseline rows",
            basis.basis.nrows(),
            x_test.nrows(),
        ));
    }
    let denom = x_test.norm();
    if denom == 0.0 {
        return Err(Error::UndefinedNormalization(
            "test matrix has zero norm".into(),
        ));
    }
    let projected = &basis.basis * (basis.basis.transpose() * x_test);
    Ok((x_test - projected).norm() / denom)
}

/// Exports (center, radius) rows for the disks and (re, im) rows for the
/// eigenvalues.
pub fn disks_to_matrices(set: &DiskSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let disks = DMatrix::from_fn(set.disks.len(), 2, |i, j| {
        if j == 0 {
            set.disks[i].center
        } else {
            set.disks[i].radius
        }
    });
    let eigs = DMatrix::from_fn(set.eigenvalues.len(), 2, |i, j| {
        if j == 0 {
            set.eigenvalues[i].re
        } else {
            set.eigenvalues[i].im
        }
    });
    (disks, eigs)
}
