//! Snapshot ingestion, storage, train/test splitting, and time differentiation.
//!
//! Matrices are exchanged through two on-disk formats:
//! - FMAT: magic bytes `FMAT`, row count (u64 LE), column count (u64 LE),
//!   followed by rows x cols IEEE-754 binary64 values, little endian,
//!   column-major. Write/read round-trips bit-exactly.
//! - CSV: comma separated, one matrix row per line, no header.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A time grid is classified as uniform when the deviation of successive
/// spacings stays below this factor times the mean spacing.
pub const UNIFORM_SPACING_TOL: f64 = 1e-12;

/// State/input snapshots on a common time grid, with optional time
/// derivative data.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    /// State snapshots, one column per time step (n x n_T).
    pub states: DMatrix<f64>,
    /// Input snapshots (k x n_T); k may be zero.
    pub inputs: DMatrix<f64>,
    /// Strictly increasing snapshot times, length n_T.
    pub times: Vec<f64>,
    /// State time derivatives (n x n_T) when available.
    pub derivatives: Option<DMatrix<f64>>,
}

impl SnapshotSet {
    pub fn new(
        states: DMatrix<f64>,
        inputs: Option<DMatrix<f64>>,
        times: Vec<f64>,
        derivatives: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_t = states.ncols();
        if times.len() != n_t {
            return Err(Error::shape("snapshot times", n_t, times.len()));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "snapshot times must be strictly increasing".into(),
            ));
        }
        let inputs = inputs.unwrap_or_else(|| DMatrix::zeros(0, n_t));
        if inputs.ncols() != n_t {
            return Err(Error::shape("input snapshot columns", n_t, inputs.ncols()));
        }
        if let Some(d) = &derivatives {
            if d.shape() != states.shape() {
                return Err(Error::shape(
                    "derivative snapshot shape",
                    format!("{}x{}", states.nrows(), states.ncols()),
                    format!("{}x{}", d.nrows(), d.ncols()),
                ));
            }
        }
        Ok(Self {
            states,
            inputs,
            times,
            derivatives,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.states.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// True iff the maximum deviation of successive time differences is
    /// below [`UNIFORM_SPACING_TOL`] times the mean spacing.
    pub fn is_uniformly_spaced(&self) -> bool {
        if self.times.len() < 2 {
            return true;
        }
        let diffs: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        diffs
            .iter()
            .all(|d| (d - mean).abs() < UNIFORM_SPACING_TOL * mean)
    }

    /// Returns the stored derivatives, estimating them with
    /// [`estimate_time_derivative`] when absent.
    pub fn derivatives_or_estimate(&self) -> Result<DMatrix<f64>> {
        match &self.derivatives {
            Some(d) => Ok(d.clone()),
            None => estimate_time_derivative(&self.states, &self.times),
        }
    }
}

/// A uniform integration grid: `count` steps of size `dt` starting from `t0`.
///
/// Simulations advance from the initial state at `t0` and record one column
/// after each step, at times `t0 + dt, ..., t0 + count*dt`. This matches the
/// snapshot convention of [`SnapshotSet`]: the initial state is not a column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, count: usize) -> Result<Self> {
        if dt <= 0.0 || dt.is_nan() || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 steps, got {count}"
            )));
        }
        Ok(Self { t0, dt, count })
    }

    /// Output times, one per recorded column.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.count).map(|i| self.t0 + self.dt * i as f64).collect()
    }
}

/// Supported on-disk matrix encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Fmat,
}

/// Reads a matrix from `path` in the given format.
pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DMatrix<f64>> {
    match format {
        MatrixFormat::Csv => read_csv_matrix(path),
        MatrixFormat::Fmat => read_fmat(path),
    }
}

/// Writes a matrix to `path` in the given format.
pub fn save_matrix(path: &Path, format: MatrixFormat, matrix: &DMatrix<f64>) -> Result<()> {
    match format {
        MatrixFormat::Csv => write_csv_matrix(path, matrix),
        MatrixFormat::Fmat => write_fmat(path, matrix),
    }
}

const FMAT_MAGIC: &[u8; 4] = b"FMAT";

pub fn read_fmat(path: &Path) -> Result<DMatrix<f64>> {
    let display = path.display().to_string();
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(&display, e))?);
    let mut header = [0u8; 20];
    file.read_exact(&mut header)
        .map_err(|_| Error::parse(&display, "file shorter than FMAT header"))?;
    if &header[0..4] != FMAT_MAGIC {
        return Err(Error::parse(&display, "bad magic bytes, expected FMAT"));
    }
    let rows = u64::from_le_bytes(header[4..12].try_into().unwrap());
    let cols = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .filter(|c| *c <= usize::MAX as u64)
        .ok_or_else(|| {
            Error::parse(&display, format!("dimension overflow: {rows} x {cols}"))
        })? as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(&display, e))?;
    if payload.len() != count {
        return Err(Error::parse(
            &display,
            format!(
                "payload holds {} bytes, header implies {count}",
                payload.len()
            ),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    // from_vec consumes values in column-major order, matching the format.
    Ok(DMatrix::from_vec(rows as usize, cols as usize, values))
}

pub fn write_fmat(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let display = path.display().to_string();
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(&display, e))?);
    file.write_all(FMAT_MAGIC)
        .and_then(|_| file.write_all(&(matrix.nrows() as u64).to_le_bytes()))
        .and_then(|_| file.write_all(&(matrix.ncols() as u64).to_le_bytes()))
        .map_err(|e| Error::io(&display, e))?;
    for value in matrix.iter() {
        // nalgebra iterates column-major.
        file.write_all(&value.to_le_bytes())
            .map_err(|e| Error::io(&display, e))?;
    }
    file.flush().map_err(|e| Error::io(&display, e))
}

pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let display = path.display().to_string();
    let file = BufReader::new(File::open(path).map_err(|e| Error::io(&display, e))?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in file.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::parse(
                        &display,
                        format!("line {}: cannot parse '{}'", line_no + 1, field.trim()),
                    )
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    &display,
                    format!(
                        "ragged row at line {}: {} fields, expected {}",
                        line_no + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(&display, "empty CSV matrix"));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_csv_matrix(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let display = path.display().to_string();
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(&display, e))?);
    for i in 0..matrix.nrows() {
        let fields: Vec<String> = (0..matrix.ncols())
            .map(|j| format!("{}", matrix[(i, j)]))
            .collect();
        writeln!(file, "{}", fields.join(",")).map_err(|e| Error::io(&display, e))?;
    }
    file.flush().map_err(|e| Error::io(&display, e))
}

/// Weights of the derivative of the quadratic interpolant through
/// `(t[0], t[1], t[2])` evaluated at `at`.
fn three_point_weights(t: [f64; 3], at: f64) -> [f64; 3] {
    let [a, b, c] = t;
    [
        (2.0 * at - b - c) / ((a - b) * (a - c)),
        (2.0 * at - a - c) / ((b - a) * (b - c)),
        (2.0 * at - a - b) / ((c - a) * (c - b)),
    ]
}

/// Estimates d/dt of columnwise samples by second-order finite differences:
/// central at interior columns, one-sided at the first and last column.
/// Non-uniform grids are handled through divided differences; the scheme is
/// exact for polynomials of degree at most two.
pub fn estimate_time_derivative(states: &DMatrix<f64>, times: &[f64]) -> Result<DMatrix<f64>> {
    let n_t = states.ncols();
    if times.len() != n_t {
        return Err(Error::shape("derivative time grid", n_t, times.len()));
    }
    if n_t < 3 {
        return Err(Error::InsufficientData(format!(
            "time derivative estimation needs at least 3 snapshots, got {n_t}"
        )));
    }
    if !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument(
            "times must be strictly increasing".into(),
        ));
    }
    let mut out = DMatrix::zeros(states.nrows(), n_t);
    for j in 0..n_t {
        // Stencil anchor: clamp so the three nodes stay in range.
        let base = j.clamp(1, n_t - 2) - 1;
        let nodes = [times[base], times[base + 1], times[base + 2]];
        let w = three_point_weights(nodes, times[j]);
        let mut col = out.column_mut(j);
        for (k, wk) in w.iter().enumerate() {
            col.axpy(*wk, &states.column(base + k), 1.0);
        }
    }
    Ok(out)
}

/// Splits a snapshot set at `t_split`: the training half keeps every column
/// with time <= `t_split`, the test half the remainder.
pub fn split_train_test(set: &SnapshotSet, t_split: f64) -> Result<(SnapshotSet, SnapshotSet)> {
    let times = &set.times;
    let (first, last) = (times[0], times[times.len() - 1]);
    if !(t_split > first && t_split < last) {
        return Err(Error::Bounds {
            context: format!("split time must lie strictly inside ({first}, {last})"),
            value: t_split,
        });
    }
    let n_train = times.iter().take_while(|t| **t <= t_split).count();
    let take = |cols: std::ops::Range<usize>| -> Result<SnapshotSet> {
        SnapshotSet::new(
            set.states.columns(cols.start, cols.len()).into_owned(),
            Some(set.inputs.columns(cols.start, cols.len()).into_owned()),
            times[cols.clone()].to_vec(),
            set.derivatives
                .as_ref()
                .map(|d| d.columns(cols.start, cols.len()).into_owned()),
        )
    };
    Ok((take(0..n_train)?, take(n_train..times.len())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform_times(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn csv_roundtrip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        let m = load_matrix(&path, MatrixFormat::Csv).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn csv_ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        let err = load_matrix(&path, MatrixFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(err.to_string().contains("ragged"));
    }

    #[test]
    fn fmat_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmat");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(read_fmat(&path).is_err());

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FMAT");
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes()); // 3 values missing
        std::fs::write(&path, bytes).unwrap();
        let err = read_fmat(&path).unwrap_err();
        assert!(err.to_string().contains("payload"));
    }

    #[test]
    fn fmat_rejects_dimension_overflow() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmat");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FMAT");
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = read_fmat(&path).unwrap_err();
        assert!(err.to_string().contains("overflow"), "{err}");
    }

    #[test]
    fn derivative_exact_on_linear_ramp() {
        let times = uniform_times(10, 0.3);
        let states = DMatrix::from_fn(2, 10, |_, j| times[j]);
        let d = estimate_time_derivative(&states, &times).unwrap();
        for v in d.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_exact_on_quadratic_interior() {
        let times = uniform_times(8, 0.5);
        let states = DMatrix::from_fn(1, 8, |_, j| times[j] * times[j]);
        let d = estimate_time_derivative(&states, &times).unwrap();
        for j in 0..8 {
            assert_abs_diff_eq!(d[(0, j)], 2.0 * times[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_sin_error_bound() {
        let dt = 0.025;
        let times = uniform_times(200, dt);
        let states = DMatrix::from_fn(1, 200, |_, j| times[j].sin());
        let d = estimate_time_derivative(&states, &times).unwrap();
        let mut max_err: f64 = 0.0;
        for j in 1..199 {
            max_err = max_err.max((d[(0, j)] - times[j].cos()).abs());
        }
        // Central difference truncation: dt^2/6 * max|cos| ~ 1.05e-4.
        assert!(max_err <= 1.05e-4 * 1.05, "max_err = {max_err:.3e}");
    }

    #[test]
    fn derivative_requires_three_columns() {
        let times = uniform_times(2, 0.1);
        let states = DMatrix::zeros(3, 2);
        assert!(matches!(
            estimate_time_derivative(&states, &times),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn derivative_nonuniform_grid_quadratic() {
        let times = vec![0.0, 0.1, 0.35, 0.5, 1.1];
        let states = DMatrix::from_fn(1, 5, |_, j| 3.0 * times[j] * times[j] - times[j] + 2.0);
        let d = estimate_time_derivative(&states, &times).unwrap();
        for j in 0..5 {
            assert_abs_diff_eq!(d[(0, j)], 6.0 * times[j] - 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn split_boundary_cases() {
        let times = uniform_times(5, 1.0); // 0,1,2,3,4
        let states = DMatrix::from_fn(2, 5, |i, j| (i + j) as f64);
        let set = SnapshotSet::new(states, None, times, None).unwrap();

        let (train, test) = split_train_test(&set, 0.5).unwrap();
        assert_eq!(train.n_snapshots(), 1);
        assert_eq!(test.n_snapshots(), 4);

        assert!(split_train_test(&set, 4.0).is_err());
        assert!(split_train_test(&set, 7.0).is_err());
        assert!(split_train_test(&set, 0.0).is_err());
    }

    #[test]
    fn split_keeps_boundary_column_in_train() {
        let times = uniform_times(4, 1.0); // 0,1,2,3
        let states = DMatrix::identity(4, 4);
        let set = SnapshotSet::new(states, None, times, None).unwrap();
        let (train, test) = split_train_test(&set, 2.0).unwrap();
        assert_eq!(train.n_snapshots(), 3);
        assert_eq!(test.times, vec![3.0]);
    }

    #[test]
    fn uniform_spacing_flag() {
        let set = SnapshotSet::new(
            DMatrix::zeros(1, 3),
            None,
            vec![0.0, 0.1, 0.2],
            None,
        )
        .unwrap();
        assert!(set.is_uniformly_spaced());
        let set = SnapshotSet::new(
            DMatrix::zeros(1, 3),
            None,
            vec![0.0, 0.1, 0.25],
            None,
        )
        .unwrap();
        assert!(!set.is_uniformly_spaced());
    }

    proptest! {
        #[test]
        fn fmat_roundtrip_identity(values in proptest::collection::vec(-1e12f64..1e12, 35)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.fmat");
            let m = DMatrix::from_vec(5, 7, values);
            write_fmat(&path, &m).unwrap();
            let back = read_fmat(&path).unwrap();
            prop_assert_eq!(m.shape(), back.shape());
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn split_is_a_partition(n in 3usize..40, split_idx in 1usize..38, dt in 0.01f64..2.0) {
            prop_assume!(split_idx < n - 1);
            let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
            let states = DMatrix::from_fn(3, n, |i, j| (i * 100 + j) as f64);
            let set = SnapshotSet::new(states.clone(), None, times.clone(), None).unwrap();
            let t_split = times[split_idx] + dt * 0.5;
            let (train, test) = split_train_test(&set, t_split).unwrap();
            prop_assert_eq!(train.n_snapshots() + test.n_snapshots(), n);
            let mut merged = train.times.clone();
            merged.extend_from_slice(&test.times);
            prop_assert_eq!(merged, times);
            for j in 0..train.n_snapshots() {
                prop_assert_eq!(train.states.column(j), states.column(j));
            }
            for j in 0..test.n_snapshots() {
                prop_assert_eq!(test.states.column(j), states.column(train.n_snapshots() + j));
            }
        }

        #[test]
        fn derivative_exact_on_degree_two(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let times = uniform_times(12, 0.2);
            let states = DMatrix::from_fn(1, 12, |_, j| {
                let t = times[j];
                a * t * t + b * t + c
            });
            let d = estimate_time_derivative(&states, &times).unwrap();
            for j in 1..11 {
                prop_assert!((d[(0, j)] - (2.0 * a * times[j] + b)).abs() <= 1e-10);
            }
        }
    }
}
