//! Polynomial feature assembly and regularized least-squares solvers.
//!
//! The central solver handles the stability-promoting variant of ridge
//! regression: each unknown row beta satisfies
//!
//! ```text
//! (D Dᵀ + eta1 S) beta = D yᵀ - eta2 e_m
//! ```
//!
//! where `S` is a diagonal of per-block scale factors and `e_m` is the unit
//! vector at the self-coefficient of the linear block. Driving that entry
//! negative pushes the Gershgorin disk centers of the inferred linear
//! operator toward the left complex half-plane. With `eta2 = 0` and unit
//! scales the solve reduces to plain Tikhonov regression.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of one contiguous block of unknowns in the assembled feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Linear,
    QuadraticUnique,
    Input,
    Constant,
    CouplingLinear,
    CouplingQuadratic,
    CouplingBilinear,
}

/// One feature block: its role, width, and regularization scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub kind: BlockKind,
    pub size: usize,
    pub reg_scale: f64,
}

/// Ordered block layout of an assembled data matrix, with the optional
/// position of the linear self-coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlockSpec {
    pub blocks: Vec<FeatureBlock>,
    pub diag_index: Option<usize>,
}

impl FeatureBlockSpec {
    pub fn new(blocks: Vec<FeatureBlock>, diag_index: Option<usize>) -> Result<Self> {
        if blocks.iter().any(|b| b.size == 0) {
            return Err(Error::InvalidArgument(
                "feature block sizes must be positive".into(),
            ));
        }
        if blocks.iter().any(|b| b.reg_scale <= 0.0 || b.reg_scale.is_nan()) {
            return Err(Error::InvalidArgument(
                "feature block scale factors must be positive".into(),
            ));
        }
        let spec = Self { blocks, diag_index };
        if let Some(m) = spec.diag_index {
            let mut offset = 0;
            let mut inside_linear = false;
            for b in &spec.blocks {
                if b.kind == BlockKind::Linear && m >= offset && m < offset + b.size {
                    inside_linear = true;
                    break;
                }
                offset += b.size;
            }
            if !inside_linear {
                return Err(Error::InvalidArgument(format!(
                    "diag_index {m} does not fall inside a linear block"
                )));
            }
        }
        Ok(spec)
    }

    pub fn total_size(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    /// Byte offset of the first entry of the first block with this kind.
    pub fn block_offset(&self, kind: BlockKind) -> Option<usize> {
        let mut offset = 0;
        for b in &self.blocks {
            if b.kind == kind {
                return Some(offset);
            }
            offset += b.size;
        }
        None
    }

    pub fn block_size(&self, kind: BlockKind) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.size)
            .sum()
    }

    /// Diagonal of the scale matrix S, expanded entrywise.
    pub fn scale_diagonal(&self) -> DVector<f64> {
        let mut diag = DVector::zeros(self.total_size());
        let mut offset = 0;
        for b in &self.blocks {
            for i in 0..b.size {
                diag[offset + i] = b.reg_scale;
            }
            offset += b.size;
        }
        diag
    }
}

/// Per-kind regularization scale factors. Coupling blocks inherit the scale
/// of their base kind: coupling-linear from `linear`, coupling-quadratic and
/// coupling-bilinear from `quadratic`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockScales {
    pub linear: f64,
    pub quadratic: f64,
    pub input: f64,
    pub constant: f64,
}

impl Default for BlockScales {
    fn default() -> Self {
        Self {
            linear: 1.0,
            quadratic: 1.0,
            input: 1.0,
            constant: 1.0,
        }
    }
}

impl BlockScales {
    pub fn scale_for(&self, kind: BlockKind) -> f64 {
        match kind {
            BlockKind::Linear | BlockKind::CouplingLinear => self.linear,
            BlockKind::QuadraticUnique
            | BlockKind::CouplingQuadratic
            | BlockKind::CouplingBilinear => self.quadratic,
            BlockKind::Input => self.input,
            BlockKind::Constant => self.constant,
        }
    }
}

/// How the Gershgorin weight follows the ridge weight during grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta2Rule {
    /// eta2 = factor * eta1 for every grid point.
    MultipleOfEta1(f64),
    /// Independent eta2 grid, crossed with the eta1 grid.
    Grid(Vec<f64>),
}

/// Regularization configuration: fixed weights, optional search grids, and
/// per-block scale factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    /// Tikhonov weight (used directly when no grid is given).
    pub eta1: f64,
    /// Gershgorin diagonal weight (used directly when no grid is given).
    pub eta2: f64,
    /// Candidate eta1 values; empty disables grid selection.
    pub eta1_grid: Vec<f64>,
    pub eta2_rule: Eta2Rule,
    pub scales: BlockScales,
    /// Row subsample size for the shared L-curve selection in per-row
    /// inference.
    pub lcurve_subsample: usize,
    /// Select one (eta1, eta2) pair per row instead of one global pair.
    pub per_row_selection: bool,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            eta1: 0.0,
            eta2: 0.0,
            eta1_grid: Vec::new(),
            eta2_rule: Eta2Rule::MultipleOfEta1(0.0),
            scales: BlockScales::default(),
            lcurve_subsample: 20,
            per_row_selection: false,
        }
    }
}

impl RegConfig {
    /// Fixed weights, no grid search.
    pub fn fixed(eta1: f64, eta2: f64) -> Self {
        Self {
            eta1,
            eta2,
            ..Self::default()
        }
    }

    pub fn with_scales(mut self, scales: BlockScales) -> Self {
        self.scales = scales;
        self
    }

    pub fn with_grid(mut self, eta1_grid: Vec<f64>, eta2_rule: Eta2Rule) -> Self {
        self.eta1_grid = eta1_grid;
        self.eta2_rule = eta2_rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta1 < 0.0 || self.eta2 < 0.0 {
            return Err(Error::InvalidArgument(
                "regularization weights must be nonnegative".into(),
            ));
        }
        if self.eta1_grid.iter().any(|e| *e <= 0.0 || e.is_nan()) {
            return Err(Error::InvalidArgument(
                "eta1 grid entries must be positive".into(),
            ));
        }
        if let Eta2Rule::Grid(g) = &self.eta2_rule {
            if !self.eta1_grid.is_empty() && g.is_empty() {
                return Err(Error::InvalidArgument(
                    "eta2 grid must be nonempty when grid selection is requested".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_grid_search(&self) -> bool {
        !self.eta1_grid.is_empty()
    }

    /// All (eta1, eta2) candidate pairs; a single pair when no grid is set.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        if self.eta1_grid.is_empty() {
            return vec![(self.eta1, self.eta2)];
        }
        let mut out = Vec::new();
        for &e1 in &self.eta1_grid {
            match &self.eta2_rule {
                Eta2Rule::MultipleOfEta1(f) => out.push((e1, f * e1)),
                Eta2Rule::Grid(g) => {
                    for &e2 in g {
                        out.push((e1, e2));
                    }
                }
            }
        }
        out
    }
}

/// `count` logarithmically spaced values covering [lo, hi] inclusively.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > 0.0 && count >= 1);
    if count == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Number of unique quadratic pairs over `m` variables.
pub fn unique_pair_count(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Unique quadratic feature rows from columnwise data: row (i, j) with
/// i <= j in lexicographic order holds the elementwise product of rows i
/// and j.
pub fn quadratic_unique_features(z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = z.nrows();
    let n_t = z.ncols();
    let mut out = DMatrix::zeros(unique_pair_count(m), n_t);
    let mut row = 0;
    for i in 0..m {
        for j in i..m {
            for t in 0..n_t {
                out[(row, t)] = z[(i, t)] * z[(j, t)];
            }
            row += 1;
        }
    }
    out
}

/// Bilinear feature rows: row (i, j) in i-major order holds the elementwise
/// product of row i of `z1` with row j of `z2`.
pub fn bilinear_features(z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z1.ncols() != z2.ncols() {
        return Err(Error::shape("bilinear feature columns", z1.ncols(), z2.ncols()));
    }
    let (m1, m2, n_t) = (z1.nrows(), z2.nrows(), z1.ncols());
    let mut out = DMatrix::zeros(m1 * m2, n_t);
    for i in 0..m1 {
        for j in 0..m2 {
            let row = i * m2 + j;
            for t in 0..n_t {
                out[(row, t)] = z1[(i, t)] * z2[(j, t)];
            }
        }
    }
    Ok(out)
}

/// Unique quadratic lift of a single state vector, ordered like
/// [`quadratic_unique_features`].
pub fn unique_quadratic_lift(x: &DVector<f64>) -> DVector<f64> {
    let m = x.len();
    let mut out = DVector::zeros(unique_pair_count(m));
    let mut row = 0;
    for i in 0..m {
        for j in i..m {
            out[row] = x[i] * x[j];
            row += 1;
        }
    }
    out
}

/// Bilinear lift x1 ⊗ x2 in i-major order, matching [`bilinear_features`].
pub fn bilinear_lift(x1: &DVector<f64>, x2: &DVector<f64>) -> DVector<f64> {
    let (m1, m2) = (x1.len(), x2.len());
    let mut out = DVector::zeros(m1 * m2);
    for i in 0..m1 {
        for j in 0..m2 {
            out[i * m2 + j] = x1[i] * x2[j];
        }
    }
    out
}

/// Compresses a full Kronecker quadratic operator (q x m^2) to unique form
/// (q x m(m+1)/2) with the symmetric-sum convention: the coefficient of
/// x_i x_j with i < j stores the sum of the two Kronecker positions, so that
/// `compressed * unique_quadratic_lift(x) == full * (x ⊗ x)` exactly.
pub fn compress_quadratic(full: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    if full.ncols() != m * m {
        return Err(Error::shape("quadratic operator columns", m * m, full.ncols()));
    }
    let mut out = DMatrix::zeros(full.nrows(), unique_pair_count(m));
    let mut col = 0;
    for i in 0..m {
        for j in i..m {
            for q in 0..full.nrows() {
                out[(q, col)] = if i == j {
                    full[(q, i * m + j)]
                } else {
                    full[(q, i * m + j)] + full[(q, j * m + i)]
                };
            }
            col += 1;
        }
    }
    Ok(out)
}

/// Factorized normal equations of the regularized LS problem. The left-hand
/// side (D Dᵀ + eta1 S) is shared across right-hand-side rows; only `eta2`
/// and the diagonal position vary per row.
pub struct NormalEquations {
    factor: Cholesky<f64, Dyn>,
    size: usize,
}

impl NormalEquations {
    pub fn new(data: &DMatrix<f64>, eta1: f64, scale_diag: &DVector<f64>) -> Result<Self> {
        let m = data.nrows();
        if scale_diag.len() != m {
            return Err(Error::shape("scale diagonal length", m, scale_diag.len()));
        }
        let mut gram = data * data.transpose();
        for i in 0..m {
            gram[(i, i)] += eta1 * scale_diag[i];
        }
        match Cholesky::new(gram.clone()) {
            Some(factor) => Ok(Self { factor, size: m }),
            None => Err(Error::Conditioning {
                condition: estimate_condition(&gram),
            }),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Solves one row: `rhs` must already hold D yᵀ for that row.
    pub fn solve(&self, rhs: &DVector<f64>, eta2: f64, diag_index: Option<usize>) -> DVector<f64> {
        let mut b = rhs.clone();
        if let Some(m) = diag_index {
            b[m] -= eta2;
        }
        self.factor.solve(&b)
    }
}

fn estimate_condition(gram: &DMatrix<f64>) -> f64 {
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves the Gershgorin-regularized LS problem for every row of `targets`,
/// all rows sharing the diagonal position of `spec`. Returns the q x m
/// matrix of unknowns.
pub fn solve_gershgorin_ls(
    data: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    reg: &RegConfig,
    spec: &FeatureBlockSpec,
) -> Result<DMatrix<f64>> {
    reg.validate()?;
    let m = spec.total_size();
    if data.nrows() != m {
        return Err(Error::shape("data matrix rows", m, data.nrows()));
    }
    if targets.ncols() != data.ncols() {
        return Err(Error::shape("target columns", data.ncols(), targets.ncols()));
    }
    let ne = NormalEquations::new(data, reg.eta1, &spec.scale_diagonal())?;
    let rhs_all = data * targets.transpose(); // m x q
    let q = targets.nrows();
    let mut out = DMatrix::zeros(q, m);
    for r in 0..q {
        let beta = ne.solve(&rhs_all.column(r).into_owned(), reg.eta2, spec.diag_index);
        out.row_mut(r).copy_from(&beta.transpose());
    }
    Ok(out)
}

/// One regularization candidate on the L-curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LCurvePoint {
    pub eta1: f64,
    pub eta2: f64,
    pub fit_error: f64,
    pub solution_norm: f64,
}

/// Outcome of a regularization selection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegReport {
    pub eta1: f64,
    pub eta2: f64,
    pub l_curve: Vec<LCurvePoint>,
    pub underdetermined: bool,
    pub unknown_count: usize,
    pub sample_count: usize,
}

/// Selects the candidate whose (fit error, solution norm) pair, normalized
/// by the respective maxima, lies closest to the origin. Ties go to the
/// larger eta1.
pub fn l_curve_select(candidates: &[LCurvePoint]) -> Result<LCurvePoint> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty L-curve candidate list".into()));
    }
    for c in candidates {
        if !(c.fit_error.is_finite() && c.solution_norm.is_finite())
            || c.fit_error < 0.0
            || c.solution_norm < 0.0
        {
            return Err(Error::InvalidArgument(format!(
                "L-curve candidates need finite nonnegative error/norm, got ({}, {})",
                c.fit_error, c.solution_norm
            )));
        }
    }
    let max_err = candidates.iter().map(|c| c.fit_error).fold(0.0, f64::max);
    let max_norm = candidates
        .iter()
        .map(|c| c.solution_norm)
        .fold(0.0, f64::max);
    let dist = |c: &LCurvePoint| {
        let e = if max_err > 0.0 { c.fit_error / max_err } else { 0.0 };
        let n = if max_norm > 0.0 {
            c.solution_norm / max_norm
        } else {
            0.0
        };
        (e * e + n * n).sqrt()
    };
    let mut best = candidates[0];
    let mut best_d = dist(&best);
    for c in &candidates[1..] {
        let d = dist(c);
        if d < best_d || (d == best_d && c.eta1 > best.eta1) {
            best = *c;
            best_d = d;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_spec(m: usize, diag: Option<usize>) -> FeatureBlockSpec {
        FeatureBlockSpec::new(
            vec![FeatureBlock {
                kind: BlockKind::Linear,
                size: m,
                reg_scale: 1.0,
            }],
            diag,
        )
        .unwrap()
    }

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn quadratic_features_two_rows() {
        let z = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let q = quadratic_unique_features(&z);
        assert_eq!(q.nrows(), 3);
        assert_eq!(q.column(0).as_slice(), &[9.0, 12.0, 16.0]);

        let z = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let q = quadratic_unique_features(&z);
        assert_eq!(q.column(0).as_slice(), &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn quadratic_feature_count() {
        let z = DMatrix::<f64>::zeros(3, 4);
        assert_eq!(quadratic_unique_features(&z).nrows(), 6);
        for m in 1..8 {
            let z = DMatrix::<f64>::zeros(m, 2);
            assert_eq!(quadratic_unique_features(&z).nrows(), m * (m + 1) / 2);
        }
    }

    #[test]
    fn bilinear_features_enumeration() {
        let z1 = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let z2 = DMatrix::from_column_slice(3, 1, &[3.0, 4.0, 5.0]);
        let b = bilinear_features(&z1, &z2).unwrap();
        assert_eq!(b.column(0).as_slice(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn bilinear_with_ones_replicates() {
        let z1 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ones = DMatrix::from_element(1, 3, 1.0);
        let b = bilinear_features(&z1, &ones).unwrap();
        assert_eq!(b, z1);
    }

    #[test]
    fn bilinear_column_mismatch() {
        let z1 = DMatrix::<f64>::zeros(2, 3);
        let z2 = DMatrix::<f64>::zeros(2, 4);
        assert!(bilinear_features(&z1, &z2).is_err());
    }

    #[test]
    fn gershgorin_collapses_to_diag_pull_on_zero_data() {
        let m = 4;
        let d = DMatrix::<f64>::zeros(m, 6);
        let y = DMatrix::<f64>::zeros(1, 6);
        let reg = RegConfig::fixed(2.0, 3.0);
        let beta = solve_gershgorin_ls(&d, &y, &reg, &unit_spec(m, Some(1))).unwrap();
        for j in 0..m {
            let expected = if j == 1 { -1.5 } else { 0.0 };
            assert_abs_diff_eq!(beta[(0, j)], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_data_halves_target() {
        let m = 3;
        let d = DMatrix::<f64>::identity(m, m);
        let mut y = DMatrix::<f64>::zeros(1, m);
        y[(0, 0)] = 1.0;
        let reg = RegConfig::fixed(1.0, 0.0);
        let beta = solve_gershgorin_ls(&d, &y, &reg, &unit_spec(m, None)).unwrap();
        assert_abs_diff_eq!(beta[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(beta[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn normal_equation_residual() {
        let mut rng = StdRng::seed_from_u64(42);
        let m = 8;
        let d = random_matrix(&mut rng, m, 40);
        let y = random_matrix(&mut rng, 1, 40);
        let (eta1, eta2) = (0.1, 0.3);
        let reg = RegConfig::fixed(eta1, eta2);
        let spec = unit_spec(m, Some(2));
        let beta = solve_gershgorin_ls(&d, &y, &reg, &spec).unwrap();
        let beta_col = beta.row(0).transpose();
        let gram = &d * d.transpose() + DMatrix::identity(m, m) * eta1;
        let mut rhs = &d * y.row(0).transpose();
        rhs[2] -= eta2;
        let residual = (&gram * &beta_col - &rhs).norm();
        let scale = (&d * y.row(0).transpose()).norm();
        assert!(residual <= 1e-10 * scale, "residual {residual:.2e}");
    }

    #[test]
    fn singular_system_reports_condition() {
        let d = DMatrix::<f64>::zeros(3, 5);
        let y = DMatrix::<f64>::zeros(1, 5);
        let reg = RegConfig::fixed(0.0, 0.0);
        match solve_gershgorin_ls(&d, &y, &reg, &unit_spec(3, None)) {
            Err(Error::Conditioning { condition }) => assert!(condition.is_infinite()),
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn l_curve_single_and_dominated() {
        let single = vec![LCurvePoint {
            eta1: 0.5,
            eta2: 0.0,
            fit_error: 1.0,
            solution_norm: 2.0,
        }];
        assert_eq!(l_curve_select(&single).unwrap().eta1, 0.5);

        let pair = vec![
            LCurvePoint { eta1: 1.0, eta2: 0.0, fit_error: 1.0, solution_norm: 1.0 },
            LCurvePoint { eta1: 2.0, eta2: 0.0, fit_error: 0.1, solution_norm: 0.1 },
        ];
        assert_eq!(l_curve_select(&pair).unwrap().eta1, 2.0);
    }

    #[test]
    fn l_curve_elbow() {
        let pts = vec![
            LCurvePoint { eta1: 1.0, eta2: 0.0, fit_error: 1.0, solution_norm: 0.0 },
            LCurvePoint { eta1: 2.0, eta2: 0.0, fit_error: 0.0, solution_norm: 1.0 },
            LCurvePoint { eta1: 3.0, eta2: 0.0, fit_error: 0.3, solution_norm: 0.3 },
        ];
        let chosen = l_curve_select(&pts).unwrap();
        assert_eq!(chosen.eta1, 3.0);
    }

    #[test]
    fn l_curve_rejects_empty_and_nonfinite() {
        assert!(l_curve_select(&[]).is_err());
        let bad = vec![LCurvePoint {
            eta1: 1.0,
            eta2: 0.0,
            fit_error: f64::NAN,
            solution_norm: 0.0,
        }];
        assert!(l_curve_select(&bad).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert_abs_diff_eq!(g[0], 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(g[19], 1.0, epsilon = 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn candidates_respect_eta2_rule() {
        let reg = RegConfig::fixed(0.0, 0.0)
            .with_grid(vec![0.1, 1.0], Eta2Rule::MultipleOfEta1(50.0));
        assert_eq!(reg.candidates(), vec![(0.1, 5.0), (1.0, 50.0)]);

        let reg = RegConfig::fixed(0.0, 0.0)
            .with_grid(vec![0.1], Eta2Rule::Grid(vec![1.0, 2.0]));
        assert_eq!(reg.candidates(), vec![(0.1, 1.0), (0.1, 2.0)]);
    }

    #[test]
    fn spec_rejects_diag_outside_linear_block() {
        let blocks = vec![
            FeatureBlock { kind: BlockKind::Linear, size: 2, reg_scale: 1.0 },
            FeatureBlock { kind: BlockKind::Constant, size: 1, reg_scale: 1.0 },
        ];
        assert!(FeatureBlockSpec::new(blocks.clone(), Some(2)).is_err());
        assert!(FeatureBlockSpec::new(blocks, Some(1)).is_ok());
    }

    #[test]
    fn compress_quadratic_matches_kronecker() {
        let mut rng = StdRng::seed_from_u64(9);
        let m = 4;
        let full = random_matrix(&mut rng, 3, m * m);
        let compressed = compress_quadratic(&full, m).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let kron = DVector::from_fn(m * m, |idx, _| x[idx / m] * x[idx % m]);
            let a = &full * &kron;
            let b = &compressed * unique_quadratic_lift(&x);
            assert!((a - b).abs().max() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn eta2_zero_equals_ridge(seed in 0u64..200) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = 5;
            let d = random_matrix(&mut rng, m, 25);
            let y = random_matrix(&mut rng, 2, 25);
            let reg = RegConfig::fixed(0.7, 0.0);
            let beta = solve_gershgorin_ls(&d, &y, &reg, &unit_spec(m, Some(0))).unwrap();
            // Independent ridge route: direct LU solve of the Tikhonov system.
            let gram = &d * d.transpose() + DMatrix::identity(m, m) * 0.7;
            let lu = gram.lu();
            for r in 0..2 {
                let rhs = &d * y.row(r).transpose();
                let ridge = lu.solve(&rhs).unwrap();
                let diff = (beta.row(r).transpose() - &ridge).norm();
                prop_assert!(diff <= 1e-12 * ridge.norm().max(1e-30));
            }
        }

        #[test]
        fn eta2_strictly_decreases_diagonal(seed in 0u64..200, eta2 in 0.01f64..10.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = 5;
            let d = random_matrix(&mut rng, m, 30);
            let y = random_matrix(&mut rng, 1, 30);
            let spec = unit_spec(m, Some(3));
            let base = solve_gershgorin_ls(&d, &y, &RegConfig::fixed(0.5, 0.0), &spec).unwrap();
            let pushed = solve_gershgorin_ls(&d, &y, &RegConfig::fixed(0.5, eta2), &spec).unwrap();
            prop_assert!(pushed[(0, 3)] < base[(0, 3)]);
        }

        #[test]
        fn solver_is_permutation_equivariant(seed in 0u64..100) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = 6;
            let d = random_matrix(&mut rng, m, 30);
            let y = random_matrix(&mut rng, 1, 30);
            let reg = RegConfig::fixed(0.3, 0.8);
            let diag = 2usize;
            let beta = solve_gershgorin_ls(&d, &y, &reg, &unit_spec(m, Some(diag))).unwrap();

            // Reverse the unknown ordering.
            let perm: Vec<usize> = (0..m).rev().collect();
            let d_perm = DMatrix::from_fn(m, 30, |i, t| d[(perm[i], t)]);
            let beta_perm =
                solve_gershgorin_ls(&d_perm, &y, &reg, &unit_spec(m, Some(m - 1 - diag))).unwrap();
            for i in 0..m {
                prop_assert!((beta[(0, perm[i])] - beta_perm[(0, i)]).abs() <= 1e-11);
            }
        }
    }
}
