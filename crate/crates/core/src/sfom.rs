//! Per-DOF sparse full-order stencil inference restricted to graph-adjacent
//! unknowns, standalone or with reduced-coordinate coupling blocks.
//!
//! Each DOF i gets its own least-squares problem over the features of its
//! stencil set Q_i: linear and unique-quadratic terms in the neighboring
//! states, optional coupling terms in the reduced coordinates (interface
//! rows only), optional inputs, and a constant. On uniform meshes, rows
//! with congruent stencil geometry may pool their sample columns.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opinf::ModelStructure;
use crate::regression::{
    l_curve_select, unique_pair_count, unique_quadratic_lift, BlockKind, FeatureBlock,
    FeatureBlockSpec, LCurvePoint, RegConfig, RegReport,
};

/// Symmetric adjacency structure: for every DOF i an ascending index set
/// Q_i that contains i itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    n: usize,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a graph from neighbor lists; lists are sorted and deduplicated,
    /// and each list must contain its own index.
    pub fn new(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        let mut cleaned = Vec::with_capacity(n);
        for (i, mut q) in neighbors.into_iter().enumerate() {
            q.sort_unstable();
            q.dedup();
            if q.iter().any(|j| *j >= n) {
                return Err(Error::InvalidArgument(format!(
                    "neighbor index out of range in stencil of DOF {i}"
                )));
            }
            if !q.contains(&i) {
                return Err(Error::InvalidArgument(format!(
                    "stencil of DOF {i} must contain the DOF itself"
                )));
            }
            cleaned.push(q);
        }
        Ok(Self { n, neighbors: cleaned })
    }

    /// 1D chain with a 3-point stencil, non-periodic ends.
    pub fn path(n: usize) -> Self {
        let neighbors = (0..n)
            .map(|i| {
                let mut q = Vec::with_capacity(3);
                if i > 0 {
                    q.push(i - 1);
                }
                q.push(i);
                if i + 1 < n {
                    q.push(i + 1);
                }
                q
            })
            .collect();
        Self { n, neighbors }
    }

    /// 1D periodic ring with a 3-point stencil.
    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle graph needs at least 3 DOFs");
        let neighbors = (0..n)
            .map(|i| {
                let mut q = vec![(i + n - 1) % n, i, (i + 1) % n];
                q.sort_unstable();
                q
            })
            .collect();
        Self { n, neighbors }
    }

    /// 2D tensor grid with a 5-point stencil, non-periodic.
    pub fn grid5(nx: usize, ny: usize) -> Self {
        let n = nx * ny;
        let neighbors = (0..n)
            .map(|idx| {
                let (ix, iy) = (idx % nx, idx / nx);
                let mut q = vec![idx];
                if ix > 0 {
                    q.push(idx - 1);
                }
                if ix + 1 < nx {
                    q.push(idx + 1);
                }
                if iy > 0 {
                    q.push(idx - nx);
                }
                if iy + 1 < ny {
                    q.push(idx + nx);
                }
                q.sort_unstable();
                q
            })
            .collect();
        Self { n, neighbors }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn stencil(&self, i: usize) -> Result<&[usize]> {
        self.neighbors
            .get(i)
            .map(|q| q.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("DOF index {i} out of range")))
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Restriction to a subset of DOFs: neighbors outside `keep` are
    /// dropped. Returns the local graph and the global id of each local DOF.
    pub fn restrict(&self, keep: &[usize]) -> Result<(AdjacencyGraph, Vec<usize>)> {
        let mut globals: Vec<usize> = keep.to_vec();
        globals.sort_unstable();
        globals.dedup();
        if globals.iter().any(|g| *g >= self.n) {
            return Err(Error::InvalidArgument(
                "restriction index out of range".into(),
            ));
        }
        let local_of = |g: usize| globals.binary_search(&g).ok();
        let neighbors = globals
            .iter()
            .map(|&g| {
                self.neighbors[g]
                    .iter()
                    .filter_map(|&j| local_of(j))
                    .collect()
            })
            .collect();
        Ok((
            AdjacencyGraph {
                n: globals.len(),
                neighbors,
            },
            globals,
        ))
    }
}

/// Index-set sizes governing the unknown count of one sFOM row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    /// Q_i: the stencil of DOF i, ascending, containing i.
    pub stencil: Vec<usize>,
    /// Unique quadratic interactions within the stencil.
    pub quad_size: usize,
    /// L_i: input indices feeding DOF i.
    pub inputs: Vec<usize>,
    /// Bilinear stencil-times-reduced interactions.
    pub bilinear_size: usize,
}

pub fn build_index_sets(
    graph: &AdjacencyGraph,
    i: usize,
    reduced_dim: usize,
    input_map: Option<&[Vec<usize>]>,
) -> Result<IndexSets> {
    let stencil = graph.stencil(i)?.to_vec();
    let q = stencil.len();
    let inputs = input_map.map(|m| m[i].clone()).unwrap_or_default();
    Ok(IndexSets {
        quad_size: unique_pair_count(q),
        bilinear_size: q * reduced_dim,
        stencil,
        inputs,
    })
}

/// Coupling coefficients of one interface row.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingCoeffs {
    /// A_FR row (length r).
    pub linear: DVector<f64>,
    /// H_FRR row in unique form (length r(r+1)/2).
    pub quadratic: DVector<f64>,
    /// H_FFR row on the stencil-times-reduced bilinear lift (length |Q_i|*r).
    pub bilinear: DVector<f64>,
}

/// Inferred stencil coefficients of one DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilRow {
    pub stencil: Vec<usize>,
    /// A_FF coefficients over the stencil (length |Q_i|).
    pub linear: DVector<f64>,
    /// H_FFF coefficients in unique form (length |Q_i|(|Q_i|+1)/2).
    pub quadratic: DVector<f64>,
    pub input_ids: Vec<usize>,
    pub input: DVector<f64>,
    pub constant: f64,
    /// Present exactly for interface rows.
    pub coupling: Option<CouplingCoeffs>,
}

/// Sparse full-order model: one stencil row per DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseQuadModel {
    pub n: usize,
    /// Reduced dimension of the coupling features (0 when uncoupled).
    pub reduced_dim: usize,
    /// Rows flagged as interface rows, ascending.
    pub interface_ids: Vec<usize>,
    pub rows: Vec<StencilRow>,
}

impl SparseQuadModel {
    /// Scatters the linear stencil coefficients into a dense n x n matrix.
    pub fn assemble_linear(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for (k, &j) in row.stencil.iter().enumerate() {
                a[(i, j)] = row.linear[k];
            }
        }
        a
    }

    pub fn has_coupling(&self) -> bool {
        !self.interface_ids.is_empty()
    }
}

/// Random pooling of congruent rows on uniform meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingPolicy {
    /// Number of additional congruent rows concatenated per inference.
    pub count: usize,
    pub seed: u64,
}

impl PoolingPolicy {
    pub fn none() -> Self {
        Self { count: 0, seed: 0 }
    }

    pub fn new(count: usize, seed: u64) -> Self {
        Self { count, seed }
    }
}

/// Stencil geometry signature; only rows with equal signatures may pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct GeometrySignature {
    stencil_len: usize,
    self_position: usize,
    interface: bool,
    input_len: usize,
}

fn signature(
    graph: &AdjacencyGraph,
    i: usize,
    interface: bool,
    input_map: Option<&[Vec<usize>]>,
) -> Result<GeometrySignature> {
    let stencil = graph.stencil(i)?;
    let self_position = stencil
        .iter()
        .position(|&j| j == i)
        .expect("graph guarantees i in Q_i");
    Ok(GeometrySignature {
        stencil_len: stencil.len(),
        self_position,
        interface,
        input_len: input_map.map(|m| m[i].len()).unwrap_or(0),
    })
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Block layout of one row's unknown vector.
fn row_feature_spec(
    structure: ModelStructure,
    stencil_len: usize,
    self_position: usize,
    reduced_dim: usize,
    coupled: bool,
    input_len: usize,
    reg: &RegConfig,
) -> Result<FeatureBlockSpec> {
    let mut blocks = Vec::new();
    let mut push = |kind: BlockKind, size: usize| {
        if size > 0 {
            blocks.push(FeatureBlock {
                kind,
                size,
                reg_scale: reg.scales.scale_for(kind),
            });
        }
    };
    let r = if coupled { reduced_dim } else { 0 };
    if structure.linear {
        push(BlockKind::Linear, stencil_len);
    }
    if structure.quadratic {
        push(BlockKind::QuadraticUnique, unique_pair_count(stencil_len));
    }
    if structure.linear {
        push(BlockKind::CouplingLinear, r);
    }
    if structure.quadratic {
        push(BlockKind::CouplingQuadratic, unique_pair_count(r));
        push(BlockKind::CouplingBilinear, stencil_len * r);
    }
    if structure.input {
        push(BlockKind::Input, input_len);
    }
    if structure.constant {
        push(BlockKind::Constant, 1);
    }
    if blocks.is_empty() {
        return Err(Error::InvalidArgument(
            "model structure selects no terms".into(),
        ));
    }
    let diag = structure.linear.then_some(self_position);
    FeatureBlockSpec::new(blocks, diag)
}

/// Per-row normal-equation system. The Gram matrix and right-hand side are
/// regularization-independent, so one build serves the whole (eta1, eta2)
/// grid.
struct RowSystem {
    spec: FeatureBlockSpec,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    target_sq: f64,
    n_samples: usize,
}

impl RowSystem {
    fn solve_at(&self, eta1: f64, eta2: f64) -> Result<(DVector<f64>, f64)> {
        let m = self.spec.total_size();
        let scale = self.spec.scale_diagonal();
        let mut lhs = self.gram.clone();
        for k in 0..m {
            lhs[(k, k)] += eta1 * scale[k];
        }
        let chol = nalgebra::Cholesky::new(lhs.clone()).ok_or_else(|| {
            let eig = lhs.symmetric_eigen();
            let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            Error::Conditioning {
                condition: if min <= 0.0 { f64::INFINITY } else { max / min },
            }
        })?;
        let mut b = self.rhs.clone();
        if let Some(d) = self.spec.diag_index {
            b[d] -= eta2;
        }
        let beta = chol.solve(&b);
        // ||beta' D - y||^2 expanded through the cached Gram products.
        let fit_sq = (beta.dot(&(&self.gram * &beta)) - 2.0 * beta.dot(&self.rhs)
            + self.target_sq)
            .max(0.0);
        Ok((beta, fit_sq))
    }
}

/// Writes the feature columns of one source row into `data` starting at
/// `col_offset`, and the matching derivative samples into `target`.
#[allow(clippy::too_many_arguments)]
fn fill_source_columns(
    data: &mut DMatrix<f64>,
    target: &mut DVector<f64>,
    col_offset: usize,
    source_row: usize,
    spec: &FeatureBlockSpec,
    states: &DMatrix<f64>,
    reduced: Option<&DMatrix<f64>>,
    derivatives: &DMatrix<f64>,
    graph: &AdjacencyGraph,
    input: Option<&DMatrix<f64>>,
    input_map: Option<&[Vec<usize>]>,
) -> Result<()> {
    let stencil = graph.stencil(source_row)?;
    let n_t = states.ncols();
    for t in 0..n_t {
        let col = col_offset + t;
        let local: Vec<f64> = stencil.iter().map(|&j| states[(j, t)]).collect();
        let mut row_idx = 0;
        for b in &spec.blocks {
            match b.kind {
                BlockKind::Linear => {
                    for v in &local {
                        data[(row_idx, col)] = *v;
                        row_idx += 1;
                    }
                }
                BlockKind::QuadraticUnique => {
                    for i in 0..local.len() {
                        for j in i..local.len() {
                            data[(row_idx, col)] = local[i] * local[j];
                            row_idx += 1;
                        }
                    }
                }
                BlockKind::CouplingLinear => {
                    let xhat = reduced.expect("coupled block requires reduced data");
                    for k in 0..xhat.nrows() {
                        data[(row_idx, col)] = xhat[(k, t)];
                        row_idx += 1;
                    }
                }
                BlockKind::CouplingQuadratic => {
                    let xhat = reduced.expect("coupled block requires reduced data");
                    for i in 0..xhat.nrows() {
                        for j in i..xhat.nrows() {
                            data[(row_idx, col)] = xhat[(i, t)] * xhat[(j, t)];
                            row_idx += 1;
                        }
                    }
                }
                BlockKind::CouplingBilinear => {
                    let xhat = reduced.expect("coupled block requires reduced data");
                    for v in &local {
                        for k in 0..xhat.nrows() {
                            data[(row_idx, col)] = *v * xhat[(k, t)];
                            row_idx += 1;
                        }
                    }
                }
                BlockKind::Input => {
                    let u = input.expect("input block requires input data");
                    let ids = &input_map.expect("input block requires an input map")[source_row];
                    for &l in ids {
                        data[(row_idx, col)] = u[(l, t)];
                        row_idx += 1;
                    }
                }
                BlockKind::Constant => {
                    data[(row_idx, col)] = 1.0;
                    row_idx += 1;
                }
            }
        }
        target[col] = derivatives[(source_row, t)];
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_row_system(
    i: usize,
    states: &DMatrix<f64>,
    reduced: Option<&DMatrix<f64>>,
    derivatives: &DMatrix<f64>,
    graph: &AdjacencyGraph,
    structure: ModelStructure,
    reg: &RegConfig,
    coupled: bool,
    pooled: &[usize],
    input: Option<&DMatrix<f64>>,
    input_map: Option<&[Vec<usize>]>,
) -> Result<RowSystem> {
    let sig = signature(graph, i, coupled, input_map)?;
    for &j in pooled {
        let other = signature(graph, j, coupled, input_map)?;
        if other != sig {
            return Err(Error::GeometryMismatch(format!(
                "row {j} cannot pool with row {i}: stencil geometry differs"
            )));
        }
    }
    let reduced_dim = reduced.map(|m| m.nrows()).unwrap_or(0);
    if coupled && reduced_dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "row {i} is an interface row but no reduced data was supplied"
        )));
    }
    let spec = row_feature_spec(
        structure,
        sig.stencil_len,
        sig.self_position,
        reduced_dim,
        coupled,
        sig.input_len,
        reg,
    )?;
    let n_t = states.ncols();
    if derivatives.ncols() != n_t {
        return Err(Error::shape("derivative columns", n_t, derivatives.ncols()));
    }
    let sources: Vec<usize> = std::iter::once(i).chain(pooled.iter().copied()).collect();
    let total_cols = n_t * sources.len();
    let m = spec.total_size();
    let mut data = DMatrix::zeros(m, total_cols);
    let mut target = DVector::zeros(total_cols);
    for (s, &src) in sources.iter().enumerate() {
        fill_source_columns(
            &mut data,
            &mut target,
            s * n_t,
            src,
            &spec,
            states,
            if coupled { reduced } else { None },
            derivatives,
            graph,
            input,
            input_map,
        )?;
    }
    let gram = &data * data.transpose();
    let rhs = &data * &target;
    Ok(RowSystem {
        spec,
        gram,
        rhs,
        target_sq: target.dot(&target),
        n_samples: total_cols,
    })
}

fn split_row(
    beta: &DVector<f64>,
    spec: &FeatureBlockSpec,
    stencil: Vec<usize>,
    input_ids: Vec<usize>,
    coupled: bool,
) -> StencilRow {
    let grab = |kind: BlockKind| -> DVector<f64> {
        match spec.block_offset(kind) {
            Some(off) => beta.rows(off, spec.block_size(kind)).into_owned(),
            None => DVector::zeros(0),
        }
    };
    let constant = spec
        .block_offset(BlockKind::Constant)
        .map(|off| beta[off])
        .unwrap_or(0.0);
    let coupling = coupled.then(|| CouplingCoeffs {
        linear: grab(BlockKind::CouplingLinear),
        quadratic: grab(BlockKind::CouplingQuadratic),
        bilinear: grab(BlockKind::CouplingBilinear),
    });
    let mut linear = grab(BlockKind::Linear);
    if linear.is_empty() {
        linear = DVector::zeros(stencil.len());
    }
    let mut quadratic = grab(BlockKind::QuadraticUnique);
    if quadratic.is_empty() {
        quadratic = DVector::zeros(unique_pair_count(stencil.len()));
    }
    StencilRow {
        stencil,
        linear,
        quadratic,
        input_ids,
        input: grab(BlockKind::Input),
        constant,
        coupling,
    }
}

/// Infers the stencil row of DOF `i` at the fixed weights in `reg`,
/// optionally pooling sample columns from congruent rows. The presence of
/// `reduced` data marks the row as an interface row and activates the
/// coupling blocks.
#[allow(clippy::too_many_arguments)]
pub fn infer_sfom_row(
    i: usize,
    states: &DMatrix<f64>,
    reduced: Option<&DMatrix<f64>>,
    derivatives: &DMatrix<f64>,
    graph: &AdjacencyGraph,
    structure: ModelStructure,
    reg: &RegConfig,
    pooled: Option<&[usize]>,
) -> Result<StencilRow> {
    let coupled = reduced.is_some();
    let system = build_row_system(
        i,
        states,
        reduced,
        derivatives,
        graph,
        structure,
        reg,
        coupled,
        pooled.unwrap_or(&[]),
        None,
        None,
    )?;
    let (beta, _) = system.solve_at(reg.eta1, reg.eta2)?;
    Ok(split_row(
        &beta,
        &system.spec,
        graph.stencil(i)?.to_vec(),
        Vec::new(),
        coupled,
    ))
}

/// Infers every stencil row of the full-order subdomain. Rows listed in
/// `interface_set` receive coupling blocks fed by `reduced`. When `reg`
/// carries an eta1 grid, the weights are chosen on an L-curve: one global
/// pair aggregated over a seeded row subsample by default, or per row when
/// `reg.per_row_selection` is set.
#[allow(clippy::too_many_arguments)]
pub fn infer_sfom(
    graph: &AdjacencyGraph,
    states: &DMatrix<f64>,
    reduced: Option<&DMatrix<f64>>,
    derivatives: &DMatrix<f64>,
    interface_set: &[usize],
    structure: ModelStructure,
    reg: &RegConfig,
    pooling: &PoolingPolicy,
) -> Result<(SparseQuadModel, RegReport)> {
    infer_sfom_with_inputs(
        graph,
        states,
        reduced,
        derivatives,
        interface_set,
        structure,
        reg,
        pooling,
        None,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn infer_sfom_with_inputs(
    graph: &AdjacencyGraph,
    states: &DMatrix<f64>,
    reduced: Option<&DMatrix<f64>>,
    derivatives: &DMatrix<f64>,
    interface_set: &[usize],
    structure: ModelStructure,
    reg: &RegConfig,
    pooling: &PoolingPolicy,
    input: Option<&DMatrix<f64>>,
    input_map: Option<&[Vec<usize>]>,
) -> Result<(SparseQuadModel, RegReport)> {
    reg.validate()?;
    let n = graph.len();
    if states.nrows() != n {
        return Err(Error::shape("state rows", n, states.nrows()));
    }
    if derivatives.shape() != states.shape() {
        return Err(Error::shape(
            "derivative shape",
            format!("{}x{}", states.nrows(), states.ncols()),
            format!("{}x{}", derivatives.nrows(), derivatives.ncols()),
        ));
    }
    let mut interface: Vec<usize> = interface_set.to_vec();
    interface.sort_unstable();
    interface.dedup();
    if interface.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument(
            "interface index out of range".into(),
        ));
    }
    let is_interface: Vec<bool> = {
        let mut f = vec![false; n];
        for &i in &interface {
            f[i] = true;
        }
        f
    };
    if !interface.is_empty() && reduced.is_none() {
        return Err(Error::InvalidArgument(
            "interface rows require reduced coupling data".into(),
        ));
    }

    // Pooling partners, seeded per row so results do not depend on worker
    // partitioning.
    let signatures: Vec<GeometrySignature> = (0..n)
        .map(|i| signature(graph, i, is_interface[i], input_map))
        .collect::<Result<_>>()?;
    let partners: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            if pooling.count == 0 {
                return Vec::new();
            }
            let candidates: Vec<usize> = (0..n)
                .filter(|&j| j != i && signatures[j] == signatures[i])
                .collect();
            let take = pooling.count.min(candidates.len());
            if take == 0 {
                return Vec::new();
            }
            let mut rng = row_rng(pooling.seed, i);
            rand::seq::index::sample(&mut rng, candidates.len(), take)
                .into_iter()
                .map(|k| candidates[k])
                .collect()
        })
        .collect();

    let build = |i: usize| -> Result<RowSystem> {
        build_row_system(
            i,
            states,
            reduced,
            derivatives,
            graph,
            structure,
            reg,
            is_interface[i],
            &partners[i],
            input,
            input_map,
        )
        .map_err(|e| Error::RowFailure {
            row: i,
            source: Box::new(e),
        })
    };

    let systems: Vec<RowSystem> = (0..n)
        .into_par_iter()
        .map(build)
        .collect::<Result<Vec<_>>>()?;

    enum EtaChoice {
        Global(f64, f64),
        PerRow(Vec<(f64, f64)>),
    }

    let candidates = reg.candidates();
    let mut report_curve = Vec::new();
    let choice: EtaChoice =
        if !reg.is_grid_search() {
            EtaChoice::Global(reg.eta1, reg.eta2)
        } else if reg.per_row_selection {
            let mut etas = Vec::with_capacity(n);
            for (i, sys) in systems.iter().enumerate() {
                let mut points = Vec::with_capacity(candidates.len());
                for &(e1, e2) in &candidates {
                    let (beta, fit_sq) = sys.solve_at(e1, e2).map_err(|e| Error::RowFailure {
                        row: i,
                        source: Box::new(e),
                    })?;
                    points.push(LCurvePoint {
                        eta1: e1,
                        eta2: e2,
                        fit_error: fit_sq.sqrt(),
                        solution_norm: beta.norm(),
                    });
                }
                let chosen = l_curve_select(&points)?;
                etas.push((chosen.eta1, chosen.eta2));
            }
            EtaChoice::PerRow(etas)
        } else {
            // Global pair from a seeded row subsample.
            let sample_size = reg.lcurve_subsample.max(1).min(n);
            let mut rng = row_rng(pooling.seed, u32::MAX as usize + 7);
            let mut sample: Vec<usize> = if sample_size == n {
                (0..n).collect()
            } else {
                rand::seq::index::sample(&mut rng, n, sample_size).into_vec()
            };
            sample.sort_unstable();
            let mut points = Vec::with_capacity(candidates.len());
            for &(e1, e2) in &candidates {
                let mut fit_sq = 0.0;
                let mut norm_sq = 0.0;
                for &i in &sample {
                    let (beta, f) = systems[i].solve_at(e1, e2).map_err(|e| Error::RowFailure {
                        row: i,
                        source: Box::new(e),
                    })?;
                    fit_sq += f;
                    norm_sq += beta.norm_squared();
                }
                points.push(LCurvePoint {
                    eta1: e1,
                    eta2: e2,
                    fit_error: fit_sq.sqrt(),
                    solution_norm: norm_sq.sqrt(),
                });
            }
            let chosen = l_curve_select(&points)?;
            report_curve = points;
            EtaChoice::Global(chosen.eta1, chosen.eta2)
        };

    let rows: Vec<StencilRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (e1, e2) = match &choice {
                EtaChoice::Global(e1, e2) => (*e1, *e2),
                EtaChoice::PerRow(etas) => etas[i],
            };
            let (beta, _) = systems[i].solve_at(e1, e2).map_err(|e| Error::RowFailure {
                row: i,
                source: Box::new(e),
            })?;
            Ok(split_row(
                &beta,
                &systems[i].spec,
                graph.stencil(i)?.to_vec(),
                input_map.map(|m| m[i].clone()).unwrap_or_default(),
                is_interface[i],
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let max_unknowns = systems
        .iter()
        .map(|s| s.spec.total_size())
        .max()
        .unwrap_or(0);
    let min_samples = systems.iter().map(|s| s.n_samples).min().unwrap_or(0);
    // Per-row selection has no single representative pair.
    let (eta1, eta2) = match &choice {
        EtaChoice::Global(e1, e2) => (*e1, *e2),
        EtaChoice::PerRow(_) => (f64::NAN, f64::NAN),
    };
    let report = RegReport {
        eta1,
        eta2,
        l_curve: report_curve,
        underdetermined: min_samples < max_unknowns,
        unknown_count: max_unknowns,
        sample_count: min_samples,
    };
    Ok((
        SparseQuadModel {
            n,
            reduced_dim: if interface.is_empty() {
                0
            } else {
                reduced.map(|m| m.nrows()).unwrap_or(0)
            },
            interface_ids: interface,
            rows,
        },
        report,
    ))
}

/// Evaluates the sparse right-hand side: per-row dot products of the stencil
/// blocks with the matching local feature vector.
pub fn evaluate_sparse_rhs(
    model: &SparseQuadModel,
    state: &DVector<f64>,
    reduced: Option<&DVector<f64>>,
    input: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    if state.len() != model.n {
        return Err(Error::shape("state length", model.n, state.len()));
    }
    if model.has_coupling() {
        match reduced {
            Some(xhat) if xhat.len() == model.reduced_dim => {}
            Some(xhat) => {
                return Err(Error::shape(
                    "reduced state length",
                    model.reduced_dim,
                    xhat.len(),
                ))
            }
            None => {
                return Err(Error::InvalidArgument(
                    "coupled sparse model needs the reduced state".into(),
                ))
            }
        }
    }
    let mut out = DVector::zeros(model.n);
    for (i, row) in model.rows.iter().enumerate() {
        let local = DVector::from_fn(row.stencil.len(), |k, _| state[row.stencil[k]]);
        let mut acc = row.linear.dot(&local) + row.constant;
        if !row.quadratic.is_empty() {
            acc += row.quadratic.dot(&unique_quadratic_lift(&local));
        }
        if let Some(c) = &row.coupling {
            let xhat = reduced.expect("validated above");
            if !c.linear.is_empty() {
                acc += c.linear.dot(xhat);
            }
            if !c.quadratic.is_empty() {
                acc += c.quadratic.dot(&unique_quadratic_lift(xhat));
            }
            if !c.bilinear.is_empty() {
                acc += c
                    .bilinear
                    .dot(&crate::regression::bilinear_lift(&local, xhat));
            }
        }
        if !row.input.is_empty() {
            let u = input.ok_or_else(|| {
                Error::InvalidArgument("model has input terms but no input was given".into())
            })?;
            for (k, &l) in row.input_ids.iter().enumerate() {
                acc += row.input[k] * u[l];
            }
        }
        out[i] = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Heat-equation snapshot data with derivatives taken exactly from the
    /// generating stencil operator.
    fn heat_data(
        n: usize,
        n_traj: usize,
        steps: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let nu = 0.01;
        let dz = 0.02;
        let w = nu / (dz * dz); // 25
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = -2.0 * w;
            a[(i, (i + 1) % n)] = w;
            a[(i, (i + n - 1) % n)] = w;
        }
        let mut rng = StdRng::seed_from_u64(123);
        let dt = 0.005;
        let mut cols = Vec::new();
        for _ in 0..n_traj {
            let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            cols.push(x.clone());
            for _ in 0..steps {
                let k1 = &a * &x;
                let k2 = &a * (&x + &k1 * (dt / 2.0));
                let k3 = &a * (&x + &k2 * (dt / 2.0));
                let k4 = &a * (&x + &k3 * dt);
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
                cols.push(x.clone());
            }
        }
        let x = DMatrix::from_columns(&cols);
        let dx = &a * &x;
        (a, x, dx)
    }

    #[test]
    fn index_sets_periodic_interior() {
        let g = AdjacencyGraph::cycle(10);
        let sets = build_index_sets(&g, 4, 0, None).unwrap();
        assert_eq!(sets.stencil, vec![3, 4, 5]);
        assert_eq!(sets.quad_size, 6);
        // linear + quadratic + constant unknowns
        assert_eq!(sets.stencil.len() + sets.quad_size + 1, 10);
    }

    #[test]
    fn index_sets_isolated_and_grid() {
        let g = AdjacencyGraph::new(vec![vec![0]]).unwrap();
        let sets = build_index_sets(&g, 0, 4, None).unwrap();
        assert_eq!(sets.quad_size, 1);
        assert_eq!(sets.bilinear_size, 4);

        let g = AdjacencyGraph::grid5(5, 5);
        let sets = build_index_sets(&g, 12, 0, None).unwrap();
        assert_eq!(sets.stencil.len(), 5);
        assert_eq!(sets.quad_size, 15);
    }

    #[test]
    fn graph_validation() {
        assert!(AdjacencyGraph::new(vec![vec![0, 1], vec![0]]).is_err()); // 1 missing itself
        assert!(AdjacencyGraph::new(vec![vec![0, 5]]).is_err()); // out of range
        let g = AdjacencyGraph::new(vec![vec![1, 0, 1], vec![1]]).unwrap();
        assert_eq!(g.stencil(0).unwrap(), &[0, 1]); // sorted, deduplicated
    }

    #[test]
    fn heat_stencil_oracle() {
        let (_, x, dx) = heat_data(12, 6, 8);
        let g = AdjacencyGraph::cycle(12);
        let reg = RegConfig::fixed(0.0, 0.0);
        let row = infer_sfom_row(
            5,
            &x,
            None,
            &dx,
            &g,
            ModelStructure::linear_only(),
            &reg,
            None,
        )
        .unwrap();
        let expected = [25.0, -50.0, 25.0];
        for (got, want) in row.linear.iter().zip(expected) {
            assert!(
                (got - want).abs() <= 1e-6 * want.abs(),
                "stencil {:?}",
                row.linear.as_slice()
            );
        }
        assert!(row.coupling.is_none());
    }

    #[test]
    fn scalar_exponential_decay() {
        let g = AdjacencyGraph::new(vec![vec![0]]).unwrap();
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let x = DMatrix::from_fn(1, 50, |_, j| (-times[j]).exp());
        let dx = -x.clone();
        let row = infer_sfom_row(
            0,
            &x,
            None,
            &dx,
            &g,
            ModelStructure::linear_only(),
            &RegConfig::fixed(0.0, 0.0),
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(row.linear[0], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn path_graph_linear_recovery() {
        let n = 10;
        let g = AdjacencyGraph::path(n);
        let mut rng = StdRng::seed_from_u64(7);
        // Known operator with the path sparsity pattern.
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in g.stencil(i).unwrap() {
                a[(i, j)] = rng.random_range(-2.0..2.0);
            }
        }
        let x = random_matrix(&mut rng, n, 80);
        let dx = &a * &x;
        let (model, _) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            ModelStructure::linear_only(),
            &RegConfig::fixed(0.0, 0.0),
            &PoolingPolicy::none(),
        )
        .unwrap();
        let recovered = model.assemble_linear();
        let rel = (&recovered - &a).norm() / a.norm();
        assert!(rel <= 1e-6, "recovery error {rel:.2e}");
        assert!(!model.has_coupling());
    }

    #[test]
    fn interface_rows_get_coupling_blocks() {
        let n = 8;
        let r = 2;
        let g = AdjacencyGraph::path(n);
        let mut rng = StdRng::seed_from_u64(3);
        let x = random_matrix(&mut rng, n, 60);
        let xhat = random_matrix(&mut rng, r, 60);
        let dx = random_matrix(&mut rng, n, 60);
        let (model, _) = infer_sfom(
            &g,
            &x,
            Some(&xhat),
            &dx,
            &[0],
            ModelStructure::linear_quadratic(),
            &RegConfig::fixed(1e-6, 0.0),
            &PoolingPolicy::none(),
        )
        .unwrap();
        assert!(model.rows[0].coupling.is_some());
        for row in &model.rows[1..] {
            assert!(row.coupling.is_none());
        }
        let c = model.rows[0].coupling.as_ref().unwrap();
        assert_eq!(c.linear.len(), r);
        assert_eq!(c.quadratic.len(), 3);
        assert_eq!(c.bilinear.len(), model.rows[0].stencil.len() * r);
    }

    #[test]
    fn coupled_linear_recovery() {
        // Full coupled system: dx_F = A_FF x_F + A_FR xhat on a path graph.
        let n = 6;
        let r = 3;
        let g = AdjacencyGraph::path(n);
        let mut rng = StdRng::seed_from_u64(11);
        let mut a_ff = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in g.stencil(i).unwrap() {
                a_ff[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        let mut a_fr = DMatrix::zeros(n, r);
        let interface = vec![0usize, 5];
        for &i in &interface {
            for k in 0..r {
                a_fr[(i, k)] = rng.random_range(-1.0..1.0);
            }
        }
        let x = random_matrix(&mut rng, n, 100);
        let xhat = random_matrix(&mut rng, r, 100);
        let dx = &a_ff * &x + &a_fr * &xhat;
        let (model, _) = infer_sfom(
            &g,
            &x,
            Some(&xhat),
            &dx,
            &interface,
            ModelStructure::linear_only(),
            &RegConfig::fixed(0.0, 0.0),
            &PoolingPolicy::none(),
        )
        .unwrap();
        let rec = model.assemble_linear();
        assert!((&rec - &a_ff).norm() / a_ff.norm() <= 1e-6);
        for &i in &interface {
            let c = model.rows[i].coupling.as_ref().unwrap();
            for k in 0..r {
                assert_abs_diff_eq!(c.linear[k], a_fr[(i, k)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rhs_matches_assembled_operator() {
        let (a, x, dx) = heat_data(10, 4, 6);
        let g = AdjacencyGraph::cycle(10);
        let (model, _) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            ModelStructure::linear_only(),
            &RegConfig::fixed(0.0, 0.0),
            &PoolingPolicy::none(),
        )
        .unwrap();
        let profile = DVector::from_fn(10, |i, _| (i as f64 * 0.63).sin());
        let via_rows = evaluate_sparse_rhs(&model, &profile, None, None).unwrap();
        let via_matrix = model.assemble_linear() * &profile;
        assert!((&via_rows - &via_matrix).abs().max() <= 1e-12);
        // and the assembled operator matches the generator
        assert!((model.assemble_linear() - &a).norm() / a.norm() <= 1e-6);
    }

    #[test]
    fn rhs_trivial_rows() {
        let g = AdjacencyGraph::new(vec![vec![0]]).unwrap();
        let model = SparseQuadModel {
            n: 1,
            reduced_dim: 0,
            interface_ids: vec![],
            rows: vec![StencilRow {
                stencil: g.stencil(0).unwrap().to_vec(),
                linear: DVector::zeros(1),
                quadratic: DVector::zeros(1),
                input_ids: vec![],
                input: DVector::zeros(0),
                constant: 3.0,
                coupling: None,
            }],
        };
        let out = evaluate_sparse_rhs(&model, &DVector::from_vec(vec![7.0]), None, None).unwrap();
        assert_abs_diff_eq!(out[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn pooling_matches_unpooled_for_constant_stencil() {
        let (_, x, dx) = heat_data(16, 5, 8);
        let g = AdjacencyGraph::cycle(16);
        let reg = RegConfig::fixed(0.0, 0.0);
        let structure = ModelStructure::linear_only();
        let (plain, _) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            structure,
            &reg,
            &PoolingPolicy::none(),
        )
        .unwrap();
        let (pooled, _) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            structure,
            &reg,
            &PoolingPolicy::new(5, 42),
        )
        .unwrap();
        for (a, b) in plain.rows.iter().zip(&pooled.rows) {
            for (va, vb) in a.linear.iter().zip(b.linear.iter()) {
                assert!((va - vb).abs() <= 1e-6, "pooled {vb} vs plain {va}");
            }
        }
    }

    #[test]
    fn pooling_is_seed_deterministic() {
        let (_, x, dx) = heat_data(12, 3, 5);
        let g = AdjacencyGraph::cycle(12);
        let reg = RegConfig::fixed(1e-8, 0.0);
        let run = |seed| {
            infer_sfom(
                &g,
                &x,
                None,
                &dx,
                &[],
                ModelStructure::linear_quadratic(),
                &reg,
                &PoolingPolicy::new(3, seed),
            )
            .unwrap()
            .0
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let mut rng = StdRng::seed_from_u64(1);
        let g = AdjacencyGraph::path(6);
        let x = random_matrix(&mut rng, 6, 20);
        let dx = random_matrix(&mut rng, 6, 20);
        // Row 0 has a 2-point stencil, row 3 a 3-point one.
        let err = infer_sfom_row(
            0,
            &x,
            None,
            &dx,
            &g,
            ModelStructure::linear_only(),
            &RegConfig::fixed(0.0, 0.0),
            Some(&[3]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::GeometryMismatch(_)), "{err}");
    }

    #[test]
    fn row_inference_is_order_independent() {
        let (_, x, dx) = heat_data(10, 4, 6);
        let g = AdjacencyGraph::cycle(10);
        let reg = RegConfig::fixed(1e-9, 1e-10);
        let structure = ModelStructure::linear_quadratic();
        let (model, _) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            structure,
            &reg,
            &PoolingPolicy::none(),
        )
        .unwrap();
        // Rows inferred individually, in reverse order, agree exactly.
        for i in (0..10).rev() {
            let row = infer_sfom_row(i, &x, None, &dx, &g, structure, &reg, None).unwrap();
            assert_eq!(row, model.rows[i]);
        }
    }

    #[test]
    fn eta2_lowers_self_coefficient() {
        let (_, x, dx) = heat_data(10, 4, 6);
        let g = AdjacencyGraph::cycle(10);
        let structure = ModelStructure::linear_only();
        let base = infer_sfom_row(
            2,
            &x,
            None,
            &dx,
            &g,
            structure,
            &RegConfig::fixed(1e-6, 0.0),
            None,
        )
        .unwrap();
        let pushed = infer_sfom_row(
            2,
            &x,
            None,
            &dx,
            &g,
            structure,
            &RegConfig::fixed(1e-6, 1e-3),
            None,
        )
        .unwrap();
        // Self coefficient sits at the middle of the 3-point stencil.
        assert!(pushed.linear[1] < base.linear[1]);
    }

    #[test]
    fn global_lcurve_reports_grid() {
        let (_, x, dx) = heat_data(10, 4, 6);
        let g = AdjacencyGraph::cycle(10);
        let reg = RegConfig::fixed(0.0, 0.0).with_grid(
            crate::regression::log_grid(1e-8, 1e-3, 20),
            crate::regression::Eta2Rule::MultipleOfEta1(50.0),
        );
        let (_, report) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            ModelStructure::linear_quadratic(),
            &reg,
            &PoolingPolicy::new(2, 1),
        )
        .unwrap();
        assert_eq!(report.l_curve.len(), 20);
        assert!(report.eta1 >= 1e-8 * 0.999 && report.eta1 <= 1e-3 * 1.001);
        assert_abs_diff_eq!(report.eta2, 50.0 * report.eta1, epsilon = 1e-18);
    }

    #[test]
    fn per_row_selection_runs_and_recovers() {
        let (a, x, dx) = heat_data(10, 4, 6);
        let g = AdjacencyGraph::cycle(10);
        let mut reg = RegConfig::fixed(0.0, 0.0).with_grid(
            crate::regression::log_grid(1e-12, 1e-6, 8),
            crate::regression::Eta2Rule::MultipleOfEta1(0.0),
        );
        reg.per_row_selection = true;
        let (model, report) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            ModelStructure::linear_only(),
            &reg,
            &PoolingPolicy::none(),
        )
        .unwrap();
        // No single representative pair exists in per-row mode.
        assert!(report.eta1.is_nan());
        let rel = (model.assemble_linear() - &a).norm() / a.norm();
        assert!(rel <= 1e-4, "per-row recovery error {rel:.2e}");
    }

    #[test]
    fn nonzero_budget_of_assembled_operator() {
        let g = AdjacencyGraph::cycle(12);
        let (_, x, dx) = heat_data(12, 3, 5);
        let (model, _) = infer_sfom(
            &g,
            &x,
            None,
            &dx,
            &[],
            ModelStructure::linear_only(),
            &RegConfig::fixed(1e-10, 0.0),
            &PoolingPolicy::none(),
        )
        .unwrap();
        let a = model.assemble_linear();
        let nnz = a.iter().filter(|v| **v != 0.0).count();
        let budget: usize = (0..12).map(|i| g.stencil(i).unwrap().len()).sum();
        assert!(nnz <= budget);
    }

    #[test]
    fn restriction_maps_indices() {
        let g = AdjacencyGraph::cycle(10);
        let (sub, globals) = g.restrict(&[5, 6, 7, 8, 9]).unwrap();
        assert_eq!(globals, vec![5, 6, 7, 8, 9]);
        assert_eq!(sub.stencil(0).unwrap(), &[0, 1]); // 5: {4,5,6} -> {5,6} locally
        assert_eq!(sub.stencil(2).unwrap(), &[1, 2, 3]);
        assert_eq!(sub.stencil(4).unwrap(), &[3, 4]); // 9: {8,9,0} -> {8,9}
    }
}
