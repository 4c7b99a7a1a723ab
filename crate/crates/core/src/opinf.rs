//! Inference of reduced quadratic operators from projected snapshot data,
//! standalone or with interface-coupling input blocks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{
    bilinear_features, bilinear_lift, l_curve_select, quadratic_unique_features,
    unique_pair_count, unique_quadratic_lift, BlockKind, FeatureBlock, FeatureBlockSpec,
    LCurvePoint, NormalEquations, RegConfig, RegReport,
};

/// Which polynomial terms the inferred model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelStructure {
    pub linear: bool,
    pub quadratic: bool,
    pub input: bool,
    pub constant: bool,
}

impl Default for ModelStructure {
    fn default() -> Self {
        Self::linear_quadratic()
    }
}

impl ModelStructure {
    pub fn linear_only() -> Self {
        Self {
            linear: true,
            quadratic: false,
            input: false,
            constant: false,
        }
    }

    pub fn linear_quadratic() -> Self {
        Self {
            linear: true,
            quadratic: true,
            input: false,
            constant: false,
        }
    }

    pub fn full() -> Self {
        Self {
            linear: true,
            quadratic: true,
            input: true,
            constant: true,
        }
    }
}

/// Operators of a quadratic-structure dynamical system
/// dx/dt = A x + Hc q(x) + B u + c, with the quadratic term in compressed
/// unique form (`q` is the unique quadratic lift).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadModel {
    /// Linear operator (p x p).
    pub linear: DMatrix<f64>,
    /// Compressed quadratic operator (p x p(p+1)/2).
    pub quadratic: DMatrix<f64>,
    /// Input operator (p x k); k may be zero.
    pub input: DMatrix<f64>,
    /// Constant forcing (p).
    pub constant: DVector<f64>,
}

impl QuadModel {
    pub fn zeros(order: usize, input_dim: usize) -> Self {
        Self {
            linear: DMatrix::zeros(order, order),
            quadratic: DMatrix::zeros(order, unique_pair_count(order)),
            input: DMatrix::zeros(order, input_dim),
            constant: DVector::zeros(order),
        }
    }

    pub fn order(&self) -> usize {
        self.linear.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.order();
        if self.linear.ncols() != p
            || self.quadratic.nrows() != p
            || self.quadratic.ncols() != unique_pair_count(p)
            || self.input.nrows() != p
            || self.constant.len() != p
        {
            return Err(Error::shape(
                "quadratic model operators",
                format!("order {p}"),
                "inconsistent block shapes",
            ));
        }
        let finite = self.linear.iter().all(|v| v.is_finite())
            && self.quadratic.iter().all(|v| v.is_finite())
            && self.input.iter().all(|v| v.is_finite())
            && self.constant.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(
                "model operators contain non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// Right-hand side A x + Hc q(x) + B u + c. A missing `u` counts as zero
    /// input.
    pub fn rhs(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> DVector<f64> {
        let mut out = &self.linear * x + &self.constant;
        out += &self.quadratic * unique_quadratic_lift(x);
        if let Some(u) = u {
            if self.input_dim() > 0 {
                out += &self.input * u;
            }
        }
        out
    }
}

/// Reduced model with interface-coupling operators: the reduced dynamics
/// additionally read the interface state x_I of the full-order subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledReducedModel {
    pub core: QuadModel,
    /// A_RI (r x n_I).
    pub coupling_linear: DMatrix<f64>,
    /// H_RII in unique form (r x n_I(n_I+1)/2).
    pub coupling_quadratic: DMatrix<f64>,
    /// H_RRI on the bilinear lift x̂ ⊗ x_I (r x r*n_I).
    pub coupling_bilinear: DMatrix<f64>,
    /// Full-order DOF indices the interface rows correspond to.
    pub interface_ids: Vec<usize>,
}

impl CoupledReducedModel {
    pub fn order(&self) -> usize {
        self.core.order()
    }

    pub fn interface_dim(&self) -> usize {
        self.interface_ids.len()
    }
}

/// Block layout of the OpInf data matrix for the given structure and
/// dimensions. Coupling blocks appear only when `n_interface > 0` and gate
/// on the same structure flags as their local counterparts.
pub fn feature_spec(
    structure: ModelStructure,
    r: usize,
    n_interface: usize,
    input_dim: usize,
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
    if structure.linear {
        push(BlockKind::Linear, r);
        push(BlockKind::CouplingLinear, n_interface);
    }
    if structure.quadratic {
        push(BlockKind::QuadraticUnique, unique_pair_count(r));
        push(BlockKind::CouplingQuadratic, unique_pair_count(n_interface));
        push(BlockKind::CouplingBilinear, r * n_interface);
    }
    if structure.input {
        push(BlockKind::Input, input_dim);
    }
    if structure.constant {
        push(BlockKind::Constant, 1);
    }
    if blocks.is_empty() {
        return Err(Error::InvalidArgument(
            "model structure selects no terms".into(),
        ));
    }
    // The Gershgorin penalty acts on the linear self-coefficient; rows pick
    // their own diagonal position at solve time.
    let diag = if structure.linear { Some(0) } else { None };
    FeatureBlockSpec::new(blocks, diag)
}

/// Assembles the stacked feature matrix matching [`feature_spec`].
fn assemble_features(
    spec: &FeatureBlockSpec,
    xhat: &DMatrix<f64>,
    x_i: Option<&DMatrix<f64>>,
    u: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n_t = xhat.ncols();
    let mut rows: Vec<DMatrix<f64>> = Vec::new();
    for b in &spec.blocks {
        let block = match b.kind {
            BlockKind::Linear => xhat.clone(),
            BlockKind::CouplingLinear => x_i.expect("interface data").clone(),
            BlockKind::QuadraticUnique => quadratic_unique_features(xhat),
            BlockKind::CouplingQuadratic => quadratic_unique_features(x_i.expect("interface data")),
            BlockKind::CouplingBilinear => bilinear_features(xhat, x_i.expect("interface data"))?,
            BlockKind::Input => u.clone(),
            BlockKind::Constant => DMatrix::from_element(1, n_t, 1.0),
        };
        if block.nrows() != b.size {
            return Err(Error::shape("feature block rows", b.size, block.nrows()));
        }
        rows.push(block);
    }
    let total = spec.total_size();
    let mut out = DMatrix::zeros(total, n_t);
    let mut offset = 0;
    for block in rows {
        out.rows_mut(offset, block.nrows()).copy_from(&block);
        offset += block.nrows();
    }
    Ok(out)
}

/// Solves the block LS problem for every reduced row, selecting the
/// regularization pair on the L-curve when a grid is configured. The
/// Gershgorin diagonal position for row i is `linear_offset + i`.
fn solve_block_ls(
    data: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    spec: &FeatureBlockSpec,
    reg: &RegConfig,
) -> Result<(DMatrix<f64>, RegReport)> {
    reg.validate()?;
    let m = spec.total_size();
    let q = targets.nrows();
    let n_t = data.ncols();
    if targets.ncols() != n_t {
        return Err(Error::shape("target columns", n_t, targets.ncols()));
    }
    let underdetermined = n_t < m;
    if underdetermined {
        log::warn!(
            "least-squares problem is underdetermined: {n_t} samples for {m} unknowns; \
             proceeding with regularization"
        );
    }
    let linear_offset = spec.block_offset(BlockKind::Linear);
    let rhs_all = data * targets.transpose(); // m x q

    let solve_at = |eta1: f64, eta2: f64| -> Result<DMatrix<f64>> {
        let ne = NormalEquations::new(data, eta1, &spec.scale_diagonal())?;
        let mut ops = DMatrix::zeros(q, m);
        for row in 0..q {
            let diag = linear_offset.map(|off| off + row);
            let beta = ne.solve(&rhs_all.column(row).into_owned(), eta2, diag);
            ops.row_mut(row).copy_from(&beta.transpose());
        }
        Ok(ops)
    };

    let candidates = reg.candidates();
    let mut points = Vec::with_capacity(candidates.len());
    let mut solutions = Vec::with_capacity(candidates.len());
    for &(e1, e2) in &candidates {
        let ops = solve_at(e1, e2)?;
        let fit_error = (&ops * data - targets).norm();
        points.push(LCurvePoint {
            eta1: e1,
            eta2: e2,
            fit_error,
            solution_norm: ops.norm(),
        });
        solutions.push(ops);
    }
    let (chosen, l_curve) = if reg.is_grid_search() {
        (l_curve_select(&points)?, points.clone())
    } else {
        (points[0], Vec::new())
    };
    let idx = points
        .iter()
        .position(|p| p.eta1 == chosen.eta1 && p.eta2 == chosen.eta2)
        .expect("chosen candidate comes from the list");
    let report = RegReport {
        eta1: chosen.eta1,
        eta2: chosen.eta2,
        l_curve,
        underdetermined,
        unknown_count: m,
        sample_count: n_t,
    };
    Ok((solutions.swap_remove(idx), report))
}

fn extract_block(
    ops: &DMatrix<f64>,
    spec: &FeatureBlockSpec,
    kind: BlockKind,
    rows: usize,
    cols: usize,
) -> DMatrix<f64> {
    match spec.block_offset(kind) {
        Some(offset) => ops.columns(offset, cols).into_owned(),
        None => DMatrix::zeros(rows, cols),
    }
}

/// Infers a reduced quadratic model from projected snapshots and their time
/// derivatives.
pub fn infer_opinf(
    xhat: &DMatrix<f64>,
    u: &DMatrix<f64>,
    dxhat: &DMatrix<f64>,
    structure: ModelStructure,
    reg: &RegConfig,
) -> Result<(QuadModel, RegReport)> {
    let (model, report) = infer_opinf_coupled(
        xhat,
        &DMatrix::zeros(0, xhat.ncols()),
        u,
        dxhat,
        &[],
        structure,
        reg,
    )?;
    Ok((model.core, report))
}

/// Infers a reduced quadratic model with interface-coupling blocks. The rows
/// of `x_interface` carry the full-order interface DOFs listed in
/// `interface_ids`.
pub fn infer_opinf_coupled(
    xhat: &DMatrix<f64>,
    x_interface: &DMatrix<f64>,
    u: &DMatrix<f64>,
    dxhat: &DMatrix<f64>,
    interface_ids: &[usize],
    structure: ModelStructure,
    reg: &RegConfig,
) -> Result<(CoupledReducedModel, RegReport)> {
    let r = xhat.nrows();
    let n_t = xhat.ncols();
    let n_i = x_interface.nrows();
    if n_i != interface_ids.len() {
        return Err(Error::shape(
            "interface rows vs interface_ids",
            interface_ids.len(),
            n_i,
        ));
    }
    if dxhat.shape() != xhat.shape() {
        return Err(Error::shape(
            "projected derivative shape",
            format!("{r}x{n_t}"),
            format!("{}x{}", dxhat.nrows(), dxhat.ncols()),
        ));
    }
    if x_interface.ncols() != n_t && n_i > 0 {
        return Err(Error::shape("interface columns", n_t, x_interface.ncols()));
    }
    if structure.input && u.nrows() > 0 && u.ncols() != n_t {
        return Err(Error::shape("input columns", n_t, u.ncols()));
    }

    let input_dim = if structure.input { u.nrows() } else { 0 };
    let spec = feature_spec(structure, r, n_i, input_dim, reg)?;
    let x_i = (n_i > 0).then_some(x_interface);
    let data = assemble_features(&spec, xhat, x_i, u)?;
    let (ops, report) = solve_block_ls(&data, dxhat, &spec, reg)?;

    let k = u.nrows();
    let mut core = QuadModel::zeros(r, k);
    core.linear = extract_block(&ops, &spec, BlockKind::Linear, r, r);
    core.quadratic = extract_block(&ops, &spec, BlockKind::QuadraticUnique, r, unique_pair_count(r));
    if structure.input && input_dim > 0 {
        core.input = extract_block(&ops, &spec, BlockKind::Input, r, input_dim);
    }
    if structure.constant {
        core.constant = extract_block(&ops, &spec, BlockKind::Constant, r, 1).column(0).into_owned();
    }
    let model = CoupledReducedModel {
        core,
        coupling_linear: extract_block(&ops, &spec, BlockKind::CouplingLinear, r, n_i),
        coupling_quadratic: extract_block(
            &ops,
            &spec,
            BlockKind::CouplingQuadratic,
            r,
            unique_pair_count(n_i),
        ),
        coupling_bilinear: extract_block(&ops, &spec, BlockKind::CouplingBilinear, r, r * n_i),
        interface_ids: interface_ids.to_vec(),
    };
    Ok((model, report))
}

/// Reduced right-hand side of the coupled system:
/// A_RR x̂ + A_RI x_I + H_RRR q(x̂) + H_RII q(x_I) + H_RRI (x̂ ⊗ x_I) + B u + c.
pub fn evaluate_reduced_rhs(
    model: &CoupledReducedModel,
    xhat: &DVector<f64>,
    x_interface: &DVector<f64>,
    u: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let r = model.order();
    let n_i = model.interface_dim();
    if xhat.len() != r {
        return Err(Error::shape("reduced state length", r, xhat.len()));
    }
    if x_interface.len() != n_i {
        return Err(Error::shape("interface state length", n_i, x_interface.len()));
    }
    let mut out = model.core.rhs(xhat, u);
    if n_i > 0 {
        out += &model.coupling_linear * x_interface;
        out += &model.coupling_quadratic * unique_quadratic_lift(x_interface);
        out += &model.coupling_bilinear * bilinear_lift(xhat, x_interface);
    }
    Ok(out)
}
