//! Domain decomposition into reduced and full-order subdomains, coupled
//! inference orchestration, and overlap blending.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SnapshotSet;
use crate::error::{Error, Result};
use crate::opinf::{infer_opinf_coupled, CoupledReducedModel, ModelStructure};
use crate::pod::{compute_basis, ReducedBasis, TruncationRule};
use crate::regression::{RegConfig, RegReport};
use crate::sfom::{infer_sfom, AdjacencyGraph, PoolingPolicy, SparseQuadModel};

/// Split of the DOF set into a reduced and a full-order subdomain.
///
/// Overlap DOFs belong to both sides: they carry a reduced reconstruction
/// and a full-order value, blended by the per-DOF coordinate in `blend`
/// (0 at the ROM-side end of the overlap, 1 at the FOM-side end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDecomposition {
    pub n: usize,
    /// Reduced-subdomain DOFs, ascending (includes the overlap).
    pub rom_ids: Vec<usize>,
    /// Full-order DOFs, ascending (includes the overlap).
    pub fom_ids: Vec<usize>,
    /// FOM DOFs with at least one stencil neighbor outside the FOM
    /// subdomain; these feed the reduced model and carry coupling blocks.
    pub interface_ids: Vec<usize>,
    /// Overlap DOFs, ordered from the ROM side to the FOM side.
    pub overlap_ids: Vec<usize>,
    /// Blend coordinate per overlap DOF, monotone in [0, 1].
    pub blend: Vec<f64>,
}

impl DomainDecomposition {
    pub fn n_rom(&self) -> usize {
        self.rom_ids.len()
    }

    pub fn n_fom(&self) -> usize {
        self.fom_ids.len()
    }

    pub fn n_interface(&self) -> usize {
        self.interface_ids.len()
    }
}

/// Builds a decomposition from the full-order DOF set and an ordered overlap
/// strip. The reduced subdomain is the complement plus the overlap; the
/// interface set contains every FOM DOF with a stencil neighbor outside the
/// FOM subdomain.
pub fn decompose(
    graph: &AdjacencyGraph,
    fom_ids: &[usize],
    overlap_ids: &[usize],
) -> Result<DomainDecomposition> {
    let n = graph.len();
    let mut fom: Vec<usize> = fom_ids.to_vec();
    fom.sort_unstable();
    fom.dedup();
    if fom.is_empty() || fom.len() == n {
        return Err(Error::InvalidArgument(
            "the full-order subdomain must be a nonempty proper subset".into(),
        ));
    }
    if fom.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument("FOM index out of range".into()));
    }
    let in_fom = |i: usize| fom.binary_search(&i).is_ok();
    for &o in overlap_ids {
        if !in_fom(o) {
            return Err(Error::InvalidArgument(format!(
                "overlap DOF {o} is not part of the FOM subdomain"
            )));
        }
    }
    // The overlap strip must be connected along its given ordering and
    // anchored to the ROM side at its first entry.
    for w in overlap_ids.windows(2) {
        if !graph.stencil(w[0])?.contains(&w[1]) {
            return Err(Error::InvalidArgument(format!(
                "overlap ordering is disconnected between DOFs {} and {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(&first) = overlap_ids.first() {
        let touches_rom = graph.stencil(first)?.iter().any(|&j| !in_fom(j));
        if !touches_rom {
            return Err(Error::InvalidArgument(
                "the first overlap DOF must touch the reduced subdomain".into(),
            ));
        }
    }

    let mut rom: Vec<usize> = (0..n).filter(|&i| !in_fom(i)).collect();
    rom.extend_from_slice(overlap_ids);
    rom.sort_unstable();
    rom.dedup();

    let interface: Vec<usize> = fom
        .iter()
        .copied()
        .filter(|&i| {
            graph
                .stencil(i)
                .map(|q| q.iter().any(|&j| j != i && !in_fom(j)))
                .unwrap_or(false)
        })
        .collect();

    let m = overlap_ids.len();
    let blend: Vec<f64> = match m {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..m).map(|k| k as f64 / (m - 1) as f64).collect(),
    };

    Ok(DomainDecomposition {
        n,
        rom_ids: rom,
        fom_ids: fom,
        interface_ids: interface,
        overlap_ids: overlap_ids.to_vec(),
        blend,
    })
}

/// A reduced model and a sparse full-order model joined over a domain
/// decomposition.
#[derive(Debug, Clone)]
pub struct CoupledModel {
    pub dd: DomainDecomposition,
    pub rom: CoupledReducedModel,
    pub basis: ReducedBasis,
    pub fom: SparseQuadModel,
}

/// Inference reports of the two coupled halves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledReport {
    pub opinf: RegReport,
    pub sfom: RegReport,
    pub basis_energy: f64,
    pub basis_rank: usize,
}

/// Runs the full coupled inference: basis on the ROM subdomain, reduced
/// inference with interface inputs, per-row sparse inference with reduced
/// coupling features on the interface rows.
#[allow(clippy::too_many_arguments)]
pub fn infer_coupled(
    training: &SnapshotSet,
    graph: &AdjacencyGraph,
    dd: &DomainDecomposition,
    rule: TruncationRule,
    structure: ModelStructure,
    reg_rom: &RegConfig,
    reg_fom: &RegConfig,
    pooling: &PoolingPolicy,
) -> Result<(CoupledModel, CoupledReport)> {
    if training.n_states() != dd.n {
        return Err(Error::shape("snapshot rows", dd.n, training.n_states()));
    }
    if graph.len() != dd.n {
        return Err(Error::shape("graph size", dd.n, graph.len()));
    }
    let derivatives = training.derivatives_or_estimate()?;

    let select_rows = |m: &DMatrix<f64>, ids: &[usize]| -> DMatrix<f64> {
        DMatrix::from_fn(ids.len(), m.ncols(), |i, j| m[(ids[i], j)])
    };

    // Reduced half.
    let x_rom = select_rows(&training.states, &dd.rom_ids);
    let dx_rom = select_rows(&derivatives, &dd.rom_ids);
    let basis = compute_basis(&x_rom, rule)?;
    let xhat = basis.basis.transpose() * &x_rom;
    let dxhat = basis.basis.transpose() * &dx_rom;
    let x_interface = select_rows(&training.states, &dd.interface_ids);
    let (rom, opinf_report) = infer_opinf_coupled(
        &xhat,
        &x_interface,
        &training.inputs,
        &dxhat,
        &dd.interface_ids,
        structure,
        reg_rom,
    )?;

    // Full-order half on the restricted graph.
    let (local_graph, fom_globals) = graph.restrict(&dd.fom_ids)?;
    debug_assert_eq!(fom_globals, dd.fom_ids);
    let x_fom = select_rows(&training.states, &dd.fom_ids);
    let dx_fom = select_rows(&derivatives, &dd.fom_ids);
    let local_interface: Vec<usize> = dd
        .interface_ids
        .iter()
        .map(|&g| {
            dd.fom_ids
                .binary_search(&g)
                .map_err(|_| Error::InvalidArgument(format!("interface DOF {g} not in FOM set")))
        })
        .collect::<Result<_>>()?;
    let (fom, sfom_report) = infer_sfom(
        &local_graph,
        &x_fom,
        Some(&xhat),
        &dx_fom,
        &local_interface,
        structure,
        reg_fom,
        pooling,
    )?;

    let report = CoupledReport {
        opinf: opinf_report,
        sfom: sfom_report,
        basis_energy: basis.retained_energy(),
        basis_rank: basis.rank,
    };
    Ok((
        CoupledModel {
            dd: dd.clone(),
            rom,
            basis,
            fom,
        },
        report,
    ))
}

/// Linear blend over the overlap strip:
/// out_j = (1 - s_j) * rom_recon_j + s_j * fom_vals_j.
pub fn blend_overlap(
    rom_recon: &DVector<f64>,
    fom_vals: &DVector<f64>,
    dd: &DomainDecomposition,
) -> Result<DVector<f64>> {
    let m = dd.overlap_ids.len();
    if rom_recon.len() != m || fom_vals.len() != m {
        return Err(Error::shape(
            "overlap blend lengths",
            m,
            format!("{} and {}", rom_recon.len(), fom_vals.len()),
        ));
    }
    Ok(DVector::from_fn(m, |j, _| {
        let s = dd.blend[j];
        (1.0 - s) * rom_recon[j] + s * fom_vals[j]
    }))
}

/// Assembles the full state vector from the two subdomain states: pure ROM
/// DOFs take the basis reconstruction, pure FOM DOFs the full-order value,
/// and overlap DOFs the blend of both.
pub fn reconstruct_full(
    model: &CoupledModel,
    xhat: &DVector<f64>,
    x_fom: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dd = &model.dd;
    if xhat.len() != model.basis.rank {
        return Err(Error::shape("reduced state length", model.basis.rank, xhat.len()));
    }
    if x_fom.len() != dd.n_fom() {
        return Err(Error::shape("FOM state length", dd.n_fom(), x_fom.len()));
    }
    let rom_recon = &model.basis.basis * xhat;
    let mut out = DVector::zeros(dd.n);
    for (local, &g) in dd.rom_ids.iter().enumerate() {
        out[g] = rom_recon[local];
    }
    for (local, &g) in dd.fom_ids.iter().enumerate() {
        out[g] = x_fom[local];
    }
    if !dd.overlap_ids.is_empty() {
        let rom_vals = DVector::from_fn(dd.overlap_ids.len(), |j, _| {
            let g = dd.overlap_ids[j];
            let local = dd.rom_ids.binary_search(&g).expect("overlap is in rom_ids");
            rom_recon[local]
        });
        let fom_vals = DVector::from_fn(dd.overlap_ids.len(), |j, _| {
            let g = dd.overlap_ids[j];
            let local = dd.fom_ids.binary_search(&g).expect("overlap is in fom_ids");
            x_fom[local]
        });
        let blended = blend_overlap(&rom_vals, &fom_vals, dd)?;
        for (j, &g) in dd.overlap_ids.iter().enumerate() {
            out[g] = blended[j];
        }
    }
    Ok(out)
}
