//! On-disk layout of inferred models and trajectories.
//!
//! A model bundle is a directory:
//!
//! ```text
//! bundle/
//!   manifest.json          {format_version, kind}
//!   dd.json                domain decomposition (coupled bundles)
//!   basis.fmat             reduced basis columns
//!   singular_values.fmat   full singular value sequence
//!   rom/                   reduced operators as FMAT + manifest.json
//!     A.fmat Hc.fmat B.fmat c.fmat A_RI.fmat H_RII.fmat H_RRI.fmat
//!   fom/                   sparse rows: manifest.json + coefficients.fmat
//! ```
//!
//! Trajectories export as states.fmat plus times.csv with `time,diverged`
//! rows; a truncated run appends one final `t,1` row at the divergence time.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::couple::{CoupledModel, DomainDecomposition};
use crate::data::{read_fmat, write_fmat};
use crate::error::{Error, Result};
use crate::opinf::{CoupledReducedModel, QuadModel};
use crate::pod::ReducedBasis;
use crate::regression::unique_pair_count;
use crate::sfom::{AdjacencyGraph, CouplingCoeffs, SparseQuadModel, StencilRow};
use crate::simulate::Trajectory;

pub const FORMAT_VERSION: u32 = 1;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    kind: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuadManifest {
    order: usize,
    input_dim: usize,
    blocks: Vec<(String, usize)>,
    interface_ids: Vec<usize>,
}

/// Serialized mirror of [`DomainDecomposition`]; the ROM id set is derived
/// on load as the complement of the FOM set plus the overlap.
#[derive(Debug, Serialize, Deserialize)]
struct DdManifest {
    n: usize,
    fom_ids: Vec<usize>,
    overlap_ids: Vec<usize>,
    interface_ids: Vec<usize>,
    blend: Vec<f64>,
}

pub fn save_decomposition(path: &Path, dd: &DomainDecomposition) -> Result<()> {
    write_json(
        path,
        &DdManifest {
            n: dd.n,
            fom_ids: dd.fom_ids.clone(),
            overlap_ids: dd.overlap_ids.clone(),
            interface_ids: dd.interface_ids.clone(),
            blend: dd.blend.clone(),
        },
    )
}

pub fn load_decomposition(path: &Path) -> Result<DomainDecomposition> {
    let m: DdManifest = read_json(path)?;
    let in_fom = |i: usize| m.fom_ids.binary_search(&i).is_ok();
    let mut rom_ids: Vec<usize> = (0..m.n).filter(|&i| !in_fom(i)).collect();
    rom_ids.extend_from_slice(&m.overlap_ids);
    rom_ids.sort_unstable();
    rom_ids.dedup();
    Ok(DomainDecomposition {
        n: m.n,
        rom_ids,
        fom_ids: m.fom_ids,
        interface_ids: m.interface_ids,
        overlap_ids: m.overlap_ids,
        blend: m.blend,
    })
}

/// Writes the reduced operators plus coupling blocks of a coupled reduced
/// model into `dir`.
pub fn save_reduced_model(dir: &Path, model: &CoupledReducedModel) -> Result<()> {
    ensure_dir(dir)?;
    let core = &model.core;
    write_fmat(&dir.join("A.fmat"), &core.linear)?;
    write_fmat(&dir.join("Hc.fmat"), &core.quadratic)?;
    write_fmat(&dir.join("B.fmat"), &core.input)?;
    write_fmat(
        &dir.join("c.fmat"),
        &DMatrix::from_column_slice(core.constant.len(), 1, core.constant.as_slice()),
    )?;
    write_fmat(&dir.join("A_RI.fmat"), &model.coupling_linear)?;
    write_fmat(&dir.join("H_RII.fmat"), &model.coupling_quadratic)?;
    write_fmat(&dir.join("H_RRI.fmat"), &model.coupling_bilinear)?;
    let blocks = vec![
        ("A".to_string(), core.linear.ncols()),
        ("Hc".to_string(), core.quadratic.ncols()),
        ("B".to_string(), core.input.ncols()),
        ("c".to_string(), 1),
        ("A_RI".to_string(), model.coupling_linear.ncols()),
        ("H_RII".to_string(), model.coupling_quadratic.ncols()),
        ("H_RRI".to_string(), model.coupling_bilinear.ncols()),
    ];
    write_json(
        &dir.join("manifest.json"),
        &QuadManifest {
            order: core.order(),
            input_dim: core.input_dim(),
            blocks,
            interface_ids: model.interface_ids.clone(),
        },
    )
}

pub fn load_reduced_model(dir: &Path) -> Result<CoupledReducedModel> {
    let manifest: QuadManifest = read_json(&dir.join("manifest.json"))?;
    let linear = read_fmat(&dir.join("A.fmat"))?;
    if linear.nrows() != manifest.order {
        return Err(Error::parse(
            dir.display().to_string(),
            "linear operator rows disagree with manifest order",
        ));
    }
    let constant_mat = read_fmat(&dir.join("c.fmat"))?;
    Ok(CoupledReducedModel {
        core: QuadModel {
            linear,
            quadratic: read_fmat(&dir.join("Hc.fmat"))?,
            input: read_fmat(&dir.join("B.fmat"))?,
            constant: DVector::from_column_slice(constant_mat.as_slice()),
        },
        coupling_linear: read_fmat(&dir.join("A_RI.fmat"))?,
        coupling_quadratic: read_fmat(&dir.join("H_RII.fmat"))?,
        coupling_bilinear: read_fmat(&dir.join("H_RRI.fmat"))?,
        interface_ids: manifest.interface_ids,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SparseRowManifest {
    stencil: Vec<usize>,
    input_ids: Vec<usize>,
    coupled: bool,
    /// Start of this row's coefficients in the payload vector.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SparseManifest {
    n: usize,
    reduced_dim: usize,
    interface_ids: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    rows: Vec<SparseRowManifest>,
    payload_len: usize,
    seed: Option<u64>,
}

/// Writes a sparse model as a JSON manifest plus one concatenated
/// coefficient payload with an offset table.
pub fn save_sparse_model(dir: &Path, model: &SparseQuadModel, seed: Option<u64>) -> Result<()> {
    ensure_dir(dir)?;
    let mut payload: Vec<f64> = Vec::new();
    let mut rows = Vec::with_capacity(model.rows.len());
    for row in &model.rows {
        let offset = payload.len();
        payload.extend(row.linear.iter());
        payload.extend(row.quadratic.iter());
        if let Some(c) = &row.coupling {
            payload.extend(c.linear.iter());
            payload.extend(c.quadratic.iter());
            payload.extend(c.bilinear.iter());
        }
        payload.extend(row.input.iter());
        payload.push(row.constant);
        rows.push(SparseRowManifest {
            stencil: row.stencil.clone(),
            input_ids: row.input_ids.clone(),
            coupled: row.coupling.is_some(),
            offset,
        });
    }
    let manifest = SparseManifest {
        n: model.n,
        reduced_dim: model.reduced_dim,
        interface_ids: model.interface_ids.clone(),
        neighbors: model.rows.iter().map(|r| r.stencil.clone()).collect(),
        rows,
        payload_len: payload.len(),
        seed,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let len = payload.len();
    write_fmat(
        &dir.join("coefficients.fmat"),
        &DMatrix::from_vec(len, 1, payload),
    )
}

pub fn load_sparse_model(dir: &Path) -> Result<SparseQuadModel> {
    let manifest: SparseManifest = read_json(&dir.join("manifest.json"))?;
    let payload = read_fmat(&dir.join("coefficients.fmat"))?;
    if payload.len() != manifest.payload_len {
        return Err(Error::parse(
            dir.display().to_string(),
            "coefficient payload length disagrees with manifest",
        ));
    }
    let r = manifest.reduced_dim;
    let mut rows = Vec::with_capacity(manifest.rows.len());
    for rm in &manifest.rows {
        let mut cursor = rm.offset;
        let mut take = |len: usize| -> Result<DVector<f64>> {
            if cursor + len > payload.len() {
                return Err(Error::parse(
                    dir.display().to_string(),
                    "row coefficients run past the payload",
                ));
            }
            let v = DVector::from_fn(len, |k, _| payload[(cursor + k, 0)]);
            cursor += len;
            Ok(v)
        };
        let q = rm.stencil.len();
        let linear = take(q)?;
        let quadratic = take(unique_pair_count(q))?;
        let coupling = if rm.coupled {
            Some(CouplingCoeffs {
                linear: take(r)?,
                quadratic: take(unique_pair_count(r))?,
                bilinear: take(q * r)?,
            })
        } else {
            None
        };
        let input = take(rm.input_ids.len())?;
        let constant = take(1)?[0];
        rows.push(StencilRow {
            stencil: rm.stencil.clone(),
            linear,
            quadratic,
            input_ids: rm.input_ids.clone(),
            input,
            constant,
            coupling,
        });
    }
    // Sanity check: the recorded adjacency matches the rows.
    let _ = AdjacencyGraph::new(manifest.neighbors)?;
    Ok(SparseQuadModel {
        n: manifest.n,
        reduced_dim: manifest.reduced_dim,
        interface_ids: manifest.interface_ids,
        rows,
    })
}

pub fn save_basis(dir: &Path, basis: &ReducedBasis) -> Result<()> {
    ensure_dir(dir)?;
    write_fmat(&dir.join("basis.fmat"), &basis.basis)?;
    write_fmat(
        &dir.join("singular_values.fmat"),
        &DMatrix::from_column_slice(
            basis.singular_values.len(),
            1,
            basis.singular_values.as_slice(),
        ),
    )
}

pub fn load_basis(dir: &Path) -> Result<ReducedBasis> {
    let basis = read_fmat(&dir.join("basis.fmat"))?;
    let sigma = read_fmat(&dir.join("singular_values.fmat"))?;
    let rank = basis.ncols();
    Ok(ReducedBasis {
        rank,
        basis,
        singular_values: DVector::from_column_slice(sigma.as_slice()),
    })
}

/// Writes a complete coupled-model bundle.
pub fn save_coupled_model(dir: &Path, model: &CoupledModel, seed: Option<u64>) -> Result<()> {
    ensure_dir(dir)?;
    write_json(
        &dir.join("manifest.json"),
        &BundleManifest {
            format_version: FORMAT_VERSION,
            kind: "coupled".into(),
        },
    )?;
    save_decomposition(&dir.join("dd.json"), &model.dd)?;
    save_basis(dir, &model.basis)?;
    save_reduced_model(&dir.join("rom"), &model.rom)?;
    save_sparse_model(&dir.join("fom"), &model.fom, seed)
}

pub fn load_coupled_model(dir: &Path) -> Result<CoupledModel> {
    let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            dir.display().to_string(),
            format!("unsupported bundle version {}", manifest.format_version),
        ));
    }
    if manifest.kind != "coupled" {
        return Err(Error::parse(
            dir.display().to_string(),
            format!("expected a coupled bundle, found '{}'", manifest.kind),
        ));
    }
    Ok(CoupledModel {
        dd: load_decomposition(&dir.join("dd.json"))?,
        rom: load_reduced_model(&dir.join("rom"))?,
        basis: load_basis(dir)?,
        fom: load_sparse_model(&dir.join("fom"))?,
    })
}

/// Writes a standalone reduced bundle (global operator-inference model).
pub fn save_reduced_bundle(
    dir: &Path,
    model: &CoupledReducedModel,
    basis: &ReducedBasis,
) -> Result<()> {
    ensure_dir(dir)?;
    write_json(
        &dir.join("manifest.json"),
        &BundleManifest {
            format_version: FORMAT_VERSION,
            kind: "reduced".into(),
        },
    )?;
    save_basis(dir, basis)?;
    save_reduced_model(&dir.join("rom"), model)
}

pub fn load_reduced_bundle(dir: &Path) -> Result<(CoupledReducedModel, ReducedBasis)> {
    Ok((load_reduced_model(&dir.join("rom"))?, load_basis(dir)?))
}

/// Writes a standalone sparse bundle (global sFOM).
pub fn save_sparse_bundle(dir: &Path, model: &SparseQuadModel, seed: Option<u64>) -> Result<()> {
    ensure_dir(dir)?;
    write_json(
        &dir.join("manifest.json"),
        &BundleManifest {
            format_version: FORMAT_VERSION,
            kind: "sparse".into(),
        },
    )?;
    save_sparse_model(&dir.join("fom"), model, seed)
}

pub fn load_sparse_bundle(dir: &Path) -> Result<SparseQuadModel> {
    load_sparse_model(&dir.join("fom"))
}

/// Kind tag of a saved bundle.
pub fn bundle_kind(dir: &Path) -> Result<String> {
    let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
    Ok(manifest.kind)
}

/// Exports a trajectory: states as FMAT, times plus divergence flag as CSV.
pub fn save_trajectory(dir: &Path, trajectory: &Trajectory) -> Result<()> {
    ensure_dir(dir)?;
    write_fmat(&dir.join("states.fmat"), &trajectory.states)?;
    if let Some(reduced) = &trajectory.reduced_states {
        write_fmat(&dir.join("reduced_states.fmat"), reduced)?;
    }
    let times_path = dir.join("times.csv");
    let mut lines = String::new();
    for t in &trajectory.times {
        lines.push_str(&format!("{t},0\n"));
    }
    if let Some(t) = trajectory.diverged_at {
        lines.push_str(&format!("{t},1\n"));
    }
    fs::write(&times_path, lines).map_err(|e| Error::io(times_path.display().to_string(), e))
}
