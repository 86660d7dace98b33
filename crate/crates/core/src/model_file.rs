//! Binary model container.
//!
//! Layout: the magic bytes `HPRJ1`, a UTF-8 JSON header terminated by a NUL
//! byte, then little-endian `f64` payload in row-major order: `k` centroid
//! rows, `k` square `d × d` matrices, and, when the header sets `bias`, `k`
//! bias rows.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::projection::{LossParts, Objective, PenaltyProduct, Projection, ProjectionModel, RegularizerKind, TrainingMeta};

pub const MAGIC: &[u8; 5] = b"HPRJ1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dim: usize,
    k: usize,
    regularizer: RegularizerKind,
    lambda: f64,
    product: PenaltyProduct,
    bias: bool,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    init_std: f64,
    vocab_hash: String,
    inertia: f64,
    kmeans_iterations: usize,
    #[serde(default)]
    inertia_trace: Vec<f64>,
    final_losses: Vec<LossParts>,
    selected_epochs: Vec<usize>,
}

pub fn write_model<W: Write>(model: &ProjectionModel, mut w: W) -> Result<()> {
    let header = Header {
        dim: model.dim(),
        k: model.k(),
        regularizer: model.objective.kind,
        lambda: model.objective.lambda,
        product: model.objective.product,
        bias: model.has_bias(),
        seed: model.meta.seed,
        epochs: model.meta.epochs,
        batch_size: model.meta.batch_size,
        init_std: model.meta.init_std,
        vocab_hash: model.meta.vocab_hash.clone(),
        inertia: model.clusters.inertia,
        kmeans_iterations: model.clusters.iterations,
        inertia_trace: model.clusters.inertia_trace.clone(),
        final_losses: model.meta.final_losses.clone(),
        selected_epochs: model.meta.selected_epochs.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let io = |e| Error::io("<model>", e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    w.write_all(&[0]).map_err(io)?;
    let mut put = |vals: &[f64]| -> Result<()> {
        for v in vals {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    };
    put(model.clusters.centroids.as_slice())?;
    for p in &model.projections {
        put(p.phi.as_slice())?;
    }
    for p in &model.projections {
        if let Some(b) = &p.bias {
            put(b)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_model(bytes: &[u8]) -> Result<ProjectionModel> {
    let bad = |m: &str| Error::ModelFormat(m.to_owned());
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| bad("missing HPRJ1 magic"))?;
    let nul = rest
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| bad("header is not NUL-terminated"))?;
    let header: Header =
        serde_json::from_slice(&rest[..nul]).map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
    let payload = &rest[nul + 1..];

    let (d, k) = (header.dim, header.k);
    if d == 0 || k == 0 {
        return Err(bad("dimension and cluster count must be positive"));
    }
    let count = k
        .checked_mul(d)
        .and_then(|kd| kd.checked_mul(d + 1 + usize::from(header.bias)))
        .ok_or_else(|| bad("header dimensions overflow"))?;
    if payload.len() != count * 8 {
        return Err(Error::ModelFormat(format!(
            "payload is {} bytes, header implies {} (k = {k}, dim = {d})",
            payload.len(),
            count * 8
        )));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };

    let centroids = Matrix::from_vec(k, d, take(k * d));
    let mut projections: Vec<Projection> = (0..k)
        .map(|_| Projection::linear(Matrix::from_vec(d, d, take(d * d))))
        .collect();
    if header.bias {
        for p in &mut projections {
            p.bias = Some(take(d));
        }
    }
    if !centroids.is_finite() {
        return Err(Error::NonFinite("centroids in model file".into()));
    }

    let clusters = ClusterModel {
        centroids,
        inertia: header.inertia,
        iterations: header.kmeans_iterations,
        inertia_trace: header.inertia_trace,
    };
    let objective = Objective::new(header.regularizer, header.lambda)?.with_product(header.product);
    let meta = TrainingMeta {
        seed: header.seed,
        epochs: header.epochs,
        batch_size: header.batch_size,
        init_std: header.init_std,
        vocab_hash: header.vocab_hash,
        final_losses: header.final_losses,
        selected_epochs: header.selected_epochs,
    };
    ProjectionModel::new(projections, clusters, objective, meta)
}

pub fn save_model(model: &ProjectionModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, BufWriter::new(file))
}

pub fn load_model(path: &Path) -> Result<ProjectionModel> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
