//! Projection matrices, the regularized least-squares objective, and its gradient.
//!
//! A projection maps a hyponym row vector `x` to `xΦ` (plus an optional bias
//! row). The objective is the mean squared L2 residual against the hypernym
//! `y`, plus `lambda` times one of four penalties on the squared similarity
//! between a (re-)projected hyponym and a negative word:
//!
//! | kind              | penalty per example |
//! | ----------------- | ------------------- |
//! | `asym`            | `(xΦ · x)²`         |
//! | `asym-reproj`     | `(xΦΦ · x)²`        |
//! | `neighbor`        | `(xΦ · z)²`         |
//! | `neighbor-reproj` | `(xΦΦ · z)²`        |
//!
//! The asymmetric penalties are the neighbor penalties with `z = x`, and are
//! computed by the same kernel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, mat_vec, norm, vec_mat, Matrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegularizerKind {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "asym")]
    AsymmetricPlain,
    #[serde(rename = "asym-reproj")]
    AsymmetricReproj,
    #[serde(rename = "neighbor")]
    NeighborPlain,
    #[serde(rename = "neighbor-reproj")]
    NeighborReproj,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 5] = [
        RegularizerKind::None,
        RegularizerKind::AsymmetricPlain,
        RegularizerKind::AsymmetricReproj,
        RegularizerKind::NeighborPlain,
        RegularizerKind::NeighborReproj,
    ];

    pub fn uses_negatives(self) -> bool {
        matches!(self, RegularizerKind::NeighborPlain | RegularizerKind::NeighborReproj)
    }

    pub fn reprojects(self) -> bool {
        matches!(self, RegularizerKind::AsymmetricReproj | RegularizerKind::NeighborReproj)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::AsymmetricPlain => "asym",
            RegularizerKind::AsymmetricReproj => "asym-reproj",
            RegularizerKind::NeighborPlain => "neighbor",
            RegularizerKind::NeighborReproj => "neighbor-reproj",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegularizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown regularizer `{s}`")))
    }
}

/// Inner product inside the penalties. Raw dot product unless configured otherwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyProduct {
    #[default]
    Dot,
    Cosine,
}

impl FromStr for PenaltyProduct {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(PenaltyProduct::Dot),
            "cosine" => Ok(PenaltyProduct::Cosine),
            other => Err(Error::Invalid(format!("unknown penalty product `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: RegularizerKind,
    pub lambda: f64,
    pub product: PenaltyProduct,
}

impl Objective {
    pub fn new(kind: RegularizerKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Invalid(format!("lambda must be finite and non-negative, got {lambda}")));
        }
        Ok(Objective {
            kind,
            lambda,
            product: PenaltyProduct::Dot,
        })
    }

    pub fn baseline() -> Self {
        Objective {
            kind: RegularizerKind::None,
            lambda: 0.0,
            product: PenaltyProduct::Dot,
        }
    }

    pub fn with_product(mut self, product: PenaltyProduct) -> Self {
        self.product = product;
        self
    }
}

/// One square projection `Φ`, optionally with a bias row `b`: `x ↦ xΦ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub phi: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Projection {
    pub fn linear(phi: Matrix) -> Self {
        assert_eq!(phi.rows(), phi.cols(), "projection matrix must be square");
        Projection { phi, bias: None }
    }

    pub fn affine(phi: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(phi.rows(), phi.cols(), "projection matrix must be square");
        assert_eq!(bias.len(), phi.cols(), "bias length must match dimension");
        Projection { phi, bias: Some(bias) }
    }

    /// Zero-valued parameters with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Projection {
            phi: Matrix::zeros(self.dim(), self.dim()),
            bias: self.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `xΦ + b` without dimension checks.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec_mat(x, &self.phi);
        if let Some(b) = &self.bias {
            for (o, bi) in out.iter_mut().zip(b) {
                *o += bi;
            }
        }
        out
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.apply(x))
    }

    fn accumulate(&mut self, scale: f64, input: &[f64], upstream: &[f64]) {
        self.phi.add_outer(scale, input, upstream);
        if let Some(b) = &mut self.bias {
            for (bi, u) in b.iter_mut().zip(upstream) {
                *bi += scale * u;
            }
        }
    }
}

/// Aligned training examples. `zs`, when present, holds one negative per `x`.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub xs: Vec<&'a [f64]>,
    pub ys: Vec<&'a [f64]>,
    pub zs: Option<Vec<&'a [f64]>>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn validate(&self, dim: usize, objective: &Objective) -> Result<()> {
        if self.xs.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        if self.ys.len() != self.xs.len() {
            return Err(Error::Invalid("hyponym and hypernym batches differ in length".into()));
        }
        if objective.kind.uses_negatives() {
            match &self.zs {
                None => {
                    return Err(Error::Invalid(format!(
                        "regularizer `{}` needs a negative for every example",
                        objective.kind
                    )))
                }
                Some(zs) if zs.len() != self.xs.len() => {
                    return Err(Error::Invalid("negative batch is not aligned with hyponyms".into()))
                }
                _ => {}
            }
        }
        for v in self.xs.iter().chain(&self.ys).chain(self.zs.iter().flatten()) {
            check_dim(dim, v.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// Mean squared residual.
    pub baseline: f64,
    /// Mean penalty before weighting by lambda; zero for the unregularized kind.
    pub regularizer: f64,
    pub total: f64,
}

/// Mean of `||xΦ - y||²` over the batch.
pub fn loss_baseline(p: &Projection, xs: &[&[f64]], ys: &[&[f64]]) -> Result<f64> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Invalid("baseline loss needs a non-empty aligned batch".into()));
    }
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        check_dim(p.dim(), x.len())?;
        check_dim(p.dim(), y.len())?;
        let r = p.apply(x);
        sum += r.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / xs.len() as f64)
}

/// Mean of `(xΦΦ · x)²` (or `(xΦ · x)²` without re-projection).
pub fn reg_asymmetric(p: &Projection, xs: &[&[f64]], reproject: bool, product: PenaltyProduct) -> Result<f64> {
    reg_neighbor(p, xs, xs, reproject, product)
}

/// Mean of `(xΦΦ · z)²` (or `(xΦ · z)²` without re-projection).
pub fn reg_neighbor(
    p: &Projection,
    xs: &[&[f64]],
    zs: &[&[f64]],
    reproject: bool,
    product: PenaltyProduct,
) -> Result<f64> {
    if xs.is_empty() || xs.len() != zs.len() {
        return Err(Error::Invalid("penalty needs a non-empty aligned batch".into()));
    }
    let mut sum = 0.0;
    for (x, z) in xs.iter().zip(zs) {
        check_dim(p.dim(), x.len())?;
        check_dim(p.dim(), z.len())?;
        let s = penalty_forward(p, x, z, reproject, product).score;
        sum += s * s;
    }
    Ok(sum / xs.len() as f64)
}

struct PenaltyForward {
    projected: Vec<f64>,
    output: Vec<f64>,
    score: f64,
}

fn penalty_forward(p: &Projection, x: &[f64], z: &[f64], reproject: bool, product: PenaltyProduct) -> PenaltyForward {
    let projected = p.apply(x);
    let output = if reproject { p.apply(&projected) } else { projected.clone() };
    let score = similarity(&output, z, product);
    PenaltyForward {
        projected,
        output,
        score,
    }
}

fn similarity(u: &[f64], z: &[f64], product: PenaltyProduct) -> f64 {
    let raw = dot(u, z);
    match product {
        PenaltyProduct::Dot => raw,
        PenaltyProduct::Cosine => {
            let denom = norm(u) * norm(z);
            if denom == 0.0 {
                0.0
            } else {
                raw / denom
            }
        }
    }
}

/// Derivative of the similarity with respect to its first argument.
fn similarity_grad(u: &[f64], z: &[f64], score: f64, product: PenaltyProduct) -> Vec<f64> {
    match product {
        PenaltyProduct::Dot => z.to_vec(),
        PenaltyProduct::Cosine => {
            let (nu, nz) = (norm(u), norm(z));
            if nu == 0.0 || nz == 0.0 {
                return vec![0.0; u.len()];
            }
            u.iter()
                .zip(z)
                .map(|(ui, zi)| zi / (nu * nz) - score * ui / (nu * nu))
                .collect()
        }
    }
}

/// Negatives for the penalty: the batch's own `zs` for neighbor kinds, `xs` otherwise.
fn penalty_targets<'b>(batch: &'b Batch<'_>, kind: RegularizerKind) -> &'b [&'b [f64]] {
    match (&batch.zs, kind.uses_negatives()) {
        (Some(zs), true) => zs,
        _ => &batch.xs,
    }
}

/// Baseline loss plus `lambda` times the selected penalty.
pub fn total_loss(p: &Projection, batch: &Batch<'_>, objective: &Objective) -> Result<LossParts> {
    batch.validate(p.dim(), objective)?;
    let baseline = loss_baseline(p, &batch.xs, &batch.ys)?;
    let regularizer = match objective.kind {
        RegularizerKind::None => 0.0,
        kind => reg_neighbor(
            p,
            &batch.xs,
            penalty_targets(batch, kind),
            kind.reprojects(),
            objective.product,
        )?,
    };
    let total = if objective.kind == RegularizerKind::None {
        baseline
    } else {
        baseline + objective.lambda * regularizer
    };
    Ok(LossParts {
        baseline,
        regularizer,
        total,
    })
}

/// Loss and its exact gradient with respect to every parameter of `p`.
///
/// Per example, the residual term contributes `2 xᵀ(xΦ + b - y)`. For a
/// penalty score `s = sim(u, z)` with `u = xΦ` the chain rule gives
/// `∂s/∂Φ = xᵀ g`, and with `u = pΦ + b`, `p = xΦ + b` it gives
/// `pᵀ g + xᵀ (g Φᵀ)`, where `g = ∂s/∂u`.
pub fn gradient(p: &Projection, batch: &Batch<'_>, objective: &Objective) -> Result<(LossParts, Projection)> {
    batch.validate(p.dim(), objective)?;
    let n = batch.len() as f64;
    let mut grad = p.zeros_like();

    let mut baseline = 0.0;
    for (x, y) in batch.xs.iter().zip(&batch.ys) {
        let mut r = p.apply(x);
        for (ri, yi) in r.iter_mut().zip(y.iter()) {
            *ri -= yi;
        }
        baseline += dot(&r, &r);
        grad.accumulate(2.0 / n, x, &r);
    }
    baseline /= n;

    let mut regularizer = 0.0;
    if objective.kind != RegularizerKind::None {
        let reproject = objective.kind.reprojects();
        let zs = penalty_targets(batch, objective.kind);
        for (x, z) in batch.xs.iter().zip(zs) {
            let fwd = penalty_forward(p, x, z, reproject, objective.product);
            regularizer += fwd.score * fwd.score;
            let scale = objective.lambda * 2.0 * fwd.score / n;
            let g = similarity_grad(&fwd.output, z, fwd.score, objective.product);
            if reproject {
                grad.accumulate(scale, &fwd.projected, &g);
                let back = mat_vec(&p.phi, &g);
                grad.accumulate(scale, x, &back);
            } else {
                grad.accumulate(scale, x, &g);
            }
        }
        regularizer /= n;
    }

    let total = if objective.kind == RegularizerKind::None {
        baseline
    } else {
        baseline + objective.lambda * regularizer
    };
    Ok((
        LossParts {
            baseline,
            regularizer,
            total,
        },
        grad,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_std: f64,
    pub vocab_hash: String,
    /// Loss over each cluster's full training pool for the kept parameters.
    pub final_losses: Vec<LossParts>,
    /// Epoch each cluster's parameters were taken from.
    pub selected_epochs: Vec<usize>,
}

/// One projection per cluster plus the clustering that routes inputs to them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub projections: Vec<Projection>,
    pub clusters: ClusterModel,
    pub objective: Objective,
    pub meta: TrainingMeta,
}

impl ProjectionModel {
    pub fn new(
        projections: Vec<Projection>,
        clusters: ClusterModel,
        objective: Objective,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if projections.len() != clusters.k() {
            return Err(Error::Invalid(format!(
                "{} projections for {} clusters",
                projections.len(),
                clusters.k()
            )));
        }
        let d = clusters.dim();
        for p in &projections {
            check_dim(d, p.dim())?;
            if !p.is_finite() {
                return Err(Error::NonFinite("projection parameters".into()));
            }
        }
        if projections.iter().any(|p| p.bias.is_some()) != projections.iter().all(|p| p.bias.is_some()) {
            return Err(Error::Invalid("either every projection has a bias or none does".into()));
        }
        Ok(ProjectionModel {
            projections,
            clusters,
            objective,
            meta,
        })
    }

    pub fn k(&self) -> usize {
        self.projections.len()
    }

    pub fn dim(&self) -> usize {
        self.clusters.dim()
    }

    pub fn has_bias(&self) -> bool {
        self.projections.first().is_some_and(|p| p.bias.is_some())
    }

    /// `xΦ_cluster` (plus bias when the model has one).
    pub fn predict(&self, x: &[f64], cluster: usize) -> Result<Vec<f64>> {
        let p = self
            .projections
            .get(cluster)
            .ok_or_else(|| Error::Invalid(format!("cluster {cluster} out of range (k = {})", self.k())))?;
        p.project(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot90() -> Matrix {
        Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]])
    }

    #[test]
    fn predict_by_hand() {
        let swap = Projection::linear(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        assert_eq!(swap.project(&[1.0, 2.0]).unwrap(), vec![2.0, 1.0]);
        let id = Projection::linear(Matrix::identity(3));
        assert_eq!(id.project(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        let zero = Projection::linear(Matrix::zeros(2, 2));
        assert_eq!(zero.project(&[4.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        assert!(id.project(&[1.0]).is_err());
    }

    #[test]
    fn baseline_loss_by_hand() {
        let id = Projection::linear(Matrix::identity(2));
        let x: &[f64] = &[1.0, 0.0];
        let y: &[f64] = &[0.0, 1.0];
        assert_eq!(loss_baseline(&id, &[x], &[y]).unwrap(), 2.0);
        assert_eq!(loss_baseline(&id, &[x, y], &[x, y]).unwrap(), 0.0);
        let zero = Projection::linear(Matrix::zeros(2, 2));
        let y2: &[f64] = &[3.0, 4.0];
        assert_eq!(loss_baseline(&zero, &[x, x], &[y, y2]).unwrap(), (1.0 + 25.0) / 2.0);
    }

    #[test]
    fn asymmetric_penalty_by_hand() {
        let x: &[f64] = &[1.0, 0.0];
        let zero = Projection::linear(Matrix::zeros(2, 2));
        assert_eq!(reg_asymmetric(&zero, &[x], true, PenaltyProduct::Dot).unwrap(), 0.0);
        let id = Projection::linear(Matrix::identity(2));
        let u: &[f64] = &[0.6, 0.8];
        assert!((reg_asymmetric(&id, &[x, u], true, PenaltyProduct::Dot).unwrap() - 1.0).abs() < 1e-15);
        // Two quarter turns make a half turn: (-x · x)² = 1.
        let rot = Projection::linear(rot90());
        assert_eq!(reg_asymmetric(&rot, &[x], true, PenaltyProduct::Dot).unwrap(), 1.0);
        assert_eq!(reg_asymmetric(&rot, &[x], false, PenaltyProduct::Dot).unwrap(), 0.0);
    }

    #[test]
    fn neighbor_penalty_by_hand() {
        let x: &[f64] = &[1.0, 0.0];
        let z: &[f64] = &[0.0, 1.0];
        let shear = Projection::linear(Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]));
        assert_eq!(reg_neighbor(&shear, &[x], &[z], false, PenaltyProduct::Dot).unwrap(), 1.0);
        // xΦΦ = x, orthogonal to z.
        let id = Projection::linear(Matrix::identity(2));
        assert_eq!(reg_neighbor(&id, &[x], &[z], true, PenaltyProduct::Dot).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_combinations() {
        let x: &[f64] = &[1.0, 0.0];
        let y: &[f64] = &[0.0, 1.0];
        let id = Projection::linear(Matrix::identity(2));
        let batch = Batch {
            xs: vec![x],
            ys: vec![y],
            zs: None,
        };
        // Baseline 2.0, asymmetric penalty 1.0.
        let obj = Objective::new(RegularizerKind::AsymmetricReproj, 0.1).unwrap();
        let parts = total_loss(&id, &batch, &obj).unwrap();
        assert_eq!((parts.baseline, parts.regularizer), (2.0, 1.0));
        assert!((parts.total - 2.1).abs() < 1e-15);

        let zero_lambda = Objective::new(RegularizerKind::AsymmetricReproj, 0.0).unwrap();
        assert_eq!(total_loss(&id, &batch, &zero_lambda).unwrap().total, 2.0);
        let none = Objective::new(RegularizerKind::None, 7.0).unwrap();
        assert_eq!(total_loss(&id, &batch, &none).unwrap().total, 2.0);

        let neighbor = Objective::new(RegularizerKind::NeighborReproj, 0.1).unwrap();
        assert!(matches!(total_loss(&id, &batch, &neighbor), Err(Error::Invalid(_))));
        assert!(Objective::new(RegularizerKind::None, -1.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        let x: &[f64] = &[0.3, -1.0, 2.0];
        let id = Projection::linear(Matrix::identity(3));
        let batch = Batch {
            xs: vec![x],
            ys: vec![x],
            zs: None,
        };
        let (_, g) = gradient(&id, &batch, &Objective::baseline()).unwrap();
        assert!(g.phi.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in RegularizerKind::ALL {
            assert_eq!(k.as_str().parse::<RegularizerKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!("ridge".parse::<RegularizerKind>().is_err());
    }

    #[test]
    fn model_checks_shapes() {
        let clusters = ClusterModel::single(2);
        let meta = TrainingMeta {
            seed: 0,
            epochs: 1,
            batch_size: 1,
            init_std: 0.1,
            vocab_hash: String::new(),
            final_losses: vec![],
            selected_epochs: vec![],
        };
        let bad = ProjectionModel::new(vec![], clusters.clone(), Objective::baseline(), meta.clone());
        assert!(bad.is_err());
        let m = ProjectionModel::new(
            vec![Projection::linear(Matrix::identity(2))],
            clusters,
            Objective::baseline(),
            meta,
        )
        .unwrap();
        assert_eq!(m.predict(&[1.0, 2.0], 0).unwrap(), vec![1.0, 2.0]);
        assert!(m.predict(&[1.0, 2.0], 1).is_err());
    }
}
