//! Per-cluster optimization with Adam.

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{bound_offsets, fit_kmeans, offset_into, ClusterModel, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::dataset::{BoundPair, RelationDataset};
use crate::embeddings::{EmbeddingTable, Similarity};
use crate::error::{Error, Result};
use crate::evaluation::gold_rank;
use crate::linalg::Matrix;
use crate::projection::{gradient, total_loss, Batch, LossParts, Objective, Projection, ProjectionModel, TrainingMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Returns [`Error::NonFinite`] without touching anything when `grad`
/// contains NaN or infinity.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamParams) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Invalid("Adam parameter, gradient and state shapes differ".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// `d × d` matrix with i.i.d. `Normal(0, std)` entries.
pub fn init_matrix(d: usize, seed: u64, std: f64) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::Invalid("dimension must be at least 1".into()));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(format!("init std {std}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..d * d).map(|_| normal.sample(&mut rng)).collect();
    Ok(Matrix::from_vec(d, d, data))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Keep the parameters after the last epoch.
    #[default]
    Final,
    /// Keep the snapshot with the best validation hit@10, checked every 10 epochs.
    BestValidationHit10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub init_std: f64,
    pub adam: AdamParams,
    pub objective: Objective,
    pub bias: bool,
    pub k: usize,
    pub seed: u64,
    pub select_on: Selection,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Similarity used when ranking candidates during validation.
    pub similarity: Similarity,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 700,
            batch_size: 1024,
            init_std: 0.1,
            adam: AdamParams::default(),
            objective: Objective::baseline(),
            bias: false,
            k: 1,
            seed: 0,
            select_on: Selection::Final,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_tol: DEFAULT_TOL,
            similarity: Similarity::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(m));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch size must be at least 1".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init std must be positive, got {}", self.init_std));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return fail(format!("Adam betas must lie in [0, 1), got {} and {}", a.beta1, a.beta2));
        }
        if !(a.epsilon > 0.0 && a.alpha > 0.0) {
            return fail("Adam alpha and epsilon must be positive".into());
        }
        if !(self.objective.lambda >= 0.0 && self.objective.lambda.is_finite()) {
            return fail(format!("lambda must be non-negative, got {}", self.objective.lambda));
        }
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if self.kmeans_max_iter < 1 {
            return fail("k-means iteration cap must be at least 1".into());
        }
        Ok(())
    }
}

/// One row of a loss trace: batch-weighted means over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub cluster: usize,
    pub baseline_term: f64,
    pub reg_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ProjectionModel,
    /// Per cluster, one record per epoch.
    pub traces: Vec<Vec<LossRecord>>,
    /// Optimizer steps taken per cluster.
    pub steps: Vec<usize>,
}

/// k-means over the training offsets.
pub fn fit_clusters(dataset: &RelationDataset, table: &EmbeddingTable, cfg: &TrainConfig) -> Result<ClusterModel> {
    if dataset.train.is_empty() {
        return Err(Error::Invalid("no training pairs".into()));
    }
    let offsets = bound_offsets(&dataset.train, table);
    fit_kmeans(&offsets, cfg.k, cfg.seed, cfg.kmeans_max_iter, cfg.kmeans_tol)
}

/// Seed for an independent stream keyed by cluster and purpose.
fn derive_seed(seed: u64, cluster: usize, purpose: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_add((cluster as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(purpose.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains one projection per cluster of `clusters` on the training bucket.
pub fn train(
    dataset: &RelationDataset,
    table: &EmbeddingTable,
    clusters: &ClusterModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if clusters.dim() != table.dim() {
        return Err(Error::Dimension {
            expected: table.dim(),
            found: clusters.dim(),
        });
    }
    let d = table.dim();
    let mut pools: Vec<Vec<BoundPair>> = vec![Vec::new(); clusters.k()];
    let mut validation: Vec<Vec<BoundPair>> = vec![Vec::new(); clusters.k()];
    let mut offset = vec![0.0; d];
    for (src, dst) in [(&dataset.train, &mut pools), (&dataset.validation, &mut validation)] {
        for p in src {
            offset_into(table, *p, &mut offset);
            dst[clusters.assign(&offset)].push(*p);
        }
    }

    let results: Vec<ClusterResult> = (0..clusters.k())
        .into_par_iter()
        .map(|c| {
            train_cluster(ClusterJob {
                cluster: c,
                pool: &pools[c],
                validation: &validation[c],
                dataset,
                table,
                cfg,
            })
        })
        .collect::<Result<_>>()?;

    let mut projections = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    let mut steps = Vec::with_capacity(results.len());
    let mut final_losses = Vec::with_capacity(results.len());
    let mut selected_epochs = Vec::with_capacity(results.len());
    for r in results {
        projections.push(r.projection);
        traces.push(r.trace);
        steps.push(r.steps);
        final_losses.push(r.final_loss);
        selected_epochs.push(r.selected_epoch);
    }
    let meta = TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        init_std: cfg.init_std,
        vocab_hash: table.vocab_hash(),
        final_losses,
        selected_epochs,
    };
    let model = ProjectionModel::new(projections, clusters.clone(), cfg.objective, meta)?;
    Ok(TrainOutcome { model, traces, steps })
}

struct ClusterJob<'a> {
    cluster: usize,
    pool: &'a [BoundPair],
    validation: &'a [BoundPair],
    dataset: &'a RelationDataset,
    table: &'a EmbeddingTable,
    cfg: &'a TrainConfig,
}

struct ClusterResult {
    projection: Projection,
    trace: Vec<LossRecord>,
    steps: usize,
    final_loss: LossParts,
    selected_epoch: usize,
}

fn train_cluster(job: ClusterJob<'_>) -> Result<ClusterResult> {
    let ClusterJob {
        cluster,
        pool,
        validation,
        dataset,
        table,
        cfg,
    } = job;
    let d = table.dim();
    let phi = init_matrix(d, derive_seed(cfg.seed, cluster, 0), cfg.init_std)?;
    let mut proj = if cfg.bias {
        Projection::affine(phi, vec![0.0; d])
    } else {
        Projection::linear(phi)
    };
    if pool.is_empty() {
        warn!("cluster {cluster} has no training pairs; its projection stays at initialization");
        return Ok(ClusterResult {
            projection: proj,
            trace: Vec::new(),
            steps: 0,
            final_loss: LossParts::default(),
            selected_epoch: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, cluster, 1));
    let mut phi_state = AdamState::new(d * d);
    let mut bias_state = AdamState::new(if cfg.bias { d } else { 0 });
    let objective = &cfg.objective;
    let needs_negatives = objective.kind.uses_negatives();

    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut negatives: Vec<usize> = pool.iter().map(|p| p.source).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let mut best: Option<(f64, usize, Projection)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        if needs_negatives {
            for &i in &order {
                negatives[i] = dataset.sample_negative(pool[i].source, &mut rng);
            }
        }
        let mut sums = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(table, pool, &negatives, chunk, needs_negatives);
            let (loss, grad) = gradient(&proj, &batch, objective)?;
            let w = chunk.len() as f64;
            sums.baseline += w * loss.baseline;
            sums.regularizer += w * loss.regularizer;
            sums.total += w * loss.total;
            let diag = |e: Error| match e {
                Error::NonFinite(_) => {
                    Error::NonFinite(format!("gradient in cluster {cluster} at epoch {epoch}"))
                }
                other => other,
            };
            adam_step(proj.phi.as_mut_slice(), grad.phi.as_slice(), &mut phi_state, &cfg.adam).map_err(diag)?;
            if let (Some(b), Some(gb)) = (proj.bias.as_mut(), grad.bias.as_ref()) {
                adam_step(b, gb, &mut bias_state, &cfg.adam).map_err(diag)?;
            }
            steps += 1;
        }
        let n = pool.len() as f64;
        let record = LossRecord {
            epoch,
            cluster,
            baseline_term: sums.baseline / n,
            reg_term: sums.regularizer / n,
            total: sums.total / n,
        };
        if !record.total.is_finite() || !proj.is_finite() {
            return Err(Error::NonFinite(format!("loss in cluster {cluster} at epoch {epoch}")));
        }
        trace.push(record);

        if cfg.select_on == Selection::BestValidationHit10 && epoch % 10 == 0 && !validation.is_empty() {
            let hits = validation
                .iter()
                .filter(|p| {
                    let pred = proj.apply(table.vector(p.source));
                    matches!(gold_rank(table, &pred, p, 10, true, cfg.similarity), Some(r) if r <= 10)
                })
                .count();
            let score = hits as f64 / validation.len() as f64;
            debug!("cluster {cluster} epoch {epoch}: validation hit@10 {score:.4}");
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, proj.clone()));
            }
        }
    }

    let selected_epoch = match best {
        Some((_, epoch, snapshot)) => {
            proj = snapshot;
            epoch
        }
        None => cfg.epochs,
    };
    let all: Vec<usize> = (0..pool.len()).collect();
    let batch = make_batch(table, pool, &negatives, &all, needs_negatives);
    let final_loss = total_loss(&proj, &batch, objective)?;
    Ok(ClusterResult {
        projection: proj,
        trace,
        steps,
        final_loss,
        selected_epoch,
    })
}

fn make_batch<'a>(
    table: &'a EmbeddingTable,
    pool: &[BoundPair],
    negatives: &[usize],
    idx: &[usize],
    with_negatives: bool,
) -> Batch<'a> {
    Batch {
        xs: idx.iter().map(|&i| table.vector(pool[i].source)).collect(),
        ys: idx.iter().map(|&i| table.vector(pool[i].target)).collect(),
        zs: with_negatives.then(|| idx.iter().map(|&i| table.vector(negatives[i])).collect()),
    }
}
