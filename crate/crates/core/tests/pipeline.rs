use hyperproj::clustering::ClusterModel;
use hyperproj::dataset::{lexical_split, BoundPair, RelationDataset, RelationPair, SplitFractions};
use hyperproj::evaluation::{auc, evaluate, hit_at, hits_from_ranks, EvalOptions};
use hyperproj::linalg::Matrix;
use hyperproj::model_file::{read_model, write_model};
use hyperproj::synth::{generate, SynthConfig};
use hyperproj::training::{fit_clusters, train, Selection, TrainConfig};
use hyperproj::{EmbeddingTable, Objective, Projection, ProjectionModel, RegularizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planted(cfg: &SynthConfig, seed: u64) -> (EmbeddingTable, Vec<RelationPair>, RelationDataset) {
    let f = generate(cfg).unwrap();
    let split = lexical_split(&f.relations, SplitFractions::default(), seed).unwrap();
    let ds = RelationDataset::bind(&f.relations, &split, &f.table).unwrap();
    (f.table, f.relations, ds)
}

fn named(ds: &[BoundPair], table: &EmbeddingTable) -> Vec<RelationPair> {
    ds.iter()
        .map(|p| RelationPair::hypernym(table.word(p.source), table.word(p.target)))
        .collect()
}

fn small() -> SynthConfig {
    SynthConfig {
        dim: 5,
        pairs: 200,
        ..Default::default()
    }
}

#[test]
fn steps_per_epoch_cover_the_pool_including_the_short_batch() {
    let (table, _, ds) = planted(&small(), 0);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 64,
        ..Default::default()
    };
    let clusters = fit_clusters(&ds, &table, &cfg).unwrap();
    let out = train(&ds, &table, &clusters, &cfg).unwrap();
    assert_eq!(out.steps, vec![3 * ds.train.len().div_ceil(64)]);
    assert_eq!(out.traces[0].len(), 3);
}

#[test]
fn same_seed_same_model() {
    let synth = SynthConfig {
        distractors: 2,
        ..small()
    };
    let (table, _, ds) = planted(&synth, 4);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 32,
        k: 2,
        seed: 11,
        objective: Objective::new(RegularizerKind::NeighborReproj, 0.1).unwrap(),
        ..Default::default()
    };
    let run = || {
        let clusters = fit_clusters(&ds, &table, &cfg).unwrap();
        let mut bytes = Vec::new();
        write_model(&train(&ds, &table, &clusters, &cfg).unwrap().model, &mut bytes).unwrap();
        bytes
    };
    let a = run();
    assert_eq!(a, run());
    let other = TrainConfig { seed: 12, ..cfg.clone() };
    let clusters = fit_clusters(&ds, &table, &other).unwrap();
    let mut b = Vec::new();
    write_model(&train(&ds, &table, &clusters, &other).unwrap().model, &mut b).unwrap();
    assert_ne!(a, b);
}

#[test]
fn planted_projection_is_recovered() {
    let (table, _, ds) = planted(&small(), 1);
    let cfg = TrainConfig::default();
    let clusters = fit_clusters(&ds, &table, &cfg).unwrap();
    let out = train(&ds, &table, &clusters, &cfg).unwrap();
    let loss = out.model.meta.final_losses[0].baseline;
    assert!(loss < 1e-3, "training loss {loss}");
    for r in &out.traces[0] {
        assert!(r.total.is_finite());
    }
    let report = evaluate(&out.model, &table, &named(&ds.test, &table), 10, EvalOptions::default()).unwrap();
    assert!(report.hits[0] >= 0.9, "{:?}", report.hits);
}

#[test]
fn empty_cluster_keeps_its_initialization() {
    let (table, _, ds) = planted(&small(), 2);
    let cfg = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    // The second centroid is far from every offset, so no pair reaches it.
    let mut centroids = Matrix::zeros(2, table.dim());
    centroids.set(1, 0, 1e6);
    let clusters = ClusterModel {
        centroids,
        inertia: 0.0,
        iterations: 0,
        inertia_trace: vec![],
    };
    let out = train(&ds, &table, &clusters, &cfg).unwrap();
    assert_eq!(out.steps[1], 0);
    assert!(out.traces[1].is_empty());
    assert_eq!(out.model.meta.final_losses[1].total, 0.0);
    assert!(out.model.projections[1].phi.as_slice().iter().any(|v| *v != 0.0));
}

#[test]
fn validation_selection_picks_a_checkpoint() {
    let (table, _, ds) = planted(&small(), 3);
    let cfg = TrainConfig {
        epochs: 40,
        select_on: Selection::BestValidationHit10,
        ..Default::default()
    };
    let clusters = fit_clusters(&ds, &table, &cfg).unwrap();
    let out = train(&ds, &table, &clusters, &cfg).unwrap();
    let e = out.model.meta.selected_epochs[0];
    assert!(e.is_multiple_of(10) && (10..=40).contains(&e), "{e}");
}

#[test]
fn bias_models_train_and_round_trip() {
    let (table, _, ds) = planted(&small(), 5);
    let cfg = TrainConfig {
        epochs: 10,
        bias: true,
        ..Default::default()
    };
    let clusters = fit_clusters(&ds, &table, &cfg).unwrap();
    let model = train(&ds, &table, &clusters, &cfg).unwrap().model;
    assert!(model.has_bias());
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes).unwrap();
    assert_eq!(read_model(&bytes).unwrap(), model);
}

/// A random toy problem: a random projection evaluated on random pairs.
fn toy(rng: &mut ChaCha8Rng) -> (ProjectionModel, EmbeddingTable, Vec<RelationPair>) {
    let d = rng.random_range(2..5);
    let n = rng.random_range(5..40);
    let words: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let table = EmbeddingTable::from_rows(&words, &rows, false).unwrap();
    let k = rng.random_range(1..3);
    let projections = (0..k)
        .map(|_| Projection::linear(Matrix::from_vec(d, d, (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect())))
        .collect();
    let mut centroids = Matrix::zeros(k, d);
    for v in centroids.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    let clusters = ClusterModel {
        centroids,
        inertia: 0.0,
        iterations: 0,
        inertia_trace: vec![],
    };
    let meta = train_meta();
    let model = ProjectionModel::new(projections, clusters, Objective::baseline(), meta).unwrap();
    let mut pairs: Vec<RelationPair> = (0..rng.random_range(1..20))
        .map(|_| {
            let a = rng.random_range(0..n);
            let b = (a + rng.random_range(1..n)) % n;
            RelationPair::hypernym(&words[a], &words[b])
        })
        .collect();
    pairs.push(RelationPair::hypernym("missing", &words[0]));
    (model, table, pairs)
}

fn train_meta() -> hyperproj::projection::TrainingMeta {
    hyperproj::projection::TrainingMeta {
        seed: 0,
        epochs: 0,
        batch_size: 1,
        init_std: 0.1,
        vocab_hash: String::new(),
        final_losses: vec![],
        selected_epochs: vec![],
    }
}

#[test]
fn evaluation_agrees_with_itself_on_random_toys() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let (model, table, pairs) = toy(&mut rng);
        let l_max = rng.random_range(2..12);
        let opts = EvalOptions::default();
        let report = evaluate(&model, &table, &pairs, l_max, opts).unwrap();
        assert!(report.hits.windows(2).all(|w| w[0] <= w[1]), "{:?}", report.hits);
        assert!((0.0..=(l_max - 1) as f64).contains(&report.auc));
        assert_eq!(report.n_pairs + report.skips, pairs.len());
        assert_eq!(report.per_pair.len(), report.n_pairs);
        for l in 1..=l_max {
            let h = hit_at(&model, &table, &pairs, l, opts).unwrap();
            assert_eq!(h.score, report.hits[l - 1], "hit@{l}");
            assert_eq!(h.n_pairs, report.n_pairs);
        }
        let ranks: Vec<Option<usize>> = report.per_pair.iter().map(|p| p.rank).collect();
        let recomputed = auc(&hits_from_ranks(&ranks, l_max)).unwrap();
        assert!((recomputed - report.auc).abs() <= 1e-12);
    }
}
