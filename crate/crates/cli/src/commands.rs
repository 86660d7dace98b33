use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use anyhow::Result;
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use hyperproj::dataset::{load_relations, write_relations, RelationFile};
use hyperproj::evaluation::{evaluate, predict_candidates};
use hyperproj::model_file::{load_model, write_model};
use hyperproj::synth::{generate, SynthConfig};
use hyperproj::training::{fit_clusters, train as fit, TrainConfig};
use hyperproj::{
    lexical_split, load_embeddings, AdamParams, Bucket, ClusterModel, EmbeddingFormat, EmbeddingTable, EvalOptions,
    Objective, RegularizerKind, RelationDataset, Selection, SplitFractions,
};

use crate::output::{ensure_dir, sibling, RunManifest, Staged};
use crate::{ClusterArgs, EmbeddingArgs, EvalArgs, PredictArgs, SplitArgs, SynthArgs, TrainArgs, UsageError};

fn embeddings(args: &EmbeddingArgs, manifest: &mut RunManifest) -> Result<EmbeddingTable> {
    let table = manifest.time("load_embeddings", || {
        load_embeddings(&args.embeddings, args.format, args.normalize)
    })?;
    manifest.input(&args.embeddings)?;
    info!("{} words, {} dimensions", table.len(), table.dim());
    Ok(table)
}

fn relations(path: &Path, manifest: &mut RunManifest) -> Result<RelationFile> {
    let file = load_relations(path)?;
    manifest.input(path)?;
    if file.duplicates > 0 {
        info!("{}: ignored {} duplicate lines", path.display(), file.duplicates);
    }
    Ok(file)
}

fn tsv(pairs: &[hyperproj::RelationPair]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_relations(pairs, &mut buf)?;
    Ok(buf)
}

pub fn split(args: SplitArgs) -> Result<()> {
    let fractions = SplitFractions::new(args.train, args.validation, args.test)?;
    let mut manifest = RunManifest::new(
        "split",
        json!({ "fractions": fractions, "seed": args.seed }),
    );
    let file = relations(&args.relations, &mut manifest)?;
    let split = manifest.time("split", || lexical_split(&file.pairs, fractions, args.seed))?;

    ensure_dir(&args.out)?;
    let mut staged = Staged::default();
    let counts = split.positive_counts(&file.pairs);
    for bucket in Bucket::ALL {
        let pairs: Vec<_> = split.pairs_in(&file.pairs, bucket).cloned().collect();
        staged.add(&args.out.join(format!("{}.tsv", bucket.as_str())), &tsv(&pairs)?)?;
    }
    let mut assignment = Vec::new();
    split.write_manifest(&file.pairs, &mut assignment)?;
    staged.add(&args.out.join("split.tsv"), &assignment)?;
    manifest.finish(staged, &args.out.join("manifest.json"))?;

    let total: usize = counts.iter().sum();
    for (bucket, n) in Bucket::ALL.iter().zip(counts) {
        println!(
            "{}\t{}\t{:.4}",
            bucket.as_str(),
            n,
            if total > 0 { n as f64 / total as f64 } else { 0.0 }
        );
    }
    Ok(())
}

fn load_split(dir: &Path, manifest: &mut RunManifest) -> Result<[RelationFile; 3]> {
    let read = |b: Bucket, m: &mut RunManifest| relations(&dir.join(format!("{}.tsv", b.as_str())), m);
    Ok([
        read(Bucket::Train, manifest)?,
        read(Bucket::Validation, manifest)?,
        read(Bucket::Test, manifest)?,
    ])
}

pub fn cluster(args: ClusterArgs) -> Result<()> {
    let cfg = TrainConfig {
        k: args.k,
        seed: args.seed,
        kmeans_max_iter: args.max_iter,
        kmeans_tol: args.tol,
        ..TrainConfig::default()
    };
    let mut manifest = RunManifest::new(
        "cluster",
        json!({ "k": args.k, "seed": args.seed, "max_iter": args.max_iter, "tol": args.tol, "normalize": args.emb.normalize }),
    );
    let table = embeddings(&args.emb, &mut manifest)?;
    let file = relations(&args.relations, &mut manifest)?;
    let dataset = RelationDataset::from_buckets(&file.pairs, &[], &[], &table)?;
    let model = manifest.time("kmeans", || fit_clusters(&dataset, &table, &cfg))?;
    info!(
        "k-means: inertia {:.6} after {} iterations",
        model.inertia, model.iterations
    );

    let mut staged = Staged::default();
    let mut json = serde_json::to_vec_pretty(&model)?;
    json.push(b'\n');
    staged.add(&args.out, &json)?;
    manifest.finish(staged, &sibling(&args.out, "manifest.json"))?;
    println!("k\t{}\ninertia\t{}\niterations\t{}", model.k(), model.inertia, model.iterations);
    Ok(())
}

fn read_clusters(path: &Path) -> Result<ClusterModel> {
    let text = fs::read_to_string(path).map_err(|e| hyperproj::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let model: ClusterModel = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{}: not a cluster model: {e}", path.display())))?;
    if model.k() == 0 || !model.centroids.is_finite() {
        return Err(UsageError(format!("{}: empty or non-finite centroids", path.display())).into());
    }
    Ok(model)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut lambda = args.lambda;
    if args.regularizer == RegularizerKind::None && lambda != 0.0 {
        info!("no regularizer selected; lambda {lambda} has no effect and is recorded as 0");
        lambda = 0.0;
    }
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        init_std: args.init_std,
        adam: AdamParams {
            alpha: args.learning_rate,
            ..AdamParams::default()
        },
        objective: Objective::new(args.regularizer, lambda)?.with_product(args.penalty),
        bias: args.bias,
        k: args.k,
        seed: args.seed,
        select_on: if args.select_best {
            Selection::BestValidationHit10
        } else {
            Selection::Final
        },
        similarity: args.similarity,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let mut manifest = RunManifest::new(
        "train",
        json!({ "train": cfg, "normalize": args.emb.normalize, "format": args.emb.format }),
    );

    let table = embeddings(&args.emb, &mut manifest)?;
    let [tr, va, te] = load_split(&args.split, &mut manifest)?;
    let dataset = RelationDataset::from_buckets(&tr.pairs, &va.pairs, &te.pairs, &table)?;
    if dataset.train.is_empty() {
        return Err(UsageError("no training pairs could be bound to the embeddings".into()).into());
    }
    if cfg.objective.kind.uses_negatives() && dataset.negatives.is_empty() {
        warn!("{} needs negatives but the training bucket has none; every penalty falls back to the hyponym", cfg.objective.kind);
    }

    let clusters = match &args.clusters {
        Some(path) => {
            let c = read_clusters(path)?;
            manifest.input(path)?;
            if c.dim() != table.dim() {
                return Err(hyperproj::Error::Dimension {
                    expected: table.dim(),
                    found: c.dim(),
                }
                .into());
            }
            c
        }
        None => manifest.time("kmeans", || fit_clusters(&dataset, &table, &cfg))?,
    };
    let outcome = manifest.time("train", || fit(&dataset, &table, &clusters, &cfg))?;

    let mut model_bytes = Vec::new();
    write_model(&outcome.model, &mut model_bytes)?;
    let mut trace = String::from("epoch,cluster,baseline,regularizer,total\n");
    for r in outcome.traces.iter().flatten() {
        writeln!(trace, "{},{},{:e},{:e},{:e}", r.epoch, r.cluster, r.baseline_term, r.reg_term, r.total)?;
    }
    let mut staged = Staged::default();
    staged.add(&args.out, &model_bytes)?;
    staged.add(&sibling(&args.out, "loss.csv"), trace.as_bytes())?;
    manifest.finish(staged, &sibling(&args.out, "manifest.json"))?;

    println!("cluster\tpairs\tsteps\tepoch\tbaseline\tregularizer\ttotal");
    let sizes = cluster_sizes(&dataset, &table, &clusters);
    for (c, loss) in outcome.model.meta.final_losses.iter().enumerate() {
        println!(
            "{c}\t{}\t{}\t{}\t{:e}\t{:e}\t{:e}",
            sizes[c], outcome.steps[c], outcome.model.meta.selected_epochs[c], loss.baseline, loss.regularizer, loss.total
        );
    }
    Ok(())
}

fn cluster_sizes(dataset: &RelationDataset, table: &EmbeddingTable, clusters: &ClusterModel) -> Vec<usize> {
    let offsets = hyperproj::clustering::bound_offsets(&dataset.train, table);
    let mut sizes = vec![0; clusters.k()];
    for row in offsets.row_iter() {
        sizes[clusters.assign(row)] += 1;
    }
    sizes
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    model_sha256: &'a str,
    embeddings_sha256: &'a str,
    pairs_sha256: &'a str,
    normalize: bool,
    l_max: usize,
    options: EvalOptions,
    regularizer: RegularizerKind,
    lambda: f64,
    k: usize,
}

#[derive(Serialize)]
struct Report<'a> {
    hits: &'a [f64],
    auc: f64,
    l_max: usize,
    n_pairs: usize,
    skips: usize,
    config: EvalEcho<'a>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        exclude_query: !args.include_query,
        similarity: args.similarity,
    };
    let mut manifest = RunManifest::new("eval", json!({ "l_max": args.l_max, "options": opts }));
    let model = load_model(&args.model)?;
    manifest.input(&args.model)?;
    let table = embeddings(&args.emb, &mut manifest)?;
    if model.meta.vocab_hash != table.vocab_hash() {
        warn!("the embeddings vocabulary differs from the one the model was trained with");
    }
    let pairs = relations(&args.pairs, &mut manifest)?;
    let report = manifest.time("evaluate", || evaluate(&model, &table, &pairs.pairs, args.l_max, opts))?;
    if report.skips > 0 {
        warn!("skipped {} pairs with words missing from the embeddings", report.skips);
    }

    let json = {
        let echo = EvalEcho {
            model_sha256: &manifest.inputs[0].sha256,
            embeddings_sha256: &manifest.inputs[1].sha256,
            pairs_sha256: &manifest.inputs[2].sha256,
            normalize: args.emb.normalize,
            l_max: args.l_max,
            options: opts,
            regularizer: model.objective.kind,
            lambda: model.objective.lambda,
            k: model.k(),
        };
        let mut v = serde_json::to_vec_pretty(&Report {
            hits: &report.hits,
            auc: report.auc,
            l_max: report.l_max,
            n_pairs: report.n_pairs,
            skips: report.skips,
            config: echo,
        })?;
        v.push(b'\n');
        v
    };
    let mut per_pair = Vec::new();
    report.write_pairs(&mut per_pair)?;
    let mut staged = Staged::default();
    staged.add(&args.out, &json)?;
    staged.add(&sibling(&args.out, "pairs.tsv"), &per_pair)?;
    manifest.finish(staged, &sibling(&args.out, "manifest.json"))?;

    for l in [1, 5, 10] {
        if let Some(h) = report.hit(l) {
            println!("hit@{l}\t{h:.4}");
        }
    }
    println!("auc\t{:.4}\npairs\t{}\nskipped\t{}", report.auc, report.n_pairs, report.skips);
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let mut words = args.words.clone();
    if let Some(path) = &args.words_file {
        let file = fs::File::open(path).map_err(|e| hyperproj::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        for line in BufReader::new(file).lines() {
            let line = line?;
            let w = line.trim();
            if !w.is_empty() {
                words.push(w.to_owned());
            }
        }
    }
    if words.is_empty() {
        return Err(UsageError("give at least one --word or a --words-file".into()).into());
    }
    if args.l == 0 {
        return Err(UsageError("-l must be at least 1".into()).into());
    }
    let opts = EvalOptions {
        exclude_query: !args.include_query,
        similarity: args.similarity,
    };
    let model = load_model(&args.model)?;
    let table = load_embeddings(&args.emb.embeddings, args.emb.format, args.emb.normalize)?;
    if model.dim() != table.dim() {
        return Err(hyperproj::Error::Dimension {
            expected: table.dim(),
            found: model.dim(),
        }
        .into());
    }

    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let mut failed = 0;
    for w in &words {
        match predict_candidates(&model, &table, w, args.l, opts) {
            Ok(list) => {
                for (rank, (cand, score)) in list.words(&table).enumerate() {
                    writeln!(out, "{w}\t{}\t{cand}\t{score:.6}", rank + 1)?;
                }
            }
            Err(hyperproj::Error::UnknownWord(_)) => {
                warn!("`{w}` is not in the vocabulary");
                failed += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.flush()?;
    if failed == words.len() {
        return Err(UsageError("none of the query words are in the vocabulary".into()).into());
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        dim: args.dim,
        pairs: args.pairs,
        noise: args.noise,
        distractors: args.distractors,
        seed: args.seed,
        clusters: args.clusters,
        hypernym_angle_deg: args.angle,
        distractor_angle_deg: args.distractor_angle,
        scale: args.scale,
    };
    let mut manifest = RunManifest::new("synth", json!({ "synth": cfg, "format": args.format }));
    let fixture = manifest.time("generate", || generate(&cfg))?;

    ensure_dir(&args.out)?;
    let mut emb = Vec::new();
    let name = match args.format {
        EmbeddingFormat::Text => {
            fixture.table.write_text(&mut emb)?;
            "embeddings.txt"
        }
        EmbeddingFormat::Binary => {
            fixture.table.write_binary(&mut emb)?;
            "embeddings.bin"
        }
    };
    let mut staged = Staged::default();
    staged.add(&args.out.join(name), &emb)?;
    staged.add(&args.out.join("relations.tsv"), &tsv(&fixture.relations)?)?;
    let mut planted = serde_json::to_vec_pretty(&fixture.mixing)?;
    planted.push(b'\n');
    staged.add(&args.out.join("planted.json"), &planted)?;
    manifest.finish(staged, &args.out.join("manifest.json"))?;
    println!(
        "words\t{}\nrelations\t{}\nembeddings\t{}",
        fixture.table.len(),
        fixture.relations.len(),
        args.out.join(name).display()
    );
    Ok(())
}
