//! Hypernym prediction by projection learning over word embeddings.
//!
//! A hyponym vector `x` is mapped to `xΦ`, and the nearest vocabulary words to
//! the result are taken as hypernym candidates. Training pairs are grouped by
//! k-means over their `hypernym - hyponym` offsets and one `Φ` is fit per
//! group with Adam. The least-squares objective can be extended with
//! penalties that push projections away from the hyponym itself or from
//! explicit negatives such as synonyms, optionally after projecting twice.
//!
//! The pipeline, end to end:
//!
//! 1. [`embeddings::load_embeddings`] and [`dataset::load_relations`]
//! 2. [`dataset::lexical_split`] and [`dataset::RelationDataset::bind`]
//! 3. [`training::fit_clusters`] and [`training::train`]
//! 4. [`evaluation::evaluate`]

pub mod clustering;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod model_file;
pub mod projection;
pub mod synth;
pub mod training;

pub use clustering::{fit_kmeans, ClusterModel};
pub use dataset::{lexical_split, Bucket, Relation, RelationDataset, RelationPair, Split, SplitFractions};
pub use embeddings::{load_embeddings, EmbeddingFormat, EmbeddingTable, NeighborList, Similarity};
pub use error::{Error, Result};
pub use evaluation::{auc, evaluate, hit_at, EvalOptions, EvalReport};
pub use linalg::Matrix;
pub use projection::{Objective, PenaltyProduct, Projection, ProjectionModel, RegularizerKind};
pub use training::{train, AdamParams, Selection, TrainConfig};
