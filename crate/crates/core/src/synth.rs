//! Planted-solution fixtures: embeddings and relations with a known projection.
//!
//! Hyponyms are uniform on the unit sphere. Each planted cluster owns a
//! mixing matrix `A = scale · Qᵀ R Q` where `Q` is a random orthogonal basis
//! and `R` rotates consecutive coordinate pairs by `hypernym_angle`, so every
//! noiseless hypernym `xA` makes exactly that angle with its hyponym (odd
//! dimensions leave one axis scaled by the cosine instead). Hypernyms get
//! isotropic Gaussian noise. Each hyponym gets `distractors` synonyms placed
//! uniformly within `distractor_angle` of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Relation, RelationPair};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, random_orthogonal, vec_mat, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub pairs: usize,
    /// Standard deviation of the per-coordinate hypernym noise.
    pub noise: f64,
    /// Synonym distractors per hyponym.
    pub distractors: usize,
    pub seed: u64,
    pub clusters: usize,
    pub hypernym_angle_deg: f64,
    pub distractor_angle_deg: f64,
    pub scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 10,
            pairs: 1000,
            noise: 0.0,
            distractors: 0,
            seed: 0,
            clusters: 1,
            hypernym_angle_deg: 60.0,
            distractor_angle_deg: 15.0,
            scale: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub table: EmbeddingTable,
    pub relations: Vec<RelationPair>,
    /// Planted matrix per cluster; hyponym `i` belongs to cluster `i % clusters`.
    pub mixing: Vec<Matrix>,
}

pub fn hyponym_name(i: usize) -> String {
    format!("hypo{i}")
}

pub fn hypernym_name(i: usize) -> String {
    format!("hyper{i}")
}

pub fn distractor_name(i: usize, j: usize) -> String {
    format!("syn{i}_{j}")
}

/// `scale · Qᵀ R Q` for a rotation `R` of coordinate pairs by `angle` radians.
fn planted_matrix<R: Rng>(d: usize, angle: f64, scale: f64, rng: &mut R) -> Matrix {
    let q = random_orthogonal(d, rng);
    let (c, s) = (angle.cos(), angle.sin());
    let mut r = Matrix::zeros(d, d);
    for b in 0..d / 2 {
        let (i, j) = (2 * b, 2 * b + 1);
        r.set(i, i, c);
        r.set(i, j, s);
        r.set(j, i, -s);
        r.set(j, j, c);
    }
    if d % 2 == 1 {
        r.set(d - 1, d - 1, c);
    }
    let mut a = q.transpose().matmul(&r).matmul(&q);
    for v in a.as_mut_slice() {
        *v *= scale;
    }
    a
}

fn unit_gaussian<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector at a uniform angle in `[0, max_angle]` from unit vector `x`.
fn near<R: Rng>(x: &[f64], max_angle: f64, rng: &mut R) -> Vec<f64> {
    let w = loop {
        let mut w = unit_gaussian(x.len(), rng);
        let p = dot(&w, x);
        for (wi, xi) in w.iter_mut().zip(x) {
            *wi -= p * xi;
        }
        let n = norm(&w);
        if n > 1e-8 {
            break w.into_iter().map(|v| v / n).collect::<Vec<_>>();
        }
    };
    let phi = max_angle * rng.random::<f64>();
    x.iter().zip(&w).map(|(a, b)| phi.cos() * a + phi.sin() * b).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthFixture> {
    if cfg.dim < 2 {
        return Err(Error::Invalid("synthetic fixtures need at least 2 dimensions".into()));
    }
    if cfg.pairs == 0 || cfg.clusters == 0 {
        return Err(Error::Invalid("pair and cluster counts must be positive".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) || !(cfg.scale > 0.0 && cfg.scale.is_finite()) {
        return Err(Error::Invalid("noise must be non-negative and scale positive".into()));
    }
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mixing: Vec<Matrix> = (0..cfg.clusters)
        .map(|_| planted_matrix(d, cfg.hypernym_angle_deg.to_radians(), cfg.scale, &mut rng))
        .collect();
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid normal");

    let mut words = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut relations = Vec::new();
    for i in 0..cfg.pairs {
        let x = unit_gaussian(d, &mut rng);
        let mut y = vec_mat(&x, &mixing[i % cfg.clusters]);
        if cfg.noise > 0.0 {
            for v in &mut y {
                *v += noise.sample(&mut rng);
            }
        }
        let synonyms: Vec<Vec<f64>> = (0..cfg.distractors)
            .map(|_| near(&x, cfg.distractor_angle_deg.to_radians(), &mut rng))
            .collect();
        words.push(hyponym_name(i));
        words.push(hypernym_name(i));
        rows.push(x);
        rows.push(y);
        relations.push(RelationPair::hypernym(hyponym_name(i), hypernym_name(i)));
        for (j, z) in synonyms.into_iter().enumerate() {
            words.push(distractor_name(i, j));
            rows.push(z);
            relations.push(RelationPair::new(hyponym_name(i), distractor_name(i, j), Relation::Synonym));
        }
    }
    let table = EmbeddingTable::from_rows(&words, &rows, false)?;
    Ok(SynthFixture {
        table,
        relations,
        mixing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypernyms_sit_at_the_planted_angle() {
        let f = generate(&SynthConfig {
            dim: 6,
            pairs: 20,
            ..Default::default()
        })
        .unwrap();
        for i in 0..20 {
            let x = f.table.vector_of(&hyponym_name(i)).unwrap();
            let y = f.table.vector_of(&hypernym_name(i)).unwrap();
            let cos = dot(x, y) / (norm(x) * norm(y));
            assert!((cos - 0.5).abs() < 1e-12, "{cos}");
            assert!((norm(y) - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn distractors_stay_within_their_cone() {
        let f = generate(&SynthConfig {
            dim: 8,
            pairs: 10,
            distractors: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(f.table.len(), 10 * 5);
        assert_eq!(f.relations.len(), 10 * 4);
        for i in 0..10 {
            let x = f.table.vector_of(&hyponym_name(i)).unwrap();
            for j in 0..3 {
                let z = f.table.vector_of(&distractor_name(i, j)).unwrap();
                let angle = dot(x, z).clamp(-1.0, 1.0).acos().to_degrees();
                assert!(angle <= 15.0 + 1e-9, "{angle}");
            }
        }
    }

    #[test]
    fn no_distractors_means_only_hypernyms() {
        let f = generate(&SynthConfig {
            pairs: 5,
            ..Default::default()
        })
        .unwrap();
        assert!(f.relations.iter().all(|r| r.relation == Relation::Hypernym));
    }

    #[test]
    fn seeded() {
        let cfg = SynthConfig {
            pairs: 30,
            noise: 0.1,
            distractors: 2,
            seed: 9,
            ..Default::default()
        };
        let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
        assert_eq!(a.table.vectors(), b.table.vectors());
        assert_eq!(a.relations, b.relations);
    }

    #[test]
    fn odd_dimension_keeps_the_angle() {
        let f = generate(&SynthConfig {
            dim: 5,
            pairs: 5,
            hypernym_angle_deg: 60.0,
            scale: 1.0,
            ..Default::default()
        })
        .unwrap();
        let a = &f.mixing[0];
        let x = f.table.vector_of("hypo0").unwrap();
        assert!((dot(&vec_mat(x, a), x) - 0.5).abs() < 1e-12);
    }
}
