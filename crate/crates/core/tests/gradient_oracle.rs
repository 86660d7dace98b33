//! Analytic gradients against central finite differences of an independently
//! written loss.

#[path = "support/oracle.rs"]
mod oracle;

use hyperproj::linalg::Matrix;
use hyperproj::projection::{gradient, Batch, Objective, PenaltyProduct, Projection, RegularizerKind};
use oracle::{instance, relative_error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_kind_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20170403);
    let mut worst = 0.0f64;
    for d in [2, 5, 10] {
        for _ in 0..100 {
            let inst = instance(&mut rng, d, false);
            for kind in RegularizerKind::ALL {
                let err = relative_error(&inst, kind, PenaltyProduct::Dot);
                assert!(err < 1e-4, "{kind} at d={d}: relative error {err}");
                worst = worst.max(err);
            }
        }
    }
    eprintln!("worst relative error {worst:e}");
}

#[test]
fn cosine_penalty_and_bias_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [2, 5] {
        for _ in 0..30 {
            let inst = instance(&mut rng, d, true);
            for kind in RegularizerKind::ALL {
                for product in [PenaltyProduct::Dot, PenaltyProduct::Cosine] {
                    let err = relative_error(&inst, kind, product);
                    assert!(err < 1e-4, "{kind}/{product:?} with bias at d={d}: {err}");
                }
            }
        }
    }
}

#[test]
fn zero_lambda_gradient_is_the_baseline_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [2, 5, 10] {
        let inst = instance(&mut rng, d, false);
        let proj = Projection::linear(Matrix::from_vec(d, d, inst.phi.clone()));
        let batch = Batch {
            xs: inst.xs.iter().map(|v| v.as_slice()).collect(),
            ys: inst.ys.iter().map(|v| v.as_slice()).collect(),
            zs: Some(inst.zs.iter().map(|v| v.as_slice()).collect()),
        };
        let (_, base) = gradient(&proj, &batch, &Objective::baseline()).unwrap();
        for kind in RegularizerKind::ALL {
            let (_, g) = gradient(&proj, &batch, &Objective::new(kind, 0.0).unwrap()).unwrap();
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&g.phi), bits(&base.phi), "{kind}");
        }
    }
}
