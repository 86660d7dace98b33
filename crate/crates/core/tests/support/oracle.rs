#![allow(dead_code)]
//! Central-difference gradient oracle over an independently written loss.
//! Shared by the core gradient tests and the acceptance suite.

use hyperproj::linalg::Matrix;
use hyperproj::projection::{gradient, total_loss, Batch, Objective, PenaltyProduct, Projection, RegularizerKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Straight-line loop version of the objective, sharing no code with the library.
#[allow(clippy::too_many_arguments)]
pub fn naive_loss(
    phi: &[f64],
    bias: Option<&[f64]>,
    d: usize,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    zs: &[Vec<f64>],
    kind: RegularizerKind,
    lambda: f64,
    cosine: bool,
) -> f64 {
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|j| (0..d).map(|i| v[i] * phi[i * d + j]).sum::<f64>() + bias.map_or(0.0, |b| b[j]))
            .collect()
    };
    let n = xs.len() as f64;
    let mut base = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let p = apply(x);
        base += (0..d).map(|j| (p[j] - y[j]).powi(2)).sum::<f64>();
    }
    base /= n;
    let (reproject, negatives) = match kind {
        RegularizerKind::None => return base,
        RegularizerKind::AsymmetricPlain => (false, false),
        RegularizerKind::AsymmetricReproj => (true, false),
        RegularizerKind::NeighborPlain => (false, true),
        RegularizerKind::NeighborReproj => (true, true),
    };
    let mut reg = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let z = if negatives { &zs[i] } else { x };
        let mut u = apply(x);
        if reproject {
            u = apply(&u);
        }
        let mut s: f64 = (0..d).map(|j| u[j] * z[j]).sum();
        if cosine {
            let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            s /= nu * nz;
        }
        reg += s * s;
    }
    base + lambda * reg / n
}

pub struct Instance {
    pub d: usize,
    pub phi: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub zs: Vec<Vec<f64>>,
    pub lambda: f64,
}

pub fn instance(rng: &mut ChaCha8Rng, d: usize, with_bias: bool) -> Instance {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut vecs = |n: usize, s: f64| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| s * normal.sample(rng)).collect()).collect()
    };
    let phi = vecs(d, 0.4).concat();
    let bias = with_bias.then(|| vecs(1, 0.3).remove(0));
    let n = 1 + (d * 7) % 6;
    let xs = vecs(n, 1.0);
    let ys = vecs(n, 1.0);
    let zs = vecs(n, 1.0);
    let lambda = rng.random_range(0.01..2.0);
    Instance {
        d,
        phi,
        bias,
        xs,
        ys,
        zs,
        lambda,
    }
}

/// max |analytic - numeric| / max(max |numeric|, 1e-8) over all parameters.
pub fn relative_error(inst: &Instance, kind: RegularizerKind, product: PenaltyProduct) -> f64 {
    let d = inst.d;
    let cosine = product == PenaltyProduct::Cosine;
    let mut proj = Projection::linear(Matrix::from_vec(d, d, inst.phi.clone()));
    proj.bias = inst.bias.clone();
    let batch = Batch {
        xs: inst.xs.iter().map(|v| v.as_slice()).collect(),
        ys: inst.ys.iter().map(|v| v.as_slice()).collect(),
        zs: Some(inst.zs.iter().map(|v| v.as_slice()).collect()),
    };
    let obj = Objective::new(kind, inst.lambda).unwrap().with_product(product);
    let (parts, grad) = gradient(&proj, &batch, &obj).unwrap();

    let loss_at = |phi: &[f64], bias: Option<&[f64]>| {
        naive_loss(phi, bias, d, &inst.xs, &inst.ys, &inst.zs, kind, inst.lambda, cosine)
    };
    let reference = loss_at(&inst.phi, inst.bias.as_deref());
    assert!(
        (parts.total - reference).abs() <= 1e-10 * reference.abs().max(1.0),
        "{kind}: loss {} vs oracle {reference}",
        parts.total
    );
    assert_eq!(total_loss(&proj, &batch, &obj).unwrap().total, parts.total);

    let h = 1e-5;
    let mut analytic: Vec<f64> = grad.phi.as_slice().to_vec();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..d * d {
        let mut plus = inst.phi.clone();
        let mut minus = inst.phi.clone();
        plus[i] += h;
        minus[i] -= h;
        numeric.push((loss_at(&plus, inst.bias.as_deref()) - loss_at(&minus, inst.bias.as_deref())) / (2.0 * h));
    }
    if let Some(b) = &inst.bias {
        analytic.extend_from_slice(grad.bias.as_ref().unwrap());
        for i in 0..d {
            let mut plus = b.clone();
            let mut minus = b.clone();
            plus[i] += h;
            minus[i] -= h;
            numeric.push((loss_at(&inst.phi, Some(&plus)) - loss_at(&inst.phi, Some(&minus))) / (2.0 * h));
        }
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}
