//! Densities, normalizers and the sampler against quadrature and
//! closed-form oracles.

mod support;

use fat2thin::qgaussian::{normalizer, sample_standard};
use fat2thin::{EntropicIndex, QGaussian1D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, SQRT_2};
use support::{integrate, integrate_real_line, ks_closed, ks_numeric};

fn q(v: f64) -> EntropicIndex {
    EntropicIndex::new(v).unwrap()
}

/// `exp_q(-x^2 / 2)` written out directly.
fn unnormalized_unit(qv: f64, x: f64) -> f64 {
    if qv == 1.0 {
        return (-0.5 * x * x).exp();
    }
    let base = 1.0 - (1.0 - qv) * 0.5 * x * x;
    if base <= 0.0 {
        0.0
    } else {
        base.powf(1.0 / (1.0 - qv))
    }
}

fn quadrature_mass(d: &QGaussian1D) -> f64 {
    let f = |x: f64| d.density(x);
    if d.q().is_sparse() {
        let r = d.support_radius();
        integrate(&f, d.mu() - r, d.mu() + r, 1e-11)
    } else {
        integrate_real_line(&|x| f(d.mu() + x), d.sigma(), 1e-11)
    }
}

#[test]
fn densities_integrate_to_one() {
    for &qv in &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5] {
        for &sigma in &[0.5, 1.0, 2.0] {
            let d = QGaussian1D::new(q(qv), 0.3, sigma).unwrap();
            let mass = quadrature_mass(&d);
            assert!((mass - 1.0).abs() < 1e-6, "q={qv} sigma={sigma}: {mass}");
        }
    }
}

#[test]
fn normalizer_anchors_by_quadrature() {
    let z0 = integrate(&|x| unnormalized_unit(0.0, x), -SQRT_2, SQRT_2, 1e-12);
    assert!((z0 - 4.0 * SQRT_2 / 3.0).abs() < 1e-9, "{z0}");
    let z2 = integrate_real_line(&|x| unnormalized_unit(2.0, x), 1.0, 1e-11);
    assert!((z2 - SQRT_2 * PI).abs() < 1e-8, "{z2}");
    assert!((normalizer(q(0.0), 1.0).unwrap() - z0).abs() < 1e-9);
    assert!((normalizer(q(2.0), 1.0).unwrap() - z2).abs() < 1e-8);
}

#[test]
fn normalizer_matches_quadrature_across_indices() {
    for &qv in &[0.0, 0.25, 0.5, 0.9, 1.0, 1.2, 1.5, 2.0, 2.5] {
        for &sigma in &[0.5, 1.0, 2.0] {
            let raw = |x: f64| unnormalized_unit(qv, x / sigma);
            let z = if qv < 1.0 {
                let r = sigma * (2.0 / (1.0 - qv)).sqrt();
                integrate(&raw, -r, r, 1e-12)
            } else {
                integrate_real_line(&raw, sigma, 1e-11)
            };
            let closed = normalizer(q(qv), sigma).unwrap();
            assert!((closed - z).abs() / z < 1e-7, "q={qv} sigma={sigma}: {closed} vs {z}");
        }
    }
}

fn draws(qv: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_standard(q(qv), &mut rng)).collect()
}

#[test]
fn sampler_ks_sparse_and_gaussian() {
    for &qv in &[0.0, 1.0] {
        let d = QGaussian1D::standard(q(qv));
        let mut xs = draws(qv, 200_000, 11);
        let lower = if qv < 1.0 { -d.support_radius() } else { -40.0 };
        let ks = ks_numeric(&mut xs, &|x| d.density(x), lower);
        assert!(ks < 0.01, "q={qv}: KS {ks}");
    }
}

#[test]
fn sampler_ks_cauchy() {
    let scale = SQRT_2;
    let mut xs = draws(2.0, 200_000, 12);
    let ks = ks_closed(&mut xs, &|x| 0.5 + (x / scale).atan() / PI);
    assert!(ks < 0.01, "KS {ks}");
}

#[test]
fn sparse_sampler_support_and_variance() {
    let xs = draws(0.0, 200_000, 13);
    assert!(xs.iter().all(|x| x.abs() < SQRT_2));
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 0.4).abs() < 0.01, "variance {var}");
}

#[test]
fn sampler_ks_intermediate_indices() {
    for &qv in &[0.5, 1.5] {
        let d = QGaussian1D::standard(q(qv));
        let mut xs = draws(qv, 100_000, 14);
        let lower = if qv < 1.0 { -d.support_radius() } else { -1e4 };
        let ks = ks_numeric(&mut xs, &|x| d.density(x), lower);
        assert!(ks < 0.01, "q={qv}: KS {ks}");
    }
}

#[test]
fn central_interval_holds_its_mass() {
    for &qv in &[0.0, 0.5, 1.0, 1.5, 2.0] {
        let d = QGaussian1D::new(q(qv), -1.0, 1.7).unwrap();
        let w = d.central_interval_width(0.95).unwrap();
        let mass = integrate(&|x| d.density(x), -1.0 - w / 2.0, -1.0 + w / 2.0, 1e-11);
        assert!((mass - 0.95).abs() < 1e-6, "q={qv}: {mass}");
    }
}
