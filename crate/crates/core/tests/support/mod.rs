//! Numerical oracles shared by the integration tests: adaptive quadrature,
//! empirical CDF distances and central finite differences. None of this
//! uses the library's own closed forms.
#![allow(dead_code)]

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // split first so narrow peaks are not missed by the initial estimate
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = lo + h;
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            rec(f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 50)
        })
        .sum()
}

/// Integral over the real line via `x = scale * sinh(u)`, which turns
/// polynomial tails into exponential ones.
pub fn integrate_real_line(f: &dyn Fn(f64) -> f64, scale: f64, tol: f64) -> f64 {
    let g = |u: f64| f(scale * u.sinh()) * scale * u.cosh();
    integrate(&g, -200.0, 200.0, tol)
}

/// Three-point Gauss-Legendre on `[a, b]`.
pub fn gauss3(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let x = (0.6f64).sqrt();
    h * (5.0 * f(c - h * x) + 8.0 * f(c) + 5.0 * f(c + h * x)) / 9.0
}

/// Kolmogorov-Smirnov distance between samples and the CDF obtained by
/// integrating `density` from `lower` through the sorted samples.
pub fn ks_numeric(samples: &mut [f64], density: &dyn Fn(f64) -> f64, lower: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut cdf = integrate(density, lower, samples[0], 1e-12);
    let mut prev = samples[0];
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        if x > prev {
            // sub-divide long gaps in the tails
            let parts = (((x - prev) / 0.01).ceil() as usize).clamp(1, 1000);
            let h = (x - prev) / parts as f64;
            for k in 0..parts {
                let lo = prev + k as f64 * h;
                cdf += gauss3(density, lo, lo + h);
            }
            prev = x;
        }
        d = d.max((cdf - i as f64 / n).abs()).max(((i + 1) as f64 / n - cdf).abs());
    }
    d
}

/// KS distance against a closed-form CDF.
pub fn ks_closed(samples: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let c = cdf(x);
        d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs())
    })
}

/// Central differences of `f` at `x`.
pub fn fd_gradient(x: &[f64], f: &dyn Fn(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}
