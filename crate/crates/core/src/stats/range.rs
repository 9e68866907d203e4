//! Studentized range distribution by numerical integration.
//!
//! P(Q <= q; k, ν) = ∫ f_s(s) P_R(q s; k) ds, where s = sqrt(χ²_ν / ν) and
//! P_R(w; k) = k ∫ φ(z) [Φ(z) - Φ(z - w)]^(k-1) dz is the range CDF of k
//! standard normals. Both integrals use composite Gauss-Legendre rules.

use std::sync::OnceLock;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let (nodes, weights) = rule();
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let mid = a + h * (p as f64 + 0.5);
        for (x, w) in nodes.iter().zip(weights) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    total * 0.5 * h
}

/// CDF of the range of `k` independent standard normals.
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let n = Normal::standard();
    let km1 = (k - 1) as i32;
    let f = |z: f64| n.pdf(z) * (n.cdf(z) - n.cdf(z - w)).max(0.0).powi(km1);
    (k as f64 * integrate(f, -8.5, 8.5 + w, 32)).clamp(0.0, 1.0)
}

/// CDF of the studentized range with `k` groups and `df` error degrees of freedom.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2 && df > 0.0);
    if q <= 0.0 {
        return 0.0;
    }
    if df > 25_000.0 {
        return range_cdf(q, k);
    }
    // density of s = sqrt(chi2_df / df)
    let half = df / 2.0;
    let log_c = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    let density = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (log_c + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
        }
    };
    let spread = 1.0 / (2.0 * df).sqrt();
    let lo = (1.0 - 12.0 * spread).max(0.0);
    let hi = 1.0 + 12.0 * spread.max(0.35);
    let v = integrate(|s| density(s) * range_cdf(q * s, k), lo, hi, 20);
    v.clamp(0.0, 1.0)
}

/// Quantile of the studentized range by bisection on [`ptukey`].
pub fn qtukey(p: f64, k: usize, df: f64) -> f64 {
    assert!((0.0..1.0).contains(&p));
    let (mut lo, mut hi) = (0.0, 1.0);
    while ptukey(hi, k, df) < p {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ptukey(mid, k, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-8 {
            break;
        }
    }
    0.5 * (lo + hi)
}
