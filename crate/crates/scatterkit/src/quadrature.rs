//! Composite Gauss-Legendre quadrature with panel doubling.

use once_cell::sync::Lazy;

/// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1].
///
/// Nodes are found by Newton iteration on the Legendre polynomial, seeded
/// with the Chebyshev angle approximation.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n and its derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
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

static GL64: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| gauss_legendre(64));

const MAX_PANELS: usize = 1 << 12;

fn panels_sum<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = &*GL64;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            acc += w * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

/// Adaptive integral of `f` over [a, b]: 64-node panels, doubled until the
/// estimate changes by less than 1e-10 (absolute, or relative for large
/// magnitudes).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let mut panels = 1;
    let mut prev = panels_sum(&f, a, b, panels);
    loop {
        panels *= 2;
        let cur = panels_sum(&f, a, b, panels);
        let tol = 1e-10 * prev.abs().max(1.0);
        if (cur - prev).abs() < tol || panels >= MAX_PANELS {
            return cur;
        }
        prev = cur;
    }
}

fn log_panels_sum<F: Fn(f64) -> f64>(logf: &F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = &*GL64;
    let h = (b - a) / panels as f64;
    let half = 0.5 * h;
    let mut vals = Vec::with_capacity(panels * nodes.len());
    for p in 0..panels {
        let mid = a + p as f64 * h + half;
        for x in nodes {
            vals.push(logf(mid + half * x));
        }
    }
    let peak = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return peak;
    }
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        acc += weights[i % weights.len()] * (v - peak).exp();
    }
    (acc * half).ln() + peak
}

/// log of the integral of exp(logf) over [a, b], accumulated with
/// max-subtraction so strongly peaked integrands do not overflow.
pub fn log_integrate<F: Fn(f64) -> f64>(logf: F, a: f64, b: f64) -> f64 {
    let mut panels = 1;
    let mut prev = log_panels_sum(&logf, a, b, panels);
    loop {
        panels *= 2;
        let cur = log_panels_sum(&logf, a, b, panels);
        if (cur - prev).abs() < 1e-12 || panels >= MAX_PANELS {
            return cur;
        }
        prev = cur;
    }
}

/// Trapezoid rule on an irregular grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}
