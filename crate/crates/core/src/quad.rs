//! Gauss-Legendre quadrature with substitutions for algebraic endpoint
//! singularities.
//!
//! The Volterra kernel and everything built on it produce integrands with
//! `(x - a)^p`, `p > -1`, blow-ups at panel edges. Those are removed by the
//! change of variables `x = a + v^2` (resp. `x = b - v^2`), after which plain
//! composite Gauss-Legendre is accurate.

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre recurrence; cached per size.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(rule) = guard.get(&n) {
        return rule;
    }
    let rule: &'static _ = Box::leak(Box::new(compute_gl(n)));
    guard.insert(n, rule);
    rule
}

fn compute_gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
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

/// n-point Gauss-Legendre on [a, b].
pub fn integrate<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    if a == b {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Integrate f over [a, b] where f has an integrable algebraic singularity at
/// the left endpoint a: substitute x = a + v^2.
pub fn integrate_singular_left<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    let l = (b - a).max(0.0).sqrt();
    // Geometric grading toward v = 0 soaks up the residual v^p corner.
    integrate_graded(0.0, l, n, |v| 2.0 * v * f(a + v * v))
}

/// Integrate f over [a, b] where f blows up at the right endpoint b:
/// substitute x = b - v^2.
pub fn integrate_singular_right<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    let l = (b - a).max(0.0).sqrt();
    integrate_graded(0.0, l, n, |v| 2.0 * v * f(b - v * v))
}

/// Composite rule on [a, b] with panels geometrically refined toward a.
pub fn integrate_graded<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    if a == b {
        return 0.0;
    }
    let len = b - a;
    let cuts = [0.0, 1.0 / 64.0, 1.0 / 8.0, 1.0];
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        acc += integrate(a + w[0] * len, a + w[1] * len, n, &mut f);
    }
    acc
}

/// Integrate over [a, b] with singularities allowed at both endpoints.
pub fn integrate_singular_both<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    let mid = 0.5 * (a + b);
    integrate_singular_left(a, mid, n, &mut f) + integrate_singular_right(mid, b, n, &mut f)
}

/// Fixed nodes/weights for integrals over the convex-combination parameter.
pub fn theta_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(n);
    let t: Vec<f64> = nodes.iter().map(|x| 0.5 * (x + 1.0)).collect();
    let w: Vec<f64> = weights.iter().map(|w| 0.5 * w).collect();
    (t, w)
}
