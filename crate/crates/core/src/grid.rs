//! Time grids, sampled paths, two-parameter fields, and the grid versions of
//! the Hölder / variation seminorms.
//!
//! Every estimator here is a maximum or supremum over *grid* pairs, so all
//! reported norms are lower bounds for their continuum counterparts. That is
//! intentional: the whole workbench operates on sampled data.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

/// The exponent bookkeeping every experiment shares: the Hurst index H, the
/// bracketing pair H- < H < H+, the drift regularity alpha, and a negative
/// test exponent. Constructed only through [`ExponentConfig::new`], which
/// enforces the standing inequalities and names the violated one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ExponentConfig {
    pub h: f64,
    pub h_minus: f64,
    pub h_plus: f64,
    pub alpha: f64,
    pub gamma_neg: f64,
}

impl ExponentConfig {
    pub fn new(h: f64, h_minus: f64, h_plus: f64, alpha: f64, gamma_neg: f64) -> Result<Self> {
        if !(1.0 / 3.0 < h_minus && h_minus < h && h < h_plus && h_plus < 0.5) {
            return Err(Error::Constraint(format!(
                "violated \"1/3 < H_- < H < H_+ < 1/2\": H_-={h_minus}, H={h}, H_+={h_plus}"
            )));
        }
        if 3.0 * h_minus <= 1.0 {
            return Err(Error::Constraint(format!(
                "violated \"3H_- > 1\": H_-={h_minus}"
            )));
        }
        if 1.0 + (alpha - 1.0) * h_plus <= 0.5 {
            return Err(Error::Constraint(format!(
                "violated \"1 + (alpha-1)H_+ > 1/2\": alpha={alpha}, H_+={h_plus}"
            )));
        }
        if alpha <= 1.0 - 1.0 / (2.0 * h) {
            return Err(Error::Constraint(format!(
                "violated \"alpha > 1 - 1/(2H)\": alpha={alpha}, bound={}",
                1.0 - 1.0 / (2.0 * h)
            )));
        }
        if !(-1.0 / (2.0 * h) < gamma_neg && gamma_neg < 0.0) {
            return Err(Error::Constraint(format!(
                "violated \"gamma_neg in (-1/(2H), 0)\": gamma_neg={gamma_neg}"
            )));
        }
        Ok(Self { h, h_minus, h_plus, alpha, gamma_neg })
    }

    /// The default operating point of the workbench.
    pub fn standard() -> Self {
        Self::new(0.4, 0.35, 0.45, 0.1, -0.9).expect("standard exponents are admissible")
    }
}

/// Strictly increasing times spanning a closed interval inside [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("grid times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// 2^level + 1 equally spaced points on [s, t].
    pub fn dyadic(level: u32, s: f64, t: f64) -> Result<Self> {
        if !(0.0 <= s && s < t && t <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 <= S < T <= 1, got S={s}, T={t}"
            )));
        }
        let n = 1usize << level;
        let times = (0..=n)
            .map(|k| s + (t - s) * (k as f64) / (n as f64))
            .collect();
        Ok(Self { times })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    /// Number of cells (intervals).
    pub fn ncells(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, cell: usize) -> f64 {
        self.times[cell + 1] - self.times[cell]
    }

    /// Index of a time on the grid, matched within an absolute tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.span().max(1.0);
        self.times.iter().position(|&x| (x - t).abs() <= tol)
    }

    /// Sub-grid from index i0 to index i1 inclusive.
    pub fn restrict(&self, i0: usize, i1: usize) -> Result<Self> {
        if i0 >= i1 || i1 >= self.times.len() {
            return Err(Error::InvalidInput(format!("bad restriction [{i0}, {i1}]")));
        }
        Ok(Self { times: self.times[i0..=i1].to_vec() })
    }
}

/// A sampled function [S,T] -> R^dim, one value per grid time.
#[derive(Debug, Clone)]
pub struct SampledPath {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>, // row-major: values[i * dim + k]
}

impl SampledPath {
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                grid.len() * dim,
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn<F: FnMut(f64) -> Vec<f64>>(grid: Arc<TimeGrid>, dim: usize, mut f: F) -> Self {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for &t in grid.times() {
            let v = f(t);
            assert_eq!(v.len(), dim);
            values.extend_from_slice(&v);
        }
        Self { grid, dim, values }
    }

    pub fn scalar_from_fn<F: FnMut(f64) -> f64>(grid: Arc<TimeGrid>, mut f: F) -> Self {
        let values = grid.times().iter().map(|&t| f(t)).collect();
        Self { grid, dim: 1, values }
    }

    pub fn zeros(grid: Arc<TimeGrid>, dim: usize) -> Self {
        let n = grid.len();
        Self { grid, dim, values: vec![0.0; n * dim] }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Scalar value at index i (dim must be 1).
    pub fn at(&self, i: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.values[i]
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    /// Increment f(t_j) - f(t_i), max-norm components.
    pub fn increment(&self, i: usize, j: usize) -> Vec<f64> {
        let a = self.value(i);
        let b = self.value(j);
        a.iter().zip(b).map(|(x, y)| y - x).collect()
    }

    pub fn increment_norm(&self, i: usize, j: usize) -> f64 {
        let a = self.value(i);
        let b = self.value(j);
        a.iter()
            .zip(b)
            .map(|(x, y)| (y - x).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// CSV with header `t,v1..vdim`, rows in index order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 1..=self.dim {
            let _ = write!(out, ",v{k}");
        }
        out.push('\n');
        for i in 0..self.grid.len() {
            let _ = write!(out, "{}", self.grid.t(i));
            for v in self.value(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// A two-parameter field F_{s,t} stored for ordered grid pairs s <= t only,
/// with zero diagonal. `shape` is the per-entry value dimension, flattened.
#[derive(Debug, Clone)]
pub struct TwoParamField {
    grid: Arc<TimeGrid>,
    shape: (usize, usize),
    values: Vec<f64>,
}

#[inline]
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i <= j && j < n);
    i * n - i * (i + 1) / 2 + j
}

impl TwoParamField {
    pub fn zeros(grid: Arc<TimeGrid>, shape: (usize, usize)) -> Self {
        let n = grid.len();
        let npairs = n * (n + 1) / 2;
        Self { grid, shape, values: vec![0.0; npairs * shape.0 * shape.1] }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Vec<f64>>(
        grid: Arc<TimeGrid>,
        shape: (usize, usize),
        mut f: F,
    ) -> Self {
        let mut field = Self::zeros(grid, shape);
        let n = field.grid.len();
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                assert_eq!(v.len(), shape.0 * shape.1);
                field.entry_mut(i, j).copy_from_slice(&v);
            }
        }
        field
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn entry_len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        let w = self.entry_len();
        let p = pair_index(i, j, self.grid.len());
        &self.values[p * w..(p + 1) * w]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let w = self.entry_len();
        let p = pair_index(i, j, self.grid.len());
        &mut self.values[p * w..(p + 1) * w]
    }

    /// Scalar entry (shape must be (1,1)).
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.entry_len(), 1);
        self.entry(i, j)[0]
    }

    pub fn entry_norm(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j).iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// CSV with header `s,t,v...`, rows in pair-index order (i < j).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,t");
        for k in 1..=self.entry_len() {
            let _ = write!(out, ",v{k}");
        }
        out.push('\n');
        let n = self.grid.len();
        for i in 0..n {
            for j in i + 1..n {
                let _ = write!(out, "{},{}", self.grid.t(i), self.grid.t(j));
                for v in self.entry(i, j) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Breakpoint indices of a partition of the grid's interval; always contains
/// the first and last grid index.
#[derive(Debug, Clone)]
pub struct Partition {
    pub breakpoints: Vec<usize>,
}

impl Partition {
    pub fn new(breakpoints: Vec<usize>, grid: &TimeGrid) -> Result<Self> {
        if breakpoints.first() != Some(&0) || breakpoints.last() != Some(&(grid.len() - 1)) {
            return Err(Error::InvalidInput("partition must cover [S, T] exactly".into()));
        }
        if !breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("partition breakpoints must increase".into()));
        }
        Ok(Self { breakpoints })
    }
}

/// Grid Hölder seminorm: max over pairs s < t of |f_{s,t}| / (t-s)^gamma,
/// max-norm over components.
pub fn holder_seminorm(f: &SampledPath, gamma: f64) -> f64 {
    assert!(gamma > 0.0 && gamma <= 1.0, "need 0 < gamma <= 1");
    let n = f.grid().len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dt = f.grid().t(j) - f.grid().t(i);
            best = best.max(f.increment_norm(i, j) / dt.powf(gamma));
        }
    }
    best
}

/// Grid two-parameter Hölder seminorm: max over pairs of |F_{s,t}|/(t-s)^theta.
pub fn holder_seminorm_2(field: &TwoParamField, theta: f64) -> f64 {
    assert!(theta > 0.0, "need theta > 0");
    let n = field.grid().len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dt = field.grid().t(j) - field.grid().t(i);
            best = best.max(field.entry_norm(i, j) / dt.powf(theta));
        }
    }
    best
}

/// Exact grid rho-variation by dynamic programming over the last breakpoint.
///
/// Returns sup over grid partitions of (sum |f increments|^rho)^(1/rho).
pub fn p_variation(f: &SampledPath, rho: f64) -> f64 {
    assert!(rho >= 1.0, "need rho >= 1");
    let n = f.grid().len();
    // best[j] = max over partitions of [0, j] of the power sum
    let mut best = vec![0.0f64; n];
    for j in 1..n {
        let mut b = f64::NEG_INFINITY;
        for i in 0..j {
            let cand = best[i] + f.increment_norm(i, j).powf(rho);
            if cand > b {
                b = cand;
            }
        }
        best[j] = b;
    }
    best[n - 1].powf(1.0 / rho)
}

/// Rectangular-increment rho-variation of a two-parameter function, maximised
/// over pairs of dyadic partitions up to `levels`. A lower estimate of the
/// full supremum, which is not computable at scale.
pub fn variation_2d<F: Fn(f64, f64) -> f64>(q: &F, rho: f64, levels: u32, s: f64, t: f64) -> f64 {
    assert!(rho >= 1.0, "need rho >= 1");
    let mut best: f64 = 0.0;
    for l1 in 0..=levels {
        let n1 = 1usize << l1;
        let p1: Vec<f64> = (0..=n1).map(|k| s + (t - s) * k as f64 / n1 as f64).collect();
        for l2 in 0..=levels {
            let n2 = 1usize << l2;
            let p2: Vec<f64> = (0..=n2).map(|k| s + (t - s) * k as f64 / n2 as f64).collect();
            let mut acc = 0.0;
            for a in p1.windows(2) {
                for b in p2.windows(2) {
                    let rect = q(a[0], b[0]) + q(a[1], b[1]) - q(a[0], b[1]) - q(a[1], b[0]);
                    acc += rect.abs().powf(rho);
                }
            }
            best = best.max(acc.powf(1.0 / rho));
        }
    }
    best
}

/// Greedy stopping times: tau_0 = first grid index, tau_{i+1} = first grid
/// index with norm_fn([tau_i, t]) >= delta. The final time always closes the
/// last interval. Returns (breakpoint indices, N = number of intervals).
pub fn greedy_partition<F: Fn(usize, usize) -> f64>(
    grid: &TimeGrid,
    norm_fn: F,
    delta: f64,
) -> (Vec<usize>, usize) {
    assert!(delta > 0.0, "need delta > 0");
    let n = grid.len();
    let mut taus = vec![0usize];
    let mut cur = 0usize;
    let mut j = 1usize;
    while j < n {
        if norm_fn(cur, j) >= delta {
            taus.push(j);
            cur = j;
        }
        j += 1;
    }
    if *taus.last().unwrap() != n - 1 {
        taus.push(n - 1);
    }
    let count = taus.len() - 1;
    (taus, count)
}

/// Weighted Hölder norm |w(s)| + sup_{s < u < t} |w_t - w_u| / ((u-s)^{h-1} (t-u)^beta).
///
/// The supremum starts at the second grid point; the weight is singular at
/// u = s.
pub fn weighted_holder_norm(w: &SampledPath, beta: f64, h: f64, s: f64) -> Result<f64> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::InvalidInput("need 0 < beta < 1".into()));
    }
    let grid = w.grid();
    if (grid.start() - s).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid must start at s = {s}, starts at {}",
            grid.start()
        )));
    }
    let n = grid.len();
    let mut best = w.value(0).iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 1..n {
        let u = grid.t(i);
        for j in i + 1..n {
            let t = grid.t(j);
            let weight = (u - s).powf(h - 1.0) * (t - u).powf(beta);
            best = best.max(w.increment_norm(i, j) / weight);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_grid(level: u32) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::dyadic(level, 0.0, 1.0).unwrap())
    }

    #[test]
    fn exponent_config_validation() {
        // admissible, including alpha = 0
        assert!(ExponentConfig::new(0.4, 0.35, 0.45, 0.0, -0.9).is_ok());
        assert!(ExponentConfig::new(0.4, 0.35, 0.45, 0.1, -0.9).is_ok());
        // 3 H_- <= 1
        let err = ExponentConfig::new(0.34, 0.335, 0.35, 0.1, -0.9).unwrap_err();
        assert!(err.to_string().contains("3H_- > 1"), "{err}");
        // alpha too negative
        let err = ExponentConfig::new(0.4, 0.35, 0.45, -0.3, -0.9).unwrap_err();
        assert!(err.to_string().contains("alpha > 1 - 1/(2H)"), "{err}");
        // ordering broken
        let err = ExponentConfig::new(0.34, 0.3, 0.35, 0.1, -0.9).unwrap_err();
        assert!(err.to_string().contains("1/3 < H_- < H < H_+ < 1/2"), "{err}");
        // gamma_neg out of range
        let err = ExponentConfig::new(0.4, 0.35, 0.45, 0.1, -1.3).unwrap_err();
        assert!(err.to_string().contains("gamma_neg"), "{err}");
        // 1 + (alpha-1) H_+ <= 1/2
        let err = ExponentConfig::new(0.4, 0.35, 0.49, -0.049, -0.9).unwrap_err();
        assert!(err.to_string().contains("1 + (alpha-1)H_+ > 1/2"), "{err}");
    }

    #[test]
    fn dyadic_grid_examples() {
        let g = TimeGrid::dyadic(1, 0.0, 1.0).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0]);
        let g = TimeGrid::dyadic(0, 0.0, 1.0).unwrap();
        assert_eq!(g.times(), &[0.0, 1.0]);
        let g = TimeGrid::dyadic(3, 0.25, 0.75).unwrap();
        assert_eq!(g.len(), 9);
        for c in 0..g.ncells() {
            assert_relative_eq!(g.dt(c), 0.0625, epsilon = 1e-15);
        }
        assert!(TimeGrid::dyadic(2, 0.5, 0.5).is_err());
        assert!(TimeGrid::dyadic(2, 0.7, 0.2).is_err());
    }

    #[test]
    fn dyadic_refinement_nests() {
        let coarse = TimeGrid::dyadic(3, 0.0, 1.0).unwrap();
        let fine = TimeGrid::dyadic(4, 0.0, 1.0).unwrap();
        for &t in coarse.times() {
            assert!(fine.index_of(t).is_some());
        }
    }

    #[test]
    fn holder_seminorm_examples() {
        let g = unit_grid(6);
        let id = SampledPath::scalar_from_fn(g.clone(), |t| t);
        assert_relative_eq!(holder_seminorm(&id, 1.0), 1.0, epsilon = 1e-12);
        let c = SampledPath::scalar_from_fn(g.clone(), |_| 3.25);
        assert_eq!(holder_seminorm(&c, 0.5), 0.0);
        // sqrt(t) on a dyadic grid attains ratio 1 on the first cell.
        let g8 = unit_grid(8);
        let sq = SampledPath::scalar_from_fn(g8, |t| t.sqrt());
        assert_relative_eq!(holder_seminorm(&sq, 0.5), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn holder_seminorm_2_examples() {
        let g = unit_grid(4);
        let zero = TwoParamField::zeros(g.clone(), (1, 1));
        assert_eq!(holder_seminorm_2(&zero, 0.7), 0.0);
        let sq = TwoParamField::from_fn(g, (1, 1), |i, j| {
            let dt = (j as f64 - i as f64) / 16.0;
            vec![dt * dt]
        });
        assert_relative_eq!(holder_seminorm_2(&sq, 2.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn p_variation_monotone_path_is_total_increment() {
        let g = unit_grid(5);
        let f = SampledPath::scalar_from_fn(g, |t| t * t + 0.5 * t);
        for rho in [1.0, 1.5, 2.0, 3.0] {
            assert_relative_eq!(p_variation(&f, rho), 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn p_variation_zigzag() {
        let g = Arc::new(TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap());
        let f = SampledPath::new(g, 1, vec![0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(p_variation(&f, 1.0), 2.0, epsilon = 1e-15);
    }

    /// Exhaustive oracle: enumerate all partitions of a small grid.
    fn p_variation_bruteforce(f: &SampledPath, rho: f64) -> f64 {
        let n = f.grid().len();
        let interior = n - 2;
        let mut best: f64 = 0.0;
        for mask in 0..(1u32 << interior) {
            let mut pts = vec![0usize];
            for b in 0..interior {
                if mask & (1 << b) != 0 {
                    pts.push(b + 1);
                }
            }
            pts.push(n - 1);
            let sum: f64 = pts
                .windows(2)
                .map(|w| f.increment_norm(w[0], w[1]).powf(rho))
                .sum();
            best = best.max(sum);
        }
        best.powf(1.0 / rho)
    }

    #[test]
    fn p_variation_matches_bruteforce_on_rough_path() {
        // Fixed pseudo-random 8-point path standing in for a sampled rough path.
        let g = Arc::new(TimeGrid::dyadic(3, 0.0, 1.0).unwrap()); // 9 points
        let vals = vec![0.0, 0.31, -0.12, 0.44, 0.05, -0.33, 0.21, 0.6, 0.17];
        let f = SampledPath::new(g, 1, vals).unwrap();
        let rho = 1.0 / 0.35; // 1 / H_minus
        assert_relative_eq!(p_variation(&f, rho), p_variation_bruteforce(&f, rho), epsilon = 1e-12);
    }

    #[test]
    fn variation_2d_examples() {
        // Product kernel telescopes: rectangular increments of s*t sum to
        // (T-S)^2 for every partition pair.
        let v = variation_2d(&|s, t| s * t, 1.0, 3, 0.0, 1.0);
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        let v = variation_2d(&|_, _| 0.0, 2.0, 3, 0.0, 1.0);
        assert_eq!(v, 0.0);
    }

    /// Oracle: direct enumeration at fixed small levels must agree.
    #[test]
    fn variation_2d_matches_direct_enumeration() {
        let q = |s: f64, t: f64| 0.5 * (s.powf(0.8) + t.powf(0.8) - (t - s).abs().powf(0.8));
        let rho = 1.25;
        let by_impl = variation_2d(&q, rho, 2, 0.0, 1.0);
        // hand enumeration of the 3x3 partition-pair combinations
        let mut best: f64 = 0.0;
        for n1 in [1usize, 2, 4] {
            for n2 in [1usize, 2, 4] {
                let p1: Vec<f64> = (0..=n1).map(|k| k as f64 / n1 as f64).collect();
                let p2: Vec<f64> = (0..=n2).map(|k| k as f64 / n2 as f64).collect();
                let mut acc = 0.0;
                for a in p1.windows(2) {
                    for b in p2.windows(2) {
                        acc += (q(a[0], b[0]) + q(a[1], b[1]) - q(a[0], b[1]) - q(a[1], b[0]))
                            .abs()
                            .powf(rho);
                    }
                }
                best = best.max(acc.powf(1.0 / rho));
            }
        }
        assert_relative_eq!(by_impl, best, epsilon = 1e-12);
    }

    #[test]
    fn greedy_partition_examples() {
        let g = TimeGrid::dyadic(5, 0.0, 1.0).unwrap();
        let (taus, n) = greedy_partition(&g, |_, _| 0.0, 0.5);
        assert_eq!(taus, vec![0, 32]);
        assert_eq!(n, 1);

        // norm = interval length, delta = 0.3 on [0,1]: grid-snapped 0.3125 steps.
        let (taus, n) = greedy_partition(&g, |i, j| g.t(j) - g.t(i), 0.3);
        let times: Vec<f64> = taus.iter().map(|&i| g.t(i)).collect();
        assert_eq!(times, vec![0.0, 0.3125, 0.625, 0.9375, 1.0]);
        assert_eq!(n, 4);
    }

    #[test]
    fn greedy_partition_rescan_reproduces() {
        // Oracle: step-by-step sequential recomputation on a p-variation norm.
        let g = Arc::new(TimeGrid::dyadic(6, 0.0, 1.0).unwrap());
        let vals: Vec<f64> = (0..g.len())
            .map(|i| ((i as f64 * 2.399) % 1.7).sin() * 0.3)
            .collect();
        let f = SampledPath::new(g.clone(), 1, vals).unwrap();
        let norm = |i: usize, j: usize| {
            let sub = f.grid().restrict(i, j).unwrap();
            let vals: Vec<f64> = (i..=j).map(|k| f.at(k)).collect();
            let sp = SampledPath::new(Arc::new(sub), 1, vals).unwrap();
            p_variation(&sp, 2.5)
        };
        let delta = 0.1;
        let (taus, n) = greedy_partition(&g, norm, delta);
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
        // sequential re-scan
        let mut expect = vec![0usize];
        let mut cur = 0;
        for j in 1..g.len() {
            if norm(cur, j) >= delta {
                expect.push(j);
                cur = j;
            }
        }
        if *expect.last().unwrap() != g.len() - 1 {
            expect.push(g.len() - 1);
        }
        assert_eq!(taus, expect);
        assert_eq!(n, expect.len() - 1);
    }

    #[test]
    fn weighted_holder_examples() {
        let g = Arc::new(TimeGrid::dyadic(5, 0.25, 1.0).unwrap());
        let zero = SampledPath::zeros(g.clone(), 1);
        assert_eq!(weighted_holder_norm(&zero, 0.9, 0.4, 0.25).unwrap(), 0.0);
        let c = SampledPath::scalar_from_fn(g.clone(), |_| -2.0);
        assert_relative_eq!(weighted_holder_norm(&c, 0.9, 0.4, 0.25).unwrap(), 2.0);
        // wrong start point is rejected
        assert!(weighted_holder_norm(&c, 0.9, 0.4, 0.5).is_err());
    }

    #[test]
    fn csv_round_shapes() {
        let g = unit_grid(2);
        let f = SampledPath::from_fn(g.clone(), 2, |t| vec![t, -t]);
        let csv = f.to_csv();
        assert!(csv.starts_with("t,v1,v2\n0,0,-0\n"));
        let field = TwoParamField::zeros(g, (1, 1));
        assert!(field.to_csv().starts_with("s,t,v1\n"));
    }

    proptest! {
        /// Holder interpolation inequality on the grid:
        /// [f]_gamma <= [f]_gamma' * (T-S)^{gamma'-gamma} for gamma <= gamma'.
        #[test]
        fn holder_exponent_monotonicity(vals in proptest::collection::vec(-1.0f64..1.0, 9..17)) {
            let n = vals.len();
            let grid = Arc::new(TimeGrid::new(
                (0..n).map(|i| i as f64 / (n - 1) as f64).collect()).unwrap());
            let f = SampledPath::new(grid, 1, vals).unwrap();
            let (g1, g2) = (0.3, 0.45);
            let lhs = holder_seminorm(&f, g1);
            let rhs = holder_seminorm(&f, g2); // span = 1
            prop_assert!(lhs <= rhs * 1.0f64.powf(g2 - g1) + 1e-12);
        }

        /// p-variation is nonincreasing in rho and dominated by the Hölder bound:
        /// [f]_{V^{1/gamma}} <= [f]_{C^gamma} (T-S)^gamma.
        #[test]
        fn p_variation_monotone_and_holder_bound(vals in proptest::collection::vec(-1.0f64..1.0, 6..12)) {
            let n = vals.len();
            let grid = Arc::new(TimeGrid::new(
                (0..n).map(|i| i as f64 / (n - 1) as f64).collect()).unwrap());
            let f = SampledPath::new(grid, 1, vals).unwrap();
            let v1 = p_variation(&f, 2.0);
            let v2 = p_variation(&f, 2.8);
            prop_assert!(v2 <= v1 + 1e-10);
            let gamma = 0.5; // rho = 2
            prop_assert!(v1 <= holder_seminorm(&f, gamma) * 1.0f64.powf(gamma) + 1e-10);
        }
    }
}
