//! The Hilbert space of admissible shift directions for the noise, realized
//! through step functions: inner products against the covariance Q, the
//! kernel adjoint K*, and projections onto the future-adapted subspace.
//!
//! Everything routes through the K* image. The projection onto the
//! orthogonal complement of the past subspace acts on images as plain
//! multiplication by the indicator of [s, 1], so
//!
//!   <Pi_s f, Pi_s g>  =  int_s^1 (K* f)(r) (K* g)(r) dr,
//!
//! and the completion of the step functions never has to be materialized.

use crate::error::{Error, Result};
use crate::fbm::{covariance_q, kernel_k, kernel_k_dt, FbmParams, QsTable};
use crate::grid::{holder_seminorm, SampledPath, TimeGrid};
use crate::quad;
use std::sync::Arc;

/// Piecewise-constant, right-continuous function with support in [0, 1],
/// values of dimension d0.
#[derive(Debug, Clone)]
pub struct StepFunction {
    breakpoints: Vec<f64>, // m + 1 ascending points in [0, 1]
    values: Vec<f64>,      // m pieces, d0 values each; 0 outside support
    d0: usize,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, d0: usize) -> Result<Self> {
        if breakpoints.len() < 2 || !breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("breakpoints must strictly increase".into()));
        }
        if breakpoints[0] < 0.0 || *breakpoints.last().unwrap() > 1.0 {
            return Err(Error::InvalidInput("support must lie in [0, 1]".into()));
        }
        if values.len() != (breakpoints.len() - 1) * d0 {
            return Err(Error::ShapeMismatch("one value of dimension d0 per piece".into()));
        }
        Ok(Self { breakpoints, values, d0 })
    }

    /// Indicator 1_{[0, t]} (scalar).
    pub fn indicator(t: f64) -> Result<Self> {
        Self::new(vec![0.0, t], vec![1.0], 1)
    }

    /// Indicator 1_{[a, b]} (scalar).
    pub fn indicator_on(a: f64, b: f64) -> Result<Self> {
        if a == 0.0 {
            Self::indicator(b)
        } else {
            Self::new(vec![a, b], vec![1.0], 1)
        }
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn eval(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if x < self.breakpoints[0] || x >= *self.breakpoints.last().unwrap() {
            return;
        }
        let k = match self.breakpoints.binary_search_by(|b| b.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        out.copy_from_slice(&self.values[k * self.d0..(k + 1) * self.d0]);
    }

    /// Rewrite as sum_k a_k 1_{[0, t_k]} over the breakpoints.
    pub fn jump_representation(&self) -> Vec<(f64, Vec<f64>)> {
        let m = self.breakpoints.len() - 1;
        let mut reps = Vec::with_capacity(m + 1);
        for (j, &t) in self.breakpoints.iter().enumerate() {
            let prev: Vec<f64> = if j == 0 {
                vec![0.0; self.d0]
            } else {
                self.values[(j - 1) * self.d0..j * self.d0].to_vec()
            };
            let next: Vec<f64> = if j == m {
                vec![0.0; self.d0]
            } else {
                self.values[j * self.d0..(j + 1) * self.d0].to_vec()
            };
            let a: Vec<f64> = prev.iter().zip(&next).map(|(p, n)| p - n).collect();
            if a.iter().any(|v| *v != 0.0) && t > 0.0 {
                reps.push((t, a));
            }
        }
        reps
    }

    /// Piece decomposition of (lo, 1] as (piece_lo, piece_hi, value).
    fn pieces_above(&self, lo: f64) -> Vec<(f64, f64, Vec<f64>)> {
        let mut segs = Vec::new();
        let m = self.breakpoints.len() - 1;
        let mut cur = lo;
        for k in 0..m {
            let (a, b) = (self.breakpoints[k], self.breakpoints[k + 1]);
            if b <= cur {
                continue;
            }
            let pl = cur.max(a);
            let ph = b.min(1.0);
            if ph > pl {
                if pl > cur {
                    segs.push((cur, pl, vec![0.0; self.d0]));
                }
                segs.push((pl, ph, self.values[k * self.d0..(k + 1) * self.d0].to_vec()));
                cur = ph;
            }
        }
        if cur < 1.0 {
            segs.push((cur, 1.0, vec![0.0; self.d0]));
        }
        segs
    }
}

/// Inner product via the covariance: rewrite both arguments as
/// sum a_k 1_{[0, t_k]} and return sum a_k . a_l Q(t_k, t_l).
pub fn h_inner(f: &StepFunction, g: &StepFunction, p: &FbmParams) -> f64 {
    let fr = f.jump_representation();
    let gr = g.jump_representation();
    let mut acc = 0.0;
    for (tk, ak) in &fr {
        for (tl, al) in &gr {
            let dot: f64 = ak.iter().zip(al).map(|(x, y)| x * y).sum();
            acc += dot * covariance_q(*tk, *tl, p.h);
        }
    }
    acc
}

/// The K* image of a step function sampled on a grid.
#[derive(Debug, Clone)]
pub struct KStarImage {
    pub grid: Arc<TimeGrid>,
    pub values: SampledPath,
}

/// (K* h)(s) = K(1, s) h(s) + int_s^1 (h(t) - h(s)) dK/dt (t, s) dt.
///
/// The integral is split at h's breakpoints; the (t-s)^{H-3/2} blow-up next
/// to s is neutralized by the vanishing factor h(t) - h(s) there (h is
/// constant on the piece containing s) and by the substitution t = s + v^2
/// on the remaining panels.
pub fn kstar_eval(h: &StepFunction, s: f64, p: &FbmParams, out: &mut [f64]) -> Result<()> {
    if !(0.0 < s && s < 1.0) {
        return Err(Error::InvalidInput(format!("K* image is evaluated on (0,1), got s={s}")));
    }
    let d0 = h.d0();
    let mut hs = vec![0.0; d0];
    h.eval(s, &mut hs);
    let k1 = if hs.iter().any(|v| *v != 0.0) { kernel_k(1.0, s, p)? } else { 0.0 };
    for c in 0..d0 {
        out[c] = k1 * hs[c];
    }
    for (lo, hi, val) in h.pieces_above(s) {
        let delta: Vec<f64> = val.iter().zip(&hs).map(|(v, h)| v - h).collect();
        if delta.iter().all(|d| *d == 0.0) {
            continue;
        }
        // int_lo^hi dK/dt (t, s) dt with t = s + v^2
        let (v0, v1) = ((lo - s).max(0.0).sqrt(), (hi - s).sqrt());
        let w = quad::integrate(v0, v1, 32, |v| 2.0 * v * kernel_k_dt(s + v * v, s, p).unwrap());
        for c in 0..d0 {
            out[c] += w * delta[c];
        }
    }
    Ok(())
}

/// Sample K* h at the grid times. The image is taken as 0 at times where h
/// vanishes from that time onward (it does analytically), including the
/// endpoints.
pub fn kstar_apply(h: &StepFunction, grid: &Arc<TimeGrid>, p: &FbmParams) -> Result<KStarImage> {
    let d0 = h.d0();
    let mut values = vec![0.0; grid.len() * d0];
    let mut buf = vec![0.0; d0];
    let support_end = *h.breakpoints.last().unwrap();
    for (i, &s) in grid.times().iter().enumerate() {
        if s <= 0.0 || s >= support_end {
            continue;
        }
        kstar_eval(h, s, p, &mut buf)?;
        values[i * d0..(i + 1) * d0].copy_from_slice(&buf);
    }
    Ok(KStarImage { grid: grid.clone(), values: SampledPath::new(grid.clone(), d0, values)? })
}

/// Quadrature nodes for [s, 1] split at the breakpoints of the given step
/// functions, with end-point substitutions on every panel (the images blow
/// up like (t_k - r)^{H-1/2} left of each breakpoint).
fn projection_nodes(fs: &[&StepFunction], s: f64) -> (Vec<f64>, Vec<f64>) {
    let mut cuts = vec![s.max(0.0), 1.0];
    for f in fs {
        for &b in &f.breakpoints {
            if b > s && b < 1.0 {
                cuts.push(b);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for w in cuts.windows(2) {
        crate::fbm::collect_singular_both_nodes(w[0], w[1], 32, &mut xs, &mut ws);
    }
    (xs, ws)
}

/// <Pi_s f, Pi_s g> computed as int_s^1 (K* f)(r) (K* g)(r) dr.
pub fn projected_inner(f: &StepFunction, g: &StepFunction, s: f64, p: &FbmParams) -> Result<f64> {
    if f.d0() != g.d0() {
        return Err(Error::ShapeMismatch("mismatched value dimensions".into()));
    }
    let (xs, ws) = projection_nodes(&[f, g], s);
    let d0 = f.d0();
    let mut bf = vec![0.0; d0];
    let mut bg = vec![0.0; d0];
    let mut acc = 0.0;
    for (&r, &w) in xs.iter().zip(&ws) {
        if r <= 0.0 || r >= 1.0 {
            continue;
        }
        kstar_eval(f, r, p, &mut bf)?;
        kstar_eval(g, r, p, &mut bg)?;
        let dot: f64 = bf.iter().zip(&bg).map(|(a, b)| a * b).sum();
        acc += w * dot;
    }
    Ok(acc)
}

/// Squared L2([0,1]) norm of K* h; equals <h, h> by the isometry.
pub fn kstar_l2_norm_sq(h: &StepFunction, p: &FbmParams) -> Result<f64> {
    projected_inner(h, h, 0.0, p)
}

/// Double Stieltjes sum sum_{i,j} f(u_i) g(r_j) DDQ_s over grid rectangles,
/// for scalar paths sampled on a common grid of [s, t].
pub fn qs_double_sum(f: &SampledPath, g: &SampledPath, s: f64, p: &FbmParams) -> Result<f64> {
    if f.grid().times() != g.grid().times() {
        return Err(Error::GridMismatch("f and g must share a grid".into()));
    }
    if f.dim() != 1 || g.dim() != 1 {
        return Err(Error::ShapeMismatch("scalar paths expected".into()));
    }
    let times = f.grid().times().to_vec();
    if (times[0] - s).abs() > 1e-12 {
        return Err(Error::GridMismatch("grid must start at s".into()));
    }
    let table = QsTable::build(&times, s, p);
    let m = times.len() - 1;
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let ddq = table.qs[(i + 1, j + 1)] - table.qs[(i, j + 1)] - table.qs[(i + 1, j)]
                + table.qs[(i, j)];
            acc += f.at(i) * g.at(j) * ddq;
        }
    }
    Ok(acc)
}

/// Empirical ratio of the projected norm against the interpolation
/// lower-bound shape
/// (t-s)^H ||f||_inf min(1, ||f||_inf / ||f||_{C^gamma})^{theta/(2 gamma)}.
///
/// theta_probe is a probe input; only positivity of the ratio is asserted.
pub fn interpolation_ratio(
    f: &SampledPath,
    s: f64,
    t: f64,
    gamma: f64,
    theta_probe: f64,
    p: &FbmParams,
) -> Result<f64> {
    if gamma <= 1.0 - 2.0 * p.h {
        return Err(Error::InvalidInput(format!("need gamma > 1 - 2H = {}", 1.0 - 2.0 * p.h)));
    }
    let sup = f.sup_norm();
    if sup == 0.0 {
        return Err(Error::InvalidInput("f must not vanish identically".into()));
    }
    let cgamma = sup + holder_seminorm(f, gamma);
    // left-point step approximation on the sample grid
    let grid = f.grid();
    let bps = grid.times().to_vec();
    if *bps.last().unwrap() > 1.0 || bps[0] < 0.0 {
        return Err(Error::InvalidInput("support must lie in [0,1]".into()));
    }
    let vals: Vec<f64> = (0..grid.len() - 1).map(|i| f.at(i)).collect();
    let step = StepFunction::new(bps, vals, 1)?;
    let norm = projected_inner(&step, &step, s, p)?.max(0.0).sqrt();
    let denom =
        (t - s).powf(p.h) * sup * (1.0f64).min(sup / cgamma).powf(theta_probe / (2.0 * gamma));
    Ok(norm / denom)
}
