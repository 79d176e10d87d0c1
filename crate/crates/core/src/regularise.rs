//! The constructions specific to rough drifts along pairs of solutions:
//! the cutoff that keeps convex combinations of solutions nondegenerate,
//! heat-semigroup smoothing and negative-regularity norms, the averaged
//! occupation functionals, the joint driving signal G = (B, L) with its
//! cross areas, the averaged-coefficient operators, the linear mixed
//! equation for the difference of two solutions, and the two-scheme
//! uniqueness experiment.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::controlled::MixedControlledPath;
use crate::error::{Error, Result};
use crate::fbm::{GaussianDriver, VolterraKernel};
use crate::grid::{SampledPath, TimeGrid, TwoParamField};
use crate::quad::theta_rule;
use crate::rde::{scalar, DiffusionCoeff, ScalarCoeff};
use crate::roughpath::{assemble_mixed, MixedRoughPath, RoughPath};
use crate::seedmix::mix3;
use crate::sewing::ConditionedGerm;

/// Radial bump for all cutoffs: identically 1 on the unit ball, 0 outside
/// radius 2, glued by exp(1 - 1/(1 - (r-1)^2)).
///
/// The plateau reaches radius 1 so that the scaled family satisfies
/// chi_{2a} = 1 on the support of chi_a, making the algebra
/// chi_a chi_{2a} = chi_a and (grad chi_{2a}) chi_a = 0 exact.
#[derive(Debug, Clone, Copy)]
pub struct CutoffSpec {
    pub a: f64,
}

fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let u = r - 1.0;
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

fn bump_deriv(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        0.0
    } else {
        let u = r - 1.0;
        let den = 1.0 - u * u;
        bump(r) * (-2.0 * u / (den * den))
    }
}

impl CutoffSpec {
    pub fn new(a: f64) -> Result<Self> {
        if a <= 0.0 {
            return Err(Error::InvalidInput("cutoff radius must be positive".into()));
        }
        Ok(Self { a })
    }

    /// chi_a(x) = chi(x / a).
    pub fn chi(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt() / self.a;
        bump(r)
    }

    pub fn chi_scalar(&self, x: f64) -> f64 {
        bump(x.abs() / self.a)
    }

    pub fn grad_chi(&self, x: &[f64], out: &mut [f64]) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let d = bump_deriv(norm / self.a) / (self.a * norm);
        for (o, v) in out.iter_mut().zip(x) {
            *o = d * v;
        }
    }
}

/// Cutoff radius tied to the coefficient: sqrt(lambda) / (10^5 ||sigma||_C1).
pub fn rho_of(lambda: f64, c1: f64) -> Result<f64> {
    if lambda <= 0.0 || c1 <= 0.0 {
        return Err(Error::InvalidInput("rho needs positive lambda and C1 bound".into()));
    }
    Ok(lambda.sqrt() / (1e5 * c1))
}

/// Min eigenvalue of (sum theta_i sigma(x_i)) (.)* over a battery of random
/// 4-point convex combinations with |x_i - x_1| <= 24 rho.
pub fn convex_combination_min_eig(
    coeff: &dyn DiffusionCoeff,
    rho: f64,
    battery: usize,
    seed: u64,
) -> f64 {
    let (d, d0) = (coeff.d(), coeff.d0());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut sig = vec![0.0; d * d0];
    for _ in 0..battery {
        let x1: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut thetas: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = thetas.iter().sum();
        thetas.iter_mut().for_each(|t| *t /= total);
        let mut avg = vec![0.0; d * d0];
        for (i, th) in thetas.iter().enumerate() {
            let xi: Vec<f64> = if i == 0 {
                x1.clone()
            } else {
                x1.iter()
                    .map(|v| v + rng.gen_range(-1.0..1.0) * 24.0 * rho / (d as f64).sqrt())
                    .collect()
            };
            coeff.sigma(&xi, &mut sig);
            for (a, s) in avg.iter_mut().zip(&sig) {
                *a += th * s;
            }
        }
        let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for r in 0..d0 {
                    acc += avg[i * d0 + r] * avg[j * d0 + r];
                }
                m[(i, j)] = acc;
            }
        }
        worst = worst.min(m.symmetric_eigenvalues().min());
    }
    worst
}

/// A scalar function sampled on a uniform grid of an interval.
#[derive(Debug, Clone)]
pub struct GridFn1 {
    pub lo: f64,
    pub hi: f64,
    pub vals: Vec<f64>,
}

impl GridFn1 {
    pub fn from_fn<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, f: F) -> Self {
        let vals = (0..n).map(|i| f(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect();
        Self { lo, hi, vals }
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.vals.len() - 1) as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.vals.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Max-norm of the central-difference gradient.
    pub fn grad_sup(&self) -> f64 {
        let dx = self.dx();
        let mut worst: f64 = 0.0;
        for i in 1..self.vals.len() - 1 {
            worst = worst.max(((self.vals[i + 1] - self.vals[i - 1]) / (2.0 * dx)).abs());
        }
        worst
    }
}

/// Discrete heat smoothing: convolution with the Gaussian kernel of variance
/// gamma, reflection padding at the box boundary. Kernel weights are
/// normalized to sum 1, so the sup norm never grows.
pub fn heat_smooth(f: &GridFn1, gamma: f64) -> GridFn1 {
    assert!(gamma > 0.0, "need gamma > 0");
    let n = f.vals.len();
    let dx = f.dx();
    let radius = ((6.0 * gamma.sqrt() / dx).ceil() as usize).max(1);
    let mut w = Vec::with_capacity(2 * radius + 1);
    for j in -(radius as i64)..=(radius as i64) {
        let x = j as f64 * dx;
        w.push((-x * x / (2.0 * gamma)).exp());
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let reflect = |idx: i64| -> usize {
        let m = (n - 1) as i64;
        let mut i = idx;
        while i < 0 || i > m {
            if i < 0 {
                i = -i;
            }
            if i > m {
                i = 2 * m - i;
            }
        }
        i as usize
    };
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let j = i as i64 + k as i64 - radius as i64;
            acc += wk * f.vals[reflect(j)];
        }
        out[i] = acc;
    }
    GridFn1 { lo: f.lo, hi: f.hi, vals: out }
}

/// Negative-regularity norm: max over dyadic gamma = 2^{-k}, k = 0..kmax, of
/// gamma^{-alpha/2} sup |P_gamma f| (alpha < 0).
pub fn besov_neg_norm(f: &GridFn1, alpha_neg: f64, kmax: u32) -> f64 {
    assert!(alpha_neg < 0.0, "need a negative exponent");
    let mut best: f64 = 0.0;
    for k in 0..=kmax {
        let gamma = 0.5f64.powi(k as i32);
        let smoothed = heat_smooth(f, gamma);
        best = best.max(gamma.powf(-alpha_neg / 2.0) * smoothed.sup_norm());
    }
    best
}

/// A rough drift given as a lacunary trigonometric sum
/// b(x) = sum_k 2^{-alpha k} cos(2^k x + phase_k). Its Besov-Hölder norm of
/// exponent alpha is 1 by construction, and heat smoothing is exact:
/// P_eps multiplies the k-th coefficient by exp(-eps 4^k / 2).
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub alpha: f64,
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
    pub phases: Vec<f64>,
}

impl DriftSpec {
    pub fn lacunary(alpha: f64, kmax: u32, seed: u64) -> Self {
        Self::geometric(alpha, 2.0, kmax, seed)
    }

    /// Geometric frequency ladder freq_k = q^k with amplitudes freq^{-alpha}.
    /// Ratios q close to 1 give a spectrum dense enough for scaling
    /// exponents to show cleanly across a dyadic window of scales.
    pub fn geometric(alpha: f64, q: f64, kmax: u32, seed: u64) -> Self {
        assert!(q > 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut freqs = Vec::new();
        let mut amps = Vec::new();
        let mut phases = Vec::new();
        for k in 0..=kmax {
            let f = q.powi(k as i32);
            freqs.push(f);
            amps.push(f.powf(-alpha));
            phases.push(rng.gen_range(0.0..std::f64::consts::TAU));
        }
        Self { alpha, freqs, amps, phases }
    }

    /// Scale all amplitudes (scales the declared norm accordingly).
    pub fn scaled(mut self, c: f64) -> Self {
        self.amps.iter_mut().for_each(|a| *a *= c);
        self
    }

    /// Mollified drift P_eps b at x.
    pub fn b_at(&self, x: f64, eps: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.freqs.len() {
            let damp = (-eps * self.freqs[k] * self.freqs[k] / 2.0).exp();
            acc += self.amps[k] * damp * (self.freqs[k] * x + self.phases[k]).cos();
        }
        acc
    }

    /// Derivative of the mollified drift (regularity exponent alpha - 1).
    pub fn db_at(&self, x: f64, eps: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.freqs.len() {
            let damp = (-eps * self.freqs[k] * self.freqs[k] / 2.0).exp();
            acc -= self.amps[k] * damp * self.freqs[k] * (self.freqs[k] * x + self.phases[k]).sin();
        }
        acc
    }

    /// The declared norm: sup_k amp_k freq_k^alpha.
    pub fn c_alpha_norm(&self) -> f64 {
        self.freqs
            .iter()
            .zip(&self.amps)
            .map(|(f, a)| a * f.powf(self.alpha))
            .fold(0.0, f64::max)
    }
}

/// J_t = int_0^t chi_rho(X_r - Y_r) f(theta X_r + (1-theta) Y_r) dr by
/// composite trapezoid; f has output dimension fdim.
pub fn functional_j(
    x: &SampledPath,
    y: &SampledPath,
    theta: f64,
    f: &dyn Fn(&[f64], &mut [f64]),
    fdim: usize,
    cutoff: &CutoffSpec,
) -> Result<SampledPath> {
    let integrand = cut_integrand(x, y, theta, f, fdim, cutoff)?;
    let grid = x.grid().clone();
    let n = grid.len();
    let mut values = vec![0.0; n * fdim];
    for i in 0..n - 1 {
        let dt = grid.dt(i);
        for c in 0..fdim {
            values[(i + 1) * fdim + c] = values[i * fdim + c]
                + 0.5 * (integrand[i * fdim + c] + integrand[(i + 1) * fdim + c]) * dt;
        }
    }
    SampledPath::new(grid, fdim, values)
}

fn cut_integrand(
    x: &SampledPath,
    y: &SampledPath,
    theta: f64,
    f: &dyn Fn(&[f64], &mut [f64]),
    fdim: usize,
    cutoff: &CutoffSpec,
) -> Result<Vec<f64>> {
    if x.grid().times() != y.grid().times() || x.dim() != y.dim() {
        return Err(Error::GridMismatch("X and Y must share grid and dimension".into()));
    }
    let n = x.grid().len();
    let d = x.dim();
    let mut integrand = vec![0.0; n * fdim];
    let mut diff = vec![0.0; d];
    let mut mid = vec![0.0; d];
    let mut fout = vec![0.0; fdim];
    for i in 0..n {
        let xv = x.value(i);
        let yv = y.value(i);
        for l in 0..d {
            diff[l] = xv[l] - yv[l];
            mid[l] = theta * xv[l] + (1.0 - theta) * yv[l];
        }
        let chi = cutoff.chi(&diff);
        if chi != 0.0 {
            f(&mid, &mut fout);
            for c in 0..fdim {
                integrand[i * fdim + c] = chi * fout[c];
            }
        }
    }
    Ok(integrand)
}

/// Two-parameter process K_{s,t} = int_s^t (B_r - B_s) (x) I_r dr with
/// I_r = chi_rho(X_r - Y_r) f(theta X_r + (1-theta) Y_r), all driver
/// components at once; entry shape (d0, fdim). Shares the trapezoid of
/// `functional_j`, making the discrete Chen identity
/// dK_{s,u,t} = B_{s,u} (x) (J_t - J_u) exact.
pub fn functional_k(
    x: &SampledPath,
    y: &SampledPath,
    theta: f64,
    f: &dyn Fn(&[f64], &mut [f64]),
    fdim: usize,
    b: &SampledPath,
    cutoff: &CutoffSpec,
) -> Result<TwoParamField> {
    if b.grid().times() != x.grid().times() {
        return Err(Error::GridMismatch("driver grid mismatch".into()));
    }
    let integrand = cut_integrand(x, y, theta, f, fdim, cutoff)?;
    let grid = x.grid().clone();
    let n = grid.len();
    let d0 = b.dim();
    let mut field = TwoParamField::zeros(grid.clone(), (d0, fdim));
    for s in 0..n {
        let bs = b.value(s).to_vec();
        let mut acc = vec![0.0; d0 * fdim];
        for r in s..n - 1 {
            let dt = grid.dt(r);
            let b0 = b.value(r);
            let b1 = b.value(r + 1);
            for rho in 0..d0 {
                for c in 0..fdim {
                    acc[rho * fdim + c] += 0.5
                        * ((b0[rho] - bs[rho]) * integrand[r * fdim + c]
                            + (b1[rho] - bs[rho]) * integrand[(r + 1) * fdim + c])
                        * dt;
                }
            }
            field.entry_mut(s, r + 1).copy_from_slice(&acc);
        }
    }
    Ok(field)
}

/// The joint driving signal assembled from a pair of solutions and a
/// mollified drift: the regular component L (the theta-averaged occupation
/// functional of grad b), the cross area of B against dL, and the opposite
/// cross area forced by the product rule.
#[derive(Debug, Clone)]
pub struct GData {
    pub mixed: Arc<MixedRoughPath>,
    pub l: SampledPath,
}

/// Assemble G for a d-dimensional pair (X, Y). `grad_b` fills the d*d drift
/// gradient at a point; the theta average uses the shared fixed rule so the
/// occupation functional and the cross area stay mutually consistent.
pub fn build_g(
    b_lift: &RoughPath,
    x: &SampledPath,
    y: &SampledPath,
    grad_b: &dyn Fn(&[f64], &mut [f64]),
    cutoff: &CutoffSpec,
    beta: f64,
    n_theta: usize,
) -> Result<GData> {
    let d = x.dim();
    let e = d * d;
    let (tn, tw) = theta_rule(n_theta);
    let grid = x.grid().clone();
    let n = grid.len();

    // theta-averaged cut integrand
    let mut integrand = vec![0.0; n * e];
    let mut gbuf = vec![0.0; e];
    let mut mid = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let xv = x.value(i);
        let yv = y.value(i);
        for l in 0..d {
            diff[l] = xv[l] - yv[l];
        }
        let chi = cutoff.chi(&diff);
        if chi == 0.0 {
            continue;
        }
        for (t, w) in tn.iter().zip(&tw) {
            for l in 0..d {
                mid[l] = t * xv[l] + (1.0 - t) * yv[l];
            }
            grad_b(&mid, &mut gbuf);
            for c in 0..e {
                integrand[i * e + c] += chi * w * gbuf[c];
            }
        }
    }

    // L by trapezoid
    let mut lvals = vec![0.0; n * e];
    for i in 0..n - 1 {
        let dt = grid.dt(i);
        for c in 0..e {
            lvals[(i + 1) * e + c] =
                lvals[i * e + c] + 0.5 * (integrand[i * e + c] + integrand[(i + 1) * e + c]) * dt;
        }
    }
    let l = SampledPath::new(grid.clone(), e, lvals)?;

    // cross area of B against dL with the same trapezoid
    let d0 = b_lift.dim();
    let mut area_bl = TwoParamField::zeros(grid.clone(), (d0, e));
    for s in 0..n {
        let bs = b_lift.g.value(s).to_vec();
        let mut acc = vec![0.0; d0 * e];
        for r in s..n - 1 {
            let dt = grid.dt(r);
            let b0 = b_lift.g.value(r);
            let b1 = b_lift.g.value(r + 1);
            for rho in 0..d0 {
                for c in 0..e {
                    acc[rho * e + c] += 0.5
                        * ((b0[rho] - bs[rho]) * integrand[r * e + c]
                            + (b1[rho] - bs[rho]) * integrand[(r + 1) * e + c])
                        * dt;
                }
            }
            area_bl.entry_mut(s, r + 1).copy_from_slice(&acc);
        }
    }
    let mixed = assemble_mixed(b_lift, &l, area_bl, beta)?;
    Ok(GData { mixed: Arc::new(mixed), l })
}

/// Averaged coefficient operators along a pair of states:
/// sigma_avg[(l*d+i)*d0+rho]          = int_0^1 d_l sigma^{i rho}(theta x + (1-theta) y) dtheta,
/// sigma_hat[((l*d+i)*d0+rho)*d0+rt]  = int_0^1 sum_q d_q d_l sigma^{i rho}(...)
///                                      (theta sigma^{q rt}(x) + (1-theta) sigma^{q rt}(y)) dtheta.
pub fn sigma_avg(
    xt: &[f64],
    yt: &[f64],
    coeff: &dyn DiffusionCoeff,
    n_theta: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (d, d0) = (coeff.d(), coeff.d0());
    let (tn, tw) = theta_rule(n_theta);
    let mut avg = vec![0.0; d * d * d0];
    let mut hat = vec![0.0; d * d * d0 * d0];
    let mut grad = vec![0.0; d * d0 * d];
    let mut hess = vec![0.0; d * d0 * d * d];
    let mut sigx = vec![0.0; d * d0];
    let mut sigy = vec![0.0; d * d0];
    let mut mid = vec![0.0; d];
    coeff.sigma(xt, &mut sigx);
    coeff.sigma(yt, &mut sigy);
    for (t, w) in tn.iter().zip(&tw) {
        for l in 0..d {
            mid[l] = t * xt[l] + (1.0 - t) * yt[l];
        }
        coeff.grad_sigma(&mid, &mut grad);
        coeff.hess_sigma(&mid, &mut hess);
        for l in 0..d {
            for i in 0..d {
                for rho in 0..d0 {
                    avg[(l * d + i) * d0 + rho] += w * grad[(i * d0 + rho) * d + l];
                    for rt in 0..d0 {
                        let mut acc = 0.0;
                        for q in 0..d {
                            let mixv = t * sigx[q * d0 + rt] + (1.0 - t) * sigy[q * d0 + rt];
                            acc += hess[((i * d0 + rho) * d + l) * d + q] * mixv;
                        }
                        hat[((l * d + i) * d0 + rho) * d0 + rt] += w * acc;
                    }
                }
            }
        }
    }
    (avg, hat)
}

/// Apply the insertion operator: (I z) c = (sum_j z^j c^{i j})_i.
pub fn apply_insertion(z: &[f64], c: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += z[j] * c[i * d + j];
        }
        out[i] = acc;
    }
}

/// Linear mixed equation for the difference of two solutions:
/// dZ = (I Z) dG_circ + (Sigma Z) dG_bullet, stepped with the full level-2
/// germs of both mixed integrals. Identically zero when z0 = 0.
pub fn solve_linear_z(
    g: &GData,
    sigma_path: &SampledPath,     // dim d*d*d0 per time, layout of sigma_avg
    sigma_hat_path: &SampledPath, // dim d*d*d0*d0
    z0: &[f64],
) -> Result<SampledPath> {
    let mixed = &g.mixed;
    let d0 = mixed.dim_b();
    let e = mixed.dim_l();
    let d = z0.len();
    if e != d * d {
        return Err(Error::ShapeMismatch("regular component must be d x d valued".into()));
    }
    let grid = mixed.grid().clone();
    let n = grid.len();
    let mut values = vec![0.0; n * d];
    values[..d].copy_from_slice(z0);
    let mut z = z0.to_vec();
    let mut znext = vec![0.0; d];
    for u in 0..n - 1 {
        let sa = sigma_path.value(u);
        let sh = sigma_hat_path.value(u);
        let dl = mixed.g_l.increment(u, u + 1);
        let db = mixed.g_b.increment(u, u + 1);
        let gbl = mixed.area_bl.entry(u, u + 1); // [rho * e + c]
        let glb = mixed.area_lb.entry(u, u + 1); // [c * d0 + rho]
        let gbb = mixed.area_bb.entry(u, u + 1); // [rho' * d0 + rho]
        for i in 0..d {
            let mut acc = 0.0;
            // (I Z) dL
            for j in 0..d {
                acc += z[j] * dl[i * d + j];
            }
            // derivative of IZ along B, against the B (x) L area:
            // sum_{rho', j} (Sigma Z e_{rho'})^j area_bl[rho', (i, j)]
            for rho2 in 0..d0 {
                for j in 0..d {
                    let mut sz = 0.0;
                    for l in 0..d {
                        sz += sa[(l * d + j) * d0 + rho2] * z[l];
                    }
                    acc += sz * gbl[rho2 * e + (i * d + j)];
                }
            }
            // (Sigma Z) dB
            for rho in 0..d0 {
                let mut sz = 0.0;
                for l in 0..d {
                    sz += sa[(l * d + i) * d0 + rho] * z[l];
                }
                acc += sz * db[rho];
            }
            // derivative of Sigma Z along L, against the L (x) B area:
            // sum_{a, b, rho} Sigma^{a i rho} Z^b area_lb[(a, b), rho]
            for a in 0..d {
                for bidx in 0..d {
                    for rho in 0..d0 {
                        acc += sa[(a * d + i) * d0 + rho]
                            * z[bidx]
                            * glb[(a * d + bidx) * d0 + rho];
                    }
                }
            }
            // derivative of Sigma Z along B, against the B (x) B area:
            // [Sigma((Sigma Z) e_{rho'}) + (hat Sigma e_{rho'}) Z]^{i rho}
            for rho in 0..d0 {
                for rho2 in 0..d0 {
                    let a = gbb[rho2 * d0 + rho];
                    if a == 0.0 {
                        continue;
                    }
                    let mut first = 0.0;
                    for l in 0..d {
                        let mut inner = 0.0;
                        for q in 0..d {
                            inner += sa[(q * d + l) * d0 + rho2] * z[q];
                        }
                        first += sa[(l * d + i) * d0 + rho] * inner;
                        first += sh[((l * d + i) * d0 + rho) * d0 + rho2] * z[l];
                    }
                    acc += first * a;
                }
            }
            znext[i] = z[i] + acc;
        }
        z.copy_from_slice(&znext);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(grid.t(u + 1)));
        }
        values[(u + 1) * d..(u + 2) * d].copy_from_slice(&z);
    }
    SampledPath::new(grid, d, values)
}

/// Which averaged functional a germ family estimates: the occupation
/// functional itself, or the one weighted by the driver increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GermKind {
    Occupation,
    DriverWeighted,
}

/// Conditional germ built from a pair of drifted solutions and the
/// driftless flows restarted at the germ's base point (scalar state).
///
/// For each inner resample only the Wiener increments after the base time
/// are redrawn, so conditional means are exact in law.
pub struct FlowGermFamily {
    pub kernel: Arc<VolterraKernel>,
    pub coeff: ScalarCoeff,
    /// drift for the X/Y dynamics (None: driftless)
    pub drift: Option<Arc<dyn Fn(f64) -> f64 + Sync + Send>>,
    /// integrand f
    pub f: Arc<dyn Fn(f64) -> f64 + Sync + Send>,
    pub theta: f64,
    pub cutoff: CutoffSpec,
    pub x0: f64,
    pub y0: f64,
    pub kind: GermKind,
}

impl FlowGermFamily {
    /// Draw tail increments for cells [s, t) into `dw`.
    fn draw_tail(&self, tail_seed: u64, s: usize, t: usize, dw: &mut [f64]) {
        let grid = self.kernel.grid();
        let mut rng = ChaCha12Rng::seed_from_u64(tail_seed);
        for (k, cell) in (s..t).enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            dw[k] = grid.dt(cell).sqrt() * z;
        }
    }

    /// Before-s contribution to rows (s, t]: prefix[j - s - 1].
    fn prefix_rows(&self, driver: &GaussianDriver, s: usize, t: usize, out: &mut [f64]) {
        for j in (s + 1)..=t {
            let row = self.kernel.row_weights(j);
            let mut acc = 0.0;
            for cell in 0..s.min(j) {
                acc += row[cell] * driver.dw(cell, 0);
            }
            out[j - s - 1] = acc;
        }
    }

    /// B values on [s, t] for a resampled tail: out[0] = B_s from the outer
    /// path, rows after that combine the frozen prefix with the fresh tail.
    fn local_b(&self, prefix: &[f64], bs: f64, dw_tail: &[f64], s: usize, t: usize, out: &mut [f64]) {
        out[0] = bs;
        for j in (s + 1)..=t {
            let row = self.kernel.row_weights(j);
            let mut acc = prefix[j - s - 1];
            for (k, cell) in (s..j).enumerate() {
                acc += row[cell] * dw_tail[k];
            }
            out[j - s] = acc;
        }
    }

    /// Trapezoid of chi_rho(phix - phiy) f(theta phix + (1-theta) phiy)
    /// (optionally weighted by B_r - b_base) over indices [lo, hi].
    fn window_integral(
        &self,
        phix: &[f64],
        phiy: &[f64],
        local_b: &[f64],
        lo: usize,
        hi: usize,
        dt: f64,
        b_base: f64,
    ) -> f64 {
        let eval = |k: usize| {
            let chi = self.cutoff.chi_scalar(phix[k] - phiy[k]);
            if chi == 0.0 {
                return 0.0;
            }
            let mid = self.theta * phix[k] + (1.0 - self.theta) * phiy[k];
            let mut v = chi * (self.f)(mid);
            if self.kind == GermKind::DriverWeighted {
                v *= local_b[k] - b_base;
            }
            v
        };
        let mut acc = 0.0;
        let mut prev = eval(lo);
        for k in lo + 1..=hi {
            let cur = eval(k);
            acc += 0.5 * (prev + cur) * dt;
            prev = cur;
        }
        acc
    }

    /// Solve the (possibly drifted) pair on the full grid for one driver.
    fn outer_paths(&self, driver: &GaussianDriver) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let b = self.kernel.sample(driver).expect("sampling");
        let n = b.grid().len();
        let bvals: Vec<f64> = (0..n).map(|i| b.at(i)).collect();
        let dt = b.grid().dt(0);
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        match &self.drift {
            Some(bfun) => {
                scalar::drifted_flow_into(&self.coeff, &**bfun, self.x0, &bvals, dt, &mut x);
                scalar::drifted_flow_into(&self.coeff, &**bfun, self.y0, &bvals, dt, &mut y);
            }
            None => {
                scalar::flow_into(&self.coeff, self.x0, &bvals, &mut x);
                scalar::flow_into(&self.coeff, self.y0, &bvals, &mut y);
            }
        }
        (bvals, x, y)
    }
}

impl FlowGermFamily {
    /// The standard rate-experiment family: half-amplitude trigonometric
    /// coefficient, dense geometric drift spectrum mollified so that its
    /// surviving frequencies stay resolvable by the grid's conditional
    /// smoothing scale, mild dynamics drift, and a pair started inside the
    /// cutoff plateau.
    pub fn standard(
        h: f64,
        alpha: f64,
        level: u32,
        eps: f64,
        drift_seed: u64,
        kind: GermKind,
    ) -> Result<Self> {
        let grid = Arc::new(TimeGrid::dyadic(level, 0.0, 1.0)?);
        let kernel = Arc::new(VolterraKernel::build(grid, crate::fbm::FbmParams::new(h, 1)?)?);
        Ok(Self::standard_with_kernel(kernel, alpha, eps, drift_seed, kind))
    }

    pub fn standard_with_kernel(
        kernel: Arc<VolterraKernel>,
        alpha: f64,
        eps: f64,
        drift_seed: u64,
        kind: GermKind,
    ) -> Self {
        let coeff = crate::rde::half_sin_plus_two();
        let rho = rho_of(coeff.lambda, coeff.c1).expect("positive coefficient data");
        let spec = DriftSpec::geometric(alpha, 2.0, 10, drift_seed);
        let dyn_spec = spec.clone().scaled(0.05);
        let f_spec = spec;
        FlowGermFamily {
            kernel,
            coeff,
            drift: Some(Arc::new(move |x| dyn_spec.b_at(x, eps))),
            f: Arc::new(move |x| f_spec.db_at(x, eps)),
            theta: 0.5,
            cutoff: CutoffSpec { a: rho },
            x0: 0.2,
            y0: 0.2 + rho / 50.0,
            kind,
        }
    }

    pub fn with_kind(&self, kind: GermKind) -> Self {
        FlowGermFamily {
            kernel: self.kernel.clone(),
            coeff: self.coeff,
            drift: self.drift.clone(),
            f: self.f.clone(),
            theta: self.theta,
            cutoff: self.cutoff,
            x0: self.x0,
            y0: self.y0,
            kind,
        }
    }
}

impl ConditionedGerm for FlowGermFamily {
    fn grid(&self) -> &Arc<TimeGrid> {
        self.kernel.grid()
    }

    fn germ_batch(&self, outer_seed: u64, inner: usize, pairs: &[(usize, usize)], out: &mut [f64]) {
        let grid = self.kernel.grid().clone();
        let driver = GaussianDriver::new(grid.clone(), 1, outer_seed);
        let (bvals, x, y) = self.outer_paths(&driver);
        let dt = grid.dt(0);
        for (pi, &(s, t)) in pairs.iter().enumerate() {
            let w = t - s;
            let mut prefix = vec![0.0; w];
            self.prefix_rows(&driver, s, t, &mut prefix);
            let mut dw = vec![0.0; w];
            let mut lb = vec![0.0; w + 1];
            let mut phix = vec![0.0; w + 1];
            let mut phiy = vec![0.0; w + 1];
            let mut acc = 0.0;
            for k in 0..inner {
                self.draw_tail(mix3(outer_seed, s as u64, k as u64), s, t, &mut dw);
                self.local_b(&prefix, bvals[s], &dw, s, t, &mut lb);
                scalar::flow_into(&self.coeff, x[s], &lb, &mut phix);
                scalar::flow_into(&self.coeff, y[s], &lb, &mut phiy);
                acc += self.window_integral(&phix, &phiy, &lb, 0, w, dt, lb[0]);
            }
            out[pi] = acc / inner as f64;
        }
    }

    fn delta_batch(
        &self,
        outer_seed: u64,
        inner: usize,
        triples: &[(usize, usize, usize)],
        out_mean: &mut [f64],
        out_sem: &mut [f64],
    ) {
        let grid = self.kernel.grid().clone();
        let driver = GaussianDriver::new(grid.clone(), 1, outer_seed);
        let (bvals, x, y) = self.outer_paths(&driver);
        let dt = grid.dt(0);
        for (ti, &(s, u, t)) in triples.iter().enumerate() {
            let w = t - s;
            let mid = u - s;
            let mut prefix = vec![0.0; w];
            self.prefix_rows(&driver, s, t, &mut prefix);
            let mut dw = vec![0.0; w];
            let mut lb = vec![0.0; w + 1];
            let mut phix = vec![0.0; w + 1];
            let mut phiy = vec![0.0; w + 1];
            let mut xr = vec![0.0; mid + 1];
            let mut yr = vec![0.0; mid + 1];
            let mut phixu = vec![0.0; w - mid + 1];
            let mut phiyu = vec![0.0; w - mid + 1];
            // Antithetic pairs: each drawn tail is used with both signs.
            // The defect's fluctuation across tails is dominated by its part
            // linear in the tail increments, which the pairing removes; the
            // conditional mean is untouched. `inner` counts resamples, so
            // inner/2 draws are evaluated twice each.
            let pairs = (inner / 2).max(1);
            let mut m = 0.0;
            let mut m2 = 0.0;
            for k in 0..pairs {
                self.draw_tail(mix3(outer_seed, s as u64, k as u64), s, t, &mut dw);
                let mut pair_sum = 0.0;
                for sign in [1.0f64, -1.0] {
                    if sign < 0.0 {
                        dw.iter_mut().for_each(|v| *v = -*v);
                    }
                    self.local_b(&prefix, bvals[s], &dw, s, t, &mut lb);
                    // flows from the base point s over [s, t]
                    scalar::flow_into(&self.coeff, x[s], &lb, &mut phix);
                    scalar::flow_into(&self.coeff, y[s], &lb, &mut phiy);
                    let g_st = self.window_integral(&phix, &phiy, &lb, 0, w, dt, lb[0]);
                    let g_su = self.window_integral(&phix, &phiy, &lb, 0, mid, dt, lb[0]);
                    // the pair re-solved with drift on [s, u] over the same tail
                    match &self.drift {
                        Some(bf) => {
                            scalar::drifted_flow_into(
                                &self.coeff,
                                &**bf,
                                x[s],
                                &lb[..=mid],
                                dt,
                                &mut xr,
                            );
                            scalar::drifted_flow_into(
                                &self.coeff,
                                &**bf,
                                y[s],
                                &lb[..=mid],
                                dt,
                                &mut yr,
                            );
                        }
                        None => {
                            scalar::flow_into(&self.coeff, x[s], &lb[..=mid], &mut xr);
                            scalar::flow_into(&self.coeff, y[s], &lb[..=mid], &mut yr);
                        }
                    }
                    // flows restarted at (u, X_u, Y_u) over [u, t]
                    scalar::flow_into(&self.coeff, xr[mid], &lb[mid..], &mut phixu);
                    scalar::flow_into(&self.coeff, yr[mid], &lb[mid..], &mut phiyu);
                    let g_ut =
                        self.window_integral(&phixu, &phiyu, &lb[mid..], 0, w - mid, dt, lb[0]);
                    pair_sum += (g_st - g_su) - g_ut;
                }
                let v = 0.5 * pair_sum;
                m += v;
                m2 += v * v;
            }
            let nf = pairs as f64;
            m /= nf;
            m2 /= nf;
            out_mean[ti] = m;
            out_sem[ti] = ((m2 - m * m).max(0.0) / nf).sqrt();
        }
    }
}

/// Drift adaptor for the mollified lacunary sum.
pub struct DriftBx {
    pub spec: DriftSpec,
    pub eps: f64,
}
impl crate::rde::Drift for DriftBx {
    fn d(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.spec.b_at(x[0], self.eps);
    }
}

/// Result of the two-scheme uniqueness experiment.
#[derive(Debug, Clone, serde::Serialize)]
pub struct UniquenessReport {
    pub eps_values: Vec<f64>,
    pub levels: Vec<u32>,
    /// sup |X_A - X_B| indexed [eps][level]
    pub scheme_gaps: Vec<Vec<f64>>,
    /// sup |Z| along the finest-level run, per eps
    pub z_sup: Vec<f64>,
    /// |D^X - D^Y - int IZ dG_circ| relative to sup |D^X - D^Y|, finest level
    pub drift_identity_rel: Vec<f64>,
    /// surrogate combined tolerance: relative germ-coarsening gap of the
    /// same integral at half resolution
    pub combined_tol: Vec<f64>,
}

/// Configuration for the uniqueness experiment (scalar state).
#[derive(Debug, Clone)]
pub struct UniquenessConfig {
    pub h: f64,
    pub alpha: f64,
    pub level: u32,
    pub eps_exponents: Vec<i32>,
    pub seed: u64,
    pub n_theta: usize,
    /// independent noise realizations to average the gap statistics over
    pub replicas: usize,
}

/// Solve the mollified-drift equation twice with the two drift splittings on
/// the same lift, per (eps, level); verify the drift-difference identity at
/// the finest level.
pub fn uniqueness_experiment(cfg: &UniquenessConfig) -> Result<UniquenessReport> {
    use rayon::prelude::*;

    let coeff = crate::rde::sin_plus_two();
    let rho = rho_of(coeff.lambda, coeff.c1)?;
    let cutoff = CutoffSpec::new(rho)?;
    let drift = DriftSpec::lacunary(cfg.alpha, 10, mix3(cfg.seed, 77, 0));
    let p = crate::fbm::FbmParams::new(cfg.h, 1)?;
    let fine = Arc::new(TimeGrid::dyadic(cfg.level, 0.0, 1.0)?);
    let x0 = 0.2;
    let z0 = rho / 16.0;

    let levels: Vec<u32> = vec![cfg.level - 2, cfg.level - 1, cfg.level];
    let eps_values: Vec<f64> = cfg.eps_exponents.iter().map(|&k| 0.5f64.powi(k)).collect();
    let replicas = cfg.replicas.max(1);

    // per replica: (gaps[eps][level], rel[eps], tol[eps], zsup[eps])
    type Row = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, Vec<f64>);
    let rows: Vec<Row> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let b_fine =
                crate::fbm::sample_fbm_cholesky(&fine, &p, mix3(cfg.seed, 5, r)).expect("sample");
            let mut gaps_eps = Vec::new();
            let mut rels = Vec::new();
            let mut tols = Vec::new();
            let mut zsups = Vec::new();
            for &eps in &eps_values {
                let bdrift = DriftBx { spec: drift.clone(), eps };
                let mut gaps = Vec::new();
                for &lv in &levels {
                    let stride = 1usize << (cfg.level - lv);
                    let times: Vec<f64> =
                        (0..=(1usize << lv)).map(|k| fine.t(k * stride)).collect();
                    let sub = Arc::new(TimeGrid::new(times).expect("grid"));
                    let vals: Vec<f64> =
                        (0..sub.len()).map(|k| b_fine.at(k * stride)).collect();
                    let rp = crate::roughpath::lift_piecewise_linear(
                        &SampledPath::new(sub, 1, vals).expect("path"),
                        cfg.h - 0.01,
                    );
                    let (xa, _) = crate::rde::solve_with_drift(
                        &bdrift,
                        &coeff,
                        &rp,
                        &[x0],
                        crate::rde::DriftScheme::BasePoint,
                    )
                    .expect("scheme A");
                    let (xb, _) = crate::rde::solve_with_drift(
                        &bdrift,
                        &coeff,
                        &rp,
                        &[x0],
                        crate::rde::DriftScheme::UpdatedPoint,
                    )
                    .expect("scheme B");
                    let mut worst: f64 = 0.0;
                    for i in 0..xa.grid().len() {
                        worst = worst.max((xa.at(i) - xb.at(i)).abs());
                    }
                    gaps.push(worst);
                }
                gaps_eps.push(gaps);
                let rp = crate::roughpath::lift_piecewise_linear(&b_fine, cfg.h - 0.01);
                let (rel, tol, zs) = drift_identity_residual(
                    &rp, &coeff, &bdrift, &drift, eps, &cutoff, x0, z0, cfg.n_theta,
                )
                .expect("identity");
                rels.push(rel);
                tols.push(tol);
                zsups.push(zs);
            }
            (gaps_eps, rels, tols, zsups)
        })
        .collect();

    // average in replica order
    let ne = eps_values.len();
    let nl = levels.len();
    let mut scheme_gaps = vec![vec![0.0; nl]; ne];
    let mut drift_rel = vec![0.0; ne];
    let mut combined = vec![0.0; ne];
    let mut z_sup = vec![0.0f64; ne];
    for row in &rows {
        for e in 0..ne {
            for l in 0..nl {
                scheme_gaps[e][l] += row.0[e][l] / replicas as f64;
            }
            drift_rel[e] += row.1[e] / replicas as f64;
            combined[e] += row.2[e] / replicas as f64;
            z_sup[e] = z_sup[e].max(row.3[e]);
        }
    }
    Ok(UniquenessReport {
        eps_values,
        levels,
        scheme_gaps,
        z_sup,
        drift_identity_rel: drift_rel,
        combined_tol: combined,
    })
}

/// Verify D^X - D^Y = int (I Z) dG_circ on one realization; returns the
/// relative residual, a surrogate combined tolerance (germ-coarsening gap at
/// half resolution, relative), and sup |Z|.
#[allow(clippy::too_many_arguments)]
pub fn drift_identity_residual(
    rp: &RoughPath,
    coeff: &ScalarCoeff,
    bdrift: &DriftBx,
    drift: &DriftSpec,
    eps: f64,
    cutoff: &CutoffSpec,
    x0: f64,
    z0: f64,
    n_theta: usize,
) -> Result<(f64, f64, f64)> {
    let (x, dx) =
        crate::rde::solve_with_drift(bdrift, coeff, rp, &[x0], crate::rde::DriftScheme::BasePoint)?;
    let (y, dy) = crate::rde::solve_with_drift(
        bdrift,
        coeff,
        rp,
        &[x0 + z0],
        crate::rde::DriftScheme::BasePoint,
    )?;
    let grid = rp.grid().clone();
    let n = grid.len();
    let mut zsup: f64 = 0.0;
    for i in 0..n {
        zsup = zsup.max((x.at(i) - y.at(i)).abs());
    }
    let grad_b = |v: &[f64], out: &mut [f64]| {
        out[0] = drift.db_at(v[0], eps);
    };
    let g = build_g(rp, &x, &y, &grad_b, cutoff, 0.75, n_theta)?;
    // IZ as a mixed controlled path: value Z, d_b = Sigma Z, d_l = Z
    let mut zvals = vec![0.0; n];
    let mut dbvals = vec![0.0; n];
    for i in 0..n {
        let z = x.at(i) - y.at(i);
        zvals[i] = z;
        let (sa, _) = sigma_avg(&[x.at(i)], &[y.at(i)], coeff, n_theta);
        dbvals[i] = sa[0] * z;
    }
    let mcp = MixedControlledPath::new(
        g.mixed.clone(),
        SampledPath::new(grid.clone(), 1, zvals.clone())?,
        SampledPath::new(grid.clone(), 1, dbvals)?,
        SampledPath::new(grid.clone(), 1, zvals)?,
    )?;
    let integral = crate::controlled::mixed_integral_circ(&mcp, 0, n - 1)?;
    let mut resid: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        let lhs = dx.at(i) - dy.at(i);
        resid = resid.max((lhs - integral.at(i)).abs());
        scale = scale.max(lhs.abs());
    }
    // germ-coarsening gap at half resolution as the combined tolerance
    let mut gap_sum = 0.0;
    let mut i = 0;
    while i + 2 < n {
        let fine_sum = integral.at(i + 2) - integral.at(i);
        let coarse = mcp.f.at(i) * g.mixed.g_l.increment(i, i + 2)[0]
            + mcp.d_b.at(i) * g.mixed.area_bl.entry(i, i + 2)[0];
        gap_sum += (fine_sum - coarse).abs();
        i += 2;
    }
    let safe_scale = scale.max(1e-300);
    Ok((resid / safe_scale, gap_sum / safe_scale, zsup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm_cholesky, FbmParams};
    use crate::rde::sin_plus_two;
    use crate::roughpath::{lift_piecewise_linear, mixed_chen_defect, mixed_product_rule_defect};
    use approx::assert_relative_eq;

    #[test]
    fn cutoff_profile_and_algebra() {
        let chi = CutoffSpec::new(0.5).unwrap();
        assert_eq!(chi.chi(&[0.0, 0.0]), 1.0);
        assert_eq!(chi.chi(&[0.4, 0.0]), 1.0);
        assert_eq!(chi.chi(&[1.1, 0.0]), 0.0);
        let mid = chi.chi(&[0.7, 0.0]);
        assert!(mid > 0.0 && mid < 1.0);

        // chi_a chi_{2a} = chi_a and grad chi_{2a} . chi_a = 0 pointwise
        let a = 0.3;
        let chi_a = CutoffSpec::new(a).unwrap();
        let chi_2a = CutoffSpec::new(2.0 * a).unwrap();
        let mut grad = [0.0; 2];
        for k in 0..200 {
            let x = [-2.0 + 0.02 * k as f64, 0.013 * k as f64 - 1.0];
            let va = chi_a.chi(&x);
            let v2 = chi_2a.chi(&x);
            assert!((va * v2 - va).abs() < 1e-14, "algebra broken at {x:?}: {va} {v2}");
            chi_2a.grad_chi(&x, &mut grad);
            assert!(
                (grad[0] * va).abs() < 1e-14 && (grad[1] * va).abs() < 1e-14,
                "grad overlap at {x:?}"
            );
        }
    }

    #[test]
    fn rho_examples() {
        assert_relative_eq!(rho_of(1.0, 1.0).unwrap(), 1e-5, epsilon = 1e-20);
        assert_relative_eq!(rho_of(4.0, 2.0).unwrap(), 1e-5, epsilon = 1e-20);
        assert!(rho_of(0.0, 1.0).is_err());
        assert!(rho_of(1.0, -2.0).is_err());
    }

    #[test]
    fn convex_combinations_stay_elliptic() {
        let coeff = crate::rde::TrigSigma2;
        let rho = rho_of(coeff.lambda(), coeff.c1()).unwrap();
        let min_eig = convex_combination_min_eig(&coeff, rho, 200, 5);
        assert!(min_eig >= coeff.lambda() / 2.0, "min eig {min_eig}");
    }

    #[test]
    fn heat_smoothing_basics() {
        let f = GridFn1::from_fn(-1.0, 1.0, 513, |_| 2.5);
        let s = heat_smooth(&f, 0.01);
        for v in &s.vals {
            assert_relative_eq!(*v, 2.5, epsilon = 1e-12);
        }
        let g = GridFn1::from_fn(-1.0, 1.0, 513, |x| (20.0 * x).sin());
        let sg = heat_smooth(&g, 0.05);
        assert!(sg.sup_norm() <= g.sup_norm() + 1e-12);
    }

    #[test]
    fn heat_gradient_bound() {
        // ||grad P_t f||_inf <= N t^{-1/2} ||f||_inf with N fitted once
        let f = GridFn1::from_fn(-1.0, 1.0, 1025, |x| (37.0 * x).sin() + 0.4 * (11.0 * x).cos());
        let mut worst_ratio: f64 = 0.0;
        for k in 2..=7 {
            let t = 0.5f64.powi(k);
            let s = heat_smooth(&f, t);
            worst_ratio = worst_ratio.max(s.grad_sup() * t.sqrt() / f.sup_norm());
        }
        // fitted on this battery; the continuum bound has N = (2 pi e)^{-1/2}
        const FITTED_N: f64 = 0.5;
        assert!(worst_ratio <= FITTED_N, "ratio {worst_ratio}");
    }

    #[test]
    fn besov_examples() {
        let z = GridFn1::from_fn(0.0, 1.0, 257, |_| 0.0);
        assert_eq!(besov_neg_norm(&z, -0.2, 8), 0.0);
        let c = GridFn1::from_fn(0.0, 1.0, 257, |_| -1.5);
        assert_relative_eq!(besov_neg_norm(&c, -0.2, 8), 1.5, epsilon = 1e-10);
    }

    #[test]
    fn besov_norm_of_rough_derivative_is_stable() {
        // f = derivative of a C^{0.8} lacunary sum, exponent -0.2
        let spec = DriftSpec::lacunary(0.8, 8, 3);
        let coarse = GridFn1::from_fn(-1.0, 1.0, 1025, |x| spec.db_at(x, 0.0));
        let fine = GridFn1::from_fn(-1.0, 1.0, 2049, |x| spec.db_at(x, 0.0));
        let a = besov_neg_norm(&coarse, -0.2, 10);
        let b = besov_neg_norm(&fine, -0.2, 10);
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() / b < 0.1, "refinement moved the norm too much: {a} vs {b}");
    }

    #[test]
    fn drift_mollification_matches_discrete_heat() {
        // analytic coefficient damping vs discrete Gaussian convolution
        let spec = DriftSpec::lacunary(0.3, 5, 9);
        let eps = 0.25f64.powi(3);
        let raw = GridFn1::from_fn(-4.0, 4.0, 8193, |x| spec.b_at(x, 0.0));
        let smoothed = heat_smooth(&raw, eps);
        let m = smoothed.vals.len();
        let mut worst: f64 = 0.0;
        for i in m / 4..3 * m / 4 {
            let x = smoothed.lo + smoothed.dx() * i as f64;
            worst = worst.max((smoothed.vals[i] - spec.b_at(x, eps)).abs());
        }
        assert!(worst < 5e-3, "mollification mismatch {worst}");
        assert_relative_eq!(spec.c_alpha_norm(), 1.0, epsilon = 1e-12);
    }

    fn small_pair(level: u32, seed: u64) -> (RoughPath, SampledPath, SampledPath) {
        let grid = Arc::new(TimeGrid::dyadic(level, 0.0, 1.0).unwrap());
        let p = FbmParams::new(0.4, 1).unwrap();
        let b = sample_fbm_cholesky(&grid, &p, seed).unwrap();
        let rp = lift_piecewise_linear(&b, 0.39);
        let coeff = sin_plus_two();
        let n = grid.len();
        let bvals: Vec<f64> = (0..n).map(|i| b.at(i)).collect();
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        scalar::flow_into(&coeff, 0.2, &bvals, &mut x);
        scalar::flow_into(&coeff, 0.2 + 1e-6, &bvals, &mut y);
        (
            rp,
            SampledPath::new(grid.clone(), 1, x).unwrap(),
            SampledPath::new(grid, 1, y).unwrap(),
        )
    }

    #[test]
    fn functional_j_examples() {
        let (_, x, y) = small_pair(6, 1);
        let cutoff = CutoffSpec::new(1e-5).unwrap();
        let zero = |_: &[f64], out: &mut [f64]| out[0] = 0.0;
        let j = functional_j(&x, &y, 0.5, &zero, 1, &cutoff).unwrap();
        assert!(j.raw().iter().all(|&v| v == 0.0));

        // X = Y, f = 1: J_t = t
        let one = |_: &[f64], out: &mut [f64]| out[0] = 1.0;
        let j = functional_j(&x, &x, 0.5, &one, 1, &cutoff).unwrap();
        let n = x.grid().len();
        for i in 0..n {
            assert_relative_eq!(j.at(i), x.grid().t(i), epsilon = 1e-12);
        }

        // far-apart pair: cutoff kills everything
        let far = SampledPath::scalar_from_fn(x.grid().clone(), |_| 100.0);
        let j = functional_j(&x, &far, 0.5, &one, 1, &cutoff).unwrap();
        assert!(j.raw().iter().all(|&v| v == 0.0));

        // linearity in f
        let f1 = |v: &[f64], out: &mut [f64]| out[0] = v[0].sin();
        let f2 = |v: &[f64], out: &mut [f64]| out[0] = 2.0 * v[0].sin();
        let wide = CutoffSpec::new(0.5).unwrap();
        let j1 = functional_j(&x, &y, 0.5, &f1, 1, &wide).unwrap();
        let j2 = functional_j(&x, &y, 0.5, &f2, 1, &wide).unwrap();
        for i in 0..n {
            assert_relative_eq!(j2.at(i), 2.0 * j1.at(i), epsilon = 1e-13);
        }
    }

    #[test]
    fn functional_k_chen_identity() {
        let (rp, x, y) = small_pair(5, 2);
        let cutoff = CutoffSpec::new(0.1).unwrap();
        let f = |v: &[f64], out: &mut [f64]| out[0] = (3.0 * v[0]).sin();
        let kfield = functional_k(&x, &y, 0.3, &f, 1, &rp.g, &cutoff).unwrap();
        let jpath = functional_j(&x, &y, 0.3, &f, 1, &cutoff).unwrap();
        let n = x.grid().len();
        for s in (0..n - 2).step_by(3) {
            for u in (s + 1..n - 1).step_by(2) {
                for t in (u + 1..n).step_by(5) {
                    let lhs = kfield.entry(s, t)[0] - kfield.entry(s, u)[0] - kfield.entry(u, t)[0];
                    let rhs = rp.g.increment(s, u)[0] * (jpath.at(t) - jpath.at(u));
                    assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
                }
            }
        }
        // degenerate inputs
        let z = |_: &[f64], out: &mut [f64]| out[0] = 0.0;
        let k0 = functional_k(&x, &y, 0.3, &z, 1, &rp.g, &cutoff).unwrap();
        let frozen = SampledPath::zeros(x.grid().clone(), 1);
        let kf = functional_k(&x, &y, 0.3, &f, 1, &frozen, &cutoff).unwrap();
        for s in 0..n {
            for t in s + 1..n {
                assert_eq!(k0.entry(s, t)[0], 0.0);
                assert_eq!(kf.entry(s, t)[0], 0.0);
            }
        }
    }

    #[test]
    fn build_g_zero_drift_and_chen() {
        let (rp, x, y) = small_pair(5, 3);
        let cutoff = CutoffSpec::new(0.1).unwrap();
        let zero_grad = |_: &[f64], out: &mut [f64]| out[0] = 0.0;
        let g = build_g(&rp, &x, &y, &zero_grad, &cutoff, 0.75, 16).unwrap();
        assert!(g.l.raw().iter().all(|&v| v == 0.0));
        let n = x.grid().len();
        for s in 0..n {
            for t in s + 1..n {
                assert_eq!(g.mixed.area_bl.entry_norm(s, t), 0.0);
                assert_eq!(g.mixed.area_lb.entry_norm(s, t), 0.0);
            }
        }

        let spec = DriftSpec::lacunary(0.3, 6, 4);
        let grad = move |v: &[f64], out: &mut [f64]| out[0] = spec.db_at(v[0], 1e-3);
        let g = build_g(&rp, &x, &y, &grad, &cutoff, 0.75, 16).unwrap();
        assert!(mixed_chen_defect(&g.mixed) <= 1e-6, "{}", mixed_chen_defect(&g.mixed));
        assert!(mixed_product_rule_defect(&g.mixed) <= 1e-12);
    }

    #[test]
    fn build_g_is_linear_in_the_drift() {
        // the map b -> G is linear here, which pins the Lipschitz constant
        // of the drift dependence to the scaling itself
        let (rp, x, y) = small_pair(5, 6);
        let cutoff = CutoffSpec::new(0.1).unwrap();
        let spec = DriftSpec::lacunary(0.3, 6, 4);
        let eps = 1e-3;
        let scale = 0.7;
        let g1 = {
            let grad = |v: &[f64], out: &mut [f64]| out[0] = spec.db_at(v[0], eps);
            build_g(&rp, &x, &y, &grad, &cutoff, 0.75, 16).unwrap()
        };
        let g2 = {
            let grad = |v: &[f64], out: &mut [f64]| out[0] = scale * spec.db_at(v[0], eps);
            build_g(&rp, &x, &y, &grad, &cutoff, 0.75, 16).unwrap()
        };
        let n = x.grid().len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            worst = worst.max((scale * g1.l.at(i) - g2.l.at(i)).abs());
        }
        for s in 0..n {
            for t in s + 1..n {
                worst = worst.max(
                    (scale * g1.mixed.area_bl.entry(s, t)[0] - g2.mixed.area_bl.entry(s, t)[0])
                        .abs(),
                );
            }
        }
        assert!(worst <= 1e-14, "G not linear in b: {worst}");
    }

    #[test]
    fn sigma_avg_ftc_and_insertion() {
        let coeff = sin_plus_two();
        let (x, y) = (0.83, 0.29);
        let (sa, _sh) = sigma_avg(&[x], &[y], &coeff, 16);
        let lhs = (coeff.sigma)(x) - (coeff.sigma)(y);
        assert_relative_eq!(lhs, sa[0] * (x - y), epsilon = 1e-10);
        let (sa2, _) = sigma_avg(&[x], &[x], &coeff, 16);
        assert_relative_eq!(sa2[0], (coeff.dsigma)(x), epsilon = 1e-14);

        let z = [2.0, -1.0];
        let c = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 2];
        apply_insertion(&z, &c, 2, &mut out);
        assert_eq!(out, [2.0 * 1.0 - 2.0, 2.0 * 3.0 - 4.0]);

        // 2-d fundamental theorem of calculus check
        let coeff2 = crate::rde::TrigSigma2;
        let (xv, yv) = ([0.4, -0.7], [0.1, 0.2]);
        let (sa, _) = sigma_avg(&xv, &yv, &coeff2, 16);
        let mut sx = [0.0; 4];
        let mut sy = [0.0; 4];
        coeff2.sigma(&xv, &mut sx);
        coeff2.sigma(&yv, &mut sy);
        for i in 0..2 {
            for rho in 0..2 {
                let mut acc = 0.0;
                for l in 0..2 {
                    acc += sa[(l * 2 + i) * 2 + rho] * (xv[l] - yv[l]);
                }
                assert_relative_eq!(sx[i * 2 + rho] - sy[i * 2 + rho], acc, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn linear_z_zero_start_stays_zero() {
        let (rp, x, y) = small_pair(5, 8);
        let cutoff = CutoffSpec::new(0.1).unwrap();
        let spec = DriftSpec::lacunary(0.3, 5, 4);
        let grad = |v: &[f64], out: &mut [f64]| out[0] = spec.db_at(v[0], 1e-3);
        let g = build_g(&rp, &x, &y, &grad, &cutoff, 0.75, 16).unwrap();
        let coeff = sin_plus_two();
        let n = x.grid().len();
        let mut sa = vec![0.0; n];
        let mut sh = vec![0.0; n];
        for i in 0..n {
            let (a, h) = sigma_avg(&[x.at(i)], &[y.at(i)], &coeff, 16);
            sa[i] = a[0];
            sh[i] = h[0];
        }
        let sap = SampledPath::new(x.grid().clone(), 1, sa).unwrap();
        let shp = SampledPath::new(x.grid().clone(), 1, sh).unwrap();
        let z = solve_linear_z(&g, &sap, &shp, &[0.0]).unwrap();
        assert!(z.raw().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_z_exponential_oracle() {
        // G_circ = 0, Sigma constant, scalar: Z_t = z0 exp(Sigma B_{0,t})
        let grid = Arc::new(TimeGrid::dyadic(9, 0.0, 1.0).unwrap());
        let p = FbmParams::new(0.4, 1).unwrap();
        let b = sample_fbm_cholesky(&grid, &p, 77).unwrap();
        let rp = lift_piecewise_linear(&b, 0.39);
        let n = grid.len();
        let l = SampledPath::zeros(grid.clone(), 1);
        let area_bl = crate::roughpath::cross_area_quadrature(&rp.g, &l).unwrap();
        let mixed = assemble_mixed(&rp, &l, area_bl, 0.75).unwrap();
        let g = GData { mixed: Arc::new(mixed), l };
        let sigma_c = 0.8;
        let sap = SampledPath::scalar_from_fn(grid.clone(), |_| sigma_c);
        let shp = SampledPath::zeros(grid.clone(), 1);
        let z = solve_linear_z(&g, &sap, &shp, &[0.5]).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let expect = 0.5 * (sigma_c * b.at(i)).exp();
            worst = worst.max((z.at(i) - expect).abs());
        }
        assert!(worst < 2e-2, "linear Z vs exponential: {worst}");
        let bound = 0.5 * (sigma_c * b.sup_norm()).exp() * 1.5;
        assert!(z.sup_norm() <= bound);
    }

    #[test]
    fn germ_family_exact_width_when_pair_coincides() {
        // X_s = Y_s and f = 1: every tail gives exactly t - s
        let grid = Arc::new(TimeGrid::dyadic(6, 0.0, 1.0).unwrap());
        let kernel =
            Arc::new(VolterraKernel::build(grid.clone(), FbmParams::new(0.4, 1).unwrap()).unwrap());
        let fam = FlowGermFamily {
            kernel: kernel.clone(),
            coeff: sin_plus_two(),
            drift: None,
            f: Arc::new(|_| 1.0),
            theta: 0.5,
            cutoff: CutoffSpec::new(1e-5).unwrap(),
            x0: 0.2,
            y0: 0.2,
            kind: GermKind::Occupation,
        };
        let mut out = vec![0.0; 2];
        fam.germ_batch(123, 4, &[(8, 24), (0, 32)], &mut out);
        assert_relative_eq!(out[0], grid.t(24) - grid.t(8), epsilon = 1e-12);
        assert_relative_eq!(out[1], grid.t(32) - grid.t(0), epsilon = 1e-12);
    }

    #[test]
    fn germ_family_estimator_matches_direct_monte_carlo() {
        let grid = Arc::new(TimeGrid::dyadic(5, 0.0, 1.0).unwrap());
        let kernel =
            Arc::new(VolterraKernel::build(grid.clone(), FbmParams::new(0.4, 1).unwrap()).unwrap());
        let coeff = sin_plus_two();
        let fam = FlowGermFamily {
            kernel: kernel.clone(),
            coeff,
            drift: None,
            f: Arc::new(|v: f64| (2.0 * v).cos()),
            theta: 0.4,
            cutoff: CutoffSpec::new(0.5).unwrap(),
            x0: 0.2,
            y0: 0.21,
            kind: GermKind::Occupation,
        };
        let (s, t) = (8usize, 24usize);
        let inner = 400;
        let mut out = vec![0.0];
        fam.germ_batch(55, inner, &[(s, t)], &mut out);

        // independent direct Monte-Carlo of the same conditional mean
        let driver = GaussianDriver::new(grid.clone(), 1, 55);
        let b = kernel.sample(&driver).unwrap();
        let n = grid.len();
        let bvals: Vec<f64> = (0..n).map(|i| b.at(i)).collect();
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        scalar::flow_into(&fam.coeff, 0.2, &bvals, &mut x);
        scalar::flow_into(&fam.coeff, 0.21, &bvals, &mut y);
        let dt = grid.dt(0);
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for k in 0..inner {
            let re = driver.conditional_resample(s, mix3(999, s as u64, k as u64));
            let bb = kernel.sample(&re).unwrap();
            let bv: Vec<f64> = (s..=t).map(|i| bb.at(i)).collect();
            let mut px = vec![0.0; t - s + 1];
            let mut py = vec![0.0; t - s + 1];
            scalar::flow_into(&fam.coeff, x[s], &bv, &mut px);
            scalar::flow_into(&fam.coeff, y[s], &bv, &mut py);
            let f = |k: usize| {
                let chi = fam.cutoff.chi_scalar(px[k] - py[k]);
                chi * (2.0f64 * (0.4 * px[k] + 0.6 * py[k])).cos()
            };
            let mut v = 0.0;
            for k in 0..(t - s) {
                v += 0.5 * (f(k) + f(k + 1)) * dt;
            }
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / inner as f64;
        let se = ((acc2 / inner as f64 - mean * mean).max(0.0) / inner as f64).sqrt();
        assert!(
            (out[0] - mean).abs() <= 4.0 * se + 1e-12,
            "estimator {} vs direct MC {mean} (se {se})",
            out[0]
        );
    }

    #[test]
    fn extra_term_partial_sums_decay() {
        // sums over refining partitions of Sigma_s (I Z_s) area_lb tend to 0;
        // averaged over a few noise paths since single-path sums oscillate
        let coeff = sin_plus_two();
        let cutoff = CutoffSpec::new(0.5).unwrap();
        let spec = DriftSpec::lacunary(0.3, 6, 4);
        let levels = [2usize, 3, 4, 5, 6];
        let mut avg = vec![0.0; levels.len()];
        let nseeds = 4;
        for seed in 0..nseeds {
            let grid = Arc::new(TimeGrid::dyadic(7, 0.0, 1.0).unwrap());
            let p = FbmParams::new(0.4, 1).unwrap();
            let b = sample_fbm_cholesky(&grid, &p, 40 + seed).unwrap();
            let rp = lift_piecewise_linear(&b, 0.39);
            let n = grid.len();
            let bvals: Vec<f64> = (0..n).map(|i| b.at(i)).collect();
            let mut xv = vec![0.0; n];
            let mut yv = vec![0.0; n];
            scalar::flow_into(&coeff, 0.2, &bvals, &mut xv);
            scalar::flow_into(&coeff, 0.25, &bvals, &mut yv);
            let x = SampledPath::new(grid.clone(), 1, xv).unwrap();
            let y = SampledPath::new(grid.clone(), 1, yv).unwrap();
            let grad = |v: &[f64], out: &mut [f64]| out[0] = spec.db_at(v[0], 1e-3);
            let g = build_g(&rp, &x, &y, &grad, &cutoff, 0.75, 16).unwrap();
            for (li, &level) in levels.iter().enumerate() {
                let step = (n - 1) >> level;
                let mut acc = 0.0;
                let mut i = 0;
                while i + step < n {
                    let (sa, _) = sigma_avg(&[x.at(i)], &[y.at(i)], &coeff, 8);
                    let z = x.at(i) - y.at(i);
                    acc += sa[0] * z * g.mixed.area_lb.entry(i, i + step)[0];
                    i += step;
                }
                avg[li] += acc.abs() / nseeds as f64;
            }
        }
        assert!(
            avg.last().unwrap() < avg.first().unwrap(),
            "partial sums did not decay: {avg:?}"
        );
        let hs: Vec<f64> = levels.iter().map(|&l| 0.5f64.powi(l as i32)).collect();
        let f = crate::fit::fit_loglog(&hs, &avg).unwrap();
        assert!(f.slope > 0.0, "decay slope {} (sums {avg:?})", f.slope);
    }

    #[test]
    fn uniqueness_experiment_smoke() {
        let cfg = UniquenessConfig {
            h: 0.4,
            alpha: 0.3,
            level: 7,
            eps_exponents: vec![4, 6],
            seed: 21,
            n_theta: 8,
            replicas: 6,
        };
        let rep = uniqueness_experiment(&cfg).unwrap();
        for (e, gaps) in rep.eps_values.iter().zip(&rep.scheme_gaps) {
            for w in gaps.windows(2) {
                assert!(w[1] <= w[0] / 1.5, "eps {e}: scheme gap did not contract: {gaps:?}");
            }
        }
        let rho = rho_of(1.0, 4.0).unwrap();
        for (&z, &eps) in rep.z_sup.iter().zip(&rep.eps_values) {
            assert!(z <= rho / 2.0, "solutions separated too far at eps {eps}: {z}");
        }
        for (rel, tol) in rep.drift_identity_rel.iter().zip(&rep.combined_tol) {
            assert!(*rel <= 5.0 * tol, "drift identity residual {rel} vs tolerance {tol}");
        }
    }
}
