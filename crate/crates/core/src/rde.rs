//! Driftless flows driven by a level-2 rough path, their Jacobians and
//! inverse Jacobians, the first-variation kernel, drifted solutions, and the
//! Monte-Carlo stability-rate fit.
//!
//! The scheme is one second-order step per grid cell,
//!
//!   x <- x + sigma(x) g_{u,v} + (grad sigma . sigma)(x) area_{u,v},
//!
//! which consumes exactly the information content of a level-2 lift. The
//! Jacobian and its inverse are solved as their own linear equations (the
//! inverse is never obtained by numerical inversion; the product J J^{-1}
//! is a diagnostic).

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::fit_loglog;
use crate::grid::{SampledPath, TimeGrid};
use crate::roughpath::{lift_piecewise_linear, RoughPath};
use crate::seedmix::mix2;
use crate::sewing::RateFit;

/// Diffusion coefficient sigma: R^d -> L(R^{d0}; R^d) with two derivatives.
///
/// Layouts: sigma [i*d0+rho]; grad [(i*d0+rho)*d + l] = d_l sigma^{i rho};
/// hess [((i*d0+rho)*d + l)*d + m] = d_m d_l sigma^{i rho}.
pub trait DiffusionCoeff: Sync {
    fn d(&self) -> usize;
    fn d0(&self) -> usize;
    fn sigma(&self, x: &[f64], out: &mut [f64]);
    fn grad_sigma(&self, x: &[f64], out: &mut [f64]);
    fn hess_sigma(&self, x: &[f64], out: &mut [f64]);
    /// ellipticity constant: sigma sigma* >= lambda I
    fn lambda(&self) -> f64;
    /// bound for the C^1 norm of sigma
    fn c1(&self) -> f64;
}

/// Drift coefficient b: R^d -> R^d.
pub trait Drift: Sync {
    fn d(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// Constant diffusion matrix.
pub struct ConstSigma {
    pub mat: Vec<f64>,
    pub d: usize,
    pub d0: usize,
    pub lambda: f64,
}

impl DiffusionCoeff for ConstSigma {
    fn d(&self) -> usize {
        self.d
    }
    fn d0(&self) -> usize {
        self.d0
    }
    fn sigma(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.mat);
    }
    fn grad_sigma(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn hess_sigma(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn c1(&self) -> f64 {
        self.mat.iter().map(|v| v.abs()).fold(0.0, f64::max) * self.d as f64
    }
}

/// Scalar coefficient defined by plain function pointers (d = d0 = 1).
#[derive(Clone, Copy)]
pub struct ScalarCoeff {
    pub sigma: fn(f64) -> f64,
    pub dsigma: fn(f64) -> f64,
    pub d2sigma: fn(f64) -> f64,
    pub lambda: f64,
    pub c1: f64,
}

impl DiffusionCoeff for ScalarCoeff {
    fn d(&self) -> usize {
        1
    }
    fn d0(&self) -> usize {
        1
    }
    fn sigma(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (self.sigma)(x[0]);
    }
    fn grad_sigma(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (self.dsigma)(x[0]);
    }
    fn hess_sigma(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (self.d2sigma)(x[0]);
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn c1(&self) -> f64 {
        self.c1
    }
}

/// sigma(x) = sin(x) + 2: bounded, elliptic (sigma^2 >= 1), C^1 norm 4.
pub fn sin_plus_two() -> ScalarCoeff {
    ScalarCoeff {
        sigma: |x| x.sin() + 2.0,
        dsigma: |x| x.cos(),
        d2sigma: |x| -x.sin(),
        lambda: 1.0,
        c1: 4.0,
    }
}

/// Half-amplitude variant of `sin_plus_two`; the smaller conditional
/// variance of its flows keeps rough integrands resolvable on desk grids.
pub fn half_sin_plus_two() -> ScalarCoeff {
    ScalarCoeff {
        sigma: |x| 0.5 * (x.sin() + 2.0),
        dsigma: |x| 0.5 * x.cos(),
        d2sigma: |x| -0.5 * x.sin(),
        lambda: 0.25,
        c1: 2.0,
    }
}

/// sigma(x) = 2 + exp(-x^2): bounded with bounded derivatives, sigma^2 >= 4.
pub fn exp_bounded() -> ScalarCoeff {
    ScalarCoeff {
        sigma: |x| 2.0 + (-x * x).exp(),
        dsigma: |x| -2.0 * x * (-x * x).exp(),
        d2sigma: |x| (4.0 * x * x - 2.0) * (-x * x).exp(),
        lambda: 4.0,
        c1: 4.0,
    }
}

/// sigma(x) = x (scalar linear; not elliptic, used for closed-form checks).
pub fn scalar_linear() -> ScalarCoeff {
    ScalarCoeff { sigma: |x| x, dsigma: |_| 1.0, d2sigma: |_| 0.0, lambda: 0.0, c1: 1.0 }
}

/// A 2x2 trigonometric perturbation of 2I with explicit derivatives.
pub struct TrigSigma2;

impl DiffusionCoeff for TrigSigma2 {
    fn d(&self) -> usize {
        2
    }
    fn d0(&self) -> usize {
        2
    }
    fn sigma(&self, x: &[f64], out: &mut [f64]) {
        let a = 0.25;
        out[0] = 2.0 + a * (x[1]).sin();
        out[1] = a * (x[0] + 0.3).sin();
        out[2] = a * (x[1] + 0.7).cos();
        out[3] = 2.0 + a * (x[0]).cos();
    }
    fn grad_sigma(&self, x: &[f64], out: &mut [f64]) {
        let a = 0.25;
        out.iter_mut().for_each(|v| *v = 0.0);
        // entry (i, rho) at [(i*2+rho)*2 + l]
        out[(0) * 2 + 1] = a * x[1].cos(); // d_1 sigma^{00}
        out[(1) * 2 + 0] = a * (x[0] + 0.3).cos(); // d_0 sigma^{01}
        out[(2) * 2 + 1] = -a * (x[1] + 0.7).sin(); // d_1 sigma^{10}
        out[(3) * 2 + 0] = -a * x[0].sin(); // d_0 sigma^{11}
    }
    fn hess_sigma(&self, x: &[f64], out: &mut [f64]) {
        let a = 0.25;
        out.iter_mut().for_each(|v| *v = 0.0);
        // [( (i*2+rho)*2 + l)*2 + m]
        out[(0 * 2 + 1) * 2 + 1] = -a * x[1].sin();
        out[(1 * 2 + 0) * 2 + 0] = -a * (x[0] + 0.3).sin();
        out[(2 * 2 + 1) * 2 + 1] = -a * (x[1] + 0.7).cos();
        out[(3 * 2 + 0) * 2 + 0] = -a * x[0].cos();
    }
    fn lambda(&self) -> f64 {
        2.0
    }
    fn c1(&self) -> f64 {
        2.5
    }
}

/// Scratch buffers for the stepping loops, sized once per solve.
struct Work {
    sig: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    bvec: Vec<f64>,
}

impl Work {
    fn new(d: usize, d0: usize) -> Self {
        Self {
            sig: vec![0.0; d * d0],
            grad: vec![0.0; d * d0 * d],
            hess: vec![0.0; d * d0 * d * d],
            bvec: vec![0.0; d],
        }
    }
}

/// Flow, Jacobian, and inverse Jacobian along one driver realization.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub s_idx: usize,
    pub x0: Vec<f64>,
    /// paths on the sub-grid [t_{s_idx}, T]
    pub phi: SampledPath,
    pub jac: Option<SampledPath>,
    pub jac_inv: Option<SampledPath>,
}

fn davie_step(
    coeff: &dyn DiffusionCoeff,
    x: &mut [f64],
    g: &[f64],
    area: &[f64],
    w: &mut Work,
) {
    let (d, d0) = (coeff.d(), coeff.d0());
    coeff.sigma(x, &mut w.sig);
    coeff.grad_sigma(x, &mut w.grad);
    for i in 0..d {
        let mut acc = 0.0;
        for r in 0..d0 {
            acc += w.sig[i * d0 + r] * g[r];
            // (grad sigma . sigma) area: d_l sigma^{i rho} sigma^{l rho'} area^{rho' rho}
            for l in 0..d {
                let gs = w.grad[(i * d0 + r) * d + l];
                if gs == 0.0 {
                    continue;
                }
                for r2 in 0..d0 {
                    acc += gs * w.sig[l * d0 + r2] * area[r2 * d0 + r];
                }
            }
        }
        w.bvec[i] = acc;
    }
    for i in 0..d {
        x[i] += w.bvec[i];
    }
}

/// Driftless flow started at (t_{s_idx}, x).
pub fn solve_flow(
    coeff: &dyn DiffusionCoeff,
    rp: &RoughPath,
    s_idx: usize,
    x: &[f64],
) -> Result<FlowSolution> {
    let d = coeff.d();
    if rp.dim() != coeff.d0() {
        return Err(Error::ShapeMismatch("driver dimension mismatch".into()));
    }
    let n = rp.grid().len();
    let sub = Arc::new(rp.grid().restrict(s_idx, n - 1)?);
    let mut values = vec![0.0; sub.len() * d];
    values[..d].copy_from_slice(x);
    let mut cur = x.to_vec();
    let mut w = Work::new(d, coeff.d0());
    for (local, j) in (s_idx..n - 1).enumerate() {
        let g = rp.g.increment(j, j + 1);
        let area = rp.area.entry(j, j + 1);
        davie_step(coeff, &mut cur, &g, area, &mut w);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(rp.grid().t(j + 1)));
        }
        values[(local + 1) * d..(local + 2) * d].copy_from_slice(&cur);
    }
    Ok(FlowSolution {
        s_idx,
        x0: x.to_vec(),
        phi: SampledPath::new(sub, d, values)?,
        jac: None,
        jac_inv: None,
    })
}

/// Flow together with its Jacobian J and the inverse K = J^{-1}, both solved
/// as linear equations along the flow:
///
///   dJ = grad sigma(phi) J dB,      dK = -K grad sigma(phi) dB,
///
/// with the second-order terms given by the Leibniz rule.
pub fn solve_jacobian(
    coeff: &dyn DiffusionCoeff,
    rp: &RoughPath,
    s_idx: usize,
    x: &[f64],
) -> Result<FlowSolution> {
    let d = coeff.d();
    let d0 = coeff.d0();
    let n = rp.grid().len();
    let sub = Arc::new(rp.grid().restrict(s_idx, n - 1)?);
    let m = sub.len();
    let mut phi = vec![0.0; m * d];
    let mut jac = vec![0.0; m * d * d];
    let mut jinv = vec![0.0; m * d * d];
    phi[..d].copy_from_slice(x);
    for i in 0..d {
        jac[i * d + i] = 1.0;
        jinv[i * d + i] = 1.0;
    }
    let mut cur = x.to_vec();
    let mut jc = jac[..d * d].to_vec();
    let mut kc = jinv[..d * d].to_vec();
    let mut w = Work::new(d, d0);
    let mut jn = vec![0.0; d * d];
    let mut kn = vec![0.0; d * d];
    for (local, cell) in (s_idx..n - 1).enumerate() {
        let g = rp.g.increment(cell, cell + 1);
        let area = rp.area.entry(cell, cell + 1);
        coeff.sigma(&cur, &mut w.sig);
        coeff.grad_sigma(&cur, &mut w.grad);
        coeff.hess_sigma(&cur, &mut w.hess);
        let sig = &w.sig;
        let gr = &w.grad;
        let he = &w.hess;
        for i in 0..d {
            for j in 0..d {
                let mut dj = 0.0;
                let mut dk = 0.0;
                for r in 0..d0 {
                    // first order
                    for l in 0..d {
                        dj += gr[(i * d0 + r) * d + l] * jc[l * d + j] * g[r];
                        dk -= kc[i * d + l] * gr[(l * d0 + r) * d + j] * g[r];
                    }
                    // second order against the area
                    for r2 in 0..d0 {
                        let a = area[r2 * d0 + r];
                        if a == 0.0 {
                            continue;
                        }
                        for l in 0..d {
                            for mm in 0..d {
                                dj += (he[((i * d0 + r) * d + l) * d + mm]
                                    * sig[mm * d0 + r2]
                                    * jc[l * d + j]
                                    + gr[(i * d0 + r) * d + l]
                                        * gr[(l * d0 + r2) * d + mm]
                                        * jc[mm * d + j])
                                    * a;
                                dk += (kc[i * d + mm]
                                    * gr[(mm * d0 + r2) * d + l]
                                    * gr[(l * d0 + r) * d + j]
                                    - kc[i * d + l]
                                        * he[((l * d0 + r) * d + mm) * d + j]
                                        * sig[mm * d0 + r2])
                                    * a;
                            }
                        }
                    }
                }
                jn[i * d + j] = jc[i * d + j] + dj;
                kn[i * d + j] = kc[i * d + j] + dk;
            }
        }
        jc.copy_from_slice(&jn);
        kc.copy_from_slice(&kn);
        davie_step(coeff, &mut cur, &g, area, &mut w);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(rp.grid().t(cell + 1)));
        }
        phi[(local + 1) * d..(local + 2) * d].copy_from_slice(&cur);
        jac[(local + 1) * d * d..(local + 2) * d * d].copy_from_slice(&jc);
        jinv[(local + 1) * d * d..(local + 2) * d * d].copy_from_slice(&kc);
    }
    Ok(FlowSolution {
        s_idx,
        x0: x.to_vec(),
        phi: SampledPath::new(sub.clone(), d, phi)?,
        jac: Some(SampledPath::new(sub.clone(), d * d, jac)?),
        jac_inv: Some(SampledPath::new(sub, d * d, jinv)?),
    })
}

/// Max over the sub-grid of ||J J^{-1} - I|| (max-norm of entries).
pub fn jacobian_consistency(sol: &FlowSolution) -> Result<f64> {
    let jac = sol.jac.as_ref().ok_or_else(|| Error::InvalidInput("no Jacobian".into()))?;
    let inv = sol.jac_inv.as_ref().unwrap();
    let d = (jac.dim() as f64).sqrt() as usize;
    let mut worst: f64 = 0.0;
    for idx in 0..jac.grid().len() {
        let a = jac.value(idx);
        let b = inv.value(idx);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += a[i * d + l] * b[l * d + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - expect).abs());
            }
        }
    }
    Ok(worst)
}

/// Per-cell step for a drifted solution. `BasePoint` adds b(x) dt evaluated
/// at the pre-step point; `UpdatedPoint` evaluates the drift after the rough
/// part of the step. Both are first-order splittings of the same equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftScheme {
    BasePoint,
    UpdatedPoint,
}

/// Drifted solution; returns the state path and the accumulated drift
/// component sum b(.) dt as a separate path.
pub fn solve_with_drift(
    b: &dyn Drift,
    coeff: &dyn DiffusionCoeff,
    rp: &RoughPath,
    x0: &[f64],
    scheme: DriftScheme,
) -> Result<(SampledPath, SampledPath)> {
    let d = coeff.d();
    let n = rp.grid().len();
    let mut values = vec![0.0; n * d];
    let mut dvals = vec![0.0; n * d];
    values[..d].copy_from_slice(x0);
    let mut cur = x0.to_vec();
    let mut drift_acc = vec![0.0; d];
    let mut w = Work::new(d, coeff.d0());
    let mut bout = vec![0.0; d];
    for j in 0..n - 1 {
        let dt = rp.grid().dt(j);
        let g = rp.g.increment(j, j + 1);
        let area = rp.area.entry(j, j + 1);
        match scheme {
            DriftScheme::BasePoint => {
                b.eval(&cur, &mut bout);
                davie_step(coeff, &mut cur, &g, area, &mut w);
            }
            DriftScheme::UpdatedPoint => {
                davie_step(coeff, &mut cur, &g, area, &mut w);
                b.eval(&cur, &mut bout);
            }
        }
        for i in 0..d {
            cur[i] += bout[i] * dt;
            drift_acc[i] += bout[i] * dt;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(rp.grid().t(j + 1)));
        }
        values[(j + 1) * d..(j + 2) * d].copy_from_slice(&cur);
        dvals[(j + 1) * d..(j + 2) * d].copy_from_slice(&drift_acc);
    }
    Ok((
        SampledPath::new(rp.grid().clone(), d, values)?,
        SampledPath::new(rp.grid().clone(), d, dvals)?,
    ))
}

/// Numerical preimage of the time-s flow map: damped Newton for
/// phi^{0,y}_s = x with the Jacobian as the exact derivative.
pub fn flow_preimage(
    coeff: &dyn DiffusionCoeff,
    rp: &RoughPath,
    s_idx: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let d = coeff.d();
    let mut y = x.to_vec();
    for _ in 0..50 {
        let sol = solve_jacobian(coeff, rp, 0, &y)?;
        let phi_s = sol.phi.value(s_idx).to_vec();
        let resid: Vec<f64> = (0..d).map(|i| phi_s[i] - x[i]).collect();
        let err = resid.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if err < 1e-12 {
            return Ok(y);
        }
        let jmat = nalgebra::DMatrix::from_row_slice(d, d, sol.jac.as_ref().unwrap().value(s_idx));
        let rv = nalgebra::DVector::from_column_slice(&resid);
        let step = jmat
            .lu()
            .solve(&rv)
            .ok_or_else(|| Error::Numerical("singular Jacobian in Newton step".into()))?;
        // damping keeps large first steps under control
        let damp = if err > 1.0 { 0.5 } else { 1.0 };
        for i in 0..d {
            y[i] -= damp * step[i];
        }
    }
    Err(Error::NewtonDiverged(50))
}

/// Max over t >= s of |J^{s,x}_t - J^{0,y}_t (J^{0,y}_s)^{-1}|, where y is
/// the numerical preimage of x under the time-s flow map.
pub fn flow_identity_residual(
    coeff: &dyn DiffusionCoeff,
    rp: &RoughPath,
    s_idx: usize,
    x: &[f64],
) -> Result<f64> {
    let d = coeff.d();
    let y = if s_idx == 0 { x.to_vec() } else { flow_preimage(coeff, rp, s_idx, x)? };
    let from_zero = solve_jacobian(coeff, rp, 0, &y)?;
    let from_s = solve_jacobian(coeff, rp, s_idx, x)?;
    let j0 = from_zero.jac.as_ref().unwrap();
    let k0 = from_zero.jac_inv.as_ref().unwrap();
    let js = from_s.jac.as_ref().unwrap();
    let ks_inv = k0.value(s_idx);
    let mut worst: f64 = 0.0;
    for (local, t_idx) in (s_idx..rp.grid().len()).enumerate() {
        let jt = j0.value(t_idx);
        let direct = js.value(local);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += jt[i * d + l] * ks_inv[l * d + j];
                }
                worst = worst.max((acc - direct[i * d + j]).abs());
            }
        }
    }
    Ok(worst)
}

/// First-variation kernel J_t J_r^{-1} sigma(phi_r) (d x d0), zero for r > t.
pub fn malliavin_kernel(
    sol: &FlowSolution,
    coeff: &dyn DiffusionCoeff,
    r_local: usize,
    t_local: usize,
) -> Result<Vec<f64>> {
    let d = coeff.d();
    let d0 = coeff.d0();
    if r_local > t_local {
        return Ok(vec![0.0; d * d0]);
    }
    let jac = sol.jac.as_ref().ok_or_else(|| Error::InvalidInput("no Jacobian".into()))?;
    let jinv = sol.jac_inv.as_ref().unwrap();
    let jt = jac.value(t_local);
    let kr = jinv.value(r_local);
    let mut sig = vec![0.0; d * d0];
    coeff.sigma(sol.phi.value(r_local), &mut sig);
    let mut out = vec![0.0; d * d0];
    for i in 0..d {
        for r in 0..d0 {
            let mut acc = 0.0;
            for l in 0..d {
                for q in 0..d {
                    acc += jt[i * d + l] * kr[l * d + q] * sig[q * d0 + r];
                }
            }
            out[i * d0 + r] = acc;
        }
    }
    Ok(out)
}

/// Monte-Carlo rate of |X_{s+dt} - phi^{s, X_s}_{s+dt}| for a drifted
/// solution against the driftless flow restarted at (s, X_s), both driven by
/// the same lift. Expects a grid starting at 0; lifts are Cholesky-sampled.
#[allow(clippy::too_many_arguments)]
pub fn stability_rate(
    b: &dyn Drift,
    coeff: &dyn DiffusionCoeff,
    grid: &Arc<TimeGrid>,
    params: &crate::fbm::FbmParams,
    x0: &[f64],
    anchors: &[usize],
    scale_cells: &[usize],
    replicas: usize,
    p: f64,
    master_seed: u64,
) -> Result<RateFit> {
    run_stability(
        coeff,
        grid,
        params,
        anchors,
        scale_cells,
        replicas,
        p,
        master_seed,
        |rp, a, c| {
            let (x_path, _) = solve_with_drift(b, coeff, rp, x0, DriftScheme::BasePoint)?;
            let xs = x_path.value(a).to_vec();
            let flow = solve_flow(coeff, rp, a, &xs)?;
            let xe = x_path.value(a + c);
            let fe = flow.phi.value(c);
            Ok(xe.iter().zip(fe).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
        },
    )
}

/// Same estimator fed with a synthetic difference dt^q |xi|; calibrates the
/// fitting machinery.
#[allow(clippy::too_many_arguments)]
pub fn stability_rate_planted(
    coeff: &dyn DiffusionCoeff,
    grid: &Arc<TimeGrid>,
    params: &crate::fbm::FbmParams,
    q: f64,
    anchors: &[usize],
    scale_cells: &[usize],
    replicas: usize,
    p: f64,
    master_seed: u64,
) -> Result<RateFit> {
    run_stability(
        coeff,
        grid,
        params,
        anchors,
        scale_cells,
        replicas,
        p,
        master_seed,
        move |rp, a, c| {
            let dt = rp.grid().t(a + c) - rp.grid().t(a);
            // reuse driver randomness for the noise factor
            let xi = rp.g.increment(a, a + c)[0] / dt.powf(params.h);
            Ok(dt.powf(q) * xi.abs().max(1e-6))
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn run_stability<F>(
    _coeff: &dyn DiffusionCoeff,
    grid: &Arc<TimeGrid>,
    params: &crate::fbm::FbmParams,
    anchors: &[usize],
    scale_cells: &[usize],
    replicas: usize,
    p: f64,
    master_seed: u64,
    diff: F,
) -> Result<RateFit>
where
    F: Fn(&RoughPath, usize, usize) -> Result<f64> + Sync,
{
    let n = grid.len();
    let mut cases = Vec::new();
    for (si, &c) in scale_cells.iter().enumerate() {
        for &a in anchors {
            if a + c < n {
                cases.push((si, a, c));
            }
        }
    }
    let rows: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let b = crate::fbm::sample_fbm_cholesky(grid, params, mix2(master_seed, r as u64))
                .expect("sampling");
            let rp = lift_piecewise_linear(&b, params.h - 0.01);
            cases
                .iter()
                .map(|&(_, a, c)| diff(&rp, a, c).expect("replica"))
                .collect()
        })
        .collect();
    let span_cell = grid.span() / grid.ncells() as f64;
    let mut scales = Vec::new();
    let mut norms = Vec::new();
    let mut stderrs = Vec::new();
    for (si, &c) in scale_cells.iter().enumerate() {
        let mut best = (0.0f64, 0.0f64);
        for (k, &(owner, _, _)) in cases.iter().enumerate() {
            if owner != si {
                continue;
            }
            let samples: Vec<f64> = rows.iter().map(|row| row[k]).collect();
            let nf = samples.len() as f64;
            let mut m = 0.0;
            let mut m2 = 0.0;
            for &x in &samples {
                let v = x.powf(p);
                m += v;
                m2 += v * v;
            }
            m /= nf;
            m2 /= nf;
            let norm = m.powf(1.0 / p);
            let se = if m > 0.0 {
                norm / (p * m) * ((m2 - m * m).max(0.0) / nf).sqrt()
            } else {
                0.0
            };
            if norm > best.0 {
                best = (norm, se);
            }
        }
        scales.push(c as f64 * span_cell);
        norms.push(best.0);
        stderrs.push(best.1);
    }
    let all_zero = norms.iter().all(|&x| x == 0.0);
    if all_zero {
        return Ok(RateFit {
            scales,
            lp_norms: norms,
            stderrs,
            slope: f64::INFINITY,
            slope_stderr: 0.0,
            r_squared: 1.0,
            p,
            reliable: true,
            note: "identically zero differences".into(),
        });
    }
    let fit = fit_loglog(&scales, &norms)
        .ok_or_else(|| Error::Numerical("stability fit degenerate".into()))?;
    Ok(RateFit {
        scales,
        lp_norms: norms,
        stderrs,
        slope: fit.slope,
        slope_stderr: fit.stderr,
        r_squared: fit.r_squared,
        p,
        reliable: true,
        note: String::new(),
    })
}

/// Spot-check of the ellipticity bound sigma sigma* >= lambda I over a
/// battery of points; returns the minimal eigenvalue encountered.
pub fn ellipticity_min_eig(coeff: &dyn DiffusionCoeff, battery: &[Vec<f64>]) -> f64 {
    let (d, d0) = (coeff.d(), coeff.d0());
    let mut sig = vec![0.0; d * d0];
    let mut worst = f64::INFINITY;
    for x in battery {
        coeff.sigma(x, &mut sig);
        let mut a = nalgebra::DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for r in 0..d0 {
                    acc += sig[i * d0 + r] * sig[j * d0 + r];
                }
                a[(i, j)] = acc;
            }
        }
        worst = worst.min(a.symmetric_eigenvalues().min());
    }
    worst
}

pub mod scalar {
    //! Allocation-free stepping for d = d0 = 1, the hot path of the nested
    //! Monte-Carlo germ estimators. The lift of a scalar path is its
    //! piecewise-linear one: area over a cell is half the squared increment.

    use super::ScalarCoeff;

    /// One Davie step for scalar state.
    #[inline]
    pub fn step(c: &ScalarCoeff, x: f64, db: f64) -> f64 {
        let s = (c.sigma)(x);
        x + s * db + (c.dsigma)(x) * s * 0.5 * db * db
    }

    /// Driftless flow along B values; fills `out[k] = phi(t_k)` with
    /// out.len() == b.len().
    pub fn flow_into(c: &ScalarCoeff, x0: f64, b: &[f64], out: &mut [f64]) {
        let mut x = x0;
        out[0] = x;
        for k in 1..b.len() {
            x = step(c, x, b[k] - b[k - 1]);
            out[k] = x;
        }
    }

    /// Drifted solution with the drift evaluated at the base point.
    pub fn drifted_flow_into(
        c: &ScalarCoeff,
        drift: &dyn Fn(f64) -> f64,
        x0: f64,
        b: &[f64],
        dt: f64,
        out: &mut [f64],
    ) {
        let mut x = x0;
        out[0] = x;
        for k in 1..b.len() {
            let bx = drift(x);
            x = step(c, x, b[k] - b[k - 1]) + bx * dt;
            out[k] = x;
        }
    }
}

/// Average the consecutive-level telescope differences of the scheme
/// over several paths and fit the decay slope.
pub fn self_convergence_slope(
    coeff: &dyn DiffusionCoeff,
    h: f64,
    gamma: f64,
    fine_level: u32,
    levels: &[u32],
    paths: u64,
    x0: &[f64],
    seed: u64,
) -> (f64, Vec<f64>) {
    let d0 = coeff.d0();
    let grid = Arc::new(TimeGrid::dyadic(fine_level, 0.0, 1.0).unwrap());
    let p = crate::fbm::FbmParams::new(h, d0).unwrap();
    let mut err_sum = vec![0.0; levels.len()];
    for r in 0..paths {
        let b = crate::fbm::sample_fbm_cholesky(&grid, &p, mix2(seed, r)).unwrap();
        let solve_at = |level: u32| {
            let stride = 1usize << (fine_level - level);
            let times: Vec<f64> =
                (0..=(1usize << level)).map(|k| grid.t(k * stride)).collect();
            let sub = Arc::new(TimeGrid::new(times).unwrap());
            let vals: Vec<f64> =
                (0..sub.len()).flat_map(|k| b.value(k * stride).to_vec()).collect();
            let path = SampledPath::new(sub, d0, vals).unwrap();
            let rp = lift_piecewise_linear(&path, gamma);
            solve_flow(coeff, &rp, 0, x0).unwrap()
        };
        for (i, &lv) in levels.iter().enumerate() {
            let a = solve_at(lv);
            let fine = solve_at(lv + 1);
            let mut worst: f64 = 0.0;
            for k in 0..a.phi.grid().len() {
                for c in 0..x0.len() {
                    worst = worst.max((a.phi.value(k)[c] - fine.phi.value(2 * k)[c]).abs());
                }
            }
            err_sum[i] += worst;
        }
    }
    let errs: Vec<f64> = err_sum.iter().map(|e| e / paths as f64).collect();
    let hs: Vec<f64> = levels.iter().map(|&l| 0.5f64.powi(l as i32)).collect();
    (fit_loglog(&hs, &errs).unwrap().slope, errs)
}
