//! Level-2 rough paths on a grid: lifts of piecewise-linear paths, Chen
//! consistency diagnostics, the rough-path metric, and joint lifts of two
//! paths of different regularities.
//!
//! Areas are stored densely for all ordered grid pairs. The generating
//! recurrence is Chen's identity itself, so the lift of a piecewise-linear
//! path satisfies it to rounding error by construction; `chen_defect`
//! measures it for anything else.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{holder_seminorm, holder_seminorm_2, SampledPath, TimeGrid, TwoParamField};

/// A path of dimension m with its level-2 area, indexed (integrand, integrator).
#[derive(Debug, Clone)]
pub struct RoughPath {
    pub gamma: f64,
    pub g: SampledPath,
    pub area: TwoParamField,
    /// absolute Chen tolerance, scaled by max|g|^2 at validation sites
    pub tol: f64,
}

impl RoughPath {
    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.g.grid()
    }
}

/// Lift a sampled path as if it were piecewise linear between grid points:
/// single-cell areas (1/2) dg (x) dg, extended to all pairs by Chen's identity.
pub fn lift_piecewise_linear(g: &SampledPath, gamma: f64) -> RoughPath {
    let n = g.grid().len();
    let m = g.dim();
    let mut area = TwoParamField::zeros(g.grid().clone(), (m, m));
    // area[i, j+1] = area[i, j] + cell_j + g_{i,j} (x) g_{j, j+1}
    for i in 0..n {
        for j in i..n.saturating_sub(1) {
            let dg = g.increment(j, j + 1);
            let gij = g.increment(i, j);
            let prev = area.entry(i, j).to_vec();
            let next = area.entry_mut(i, j + 1);
            for a in 0..m {
                for b in 0..m {
                    next[a * m + b] =
                        prev[a * m + b] + 0.5 * dg[a] * dg[b] + gij[a] * dg[b];
                }
            }
        }
    }
    RoughPath { gamma, g: g.clone(), area, tol: 1e-10 }
}

/// Max over grid triples s < u < t of
/// |area_{s,t} - area_{s,u} - area_{u,t} - g_{s,u} (x) g_{u,t}|.
pub fn chen_defect(rp: &RoughPath) -> f64 {
    let n = rp.grid().len();
    let m = rp.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            let gik = rp.g.increment(i, k);
            for j in k + 1..n {
                let gkj = rp.g.increment(k, j);
                let full = rp.area.entry(i, j);
                let left = rp.area.entry(i, k);
                let right = rp.area.entry(k, j);
                for a in 0..m {
                    for b in 0..m {
                        let idx = a * m + b;
                        let defect = full[idx] - left[idx] - right[idx] - gik[a] * gkj[b];
                        worst = worst.max(defect.abs());
                    }
                }
            }
        }
    }
    worst
}

/// Max deviation of the symmetric part of the area from (1/2) dg (x) dg.
pub fn geometric_defect(rp: &RoughPath) -> f64 {
    let n = rp.grid().len();
    let m = rp.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let gij = rp.g.increment(i, j);
            let area = rp.area.entry(i, j);
            for a in 0..m {
                for b in 0..m {
                    let sym = 0.5 * (area[a * m + b] + area[b * m + a]);
                    worst = worst.max((sym - 0.5 * gij[a] * gij[b]).abs());
                }
            }
        }
    }
    worst
}

/// Rough-path distance: ||g1 - g2||_{C^gamma} + [area1 - area2]_{C^{2 gamma}}.
pub fn d_gamma(rp1: &RoughPath, rp2: &RoughPath) -> Result<f64> {
    if rp1.grid().times() != rp2.grid().times() {
        return Err(Error::GridMismatch("rough paths live on different grids".into()));
    }
    if rp1.dim() != rp2.dim() {
        return Err(Error::ShapeMismatch("dimension mismatch".into()));
    }
    let gamma = rp1.gamma;
    let n = rp1.grid().len();
    let m = rp1.dim();
    let mut sup = 0.0f64;
    let mut dvals = Vec::with_capacity(n * m);
    for i in 0..n {
        for (a, b) in rp1.g.value(i).iter().zip(rp2.g.value(i)) {
            sup = sup.max((a - b).abs());
            dvals.push(a - b);
        }
    }
    let dpath = SampledPath::new(rp1.grid().clone(), m, dvals)?;
    let darea = TwoParamField::from_fn(rp1.grid().clone(), (m, m), |i, j| {
        rp1.area
            .entry(i, j)
            .iter()
            .zip(rp2.area.entry(i, j))
            .map(|(x, y)| x - y)
            .collect()
    });
    Ok(sup + holder_seminorm(&dpath, gamma) + holder_seminorm_2(&darea, 2.0 * gamma))
}

/// Joint lift of a rough component B and a more regular component L, with
/// the two cross areas. Index conventions: `area_bl` holds the iterated
/// integral of B against dL (B (x) L), `area_lb` of L against dB (L (x) B).
#[derive(Debug, Clone)]
pub struct MixedRoughPath {
    pub gamma: f64,
    pub beta: f64,
    pub g_b: SampledPath,
    pub g_l: SampledPath,
    pub area_bb: TwoParamField,
    pub area_lb: TwoParamField,
    pub area_bl: TwoParamField,
    pub tol: f64,
}

impl MixedRoughPath {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.g_b.grid()
    }

    pub fn dim_b(&self) -> usize {
        self.g_b.dim()
    }

    pub fn dim_l(&self) -> usize {
        self.g_l.dim()
    }
}

fn mixed_defect_one(
    area: &TwoParamField,
    first: &SampledPath,
    second: &SampledPath,
) -> f64 {
    let n = first.grid().len();
    let (da, db) = (first.dim(), second.dim());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            let fik = first.increment(i, k);
            for j in k + 1..n {
                let skj = second.increment(k, j);
                let full = area.entry(i, j);
                let left = area.entry(i, k);
                let right = area.entry(k, j);
                for a in 0..da {
                    for b in 0..db {
                        let idx = a * db + b;
                        let defect = full[idx] - left[idx] - right[idx] - fik[a] * skj[b];
                        worst = worst.max(defect.abs());
                    }
                }
            }
        }
    }
    worst
}

/// Max of the two mixed Chen defects.
pub fn mixed_chen_defect(mrp: &MixedRoughPath) -> f64 {
    let bl = mixed_defect_one(&mrp.area_bl, &mrp.g_b, &mrp.g_l);
    let lb = mixed_defect_one(&mrp.area_lb, &mrp.g_l, &mrp.g_b);
    bl.max(lb)
}

/// Max deviation from the product rule
/// area_bl_{s,t} + transpose(area_lb_{s,t}) = gB_{s,t} (x) gL_{s,t}.
pub fn mixed_product_rule_defect(mrp: &MixedRoughPath) -> f64 {
    let n = mrp.grid().len();
    let (m, e) = (mrp.dim_b(), mrp.dim_l());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let gb = mrp.g_b.increment(i, j);
            let gl = mrp.g_l.increment(i, j);
            let bl = mrp.area_bl.entry(i, j);
            let lb = mrp.area_lb.entry(i, j);
            for a in 0..m {
                for b in 0..e {
                    let v = bl[a * e + b] + lb[b * m + a] - gb[a] * gl[b];
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    worst
}

/// Complete a mixed rough path from a lift of B, the regular path L, and the
/// cross area of B against dL; the opposite area is forced by the product
/// rule: area_lb := gL (x) gB - transpose(area_bl).
pub fn assemble_mixed(
    b_lift: &RoughPath,
    l: &SampledPath,
    area_bl: TwoParamField,
    beta: f64,
) -> Result<MixedRoughPath> {
    if b_lift.grid().times() != l.grid().times() {
        return Err(Error::GridMismatch("B and L must share a grid".into()));
    }
    let defect = mixed_defect_one(&area_bl, &b_lift.g, l);
    let scale = 1.0 + b_lift.g.sup_norm() * l.sup_norm();
    if defect > b_lift.tol * scale * 100.0 {
        return Err(Error::Constraint(format!(
            "input cross area violates the mixed Chen relation: defect {defect:e}"
        )));
    }
    let (m, e) = (b_lift.dim(), l.dim());
    let mut area_lb = TwoParamField::zeros(l.grid().clone(), (e, m));
    let n = l.grid().len();
    for i in 0..n {
        for j in i + 1..n {
            let gb = b_lift.g.increment(i, j);
            let gl = l.increment(i, j);
            let bl = area_bl.entry(i, j).to_vec();
            let lb = area_lb.entry_mut(i, j);
            for a in 0..e {
                for b in 0..m {
                    lb[a * m + b] = gl[a] * gb[b] - bl[b * e + a];
                }
            }
        }
    }
    Ok(MixedRoughPath {
        gamma: b_lift.gamma,
        beta,
        g_b: b_lift.g.clone(),
        g_l: l.clone(),
        area_bb: b_lift.area.clone(),
        area_lb,
        area_bl,
        tol: b_lift.tol,
    })
}

/// Cross area of B against dL by grid quadrature (trapezoid in B):
/// area_{s,t} = sum_cells (1/2)(B_{s,r} + B_{s,r+1}) (x) dL_r.
/// Satisfies the mixed Chen relation exactly on the grid.
pub fn cross_area_quadrature(b: &SampledPath, l: &SampledPath) -> Result<TwoParamField> {
    if b.grid().times() != l.grid().times() {
        return Err(Error::GridMismatch("B and L must share a grid".into()));
    }
    let n = b.grid().len();
    let (m, e) = (b.dim(), l.dim());
    let mut area = TwoParamField::zeros(b.grid().clone(), (m, e));
    for i in 0..n {
        // cumulative over j
        let mut acc = vec![0.0; m * e];
        for j in i + 1..n {
            let dl = l.increment(j - 1, j);
            let bl = b.increment(i, j - 1);
            let bu = b.increment(i, j);
            for a in 0..m {
                for c in 0..e {
                    acc[a * e + c] += 0.5 * (bl[a] + bu[a]) * dl[c];
                }
            }
            area.entry_mut(i, j).copy_from_slice(&acc);
        }
    }
    Ok(area)
}
